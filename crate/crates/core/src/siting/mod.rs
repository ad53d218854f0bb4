//! Charging-station siting and the nearest-station partition of the region.

mod kmeans;
mod partition;

pub use kmeans::{kmeans, kmeans_plus_plus, kmeans_sites, lloyd, wcss, KMeansFit, KMeansOptions};
pub use partition::{read_sites, write_sites, Partition, StationSite};
