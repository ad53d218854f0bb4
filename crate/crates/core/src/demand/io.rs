//! CSV ingestion and export of pings and trips.
//!
//! Data rows that fail to parse or violate a record invariant are skipped and
//! counted; only structural problems (unreadable file, missing column) are
//! fatal.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord};
use log::warn;
use serde::Serialize;

use super::{TripRequest, VehiclePing};
use crate::error::{CoreError, Result};
use crate::geo::GeoPoint;

pub const PING_COLUMNS: [&str; 6] = [
    "vehicle_id",
    "timestamp",
    "lon",
    "lat",
    "speed",
    "in_service",
];

pub const TRIP_COLUMNS: [&str; 9] = [
    "trip_id",
    "request_time_s",
    "origin_lon",
    "origin_lat",
    "dest_lon",
    "dest_lat",
    "distance_km",
    "duration_min",
    "fare",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowIssue {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct TripLoad {
    pub trips: Vec<TripRequest>,
    pub rejected: Vec<RowIssue>,
}

#[derive(Debug, Clone, Default)]
pub struct PingLoad {
    pub pings: Vec<VehiclePing>,
    pub rejected: Vec<RowIssue>,
}

fn column_map<const N: usize>(headers: &StringRecord, wanted: [&str; N]) -> Result<[usize; N]> {
    let mut out = [0; N];
    for (slot, name) in out.iter_mut().zip(wanted) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CoreError::MissingColumn(name.to_string()))?;
    }
    Ok(out)
}

fn field(rec: &StringRecord, idx: usize) -> std::result::Result<&str, String> {
    rec.get(idx)
        .map(str::trim)
        .ok_or_else(|| format!("missing field {idx}"))
}

fn number<T: std::str::FromStr>(
    rec: &StringRecord,
    idx: usize,
    name: &str,
) -> std::result::Result<T, String> {
    let raw = field(rec, idx)?;
    raw.parse::<T>().map_err(|_| format!("bad {name} `{raw}`"))
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" => Some(true),
        "0" | "false" | "f" | "no" | "n" => Some(false),
        _ => None,
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CoreError::io(path, e))
}

pub fn read_pings_from<R: Read>(reader: R) -> Result<PingLoad> {
    let mut rdr = ReaderBuilder::new().flexible(true).from_reader(reader);
    let cols = column_map(rdr.headers()?, PING_COLUMNS)?;
    let mut out = PingLoad::default();

    for (n, rec) in rdr.records().enumerate() {
        let line = n as u64 + 2;
        let parsed = rec.map_err(|e| e.to_string()).and_then(|rec| {
            let vehicle_id = field(&rec, cols[0])?.to_string();
            if vehicle_id.is_empty() {
                return Err("empty vehicle_id".to_string());
            }
            let timestamp = number::<i64>(&rec, cols[1], "timestamp")?;
            let (lon, lat) = (field(&rec, cols[2])?, field(&rec, cols[3])?);
            let location = if lon.is_empty() || lat.is_empty() {
                None
            } else {
                let lon: f64 = lon.parse().map_err(|_| format!("bad lon `{lon}`"))?;
                let lat: f64 = lat.parse().map_err(|_| format!("bad lat `{lat}`"))?;
                Some(GeoPoint::new(lon, lat))
            };
            let speed_raw = field(&rec, cols[4])?;
            let speed_kmh = if speed_raw.is_empty() {
                0.0
            } else {
                speed_raw
                    .parse()
                    .map_err(|_| format!("bad speed `{speed_raw}`"))?
            };
            let flag = field(&rec, cols[5])?;
            let in_service = parse_bool(flag).ok_or_else(|| format!("bad in_service `{flag}`"))?;
            Ok(VehiclePing {
                vehicle_id,
                timestamp,
                location,
                speed_kmh,
                in_service,
            })
        });
        match parsed {
            Ok(p) => out.pings.push(p),
            Err(reason) => {
                warn!("ping row {line}: {reason}");
                out.rejected.push(RowIssue { line, reason });
            }
        }
    }
    Ok(out)
}

pub fn read_pings(path: impl AsRef<Path>) -> Result<PingLoad> {
    read_pings_from(open(path.as_ref())?)
}

pub fn load_trips_from<R: Read>(reader: R) -> Result<TripLoad> {
    let mut rdr = ReaderBuilder::new().flexible(true).from_reader(reader);
    let c = column_map(rdr.headers()?, TRIP_COLUMNS)?;
    let mut out = TripLoad::default();

    for (n, rec) in rdr.records().enumerate() {
        let line = n as u64 + 2;
        let parsed = rec.map_err(|e| e.to_string()).and_then(|rec| {
            let trip = TripRequest {
                trip_id: number(&rec, c[0], "trip_id")?,
                request_time_s: number(&rec, c[1], "request_time_s")?,
                origin: GeoPoint::new(
                    number(&rec, c[2], "origin_lon")?,
                    number(&rec, c[3], "origin_lat")?,
                ),
                destination: GeoPoint::new(
                    number(&rec, c[4], "dest_lon")?,
                    number(&rec, c[5], "dest_lat")?,
                ),
                distance_km: number(&rec, c[6], "distance_km")?,
                duration_min: number(&rec, c[7], "duration_min")?,
                fare: number(&rec, c[8], "fare")?,
            };
            trip.validate().map_err(str::to_string)?;
            Ok(trip)
        });
        match parsed {
            Ok(t) => out.trips.push(t),
            Err(reason) => {
                warn!("trip row {line}: {reason}");
                out.rejected.push(RowIssue { line, reason });
            }
        }
    }
    out.trips.sort_by(|a, b| {
        a.request_time_s
            .cmp(&b.request_time_s)
            .then(a.trip_id.cmp(&b.trip_id))
    });
    Ok(out)
}

pub fn load_trips(path: impl AsRef<Path>) -> Result<TripLoad> {
    load_trips_from(open(path.as_ref())?)
}

pub fn write_trips_to<W: Write>(writer: W, trips: &[TripRequest]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRIP_COLUMNS)?;
    for t in trips {
        w.write_record(&[
            t.trip_id.to_string(),
            t.request_time_s.to_string(),
            t.origin.lon.to_string(),
            t.origin.lat.to_string(),
            t.destination.lon.to_string(),
            t.destination.lat.to_string(),
            t.distance_km.to_string(),
            t.duration_min.to_string(),
            t.fare.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CoreError::io("<trips>", e))?;
    Ok(())
}

pub fn write_trips(path: impl AsRef<Path>, trips: &[TripRequest]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    write_trips_to(std::io::BufWriter::new(file), trips)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str =
        "trip_id,request_time_s,origin_lon,origin_lat,dest_lon,dest_lat,distance_km,duration_min,fare\n";

    #[test]
    fn header_only_gives_no_trips() {
        let load = load_trips_from(HEADER.as_bytes()).unwrap();
        assert!(load.trips.is_empty());
        assert!(load.rejected.is_empty());
    }

    #[test]
    fn invalid_rows_are_counted_and_output_sorted() {
        let body = format!(
            "{HEADER}\
             0,600,116.3,39.9,116.4,39.9,8.8,20,26\n\
             1,60,116.3,39.9,116.35,39.95,10.1,25,29\n\
             2,300,116.3,39.9,116.3,39.95,5.7,1.0,19\n\
             3,120,116.2,39.8,116.3,39.9,20.2,40,52\n"
        );
        let load = load_trips_from(body.as_bytes()).unwrap();
        assert_eq!(load.trips.len(), 3);
        assert_eq!(load.rejected.len(), 1);
        assert_eq!(load.rejected[0].line, 4);
        let times: Vec<i64> = load.trips.iter().map(|t| t.request_time_s).collect();
        assert_eq!(times, vec![60, 120, 600]);
    }

    #[test]
    fn missing_column_is_fatal() {
        let body = "trip_id,request_time_s,origin_lon\n0,1,116.3\n";
        assert!(matches!(
            load_trips_from(body.as_bytes()),
            Err(CoreError::MissingColumn(c)) if c == "origin_lat"
        ));
    }

    #[test]
    fn malformed_row_is_skipped() {
        let body = format!("{HEADER}0,abc,116.3,39.9,116.4,39.9,8.8,20,26\n1,5\n");
        let load = load_trips_from(body.as_bytes()).unwrap();
        assert!(load.trips.is_empty());
        assert_eq!(load.rejected.len(), 2);
    }

    #[test]
    fn trips_survive_a_write_read_cycle() {
        let trips = vec![TripRequest {
            trip_id: 4,
            request_time_s: 90,
            origin: GeoPoint::new(116.312345678, 39.9),
            destination: GeoPoint::new(116.4, 39.987654321),
            distance_km: 17.1234567891,
            duration_min: 31.5,
            fare: 46.4,
        }];
        let mut buf = Vec::new();
        write_trips_to(&mut buf, &trips).unwrap();
        let load = load_trips_from(buf.as_slice()).unwrap();
        assert_eq!(load.trips, trips);
    }

    #[test]
    fn pings_with_blank_coordinates() {
        let body = "vehicle_id,timestamp,lon,lat,speed,in_service\n\
                    a,0,116.3,39.9,10,0\n\
                    a,30,,,12,1\n\
                    a,x,116.3,39.9,10,1\n\
                    b,60,116.3,39.9,10,maybe\n";
        let load = read_pings_from(body.as_bytes()).unwrap();
        assert_eq!(load.pings.len(), 2);
        assert_eq!(load.pings[1].location, None);
        assert!(load.pings[1].in_service);
        assert_eq!(load.rejected.len(), 2);
    }
}
