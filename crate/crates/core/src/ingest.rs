//! Loaders and writers for the trajectory, POI and house-price CSV files,
//! plus segmentation of per-user streams into Monday-aligned weeks.
//!
//! Lines starting with `#` are treated as comments, which lets pipeline
//! stages stamp provenance into their outputs without breaking the format.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::clock::{TzOffset, SECONDS_PER_WEEK};
use crate::geo::GeoPoint;

pub const TRAJECTORY_HEADER: [&str; 4] = ["user_id", "lat", "lon", "ts"];
pub const POI_HEADER: [&str; 4] = ["name", "category", "lat", "lon"];
pub const PRICE_HEADER: [&str; 4] = ["name", "price", "lat", "lon"];

/// Share of malformed lines above which a whole file is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("format error at line {line}: {reason}")]
    Format { line: u64, reason: String },
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        match e.into_kind() {
            csv::ErrorKind::Io(io) => IngestError::Io(io),
            other => IngestError::Format {
                line,
                reason: format!("{other:?}"),
            },
        }
    }
}

/// The eleven POI categories, ordered alphabetically; the position is the
/// stable integer code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoiCategory {
    Attractions,
    Community,
    Education,
    FoodAndDrink,
    Hospitals,
    Lodging,
    Recreation,
    Residence,
    Shopping,
    Traffic,
    Working,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 11] = [
        PoiCategory::Attractions,
        PoiCategory::Community,
        PoiCategory::Education,
        PoiCategory::FoodAndDrink,
        PoiCategory::Hospitals,
        PoiCategory::Lodging,
        PoiCategory::Recreation,
        PoiCategory::Residence,
        PoiCategory::Shopping,
        PoiCategory::Traffic,
        PoiCategory::Working,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PoiCategory::Attractions => "attractions",
            PoiCategory::Community => "community",
            PoiCategory::Education => "education",
            PoiCategory::FoodAndDrink => "food_and_drink",
            PoiCategory::Hospitals => "hospitals",
            PoiCategory::Lodging => "lodging",
            PoiCategory::Recreation => "recreation",
            PoiCategory::Residence => "residence",
            PoiCategory::Shopping => "shopping",
            PoiCategory::Traffic => "traffic",
            PoiCategory::Working => "working",
        }
    }
}

impl fmt::Display for PoiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoiCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown POI category {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub point: GeoPoint,
    pub ts: i64,
}

/// All records of one user, strictly increasing in `ts`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTrajectory {
    pub user_id: String,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiRecord {
    pub name: String,
    pub category: PoiCategory,
    pub point: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceRecord {
    pub name: String,
    pub price: f64,
    pub point: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeekSlice {
    pub user_id: String,
    /// UTC timestamp of local Monday 00:00.
    pub week_start: i64,
    pub records: Vec<TrajectoryRecord>,
}

impl WeekSlice {
    pub fn week_end(&self) -> i64 {
        self.week_start + SECONDS_PER_WEEK
    }
}

/// Parsed items plus every line that was rejected, with its reason.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub items: T,
    pub malformed: Vec<(u64, String)>,
}

fn parse_f64(field: &str, what: &str) -> Result<f64, String> {
    let v: f64 = field.trim().parse().map_err(|_| format!("bad {what} {field:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {what}"))
    }
}

fn parse_point(lat: &str, lon: &str) -> Result<GeoPoint, String> {
    let (lat, lon) = (parse_f64(lat, "lat")?, parse_f64(lon, "lon")?);
    GeoPoint::new(lat, lon).map_err(|e| e.to_string())
}

/// Reads a 4-column CSV, applying `row` to each data line. Fails outright
/// when the header differs or more than 1% of the lines are malformed.
fn read_rows<R, T>(
    reader: R,
    header: &[&str; 4],
    mut row: impl FnMut(&csv::StringRecord) -> Result<T, String>,
) -> Result<Parsed<Vec<T>>, IngestError>
where
    R: io::Read,
{
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .has_headers(false)
        .from_reader(reader);
    let mut items = Vec::new();
    let mut malformed = Vec::new();
    let mut seen_header = false;
    let mut lines = 0u64;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if !seen_header {
            let got: Vec<&str> = rec.iter().map(str::trim).collect();
            if got != header {
                return Err(IngestError::Format {
                    line,
                    reason: format!("expected header {}, found {}", header.join(","), got.join(",")),
                });
            }
            seen_header = true;
            continue;
        }
        lines += 1;
        let outcome = if rec.len() != header.len() {
            Err(format!("expected {} fields, found {}", header.len(), rec.len()))
        } else {
            row(&rec)
        };
        match outcome {
            Ok(t) => items.push(t),
            Err(reason) => malformed.push((line, reason)),
        }
    }
    if !malformed.is_empty() && malformed.len() as f64 > MAX_MALFORMED_FRACTION * lines as f64 {
        let (line, reason) = malformed.swap_remove(0);
        return Err(IngestError::Format {
            line,
            reason: format!("{reason} ({} of {lines} lines malformed)", malformed.len() + 1),
        });
    }
    Ok(Parsed { items, malformed })
}

pub fn read_trajectories<R: io::Read>(reader: R) -> Result<Parsed<Vec<UserTrajectory>>, IngestError> {
    let parsed = read_rows(reader, &TRAJECTORY_HEADER, |r| {
        let user = r[0].trim();
        if user.is_empty() {
            return Err("empty user_id".into());
        }
        let point = parse_point(&r[1], &r[2])?;
        let ts: i64 = r[3].trim().parse().map_err(|_| format!("bad ts {:?}", &r[3]))?;
        if ts < 0 {
            return Err("negative ts".into());
        }
        Ok((user.to_string(), TrajectoryRecord { point, ts }))
    })?;
    let mut by_user: BTreeMap<String, Vec<TrajectoryRecord>> = BTreeMap::new();
    for (user, rec) in parsed.items {
        by_user.entry(user).or_default().push(rec);
    }
    let items = by_user
        .into_iter()
        .map(|(user_id, mut records)| {
            // Stable sort keeps file order among equal timestamps; the first wins.
            records.sort_by_key(|r| r.ts);
            records.dedup_by_key(|r| r.ts);
            UserTrajectory { user_id, records }
        })
        .collect();
    Ok(Parsed {
        items,
        malformed: parsed.malformed,
    })
}

pub fn read_pois<R: io::Read>(reader: R) -> Result<Parsed<Vec<PoiRecord>>, IngestError> {
    read_rows(reader, &POI_HEADER, |r| {
        Ok(PoiRecord {
            name: r[0].to_string(),
            category: r[1].trim().parse()?,
            point: parse_point(&r[2], &r[3])?,
        })
    })
}

pub fn read_prices<R: io::Read>(reader: R) -> Result<Parsed<Vec<PriceRecord>>, IngestError> {
    read_rows(reader, &PRICE_HEADER, |r| {
        let price = parse_f64(&r[1], "price")?;
        if price <= 0.0 {
            return Err(format!("price must be positive, got {price}"));
        }
        Ok(PriceRecord {
            name: r[0].to_string(),
            price,
            point: parse_point(&r[2], &r[3])?,
        })
    })
}

pub fn parse_trajectories(path: impl AsRef<Path>) -> Result<Parsed<Vec<UserTrajectory>>, IngestError> {
    read_trajectories(File::open(path)?)
}

pub fn parse_pois(path: impl AsRef<Path>) -> Result<Parsed<Vec<PoiRecord>>, IngestError> {
    read_pois(File::open(path)?)
}

pub fn parse_prices(path: impl AsRef<Path>) -> Result<Parsed<Vec<PriceRecord>>, IngestError> {
    read_prices(File::open(path)?)
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

pub fn write_trajectories<W: Write>(w: W, streams: &[UserTrajectory]) -> Result<(), IngestError> {
    let mut wtr = csv_writer(w);
    wtr.write_record(TRAJECTORY_HEADER)?;
    for s in streams {
        for r in &s.records {
            wtr.write_record([
                s.user_id.as_str(),
                &r.point.lat.to_string(),
                &r.point.lon.to_string(),
                &r.ts.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_pois<W: Write>(w: W, pois: &[PoiRecord]) -> Result<(), IngestError> {
    let mut wtr = csv_writer(w);
    wtr.write_record(POI_HEADER)?;
    for p in pois {
        wtr.write_record([
            p.name.as_str(),
            p.category.name(),
            &p.point.lat.to_string(),
            &p.point.lon.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_prices<W: Write>(w: W, prices: &[PriceRecord]) -> Result<(), IngestError> {
    let mut wtr = csv_writer(w);
    wtr.write_record(PRICE_HEADER)?;
    for p in prices {
        wtr.write_record([
            p.name.as_str(),
            &p.price.to_string(),
            &p.point.lat.to_string(),
            &p.point.lon.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Buckets a time-sorted stream into local Monday-aligned weeks, dropping
/// weeks with fewer than `min_records` records.
pub fn segment_weeks(stream: &UserTrajectory, tz: TzOffset, min_records: usize) -> Vec<WeekSlice> {
    let mut weeks: Vec<WeekSlice> = Vec::new();
    for rec in &stream.records {
        let start = tz.week_start(rec.ts);
        match weeks.last_mut() {
            Some(w) if w.week_start == start => w.records.push(*rec),
            _ => weeks.push(WeekSlice {
                user_id: stream.user_id.clone(),
                week_start: start,
                records: vec![*rec],
            }),
        }
    }
    weeks.retain(|w| w.records.len() >= min_records);
    weeks
}

#[cfg(test)]
mod tests {
    use super::*;

    const MONDAY: i64 = 1_223_222_400;

    fn traj(csv: &str) -> Result<Parsed<Vec<UserTrajectory>>, IngestError> {
        read_trajectories(csv.as_bytes())
    }

    #[test]
    fn empty_file() {
        let p = traj("").unwrap();
        assert!(p.items.is_empty() && p.malformed.is_empty());
        let p = traj("user_id,lat,lon,ts\n").unwrap();
        assert!(p.items.is_empty());
    }

    #[test]
    fn interleaved_users_are_grouped_and_sorted() {
        let p = traj("user_id,lat,lon,ts\nb,1,1,30\na,1,1,20\nb,1,1,10\na,1,1,5\na,2,2,20\n").unwrap();
        assert_eq!(p.items.len(), 2);
        assert_eq!(p.items[0].user_id, "a");
        let ts: Vec<i64> = p.items[0].records.iter().map(|r| r.ts).collect();
        assert_eq!(ts, vec![5, 20]);
        // duplicate ts collapses to the first line in file order
        assert_eq!(p.items[0].records[1].point.lat, 1.0);
        let ts: Vec<i64> = p.items[1].records.iter().map(|r| r.ts).collect();
        assert_eq!(ts, vec![10, 30]);
    }

    #[test]
    fn bad_latitude_is_a_format_error() {
        let err = traj("user_id,lat,lon,ts\na,91.0,0,1\n").unwrap_err();
        assert!(matches!(err, IngestError::Format { line: 2, .. }), "{err}");
    }

    #[test]
    fn sparse_bad_lines_are_counted() {
        let mut s = String::from("user_id,lat,lon,ts\n");
        for i in 0..200 {
            s.push_str(&format!("u,39.9,116.3,{i}\n"));
        }
        s.push_str("u,91.0,116.3,999\n");
        let p = traj(&s).unwrap();
        assert_eq!(p.items[0].records.len(), 200);
        assert_eq!(p.malformed.len(), 1);
        assert_eq!(p.malformed[0].0, 202);
    }

    #[test]
    fn wrong_header() {
        assert!(traj("id,lat,lon,time\n").is_err());
    }

    #[test]
    fn poi_categories() {
        let mut s = String::from("name,category,lat,lon\n");
        for c in PoiCategory::ALL {
            s.push_str(&format!("p_{c},{c},39.9,116.3\n"));
        }
        let p = read_pois(s.as_bytes()).unwrap();
        assert_eq!(p.items.len(), 11);
        let err = read_pois("name,category,lat,lon\nx,gym,39.9,116.3\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("gym"));
        let codes: Vec<u8> = PoiCategory::ALL.iter().map(|c| c.code()).collect();
        assert_eq!(codes, (0..11).collect::<Vec<u8>>());
        let mut names: Vec<&str> = PoiCategory::ALL.iter().map(|c| c.name()).collect();
        let sorted = names.clone();
        names.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn non_positive_price() {
        assert!(read_prices("name,price,lat,lon\nh,0,39.9,116.3\n".as_bytes()).is_err());
        assert!(read_prices("name,price,lat,lon\nh,-5,39.9,116.3\n".as_bytes()).is_err());
        let p = read_prices("name,price,lat,lon\nh,45000.5,39.9,116.3\n".as_bytes()).unwrap();
        assert_eq!(p.items[0].price, 45000.5);
    }

    fn stream(ts: &[i64]) -> UserTrajectory {
        UserTrajectory {
            user_id: "u".into(),
            records: ts
                .iter()
                .map(|&ts| TrajectoryRecord {
                    point: GeoPoint { lat: 39.9, lon: 116.3 },
                    ts,
                })
                .collect(),
        }
    }

    #[test]
    fn week_segmentation() {
        let tz = TzOffset::BEIJING;
        let one: Vec<i64> = (0..20).map(|i| MONDAY + i * 3600).collect();
        assert_eq!(segment_weeks(&stream(&one), tz, 10).len(), 1);

        // Sunday 23:59 then Monday 00:01 of the next week.
        let next = MONDAY + SECONDS_PER_WEEK;
        let split = [next - 60, next + 60];
        let w = segment_weeks(&stream(&split), tz, 1);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].week_start, MONDAY);
        assert_eq!(w[1].week_start, next);

        assert!(segment_weeks(&stream(&[MONDAY, MONDAY + 1, MONDAY + 2]), tz, 10).is_empty());
    }

    #[test]
    fn segmentation_preserves_records() {
        let tz = TzOffset::BEIJING;
        let ts: Vec<i64> = (0..500).map(|i| MONDAY - 3 * 86_400 + i * 3_001).collect();
        let s = stream(&ts);
        let weeks = segment_weeks(&s, tz, 1);
        let flat: Vec<i64> = weeks.iter().flat_map(|w| w.records.iter().map(|r| r.ts)).collect();
        assert_eq!(flat, ts);
        for w in &weeks {
            assert!(w.records.iter().all(|r| r.ts >= w.week_start && r.ts < w.week_end()));
        }
    }

    #[test]
    fn write_then_read_round_trip() {
        let src = "user_id,lat,lon,ts\na,39.912345678,116.3,100\na,39.9,116.30000001,200\nb,-1.5,2.25,7\n";
        let p = traj(src).unwrap();
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &p.items).unwrap();
        let again = read_trajectories(buf.as_slice()).unwrap();
        assert_eq!(again.items, p.items);
        let mut buf2 = Vec::new();
        write_trajectories(&mut buf2, &again.items).unwrap();
        assert_eq!(buf, buf2);
    }
}
