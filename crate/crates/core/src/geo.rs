//! Great-circle distance and a uniform metric grid over the study area.
//!
//! The grid is laid out with a local equirectangular projection about its
//! south-west origin: rows grow northward, columns grow eastward.

use std::fmt;

use thiserror::Error;

/// Mean Earth radius used for every distance in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters spanned by one degree of latitude on the reference sphere.
pub const METERS_PER_DEG_LAT: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate lat={lat} lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("point ({lat}, {lon}) lies outside the grid")]
    OutOfArea { lat: f64, lon: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// A WGS-84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Builds a point after range-checking both coordinates.
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    /// Moves the point by the given metric offsets using the same local
    /// projection as [`GridSpec`] (reference latitude = `self.lat`).
    pub fn offset_m(&self, north_m: f64, east_m: f64) -> GeoPoint {
        let lat = self.lat + north_m / METERS_PER_DEG_LAT;
        let lon = self.lon + east_m / (METERS_PER_DEG_LAT * self.lat.to_radians().cos());
        GeoPoint { lat, lon }
    }
}

/// Haversine distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Arithmetic mean of latitudes and longitudes. `None` for an empty input.
pub fn centroid<I: IntoIterator<Item = GeoPoint>>(points: I) -> Option<GeoPoint> {
    let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
    for p in points {
        lat += p.lat;
        lon += p.lon;
        n += 1;
    }
    (n > 0).then(|| GeoPoint {
        lat: lat / n as f64,
        lon: lon / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    pub row: u32,
    pub col: u32,
}

impl CellId {
    pub fn new(row: u32, col: u32) -> Self {
        CellId { row, col }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.row, self.col)
    }
}

/// Which cells count as the surroundings of a cell when aggregating POIs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Neighborhood {
    /// The full 3x3 block, center included.
    #[default]
    WithCenter,
    /// Only the 8 ring cells around the center.
    RingOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: GeoPoint,
    pub cell_size_m: f64,
    pub rows: u32,
    pub cols: u32,
}

impl GridSpec {
    pub fn new(origin: GeoPoint, cell_size_m: f64, rows: u32, cols: u32) -> Result<Self, GeoError> {
        let g = GridSpec {
            origin,
            cell_size_m,
            rows,
            cols,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !self.origin.is_valid() {
            return Err(GeoError::InvalidCoordinate {
                lat: self.origin.lat,
                lon: self.origin.lon,
            });
        }
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return Err(GeoError::InvalidGrid(format!("cell_size_m must be > 0, got {}", self.cell_size_m)));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(GeoError::InvalidGrid("rows and cols must be positive".into()));
        }
        if self.origin.lat.abs() >= 89.0 {
            return Err(GeoError::InvalidGrid("origin too close to a pole".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    fn meters_per_deg_lon(&self) -> f64 {
        METERS_PER_DEG_LAT * self.origin.lat.to_radians().cos()
    }

    /// (north, east) offset of `p` from the origin in meters.
    pub fn project(&self, p: GeoPoint) -> (f64, f64) {
        let north = (p.lat - self.origin.lat) * METERS_PER_DEG_LAT;
        let east = (p.lon - self.origin.lon) * self.meters_per_deg_lon();
        (north, east)
    }

    /// Inverse of [`GridSpec::project`].
    pub fn unproject(&self, north_m: f64, east_m: f64) -> GeoPoint {
        GeoPoint {
            lat: self.origin.lat + north_m / METERS_PER_DEG_LAT,
            lon: self.origin.lon + east_m / self.meters_per_deg_lon(),
        }
    }

    pub fn contains(&self, c: CellId) -> bool {
        c.row < self.rows && c.col < self.cols
    }

    pub fn cell_of(&self, p: GeoPoint) -> Result<CellId, GeoError> {
        let (north, east) = self.project(p);
        let row = (north / self.cell_size_m).floor();
        let col = (east / self.cell_size_m).floor();
        if !(row >= 0.0 && col >= 0.0 && row < self.rows as f64 && col < self.cols as f64) {
            return Err(GeoError::OutOfArea { lat: p.lat, lon: p.lon });
        }
        Ok(CellId::new(row as u32, col as u32))
    }

    pub fn cell_center(&self, c: CellId) -> GeoPoint {
        self.unproject(
            (c.row as f64 + 0.5) * self.cell_size_m,
            (c.col as f64 + 0.5) * self.cell_size_m,
        )
    }

    /// The 3x3 block around `c` clipped at the borders, in row-major order.
    pub fn neighborhood(&self, c: CellId, mode: Neighborhood) -> Vec<CellId> {
        let mut out = Vec::with_capacity(9);
        let rows = c.row.saturating_sub(1)..=(c.row + 1).min(self.rows - 1);
        for row in rows {
            for col in c.col.saturating_sub(1)..=(c.col + 1).min(self.cols - 1) {
                let cell = CellId::new(row, col);
                if mode == Neighborhood::RingOnly && cell == c {
                    continue;
                }
                out.push(cell);
            }
        }
        out
    }
}
