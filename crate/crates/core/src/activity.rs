//! POI-majority activity labels for stay points and hour-of-week bins.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, Write};

use crate::clock::{TzOffset, SECONDS_PER_DAY};
use crate::geo::{CellId, GridSpec, Neighborhood};
use crate::ingest::{PoiCategory, PoiRecord, WeekSlice};
use crate::preprocess::StayPoint;

pub const NUM_ACTIVITY_CATEGORIES: usize = 12;
pub const NUM_TIME_BINS: usize = 48;
pub const DAYS_PER_WEEK: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActivityCategory {
    Poi(PoiCategory),
    /// No POI found around the stay.
    Other,
}

impl ActivityCategory {
    pub const OTHER_CODE: u8 = 11;

    pub fn code(self) -> u8 {
        match self {
            ActivityCategory::Poi(c) => c.code(),
            ActivityCategory::Other => Self::OTHER_CODE,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            Self::OTHER_CODE => Some(ActivityCategory::Other),
            c => PoiCategory::from_code(c).map(ActivityCategory::Poi),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivityCategory::Poi(c) => c.name(),
            ActivityCategory::Other => "other",
        }
    }

    pub fn all() -> impl Iterator<Item = ActivityCategory> {
        (0..NUM_ACTIVITY_CATEGORIES as u8).filter_map(Self::from_code)
    }
}

impl fmt::Display for ActivityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Writes the `code,name` table for all twelve categories.
pub fn write_category_table<W: Write>(mut w: W) -> io::Result<()> {
    writeln!(w, "code,name")?;
    for c in ActivityCategory::all() {
        writeln!(w, "{},{}", c.code(), c.name())?;
    }
    Ok(())
}

/// Per-cell POI category histogram.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoiIndex {
    counts: HashMap<CellId, [u32; 11]>,
    /// POIs that fell outside the grid.
    pub skipped: usize,
}

impl PoiIndex {
    pub fn build(pois: &[PoiRecord], grid: &GridSpec) -> Self {
        let mut idx = PoiIndex::default();
        for p in pois {
            match grid.cell_of(p.point) {
                Ok(cell) => idx.counts.entry(cell).or_insert([0; 11])[p.category.code() as usize] += 1,
                Err(_) => idx.skipped += 1,
            }
        }
        idx
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn cell_counts(&self, cell: CellId) -> [u32; 11] {
        self.counts.get(&cell).copied().unwrap_or([0; 11])
    }

    pub fn total(&self) -> usize {
        self.counts.values().flat_map(|c| c.iter()).map(|&n| n as usize).sum()
    }

    /// Majority category over the neighborhood of `cell`; smaller codes win
    /// ties and an empty neighborhood yields [`ActivityCategory::Other`].
    pub fn infer(&self, cell: CellId, grid: &GridSpec, mode: Neighborhood) -> ActivityCategory {
        let mut sum = [0u32; 11];
        for c in grid.neighborhood(cell, mode) {
            if let Some(h) = self.counts.get(&c) {
                for (s, n) in sum.iter_mut().zip(h) {
                    *s += n;
                }
            }
        }
        let mut best = (0u32, ActivityCategory::Other);
        for (code, &n) in sum.iter().enumerate() {
            if n > best.0 {
                best = (n, ActivityCategory::Poi(PoiCategory::ALL[code]));
            }
        }
        best.1
    }
}

pub fn infer_activity(stay: &StayPoint, idx: &PoiIndex, grid: &GridSpec, mode: Neighborhood) -> ActivityCategory {
    match stay.cell {
        Some(cell) => idx.infer(cell, grid, mode),
        None => ActivityCategory::Other,
    }
}

/// Local hour, shifted by 24 on Saturdays and Sundays.
pub fn time_bin(ts: i64, tz: TzOffset) -> u8 {
    let hour = tz.hour(ts) as u8;
    if tz.is_weekend(ts) {
        hour + 24
    } else {
        hour
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityEvent {
    pub stay: StayPoint,
    pub category: ActivityCategory,
    pub time_bin: u8,
    pub day_index: u8,
}

/// Groups a week's stays into per-day event lists, keyed by arrival day.
pub fn build_week_events(
    week: &WeekSlice,
    stays: &[StayPoint],
    idx: &PoiIndex,
    grid: &GridSpec,
    tz: TzOffset,
    mode: Neighborhood,
) -> [Vec<ActivityEvent>; DAYS_PER_WEEK] {
    let mut days: [Vec<ActivityEvent>; DAYS_PER_WEEK] = Default::default();
    let mut sorted: Vec<&StayPoint> = stays.iter().collect();
    sorted.sort_by_key(|s| s.arrival_ts);
    for s in sorted {
        let offset = s.arrival_ts - week.week_start;
        if !(0..DAYS_PER_WEEK as i64 * SECONDS_PER_DAY).contains(&offset) {
            continue;
        }
        let day = (offset / SECONDS_PER_DAY) as usize;
        days[day].push(ActivityEvent {
            stay: *s,
            category: infer_activity(s, idx, grid, mode),
            time_bin: time_bin(s.arrival_ts, tz),
            day_index: day as u8,
        });
    }
    days
}
