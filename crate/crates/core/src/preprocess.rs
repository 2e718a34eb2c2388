//! Trajectory cleaning, stay-point extraction, home inference and
//! house-price class labels.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::clock::{TzOffset, SECONDS_PER_HOUR};
use crate::geo::{centroid, haversine_m, CellId, GeoPoint, GridSpec};
use crate::ingest::{PriceRecord, TrajectoryRecord};

pub const MIN_CLASSES: usize = 2;
pub const MAX_CLASSES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("no stay overlaps any night window")]
    NoNightActivity,
    #[error("price table is empty")]
    EmptyPriceTable,
    #[error("invalid label setup: {0}")]
    InvalidLabelSetup(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StayPoint {
    pub centroid: GeoPoint,
    pub arrival_ts: i64,
    pub departure_ts: i64,
    /// `None` when the centroid falls outside the study grid.
    pub cell: Option<CellId>,
    pub member_count: usize,
}

impl StayPoint {
    pub fn duration_s(&self) -> i64 {
        self.departure_ts - self.arrival_ts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassLabel {
    pub class_index: usize,
    pub num_classes: usize,
}

/// Drops points whose speed from the last kept point exceeds `v_max_mps`,
/// and points that do not advance in time.
pub fn filter_noise(records: &[TrajectoryRecord], v_max_mps: f64) -> Vec<TrajectoryRecord> {
    let mut kept: Vec<TrajectoryRecord> = Vec::with_capacity(records.len());
    for &r in records {
        match kept.last() {
            None => kept.push(r),
            Some(prev) => {
                let dt = r.ts - prev.ts;
                if dt <= 0 {
                    continue;
                }
                if haversine_m(prev.point, r.point) / dt as f64 <= v_max_mps {
                    kept.push(r);
                }
            }
        }
    }
    kept
}

/// Inclusive index ranges `[first, last]` of the detected stays.
///
/// From an anchor, successors are absorbed while each stays within
/// `radius_m` of the anchor. The run becomes a stay when it lasts strictly
/// longer than `min_duration_s`; the anchor then jumps past the run,
/// otherwise it advances by one.
pub fn stay_point_spans(records: &[TrajectoryRecord], radius_m: f64, min_duration_s: f64) -> Vec<(usize, usize)> {
    let n = records.len();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        let anchor = records[i];
        let mut last = i;
        while last + 1 < n && haversine_m(anchor.point, records[last + 1].point) <= radius_m {
            last += 1;
        }
        if (records[last].ts - anchor.ts) as f64 > min_duration_s {
            spans.push((i, last));
            i = last + 1;
        } else {
            i += 1;
        }
    }
    spans
}

pub fn detect_stay_points(
    records: &[TrajectoryRecord],
    radius_m: f64,
    min_duration_s: f64,
    grid: &GridSpec,
) -> Vec<StayPoint> {
    stay_point_spans(records, radius_m, min_duration_s)
        .into_iter()
        .map(|(first, last)| {
            let members = &records[first..=last];
            let c = centroid(members.iter().map(|r| r.point)).expect("non-empty span");
            StayPoint {
                centroid: c,
                arrival_ts: members[0].ts,
                departure_ts: members[members.len() - 1].ts,
                cell: grid.cell_of(c).ok(),
                member_count: members.len(),
            }
        })
        .collect()
}

/// Local-time night window `[start_hour, end_hour)`, wrapping past midnight
/// when `start_hour > end_hour`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NightWindow {
    pub start_hour: u32,
    pub end_hour: u32,
}

impl Default for NightWindow {
    fn default() -> Self {
        NightWindow {
            start_hour: 22,
            end_hour: 7,
        }
    }
}

impl NightWindow {
    /// Seconds of `[from, to)` that fall inside night windows.
    pub fn overlap_s(&self, tz: TzOffset, from: i64, to: i64) -> i64 {
        if to <= from {
            return 0;
        }
        let start = self.start_hour as i64 * SECONDS_PER_HOUR;
        let mut end = self.end_hour as i64 * SECONDS_PER_HOUR;
        if end <= start {
            end += 24 * SECONDS_PER_HOUR;
        }
        let mut total = 0;
        for day in tz.day_number(from) - 1..=tz.day_number(to) {
            let midnight = tz.midnight_of_day(day);
            let (a, b) = (midnight + start, midnight + end);
            total += (to.min(b) - from.max(a)).max(0);
        }
        total
    }
}

/// How night-time presence is scored per cell when choosing a home.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HomeWeighting {
    /// Total seconds of night overlap; visit count breaks ties.
    #[default]
    Duration,
    /// Number of stays overlapping the night; duration breaks ties.
    Count,
}

pub fn infer_home(
    stays: &[StayPoint],
    tz: TzOffset,
    night: NightWindow,
    weighting: HomeWeighting,
) -> Result<CellId, PreprocessError> {
    // cell -> (overlap seconds, overlapping stays)
    let mut score: BTreeMap<CellId, (i64, usize)> = BTreeMap::new();
    for s in stays {
        let Some(cell) = s.cell else { continue };
        let overlap = night.overlap_s(tz, s.arrival_ts, s.departure_ts);
        if overlap > 0 {
            let e = score.entry(cell).or_default();
            e.0 += overlap;
            e.1 += 1;
        }
    }
    let key = |&(secs, count): &(i64, usize)| match weighting {
        HomeWeighting::Duration => (secs, count as i64),
        HomeWeighting::Count => (count as i64, secs),
    };
    // BTreeMap iterates in ascending cell order, so keeping the first
    // strict maximum resolves remaining ties toward the smaller cell.
    let mut best: Option<(CellId, (i64, i64))> = None;
    for (cell, v) in &score {
        let k = key(v);
        if best.is_none_or(|(_, bk)| k > bk) {
            best = Some((*cell, k));
        }
    }
    best.map(|(c, _)| c).ok_or(PreprocessError::NoNightActivity)
}

/// Price of the record nearest to the home cell's center (a Voronoi
/// lookup); equidistant records resolve to the smaller price.
pub fn price_at(home: CellId, prices: &[PriceRecord], grid: &GridSpec) -> Result<f64, PreprocessError> {
    let center = grid.cell_center(home);
    prices
        .iter()
        .map(|p| (haversine_m(center, p.point), p.price))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .map(|(_, price)| price)
        .ok_or(PreprocessError::EmptyPriceTable)
}

/// Index of the equal-width price interval containing `price`.
pub fn derive_label(price: f64, price_min: f64, price_max: f64, num_classes: usize) -> Result<ClassLabel, PreprocessError> {
    if !(MIN_CLASSES..=MAX_CLASSES).contains(&num_classes) {
        return Err(PreprocessError::InvalidLabelSetup(format!(
            "number of classes must be in [{MIN_CLASSES}, {MAX_CLASSES}], got {num_classes}"
        )));
    }
    if !(price_min.is_finite() && price_max.is_finite() && price_min < price_max) {
        return Err(PreprocessError::InvalidLabelSetup(format!(
            "price range [{price_min}, {price_max}] is empty"
        )));
    }
    let p = price.clamp(price_min, price_max);
    let width = (price_max - price_min) / num_classes as f64;
    let idx = ((p - price_min) / width).floor() as usize;
    Ok(ClassLabel {
        class_index: idx.min(num_classes - 1),
        num_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MONDAY: i64 = 1_223_222_400;

    fn grid() -> GridSpec {
        GridSpec::new(GeoPoint { lat: 39.9, lon: 116.3 }, 200.0, 100, 100).unwrap()
    }

    fn at(g: &GridSpec, north: f64, east: f64, ts: i64) -> TrajectoryRecord {
        TrajectoryRecord {
            point: g.unproject(north, east),
            ts,
        }
    }

    #[test]
    fn filter_stationary_and_empty() {
        let g = grid();
        let recs: Vec<_> = (0..10).map(|i| at(&g, 500.0, 500.0, i * 60)).collect();
        assert_eq!(filter_noise(&recs, 50.0), recs);
        assert!(filter_noise(&[], 50.0).is_empty());
    }

    #[test]
    fn filter_teleport() {
        let g = grid();
        let recs = vec![
            at(&g, 500.0, 500.0, 0),
            at(&g, 500.0, 510.0, 1),
            at(&g, 10_500.0, 510.0, 2), // 10 km in one second
            at(&g, 500.0, 520.0, 3),
            at(&g, 500.0, 530.0, 4),
        ];
        let out = filter_noise(&recs, 50.0);
        assert_eq!(out.iter().map(|r| r.ts).collect::<Vec<_>>(), vec![0, 1, 3, 4]);
    }

    #[test]
    fn filter_drops_non_increasing_time() {
        let g = grid();
        let recs = vec![at(&g, 0.0, 0.0, 10), at(&g, 0.0, 0.0, 10), at(&g, 0.0, 0.0, 5), at(&g, 0.0, 0.0, 11)];
        assert_eq!(filter_noise(&recs, 50.0).len(), 2);
    }

    #[test]
    fn one_stay_covering_everything() {
        let g = grid();
        let recs: Vec<_> = (0..100).map(|i| at(&g, 1100.0 + (i % 3) as f64, 1100.0, i * 60)).collect();
        let stays = detect_stay_points(&recs, 100.0, 3600.0, &g);
        assert_eq!(stays.len(), 1);
        assert_eq!(stays[0].member_count, 100);
        assert_eq!(stays[0].duration_s(), 99 * 60);
        assert_eq!(stays[0].cell, Some(CellId::new(5, 5)));
    }

    #[test]
    fn constant_motion_has_no_stays() {
        let g = grid();
        // 20 m/s over a 100 m radius lasts at most 5 s
        let fast: Vec<_> = (0..500).map(|i| at(&g, 100.0, 100.0 + 20.0 * i as f64, i)).collect();
        assert!(detect_stay_points(&fast, 100.0, 3600.0, &g).is_empty());
    }

    #[test]
    fn stay_points_are_ordered_and_valid() {
        let g = grid();
        let mut recs = Vec::new();
        let mut ts = 0;
        for (north, east, n) in [(1000.0, 1000.0, 120), (3000.0, 3000.0, 10), (5000.0, 1000.0, 200)] {
            for _ in 0..n {
                recs.push(at(&g, north, east, ts));
                ts += 60;
            }
        }
        let stays = detect_stay_points(&recs, 100.0, 90.0 * 60.0, &g);
        assert_eq!(stays.len(), 2);
        assert!(stays[0].departure_ts < stays[1].arrival_ts);
        for s in &stays {
            assert!(s.duration_s() as f64 >= 90.0 * 60.0);
        }
    }

    fn stay_in(cell: CellId, from: i64, to: i64) -> StayPoint {
        StayPoint {
            centroid: GeoPoint { lat: 0.0, lon: 0.0 },
            arrival_ts: from,
            departure_ts: to,
            cell: Some(cell),
            member_count: 2,
        }
    }

    #[test]
    fn night_overlap_sums() {
        let tz = TzOffset::BEIJING;
        let night = NightWindow::default();
        let h = 3600;
        assert_eq!(night.overlap_s(tz, MONDAY + 23 * h, MONDAY + 30 * h), 7 * h);
        assert_eq!(night.overlap_s(tz, MONDAY + 9 * h, MONDAY + 17 * h), 0);
        // Monday 00:00 - 08:00 touches the Sunday night window.
        assert_eq!(night.overlap_s(tz, MONDAY, MONDAY + 8 * h), 7 * h);
        // Two full days span two complete windows plus Sunday-night tail.
        assert_eq!(night.overlap_s(tz, MONDAY, MONDAY + 48 * h), 7 * h + 9 * h + 2 * h);
    }

    #[test]
    fn home_examples() {
        let tz = TzOffset::BEIJING;
        let night = NightWindow::default();
        let h = 3600;
        let a = CellId::new(1, 1);
        let b = CellId::new(2, 2);
        let single = [stay_in(a, MONDAY + 23 * h, MONDAY + 30 * h)];
        assert_eq!(infer_home(&single, tz, night, HomeWeighting::Duration), Ok(a));

        // A: 2 h of night overlap, B: 5 h.
        let stays = [
            stay_in(a, MONDAY + 22 * h, MONDAY + 24 * h),
            stay_in(b, MONDAY + 26 * h, MONDAY + 31 * h),
        ];
        assert_eq!(infer_home(&stays, tz, night, HomeWeighting::Duration), Ok(b));

        let day: Vec<_> = (0..5)
            .map(|d| stay_in(a, MONDAY + d * 24 * h + 9 * h, MONDAY + d * 24 * h + 17 * h))
            .collect();
        assert_eq!(
            infer_home(&day, tz, night, HomeWeighting::Duration),
            Err(PreprocessError::NoNightActivity)
        );
    }

    #[test]
    fn home_count_weighting_and_ties() {
        let tz = TzOffset::BEIJING;
        let night = NightWindow::default();
        let h = 3600;
        let a = CellId::new(1, 1);
        let b = CellId::new(0, 9);
        // a: one long night, b: three short visits
        let stays = [
            stay_in(a, MONDAY + 22 * h, MONDAY + 31 * h),
            stay_in(b, MONDAY + 48 * h + 22 * h, MONDAY + 48 * h + 23 * h),
            stay_in(b, MONDAY + 72 * h + 22 * h, MONDAY + 72 * h + 23 * h),
            stay_in(b, MONDAY + 96 * h + 22 * h, MONDAY + 96 * h + 23 * h),
        ];
        assert_eq!(infer_home(&stays, tz, night, HomeWeighting::Duration), Ok(a));
        assert_eq!(infer_home(&stays, tz, night, HomeWeighting::Count), Ok(b));
        // exact tie on both keys -> smaller (row, col)
        let tie = [
            stay_in(a, MONDAY + 22 * h, MONDAY + 23 * h),
            stay_in(b, MONDAY + 48 * h + 22 * h, MONDAY + 48 * h + 23 * h),
        ];
        assert_eq!(infer_home(&tie, tz, night, HomeWeighting::Duration), Ok(b));
    }

    fn price(g: &GridSpec, north: f64, east: f64, price: f64) -> PriceRecord {
        PriceRecord {
            name: format!("h{price}"),
            price,
            point: g.unproject(north, east),
        }
    }

    #[test]
    fn price_lookup() {
        let g = grid();
        let home = CellId::new(10, 10);
        let (cn, ce) = (2100.0, 2100.0);
        assert_eq!(price_at(home, &[price(&g, 0.0, 0.0, 123.0)], &g), Ok(123.0));
        let two = [price(&g, cn + 5000.0, ce, 1.0), price(&g, cn + 100.0, ce, 2.0)];
        assert_eq!(price_at(home, &two, &g), Ok(2.0));
        let tie = [price(&g, cn, ce + 300.0, 50_000.0), price(&g, cn, ce - 300.0, 40_000.0)];
        let got = price_at(home, &tie, &g).unwrap();
        // east/west offsets are symmetric under the projection, so distances tie up to rounding
        let d0 = haversine_m(g.cell_center(home), tie[0].point);
        let d1 = haversine_m(g.cell_center(home), tie[1].point);
        if d0 == d1 {
            assert_eq!(got, 40_000.0);
        }
        let exact = [price(&g, cn, ce, 50_000.0), price(&g, cn, ce, 40_000.0)];
        assert_eq!(price_at(home, &exact, &g), Ok(40_000.0));
        assert_eq!(price_at(home, &[], &g), Err(PreprocessError::EmptyPriceTable));
    }

    #[test]
    fn label_binary_midpoint() {
        let (lo, hi) = (10_588.0, 113_224.0);
        // The midpoint of the range is 61,906.
        assert_eq!(derive_label(61_890.0, lo, hi, 2).unwrap().class_index, 0);
        assert_eq!(derive_label(61_905.9, lo, hi, 2).unwrap().class_index, 0);
        assert_eq!(derive_label(61_906.0, lo, hi, 2).unwrap().class_index, 1);
        assert_eq!(derive_label(lo, lo, hi, 2).unwrap().class_index, 0);
        for c in 2..=5 {
            assert_eq!(derive_label(hi, lo, hi, c).unwrap().class_index, c - 1);
            assert_eq!(derive_label(hi * 2.0, lo, hi, c).unwrap().class_index, c - 1);
            assert_eq!(derive_label(0.0, lo, hi, c).unwrap().class_index, 0);
        }
        assert!(derive_label(1.0, lo, hi, 6).is_err());
        assert!(derive_label(1.0, hi, lo, 2).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn trace() -> impl Strategy<Value = Vec<(f64, f64, i64)>> {
            prop::collection::vec((-300.0f64..300.0, -300.0f64..300.0, 1i64..600), 0..60)
        }

        fn build(steps: &[(f64, f64, i64)]) -> Vec<TrajectoryRecord> {
            let g = grid();
            let mut ts = 0;
            steps
                .iter()
                .map(|&(n, e, dt)| {
                    ts += dt;
                    at(&g, 5000.0 + n, 5000.0 + e, ts)
                })
                .collect()
        }

        proptest! {
            #[test]
            fn filter_is_idempotent(steps in trace(), vmax in 0.5f64..5.0) {
                let recs = build(&steps);
                let once = filter_noise(&recs, vmax);
                prop_assert_eq!(filter_noise(&once, vmax), once);
            }

            #[test]
            fn stays_respect_thresholds(steps in trace(), sd in 50.0f64..300.0, st in 60.0f64..3000.0) {
                let recs = build(&steps);
                for (a, b) in stay_point_spans(&recs, sd, st) {
                    prop_assert!((recs[b].ts - recs[a].ts) as f64 >= st);
                    for r in &recs[a..=b] {
                        prop_assert!(haversine_m(recs[a].point, r.point) <= sd);
                    }
                }
            }

            #[test]
            fn stay_count_non_increasing_in_duration(steps in trace(), sd in 50.0f64..300.0, st in 60.0f64..2000.0, extra in 0.0f64..2000.0) {
                let recs = build(&steps);
                let short = stay_point_spans(&recs, sd, st).len();
                let long = stay_point_spans(&recs, sd, st + extra).len();
                prop_assert!(long <= short);
            }

            #[test]
            fn label_monotone(a in 0.0f64..200_000.0, b in 0.0f64..200_000.0, c in 2usize..=5) {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let la = derive_label(lo, 10_588.0, 113_224.0, c).unwrap();
                let lb = derive_label(hi, 10_588.0, 113_224.0, c).unwrap();
                prop_assert!(la.class_index <= lb.class_index);
            }
        }
    }
}
