//! Weekly mobility indicators: radius of gyration, temporality diversity and
//! activity diversity, and their discretization into tokens.
//!
//! Entropies use the natural logarithm.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geo::{centroid, haversine_m, CellId, GeoPoint};
use crate::ingest::TrajectoryRecord;
use crate::preprocess::StayPoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndicatorError {
    #[error("indicator needs at least one input")]
    EmptyInput,
    #[error("activity diversity needs at least two stays, got {0}")]
    TooFewStays(usize),
    #[error("stay durations must be positive")]
    NonPositiveDuration,
    #[error("invalid tokenizer: {0}")]
    InvalidTokenizer(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorSet {
    /// Radius of gyration in meters.
    pub rg: f64,
    /// Temporality diversity in nats.
    pub td: f64,
    /// Activity diversity in nats.
    pub ad: f64,
}

/// Token triple `(rg, td, ad)`.
pub type IndicatorTokens = [u32; 3];

/// Shannon entropy (nats) of the distribution proportional to `weights`.
pub fn entropy<I: IntoIterator<Item = f64>>(weights: I) -> f64 {
    let w: Vec<f64> = weights.into_iter().collect();
    let total: f64 = w.iter().sum();
    -w.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| {
            let p = x / total;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn radius_of_gyration(points: &[GeoPoint]) -> Result<f64, IndicatorError> {
    let center = centroid(points.iter().copied()).ok_or(IndicatorError::EmptyInput)?;
    let msd = points.iter().map(|&p| haversine_m(p, center).powi(2)).sum::<f64>() / points.len() as f64;
    Ok(msd.sqrt())
}

/// Entropy of the per-stay share of total dwell time.
pub fn temporality_diversity(stays: &[StayPoint]) -> Result<f64, IndicatorError> {
    if stays.is_empty() {
        return Err(IndicatorError::EmptyInput);
    }
    if stays.iter().any(|s| s.duration_s() <= 0) {
        return Err(IndicatorError::NonPositiveDuration);
    }
    Ok(entropy(stays.iter().map(|s| s.duration_s() as f64)))
}

/// Like [`temporality_diversity`] but dwell time is first summed per cell.
pub fn temporality_diversity_by_cell(stays: &[StayPoint]) -> Result<f64, IndicatorError> {
    if stays.is_empty() {
        return Err(IndicatorError::EmptyInput);
    }
    if stays.iter().any(|s| s.duration_s() <= 0) {
        return Err(IndicatorError::NonPositiveDuration);
    }
    let mut per_cell: BTreeMap<Option<CellId>, f64> = BTreeMap::new();
    for s in stays {
        *per_cell.entry(s.cell).or_default() += s.duration_s() as f64;
    }
    Ok(entropy(per_cell.into_values()))
}

/// Share of each undirected location pair among the `n - 1` moves between
/// consecutive stays. Locations are grid cells; out-of-area is one location.
/// Consecutive location pair and its share of all trips.
pub type PairShares = BTreeMap<(Option<CellId>, Option<CellId>), f64>;

pub fn trip_pair_shares(locations: &[Option<CellId>]) -> Result<PairShares, IndicatorError> {
    if locations.len() < 2 {
        return Err(IndicatorError::TooFewStays(locations.len()));
    }
    let mut counts: BTreeMap<(Option<CellId>, Option<CellId>), usize> = BTreeMap::new();
    for w in locations.windows(2) {
        let key = if w[0] <= w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
        *counts.entry(key).or_default() += 1;
    }
    let moves = (locations.len() - 1) as f64;
    Ok(counts.into_iter().map(|(k, n)| (k, n as f64 / moves)).collect())
}

pub fn activity_diversity(stays: &[StayPoint]) -> Result<f64, IndicatorError> {
    let cells: Vec<Option<CellId>> = stays.iter().map(|s| s.cell).collect();
    let shares = trip_pair_shares(&cells)?;
    Ok(entropy(shares.into_values()))
}

/// Equal-width binning of `[min, max]`; values outside clamp to the end bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeTokenizer {
    pub min: f64,
    pub max: f64,
    pub granularity: f64,
}

impl RangeTokenizer {
    pub fn new(min: f64, max: f64, granularity: f64) -> Result<Self, IndicatorError> {
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(IndicatorError::InvalidTokenizer(format!("bad range [{min}, {max}]")));
        }
        if !(granularity.is_finite() && granularity > 0.0) {
            return Err(IndicatorError::InvalidTokenizer(format!("granularity must be > 0, got {granularity}")));
        }
        Ok(RangeTokenizer { min, max, granularity })
    }

    /// Range taken from the observed values.
    pub fn fit(values: &[f64], granularity: f64) -> Result<Self, IndicatorError> {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if values.is_empty() {
            return Err(IndicatorError::EmptyInput);
        }
        Self::new(min, max, granularity)
    }

    /// Radius of gyration over 0.09 - 8,143.3 m in 100 m steps.
    pub fn spatiality_default() -> Self {
        RangeTokenizer {
            min: 0.09,
            max: 8_143.3,
            granularity: 100.0,
        }
    }

    pub fn temporality_default() -> Self {
        RangeTokenizer {
            min: 0.0,
            max: 5.73,
            granularity: 0.5,
        }
    }

    pub fn activity_default() -> Self {
        RangeTokenizer {
            min: 0.02,
            max: 5.36,
            granularity: 0.5,
        }
    }

    pub fn vocab(&self) -> usize {
        (((self.max - self.min) / self.granularity).ceil() as usize).max(1)
    }

    pub fn token(&self, x: f64) -> u32 {
        let raw = ((x - self.min) / self.granularity).floor();
        let top = (self.vocab() - 1) as f64;
        // NaN falls through clamp unchanged and casts to 0
        raw.clamp(0.0, top) as u32
    }

    /// Value interval covered by `token`. The first and last bins absorb
    /// clamped values, so their outer edges are infinite.
    pub fn interval(&self, token: u32) -> (f64, f64) {
        let lo = if token == 0 {
            f64::NEG_INFINITY
        } else {
            self.min + token as f64 * self.granularity
        };
        let hi = if token as usize + 1 >= self.vocab() {
            f64::INFINITY
        } else {
            self.min + (token + 1) as f64 * self.granularity
        };
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tokenizers {
    pub rg: RangeTokenizer,
    pub td: RangeTokenizer,
    pub ad: RangeTokenizer,
}

impl Default for Tokenizers {
    fn default() -> Self {
        Tokenizers {
            rg: RangeTokenizer::spatiality_default(),
            td: RangeTokenizer::temporality_default(),
            ad: RangeTokenizer::activity_default(),
        }
    }
}

impl Tokenizers {
    pub fn tokenize(&self, set: &IndicatorSet) -> IndicatorTokens {
        [self.rg.token(set.rg), self.td.token(set.td), self.ad.token(set.ad)]
    }

    pub fn vocabs(&self) -> [usize; 3] {
        [self.rg.vocab(), self.td.vocab(), self.ad.vocab()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TdMode {
    #[default]
    PerStay,
    PerCell,
}

/// Indicators for one week: Rg over its filtered records, TD and AD over
/// its stays (which must number at least two).
pub fn week_indicators(records: &[TrajectoryRecord], stays: &[StayPoint], td_mode: TdMode) -> Result<IndicatorSet, IndicatorError> {
    if stays.len() < 2 {
        return Err(IndicatorError::TooFewStays(stays.len()));
    }
    let points: Vec<GeoPoint> = records.iter().map(|r| r.point).collect();
    let rg = radius_of_gyration(&points)?;
    let td = match td_mode {
        TdMode::PerStay => temporality_diversity(stays)?,
        TdMode::PerCell => temporality_diversity_by_cell(stays)?,
    };
    let ad = activity_diversity(stays)?;
    Ok(IndicatorSet { rg, td, ad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GridSpec;

    fn grid() -> GridSpec {
        GridSpec::new(GeoPoint { lat: 39.9, lon: 116.3 }, 200.0, 100, 100).unwrap()
    }

    fn stay(cell: (u32, u32), dur: i64) -> StayPoint {
        StayPoint {
            centroid: GeoPoint { lat: 0.0, lon: 0.0 },
            arrival_ts: 0,
            departure_ts: dur,
            cell: Some(CellId::new(cell.0, cell.1)),
            member_count: 2,
        }
    }

    #[test]
    fn rg_hand_cases() {
        let g = grid();
        let p = g.unproject(1000.0, 1000.0);
        assert!(radius_of_gyration(&[p, p, p]).unwrap() < 1e-6);
        assert_eq!(radius_of_gyration(&[]), Err(IndicatorError::EmptyInput));

        // two points 2 m apart, each 1 m from their midpoint
        let two = [g.unproject(0.0, 1000.0), g.unproject(0.0, 1002.0)];
        let rg = radius_of_gyration(&two).unwrap();
        assert!((rg - 1.0).abs() < 1e-6, "{rg}");

        // offsets 0, 1, 2 m: distances 1, 0, 1 from the center
        let three = [g.unproject(1000.0, 1000.0), g.unproject(1001.0, 1000.0), g.unproject(1002.0, 1000.0)];
        let rg = radius_of_gyration(&three).unwrap();
        assert!((rg - (2.0f64 / 3.0).sqrt()).abs() / (2.0f64 / 3.0).sqrt() < 1e-6, "{rg}");
    }

    #[test]
    fn td_hand_cases() {
        assert_eq!(temporality_diversity(&[stay((0, 0), 100)]).unwrap(), 0.0);
        let two = temporality_diversity(&[stay((0, 0), 50), stay((0, 1), 50)]).unwrap();
        assert!((two - 2f64.ln()).abs() < 1e-12);
        let skew = temporality_diversity(&[stay((0, 0), 3 * 3600), stay((0, 1), 3600)]).unwrap();
        assert!((skew - 0.562_335_144_618_808_3).abs() < 1e-12);
        assert_eq!(temporality_diversity(&[]), Err(IndicatorError::EmptyInput));
        assert_eq!(temporality_diversity(&[stay((0, 0), 0)]), Err(IndicatorError::NonPositiveDuration));
    }

    #[test]
    fn td_per_cell_aggregates() {
        let stays = [stay((0, 0), 100), stay((0, 1), 100), stay((0, 0), 200)];
        let agg = temporality_diversity_by_cell(&stays).unwrap();
        let expect = entropy([300.0, 100.0]);
        assert!((agg - expect).abs() < 1e-12);
        assert!(temporality_diversity(&stays).unwrap() > agg);
    }

    #[test]
    fn ad_worked_sequence() {
        // a b c d c b a
        let seq = [(0, 0), (0, 1), (0, 2), (0, 3), (0, 2), (0, 1), (0, 0)];
        let stays: Vec<StayPoint> = seq.iter().map(|&c| stay(c, 10)).collect();
        let cells: Vec<Option<CellId>> = stays.iter().map(|s| s.cell).collect();
        let shares = trip_pair_shares(&cells).unwrap();
        assert_eq!(shares.len(), 3);
        let ab = shares[&(Some(CellId::new(0, 0)), Some(CellId::new(0, 1)))];
        assert!((ab - 2.0 / 6.0).abs() < 1e-15);
        assert!((ab - 0.33).abs() < 0.005);
        let ad = activity_diversity(&stays).unwrap();
        assert!((ad - 3f64.ln()).abs() < 1e-9);

        let single = [stay((0, 0), 10), stay((0, 1), 10)];
        assert_eq!(activity_diversity(&single).unwrap(), 0.0);
        assert_eq!(activity_diversity(&single[..1]), Err(IndicatorError::TooFewStays(1)));
    }

    #[test]
    fn ad_depends_on_order_td_does_not() {
        let a = [stay((0, 0), 10), stay((0, 1), 20), stay((0, 0), 30), stay((0, 2), 40)];
        let b = [a[0], a[2], a[1], a[3]];
        assert_eq!(temporality_diversity(&a).unwrap(), temporality_diversity(&b).unwrap());
        assert_ne!(activity_diversity(&a).unwrap(), activity_diversity(&b).unwrap());
    }

    #[test]
    fn self_pairs_count() {
        let s = [stay((0, 0), 10), stay((0, 0), 10), stay((0, 1), 10)];
        let ad = activity_diversity(&s).unwrap();
        assert!((ad - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn tokenizer_basics() {
        let t = RangeTokenizer::spatiality_default();
        assert_eq!(t.vocab(), 82);
        assert_eq!(t.token(t.min), 0);
        assert_eq!(t.token(-5.0), 0);
        assert_eq!(t.token(1e9), 81);
        assert_eq!(t.token(150.0), 1);
        assert!(RangeTokenizer::new(1.0, 0.0, 1.0).is_err());
        assert!(RangeTokenizer::new(0.0, 1.0, 0.0).is_err());
        let flat = RangeTokenizer::new(2.0, 2.0, 0.5).unwrap();
        assert_eq!(flat.vocab(), 1);
        assert_eq!(flat.token(7.0), 0);
        let fit = RangeTokenizer::fit(&[3.0, 1.0, 2.5], 0.5).unwrap();
        assert_eq!((fit.min, fit.max, fit.vocab()), (1.0, 3.0, 4));
    }

    #[test]
    fn week_needs_two_stays() {
        let g = grid();
        let recs = [TrajectoryRecord {
            point: g.unproject(10.0, 10.0),
            ts: 0,
        }];
        assert_eq!(
            week_indicators(&recs, &[stay((0, 0), 10)], TdMode::PerStay),
            Err(IndicatorError::TooFewStays(1))
        );
        let ind = week_indicators(&recs, &[stay((0, 0), 10), stay((0, 1), 10)], TdMode::PerStay).unwrap();
        assert_eq!(ind.rg, 0.0);
        assert!((ind.td - 2f64.ln()).abs() < 1e-12);
        assert_eq!(ind.ad, 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn uniform_durations_reach_ln_n(n in 1usize..200, d in 1i64..100_000) {
                let stays: Vec<StayPoint> = (0..n).map(|i| stay((0, i as u32 % 100), d)).collect();
                let td = temporality_diversity(&stays).unwrap();
                prop_assert!((td - (n as f64).ln()).abs() <= 1e-12);
            }

            #[test]
            fn entropies_bounded(durs in prop::collection::vec((0u32..5, 1i64..10_000), 2..40)) {
                let stays: Vec<StayPoint> = durs.iter().map(|&(c, d)| stay((0, c), d)).collect();
                let n = stays.len() as f64;
                let td = temporality_diversity(&stays).unwrap();
                let ad = activity_diversity(&stays).unwrap();
                prop_assert!(td >= -1e-15 && td <= n.ln() + 1e-12);
                prop_assert!(ad >= -1e-15 && ad <= (n - 1.0).ln() + 1e-12);
            }

            #[test]
            fn tokenizer_monotone_and_interval(x in -100.0f64..10_000.0, y in -100.0f64..10_000.0, g in 0.1f64..500.0) {
                let t = RangeTokenizer::new(0.0, 8_000.0, g).unwrap();
                let (a, b) = if x <= y { (x, y) } else { (y, x) };
                prop_assert!(t.token(a) <= t.token(b));
                prop_assert!((t.token(x) as usize) < t.vocab());
                let (lo, hi) = t.interval(t.token(x));
                prop_assert!(lo <= x && x <= hi, "{} not in [{}, {}]", x, lo, hi);
            }

            #[test]
            fn rg_translation_consistent(offs in prop::collection::vec((-3000.0f64..3000.0, -3000.0f64..3000.0), 2..30), dn in -2000.0f64..2000.0, de in -2000.0f64..2000.0) {
                let g = grid();
                let base: Vec<GeoPoint> = offs.iter().map(|&(n, e)| g.unproject(10_000.0 + n, 10_000.0 + e)).collect();
                let moved: Vec<GeoPoint> = offs.iter().map(|&(n, e)| g.unproject(10_000.0 + n + dn, 10_000.0 + e + de)).collect();
                let a = radius_of_gyration(&base).unwrap();
                let b = radius_of_gyration(&moved).unwrap();
                prop_assert!((a - b).abs() <= 1e-3 * a.max(1e-9));
            }
        }
    }
}
