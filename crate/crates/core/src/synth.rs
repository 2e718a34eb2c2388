//! Seeded synthetic city with labelled agents.
//!
//! Venues sit on a lattice with Chebyshev spacing 3, so their 3x3 POI
//! neighbourhoods never overlap. Each agent owns a unique home venue whose
//! house price lies inside its class band, and draws a workplace and a few
//! other venues around a class-dependent travel radius. Richer classes
//! (higher class index) travel shorter distances, make fewer extra stops
//! and keep a tighter daily schedule.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::clock::{TzOffset, SECONDS_PER_DAY, SECONDS_PER_HOUR};
use crate::geo::{haversine_m, CellId, GeoPoint, GridSpec};
use crate::ingest::{self, IngestError, PoiCategory, PoiRecord, PriceRecord, TrajectoryRecord, UserTrajectory};
use crate::parallel::{self, Execution};
use crate::preprocess::ClassLabel;

/// 2008-10-06 00:00 at UTC+8, a Monday.
pub const DEFAULT_START_WEEK: i64 = 1_223_222_400;
const VENUE_SPACING: u32 = 3;
const MINUTE: i64 = 60;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic world: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Behavioural knobs for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    /// Typical home-to-venue distance.
    pub rg_scale_m: f64,
    /// Per-class multiplier on the world's schedule noise.
    pub schedule_noise: f64,
    /// Venues besides home and work.
    pub n_anchor_locations: usize,
    /// Expected extra stops per day.
    pub extra_stops: f64,
    /// Standard deviation of departure/return times.
    pub time_jitter_s: f64,
    /// Category weights for the non-home, non-work venues; sums to 1.
    pub activity_mix: [f64; 11],
    pub price_band: (f64, f64),
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

const LEISURE: [PoiCategory; 9] = [
    PoiCategory::Attractions,
    PoiCategory::Community,
    PoiCategory::Education,
    PoiCategory::FoodAndDrink,
    PoiCategory::Hospitals,
    PoiCategory::Lodging,
    PoiCategory::Recreation,
    PoiCategory::Shopping,
    PoiCategory::Traffic,
];

impl ClassProfile {
    /// Profile for `class` of `num_classes`, spanning `[price_min, price_max]`.
    pub fn interpolated(class: usize, num_classes: usize, price_min: f64, price_max: f64) -> Self {
        let t = class as f64 / (num_classes - 1) as f64;
        let mut mix = [0.0; 11];
        // poorer: spread over every leisure category; richer: a few
        let focused = [(PoiCategory::Shopping, 0.5), (PoiCategory::FoodAndDrink, 0.3), (PoiCategory::Recreation, 0.2)];
        for c in LEISURE {
            mix[c.code() as usize] += (1.0 - t) / LEISURE.len() as f64;
        }
        for (c, w) in focused {
            mix[c.code() as usize] += t * w;
        }
        let width = (price_max - price_min) / num_classes as f64;
        let lo = price_min + class as f64 * width;
        ClassProfile {
            rg_scale_m: lerp(5000.0, 1200.0, t),
            schedule_noise: lerp(1.0, 0.5, t),
            n_anchor_locations: lerp(6.0, 2.0, t).round() as usize,
            extra_stops: lerp(1.5, 0.3, t),
            time_jitter_s: lerp(60.0, 15.0, t) * MINUTE as f64,
            activity_mix: mix,
            price_band: (lo + 0.1 * width, lo + 0.9 * width),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub grid: GridSpec,
    pub n_agents: usize,
    pub weeks_per_agent: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub sampling_period_s: i64,
    /// Probability scale for a day to gain an off-profile stop and looser
    /// timing. Zero gives fully regular weeks.
    pub schedule_noise: f64,
    pub price_min: f64,
    pub price_max: f64,
    pub start_week: i64,
    pub tz: TzOffset,
    pub gps_sigma_m: f64,
    pub speed_mps: f64,
    pub class_profiles: Vec<ClassProfile>,
}

impl WorldConfig {
    pub fn new(n_agents: usize, weeks_per_agent: usize, num_classes: usize, schedule_noise: f64, seed: u64) -> Self {
        let (price_min, price_max) = (10_588.0, 113_224.0);
        WorldConfig {
            grid: GridSpec {
                origin: GeoPoint { lat: 39.80, lon: 116.20 },
                cell_size_m: 200.0,
                rows: 120,
                cols: 120,
            },
            n_agents,
            weeks_per_agent,
            num_classes,
            seed,
            sampling_period_s: 60,
            schedule_noise,
            price_min,
            price_max,
            start_week: DEFAULT_START_WEEK,
            tz: TzOffset::BEIJING,
            gps_sigma_m: 10.0,
            speed_mps: 8.0,
            class_profiles: (0..num_classes.max(2))
                .map(|c| ClassProfile::interpolated(c, num_classes.max(2), price_min, price_max))
                .collect(),
        }
    }

    fn venue_slots(&self) -> Vec<CellId> {
        let mut v = Vec::new();
        for r in (1..self.grid.rows.saturating_sub(1)).step_by(VENUE_SPACING as usize) {
            for c in (1..self.grid.cols.saturating_sub(1)).step_by(VENUE_SPACING as usize) {
                v.push(CellId::new(r, c));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        self.grid.validate().map_err(|e| SynthError::Config(e.to_string()))?;
        if !(2..=5).contains(&self.num_classes) {
            return bad(format!("classes must be in [2, 5], got {}", self.num_classes));
        }
        if self.class_profiles.len() != self.num_classes {
            return bad(format!("{} class profiles for {} classes", self.class_profiles.len(), self.num_classes));
        }
        if self.n_agents == 0 || self.weeks_per_agent == 0 {
            return bad("need at least one agent and one week".into());
        }
        if self.sampling_period_s <= 0 {
            return bad("sampling period must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.schedule_noise) {
            return bad(format!("schedule_noise {} outside [0, 1]", self.schedule_noise));
        }
        if !(self.price_min > 0.0 && self.price_min < self.price_max) {
            return bad("need 0 < price_min < price_max".into());
        }
        for (c, p) in self.class_profiles.iter().enumerate() {
            let sum: f64 = p.activity_mix.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("class {c} activity mix sums to {sum}"));
            }
            if p.activity_mix[PoiCategory::Residence.code() as usize] > 0.0
                || p.activity_mix[PoiCategory::Working.code() as usize] > 0.0
            {
                return bad(format!("class {c} activity mix may not include residence or working"));
            }
        }
        let slots = self.venue_slots().len();
        let max_anchors = self.class_profiles.iter().map(|p| p.n_anchor_locations).max().unwrap_or(0);
        if slots < 2 * self.n_agents + 2 * LEISURE.len() + max_anchors {
            return bad(format!("grid fits {slots} venues, too few for {} agents", self.n_agents));
        }
        Ok(())
    }

    fn class_width(&self) -> f64 {
        (self.price_max - self.price_min) / self.num_classes as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Venue {
    pub cell: CellId,
    pub point: GeoPoint,
    pub category: PoiCategory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: String,
    pub index: usize,
    pub label: ClassLabel,
    pub home: usize,
    pub work: usize,
    pub anchors: Vec<usize>,
    pub home_price: f64,
}

impl Agent {
    pub fn home_cell(&self, world: &World) -> CellId {
        world.venues[self.home].cell
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub venues: Vec<Venue>,
    pub agents: Vec<Agent>,
    pub pois: Vec<PoiRecord>,
    pub prices: Vec<PriceRecord>,
}

fn agent_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Venue of `category` whose distance from `from` is closest to `target_m`,
/// excluding `taken`.
fn venue_near(venues: &[Venue], from: GeoPoint, target_m: f64, category: PoiCategory, taken: &[usize]) -> Option<usize> {
    venues
        .iter()
        .enumerate()
        .filter(|(i, v)| v.category == category && !taken.contains(i))
        .map(|(i, v)| (i, (haversine_m(from, v.point) - target_m).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

pub fn generate_world(cfg: &WorldConfig) -> Result<World, SynthError> {
    cfg.validate()?;
    let mut rng = agent_rng(cfg.seed, 0);
    let grid = &cfg.grid;
    let mut slots = cfg.venue_slots();
    slots.shuffle(&mut rng);

    // homes first, then 30% of the remaining slots as workplaces
    let n_work = ((slots.len() - cfg.n_agents) * 3 / 10).max(1);
    let mut venues = Vec::with_capacity(slots.len());
    for (k, &cell) in slots.iter().enumerate() {
        let category = if k < cfg.n_agents {
            PoiCategory::Residence
        } else if k < cfg.n_agents + n_work {
            PoiCategory::Working
        } else {
            LEISURE[(k - cfg.n_agents - n_work) % LEISURE.len()]
        };
        let c = grid.cell_center(cell);
        let half = 0.3 * grid.cell_size_m;
        let point = c.offset_m(rng.random_range(-half..half), rng.random_range(-half..half));
        venues.push(Venue { cell, point, category });
    }

    let mut pois = Vec::new();
    for (k, v) in venues.iter().enumerate() {
        for j in 0..3 {
            let p = v.point.offset_m(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            pois.push(poi(format!("v{k}_{j}"), v.category, p));
        }
        // spill one POI into two of the ring cells
        let ring: Vec<CellId> = grid
            .neighborhood(v.cell, crate::geo::Neighborhood::RingOnly)
            .into_iter()
            .collect();
        for (j, cell) in ring.choose_multiple(&mut rng, 2).enumerate() {
            pois.push(poi(format!("v{k}_r{j}"), v.category, grid.cell_center(*cell)));
        }
    }

    let mut agents = Vec::with_capacity(cfg.n_agents);
    let mut prices = Vec::with_capacity(cfg.n_agents);
    for i in 0..cfg.n_agents {
        let class = i % cfg.num_classes;
        let prof = &cfg.class_profiles[class];
        let home = i;
        let hp = venues[home].point;
        let work = venue_near(&venues, hp, prof.rg_scale_m * rng.random_range(0.7..1.3), PoiCategory::Working, &[])
            .expect("validated venue count");
        let mut anchors: Vec<usize> = Vec::with_capacity(prof.n_anchor_locations);
        let weights: Vec<(PoiCategory, f64)> = LEISURE.iter().map(|&c| (c, prof.activity_mix[c.code() as usize])).collect();
        for _ in 0..prof.n_anchor_locations {
            let cat = weights.choose_weighted(&mut rng, |w| w.1).expect("positive mix").0;
            let d = prof.rg_scale_m * rng.random_range(0.4..1.2);
            if let Some(v) = venue_near(&venues, hp, d, cat, &anchors) {
                anchors.push(v);
            }
        }
        let home_price = rng.random_range(prof.price_band.0..prof.price_band.1);
        let label = ClassLabel {
            class_index: class,
            num_classes: cfg.num_classes,
        };
        prices.push(PriceRecord {
            name: format!("house_{i:04}"),
            price: home_price,
            point: grid.cell_center(venues[home].cell),
        });
        agents.push(Agent {
            id: format!("agent_{i:04}"),
            index: i,
            label,
            home,
            work,
            anchors,
            home_price,
        });
    }
    debug_assert!(agents
        .iter()
        .all(|a| ((a.home_price - cfg.price_min) / cfg.class_width()) as usize == a.label.class_index));
    Ok(World {
        config: cfg.clone(),
        venues,
        agents,
        pois,
        prices,
    })
}

fn poi(name: String, category: PoiCategory, point: GeoPoint) -> PoiRecord {
    PoiRecord { name, category, point }
}

/// A dwell at `at` over `[from, to)`.
#[derive(Debug, Clone, Copy)]
struct Visit {
    at: GeoPoint,
    from: i64,
    to: i64,
}

struct DayPlanner<'a> {
    world: &'a World,
    agent: &'a Agent,
    prof: &'a ClassProfile,
    noise: f64,
}

impl DayPlanner<'_> {
    fn travel_s(&self, a: GeoPoint, b: GeoPoint) -> i64 {
        (haversine_m(a, b) / self.world.config.speed_mps).ceil() as i64 + 5 * MINUTE
    }

    fn jitter<R: Rng>(&self, rng: &mut R, scale: f64) -> i64 {
        let n = Normal::new(0.0, self.prof.time_jitter_s * scale).expect("finite sigma");
        n.sample(rng).round() as i64
    }

    fn extra_count<R: Rng>(&self, rng: &mut R, base: f64) -> usize {
        let whole = base.floor();
        whole as usize + usize::from(rng.random::<f64>() < base - whole)
    }

    /// Visits away from home for one day starting at local midnight `day0`.
    fn plan<R: Rng>(&self, rng: &mut R, day0: i64, weekend: bool) -> Vec<Visit> {
        let v = &self.world.venues;
        let home = v[self.agent.home].point;
        let noisy = rng.random::<f64>() < self.noise;
        let scale = if noisy { 2.0 } else { 1.0 };
        let mut stops: Vec<(GeoPoint, i64)> = Vec::new();
        let (leave_h, first_dwell) = if weekend {
            (10, None)
        } else {
            let end = 18 * SECONDS_PER_HOUR + self.jitter(rng, scale);
            (8, Some(end))
        };
        let leave = (leave_h * SECONDS_PER_HOUR + self.jitter(rng, scale)).clamp(6 * SECONDS_PER_HOUR, 11 * SECONDS_PER_HOUR);
        let extras = self.extra_count(rng, self.prof.extra_stops + if weekend { 1.0 } else { 0.0 });
        for _ in 0..extras {
            if let Some(&a) = self.agent.anchors.choose(rng) {
                stops.push((v[a].point, rng.random_range(110..=150) * MINUTE));
            }
        }
        if noisy {
            let stray = v
                .iter()
                .filter(|x| x.category != PoiCategory::Residence)
                .collect::<Vec<_>>()
                .choose(rng)
                .map(|x| x.point)
                .expect("leisure venues exist");
            let at = rng.random_range(0..=stops.len());
            stops.insert(at, (stray, rng.random_range(110..=150) * MINUTE));
        }
        let mut visits = Vec::new();
        let mut here = home;
        let mut t = day0 + leave;
        if let Some(end) = first_dwell {
            let work = v[self.agent.work].point;
            t += self.travel_s(here, work);
            let until = (day0 + end).max(t + 6 * SECONDS_PER_HOUR);
            visits.push(Visit { at: work, from: t, to: until });
            here = work;
            t = until;
        }
        let latest = day0 + 23 * SECONDS_PER_HOUR + 30 * MINUTE;
        for (at, dwell) in stops {
            let arrive = t + self.travel_s(here, at);
            if arrive + dwell + self.travel_s(at, home) > latest {
                break;
            }
            visits.push(Visit { at, from: arrive, to: arrive + dwell });
            here = at;
            t = arrive + dwell;
        }
        visits
    }
}

/// One agent's full sampled trajectory.
pub fn agent_trajectory(world: &World, agent: &Agent) -> UserTrajectory {
    let cfg = &world.config;
    let mut rng = agent_rng(cfg.seed, 1 + agent.index as u64);
    let prof = &cfg.class_profiles[agent.label.class_index];
    let planner = DayPlanner {
        world,
        agent,
        prof,
        noise: (cfg.schedule_noise * prof.schedule_noise).min(1.0),
    };
    let home = world.venues[agent.home].point;
    let start = cfg.start_week;
    let end = start + cfg.weeks_per_agent as i64 * 7 * SECONDS_PER_DAY;

    // home stays are open-ended until the next departure is known
    let mut stitched = vec![Visit { at: home, from: start, to: end }];
    for day in 0..cfg.weeks_per_agent as i64 * 7 {
        let day0 = start + day * SECONDS_PER_DAY;
        let away = planner.plan(&mut rng, day0, cfg.tz.is_weekend(day0));
        let Some(last) = away.last().copied() else {
            continue;
        };
        let at_home = stitched.last_mut().expect("starts at home");
        at_home.to = (away[0].from - planner.travel_s(home, away[0].at)).max(at_home.from);
        stitched.extend(away);
        let back = last.to + planner.travel_s(last.at, home);
        stitched.push(Visit { at: home, from: back, to: end });
    }

    let jitter = Normal::new(0.0, cfg.gps_sigma_m).expect("finite sigma");
    let mut records = Vec::with_capacity(((end - start) / cfg.sampling_period_s) as usize);
    let mut k = 0;
    let mut ts = start;
    while ts < end {
        while k + 1 < stitched.len() && ts >= stitched[k + 1].from {
            k += 1;
        }
        let v = stitched[k];
        let base = if ts < v.to || k + 1 >= stitched.len() {
            v.at
        } else {
            // in transit from v to the next visit
            let next = stitched[k + 1];
            let f = (ts - v.to) as f64 / (next.from - v.to).max(1) as f64;
            lerp_point(v.at, next.at, f.clamp(0.0, 1.0))
        };
        let p = base.offset_m(jitter.sample(&mut rng), jitter.sample(&mut rng));
        records.push(TrajectoryRecord { point: p, ts });
        ts += cfg.sampling_period_s;
    }
    UserTrajectory {
        user_id: agent.id.clone(),
        records,
    }
}

fn lerp_point(a: GeoPoint, b: GeoPoint, f: f64) -> GeoPoint {
    GeoPoint {
        lat: lerp(a.lat, b.lat, f),
        lon: lerp(a.lon, b.lon, f),
    }
}

/// Trajectories for every agent, in agent order.
pub fn generate_trajectories(world: &World, exec: Execution) -> Vec<UserTrajectory> {
    parallel::map(exec, &world.agents, |a| agent_trajectory(world, a))
}

pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const TRAJECTORY_FILE: &str = "trajectories.csv";
pub const POI_FILE: &str = "pois.csv";
pub const PRICE_FILE: &str = "prices.csv";

pub fn write_ground_truth<W: Write>(w: W, world: &World) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["user_id", "class"])?;
    for a in &world.agents {
        out.write_record([a.id.clone(), a.label.class_index.to_string()])?;
    }
    out.flush()
}

/// Writes the four world files into `dir`, creating it if needed.
pub fn write_world(dir: impl AsRef<Path>, world: &World, trajectories: &[UserTrajectory]) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let open = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
    ingest::write_trajectories(open(TRAJECTORY_FILE)?, trajectories)?;
    ingest::write_pois(open(POI_FILE)?, &world.pois)?;
    ingest::write_prices(open(PRICE_FILE)?, &world.prices)?;
    write_ground_truth(open(GROUND_TRUTH_FILE)?, world)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activity::{ActivityCategory, PoiIndex};
    use crate::geo::Neighborhood;
    use crate::indicators::radius_of_gyration;
    use crate::preprocess::{derive_label, detect_stay_points, filter_noise, infer_home, price_at, HomeWeighting, NightWindow};

    fn small(noise: f64, seed: u64) -> WorldConfig {
        let mut c = WorldConfig::new(12, 1, 2, noise, seed);
        c.grid.rows = 60;
        c.grid.cols = 60;
        c
    }

    #[test]
    fn profiles_are_ordered_and_valid() {
        let c = WorldConfig::new(10, 1, 4, 0.1, 0);
        c.validate().unwrap();
        for w in c.class_profiles.windows(2) {
            assert!(w[1].rg_scale_m < w[0].rg_scale_m);
            assert!(w[1].extra_stops < w[0].extra_stops);
            assert!(w[1].price_band.0 > w[0].price_band.1);
        }
        let mut bad = c.clone();
        bad.class_profiles[0].activity_mix[0] += 0.5;
        assert!(bad.validate().is_err());
        let mut crowded = small(0.0, 0);
        crowded.n_agents = 400;
        assert!(matches!(generate_world(&crowded), Err(SynthError::Config(_))));
    }

    #[test]
    fn world_is_deterministic_and_priced_by_class() {
        let cfg = small(0.2, 5);
        let w = generate_world(&cfg).unwrap();
        assert_eq!(w, generate_world(&cfg).unwrap());
        let mid = (cfg.price_min + cfg.price_max) / 2.0;
        for a in &w.agents {
            assert_eq!(a.home_price >= mid, a.label.class_index == 1, "{a:?}");
        }
        assert_ne!(w, generate_world(&small(0.2, 6)).unwrap());
    }

    #[test]
    fn home_cells_read_as_residence() {
        let cfg = small(0.0, 1);
        let w = generate_world(&cfg).unwrap();
        let idx = PoiIndex::build(&w.pois, &cfg.grid);
        for a in &w.agents {
            let cat = idx.infer(a.home_cell(&w), &cfg.grid, Neighborhood::WithCenter);
            assert_eq!(cat, ActivityCategory::Poi(PoiCategory::Residence));
            let work = idx.infer(w.venues[a.work].cell, &cfg.grid, Neighborhood::WithCenter);
            assert_eq!(work, ActivityCategory::Poi(PoiCategory::Working));
        }
    }

    #[test]
    fn trajectories_are_regular_and_reproducible() {
        let cfg = small(0.0, 2);
        let w = generate_world(&cfg).unwrap();
        let t = generate_trajectories(&w, Execution::Parallel);
        assert_eq!(t, generate_trajectories(&w, Execution::Sequential));
        for u in &t {
            assert_eq!(u.records.len(), 7 * 1440);
            assert!(u.records.windows(2).all(|p| p[1].ts - p[0].ts == 60));
            // walking/driving only, nothing the noise filter would reject
            assert_eq!(filter_noise(&u.records, 50.0).len(), u.records.len());
        }
    }

    #[test]
    fn noise_free_labels_are_recovered() {
        let cfg = small(0.0, 3);
        let w = generate_world(&cfg).unwrap();
        let trajs = generate_trajectories(&w, Execution::Parallel);
        for (a, u) in w.agents.iter().zip(&trajs) {
            let stays = detect_stay_points(&u.records, 100.0, 5400.0, &cfg.grid);
            // home each night, work each weekday
            assert!(stays.len() >= 2 * 7, "{} stays", stays.len());
            let home = infer_home(&stays, cfg.tz, NightWindow::default(), HomeWeighting::Duration).unwrap();
            assert_eq!(home, a.home_cell(&w));
            let price = price_at(home, &w.prices, &cfg.grid).unwrap();
            let label = derive_label(price, cfg.price_min, cfg.price_max, cfg.num_classes).unwrap();
            assert_eq!(label, a.label);
        }
    }

    #[test]
    fn richer_agents_travel_shorter() {
        let mut cfg = WorldConfig::new(50, 1, 2, 0.1, 4);
        cfg.sampling_period_s = 300;
        let w = generate_world(&cfg).unwrap();
        let trajs = generate_trajectories(&w, Execution::Parallel);
        let mut by_class: [Vec<f64>; 2] = Default::default();
        for (a, u) in w.agents.iter().zip(&trajs) {
            let pts: Vec<GeoPoint> = u.records.iter().map(|r| r.point).collect();
            by_class[a.label.class_index].push(radius_of_gyration(&pts).unwrap());
        }
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var)
        };
        let (m_poor, v_poor) = stats(&by_class[0]);
        let (m_rich, v_rich) = stats(&by_class[1]);
        let pooled = ((v_poor + v_rich) / 2.0).sqrt();
        assert!(m_poor - m_rich >= 2.0 * pooled, "poor {m_poor:.0} rich {m_rich:.0} pooled sd {pooled:.0}");
    }

    #[test]
    fn written_world_round_trips() {
        let cfg = small(0.1, 9);
        let w = generate_world(&cfg).unwrap();
        let t = generate_trajectories(&w, Execution::Parallel);
        let dir = tempfile::tempdir().unwrap();
        write_world(dir.path(), &w, &t).unwrap();
        let back = ingest::parse_trajectories(dir.path().join(TRAJECTORY_FILE)).unwrap();
        assert!(back.malformed.is_empty());
        assert_eq!(back.items, t);
        assert_eq!(ingest::parse_pois(dir.path().join(POI_FILE)).unwrap().items, w.pois);
        assert_eq!(ingest::parse_prices(dir.path().join(PRICE_FILE)).unwrap().items, w.prices);
        let gt = fs::read_to_string(dir.path().join(GROUND_TRUTH_FILE)).unwrap();
        assert_eq!(gt.lines().count(), 1 + cfg.n_agents);
    }
}
