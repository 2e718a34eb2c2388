//! Stage functions from raw CSVs to metrics, shared by the CLI and the
//! end-to-end tests.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::activity::{build_week_events, ActivityCategory, PoiIndex, DAYS_PER_WEEK};
use crate::config::{ConfigError, RunConfig};
use crate::embed::{self, EmbedError, EmbeddingTable};
use crate::eval::{self, EvalError, KMeansConfig, MetricRow};
use crate::geo::{CellId, GridSpec};
use crate::indicators::{week_indicators, IndicatorError, IndicatorSet, Tokenizers};
use crate::ingest::{self, IngestError, PoiRecord, PriceRecord, UserTrajectory};
use crate::model::{
    self, CellVocab, Checkpoint, CheckpointError, DayEvent, DeepSei, EpochLog, LabeledSample, ModelError, TrainError,
};
use crate::parallel::{self, Execution};
use crate::preprocess::{self, ClassLabel, PreprocessError, StayPoint};
use crate::synth;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
    #[error("no usable samples after preprocessing")]
    NoSamples,
}

pub struct RawData {
    pub trajectories: Vec<UserTrajectory>,
    pub pois: Vec<PoiRecord>,
    pub prices: Vec<PriceRecord>,
}

/// Reads the trajectory, POI and price files from `dir`.
pub fn load_raw(dir: impl AsRef<Path>) -> Result<RawData, PipelineError> {
    let dir = dir.as_ref();
    Ok(RawData {
        trajectories: ingest::parse_trajectories(dir.join(synth::TRAJECTORY_FILE))?.items,
        pois: ingest::parse_pois(dir.join(synth::POI_FILE))?.items,
        prices: ingest::parse_prices(dir.join(synth::PRICE_FILE))?.items,
    })
}

/// A stay event before cell tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawEvent {
    pub cell: Option<CellId>,
    pub time_bin: u8,
    pub category: u8,
}

/// One user-week: indicators, day-by-day events and the user's label.
#[derive(Debug, Clone, PartialEq)]
pub struct WeekFeatures {
    pub user_id: String,
    pub week_start: i64,
    pub indicators: IndicatorSet,
    pub days: Vec<Vec<RawEvent>>,
    pub home: CellId,
    pub home_price: f64,
    pub label: ClassLabel,
}

/// A detected stay with its inferred activity, for the stays artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedStay {
    pub user_id: String,
    pub week_start: i64,
    pub stay: StayPoint,
    pub category: ActivityCategory,
    pub time_bin: u8,
}

#[derive(Debug, Clone, Default)]
pub struct Preprocessed {
    pub weeks: Vec<WeekFeatures>,
    pub stays: Vec<TaggedStay>,
    /// Users with no stay overlapping any night window.
    pub homeless_users: Vec<String>,
    /// Weeks skipped for too few records or stays.
    pub dropped_weeks: usize,
}

struct UserResult {
    weeks: Vec<WeekFeatures>,
    stays: Vec<TaggedStay>,
    homeless: bool,
    dropped: usize,
}

fn preprocess_user(
    traj: &UserTrajectory,
    idx: &PoiIndex,
    prices: &[PriceRecord],
    grid: &GridSpec,
    cfg: &RunConfig,
) -> Result<UserResult, PipelineError> {
    let tz = cfg.tz();
    let clean = UserTrajectory {
        user_id: traj.user_id.clone(),
        records: preprocess::filter_noise(&traj.records, cfg.v_max_mps),
    };
    let slices = ingest::segment_weeks(&clean, tz, cfg.min_week_records);
    let week_stays: Vec<Vec<StayPoint>> = slices
        .iter()
        .map(|w| preprocess::detect_stay_points(&w.records, cfg.stay_radius_m, cfg.stay_duration_s, grid))
        .collect();
    let all: Vec<StayPoint> = week_stays.iter().flatten().copied().collect();
    let home = match preprocess::infer_home(&all, tz, cfg.night(), cfg.home_weighting) {
        Ok(h) => h,
        Err(PreprocessError::NoNightActivity) => {
            return Ok(UserResult {
                weeks: Vec::new(),
                stays: Vec::new(),
                homeless: true,
                dropped: slices.len(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let price = preprocess::price_at(home, prices, grid)?;
    let label = preprocess::derive_label(price, cfg.price_min, cfg.price_max, cfg.num_classes)?;
    let mut out = UserResult {
        weeks: Vec::new(),
        stays: Vec::new(),
        homeless: false,
        dropped: 0,
    };
    for (week, stays) in slices.iter().zip(&week_stays) {
        let events = build_week_events(week, stays, idx, grid, tz, cfg.neighborhood);
        for e in events.iter().flatten() {
            out.stays.push(TaggedStay {
                user_id: week.user_id.clone(),
                week_start: week.week_start,
                stay: e.stay,
                category: e.category,
                time_bin: e.time_bin,
            });
        }
        let indicators = match week_indicators(&week.records, stays, cfg.td_mode) {
            Ok(i) => i,
            Err(IndicatorError::TooFewStays(_)) => {
                out.dropped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let days = events
            .iter()
            .map(|d| {
                d.iter()
                    .map(|e| RawEvent {
                        cell: e.stay.cell,
                        time_bin: e.time_bin,
                        category: e.category.code(),
                    })
                    .collect()
            })
            .collect();
        out.weeks.push(WeekFeatures {
            user_id: week.user_id.clone(),
            week_start: week.week_start,
            indicators,
            days,
            home,
            home_price: price,
            label,
        });
    }
    Ok(out)
}

/// Noise filtering, week segmentation, stay detection, home and label
/// inference, activity tagging and indicators for every user.
pub fn preprocess_all(raw: &RawData, cfg: &RunConfig) -> Result<Preprocessed, PipelineError> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    if raw.prices.is_empty() {
        return Err(PreprocessError::EmptyPriceTable.into());
    }
    let idx = PoiIndex::build(&raw.pois, &grid);
    let results = parallel::map(cfg.execution(), &raw.trajectories, |t| {
        preprocess_user(t, &idx, &raw.prices, &grid, cfg)
    });
    let mut out = Preprocessed::default();
    for (t, r) in raw.trajectories.iter().zip(results) {
        let r = r?;
        if r.homeless {
            out.homeless_users.push(t.user_id.clone());
        }
        out.weeks.extend(r.weeks);
        out.stays.extend(r.stays);
        out.dropped_weeks += r.dropped;
    }
    Ok(out)
}

pub fn cell_vocab<'a, I: IntoIterator<Item = &'a WeekFeatures>>(weeks: I) -> CellVocab {
    CellVocab::new(
        weeks
            .into_iter()
            .flat_map(|w| w.days.iter().flatten().filter_map(|e| e.cell)),
    )
}

pub fn to_sample(w: &WeekFeatures, tokenizers: &Tokenizers, cells: &CellVocab) -> LabeledSample {
    LabeledSample {
        user_id: w.user_id.clone(),
        week_start: w.week_start,
        deep_tokens: tokenizers.tokenize(&w.indicators),
        days: w
            .days
            .iter()
            .map(|d| {
                d.iter()
                    .map(|e| DayEvent {
                        cell: cells.token(e.cell),
                        time_bin: e.time_bin,
                        category: e.category,
                    })
                    .collect()
            })
            .collect(),
        label: w.label,
    }
}

/// Skip-gram tables for the three indicator features, trained
/// concurrently on their own corpora.
pub fn pretrain_tables(
    samples: &[LabeledSample],
    vocabs: [usize; 3],
    cfg: &RunConfig,
) -> Result<[EmbeddingTable; 3], PipelineError> {
    let corpora = embed::build_corpus(samples.iter().map(|s| (s.user_id.as_str(), s.week_start, s.deep_tokens)), vocabs);
    let sg = cfg.skipgram_config();
    let tables = parallel::map(cfg.execution(), &corpora, |c| embed::train_skipgram(c, &sg));
    let mut it = tables.into_iter();
    let mut next = || it.next().expect("three corpora");
    Ok([next()?, next()?, next()?])
}

/// Replaces the deep embedding tables with pretrained ones.
pub fn install_tables(model: &mut DeepSei, tables: &[EmbeddingTable; 3]) -> Result<(), PipelineError> {
    for (k, t) in tables.iter().enumerate() {
        if t.weights.shape() != model.params.deep[k].shape() {
            return Err(PipelineError::Format(format!(
                "pretrained table {k} has shape {:?}, model expects {:?}",
                t.weights.shape(),
                model.params.deep[k].shape()
            )));
        }
        model.params.deep[k] = t.weights.clone();
    }
    Ok(())
}

pub struct TrainedRun {
    /// Model after the last joint epoch.
    pub checkpoint: Checkpoint,
    /// Snapshot at the best held-out joint epoch.
    pub best: Option<Checkpoint>,
    pub log: Vec<EpochLog>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Splits `weeks`, builds vocabularies from the training part, optionally
/// pretrains the indicator tables, then runs both pretraining phases and
/// the joint phase.
pub fn train_run(weeks: &[WeekFeatures], cfg: &RunConfig) -> Result<TrainedRun, PipelineError> {
    train_run_with(weeks, cfg, None)
}

/// Skip-gram tables from the training split only, as [`train_run`] would
/// compute them.
pub fn pretrain_from_weeks(weeks: &[WeekFeatures], cfg: &RunConfig) -> Result<[EmbeddingTable; 3], PipelineError> {
    cfg.validate()?;
    let (train_idx, _) = eval::split_indices(weeks.len(), cfg.train_ratio, cfg.seed)?;
    let tokenizers = cfg.tokenizers()?;
    let cells = CellVocab::new([]);
    let train: Vec<LabeledSample> = train_idx.iter().map(|&i| to_sample(&weeks[i], &tokenizers, &cells)).collect();
    pretrain_tables(&train, tokenizers.vocabs(), cfg)
}

/// [`train_run`] with externally supplied indicator tables, which take
/// precedence over the `skipgram` switch.
pub fn train_run_with(
    weeks: &[WeekFeatures],
    cfg: &RunConfig,
    tables: Option<&[EmbeddingTable; 3]>,
) -> Result<TrainedRun, PipelineError> {
    cfg.validate()?;
    if weeks.is_empty() {
        return Err(PipelineError::NoSamples);
    }
    let (train_idx, test_idx) = eval::split_indices(weeks.len(), cfg.train_ratio, cfg.seed)?;
    let tokenizers = cfg.tokenizers()?;
    let cells = cell_vocab(train_idx.iter().map(|&i| &weeks[i]));
    let train: Vec<LabeledSample> = train_idx.iter().map(|&i| to_sample(&weeks[i], &tokenizers, &cells)).collect();
    let test: Vec<LabeledSample> = test_idx.iter().map(|&i| to_sample(&weeks[i], &tokenizers, &cells)).collect();

    let mut model = DeepSei::new(cfg.model_config(tokenizers.vocabs(), cells.size()), cfg.seed)?;
    if model.config.branches.deep() {
        if let Some(t) = tables {
            install_tables(&mut model, t)?;
        } else if cfg.skipgram {
            install_tables(&mut model, &pretrain_tables(&train, tokenizers.vocabs(), cfg)?)?;
        }
    }
    let tc = cfg.train_config();
    let valid = (!test.is_empty()).then_some(test.as_slice());
    let mut log = model::pretrain(&mut model, &train, valid, &tc)?.log;
    let joint = model::train_joint(&mut model, &train, valid, &tc)?;
    log.extend(joint.log);
    let grid = cfg.grid()?;
    let wrap = |m: DeepSei| Checkpoint {
        model: m,
        cells: cells.clone(),
        tokenizers,
        grid,
        run_config: cfg.to_text(),
    };
    let best = joint.best.map(|b| {
        let mut m = model.clone();
        m.params = b.params;
        wrap(m)
    });
    Ok(TrainedRun {
        checkpoint: wrap(model),
        best,
        log,
        train_idx,
        test_idx,
    })
}

pub fn samples_for(ck: &Checkpoint, weeks: &[WeekFeatures]) -> Vec<LabeledSample> {
    weeks.iter().map(|w| to_sample(w, &ck.tokenizers, &ck.cells)).collect()
}

pub fn predict(ck: &Checkpoint, weeks: &[WeekFeatures], exec: Execution) -> Result<Vec<usize>, PipelineError> {
    let samples = samples_for(ck, weeks);
    let preds = parallel::map(exec, &samples, |s| ck.model.predict_one(s));
    Ok(preds.into_iter().collect::<Result<_, _>>()?)
}

pub fn embeddings(ck: &Checkpoint, weeks: &[WeekFeatures], exec: Execution) -> Result<Vec<Vec<f64>>, PipelineError> {
    let samples = samples_for(ck, weeks);
    let out = parallel::map(exec, &samples, |s| ck.model.embedding(s));
    Ok(out.into_iter().collect::<Result<_, _>>()?)
}

/// Held-out accuracy and macro-F1 at the checkpoint's class count.
pub fn classification_metrics(
    ck: &Checkpoint,
    test: &[WeekFeatures],
    exec: Execution,
) -> Result<Vec<MetricRow>, PipelineError> {
    let c = ck.model.config.num_classes;
    let pred = predict(ck, test, exec)?;
    let truth: Vec<usize> = test.iter().map(|w| w.label.class_index).collect();
    Ok(vec![
        MetricRow::new("classification", c, "accuracy", eval::accuracy(&truth, &pred)?),
        MetricRow::new("classification", c, "f1", eval::f1_macro(&truth, &pred, c)?),
    ])
}

/// k-means over the 128-dim embeddings for each `k`, scored against the
/// `k`-class price labels.
pub fn clustering_metrics(
    ck: &Checkpoint,
    weeks: &[WeekFeatures],
    ks: &[usize],
    cfg: &RunConfig,
) -> Result<Vec<MetricRow>, PipelineError> {
    let points = embeddings(ck, weeks, cfg.execution())?;
    let mut rows = Vec::new();
    for &k in ks {
        let truth: Vec<usize> = weeks
            .iter()
            .map(|w| preprocess::derive_label(w.home_price, cfg.price_min, cfg.price_max, k).map(|l| l.class_index))
            .collect::<Result<_, _>>()?;
        let part = eval::kmeans(&points, &KMeansConfig::new(k, cfg.kmeans_seed))?;
        rows.push(MetricRow::new("clustering", k, "ari", eval::normalize01(eval::ari(&truth, &part.assignment)?)?));
        rows.push(MetricRow::new("clustering", k, "ami", eval::normalize01(eval::ami(&truth, &part.assignment)?)?));
    }
    Ok(rows)
}

pub fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Train on `weeks` and report held-out classification plus clustering for
/// `k = 2..=5`.
pub fn train_and_evaluate(weeks: &[WeekFeatures], cfg: &RunConfig) -> Result<(TrainedRun, Vec<MetricRow>), PipelineError> {
    let run = train_run(weeks, cfg)?;
    let test = pick(weeks, &run.test_idx);
    let mut rows = classification_metrics(&run.checkpoint, &test, cfg.execution())?;
    rows.extend(clustering_metrics(&run.checkpoint, weeks, &[2, 3, 4, 5], cfg)?);
    Ok((run, rows))
}

// ---- artifacts ------------------------------------------------------------

pub const HASH_PREFIX: &str = "# config_hash=";

/// Creates `path` and writes the config-hash comment line.
pub fn create_artifact(path: impl AsRef<Path>, hash: &str) -> io::Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{HASH_PREFIX}{hash}")?;
    Ok(w)
}

/// The hash stamped on the first line of an artifact, if any.
pub fn artifact_hash(path: impl AsRef<Path>) -> io::Result<Option<String>> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    Ok(first.trim_end().strip_prefix(HASH_PREFIX).map(str::to_string))
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r)
}

fn encode_days(days: &[Vec<RawEvent>]) -> String {
    let mut parts = Vec::new();
    for (d, evs) in days.iter().enumerate() {
        for e in evs {
            let cell = e.cell.map_or("-".to_string(), |c| format!("{}:{}", c.row, c.col));
            parts.push(format!("{d}/{cell}/{}/{}", e.time_bin, e.category));
        }
    }
    parts.join(" ")
}

fn decode_days(s: &str) -> Result<Vec<Vec<RawEvent>>, PipelineError> {
    let bad = || PipelineError::Format(format!("bad event list {s:?}"));
    let mut days = vec![Vec::new(); DAYS_PER_WEEK];
    for tok in s.split_whitespace() {
        let f: Vec<&str> = tok.split('/').collect();
        let [d, cell, bin, cat] = f[..] else { return Err(bad()) };
        let d: usize = d.parse().map_err(|_| bad())?;
        let cell = match cell {
            "-" => None,
            rc => {
                let (r, c) = rc.split_once(':').ok_or_else(bad)?;
                Some(CellId::new(r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
            }
        };
        let ev = RawEvent {
            cell,
            time_bin: bin.parse().map_err(|_| bad())?,
            category: cat.parse().map_err(|_| bad())?,
        };
        days.get_mut(d).ok_or_else(bad)?.push(ev);
    }
    Ok(days)
}

const WEEK_HEADER: [&str; 11] = [
    "user_id",
    "week_start",
    "rg",
    "td",
    "ad",
    "home_row",
    "home_col",
    "price",
    "class",
    "num_classes",
    "events",
];

/// Week features as CSV. With `tokenizers`, three token columns follow.
pub fn write_weeks<W: Write>(w: W, weeks: &[WeekFeatures], tokenizers: Option<&Tokenizers>) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = WEEK_HEADER.to_vec();
    if tokenizers.is_some() {
        header.extend(["rg_tok", "td_tok", "ad_tok"]);
    }
    out.write_record(&header)?;
    for wk in weeks {
        let mut row = vec![
            wk.user_id.clone(),
            wk.week_start.to_string(),
            wk.indicators.rg.to_string(),
            wk.indicators.td.to_string(),
            wk.indicators.ad.to_string(),
            wk.home.row.to_string(),
            wk.home.col.to_string(),
            wk.home_price.to_string(),
            wk.label.class_index.to_string(),
            wk.label.num_classes.to_string(),
            encode_days(&wk.days),
        ];
        if let Some(t) = tokenizers {
            row.extend(t.tokenize(&wk.indicators).iter().map(|x| x.to_string()));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_weeks<R: Read>(r: R) -> Result<Vec<WeekFeatures>, PipelineError> {
    let mut rd = csv_reader(r);
    let header = rd.headers()?.clone();
    if header.len() < WEEK_HEADER.len() || header.iter().zip(WEEK_HEADER).any(|(a, b)| a != b) {
        return Err(PipelineError::Format(format!("unexpected week header {header:?}")));
    }
    let mut out = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| PipelineError::Format(format!("row {}: bad {col}", n + 1));
        let f = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| f(i).parse::<f64>().map_err(|_| bad(WEEK_HEADER[i]));
        let int = |i: usize| f(i).parse::<u64>().map_err(|_| bad(WEEK_HEADER[i]));
        out.push(WeekFeatures {
            user_id: f(0).to_string(),
            week_start: f(1).parse().map_err(|_| bad("week_start"))?,
            indicators: IndicatorSet {
                rg: num(2)?,
                td: num(3)?,
                ad: num(4)?,
            },
            home: CellId::new(int(5)? as u32, int(6)? as u32),
            home_price: num(7)?,
            label: ClassLabel {
                class_index: int(8)? as usize,
                num_classes: int(9)? as usize,
            },
            days: decode_days(f(10))?,
        });
    }
    Ok(out)
}

pub fn write_stays<W: Write>(w: W, stays: &[TaggedStay]) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "user_id", "week_start", "arrival_ts", "departure_ts", "lat", "lon", "row", "col", "category", "time_bin",
    ])?;
    for s in stays {
        let (r, c) = s
            .stay
            .cell
            .map_or((String::new(), String::new()), |c| (c.row.to_string(), c.col.to_string()));
        out.write_record([
            s.user_id.clone(),
            s.week_start.to_string(),
            s.stay.arrival_ts.to_string(),
            s.stay.departure_ts.to_string(),
            s.stay.centroid.lat.to_string(),
            s.stay.centroid.lon.to_string(),
            r,
            c,
            s.category.name().to_string(),
            s.time_bin.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One row per labelled user.
pub fn write_labels<W: Write>(w: W, weeks: &[WeekFeatures]) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["user_id", "home_row", "home_col", "price", "class"])?;
    let mut last: Option<&str> = None;
    for wk in weeks {
        if last == Some(wk.user_id.as_str()) {
            continue;
        }
        last = Some(&wk.user_id);
        out.write_record([
            wk.user_id.clone(),
            wk.home.row.to_string(),
            wk.home.col.to_string(),
            wk.home_price.to_string(),
            wk.label.class_index.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_tables<W: Write>(w: W, tables: &[EmbeddingTable; 3]) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    let dim = tables[0].dim();
    let mut header = vec!["feature".to_string(), "token".to_string()];
    header.extend((0..dim).map(|i| format!("v{i}")));
    out.write_record(&header)?;
    for (name, t) in ["rg", "td", "ad"].iter().zip(tables) {
        for tok in 0..t.vocab() {
            let mut row = vec![name.to_string(), tok.to_string()];
            row.extend(t.vector(tok as u32).iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_tables<R: Read>(r: R) -> Result<[EmbeddingTable; 3], PipelineError> {
    let mut rd = csv_reader(r);
    let mut rows: [Vec<Vec<f64>>; 3] = Default::default();
    for rec in rd.records() {
        let rec = rec?;
        let k = match rec.get(0) {
            Some("rg") => 0,
            Some("td") => 1,
            Some("ad") => 2,
            other => return Err(PipelineError::Format(format!("unknown feature {other:?}"))),
        };
        let v: Vec<f64> = rec
            .iter()
            .skip(2)
            .map(|x| x.parse().map_err(|_| PipelineError::Format(format!("bad value {x:?}"))))
            .collect::<Result<_, _>>()?;
        rows[k].push(v);
    }
    let build = |rows: &Vec<Vec<f64>>| -> Result<EmbeddingTable, PipelineError> {
        let dim = rows.first().map_or(0, |r| r.len());
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        let weights = crate::nn::Tensor::from_vec(&[rows.len(), dim], data)
            .map_err(|e| PipelineError::Format(e.to_string()))?;
        Ok(EmbeddingTable { weights })
    };
    Ok([build(&rows[0])?, build(&rows[1])?, build(&rows[2])?])
}

pub fn write_log<W: Write>(w: W, log: &[EpochLog]) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["phase", "epoch", "loss", "valid_f1"])?;
    for l in log {
        out.write_record([
            l.phase.name().to_string(),
            l.epoch.to_string(),
            format!("{:.6}", l.loss),
            l.valid_f1.map_or(String::new(), |f| format!("{f:.6}")),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_split<W: Write>(w: W, weeks: &[WeekFeatures], train_idx: &[usize], test_idx: &[usize]) -> Result<(), PipelineError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["user_id", "week_start", "split"])?;
    let mut rows: Vec<(usize, &str)> = train_idx.iter().map(|&i| (i, "train")).collect();
    rows.extend(test_idx.iter().map(|&i| (i, "test")));
    rows.sort();
    for (i, split) in rows {
        out.write_record([weeks[i].user_id.as_str(), &weeks[i].week_start.to_string(), split])?;
    }
    out.flush()?;
    Ok(())
}

/// `(user_id, week_start)` keys of the test rows of a split file.
pub fn read_test_keys<R: Read>(r: R) -> Result<Vec<(String, i64)>, PipelineError> {
    let mut rd = csv_reader(r);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.get(2) == Some("test") {
            let ws = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| PipelineError::Format("bad split row".into()))?;
            out.push((rec.get(0).unwrap_or("").to_string(), ws));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_trajectories, generate_world, WorldConfig};

    fn tiny_world() -> (RawData, RunConfig) {
        let mut wc = WorldConfig::new(8, 2, 2, 0.0, 3);
        wc.grid.rows = 60;
        wc.grid.cols = 60;
        wc.sampling_period_s = 120;
        let world = generate_world(&wc).unwrap();
        let raw = RawData {
            trajectories: generate_trajectories(&world, Execution::Parallel),
            pois: world.pois.clone(),
            prices: world.prices.clone(),
        };
        let cfg = RunConfig {
            rows: 60,
            cols: 60,
            ..RunConfig::default()
        };
        (raw, cfg)
    }

    #[test]
    fn preprocessing_yields_labelled_weeks() {
        let (raw, cfg) = tiny_world();
        let p = preprocess_all(&raw, &cfg).unwrap();
        assert!(p.homeless_users.is_empty());
        assert_eq!(p.weeks.len(), 16, "dropped {}", p.dropped_weeks);
        for w in &p.weeks {
            assert_eq!(w.days.len(), 7);
            assert!(w.days.iter().all(|d| !d.is_empty()));
            let n: usize = w.user_id[6..].parse().unwrap();
            assert_eq!(w.label.class_index, n % 2);
        }
    }

    #[test]
    fn week_csv_round_trip() {
        let (raw, cfg) = tiny_world();
        let weeks = preprocess_all(&raw, &cfg).unwrap().weeks;
        let mut buf = Vec::new();
        write_weeks(&mut buf, &weeks, Some(&cfg.tokenizers().unwrap())).unwrap();
        assert_eq!(read_weeks(buf.as_slice()).unwrap(), weeks);
        let mut plain = Vec::new();
        write_weeks(&mut plain, &weeks, None).unwrap();
        assert_eq!(read_weeks(plain.as_slice()).unwrap(), weeks);
    }

    #[test]
    fn events_encode_off_grid_cells() {
        let mut days = vec![Vec::new(); 7];
        days[6].push(RawEvent {
            cell: None,
            time_bin: 47,
            category: 11,
        });
        days[0].push(RawEvent {
            cell: Some(CellId::new(3, 4)),
            time_bin: 0,
            category: 0,
        });
        let s = encode_days(&days);
        assert_eq!(s, "0/3:4/0/0 6/-/47/11");
        assert_eq!(decode_days(&s).unwrap(), days);
        assert!(decode_days("9/-/1/1").is_err());
    }
}
