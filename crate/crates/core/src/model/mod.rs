//! The two-branch classifier.
//!
//! The deep branch embeds the three weekly indicator tokens and
//! concatenates them. The recurrent branch runs a low-level LSTM over each
//! day's stay events and a high-level LSTM across the seven day summaries;
//! each day's low-level LSTM starts from the previous high-level hidden
//! state. A joint softmax head reads both branch outputs.

mod checkpoint;
mod train;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::activity::{DAYS_PER_WEEK, NUM_ACTIVITY_CATEGORIES, NUM_TIME_BINS};
use crate::geo::CellId;
use crate::nn::{self, axpy, Dense, LstmCache, LstmParams, NnError, Tensor};
use crate::preprocess::ClassLabel;

pub use checkpoint::{from_bytes, load, save, to_bytes, Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use train::{
    head_f1, pretrain, pretrain_deep, pretrain_recurrent, run_phase, train_joint, BestSnapshot, EpochLog, Phase,
    TrainConfig, TrainError, TrainOutcome,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("sample has {0} day lists, expected 7")]
    DayCount(usize),
}

/// One stay event fed to the low-level LSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayEvent {
    pub cell: u32,
    pub time_bin: u8,
    pub category: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub user_id: String,
    pub week_start: i64,
    pub deep_tokens: [u32; 3],
    pub days: Vec<Vec<DayEvent>>,
    pub label: ClassLabel,
}

/// Grid cells seen in training, in sorted order. Index `len()` is the
/// shared token for unseen or off-grid cells.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CellVocab {
    cells: Vec<CellId>,
    index: BTreeMap<CellId, u32>,
}

impl CellVocab {
    pub fn new<I: IntoIterator<Item = CellId>>(cells: I) -> Self {
        let mut cells: Vec<CellId> = cells.into_iter().collect();
        cells.sort();
        cells.dedup();
        let index = cells.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
        CellVocab { cells, index }
    }

    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    /// Table size including the unknown token.
    pub fn size(&self) -> usize {
        self.cells.len() + 1
    }

    pub fn unknown(&self) -> u32 {
        self.cells.len() as u32
    }

    pub fn token(&self, cell: Option<CellId>) -> u32 {
        cell.and_then(|c| self.index.get(&c).copied()).unwrap_or_else(|| self.unknown())
    }
}

/// Which branches feed the joint head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Branches {
    #[default]
    Both,
    DeepOnly,
    RecurrentOnly,
}

impl Branches {
    pub fn deep(self) -> bool {
        self != Branches::RecurrentOnly
    }

    pub fn recurrent(self) -> bool {
        self != Branches::DeepOnly
    }

    pub fn name(self) -> &'static str {
        match self {
            Branches::Both => "both",
            Branches::DeepOnly => "deep_only",
            Branches::RecurrentOnly => "recurrent_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Branches::Both, Branches::DeepOnly, Branches::RecurrentOnly]
            .into_iter()
            .find(|b| b.name() == s)
    }
}

/// Layer widths and table sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Shared by both LSTM levels: the high-level state seeds the low level.
    pub hidden_dim: usize,
    pub recurrent_out: usize,
    pub num_classes: usize,
    pub deep_vocabs: [usize; 3],
    pub cell_vocab: usize,
    pub branches: Branches,
}

impl ModelConfig {
    pub fn new(num_classes: usize, deep_vocabs: [usize; 3], cell_vocab: usize) -> Self {
        ModelConfig {
            embed_dim: 32,
            hidden_dim: 64,
            recurrent_out: 32,
            num_classes,
            deep_vocabs,
            cell_vocab,
            branches: Branches::Both,
        }
    }

    pub fn deep_dim(&self) -> usize {
        3 * self.embed_dim
    }

    pub fn event_dim(&self) -> usize {
        3 * self.embed_dim
    }

    pub fn joint_dim(&self) -> usize {
        self.deep_dim() + self.recurrent_out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.recurrent_out == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(crate::preprocess::MIN_CLASSES..=crate::preprocess::MAX_CLASSES).contains(&self.num_classes) {
            return bad(format!("num_classes {} outside [2, 5]", self.num_classes));
        }
        if self.deep_vocabs.contains(&0) || self.cell_vocab == 0 {
            return bad("vocabularies must be non-empty".into());
        }
        Ok(())
    }
}

pub const TENSOR_NAMES: [&str; 20] = [
    "deep.rg",
    "deep.td",
    "deep.ad",
    "rec.cell",
    "rec.time",
    "rec.category",
    "low.w",
    "low.u",
    "low.b",
    "high.w",
    "high.u",
    "high.b",
    "rec_proj.w",
    "rec_proj.b",
    "deep_head.w",
    "deep_head.b",
    "rec_head.w",
    "rec_head.b",
    "joint_head.w",
    "joint_head.b",
];

pub(crate) const DEEP_TABLES: [usize; 3] = [0, 1, 2];
pub(crate) const RECURRENT_BODY: [usize; 11] = [3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13];
pub(crate) const DEEP_HEAD: [usize; 2] = [14, 15];
pub(crate) const RECURRENT_HEAD: [usize; 2] = [16, 17];
pub(crate) const JOINT_HEAD: [usize; 2] = [18, 19];

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub deep: [Tensor; 3],
    pub cell: Tensor,
    pub time: Tensor,
    pub category: Tensor,
    pub low: LstmParams,
    pub high: LstmParams,
    pub rec_proj: Dense,
    pub deep_head: Dense,
    pub rec_head: Dense,
    pub joint_head: Dense,
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let e = cfg.embed_dim;
        Params {
            deep: cfg.deep_vocabs.map(|v| Tensor::zeros(&[v, e])),
            cell: Tensor::zeros(&[cfg.cell_vocab, e]),
            time: Tensor::zeros(&[NUM_TIME_BINS, e]),
            category: Tensor::zeros(&[NUM_ACTIVITY_CATEGORIES, e]),
            low: LstmParams::zeros(cfg.event_dim(), cfg.hidden_dim),
            high: LstmParams::zeros(cfg.hidden_dim, cfg.hidden_dim),
            rec_proj: Dense::zeros(cfg.hidden_dim, cfg.recurrent_out),
            deep_head: Dense::zeros(cfg.deep_dim(), cfg.num_classes),
            rec_head: Dense::zeros(cfg.recurrent_out, cfg.num_classes),
            joint_head: Dense::zeros(cfg.joint_dim(), cfg.num_classes),
        }
    }

    /// Embedding tables standard normal; dense and LSTM layers uniform in
    /// `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let e = cfg.embed_dim;
        let mut normal = |rows: usize| {
            let n = Normal::new(0.0, 1.0).expect("unit normal");
            let data = (0..rows * e).map(|_| n.sample(rng)).collect();
            Tensor::from_vec(&[rows, e], data).expect("table shape")
        };
        let deep = [normal(cfg.deep_vocabs[0]), normal(cfg.deep_vocabs[1]), normal(cfg.deep_vocabs[2])];
        let cell = normal(cfg.cell_vocab);
        let time = normal(NUM_TIME_BINS);
        let category = normal(NUM_ACTIVITY_CATEGORIES);
        Params {
            deep,
            cell,
            time,
            category,
            low: LstmParams::init(cfg.event_dim(), cfg.hidden_dim, rng),
            high: LstmParams::init(cfg.hidden_dim, cfg.hidden_dim, rng),
            rec_proj: Dense::init(cfg.hidden_dim, cfg.recurrent_out, rng),
            deep_head: Dense::init(cfg.deep_dim(), cfg.num_classes, rng),
            rec_head: Dense::init(cfg.recurrent_out, cfg.num_classes, rng),
            joint_head: Dense::init(cfg.joint_dim(), cfg.num_classes, rng),
        }
    }

    /// Tensors in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor; 20] {
        [
            &self.deep[0],
            &self.deep[1],
            &self.deep[2],
            &self.cell,
            &self.time,
            &self.category,
            &self.low.w,
            &self.low.u,
            &self.low.b,
            &self.high.w,
            &self.high.u,
            &self.high.b,
            &self.rec_proj.w,
            &self.rec_proj.b,
            &self.deep_head.w,
            &self.deep_head.b,
            &self.rec_head.w,
            &self.rec_head.b,
            &self.joint_head.w,
            &self.joint_head.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 20] {
        let [d0, d1, d2] = &mut self.deep;
        [
            d0,
            d1,
            d2,
            &mut self.cell,
            &mut self.time,
            &mut self.category,
            &mut self.low.w,
            &mut self.low.u,
            &mut self.low.b,
            &mut self.high.w,
            &mut self.high.u,
            &mut self.high.b,
            &mut self.rec_proj.w,
            &mut self.rec_proj.b,
            &mut self.deep_head.w,
            &mut self.deep_head.b,
            &mut self.rec_head.w,
            &mut self.rec_head.b,
            &mut self.joint_head.w,
            &mut self.joint_head.b,
        ]
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.scale(k);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

/// Which softmax head a loss is taken through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Deep,
    Recurrent,
    Joint,
}

/// Intermediate values of one recurrent-branch pass.
#[derive(Debug, Clone)]
pub struct RecurrentTrace {
    /// Per day, one cache per event.
    pub low: Vec<Vec<LstmCache>>,
    pub high: Vec<LstmCache>,
    pub output: Vec<f64>,
}

impl RecurrentTrace {
    pub fn final_hidden(&self) -> &[f64] {
        &self.high.last().expect("seven days").h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepSei {
    pub config: ModelConfig,
    pub params: Params,
}

impl DeepSei {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&config, &mut rng);
        Ok(DeepSei { config, params })
    }

    pub fn with_params(config: ModelConfig, params: Params) -> Result<Self, ModelError> {
        config.validate()?;
        let expect = Params::zeros(&config);
        for ((name, a), b) in TENSOR_NAMES.iter().zip(params.tensors()).zip(expect.tensors()) {
            if a.shape() != b.shape() {
                return Err(ModelError::Config(format!(
                    "{name} has shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(DeepSei { config, params })
    }

    fn check_sample(&self, s: &LabeledSample) -> Result<(), ModelError> {
        if s.days.len() != DAYS_PER_WEEK {
            return Err(ModelError::DayCount(s.days.len()));
        }
        for (k, &t) in s.deep_tokens.iter().enumerate() {
            if t as usize >= self.config.deep_vocabs[k] {
                return Err(NnError::TokenOutOfRange {
                    token: t as usize,
                    vocab: self.config.deep_vocabs[k],
                }
                .into());
            }
        }
        for ev in s.days.iter().flatten() {
            let checks = [
                (ev.cell as usize, self.config.cell_vocab),
                (ev.time_bin as usize, NUM_TIME_BINS),
                (ev.category as usize, NUM_ACTIVITY_CATEGORIES),
            ];
            for (token, vocab) in checks {
                if token >= vocab {
                    return Err(NnError::TokenOutOfRange { token, vocab }.into());
                }
            }
        }
        Ok(())
    }

    pub fn encode_deep(&self, s: &LabeledSample) -> Result<Vec<f64>, ModelError> {
        let mut out = Vec::with_capacity(self.config.deep_dim());
        for (k, &t) in s.deep_tokens.iter().enumerate() {
            out.extend_from_slice(nn::embedding_lookup(&self.params.deep[k], t as usize)?);
        }
        Ok(out)
    }

    fn event_input(&self, ev: &DayEvent) -> Vec<f64> {
        let p = &self.params;
        let mut x = Vec::with_capacity(self.config.event_dim());
        x.extend_from_slice(p.cell.row(ev.cell as usize));
        x.extend_from_slice(p.time.row(ev.time_bin as usize));
        x.extend_from_slice(p.category.row(ev.category as usize));
        x
    }

    /// Runs the day/week hierarchy. Tokens must already be validated.
    pub fn trace_recurrent(&self, s: &LabeledSample) -> Result<RecurrentTrace, ModelError> {
        self.check_sample(s)?;
        let h = self.config.hidden_dim;
        let p = &self.params;
        let mut h_high = vec![0.0; h];
        let mut c_high = vec![0.0; h];
        let mut low = Vec::with_capacity(DAYS_PER_WEEK);
        let mut high = Vec::with_capacity(DAYS_PER_WEEK);
        for day in &s.days {
            let mut steps: Vec<LstmCache> = Vec::with_capacity(day.len());
            let zero_c = vec![0.0; h];
            for ev in day {
                let x = self.event_input(ev);
                let step = match steps.last() {
                    None => p.low.step(&x, &h_high, &zero_c)?,
                    Some(prev) => p.low.step(&x, &prev.h, &prev.c)?,
                };
                steps.push(step);
            }
            let summary = steps.last().map_or_else(|| vec![0.0; h], |s| s.h.clone());
            let step = p.high.step(&summary, &h_high, &c_high)?;
            h_high.clone_from(&step.h);
            c_high.clone_from(&step.c);
            low.push(steps);
            high.push(step);
        }
        let output = p.rec_proj.forward(&h_high)?;
        Ok(RecurrentTrace { low, high, output })
    }

    pub fn encode_recurrent(&self, s: &LabeledSample) -> Result<Vec<f64>, ModelError> {
        Ok(self.trace_recurrent(s)?.output)
    }

    /// Branch outputs with ablated branches replaced by zeros.
    fn joint_input(&self, s: &LabeledSample) -> Result<(Vec<f64>, Option<RecurrentTrace>), ModelError> {
        self.check_sample(s)?;
        let b = self.config.branches;
        let mut z = if b.deep() {
            self.encode_deep(s)?
        } else {
            vec![0.0; self.config.deep_dim()]
        };
        let trace = if b.recurrent() {
            let t = self.trace_recurrent(s)?;
            z.extend_from_slice(&t.output);
            Some(t)
        } else {
            z.extend(std::iter::repeat_n(0.0, self.config.recurrent_out));
            None
        };
        Ok((z, trace))
    }

    pub fn logits(&self, s: &LabeledSample, head: Head) -> Result<Vec<f64>, ModelError> {
        let p = &self.params;
        Ok(match head {
            Head::Deep => p.deep_head.forward(&self.encode_deep(s)?)?,
            Head::Recurrent => p.rec_head.forward(&self.encode_recurrent(s)?)?,
            Head::Joint => p.joint_head.forward(&self.joint_input(s)?.0)?,
        })
    }

    /// Class probabilities from the joint head.
    pub fn forward(&self, s: &LabeledSample) -> Result<Vec<f64>, ModelError> {
        Ok(nn::softmax(&self.logits(s, Head::Joint)?))
    }

    pub fn predict_one(&self, s: &LabeledSample) -> Result<usize, ModelError> {
        Ok(nn::argmax(&self.logits(s, Head::Joint)?))
    }

    pub fn predict_with(&self, s: &LabeledSample, head: Head) -> Result<usize, ModelError> {
        Ok(nn::argmax(&self.logits(s, head)?))
    }

    /// `deep (96) ++ recurrent (32)`, independent of the branch switch.
    pub fn embedding(&self, s: &LabeledSample) -> Result<Vec<f64>, ModelError> {
        let mut z = self.encode_deep(s)?;
        z.extend(self.encode_recurrent(s)?);
        Ok(z)
    }

    /// Cross-entropy through `head`, accumulating parameter gradients into
    /// `grad`. Returns the loss.
    pub fn loss_and_grad(&self, s: &LabeledSample, head: Head, grad: &mut Params) -> Result<f64, ModelError> {
        self.check_sample(s)?;
        let label = s.label.class_index;
        let p = &self.params;
        match head {
            Head::Deep => {
                let z = self.encode_deep(s)?;
                let (loss, dlogits) = nn::softmax_xent(&p.deep_head.forward(&z)?, label)?;
                let mut dz = vec![0.0; z.len()];
                p.deep_head.backward(&z, &dlogits, &mut grad.deep_head, Some(&mut dz));
                self.backward_deep(s, &dz, grad);
                Ok(loss)
            }
            Head::Recurrent => {
                let t = self.trace_recurrent(s)?;
                let (loss, dlogits) = nn::softmax_xent(&p.rec_head.forward(&t.output)?, label)?;
                let mut dr = vec![0.0; t.output.len()];
                p.rec_head.backward(&t.output, &dlogits, &mut grad.rec_head, Some(&mut dr));
                self.backward_recurrent(s, &t, &dr, grad);
                Ok(loss)
            }
            Head::Joint => {
                let (z, trace) = self.joint_input(s)?;
                let (loss, dlogits) = nn::softmax_xent(&p.joint_head.forward(&z)?, label)?;
                let mut dz = vec![0.0; z.len()];
                p.joint_head.backward(&z, &dlogits, &mut grad.joint_head, Some(&mut dz));
                let (dd, dr) = dz.split_at(self.config.deep_dim());
                if self.config.branches.deep() {
                    self.backward_deep(s, dd, grad);
                }
                if let Some(t) = trace {
                    self.backward_recurrent(s, &t, dr, grad);
                }
                Ok(loss)
            }
        }
    }

    fn backward_deep(&self, s: &LabeledSample, dz: &[f64], grad: &mut Params) {
        let e = self.config.embed_dim;
        for (k, &t) in s.deep_tokens.iter().enumerate() {
            axpy(1.0, &dz[k * e..(k + 1) * e], grad.deep[k].row_mut(t as usize));
        }
    }

    fn backward_recurrent(&self, s: &LabeledSample, t: &RecurrentTrace, d_out: &[f64], grad: &mut Params) {
        let h = self.config.hidden_dim;
        let e = self.config.embed_dim;
        let p = &self.params;
        let mut dh = vec![0.0; h];
        p.rec_proj.backward(t.final_hidden(), d_out, &mut grad.rec_proj, Some(&mut dh));
        let mut dc = vec![0.0; h];
        let mut dx = vec![0.0; self.config.event_dim()];
        for j in (0..DAYS_PER_WEEK).rev() {
            let mut d_summary = vec![0.0; h];
            let mut dh_prev = vec![0.0; h];
            let mut dc_prev = vec![0.0; h];
            p.high
                .backward(&t.high[j], &dh, &dc, &mut grad.high, &mut d_summary, &mut dh_prev, &mut dc_prev);
            // an empty day's summary is a constant zero
            let steps = &t.low[j];
            if !steps.is_empty() {
                let mut dh_low = d_summary;
                let mut dc_low = vec![0.0; h];
                for (k, cache) in steps.iter().enumerate().rev() {
                    let mut dh_in = vec![0.0; h];
                    let mut dc_in = vec![0.0; h];
                    dx.fill(0.0);
                    p.low
                        .backward(cache, &dh_low, &dc_low, &mut grad.low, &mut dx, &mut dh_in, &mut dc_in);
                    let ev = &s.days[j][k];
                    axpy(1.0, &dx[..e], grad.cell.row_mut(ev.cell as usize));
                    axpy(1.0, &dx[e..2 * e], grad.time.row_mut(ev.time_bin as usize));
                    axpy(1.0, &dx[2 * e..], grad.category.row_mut(ev.category as usize));
                    dh_low = dh_in;
                    dc_low = dc_in;
                }
                // the first low step started from the previous high state;
                // its cell state was a constant zero
                axpy(1.0, &dh_low, &mut dh_prev);
            }
            dh = dh_prev;
            dc = dc_prev;
        }
    }
}
