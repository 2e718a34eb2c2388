use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{
    Branches, DeepSei, Head, LabeledSample, ModelError, Params, DEEP_HEAD, DEEP_TABLES, JOINT_HEAD, RECURRENT_BODY,
    RECURRENT_HEAD,
};
use crate::eval;
use crate::nn::{AdamConfig, AdamState, Tensor};
use crate::parallel::{self, Execution};

/// Samples per gradient work unit. Fixed so the summation order, and
/// therefore every bit of the result, does not depend on thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss in {phase} epoch {epoch}")]
    NonFinite { phase: &'static str, epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Epochs for each of the two pretraining phases.
    pub pretrain_epochs: usize,
    pub joint_epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            pretrain_epochs: 50,
            joint_epochs: 50,
            lr: 0.001,
            batch: 32,
            seed: 0,
            exec: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.pretrain_epochs == 0 || self.joint_epochs == 0 {
            return Err(TrainError::Config("epochs must be positive".into()));
        }
        if self.batch == 0 {
            return Err(TrainError::Config("batch must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Deep,
    Recurrent,
    Joint,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Deep => "pretrain_deep",
            Phase::Recurrent => "pretrain_recurrent",
            Phase::Joint => "joint",
        }
    }

    pub fn head(self) -> Head {
        match self {
            Phase::Deep => Head::Deep,
            Phase::Recurrent => Head::Recurrent,
            Phase::Joint => Head::Joint,
        }
    }

    /// Indices into the parameter list that this phase updates.
    pub fn trainable(self, branches: Branches) -> Vec<usize> {
        let mut v = Vec::new();
        match self {
            Phase::Deep => {
                v.extend(DEEP_TABLES);
                v.extend(DEEP_HEAD);
            }
            Phase::Recurrent => {
                v.extend(RECURRENT_BODY);
                v.extend(RECURRENT_HEAD);
            }
            Phase::Joint => {
                if branches.deep() {
                    v.extend(DEEP_TABLES);
                }
                if branches.recurrent() {
                    v.extend(RECURRENT_BODY);
                }
                v.extend(JOINT_HEAD);
            }
        }
        v
    }

    fn salt(self) -> u64 {
        match self {
            Phase::Deep => 0x9e37_79b9_7f4a_7c15,
            Phase::Recurrent => 0xbf58_476d_1ce4_e5b9,
            Phase::Joint => 0x94d0_49bb_1331_11eb,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub phase: Phase,
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub valid_f1: Option<f64>,
}

/// Best held-out snapshot seen during a phase.
#[derive(Debug, Clone, PartialEq)]
pub struct BestSnapshot {
    pub phase: Phase,
    pub epoch: usize,
    pub f1: f64,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub best: Option<BestSnapshot>,
}

impl TrainOutcome {
    fn merge(&mut self, other: TrainOutcome) {
        self.log.extend(other.log);
        if let Some(b) = other.best {
            self.best = Some(b);
        }
    }
}

/// Sum of per-sample losses and gradients over `batch`, reduced in chunk
/// order.
fn batch_gradient(
    model: &DeepSei,
    samples: &[LabeledSample],
    batch: &[usize],
    head: Head,
    exec: Execution,
) -> Result<(f64, Params), ModelError> {
    let parts = parallel::map_chunks(exec, batch, GRAD_CHUNK, |chunk| {
        let mut g = Params::zeros(&model.config);
        let mut loss = 0.0;
        for &i in chunk {
            loss += model.loss_and_grad(&samples[i], head, &mut g)?;
        }
        Ok::<_, ModelError>((loss, g))
    });
    let mut parts = parts.into_iter();
    let (mut loss, mut grad) = parts.next().expect("non-empty batch")?;
    for p in parts {
        let (l, g) = p?;
        loss += l;
        grad.add_assign(&g);
    }
    Ok((loss, grad))
}

/// Macro-F1 of `head` over `samples`.
pub fn head_f1(model: &DeepSei, samples: &[LabeledSample], head: Head, exec: Execution) -> Result<f64, ModelError> {
    let pred = parallel::map(exec, samples, |s| model.predict_with(s, head));
    let pred = pred.into_iter().collect::<Result<Vec<_>, _>>()?;
    let truth: Vec<usize> = samples.iter().map(|s| s.label.class_index).collect();
    Ok(eval::f1_macro(&truth, &pred, model.config.num_classes).unwrap_or(0.0))
}

pub fn run_phase(
    model: &mut DeepSei,
    phase: Phase,
    train: &[LabeledSample],
    valid: Option<&[LabeledSample]>,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let head = phase.head();
    let trainable = phase.trainable(model.config.branches);
    let all: Vec<&Tensor> = model.params.tensors().into_iter().collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        trainable.iter().map(|&i| all[i]),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ phase.salt());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut out = TrainOutcome::default();
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let (loss, mut grad) = batch_gradient(model, train, batch, head, cfg.exec)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    phase: phase.name(),
                    epoch,
                });
            }
            epoch_loss += loss;
            grad.scale(1.0 / batch.len() as f64);
            let grads = grad.tensors();
            let g: Vec<&Tensor> = trainable.iter().map(|&i| grads[i]).collect();
            let mut params: Vec<&mut Tensor> = model
                .params
                .tensors_mut()
                .into_iter()
                .enumerate()
                .filter(|(i, _)| trainable.contains(i))
                .map(|(_, t)| t)
                .collect();
            adam.step(&mut params, &g).map_err(ModelError::from)?;
        }
        let valid_f1 = match valid {
            Some(v) if !v.is_empty() => Some(head_f1(model, v, head, cfg.exec)?),
            _ => None,
        };
        if let Some(f1) = valid_f1 {
            if out.best.as_ref().is_none_or(|b| f1 > b.f1) {
                out.best = Some(BestSnapshot {
                    phase,
                    epoch,
                    f1,
                    params: model.params.clone(),
                });
            }
        }
        out.log.push(EpochLog {
            phase,
            epoch,
            loss: epoch_loss / train.len() as f64,
            valid_f1,
        });
    }
    Ok(out)
}

pub fn pretrain_deep(
    model: &mut DeepSei,
    train: &[LabeledSample],
    valid: Option<&[LabeledSample]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    run_phase(model, Phase::Deep, train, valid, cfg.pretrain_epochs, cfg)
}

pub fn pretrain_recurrent(
    model: &mut DeepSei,
    train: &[LabeledSample],
    valid: Option<&[LabeledSample]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    run_phase(model, Phase::Recurrent, train, valid, cfg.pretrain_epochs, cfg)
}

/// Pretrains each enabled branch through its own head, deep first.
pub fn pretrain(
    model: &mut DeepSei,
    train: &[LabeledSample],
    valid: Option<&[LabeledSample]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let mut out = TrainOutcome::default();
    if model.config.branches.deep() {
        out.merge(pretrain_deep(model, train, valid, cfg)?);
    }
    if model.config.branches.recurrent() {
        out.merge(pretrain_recurrent(model, train, valid, cfg)?);
    }
    Ok(out)
}

/// Updates the enabled branches and the joint head together. The
/// returned snapshot is the best held-out epoch; `model` keeps the last.
pub fn train_joint(
    model: &mut DeepSei,
    train: &[LabeledSample],
    valid: Option<&[LabeledSample]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    run_phase(model, Phase::Joint, train, valid, cfg.joint_epochs, cfg)
}
