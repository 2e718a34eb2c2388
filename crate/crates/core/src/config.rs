//! `key = value` run configuration shared by every pipeline stage.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors so a
//! typo cannot silently fall back to a default. The canonical rendering
//! ([`RunConfig::to_text`]) lists every key in declaration order; its
//! SHA-256 is the config hash stamped into artifacts.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{TzOffset, SECONDS_PER_HOUR};
use crate::embed::SkipGramConfig;
use crate::geo::{GeoPoint, GridSpec, Neighborhood};
use crate::indicators::{RangeTokenizer, TdMode, Tokenizers};
use crate::model::{Branches, ModelConfig, TrainConfig};
use crate::parallel::Execution;
use crate::preprocess::{HomeWeighting, NightWindow, MAX_CLASSES, MIN_CLASSES};
use crate::synth::WorldConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}")]
    BadValue { key: String, value: String },
    #[error("line {0}: expected key=value")]
    Syntax(usize),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

macro_rules! named_enum {
    ($ty:ty { $($variant:path => $name:literal),* $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),* })
            }
        }
        impl FromStr for $ty {
            type Err = ();
            fn from_str(s: &str) -> Result<Self, ()> {
                match s { $($name => Ok($variant),)* _ => Err(()) }
            }
        }
    };
}

named_enum!(HomeWeighting { HomeWeighting::Duration => "duration", HomeWeighting::Count => "count" });
named_enum!(Neighborhood { Neighborhood::WithCenter => "with_center", Neighborhood::RingOnly => "ring_only" });
named_enum!(TdMode { TdMode::PerStay => "per_stay", TdMode::PerCell => "per_cell" });
named_enum!(Branches {
    Branches::Both => "both",
    Branches::DeepOnly => "deep_only",
    Branches::RecurrentOnly => "recurrent_only",
});

macro_rules! run_config {
    ($( $(#[$m:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( $(#[$m])* pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field) ),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                let value = value.trim();
                let bad = || ConfigError::BadValue { key: key.to_string(), value: value.to_string() };
                match key {
                    $( stringify!($field) => self.$field = value.parse().map_err(|_| bad())?, )*
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($field) => Some(self.$field.to_string()), )*
                    _ => None,
                }
            }
        }
    };
}

run_config! {
    origin_lat: f64 = 39.80,
    origin_lon: f64 = 116.20,
    cell_size_m: f64 = 200.0,
    rows: u32 = 120,
    cols: u32 = 120,
    tz_offset_hours: i64 = 8,

    v_max_mps: f64 = 50.0,
    stay_radius_m: f64 = 100.0,
    stay_duration_s: f64 = 5400.0,
    night_start_hour: u32 = 22,
    night_end_hour: u32 = 7,
    home_weighting: HomeWeighting = HomeWeighting::Duration,
    neighborhood: Neighborhood = Neighborhood::WithCenter,
    td_mode: TdMode = TdMode::PerStay,
    /// Weeks with fewer records are dropped.
    min_week_records: usize = 100,

    num_classes: usize = 2,
    price_min: f64 = 10_588.0,
    price_max: f64 = 113_224.0,

    rg_min: f64 = 0.09,
    rg_max: f64 = 8143.3,
    rg_granularity: f64 = 100.0,
    td_min: f64 = 0.0,
    td_max: f64 = 5.73,
    td_granularity: f64 = 0.5,
    ad_min: f64 = 0.02,
    ad_max: f64 = 5.36,
    ad_granularity: f64 = 0.5,

    skipgram: bool = true,
    sg_window: usize = 2,
    sg_negatives: usize = 5,
    sg_epochs: usize = 20,
    sg_lr: f64 = 0.025,

    embed_dim: usize = 32,
    hidden_dim: usize = 64,
    recurrent_out: usize = 32,
    branches: Branches = Branches::Both,

    pretrain_epochs: usize = 50,
    joint_epochs: usize = 50,
    lr: f64 = 0.001,
    batch: usize = 32,
    seed: u64 = 7,
    train_ratio: f64 = 0.7,
    parallel: bool = true,
    kmeans_seed: u64 = 11,

    synth_agents: usize = 100,
    synth_weeks: usize = 4,
    synth_noise: f64 = 0.1,
    synth_seed: u64 = 1,
    synth_sampling_s: i64 = 60,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        c.apply(text)?;
        Ok(c)
    }

    /// Applies `key=value` lines on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax(n + 1))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("declared key")))
            .collect()
    }

    /// First 16 hex digits of SHA-256 over the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn tz(&self) -> TzOffset {
        TzOffset(self.tz_offset_hours * SECONDS_PER_HOUR)
    }

    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(
            GeoPoint {
                lat: self.origin_lat,
                lon: self.origin_lon,
            },
            self.cell_size_m,
            self.rows,
            self.cols,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn night(&self) -> NightWindow {
        NightWindow {
            start_hour: self.night_start_hour,
            end_hour: self.night_end_hour,
        }
    }

    pub fn tokenizers(&self) -> Result<Tokenizers, ConfigError> {
        let t = |min, max, g| RangeTokenizer::new(min, max, g).map_err(|e| ConfigError::Invalid(e.to_string()));
        Ok(Tokenizers {
            rg: t(self.rg_min, self.rg_max, self.rg_granularity)?,
            td: t(self.td_min, self.td_max, self.td_granularity)?,
            ad: t(self.ad_min, self.ad_max, self.ad_granularity)?,
        })
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            pretrain_epochs: self.pretrain_epochs,
            joint_epochs: self.joint_epochs,
            lr: self.lr,
            batch: self.batch,
            seed: self.seed,
            exec: self.execution(),
        }
    }

    pub fn skipgram_config(&self) -> SkipGramConfig {
        SkipGramConfig {
            dim: self.embed_dim,
            window: self.sg_window,
            negatives: self.sg_negatives,
            epochs: self.sg_epochs,
            lr: self.sg_lr,
            seed: self.seed,
            ..SkipGramConfig::default()
        }
    }

    pub fn model_config(&self, deep_vocabs: [usize; 3], cell_vocab: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            recurrent_out: self.recurrent_out,
            num_classes: self.num_classes,
            deep_vocabs,
            cell_vocab,
            branches: self.branches,
        }
    }

    pub fn world_config(&self) -> Result<WorldConfig, ConfigError> {
        let mut w = WorldConfig::new(
            self.synth_agents,
            self.synth_weeks,
            self.num_classes,
            self.synth_noise,
            self.synth_seed,
        );
        w.grid = self.grid()?;
        w.tz = self.tz();
        w.sampling_period_s = self.synth_sampling_s;
        w.price_min = self.price_min;
        w.price_max = self.price_max;
        w.class_profiles = (0..self.num_classes.max(2))
            .map(|c| crate::synth::ClassProfile::interpolated(c, self.num_classes.max(2), self.price_min, self.price_max))
            .collect();
        Ok(w)
    }

    /// Checks every stage's preconditions up front.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        self.grid()?;
        self.tokenizers()?;
        if !(self.v_max_mps > 0.0 && self.stay_radius_m > 0.0 && self.stay_duration_s > 0.0) {
            return bad("v_max_mps, stay_radius_m and stay_duration_s must be positive");
        }
        if self.night_start_hour > 23 || self.night_end_hour > 23 || self.night_start_hour == self.night_end_hour {
            return bad("night hours must be distinct values in 0..=23");
        }
        if !(MIN_CLASSES..=MAX_CLASSES).contains(&self.num_classes) {
            return bad("num_classes must be in [2, 5]");
        }
        if !(self.price_min > 0.0 && self.price_min < self.price_max) {
            return bad("need 0 < price_min < price_max");
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return bad("train_ratio must be in (0, 1)");
        }
        if self.embed_dim == 0 || self.sg_epochs == 0 || self.sg_window == 0 {
            return bad("embed_dim, sg_epochs and sg_window must be positive");
        }
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.synth_noise) || self.synth_sampling_s <= 0 {
            return bad("synth_noise must be in [0, 1] and synth_sampling_s positive");
        }
        Ok(())
    }
}
