//! `deepsei` command-line driver.
//!
//! Every stage reads a `key = value` config (`--config`) with `--set`
//! overrides, stamps its outputs with the config hash, and reports failures
//! as a single `error: <kind>: <message>` line on stderr.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deepsei::config::{ConfigError, RunConfig};
use deepsei::eval::{self, MetricRow};
use deepsei::ingest;
use deepsei::model::{self, Checkpoint};
use deepsei::pipeline::{self, PipelineError, RawData, WeekFeatures};
use deepsei::preprocess;
use deepsei::synth;

#[derive(Parser)]
#[command(name = "deepsei", version, about = "Socioeconomic status inference from GPS trajectories")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world with known classes.
    Synth(SynthArgs),
    /// Stays, activities, homes and labels from raw CSVs.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Add indicator tokens to the week file.
    Featurize {
        #[arg(long)]
        weeks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Skip-gram tables for the three indicators.
    PretrainEmbed {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain and jointly train the model.
    Train {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Tables from `pretrain-embed`, used instead of training new ones.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Classification and clustering metrics.
    Evaluate(EvaluateArgs),
    /// Per-sample class predictions.
    Predict {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run preprocessing, training and evaluation across one parameter.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge metric files into one long-format table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    weeks: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    samples: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    model_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Class counts for the classification grid; counts other than the
    /// checkpoint's are retrained from the same samples.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    classes: Vec<usize>,
    /// Cluster counts for k-means on the embeddings.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    clusters: Vec<usize>,
    /// Accept inputs produced under a different config hash.
    #[arg(long)]
    force: bool,
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    HashMismatch { path: PathBuf, found: String, expected: String },
    Pipeline(PipelineError),
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::HashMismatch { .. } => 3,
            CliError::Pipeline(_) => 1,
        }
    }

    fn line(&self) -> String {
        let one_line = |s: String| s.replace('\n', " ");
        match self {
            CliError::Config(e) => format!("error: config: {}", one_line(e.to_string())),
            CliError::HashMismatch { path, found, expected } => format!(
                "error: hash_mismatch: {} has config_hash={found}, current config is {expected} (use --force)",
                path.display()
            ),
            CliError::Pipeline(e) => format!("error: pipeline: {}", one_line(e.to_string())),
            CliError::Usage(m) => format!("error: usage: {}", one_line(m.clone())),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl<E: Into<PipelineError>> From<E> for Box<CliError> {
    fn from(e: E) -> Self {
        match e.into() {
            PipelineError::Config(c) => Box::new(CliError::Config(c)),
            other => Box::new(CliError::Pipeline(other)),
        }
    }
}

type Result<T> = std::result::Result<T, Box<CliError>>;

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(PipelineError::from)?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Box::new(CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}"))))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn create(path: &Path, cfg: &RunConfig) -> Result<io::BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(PipelineError::from)?;
    }
    Ok(pipeline::create_artifact(path, &cfg.hash()).map_err(PipelineError::from)?)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| {
        PipelineError::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?))
}

fn check_hash(path: &Path, found: Option<String>, cfg: &RunConfig, force: bool) -> Result<()> {
    let expected = cfg.hash();
    match found {
        Some(h) if h == expected || force => Ok(()),
        None if force => Ok(()),
        found => Err(Box::new(CliError::HashMismatch {
            path: path.to_path_buf(),
            found: found.unwrap_or_else(|| "none".into()),
            expected,
        })),
    }
}

fn read_weeks(path: &Path) -> Result<Vec<WeekFeatures>> {
    Ok(pipeline::read_weeks(open(path)?)?)
}

fn write_metrics(path: &Path, cfg: &RunConfig, rows: &[MetricRow]) -> Result<()> {
    let mut w = create(path, cfg)?;
    eval::write_metrics(&mut w, rows).map_err(PipelineError::from)?;
    w.flush().map_err(PipelineError::from)?;
    Ok(())
}

fn synth_cmd(mut cfg: RunConfig, a: &SynthArgs) -> Result<()> {
    let set = |cfg: &mut RunConfig, key: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            cfg.set(key, &v)?;
        }
        Ok(())
    };
    set(&mut cfg, "synth_agents", a.agents.map(|x| x.to_string()))?;
    set(&mut cfg, "synth_weeks", a.weeks.map(|x| x.to_string()))?;
    set(&mut cfg, "num_classes", a.classes.map(|x| x.to_string()))?;
    set(&mut cfg, "synth_noise", a.noise.map(|x| x.to_string()))?;
    set(&mut cfg, "synth_seed", a.seed.map(|x| x.to_string()))?;
    cfg.validate()?;
    let world = synth::generate_world(&cfg.world_config()?).map_err(|e| CliError::Usage(e.to_string()))?;
    let trajs = synth::generate_trajectories(&world, cfg.execution());
    let dir = &a.out_dir;
    let mut w = create(&dir.join(synth::TRAJECTORY_FILE), &cfg)?;
    ingest::write_trajectories(&mut w, &trajs)?;
    let mut w = create(&dir.join(synth::POI_FILE), &cfg)?;
    ingest::write_pois(&mut w, &world.pois)?;
    let mut w = create(&dir.join(synth::PRICE_FILE), &cfg)?;
    ingest::write_prices(&mut w, &world.prices)?;
    let mut w = create(&dir.join(synth::GROUND_TRUTH_FILE), &cfg)?;
    synth::write_ground_truth(&mut w, &world).map_err(PipelineError::from)?;
    w.flush().map_err(PipelineError::from)?;
    eprintln!("synth: {} agents, {} trajectories -> {}", world.agents.len(), trajs.len(), dir.display());
    Ok(())
}

fn preprocess_cmd(cfg: &RunConfig, data: &Path, out_dir: &Path) -> Result<()> {
    let raw: RawData = pipeline::load_raw(data)?;
    let p = pipeline::preprocess_all(&raw, cfg)?;
    let mut w = create(&out_dir.join("stays.csv"), cfg)?;
    pipeline::write_stays(&mut w, &p.stays)?;
    let mut w = create(&out_dir.join("labels.csv"), cfg)?;
    pipeline::write_labels(&mut w, &p.weeks)?;
    let mut w = create(&out_dir.join("weeks.csv"), cfg)?;
    pipeline::write_weeks(&mut w, &p.weeks, None)?;
    let mut w = create(&out_dir.join("categories.csv"), cfg)?;
    deepsei::activity::write_category_table(&mut w).map_err(PipelineError::from)?;
    w.flush().map_err(PipelineError::from)?;
    eprintln!(
        "preprocess: {} weeks, {} stays, {} users without night activity, {} weeks dropped",
        p.weeks.len(),
        p.stays.len(),
        p.homeless_users.len(),
        p.dropped_weeks
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig, samples: &Path, out_dir: &Path, embeddings: Option<&Path>) -> Result<()> {
    let weeks = read_weeks(samples)?;
    let tables = match embeddings {
        Some(p) => Some(pipeline::read_tables(open(p)?)?),
        None => None,
    };
    let run = pipeline::train_run_with(&weeks, cfg, tables.as_ref())?;
    fs::create_dir_all(out_dir).map_err(PipelineError::from)?;
    model::save(&run.checkpoint, out_dir.join("model.dsei"))?;
    if let Some(best) = &run.best {
        model::save(best, out_dir.join("model_best.dsei"))?;
    }
    let mut w = create(&out_dir.join("train_log.csv"), cfg)?;
    pipeline::write_log(&mut w, &run.log)?;
    let mut w = create(&out_dir.join("split.csv"), cfg)?;
    pipeline::write_split(&mut w, &weeks, &run.train_idx, &run.test_idx)?;
    eprintln!("train: {} train / {} test weeks -> {}", run.train_idx.len(), run.test_idx.len(), out_dir.display());
    Ok(())
}

fn load_checkpoint(path: &Path, cfg: &RunConfig, force: bool) -> Result<Checkpoint> {
    let ck = model::load(path)?;
    let found = RunConfig::parse(&ck.run_config).ok().map(|c| c.hash());
    check_hash(path, found, cfg, force)?;
    Ok(ck)
}

fn relabel(weeks: &[WeekFeatures], cfg: &RunConfig, c: usize) -> Result<Vec<WeekFeatures>> {
    weeks
        .iter()
        .map(|w| {
            let label = preprocess::derive_label(w.home_price, cfg.price_min, cfg.price_max, c).map_err(PipelineError::from)?;
            Ok(WeekFeatures { label, ..w.clone() })
        })
        .collect()
}

fn evaluate_cmd(cfg: &RunConfig, a: &EvaluateArgs) -> Result<()> {
    let found = pipeline::artifact_hash(&a.samples).map_err(PipelineError::from)?;
    check_hash(&a.samples, found, cfg, a.force)?;
    let ck = load_checkpoint(&a.model_dir.join("model.dsei"), cfg, a.force)?;
    let weeks = read_weeks(&a.samples)?;
    let test_keys: BTreeSet<(String, i64)> = pipeline::read_test_keys(open(&a.model_dir.join("split.csv"))?)?
        .into_iter()
        .collect();
    let own_c = ck.model.config.num_classes;
    let mut rows = Vec::new();
    for &c in &a.classes {
        if c == own_c {
            let test: Vec<WeekFeatures> = weeks
                .iter()
                .filter(|w| test_keys.contains(&(w.user_id.clone(), w.week_start)))
                .cloned()
                .collect();
            rows.extend(pipeline::classification_metrics(&ck, &test, cfg.execution())?);
        } else {
            let mut sub = cfg.clone();
            sub.set("num_classes", &c.to_string())?;
            let relabelled = relabel(&weeks, cfg, c)?;
            let run = pipeline::train_run(&relabelled, &sub)?;
            let test = pipeline::pick(&relabelled, &run.test_idx);
            rows.extend(pipeline::classification_metrics(&run.checkpoint, &test, cfg.execution())?);
        }
    }
    rows.extend(pipeline::clustering_metrics(&ck, &weeks, &a.clusters, cfg)?);
    write_metrics(&a.out, cfg, &rows)
}

fn predict_cmd(cfg: &RunConfig, samples: &Path, model_path: &Path, out: &Path) -> Result<()> {
    let ck = model::load(model_path)?;
    let weeks = read_weeks(samples)?;
    let pred = pipeline::predict(&ck, &weeks, cfg.execution())?;
    let mut w = create(out, cfg)?;
    writeln!(w, "user_id,week_start,predicted_class,true_class").map_err(PipelineError::from)?;
    for (wk, p) in weeks.iter().zip(pred) {
        writeln!(w, "{},{},{p},{}", wk.user_id, wk.week_start, wk.label.class_index).map_err(PipelineError::from)?;
    }
    w.flush().map_err(PipelineError::from)?;
    Ok(())
}

fn sweep_cmd(cfg: &RunConfig, data: &Path, param: &str, values: &[String], out: &Path) -> Result<()> {
    if cfg.get(param).is_none() {
        return Err(Box::new(CliError::Config(ConfigError::UnknownKey(param.to_string()))));
    }
    let raw = pipeline::load_raw(data)?;
    let mut runs = Vec::new();
    for v in values {
        let mut c = cfg.clone();
        c.set(param, v)?;
        c.validate()?;
        let weeks = pipeline::preprocess_all(&raw, &c)?.weeks;
        let run = pipeline::train_run(&weeks, &c)?;
        let test = pipeline::pick(&weeks, &run.test_idx);
        let m = pipeline::classification_metrics(&run.checkpoint, &test, c.execution())?;
        runs.push((v.clone(), m));
        eprintln!("sweep: {param}={v} done");
    }
    let mut w = create(out, cfg)?;
    writeln!(w, "param,param_value,C,accuracy,f1").map_err(PipelineError::from)?;
    for (v, m) in runs {
        let get = |name: &str| m.iter().find(|r| r.metric == name).map_or(f64::NAN, |r| r.value);
        writeln!(w, "{param},{v},{},{:.6},{:.6}", cfg.num_classes, get("accuracy"), get("f1")).map_err(PipelineError::from)?;
    }
    w.flush().map_err(PipelineError::from)?;
    Ok(())
}

fn report_cmd(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut w = create(out, cfg)?;
    writeln!(w, "source,task,C_or_k,metric,value").map_err(PipelineError::from)?;
    for p in inputs {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(open(p)?);
        let header = rd.headers().map_err(PipelineError::from)?.clone();
        if header.iter().ne(eval::METRICS_HEADER) {
            return Err(Box::new(CliError::Usage(format!("{} is not a metrics file", p.display()))));
        }
        let source = p.display().to_string();
        for rec in rd.records() {
            let rec = rec.map_err(PipelineError::from)?;
            let fields: Vec<&str> = rec.iter().collect();
            writeln!(w, "{source},{}", fields.join(",")).map_err(PipelineError::from)?;
        }
    }
    w.flush().map_err(PipelineError::from)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    cfg.validate()?;
    match &cli.command {
        Command::Synth(a) => synth_cmd(cfg, a),
        Command::Preprocess { data, out_dir } => preprocess_cmd(&cfg, data, out_dir),
        Command::Featurize { weeks, out } => {
            let weeks = read_weeks(weeks)?;
            let mut w = create(out, &cfg)?;
            pipeline::write_weeks(&mut w, &weeks, Some(&cfg.tokenizers()?))?;
            Ok(())
        }
        Command::PretrainEmbed { samples, out } => {
            let tables = pipeline::pretrain_from_weeks(&read_weeks(samples)?, &cfg)?;
            let mut w = create(out, &cfg)?;
            pipeline::write_tables(&mut w, &tables)?;
            Ok(())
        }
        Command::Train { samples, out_dir, embeddings } => train_cmd(&cfg, samples, out_dir, embeddings.as_deref()),
        Command::Evaluate(a) => evaluate_cmd(&cfg, a),
        Command::Predict { samples, model, out } => predict_cmd(&cfg, samples, model, out),
        Command::Sweep { data, param, values, out } => sweep_cmd(&cfg, data, param, values, out),
        Command::Report { inputs, out } => report_cmd(&cfg, inputs, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code())
        }
    }
}
