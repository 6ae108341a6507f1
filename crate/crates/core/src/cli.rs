//! The `lego` command line.
//!
//! Machine-readable outputs (CSV, JSON) go to the paths given by flags, or to
//! stdout when a command allows it; logs always go to stderr.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::adapter::TrainerConfig;
use crate::baselines::{FixSisaModel, SingleHeadModel, StepConfig};
use crate::bench::{self, CostInputs, Fixer, Scenario, SystemId, Task};
use crate::data::{self, EmbeddingDataset, SynthConfig};
use crate::error::{LegoError, Result};
use crate::keyspace::{KeyInitConfig, DEFAULT_PERTURB_SCALE};
use crate::lego_model::{fit_threaded, fit_with_keys, EnsembleMode, LegoConfig};
use crate::persist::{self, Checkpoint};
use crate::rng::mix;
use crate::unlearner::{unlearn_threaded, UnlearnMode, UnlearnRequest};

#[derive(Debug, Parser)]
#[command(name = "lego", version, about = "Exact unlearning with nearest-key adapter ensembles")]
pub struct Cli {
    /// Seed for every seeded operation of the command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Cap on adapter-level parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// error, warn, info, debug or trace (overrides LEGO_LOG).
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate, validate or split embedding datasets.
    #[command(subcommand)]
    Data(DataCommand),
    /// Fit a LegoNet and write its checkpoint.
    Train(TrainArgs),
    /// Predict class distributions for a dataset.
    Infer(InferArgs),
    /// Exactly unlearn ids from a LegoNet checkpoint.
    Unlearn(UnlearnArgs),
    /// Fit or unlearn with a comparison system.
    Baseline(BaselineArgs),
    /// Scenarios, sweeps and the cost model.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Checkpoint utilities.
    #[command(subcommand)]
    Ckpt(CkptCommand),
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Synthetic Gaussian-mixture embeddings.
    Gen {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 4.0)]
        sep: f64,
        #[arg(long, default_value_t = 1.0)]
        std: f64,
        /// .lgem, or .csv for the text form.
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a file and check every dataset invariant.
    Validate { path: PathBuf },
    /// Stratified train/test split.
    Split {
        path: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct TrainerArgs {
    #[arg(long, default_value_t = TrainerConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainerConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainerConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainerConfig::default().l2_penalty)]
    pub l2: f64,
    #[arg(long, default_value_t = TrainerConfig::default().init_std)]
    pub init_std: f64,
    /// Give each linear head a bias term.
    #[arg(long)]
    pub bias: bool,
}

impl TrainerArgs {
    fn config(&self) -> TrainerConfig {
        TrainerConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            l2_penalty: self.l2,
            use_bias: self.bias,
            init_std: self.init_std,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnsembleArg {
    Prob,
    Logit,
}

#[derive(Debug, Clone, Args)]
pub struct LegoArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_PERTURB_SCALE)]
    pub perturb_scale: f64,
    #[arg(long, value_enum, default_value_t = EnsembleArg::Prob)]
    pub ensemble: EnsembleArg,
    #[command(flatten)]
    pub trainer: TrainerArgs,
}

impl LegoArgs {
    fn config(&self, seed: u64) -> LegoConfig {
        LegoConfig {
            k: self.k,
            key_init: KeyInitConfig {
                n: self.n,
                perturb_scale: self.perturb_scale,
                seed: mix(seed, u64::MAX),
            },
            trainer: self.trainer.config(),
            global_seed: seed,
            ensemble: match self.ensemble {
                EnsembleArg::Prob => EnsembleMode::Prob,
                EnsembleArg::Logit => EnsembleMode::Logit,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub lego: LegoArgs,
    /// Reuse the fixed keys of an existing LegoNet checkpoint instead of
    /// drawing new ones (the from-scratch reference for unlearning).
    #[arg(long)]
    pub keys_from: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// CSV of id,label,pred,p0..; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct UnlearnArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Training data the checkpoint was fitted on.
    #[arg(long)]
    pub data: PathBuf,
    /// One decimal id per line.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    /// Also unlearn every retained sample of this class.
    #[arg(long)]
    pub class: Option<u32>,
    /// Retrain each impacted adapter once after all removals.
    #[arg(long)]
    pub batched: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Retrain,
    Tune,
    Ngrad,
    Fixsisa,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long)]
    pub data: PathBuf,
    /// Existing single-head (retrain/tune/ngrad) or FixSISA checkpoint.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Ids to unlearn, one per line.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub shards: usize,
    #[command(flatten)]
    pub trainer: TrainerArgs,
    /// Epochs of Tune/NGrad continuation.
    #[arg(long)]
    pub step_epochs: Option<usize>,
    #[arg(long)]
    pub step_lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Train every system, unlearn, and report metrics as CSV.
    Run {
        #[arg(long)]
        data: PathBuf,
        /// Held-out set; split off `--test-fraction` of `--data` when omitted.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// randomM (e.g. random100) or unclass.
        #[arg(long, default_value = "random1")]
        task: String,
        #[command(flatten)]
        lego: LegoArgs,
        #[arg(long, default_value_t = 10)]
        shards: usize,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Comma-separated subset of legonet,retrain,tune,ngrad,fixsisa.
        #[arg(long)]
        systems: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// LegoNet over a grid of (n, k).
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, value_enum)]
        fix: FixArg,
        /// The held value: k, n, or n/k.
        #[arg(long)]
        value: usize,
        /// Comma-separated values of the free parameter.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        deletions: usize,
        #[command(flatten)]
        trainer: TrainerArgs,
        #[arg(long, default_value_t = DEFAULT_PERTURB_SCALE)]
        perturb_scale: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form parameter, sample and FLOP counts as JSON.
    Cost {
        #[arg(long)]
        dim: u64,
        #[arg(long)]
        classes: u64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        shards: u64,
        #[arg(long)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        encoder_params: u64,
        #[arg(long, default_value_t = 0)]
        encoder_flops: u64,
        #[arg(long)]
        bias: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixArg {
    K,
    N,
    Ratio,
}

#[derive(Debug, Subcommand)]
pub enum CkptCommand {
    /// Compare two checkpoints; exit 0 when equal, 1 when they differ.
    Diff { a: PathBuf, b: PathBuf },
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.log_level.as_deref());
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(level: Option<&str>) {
    let env = env_logger::Env::new().filter_or("LEGO_LOG", "warn");
    let mut builder = env_logger::Builder::from_env(env);
    if let Some(level) = level {
        builder.parse_filters(level);
    }
    builder.target(env_logger::Target::Stderr);
    let _ = builder.try_init();
}

pub fn run(cli: &Cli) -> Result<i32> {
    let seed = cli.seed;
    let threads = cli.threads.max(1);
    match &cli.command {
        Command::Data(cmd) => run_data(cmd, seed),
        Command::Train(args) => {
            let train = data::load_dataset(&args.data)?;
            let config = args.lego.config(seed);
            let state = match &args.keys_from {
                Some(path) => {
                    let Checkpoint::Lego(src) = persist::load(path)? else {
                        return Err(LegoError::Validation(format!(
                            "{} is not a LegoNet checkpoint",
                            path.display()
                        )));
                    };
                    if src.config.key_init != config.key_init {
                        return Err(LegoError::Config(
                            "key settings (--n, --perturb-scale, --seed) differ from the key source"
                                .into(),
                        ));
                    }
                    fit_with_keys(&train, &config, src.keys, threads)?
                }
                None => fit_threaded(&train, &config, threads)?,
            };
            let digest = persist::save(&Checkpoint::Lego(state), &args.out)?;
            log::info!("wrote {} ({})", args.out.display(), crate::digest::hex(&digest));
            Ok(0)
        }
        Command::Infer(args) => {
            let ckpt = persist::load(&args.ckpt)?;
            let ds = data::load_dataset(&args.data)?;
            let mut out = String::from("id,label,pred");
            for c in 0..ds.num_classes() {
                out.push_str(&format!(",p{c}"));
            }
            out.push('\n');
            for s in ds.samples() {
                let p = match &ckpt {
                    Checkpoint::Lego(m) => m.infer(&s.encoding)?,
                    Checkpoint::Single(m) => m.infer(&s.encoding)?,
                    Checkpoint::FixSisa(m) => m.infer(&s.encoding)?,
                };
                let pred = crate::lego_model::argmax(&p);
                out.push_str(&format!("{},{},{}", s.id, s.label, pred));
                for v in p {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
            emit(args.out.as_deref(), out.as_bytes())?;
            Ok(0)
        }
        Command::Unlearn(args) => {
            let Checkpoint::Lego(mut state) = persist::load(&args.ckpt)? else {
                return Err(LegoError::Validation(format!(
                    "{} is not a LegoNet checkpoint",
                    args.ckpt.display()
                )));
            };
            let train = data::load_dataset(&args.data)?;
            let mut ids = match &args.ids {
                Some(p) => read_ids(p)?,
                None => Vec::new(),
            };
            if let Some(c) = args.class {
                let seen: BTreeSet<u64> = ids.iter().copied().collect();
                ids.extend(
                    train
                        .class_ids(c)
                        .into_iter()
                        .filter(|id| state.records.contains(*id) && !seen.contains(id)),
                );
            }
            if ids.is_empty() {
                return Err(LegoError::Config("nothing to unlearn: give --ids and/or --class".into()));
            }
            let request = UnlearnRequest {
                ids,
                mode: if args.batched {
                    UnlearnMode::Batched
                } else {
                    UnlearnMode::Sequential
                },
            };
            let report = unlearn_threaded(&mut state, &request, &train, threads)?;
            persist::save(&Checkpoint::Lego(state), &args.out)?;
            if let Some(path) = &args.report {
                let json = serde_json::to_vec_pretty(&report)
                    .map_err(|e| LegoError::Internal(e.to_string()))?;
                write_file(path, &json)?;
            }
            log::info!(
                "unlearned {} ids, retrained {} adapters in {:.3}s",
                report.removed_ids.len(),
                report.retrained_adapters,
                report.total_seconds
            );
            Ok(0)
        }
        Command::Baseline(args) => run_baseline(args, seed, threads),
        Command::Bench(cmd) => run_bench(cmd, seed, threads),
        Command::Ckpt(CkptCommand::Diff { a, b }) => {
            let cmp = persist::states_equal(a, b)?;
            let mut stdout = std::io::stdout().lock();
            match &cmp.first_difference {
                None => writeln!(stdout, "equal"),
                Some(d) => writeln!(stdout, "differ: first difference at {d}"),
            }
            .map_err(|e| LegoError::io("<stdout>", e))?;
            Ok(if cmp.equal { 0 } else { 1 })
        }
    }
}

fn run_data(cmd: &DataCommand, seed: u64) -> Result<i32> {
    match cmd {
        DataCommand::Gen {
            classes,
            dim,
            per_class,
            sep,
            std,
            out,
        } => {
            let ds = data::synth_generate(&SynthConfig {
                num_classes: *classes,
                dim: *dim,
                samples_per_class: *per_class,
                cluster_separation: *sep,
                noise_std: *std,
                seed,
            })?;
            ds.save(out)?;
            Ok(0)
        }
        DataCommand::Validate { path } => {
            let ds = data::load_dataset(path)?;
            println!(
                "ok: {} samples, dim {}, {} classes",
                ds.len(),
                ds.dim(),
                ds.num_classes()
            );
            Ok(0)
        }
        DataCommand::Split {
            path,
            test_fraction,
            train_out,
            test_out,
        } => {
            let ds = data::load_dataset(path)?;
            let (train, test) = data::split(&ds, *test_fraction, seed)?;
            train.save(train_out)?;
            test.save(test_out)?;
            Ok(0)
        }
    }
}

fn run_baseline(args: &BaselineArgs, seed: u64, threads: usize) -> Result<i32> {
    let train = data::load_dataset(&args.data)?;
    let trainer = args.trainer.config();
    let ids = match &args.ids {
        Some(p) => read_ids(p)?,
        None => Vec::new(),
    };
    let load_single = || -> Result<SingleHeadModel> {
        let path = args
            .ckpt
            .as_ref()
            .ok_or_else(|| LegoError::Config("--ckpt is required for this method".into()))?;
        match persist::load(path)? {
            Checkpoint::Single(m) => Ok(m),
            _ => Err(LegoError::Validation(format!(
                "{} is not a single-head checkpoint",
                path.display()
            ))),
        }
    };
    let step = |default: StepConfig| StepConfig {
        epochs: args.step_epochs.unwrap_or(default.epochs),
        batch_size: args.trainer.batch_size,
        learning_rate: args.step_lr.unwrap_or(default.learning_rate),
    };
    let forget_set: BTreeSet<u64> = ids.iter().copied().collect();
    let ckpt = match args.method {
        Method::Retrain => {
            let model = match &args.ckpt {
                Some(_) => load_single()?.retrain_without(&ids, &train)?,
                None => SingleHeadModel::fit(&train.without(&forget_set), &trainer, seed)?,
            };
            Checkpoint::Single(model)
        }
        Method::Tune => {
            let model = load_single()?;
            let keep: BTreeSet<u64> = model
                .trained_ids
                .iter()
                .copied()
                .filter(|id| !forget_set.contains(id))
                .collect();
            Checkpoint::Single(model.tune(&train.restricted_to(&keep), &step(StepConfig::TUNE_DEFAULT), seed)?)
        }
        Method::Ngrad => {
            let model = load_single()?;
            let forget = train.restricted_to(&forget_set);
            if forget.len() != forget_set.len() {
                return Err(LegoError::Validation("some --ids are not in --data".into()));
            }
            Checkpoint::Single(model.ngrad(&forget, &step(StepConfig::NGRAD_DEFAULT), seed)?)
        }
        Method::Fixsisa => match &args.ckpt {
            Some(path) => {
                let Checkpoint::FixSisa(mut model) = persist::load(path)? else {
                    return Err(LegoError::Validation(format!(
                        "{} is not a FixSISA checkpoint",
                        path.display()
                    )));
                };
                if !ids.is_empty() {
                    model.unlearn(&ids, &train, threads)?;
                }
                Checkpoint::FixSisa(model)
            }
            None => Checkpoint::FixSisa(FixSisaModel::fit(
                &train.without(&forget_set),
                args.shards,
                &trainer,
                seed,
                threads,
            )?),
        },
    };
    persist::save(&ckpt, &args.out)?;
    Ok(0)
}

fn train_test(
    data: &Path,
    test: Option<&Path>,
    fraction: f64,
    seed: u64,
) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    let ds = data::load_dataset(data)?;
    match test {
        Some(t) => Ok((ds, data::load_dataset(t)?)),
        None => data::split(&ds, fraction, seed),
    }
}

fn run_bench(cmd: &BenchCommand, seed: u64, threads: usize) -> Result<i32> {
    match cmd {
        BenchCommand::Run {
            data,
            test,
            test_fraction,
            task,
            lego,
            shards,
            reps,
            systems,
            out,
        } => {
            let (train, test) = train_test(data, test.as_deref(), *test_fraction, seed)?;
            let task: Task = task.parse()?;
            let mut scenario = Scenario::new(task, lego.config(seed), *shards, seed);
            scenario.repetitions = (*reps).max(1);
            scenario.threads = threads;
            if let Some(list) = systems {
                scenario.systems = parse_systems(list)?;
            }
            let rows = bench::run_scenario(&scenario, &train, &test)?;
            let mut buf = Vec::new();
            bench::write_csv(&rows, &mut buf)?;
            emit(out.as_deref(), &buf)?;
            Ok(0)
        }
        BenchCommand::Sweep {
            data,
            test,
            test_fraction,
            fix,
            value,
            grid,
            deletions,
            trainer,
            perturb_scale,
            out,
        } => {
            let (train, test) = train_test(data, test.as_deref(), *test_fraction, seed)?;
            let fixer = match fix {
                FixArg::K => Fixer::FixK(*value),
                FixArg::N => Fixer::FixN(*value),
                FixArg::Ratio => Fixer::FixRatio(*value),
            };
            let mut base = LegoConfig::new(1, 1, seed);
            base.trainer = trainer.config();
            base.key_init.perturb_scale = *perturb_scale;
            let rows = bench::sweep(&train, &test, &base, fixer, grid, *deletions, threads)?;
            let mut buf = Vec::new();
            bench::write_csv(&rows, &mut buf)?;
            emit(out.as_deref(), &buf)?;
            Ok(0)
        }
        BenchCommand::Cost {
            dim,
            classes,
            n,
            k,
            shards,
            samples,
            encoder_params,
            encoder_flops,
            bias,
            out,
        } => {
            let report = bench::cost_report(CostInputs {
                dim: *dim,
                classes: *classes,
                n: *n,
                k: *k,
                shards: *shards,
                samples: *samples,
                encoder_params: *encoder_params,
                encoder_flops: *encoder_flops,
                use_bias: *bias,
            })?;
            let mut json = serde_json::to_vec_pretty(&report)
                .map_err(|e| LegoError::Internal(e.to_string()))?;
            json.push(b'\n');
            emit(out.as_deref(), &json)?;
            Ok(0)
        }
    }
}

fn parse_systems(list: &str) -> Result<Vec<SystemId>> {
    list.split(',')
        .map(|s| {
            SystemId::ALL
                .into_iter()
                .find(|id| id.name() == s.trim())
                .ok_or_else(|| LegoError::Config(format!("unknown system {s:?}")))
        })
        .collect()
}

/// Reads one decimal id per line; blank lines are skipped.
pub fn read_ids(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path).map_err(|e| LegoError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<u64>().map_err(|_| {
                LegoError::Validation(format!("{}:{}: not an id: {l:?}", path.display(), i + 1))
            })
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| LegoError::io(path, e))
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_file(p, bytes),
        None => std::io::stdout()
            .lock()
            .write_all(bytes)
            .map_err(|e| LegoError::io("<stdout>", e)),
    }
}
