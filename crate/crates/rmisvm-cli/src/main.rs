//! Command-line surface for the rmisvm library: train a model, score bags,
//! cross-validate, check gradients, and generate synthetic data.
//!
//! Reports go to standard output; diagnostics (including wall-clock timing)
//! go to standard error, so two runs with identical flags and seed produce
//! byte-identical standard output and output files. Exit codes: 0 success,
//! 1 usage error, 2 data error, 3 numerical failure.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use rmisvm::{
    bag_prob, generate_synthetic, gradient_check, instance_prob, kfold_cv, objective,
    predict_bag, predict_instance, select_top_instances, train_traced, Dataset, Error,
    HyperParams, MisvmConfig, MisvmTrainer, ModelWeights, RmiTrainer, StepSize, SynthConfig,
};

#[derive(Parser)]
#[command(
    name = "rmisvm",
    version,
    about = "Multiple-instance learning: train, predict, cross-validate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it to a file
    Train(TrainArgs),
    /// Score bags (and optionally instances) with a trained model
    Predict(PredictArgs),
    /// Repeated stratified k-fold cross-validation
    Cv(CvArgs),
    /// Compare analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic dataset with instance-level ground truth
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// lambda 0.05, beta 1.5, m0 0.5
    #[value(name = "musk")]
    Musk,
    /// lambda 0.02, beta 5, m0 2
    #[value(name = "corel")]
    Corel,
    /// lambda 3e-4, beta 4, m0 2
    #[value(name = "trec9")]
    Trec9,
}

impl Preset {
    fn params(self) -> HyperParams {
        match self {
            Preset::Musk => HyperParams::musk(),
            Preset::Corel => HyperParams::corel(),
            Preset::Trec9 => HyperParams::trec9(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StepSizeArg {
    /// 1 / (lambda * t)
    InverseT,
    /// 1 / (lambda * (t + 1))
    InverseTPlusOne,
}

impl From<StepSizeArg> for StepSize {
    fn from(v: StepSizeArg) -> StepSize {
        match v {
            StepSizeArg::InverseT => StepSize::InverseT,
            StepSizeArg::InverseTPlusOne => StepSize::InverseTPlusOne,
        }
    }
}

/// Training hyperparameters. A preset fills lambda, beta, and m0; explicit
/// flags override it field by field.
#[derive(Args)]
struct HyperArgs {
    /// Named hyperparameter bundle for a benchmark family
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Regularization strength (default 0.01)
    #[arg(long)]
    lambda: Option<f64>,
    /// Weight of the bag loss term (default 5)
    #[arg(long)]
    beta: Option<f64>,
    /// Margin of the instance hinge (default 1)
    #[arg(long)]
    m0: Option<f64>,
    /// Instance probability threshold (default 0.5)
    #[arg(long)]
    p0: Option<f64>,
    /// Number of SGD iterations (default 2000)
    #[arg(long)]
    iters: Option<usize>,
    /// Learning-rate schedule (default inverse-t)
    #[arg(long, value_enum)]
    step_size: Option<StepSizeArg>,
}

impl HyperArgs {
    fn resolve(&self, seed: u64) -> Result<HyperParams, Error> {
        let mut hp = self.preset.map_or_else(HyperParams::default, Preset::params);
        if let Some(v) = self.lambda {
            hp.lambda = v;
        }
        if let Some(v) = self.beta {
            hp.beta = v;
        }
        if let Some(v) = self.m0 {
            hp.m0 = v;
        }
        if let Some(v) = self.p0 {
            hp.p0 = v;
        }
        if let Some(v) = self.iters {
            hp.iters = v;
        }
        if let Some(v) = self.step_size {
            hp.step_size = v.into();
        }
        hp.seed = seed;
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file to train on
    #[arg(long)]
    data: PathBuf,
    /// Where to write the trained model
    #[arg(long)]
    out: PathBuf,
    /// L2-normalize every instance before training
    #[arg(long)]
    normalize: bool,
    /// Print the full objective every N iterations (0 disables)
    #[arg(long, default_value_t = 0)]
    trace_every: usize,
    /// Seed for all randomness in this invocation
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct PredictArgs {
    /// Trained model file
    #[arg(long)]
    model: PathBuf,
    /// Dataset file to score
    #[arg(long)]
    data: PathBuf,
    /// L2-normalize every instance before scoring
    #[arg(long)]
    normalize: bool,
    /// Also print one line per instance
    #[arg(long)]
    instances: bool,
    /// Instance probability threshold for instance labels
    #[arg(long, default_value_t = 0.5)]
    p0: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainerKind {
    /// Jointly optimized bag/instance model
    Rmi,
    /// EM baseline with hard label imputation
    Misvm,
}

#[derive(Args)]
struct CvArgs {
    /// Dataset file to cross-validate on
    #[arg(long)]
    data: PathBuf,
    /// Number of folds
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// Number of repeats
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Which trainer to evaluate
    #[arg(long, value_enum, default_value_t = TrainerKind::Rmi)]
    trainer: TrainerKind,
    /// L2-normalize every instance first
    #[arg(long)]
    normalize: bool,
    /// Print the report as machine-readable key=value lines
    #[arg(long)]
    kv: bool,
    /// Seed for all randomness in this invocation
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Baseline hinge penalty weight
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Baseline inner subgradient steps per round
    #[arg(long, default_value_t = 2000)]
    inner_iters: usize,
    /// Baseline cap on label-imputation rounds
    #[arg(long, default_value_t = 50)]
    max_outer_iters: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random configurations to test
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    /// Maximum acceptable relative error
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
    /// Seed for all randomness in this invocation
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Where to write the dataset
    #[arg(long)]
    out: PathBuf,
    /// Where to write the instance-level ground truth
    #[arg(long)]
    truth_out: PathBuf,
    /// Number of positive bags
    #[arg(long, default_value_t = 20)]
    pos_bags: usize,
    /// Number of negative bags
    #[arg(long, default_value_t = 20)]
    neg_bags: usize,
    /// Instances per bag
    #[arg(long, default_value_t = 20)]
    instances_per_bag: usize,
    /// Fraction of each positive bag drawn from the positive blob
    #[arg(long, default_value_t = 0.05)]
    positive_fraction: f64,
    /// Feature dimensionality
    #[arg(long, default_value_t = 80)]
    dim: usize,
    /// Distance between the class blob centers
    #[arg(long, default_value_t = 4.0)]
    margin: f64,
    /// Per-coordinate noise standard deviation
    #[arg(long, default_value_t = 0.8)]
    noise_std: f64,
    /// Seed for all randomness in this invocation
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum CliError {
    Lib(Error),
    Numerical(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        CliError::Lib(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Numerical(msg) => write!(f, "{msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(Error::InvalidConfig(_)) => 1,
            CliError::Lib(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap picks stdout for help/version and stderr for errors.
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_dataset(path: &PathBuf, normalize: bool) -> Result<Dataset, Error> {
    let data = Dataset::from_path(path)?;
    Ok(if normalize { data.l2_normalized() } else { data })
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let hp = args.hyper.resolve(args.seed)?;
    let data = load_dataset(&args.data, args.normalize)?;
    let started = Instant::now();
    let report = train_traced(&data, &hp, args.trace_every)?;
    let elapsed = started.elapsed().as_secs_f64();
    if report.weights.as_slice().iter().any(|v| v.is_nan()) {
        return Err(CliError::Numerical(
            "training produced NaN weights".into(),
        ));
    }
    for (t, value) in &report.trace {
        println!("trace t={t} objective={value}");
    }
    let breakdown = objective(&report.weights, &data, &hp)?;
    println!(
        "trained {} iterations on {} bags (dim {})",
        report.iterations,
        data.n_bags(),
        data.dim()
    );
    println!(
        "objective: total={} regularizer={} bag={} instance={}",
        breakdown.total, breakdown.reg_term, breakdown.bag_term, breakdown.ins_term
    );
    report.weights.write_to_path(&args.out)?;
    println!("wrote {}", args.out.display());
    eprintln!("wall clock: {elapsed:.3}s");
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    if !(args.p0 > 0.0 && args.p0 < 1.0) {
        return Err(CliError::Lib(Error::InvalidConfig(format!(
            "p0 must be in (0, 1), got {}",
            args.p0
        ))));
    }
    let weights = ModelWeights::from_path(&args.model)?;
    let data = load_dataset(&args.data, args.normalize)?;
    if data.dim() != weights.dim() {
        return Err(CliError::Lib(Error::DimMismatch {
            expected: weights.dim(),
            found: data.dim(),
        }));
    }
    let mut out = String::new();
    for bag in data.bags() {
        let p = bag_prob(&weights, bag)?;
        let label = predict_bag(p);
        let top = select_top_instances(&weights, bag, 1)?[0];
        let top_score = weights.score(&bag.instances()[top])?;
        if p.is_nan() || top_score.is_nan() {
            return Err(CliError::Numerical(format!(
                "NaN while scoring bag {:?}",
                bag.id()
            )));
        }
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            bag.id(),
            p,
            label.as_u8(),
            top,
            top_score
        ));
        if args.instances {
            for (j, x) in bag.instances().iter().enumerate() {
                let pj = instance_prob(&weights, x)?;
                if pj.is_nan() {
                    return Err(CliError::Numerical(format!(
                        "NaN while scoring instance {j} of bag {:?}",
                        bag.id()
                    )));
                }
                let y = u8::from(predict_instance(pj, args.p0));
                out.push_str(&format!("{} {} {} {}\n", bag.id(), j, pj, y));
            }
        }
    }
    print!("{out}");
    Ok(())
}

fn cmd_cv(args: CvArgs) -> Result<(), CliError> {
    let data = load_dataset(&args.data, args.normalize)?;
    let started = Instant::now();
    let report = match args.trainer {
        TrainerKind::Rmi => {
            let hp = args.hyper.resolve(args.seed)?;
            kfold_cv(&data, &RmiTrainer(hp), args.folds, args.repeats, args.seed)?
        }
        TrainerKind::Misvm => {
            let cfg = MisvmConfig {
                c: args.c,
                inner_iters: args.inner_iters,
                max_outer_iters: args.max_outer_iters,
                seed: args.seed,
            };
            cfg.validate()?;
            kfold_cv(&data, &MisvmTrainer(cfg), args.folds, args.repeats, args.seed)?
        }
    };
    let elapsed = started.elapsed().as_secs_f64();
    if args.kv {
        print!("{}", report.to_kv());
    } else {
        println!(
            "{}-fold cross-validation, {} repeats, trainer {}",
            report.folds, report.repeats, report.trainer
        );
        println!("{}", report.summary());
    }
    eprintln!("wall clock: {elapsed:.3}s");
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let report = gradient_check(args.trials, args.eps, args.seed)?;
    let pass = report.passed(args.tolerance);
    println!(
        "gradcheck: trials={} eps={:e} max_rel_error={:e} tolerance={:e} status={}",
        report.trials,
        report.eps,
        report.max_rel_error,
        args.tolerance,
        if pass { "pass" } else { "fail" }
    );
    if !pass {
        eprintln!(
            "worst: trial={} component={} {}",
            report.worst_trial, report.worst_component, report.worst_config
        );
        return Err(CliError::Numerical("gradient check failed".into()));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        n_pos_bags: args.pos_bags,
        n_neg_bags: args.neg_bags,
        instances_per_bag: args.instances_per_bag,
        positive_fraction: args.positive_fraction,
        dim: args.dim,
        margin: args.margin,
        noise_std: args.noise_std,
    };
    let (data, truth) = generate_synthetic(&cfg, args.seed)?;
    data.write_to_path(&args.out)?;
    truth.write_to_path(&args.truth_out)?;
    let n_pos = data
        .bags()
        .iter()
        .filter(|b| b.label().is_positive())
        .count();
    println!(
        "wrote {}: {} bags ({} positive, {} negative), dim {}",
        args.out.display(),
        data.n_bags(),
        n_pos,
        data.n_bags() - n_pos,
        data.dim()
    );
    println!("wrote {}", args.truth_out.display());
    Ok(())
}
