use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use modenorm::data::SynthConfig;
use modenorm::gradcheck::Target;
use modenorm::norm::NormKind;

use modenorm_cli::commands::{
    cmd_eval, cmd_gates_report, cmd_gradcheck, cmd_synth, gradcheck_options, Split,
};
use modenorm_cli::config::parse_list;
use modenorm_cli::sweep::{run_sweep, SweepGrid};
use modenorm_cli::train::cmd_train;
use modenorm_cli::{CliError, DataSource, Result, RunConfig};

#[derive(Parser)]
#[command(name = "modenorm", version, about = "Mode normalization training and verification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics.csv and checkpoint.mncp into --out.
    Train(RunArgs),
    /// Evaluate a checkpoint in inference mode.
    Eval(CheckpointArgs),
    /// Finite-difference check of every backward pass on random instances.
    Gradcheck(GradcheckArgs),
    /// Train over a batch-size x mode-count grid and report medians.
    Sweep(SweepArgs),
    /// List top samples and usage per mode of every gated layer.
    GatesReport(GatesArgs),
    /// Generate the synthetic dataset as CSV.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Synth,
    Idx,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct DataArgs {
    /// Data source; defaults to the one recorded in the checkpoint.
    #[arg(long, value_enum)]
    data: Option<DataKind>,
    /// Directory with MNIST-style IDX files (for --data idx).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "mn")]
    norm: NormKind,
    /// Number of modes K (mode and mode group norm).
    #[arg(long, default_value_t = 2)]
    modes: usize,
    /// Group count (group norm).
    #[arg(long, default_value_t = 2)]
    groups: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Running-statistics memory.
    #[arg(long, default_value_t = modenorm::norm::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = modenorm::norm::DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "synth")]
    data: DataKind,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Comma-separated epochs at which the learning rate drops 10x
    /// (default: 65% and 80% of --epochs).
    #[arg(long)]
    milestones: Option<String>,
    /// Comma-separated hidden layer widths.
    #[arg(long, default_value = "32,32")]
    hidden: String,
    /// Standard deviation of the initial gating-weight noise.
    #[arg(long, default_value_t = 1e-3)]
    gate_noise: f64,
}

#[derive(Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct GatesArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Samples listed per mode.
    #[arg(long, default_value_t = 10)]
    top_p: usize,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Comma-separated targets (bn,in,ln,gn,mn,mgn,dense,relu,xent,model) or "all".
    #[arg(long, default_value = "all")]
    layer: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random instances per target.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
    #[arg(long, default_value_t = 1e-5)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-8)]
    atol: f64,
    /// Relative tolerance for the composed model.
    #[arg(long, default_value_t = 1e-4)]
    model_rtol: f64,
    /// Negative control: add 1 to the first entry of every analytic gradient.
    #[arg(long, hide = true)]
    corrupt_analytic: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "32,128,512")]
    batch_sizes: String,
    #[arg(long, default_value = "1,2,4,6")]
    modes_grid: String,
    /// Seeds per cell, starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

fn data_source(kind: DataKind, dir: Option<PathBuf>) -> Result<DataSource> {
    match (kind, dir) {
        (DataKind::Synth, _) => Ok(DataSource::Synth),
        (DataKind::Idx, Some(dir)) => Ok(DataSource::Idx(dir)),
        (DataKind::Idx, None) => Err(CliError::Validation("--data idx requires --data-dir".into())),
    }
}

impl DataArgs {
    fn source(&self) -> Result<Option<DataSource>> {
        self.data.map(|k| data_source(k, self.data_dir.clone())).transpose()
    }

    fn split(&self) -> Split {
        match self.split {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let cfg = RunConfig {
            norm: self.norm,
            modes: self.modes,
            groups: self.groups,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lambda: self.lambda,
            eps: self.eps,
            seed: self.seed,
            data: data_source(self.data, self.data_dir.clone())?,
            milestones: self.milestones.as_deref().map(parse_list).transpose()?,
            hidden: parse_list(&self.hidden)?,
            gate_noise: self.gate_noise,
            out: self.out.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_file(path: &std::path::Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.config()?;
            let out = cmd_train(&cfg)?;
            println!(
                "final test error {:.6}, test loss {:.6}{}",
                out.final_test_error(),
                out.test.loss,
                out.purity.map_or(String::new(), |p| format!(", gate purity {p:.4}"))
            );
            println!("wrote {}", cfg.out.display());
        }
        Command::Eval(args) => {
            let out = cmd_eval(&args.checkpoint, args.data.source()?, args.data.split())?;
            print!("{}", out.csv);
        }
        Command::GatesReport(args) => {
            print!("{}", cmd_gates_report(&args.checkpoint, args.data.source()?, args.data.split(), args.top_p)?);
        }
        Command::Gradcheck(args) => {
            let targets: Vec<Target> = if args.layer == "all" {
                Target::ALL.to_vec()
            } else {
                parse_list(&args.layer)?
            };
            let mut opts = gradcheck_options(args.h, args.rtol, args.atol);
            opts.model_rtol = args.model_rtol;
            if args.corrupt_analytic {
                opts.corrupt = Some(|t| t.data_mut()[0] += 1.0);
            }
            let out = cmd_gradcheck(&targets, args.seed, args.seeds, &opts)?;
            print!("{}", out.text);
            if !out.passed {
                return Err(CliError::Numerical("gradient check failed".into()));
            }
        }
        Command::Sweep(args) => {
            let base = args.run.config()?;
            let grid = SweepGrid {
                batch_sizes: parse_list(&args.batch_sizes)?,
                modes: parse_list(&args.modes_grid)?,
                seeds: (base.seed..base.seed + args.seeds).collect(),
            };
            let out = run_sweep(&base, &grid)?;
            std::fs::create_dir_all(&base.out).map_err(|e| CliError::io(&base.out, e))?;
            write_file(&base.out.join("sweep.csv"), &out.to_csv())?;
            let trend = out.trend_report();
            write_file(&base.out.join("trend.txt"), &trend)?;
            print!("{trend}");
        }
        Command::Synth(args) => {
            let cfg = SynthConfig {
                seed: args.seed,
                ..SynthConfig::default()
            };
            print!("{}", cmd_synth(&cfg, &args.out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are validation errors; help and version are not errors.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
