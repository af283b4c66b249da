use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mtgp::multitask::KernelFamily;
use mtgp_cli::experiment::{cmd_compare, cmd_fit, cmd_inspect_init, cmd_predict, cmd_synth, Metrics};
use mtgp_cli::{CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mtgp", version, about = "Multi-task spectral mixture Gaussian process experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a signal/integral/derivative dataset and compare kernels on it
    Synth(RunArgs),
    /// Compare the candidate kernel against the baselines on the configured data
    Compare(RunArgs),
    /// Train the candidate kernel and save it as model.json
    Fit(RunArgs),
    /// Predict from a saved model at the points of a `task,x` CSV
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long, default_value = "predictions")]
        out: PathBuf,
    },
    /// Write the periodogram and mixture fit used to initialize a kernel
    InspectInit(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Candidate kernel family, e.g. GCSM-CC or SM-LMC
    #[arg(long)]
    kernel: Option<KernelFamily>,
    /// Number of spectral components
    #[arg(long)]
    q: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut config = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(k) = self.kernel {
            config.kernel = k;
        }
        if let Some(q) = self.q {
            config.q = q;
        }
        if let Some(o) = &self.out {
            config.output_dir = o.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

fn print_metrics(m: &Metrics) {
    let mut header = format!("{:<12}", "kernel");
    for t in &m.tasks {
        header.push_str(&format!(" {t:>14}"));
    }
    println!("{header}");
    for (name, k) in &m.kernels {
        let mut line = format!("{name:<12}");
        for t in &m.tasks {
            match k.mae.get(t).copied().flatten() {
                Some(v) => line.push_str(&format!(" {v:>14.6}")),
                None => line.push_str(&format!(" {:>14}", "-")),
            }
        }
        println!("{line}");
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(args) => print_metrics(&cmd_synth(&args.resolve()?)?),
        Command::Compare(args) => print_metrics(&cmd_compare(&args.resolve()?)?),
        Command::Fit(args) => {
            let s = cmd_fit(&args.resolve()?)?;
            println!("saved {} (nlml {:.6})", s.model_path.display(), s.nlml);
        }
        Command::Predict { model, inputs, out } => {
            let rows = cmd_predict(&model, &inputs, &out)?;
            println!("wrote {} predictions to {}", rows.len(), out.join("predictions.csv").display());
        }
        Command::InspectInit(args) => {
            let r = cmd_inspect_init(&args.resolve()?)?;
            for c in &r.components {
                println!("mean {:.6} variance {:.3e} weight {:.4}", c.mean, c.variance, c.weight);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MTGP_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
