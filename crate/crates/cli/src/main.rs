use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fieldvb::checks::oracle_suite;
use fieldvb::config::{preset, preset_description, ExperimentConfig, Model, PRESETS};
use fieldvb::experiment::{generate, run_experiment, write_data};
use fieldvb::Result;

#[derive(Parser)]
#[command(
    name = "fieldvb",
    version,
    about = "Hierarchical variational Bayes for the 1D inverse source problem"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate noisy synthetic data on the generation grid and write data.csv.
    GenerateData(ExperimentArgs),
    /// Invert data with the chosen model and write the report files.
    Invert {
        #[arg(value_enum)]
        model: ModelArg,
        #[command(flatten)]
        args: ExperimentArgs,
        /// Invert this data file instead of generating synthetic data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the randomized oracle cross-checks.
    OracleSuite {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Built-in configurations.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List preset names with a short description.
    List,
    /// Print a preset as TOML.
    Show { name: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Gaussian,
    Laplace,
    Sequential,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Gaussian => Model::Gaussian,
            ModelArg::Laplace => Model::Laplace,
            ModelArg::Sequential => Model::Sequential,
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment configuration file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration name (see `presets list`).
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(&self, default_preset: &str) -> Result<ExperimentConfig> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => preset(default_preset)?,
        };
        if let Some(seed) = self.seed {
            config.output.seed = seed;
        }
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        Ok(config)
    }
}

fn default_preset(model: Model) -> &'static str {
    match model {
        Model::Gaussian => "isp-gaussian",
        Model::Laplace => "isp-laplace",
        Model::Sequential => "isp-sequential",
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenerateData(args) => {
            let config = args.resolve("isp-gaussian")?;
            let data = generate(&config)?;
            write_data(&data, &config.output.dir)?;
            std::fs::write(config.output.dir.join("config.toml"), config.to_toml_string()?)?;
            println!(
                "wrote {} data entries ({} corrupted) to {}",
                data.layout.len(),
                data.synthetic.corrupted.iter().filter(|c| **c).count(),
                config.output.dir.join("data.csv").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Invert { model, args, data } => {
            let model = Model::from(model);
            let mut config = args.resolve(default_preset(model))?;
            config.solver.model = model;
            if data.is_some() {
                config.problem.data = data;
            }
            let report = run_experiment(&config)?;
            println!("model           {}", model.as_str());
            println!("status          {:?}", report.status);
            println!("sweeps          {}", report.iterations);
            println!("intrinsic dim   {}", report.k);
            println!("rel. error      {:.6}", report.final_rel_error);
            println!("band coverage   {:.4}", report.coverage);
            if let Some(s) = report.sigma_hat {
                println!("sigma hat       {s:.6e}");
            }
            println!("lambda          {:.6e}", report.lambda);
            println!("tau             {:.6e}", report.tau);
            println!("elapsed         {:.2} s", report.elapsed_secs);
            println!("output          {}", config.output.dir.display());
            Ok(ExitCode::from(report.status.exit_code() as u8))
        }
        Command::OracleSuite { seed } => {
            let outcomes = oracle_suite(seed)?;
            for o in &outcomes {
                println!(
                    "{} {:<42} {:.3e} (tolerance {:.1e})",
                    if o.passed { "PASS" } else { "FAIL" },
                    o.name,
                    o.value,
                    o.tolerance
                );
            }
            Ok(if outcomes.iter().all(|o| o.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Presets { action } => {
            match action {
                PresetAction::List => {
                    for name in PRESETS {
                        println!("{name:<20} {}", preset_description(name).unwrap_or_default());
                    }
                }
                PresetAction::Show { name } => print!("{}", preset(&name)?.to_toml_string()?),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
