use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use voxfit_cli::commands;
use voxfit_cli::config::PipelineConfig;
use voxfit_cli::error::CliError;
use voxfit_core::metrics::Metric;
use voxfit_core::synth::SynthSpec;

#[derive(Parser)]
#[command(name = "voxfit", version, about = "Voxel-wise GLM, GAM and SVR fitting for imaging cohorts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the output directory from the config.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured models at every masked voxel.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Comma-separated model names; all models when omitted.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
    /// Compute metric maps from fitted models.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// Comma-separated metrics; the configured list when omitted.
        #[arg(long, value_delimiter = ',')]
        metric: Option<Vec<Metric>>,
    },
    /// Best-fit label map and pairwise differences across models.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        #[arg(long)]
        metric: Option<Metric>,
    },
    /// Hyperparameter grid search on a random voxel subset.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve the HTTP explorer.
    Explore {
        #[command(flatten)]
        common: Common,
        /// Address to listen on, e.g. 127.0.0.1:8765.
        #[arg(long)]
        bind: Option<String>,
        /// Directory of static viewer assets.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Write a synthetic dataset with a planted effect and a matching config.
    Synth {
        /// Destination directory.
        #[arg(long, short)]
        out: PathBuf,
        /// Volume dimensions as X,Y,Z.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        noise_sd: Option<f64>,
        /// Effect standard deviation. Overrides --snr.
        #[arg(long)]
        effect_sd: Option<f64>,
        /// Effect standard deviation as a multiple of the noise SD.
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long)]
        effect_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(common: &Common) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(dir) = &common.output {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { common, models } => {
            let cfg = load(&common)?;
            print_paths(&commands::cmd_fit(&cfg, models.as_deref())?);
        }
        Command::Evaluate { common, models, metric } => {
            let cfg = load(&common)?;
            print_paths(&commands::cmd_evaluate(&cfg, models.as_deref(), metric.as_deref())?);
        }
        Command::Compare { common, models, metric } => {
            let cfg = load(&common)?;
            let (paths, report) = commands::cmd_compare(&cfg, models.as_deref(), metric)?;
            print_paths(&paths);
            for (name, count) in report.legend.iter().zip(&report.label_counts) {
                eprintln!("{name}: {count} voxels");
            }
        }
        Command::Search { common, seed } => {
            let mut cfg = load(&common)?;
            if let (Some(seed), Some(search)) = (seed, cfg.search.as_mut()) {
                search.seed = seed;
            }
            let (paths, result, snippet) = commands::cmd_search(&cfg)?;
            print_paths(&paths);
            if result.shortfall {
                eprintln!("warning: fewer qualifying voxels than requested per iteration");
            }
            print!("{snippet}");
        }
        Command::Explore { common, bind, assets } => {
            let mut cfg = load(&common)?;
            if let Some(b) = bind {
                cfg.explore.bind = b;
            }
            if assets.is_some() {
                cfg.explore.assets = assets;
            }
            commands::cmd_explore(&cfg, |url| eprintln!("explorer listening on {url}"))?;
        }
        Command::Synth {
            out,
            dims,
            subjects,
            noise_sd,
            effect_sd,
            snr,
            effect_size,
            seed,
        } => {
            let mut spec = SynthSpec::default();
            if let Some(d) = dims {
                spec.dims = d
                    .try_into()
                    .map_err(|d: Vec<usize>| CliError::usage(format!("--dims needs 3 values, got {}", d.len())))?;
            }
            if let Some(n) = subjects {
                spec.n_subjects = n;
            }
            if let Some(v) = noise_sd {
                spec.noise_sd = v;
            }
            if let Some(r) = snr {
                spec.effect_sd = r * spec.noise_sd;
            }
            if let Some(v) = effect_sd {
                spec.effect_sd = v;
            }
            if let Some(v) = effect_size {
                spec.effect_size = v;
            }
            if let Some(v) = seed {
                spec.seed = v;
            }
            std::fs::create_dir_all(&out)?;
            print_paths(&commands::cmd_synth(&spec, &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Ok(n) = std::env::var("VOXFIT_THREADS") {
        match n.parse::<usize>() {
            Ok(n) => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            Err(_) => {
                eprintln!("error: VOXFIT_THREADS must be a non-negative integer, got '{n}'");
                return ExitCode::from(1);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
