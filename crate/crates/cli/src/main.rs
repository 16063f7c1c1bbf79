use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use gmtaylor::config::{ExperimentConfig, SweepAxis};
use gmtaylor::library::SplitLibrary;
use gmtaylor::output::write_table;
use gmtaylor::pipeline::{self, mc_reference, run_estimate, run_sweep, tv_check};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gmtaylor", version, about = "Gaussian-mixture Taylor risk estimates")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file for `split`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one-dimensional splits and write a split library.
    Split {
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,7,9,11,13,15,17,19,21,23,25,27,29,31,33,35,37,39")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
    },
    /// Mixture and single Taylor estimates for one configuration.
    Estimate,
    /// Monte Carlo reference for one configuration.
    Mc {
        /// Overrides the configured sample count.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Estimates over a range of one parameter.
    Sweep {
        #[arg(long, value_enum)]
        axis: Option<SweepAxis>,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Compare numeric total variation of 2D splits with the 1D values.
    TvCheck {
        #[arg(long, value_delimiter = ',', default_value = "3,5,7")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
    },
    /// Finite-difference check of gradient and Hessian actions.
    CheckDerivatives {
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
    },
}

#[derive(Serialize)]
struct Meta<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    seed: u64,
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    details: T,
}

fn meta<'a, T: Serialize>(command: &'a str, cfg: &'a ExperimentConfig, details: T) -> Meta<'a, T> {
    Meta {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: cfg,
        details,
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Split { n, p } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("splits.json"));
            let lib = SplitLibrary::generate(n, *p)?;
            for s in &lib.splits {
                println!("N = {:2}  tv = {:.3e}  restarts = {}", s.len(), s.tv_error(), s.info().restarts);
            }
            lib.write(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Estimate => {
            let cfg = load_config(cli)?;
            let dir = cfg.output.dir.clone();
            match run_estimate(&cfg) {
                Ok(run) => {
                    print_records(&run.records);
                    let path = write_table(&dir, "estimate", &run.records, &meta("estimate", &cfg, &run.info))?;
                    println!("wrote {}", path.display());
                }
                Err(e) => {
                    if !e.partial.is_empty() {
                        let path = write_table(&dir, "estimate.partial", &e.partial, &meta("estimate", &cfg, ()))?;
                        eprintln!("partial results in {}", path.display());
                    }
                    return Err(anyhow!("{e}"));
                }
            }
        }
        Command::Mc { samples } => {
            let mut cfg = load_config(cli)?;
            if let Some(s) = samples {
                cfg.mc.samples = *s;
            }
            let (summary, cache) = mc_reference(&cfg).context("stage `mc`")?;
            for e in &summary.estimates {
                println!(
                    "{:5} {:>8} {:.6e} ± {:.2e}",
                    e.kind.as_str(),
                    e.alpha.map(|a| a.to_string()).unwrap_or_default(),
                    e.value,
                    e.std_error.unwrap_or(0.0)
                );
            }
            #[derive(Serialize)]
            struct McMeta<'a> {
                failures: usize,
                second_moment: f64,
                solves: gmtaylor_core::model::SolveCounter,
                cache_file: Option<&'a Path>,
            }
            let cache_file = pipeline::mc_cache_path(&cfg);
            let details = McMeta {
                failures: summary.failures,
                second_moment: summary.second_moment,
                solves: cache.solves,
                cache_file: cache_file.as_deref(),
            };
            let path = write_table(&cfg.output.dir, "mc", &summary.estimates, &meta("mc", &cfg, details))?;
            println!("wrote {}", path.display());
        }
        Command::Sweep { axis, values } => {
            let cfg = load_config(cli)?;
            let axis = axis
                .or(cfg.sweep.axis)
                .ok_or_else(|| anyhow!("no sweep axis given"))?;
            let values = if values.is_empty() { cfg.sweep.values.clone() } else { values.clone() };
            let rows = run_sweep(&cfg, axis, &values).context("stage `sweep`")?;
            let name = format!("sweep-{}", serde_json::to_value(axis)?.as_str().unwrap_or("axis"));
            let path = write_table(&cfg.output.dir, &name, &rows, &meta("sweep", &cfg, ()))?;
            println!("wrote {} ({} rows)", path.display(), rows.len());
        }
        Command::TvCheck { n, p } => {
            let cfg = load_config(cli)?;
            let rows = tv_check(cfg.seed, n, *p).context("stage `tv-check`")?;
            for r in &rows {
                println!(
                    "N = {:2}  numeric {:.4e}  1d {:.4e}  diff {:.1e}  recursive {:.4e} vs {:.4e}",
                    r.n, r.tv_numeric, r.tv_1d, r.abs_diff, r.recursive_numeric, r.recursive_predicted
                );
            }
            let path = write_table(&cfg.output.dir, "tv-check", &rows, &meta("tv-check", &cfg, ()))?;
            println!("wrote {}", path.display());
        }
        Command::CheckDerivatives { step } => {
            let cfg = load_config(cli)?;
            let r = pipeline::derivative_report(&cfg, *step).context("stage `check-derivatives`")?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            let path = write_table(&cfg.output.dir, "derivatives", &[r.check], &meta("check-derivatives", &cfg, &r))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn print_records(records: &[pipeline::Record]) {
    for r in records {
        let alpha = r.alpha.map(|a| format!("{a}")).unwrap_or_default();
        let err = r.rel_error.map(|e| format!("{:.3e}", e)).unwrap_or_default();
        println!(
            "{:11} N={:2} {:4} {:6} {:.6e}  rel.err {}",
            r.method, r.n_mix, r.kind, alpha, r.value, err
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gmtaylor: {e:#}");
            ExitCode::FAILURE
        }
    }
}
