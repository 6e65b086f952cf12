use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ntd_runner::experiment::output_dir;
use ntd_runner::{diagnose, replicate_figure1, run_experiment, run_oracle, ExperimentSpec, RunnerError};

#[derive(Parser)]
#[command(name = "ntd", version, about = "Neural TD, Q-learning and minimax Q-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One training run (a single width and seed).
    Train(Common),
    /// Assumption probes selected by the [diagnostics] section.
    Diagnose(Common),
    /// Training over every width and seed of the [sweep] section.
    Sweep(Common),
    /// Training curves over one cycled trajectory plus the spectrum ratio per width.
    Figure1(Common),
    /// Exact tabular solutions.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's output_dir, then out/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces the seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent runs.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentSpec, PathBuf), RunnerError> {
        let mut spec = ExperimentSpec::load(&self.config)?;
        if let Some(s) = self.seed {
            spec = spec.with_seed(s);
        }
        let out = output_dir(&spec, self.out.as_deref());
        Ok((spec, out))
    }
}

/// Number of failed runs.
fn execute(command: &Command) -> Result<usize, RunnerError> {
    let common = match command {
        Command::Train(c) | Command::Diagnose(c) | Command::Sweep(c) | Command::Figure1(c) | Command::Oracle(c) => c,
    };
    if let Some(k) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| RunnerError::Invalid(format!("thread pool: {e}")))?;
    }
    let (spec, out) = common.load()?;
    match command {
        Command::Train(_) | Command::Sweep(_) => {
            if matches!(command, Command::Train(_)) && spec.sweep.widths.len() * spec.sweep.seeds.len() != 1 {
                return Err(RunnerError::Invalid(
                    "train runs one width and one seed; use --seed or the sweep subcommand".into(),
                ));
            }
            let bundle = run_experiment(&spec, &out)?;
            for r in &bundle.summary.runs {
                match (&r.metrics, &r.error) {
                    (Some(mt), _) => println!("m={} seed={} final_errors={:?}", r.m, r.seed, mt.final_errors),
                    (None, Some(e)) => eprintln!("m={} seed={} failed: {e}", r.m, r.seed),
                    _ => {}
                }
            }
            for w in &bundle.summary.widths {
                if let Some(fit) = &w.rate_fit {
                    println!("m={} slope={:.3} r2={:.3}", w.m, fit.slope, fit.r_squared);
                }
            }
            println!("wrote {}", out.display());
            Ok(bundle.failed_runs())
        }
        Command::Diagnose(_) => {
            let b = diagnose(&spec, &out)?;
            for s in &b.summary.spectrum {
                println!("m={} mean_ratio={:.4} std={:.4}", s.m, s.mean_ratio, s.std_ratio);
            }
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Figure1(_) => {
            let b = replicate_figure1(&spec, &out)?;
            for (c, r) in b.summary.curves.iter().zip(&b.summary.ratios) {
                println!("m={} tail_td_sq={:.4e} mean_ratio={:.4}", c.m, c.tail_td_sq, r.mean_ratio);
            }
            println!("wrote {}", out.display());
            Ok(b.summary.failed_runs)
        }
        Command::Oracle(_) => {
            run_oracle(&spec, &out)?;
            println!("wrote {}", out.join("oracle.json").display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} run(s) failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
