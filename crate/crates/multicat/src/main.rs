use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::info;

use multicat::config::{ExperimentConfig, Variant};
use multicat::report::{read_report, run_experiment, Summary};

#[derive(Parser)]
#[command(version, about = "Run and evaluate the image/speech clustering pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `variant` in the config.
        #[arg(long)]
        variant: Option<Variant>,
        /// Overrides `seed` in the config.
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Runs once per seed, each into `<out>/seed-<n>`.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        seeds: Vec<u64>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Recompute and print the metrics of a report directory.
    Eval {
        #[arg(long)]
        report: PathBuf,
    },
}

fn print_summary(dir: &Path, s: &Summary) {
    let fmt = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.1}"));
    let last = s.final_metrics.as_ref();
    println!(
        "{}  variant={} seed={} gmm={} lda={} status={}",
        dir.display(),
        s.variant.map_or("custom", Variant::name),
        s.seed,
        fmt(last.and_then(|r| r.gmm_accuracy)),
        fmt(last.and_then(|r| r.lda_accuracy)),
        s.status,
    );
}

fn run(config: &Path, variant: Option<Variant>, seed: Option<u64>, seeds: Vec<u64>, out: &Path) -> anyhow::Result<()> {
    let mut base = ExperimentConfig::load(config)?;
    if variant.is_some() {
        base.variant = variant;
    }
    if let Some(s) = seed {
        base.seed = s;
    }
    let jobs: Vec<(u64, PathBuf)> = if seeds.is_empty() {
        vec![(base.seed, out.to_owned())]
    } else {
        seeds.iter().map(|s| (*s, out.join(format!("seed-{s}")))).collect()
    };
    let mut failed = 0;
    for (s, dir) in jobs {
        let mut cfg = base.clone();
        cfg.seed = s;
        info!("running seed {s} into {}", dir.display());
        match run_experiment(&cfg, &dir) {
            Ok(summary) => print_summary(&dir, &summary),
            Err(e) => {
                eprintln!("{}: {e:#}", dir.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} run(s) failed");
    }
    Ok(())
}

fn eval(dir: &Path) -> anyhow::Result<()> {
    let r = read_report(dir).with_context(|| format!("reading report {}", dir.display()))?;
    print_summary(dir, &r.summary);
    let fmt = |v: Option<f64>| v.map_or("-".to_owned(), |v| format!("{v:.2}"));
    println!("recomputed gmm_accuracy={} lda_accuracy={}", fmt(r.gmm_accuracy), fmt(r.lda_accuracy));
    println!("metric rows: {}", r.rows.len());
    for s in &r.stereotypes {
        println!(
            "class {:>2}  {:<16} members={:<5} majority={}",
            s.class,
            s.word,
            s.members,
            s.majority_digit
        );
    }
    if let Some(p) = r.summary.pca_proportions {
        println!("pca proportions {:.3} {:.3} (sum {:.3})", p[0], p[1], p[0] + p[1]);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            variant,
            seed,
            seeds,
            out,
        } => run(&config, variant, seed, seeds, &out),
        Command::Eval { report } => eval(&report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
