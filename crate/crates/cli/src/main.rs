use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cofee_core::config::{preset_names, ExperimentConfig};
use cofee_core::engine::trace::write_jsonl;
use cofee_core::harness::{parse_policies, parse_seeds, run_matrix};
use cofee_core::metrics::{emit_report, median, summary_table};

#[derive(Parser)]
#[command(name = "cofee", version, about = "Simulate data-triggered dataflows on edge, fog and cloud resources")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a configuration under one or more policies and seeds.
    Run(RunArgs),
    /// List the bundled presets.
    Presets,
    /// Print the DAGs a configuration generates.
    Dags {
        #[arg(long, env = "COFEE_CONFIG")]
        config: String,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Preset name or path to a JSON config file.
    #[arg(long, env = "COFEE_CONFIG")]
    config: String,
    /// Comma-separated: cofee, cloud-only, lfp.
    #[arg(long, env = "COFEE_POLICY", default_value = "cofee")]
    policy: String,
    /// A single seed.
    #[arg(long, env = "COFEE_SEED", conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive seed range, e.g. 1..20.
    #[arg(long, env = "COFEE_SEEDS")]
    seeds: Option<String>,
    /// Output directory for metrics.csv and summary.txt.
    #[arg(long, env = "COFEE_OUT")]
    out: PathBuf,
    /// Also write one JSONL event trace per run.
    #[arg(long, env = "COFEE_TRACE")]
    trace: bool,
    /// Worker threads; defaults to one per core.
    #[arg(long, env = "COFEE_THREADS")]
    threads: Option<usize>,
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let sc = cfg.build()?;
    let policies = parse_policies(&args.policy).map_err(anyhow::Error::msg)?;
    let seeds = match (&args.seed, &args.seeds) {
        (Some(s), _) => vec![*s],
        (None, Some(r)) => parse_seeds(r).map_err(anyhow::Error::msg)?,
        (None, None) => vec![1],
    };
    if args.threads == Some(0) {
        anyhow::bail!("--threads must be at least 1");
    }
    let runs = run_matrix(&sc, &policies, &seeds, args.threads, args.trace)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if args.trace {
        for (p, s, o) in &runs {
            let path = args.out.join(format!("trace-{p}-{s}.jsonl"));
            let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            write_jsonl(&mut w, &o.trace)?;
        }
    }
    let reports: Vec<_> = runs.into_iter().map(|(_, _, o)| o.report).collect();
    emit_report(&reports, &args.out).with_context(|| format!("writing to {}", args.out.display()))?;
    print!("{}", summary_table(&reports));
    Ok(())
}

fn dags(config: &str) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let dags = cfg.dag_specs()?;
    let speed = cfg.tiers.edge.speed;
    let mut cps = Vec::new();
    let mut works = Vec::new();
    println!("{:<8} {:>5} {:>9} {:>9} {:>9} {:>9}", "dag", "tasks", "pipelines", "critical", "unrolled", "deadline");
    for d in &dags {
        let chains = d.unroll()?;
        let cp = d.critical_path(speed)?;
        let work: f64 = chains.iter().flat_map(|c| d.chain_thetas(c)).sum::<f64>() / speed;
        println!(
            "{:<8} {:>5} {:>9} {:>9.1} {:>9.1} {:>9.1}",
            d.id,
            d.tasks.len(),
            chains.len(),
            cp,
            work,
            d.deadline
        );
        cps.push(cp);
        works.push(work);
    }
    println!(
        "median critical path {:.1} s, median unrolled work {:.1} s, mean unrolled work {:.1} s",
        median(&cps),
        median(&works),
        works.iter().sum::<f64>() / works.len() as f64
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Presets => {
            for n in preset_names() {
                println!("{n}");
            }
            Ok(())
        }
        Cmd::Dags { config } => dags(&config),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
