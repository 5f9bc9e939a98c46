use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use cramnet::cram::CompressionPlan;
use cramnet::graph::{count_flops, count_params, layer_costs};
use cramnet::report::{
    emit_report, flop_ratio, param_ratio, run_experiment, ExperimentConfig, RunRecord, Seeds, Stage, METRICS_FILE,
};
use cramnet::{ArchitectureSpec, Error};

/// Layer-wise teacher-student network compression.
#[derive(Parser)]
#[command(name = "cramnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of the CIFAR-10 binary batches.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage listed in the config.
    Run(Common),
    /// Train the baseline (teacher) network.
    Train(Common),
    /// Compress the teacher according to the config's plan.
    Compress(Common),
    /// Fine-tune the compressed student end to end.
    Finetune(Common),
    /// Evaluate teacher and student and write the metrics.
    Eval(Common),
    /// Print parameter and multiply-accumulate counts.
    Count {
        /// Experiment config; its architecture and plan are counted.
        #[arg(long, conflicts_with = "arch")]
        config: Option<PathBuf>,
        /// Architecture file to count.
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Reference architecture for the ratios.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Collect finished runs into report.md and points.csv.
    Report {
        /// Experiment configs whose run directories are collected.
        #[arg(long)]
        config: Vec<PathBuf>,
        /// Run directories holding a metrics file.
        runs: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn is_config_error(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<Error>(),
        Some(Error::Config(_) | Error::InvalidPlan(_) | Error::InvalidSpec(_) | Error::Json(_))
    )
}

fn load_config(common: &Common, stages: Option<Vec<Stage>>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seeds = Seeds::uniform(seed);
    }
    if let Some(dir) = &common.data_dir {
        cfg = cfg.with_data_dir(dir.clone());
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    if let Some(stages) = stages {
        cfg.stages = stages;
    }
    Ok(cfg)
}

fn run(common: &Common, stages: Option<Vec<Stage>>) -> anyhow::Result<u8> {
    let cfg = load_config(common, stages)?;
    let outcome = run_experiment(&cfg)?;
    for s in &outcome.manifest.stages {
        let detail = s.error.as_deref().or(s.note.as_deref()).unwrap_or("");
        println!("{:<10} {:?} {detail}", s.stage, s.status);
    }
    if let Some(r) = &outcome.record {
        let m = &r.metrics;
        println!(
            "params {:.2}%  flops {:.2}%  delta_a {}",
            m.param_ratio,
            m.flop_ratio,
            m.delta_a.map_or("-".into(), |d| format!("{d:+.2}"))
        );
    }
    println!("run directory: {}", outcome.run_dir.display());
    Ok(outcome.exit_code() as u8)
}

fn print_counts(name: &str, spec: &ArchitectureSpec) -> anyhow::Result<()> {
    println!("{name}");
    println!("  {:<16} {:<16} {:>14} {:>16}", "layer", "output", "params", "MACs");
    for c in layer_costs(spec)? {
        println!(
            "  {:<16} {:<16} {:>14} {:>16}",
            c.name,
            format!("{:?}", c.output_shape),
            c.params(),
            c.macs
        );
    }
    println!("  total params {}  total MACs {}", count_params(spec)?, count_flops(spec)?);
    Ok(())
}

fn count(config: Option<PathBuf>, arch: Option<PathBuf>, baseline: Option<PathBuf>) -> anyhow::Result<u8> {
    let (spec, reference) = match (config, arch) {
        (Some(c), _) => {
            let cfg = ExperimentConfig::load(&c)?;
            let base = ArchitectureSpec::load(&cfg.arch)?;
            match &cfg.plan {
                Some(p) => (CompressionPlan::load(p)?.apply(&base)?, Some(base)),
                None => (base, None),
            }
        }
        (None, Some(a)) => (ArchitectureSpec::load(&a)?, None),
        (None, None) => anyhow::bail!(Error::Config("count needs --config or --arch".into())),
    };
    let reference = match baseline {
        Some(b) => Some(ArchitectureSpec::load(&b)?),
        None => reference,
    };
    if let Some(r) = &reference {
        print_counts("reference", r)?;
    }
    print_counts("architecture", &spec)?;
    if let Some(r) = &reference {
        println!(
            "% of parameters {:.2}  % of FLOPs {:.2}",
            param_ratio(&spec, r)?,
            flop_ratio(&spec, r)?
        );
    }
    Ok(0)
}

fn report(configs: Vec<PathBuf>, mut runs: Vec<PathBuf>, out_dir: &Path) -> anyhow::Result<u8> {
    for c in configs {
        runs.push(ExperimentConfig::load(&c)?.run_dir());
    }
    if runs.is_empty() {
        anyhow::bail!(Error::Config("report needs at least one run".into()));
    }
    let records = runs
        .iter()
        .map(|r| RunRecord::load(r.join(METRICS_FILE)).with_context(|| format!("run {}", r.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let (md, csv) = emit_report(&records, out_dir)?;
    println!("{}\n{}", md.display(), csv.display());
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(c) => run(&c, None),
        Command::Train(c) => run(&c, Some(vec![Stage::Train])),
        Command::Compress(c) => run(&c, Some(vec![Stage::Compress])),
        Command::Finetune(c) => run(&c, Some(vec![Stage::Finetune])),
        Command::Eval(c) => run(&c, Some(vec![Stage::Evaluate])),
        Command::Count { config, arch, baseline } => count(config, arch, baseline),
        Command::Report { config, runs, out_dir } => report(config, runs, &out_dir),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}
