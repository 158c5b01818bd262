use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use resilience_core::ingest::{ingest_dir, IngestOptions, IngestReport, Workspace};
use resilience_core::pipeline::{analyze, analyze_records, check_config, k_sweep, Stage, StageTimings};
use resilience_core::report::{
    read_feature_records, summarize, workspace_digests, write_outputs, write_sweep, write_timings, K_SWEEP_CSV,
};
use resilience_core::synth::{generate_scenario, ScenarioSpec};
use resilience_core::{AnalysisConfig, Error, Result};

/// Ex-post community risk and resilience assessment.
///
/// Every option can also be set through an environment variable named
/// RESILIENCE_ followed by the option name in upper case.
#[derive(Parser)]
#[command(name = "resilience", version)]
struct Cli {
    /// Worker threads (0 = one per core). Outputs do not depend on it.
    #[arg(long, global = true, env = "RESILIENCE_WORKERS", default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an input bundle into a workspace.
    Ingest {
        #[arg(long, env = "RESILIENCE_INPUTS")]
        inputs: PathBuf,
        #[arg(long, env = "RESILIENCE_WORKSPACE")]
        workspace: PathBuf,
    },
    /// Compute features, cluster and write all outputs.
    Run {
        #[command(flatten)]
        analysis: AnalysisArgs,
        /// First stage to execute; `cluster` reuses features.csv in --out.
        #[arg(long, env = "RESILIENCE_STAGE", default_value = "features")]
        stage: Stage,
    },
    /// Inertia and silhouette over a range of k.
    SweepK {
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[arg(long, env = "RESILIENCE_K_MIN", default_value_t = 2)]
        k_min: usize,
        #[arg(long, env = "RESILIENCE_K_MAX", default_value_t = 8)]
        k_max: usize,
    },
    /// Generate a synthetic input bundle with planted archetypes.
    Synth {
        /// Scenario spec (TOML or JSON); the built-in fixture when omitted.
        #[arg(long, env = "RESILIENCE_SPEC")]
        spec: Option<PathBuf>,
        #[arg(long, env = "RESILIENCE_OUT")]
        out: PathBuf,
        #[arg(long, env = "RESILIENCE_SEED")]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct AnalysisArgs {
    #[arg(long, env = "RESILIENCE_WORKSPACE")]
    workspace: PathBuf,
    /// Analysis config (TOML or JSON); the defaults when omitted.
    #[arg(long, env = "RESILIENCE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "RESILIENCE_OUT")]
    out: PathBuf,
    /// Overrides rng_seed from the config.
    #[arg(long, env = "RESILIENCE_SEED")]
    seed: Option<u64>,
    /// Overrides k_clusters from the config.
    #[arg(long, env = "RESILIENCE_K")]
    k: Option<usize>,
    /// Overrides restarts from the config; the best-inertia run is kept.
    #[arg(long, env = "RESILIENCE_RESTARTS")]
    restarts: Option<usize>,
}

impl AnalysisArgs {
    fn config(&self) -> Result<AnalysisConfig> {
        let mut cfg = match &self.config {
            Some(p) => AnalysisConfig::from_path(p)?,
            None => AnalysisConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.rng_seed = seed;
        }
        if let Some(k) = self.k {
            cfg.k_clusters = k;
        }
        if let Some(r) = self.restarts {
            cfg.restarts = r;
        }
        check_config(&cfg)?;
        Ok(cfg)
    }
}

fn print_ingest_report(report: &IngestReport) {
    for (name, f) in &report.files {
        println!("{name}: {} rows, {} accepted, {} rejected", f.total_rows, f.accepted, f.rejected);
        for r in &f.rejections {
            println!("  row {}: {}", r.row, r.reason);
        }
    }
}

fn cmd_ingest(inputs: &Path, workspace: &Path) -> Result<()> {
    let ws = ingest_dir(inputs, &IngestOptions::default())?;
    ws.save(workspace)?;
    print_ingest_report(&ws.report);
    println!("{} CBGs, {} rejected rows", ws.cbgs.len(), ws.report.total_rejected());
    Ok(())
}

fn cmd_run(args: &AnalysisArgs, stage: Stage) -> Result<()> {
    let cfg = args.config()?;
    let start = Instant::now();
    let ws = Workspace::load(&args.workspace)?;
    let mut timings = StageTimings::default();
    timings.record("load_workspace", start.elapsed());
    let analysis = match stage {
        Stage::Features => {
            let (a, t) = analyze(&ws, &cfg)?;
            timings.0.extend(t.0);
            a
        }
        Stage::Cluster => {
            let records = read_feature_records(&args.out)?;
            analyze_records(records, &ws, &cfg, &mut timings)?
        }
    };
    let start = Instant::now();
    let manifest = write_outputs(&args.out, &analysis, &ws, &cfg, workspace_digests(&args.workspace)?)?;
    timings.record("write_outputs", start.elapsed());
    write_timings(&args.out, &timings)?;
    summarize(&analysis, std::io::stdout()).map_err(|e| Error::io("<stdout>", e))?;
    println!("wrote {} files to {}", manifest.outputs.len() + 1, args.out.display());
    Ok(())
}

fn cmd_sweep(args: &AnalysisArgs, k_min: usize, k_max: usize) -> Result<()> {
    let cfg = args.config()?;
    let ws = Workspace::load(&args.workspace)?;
    let rows = k_sweep(&ws, &cfg, k_min, k_max)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_sweep(&args.out.join(K_SWEEP_CSV), &rows)?;
    for r in &rows {
        println!("k={} inertia={:.6} silhouette={:.6}", r.k, r.inertia, r.silhouette);
    }
    Ok(())
}

fn cmd_synth(spec: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec = match spec {
        Some(p) => ScenarioSpec::from_path(p)?,
        None => ScenarioSpec::default_fixture(),
    };
    if let Some(seed) = seed {
        spec.rng_seed = seed;
    }
    let truth = generate_scenario(&spec, out)?;
    println!("wrote {} CBGs to {}", truth.cbgs.len(), out.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { inputs, workspace } => cmd_ingest(inputs, workspace),
        Command::Run { analysis, stage } => cmd_run(analysis, *stage),
        Command::SweepK { analysis, k_min, k_max } => cmd_sweep(analysis, *k_min, *k_max),
        Command::Synth { spec, out, seed } => cmd_synth(spec.as_deref(), out, *seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
