use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use consensus_core::design::{self, GainDesign, Kappa2Method, SweepOptions};
use consensus_core::graphdyn::{self, PrecompactConfig};
use consensus_core::linalg;
use consensus_core::nalgebra::DMatrix;
use consensus_core::pipeline::{self, RunOptions};
use consensus_core::scenario::{self, matrix, rows_of, DesignSpec, ScenarioConfig};
use consensus_core::Result;

#[derive(Parser)]
#[command(
    name = "consensus",
    version,
    about = "Consensus of linear agents over time-varying graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design, simulate and analyze one or more scenarios.
    Run {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Scenarios run in parallel; each γ-sweep also uses this many threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Scan windows for joint (δ, T)-connectivity.
    CheckConnectivity {
        scenario: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        window: f64,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        stride: Option<f64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Riccati gain at a given κ₁, or a γ-sweep.
    DesignGain {
        scenario: PathBuf,
        #[arg(long, conflicts_with = "sweep")]
        kappa1: Option<f64>,
        /// Sweep γ_k = 1/k for k up to this value.
        #[arg(long)]
        sweep: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check precompactness certificates of the graph schedule.
    ValidateTopology {
        scenario: PathBuf,
        #[arg(long)]
        horizon: f64,
    },
    /// Run a bundled example scenario.
    Examples {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        which: u8,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run_one(cfg: &ScenarioConfig, out: &Path, jobs: usize) -> Result<()> {
    let res = pipeline::run(cfg, out, &RunOptions { jobs })?;
    println!(
        "{}: {} (sufficient conditions {}), artifacts in {}",
        cfg.name,
        res.verdict.classification.as_str(),
        if res.checklist.overall { "met" } else { "not met" },
        out.display()
    );
    Ok(())
}

fn run_many(paths: &[PathBuf], out: &Path, jobs: usize) -> Result<()> {
    let configs = paths
        .iter()
        .map(|p| scenario::load_scenario(p))
        .collect::<Result<Vec<_>>>()?;
    if configs.len() == 1 {
        return run_one(&configs[0], out, jobs);
    }
    let dirs: Vec<PathBuf> = configs.iter().map(|c| out.join(&c.name)).collect();
    let jobs = jobs.max(1);
    let mut first_err = None;
    for (cfgs, ds) in configs.chunks(jobs).zip(dirs.chunks(jobs)) {
        let results: Vec<Result<()>> = std::thread::scope(|s| {
            let handles: Vec<_> = cfgs
                .iter()
                .zip(ds)
                .map(|(c, d)| s.spawn(move || run_one(c, d, 1)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        for r in results {
            if let Err(e) = r {
                eprintln!("error: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn check_connectivity(
    path: &Path,
    delta: f64,
    window: f64,
    horizon: f64,
    stride: Option<f64>,
    out: &Path,
) -> Result<()> {
    let cfg = scenario::load_scenario(path)?;
    let stride = stride.unwrap_or(window / 4.0);
    let report = graphdyn::check_joint_connectivity(&cfg.graph, delta, window, horizon, stride)?;
    std::fs::create_dir_all(out)?;
    report.write_csv(&cfg.graph, BufWriter::new(File::create(out.join("windows.csv"))?))?;
    let failing: Vec<f64> = report.failing_windows().map(|w| w.window_start).collect();
    print_json(&serde_json::json!({
        "scenario": cfg.name,
        "delta": delta,
        "window": window,
        "horizon": horizon,
        "stride": stride,
        "windows": report.windows.len(),
        "failing_windows": failing.len(),
        "first_failing_start": failing.first(),
        "jointly_connected": report.all_connected,
    }))
}

fn design_gain(path: &Path, kappa1: Option<f64>, sweep: Option<usize>, out: &Path, jobs: usize) -> Result<()> {
    let cfg = scenario::load_scenario(path)?;
    let sc = cfg.resolve()?;
    let plant = &sc.plant;
    let n = plant.n();
    let window = cfg.analysis.window;
    let grid = pipeline::gram_grid(&sc, window);
    let design: GainDesign = if let Some(k_max) = sweep {
        let mut so = SweepOptions::new(window, k_max);
        so.grid = grid;
        so.jobs = jobs.max(1);
        let res = design::algorithm1_search(plant, sc.graph(), &so)?;
        std::fs::create_dir_all(out)?;
        res.sweep
            .write_csv(BufWriter::new(File::create(out.join("sweep.csv"))?))?;
        res.design
    } else if let Some(k1) = kappa1 {
        let q = match &cfg.design {
            DesignSpec::Riccati { q: Some(rows), .. } => matrix("design.q", rows, (Some(n), Some(n)))?,
            _ => DMatrix::identity(n, n),
        };
        let mut d = GainDesign::riccati(plant, k1, &q)?;
        d.attach_kappa2(design::kappa2_for_design(
            plant,
            &d.p,
            &d.k,
            sc.graph(),
            &grid,
            Kappa2Method::Conservative,
        )?);
        d
    } else {
        pipeline::build_design(&sc, &RunOptions { jobs })?.design
    };
    print_json(&serde_json::json!({
        "scenario": cfg.name,
        "kind": design.kind,
        "p": rows_of(&design.p),
        "p_eigenvalues": linalg::sym_eigenvalues(&design.p),
        "k": rows_of(&design.k),
        "kappa1": design.kappa1,
        "kappa2": design.kappa2,
        "sync_index": design.sync_index,
        "care_residual": design.care_residual,
    }))
}

fn validate_topology(path: &Path, horizon: f64) -> Result<()> {
    let cfg = scenario::load_scenario(path)?;
    let report = graphdyn::validate_precompactness(&cfg.graph, horizon, &PrecompactConfig::default())?;
    print_json(&report)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenarios, out, jobs } => run_many(&scenarios, &out, jobs),
        Command::CheckConnectivity {
            scenario,
            delta,
            window,
            horizon,
            stride,
            out,
        } => check_connectivity(&scenario, delta, window, horizon, stride, &out),
        Command::DesignGain {
            scenario,
            kappa1,
            sweep,
            out,
            jobs,
        } => design_gain(&scenario, kappa1, sweep, &out, jobs),
        Command::ValidateTopology { scenario, horizon } => validate_topology(&scenario, horizon),
        Command::Examples { which, out, jobs } => run_one(&scenario::bundled(which)?, &out, jobs),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
