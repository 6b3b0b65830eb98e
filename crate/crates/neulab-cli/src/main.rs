//! Config-driven entry point: build meshes, run named experiments, emit
//! machine-readable reports.
//!
//! Exit codes: 0 all checks passed, 1 at least one experiment check
//! failed, 2 configuration or validation error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use neulab::config::{build_mesh, MeshConfig, RunConfig};
use neulab::experiments::{self, RunParams};
use neulab::report::{config_hash, EstimateReport};

#[derive(Parser)]
#[command(name = "neulab", version, about = "Neumann problem verification laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiments named in a JSON config file.
    Run {
        config: PathBuf,
        /// Worker threads for experiment-level parallelism.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory root (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Random seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the experiment registry.
    List,
    /// Build a mesh from a builder config and write it as JSON.
    Mesh {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for e in experiments::registry() {
                println!("{:24} {}", e.name, e.description);
                println!("{:24}   exercises: {}", "", e.anchor);
            }
            ExitCode::SUCCESS
        }
        Command::Mesh { config, out } => match run_mesh(&config, &out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(err) => {
                eprintln!("error: {err}");
                ExitCode::from(2)
            }
        },
        Command::Run {
            config,
            jobs,
            out,
            seed,
        } => match run_experiments(&config, jobs, out, seed) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(err) => {
                eprintln!("error: {err}");
                ExitCode::from(2)
            }
        },
    }
}

fn run_mesh(config: &PathBuf, out: &PathBuf) -> neulab::Result<()> {
    let text = std::fs::read_to_string(config)?;
    let cfg: MeshConfig = serde_json::from_str(&text)
        .map_err(|e| neulab::Error::Config(format!("mesh config: {e}")))?;
    let mesh = build_mesh(&cfg)?;
    let doc = neulab::mesh::mesh_to_json(&mesh)?;
    std::fs::write(out, doc)?;
    println!(
        "wrote {} ({} vertices, {} cells, hash {})",
        out.display(),
        mesh.num_vertices(),
        mesh.num_cells(),
        &mesh.content_hash()[..12]
    );
    Ok(())
}

fn run_experiments(
    config: &PathBuf,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> neulab::Result<bool> {
    let text = std::fs::read_to_string(config)?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = seed {
        cfg.seed = Some(seed);
    }
    // validation happens before any compute or directory creation
    let names = cfg.experiment_names()?;
    if let Some(problem) = &cfg.problem {
        neulab::config::build_problem(problem)?;
    }

    if let Some(jobs) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| neulab::Error::Config(format!("thread pool: {e}")))?;
    }

    let defaults = RunParams::default();
    let params = RunParams {
        resolution: cfg.resolution.unwrap_or(defaults.resolution),
        refinement_levels: cfg.refinement_levels.unwrap_or(defaults.refinement_levels),
        seed: cfg.seed.unwrap_or(defaults.seed),
    };

    let out_root = out
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let hash = config_hash(&serde_json::json!({
        "config": cfg.canonical_json(),
        "params": {"resolution": params.resolution,
                    "refinement_levels": params.refinement_levels,
                    "seed": params.seed},
    }));
    let run_dir = out_root.join(format!("run-{hash}"));
    std::fs::create_dir_all(&run_dir)?;

    let started = std::time::Instant::now();
    use rayon::prelude::*;
    let reports: Vec<EstimateReport> = names
        .par_iter()
        .map(|name| {
            let exp = experiments::find(name).expect("validated above");
            match (exp.run)(&params) {
                Ok(report) => report,
                Err(err) => {
                    let mut failed = EstimateReport::new(name, params.seed);
                    failed.check_true(&format!("runner error: {err}"), false);
                    failed
                }
            }
        })
        .collect();

    let mut all_passed = true;
    for report in &reports {
        report.write_to(&run_dir)?;
        let status = if report.passed { "pass" } else { "FAIL" };
        println!("[{status}] {}", report.experiment);
        if !report.passed {
            for c in report.checks.iter().filter(|c| !c.passed) {
                println!(
                    "       failed check: {} ({} {} {})",
                    c.name, c.measured, c.direction, c.threshold
                );
            }
        }
        all_passed &= report.passed;
    }

    if let Some(problem) = &cfg.problem {
        let spec = neulab::config::build_problem(problem)?;
        let sol = neulab::operator::solve_neumann(&spec)?;
        let (y_norm, w_norm) = neulab::fe::sobolev_norms(&sol.u)?;
        let mut report = EstimateReport::new("custom-problem", params.seed);
        report.mesh_hash = Some(spec.mesh.content_hash());
        report.quantity("relative_residual", sol.relative_residual);
        report.quantity("y12_norm", y_norm);
        report.quantity("w12_norm", w_norm);
        report.quantity("max_abs", sol.u.max_abs());
        if let Some(mu) = sol.multiplier {
            report.quantity("mean_multiplier", mu);
        }
        report.check_le("relative_residual", sol.relative_residual, 1e-10);
        report.write_to(&run_dir)?;
        let status = if report.passed { "pass" } else { "FAIL" };
        println!("[{status}] custom-problem");
        all_passed &= report.passed;
    }

    // timestamps live outside the deterministic reports
    let meta = serde_json::json!({
        "config_hash": hash,
        "experiments": names,
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "finished_unix_ms": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0),
    });
    let mut f = std::fs::File::create(run_dir.join("metadata.json"))?;
    f.write_all(serde_json::to_string_pretty(&meta)?.as_bytes())?;
    println!("reports in {}", run_dir.display());
    Ok(all_passed)
}
