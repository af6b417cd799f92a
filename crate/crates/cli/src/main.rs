//! Command-line front end: `evolve`, `check-id`, `convergence`,
//! `diagnose <snapshot>`.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use eymwave_core::config::RunConfig;
use eymwave_core::diagnostics::WeightSpec;
use eymwave_core::driver;
use eymwave_core::gauge::{eym_residual, lorenz_monitor, ym_divergence_residual};
use eymwave_core::geometry::wave_gauge_monitor;
use eymwave_core::report;

#[derive(Parser)]
#[command(name = "eymwave", version, about = "Wave-gauge evolution and diagnostics for coupled Einstein-Yang-Mills systems")]
struct Cli {
    /// Worker threads for the data-parallel kernels (performance only;
    /// results are bit-identical for any count).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Hard-fail when the initial data exceeds the constraint gate.
    #[arg(long, global = true)]
    strict: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build initial data, evolve to t_end, and write CSV/summary/snapshot.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides [output].dir and EYMWAVE_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print constraint residual norms and gauge monitors at t = 0.
    CheckId {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the config at doubling resolutions and fit convergence orders.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Recompute monitors and diagnostics on a stored snapshot.
    Diagnose {
        snapshot: PathBuf,
        /// Weight exponent for the radial diagnostics.
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
    },
}

fn init_threads(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(k) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

fn outdir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os("EYMWAVE_OUT").map(PathBuf::from))
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_threads(cli.threads);
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Evolve { config, out } => {
            let cfg = RunConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let dir = outdir(out, &cfg);
            let outputs = driver::run_evolve(&cfg, Some(&dir), cli.strict)?;
            for note in &outputs.report.notes {
                println!("note: {note}");
            }
            println!(
                "evolved to t = {:.6}; {} samples; max |Lambda| = {:.3e}, max |Gamma| = {:.3e}",
                outputs.final_state.t,
                outputs.report.rows.len(),
                outputs.report.max_lambda(),
                outputs.report.max_gamma(),
            );
            if let Some(p) = &outputs.csv_path {
                println!("csv: {}", p.display());
            }
            if let Some(p) = &outputs.summary_path {
                println!("summary: {}", p.display());
            }
            if let Some(p) = &outputs.snapshot_path {
                println!("snapshot: {}", p.display());
            }
            if let Some(m) = outputs.failed_monitor {
                eprintln!("monitor failed: {m}");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckId { config } => {
            let cfg = RunConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let out = driver::run_check_id(&cfg, cli.strict)?;
            println!(
                "constraints (pre-relax):  hamiltonian = {:.6e}  momentum = {:.6e}  gauss = {:.6e}",
                out.pre_relax.0, out.pre_relax.1, out.pre_relax.2
            );
            if let Some(post) = out.post_relax {
                println!(
                    "constraints (post-relax): hamiltonian = {:.6e}  momentum = {:.6e}  gauss = {:.6e}",
                    post.0, post.1, post.2
                );
            }
            println!(
                "gauge monitors at t=0:    |Lambda| = {:.6e}  |Gamma| = {:.6e}",
                out.lambda_linf, out.gamma_linf
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Convergence { config, levels } => {
            let cfg = RunConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let out = driver::run_convergence(&cfg, levels)?;
            println!("points  wave_error    max_lambda    max_gamma     max_eym");
            for l in &out.levels {
                println!(
                    "{:6}  {}  {:.6e}  {:.6e}  {:.6e}",
                    l.points,
                    l.wave_error
                        .map(|e| format!("{e:.6e}"))
                        .unwrap_or_else(|| "     --     ".into()),
                    l.max_lambda,
                    l.max_gamma,
                    l.max_eym
                );
            }
            if out.degenerate {
                println!("orders: exact (all monitors at machine level)");
            } else {
                let orders: Vec<String> =
                    out.fitted_orders.iter().map(|o| format!("{o:.2}")).collect();
                println!("fitted orders: {}", orders.join(", "));
            }
            Ok(if out.pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Diagnose { snapshot, gamma } => {
            let state = report::load_snapshot(&snapshot)
                .with_context(|| format!("loading {}", snapshot.display()))?;
            let lm = lorenz_monitor(&state, None)?;
            let wg = wave_gauge_monitor(&state.h, &state.pi, state.t, None)?;
            let (ham, mom, gauss) = report::constraint_norms(&state)?;
            println!("t = {:.6}", state.t);
            println!("|Lambda|_inf = {:.6e}", lm.linf);
            println!("|Gamma|_inf  = {:.6e} (identity gap {:.3e})", wg.linf, wg.identity_gap);
            println!("constraints: hamiltonian = {ham:.6e}  momentum = {mom:.6e}  gauss = {gauss:.6e}");
            println!("eym residual = {:.6e}", eym_residual(&state)?.linf());
            println!("ym divergence = {:.6e}", ym_divergence_residual(&state)?.linf());
            if state.grid.boundary == eymwave_core::Boundary::Sommerfeld {
                let w = WeightSpec::new(gamma)?;
                let e = eymwave_core::diagnostics::weighted_energy(&state, 0, &w)?;
                println!("weighted E_0 = {:.6e}", e.values[0]);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
