//! Run orchestration: config -> initial data -> evolution -> report. The CLI
//! is a thin wrapper over these entry points, and the acceptance suite calls
//! them directly.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::diagnostics::{
    all_generators, decay_fit, groenwall_monitor, hardy_check_snapshot, is_exercised, ks_check,
    weighted_energy, FitOutcome, WeightSpec,
};
use crate::evolution::{evolve, EvolutionConfig, SpacetimeState};
use crate::gauge::{eym_residual, lorenz_monitor, ym_divergence_residual};
use crate::geometry::wave_gauge_monitor;
use crate::grid::Boundary;
use crate::initial::{build_hyperbolic_data, relax_hamiltonian, BuildOptions};
use crate::report::{self, constraint_norms, DiagRow, DiagnosticsReport};
use crate::{Error, Result};

/// Everything a finished run hands back.
pub struct RunOutputs {
    pub report: DiagnosticsReport,
    pub final_state: SpacetimeState,
    pub csv: String,
    pub csv_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
    pub snapshot_path: Option<PathBuf>,
    /// First failing monitor, when any enabled monitor failed.
    pub failed_monitor: Option<String>,
}

fn algebra_label(cfg: &RunConfig) -> String {
    match &cfg.algebra {
        crate::config::AlgebraConfig::Named(s) => s.clone(),
        crate::config::AlgebraConfig::File { file } => format!("file:{}", file.display()),
    }
}

/// Build the initial state for a config (family construction or snapshot
/// load, optional relaxation, hyperbolic construction).
pub fn prepare_state(cfg: &RunConfig, strict: bool) -> Result<(SpacetimeState, DiagnosticsReport)> {
    let mut report = DiagnosticsReport::default();
    let state = if cfg.id.family == "file" {
        let path = cfg.id.file.as_ref().expect("validated");
        report::load_snapshot(path)?
    } else {
        let grid = cfg.build_grid()?;
        let algebra = cfg.build_algebra()?;
        let mut id = cfg.build_initial_data(&grid, &algebra)?;
        if cfg.id.relax {
            let res0 = crate::initial::constraint_residuals(&id)?;
            if res0.hamiltonian_linf > 0.0 {
                let tol = res0.hamiltonian_linf * cfg.id.relax_tol;
                let (relaxed, stats) = relax_hamiltonian(&id, tol, cfg.id.relax_max_iters)?;
                report.notes.push(format!(
                    "relaxation: residual {:.3e} -> {:.3e} in {} iterations",
                    stats.initial_residual, stats.final_residual, stats.iterations
                ));
                id = relaxed;
            }
        }
        let (state, build) = build_hyperbolic_data(
            &id,
            &BuildOptions { constraint_gate: cfg.diagnostics.constraint_gate, strict },
        )?;
        if build.gate_exceeded {
            report.notes.push(format!(
                "constraint gate exceeded at t=0 (max residual {:.3e})",
                build.constraints.max_linf()
            ));
        }
        state
    };
    report.t_window = match state.grid.boundary {
        // Reflections bound the usable window to half the box radius.
        Boundary::Sommerfeld => {
            0.5 * state.grid.spacing[0] * (state.grid.points[0] as f64 - 1.0) / 2.0
        }
        Boundary::Periodic => {
            0.5 * state.grid.spacing[0] * state.grid.points[0] as f64 / 2.0
        }
    };
    let gens = all_generators(state.grid.n);
    report.exercised_generators = gens
        .iter()
        .filter(|&&z| is_exercised(z, state.grid.d_active))
        .map(|z| format!("{z:?}"))
        .collect();
    Ok((state, report))
}

/// Sample all enabled diagnostics into a row.
fn sample_row(state: &SpacetimeState, cfg: &RunConfig, report: &mut DiagnosticsReport) -> Result<()> {
    let weight = WeightSpec::new(cfg.diagnostics.gamma)?;
    let radial = state.grid.boundary == Boundary::Sommerfeld;
    let wfield = if radial { Some(weight.field(&state.grid, state.t)) } else { None };

    let lm = lorenz_monitor(state, wfield.as_deref())?;
    let wg = wave_gauge_monitor(&state.h, &state.pi, state.t, wfield.as_deref())?;
    let (ham, mom, gauss) = constraint_norms(state)?;

    let mut row = DiagRow {
        t: state.t,
        lambda_linf: lm.linf,
        gamma_linf: wg.linf,
        hamiltonian_linf: ham,
        momentum_linf: mom,
        gauss_linf: gauss,
        ..Default::default()
    };
    if radial {
        let e = weighted_energy(state, cfg.diagnostics.energy_max_order, &weight)?;
        report.energy_approximate |= e.approximate;
        row.energies = e.values;
    }
    if cfg.diagnostics.eym_residual {
        row.eym_linf = Some(eym_residual(state)?.linf());
        row.ym_div_linf = Some(ym_divergence_residual(state)?.linf());
    }
    if cfg.diagnostics.hardy && radial {
        // Hardy on the first potential component along the +x1 ray.
        let hc = hardy_check_snapshot(
            &state.a,
            state.adim(), // A_1 component, basis 0
            state.t,
            cfg.diagnostics.hardy_a,
            &weight,
        )?;
        row.hardy_ratio = Some(hc.ratio);
    }
    if cfg.diagnostics.ks && radial {
        let ks = ks_check(state, &weight)?;
        report.ks_order_capped |= ks.order_capped;
        row.ks_ratio = Some(ks.ratio);
    }
    if cfg.diagnostics.decay_fit && radial {
        // Band amplitude of |d A| near the light cone, |q| <= q0 = 2.
        let q0 = 2.0;
        let grid = &state.grid;
        let mut da = Vec::new();
        for dir in 1..=grid.d_active {
            da.push(state.a.partial(dir));
        }
        let mut band: f64 = 0.0;
        for p in 0..grid.npoints() {
            if grid.retarded_q(p, state.t).abs() > q0 {
                continue;
            }
            let mut sq = 0.0;
            for c in 0..state.a.ncomp() {
                let v = state.p.comp(c)[p];
                sq += v * v;
                for d in &da {
                    let w = d.comp(c)[p];
                    sq += w * w;
                }
            }
            band = band.max(sq.sqrt());
        }
        row.band_max = Some(band);
    }
    report.rows.push(row);
    Ok(())
}

/// Full `evolve` pipeline: build data, advance, sample, post-fit, and write
/// artifacts when `outdir` is given.
pub fn run_evolve(cfg: &RunConfig, outdir: Option<&Path>, strict: bool) -> Result<RunOutputs> {
    let (state, mut report) = prepare_state(cfg, strict)?;
    let evo = EvolutionConfig {
        cfl: cfg.evolution.cfl,
        t_end: cfg.evolution.t_end,
        diag_interval: cfg.evolution.diag_interval,
        dissipation_eps: cfg.evolution.dissipation_eps,
        max_growth_factor: cfg.evolution.max_growth_factor,
    };
    let mut sample_err: Option<Error> = None;
    let final_state = evolve(state, &evo, |st| {
        if let Err(e) = sample_row(st, cfg, &mut report) {
            sample_err = Some(e);
            return Err(Error::Config("diagnostic sampling failed".into()));
        }
        Ok(())
    });
    let final_state = match (final_state, sample_err) {
        (Ok(s), None) => s,
        (_, Some(e)) => return Err(e),
        (Err(e), None) => return Err(e),
    };

    // Post-run fits and monitors.
    if cfg.diagnostics.decay_fit {
        let series: Vec<(f64, f64)> = report
            .rows
            .iter()
            .filter_map(|r| r.band_max.map(|b| (r.t, b)))
            .filter(|&(t, _)| t > 0.0)
            .collect();
        match decay_fit(&series) {
            FitOutcome::Slope(s) => report.decay_exponent = Some(s),
            FitOutcome::Inconclusive(note) => report.decay_note = Some(note),
        }
    }
    let mut failed_monitor = None;
    if cfg.diagnostics.groenwall {
        let series = report.energy_series(0);
        let g = groenwall_monitor(&series, cfg.diagnostics.groenwall_bound);
        report.groenwall_max_ratio = Some(g.max_ratio);
        report.groenwall_pass = Some(g.pass);
        if !g.pass {
            failed_monitor = Some(format!(
                "groenwall: E0 ratio {:.3} exceeds bound {:.3}",
                g.max_ratio, cfg.diagnostics.groenwall_bound
            ));
        }
    }

    let header = cfg.canonical_text();
    let csv = report.csv_string(&header);
    let (mut csv_path, mut summary_path, mut snapshot_path) = (None, None, None);
    if let Some(dir) = outdir {
        std::fs::create_dir_all(dir)?;
        let cp = dir.join("diagnostics.csv");
        std::fs::write(&cp, &csv)?;
        csv_path = Some(cp);
        let sp = dir.join("summary.txt");
        let mut buf = Vec::new();
        report.write_summary(&mut buf)?;
        std::fs::write(&sp, &buf)?;
        summary_path = Some(sp);
        let np = dir.join("final.snap");
        report::save_snapshot(&final_state, &algebra_label(cfg), &np)?;
        snapshot_path = Some(np);
    }
    Ok(RunOutputs {
        report,
        final_state,
        csv,
        csv_path,
        summary_path,
        snapshot_path,
        failed_monitor,
    })
}

/// `check-id`: constraint residual norms and gauge monitors at t = 0.
pub struct CheckIdOutput {
    pub pre_relax: (f64, f64, f64),
    pub post_relax: Option<(f64, f64, f64)>,
    pub lambda_linf: f64,
    pub gamma_linf: f64,
}

pub fn run_check_id(cfg: &RunConfig, strict: bool) -> Result<CheckIdOutput> {
    let grid = cfg.build_grid()?;
    let algebra = cfg.build_algebra()?;
    let id = cfg.build_initial_data(&grid, &algebra)?;
    let res0 = crate::initial::constraint_residuals(&id)?;
    let pre = (res0.hamiltonian_linf, res0.momentum_linf, res0.gauss_linf);
    let (id, post) = if cfg.id.relax && res0.hamiltonian_linf > 0.0 {
        let tol = res0.hamiltonian_linf * cfg.id.relax_tol;
        let (relaxed, _) = relax_hamiltonian(&id, tol, cfg.id.relax_max_iters)?;
        let res1 = crate::initial::constraint_residuals(&relaxed)?;
        let post = (res1.hamiltonian_linf, res1.momentum_linf, res1.gauss_linf);
        (relaxed, Some(post))
    } else {
        (id, None)
    };
    let (state, _) = build_hyperbolic_data(
        &id,
        &BuildOptions { constraint_gate: cfg.diagnostics.constraint_gate, strict },
    )?;
    let lm = lorenz_monitor(&state, None)?;
    let wg = wave_gauge_monitor(&state.h, &state.pi, 0.0, None)?;
    Ok(CheckIdOutput {
        pre_relax: pre,
        post_relax: post,
        lambda_linf: lm.linf,
        gamma_linf: wg.linf,
    })
}

/// `convergence`: run the config at `levels` doubling resolutions and fit
/// Richardson orders of the monitor maxima.
pub struct ConvergenceLevel {
    pub points: usize,
    pub wave_error: Option<f64>,
    pub max_lambda: f64,
    pub max_gamma: f64,
    pub max_eym: f64,
}

pub struct ConvergenceOutput {
    pub levels: Vec<ConvergenceLevel>,
    /// Fitted orders of the strictest convergent quantity between levels.
    pub fitted_orders: Vec<f64>,
    pub pass: bool,
    pub degenerate: bool,
}

pub fn run_convergence(cfg: &RunConfig, levels: usize) -> Result<ConvergenceOutput> {
    let mut out_levels = Vec::new();
    let mut cur = cfg.clone();
    for _ in 0..levels {
        let run = run_evolve(&cur, None, false)?;
        // Analytic standing-wave error for the linear abelian family on a
        // flat periodic background (tiny-amplitude regime).
        let wave_error = if cur.id.family == "abelian_wave"
            && cur.grid.boundary == Boundary::Periodic
        {
            let st = &run.final_state;
            let grid = &st.grid;
            let adim = st.adim();
            let length = grid.points[0] as f64 * grid.spacing[0];
            let k = 2.0 * std::f64::consts::PI * cur.id.mode as f64 / length;
            let comp = cur.id.component * adim;
            let mut err = 0.0f64;
            for p in 0..grid.npoints() {
                let x = grid.coord_of_dir(p, 1);
                let exact = cur.id.amplitude * (k * x).sin() * (k * st.t).cos();
                err = err.max((st.a.comp(comp)[p] - exact).abs());
            }
            Some(err)
        } else {
            None
        };
        out_levels.push(ConvergenceLevel {
            points: cur.grid.points,
            wave_error,
            max_lambda: run.report.max_lambda(),
            max_gamma: run.report.max_gamma(),
            max_eym: run.report.max_eym(),
        });
        cur.grid.points *= 2;
    }
    // Richardson orders from the strongest available signal.
    let signal = |l: &ConvergenceLevel| -> f64 {
        l.wave_error.unwrap_or_else(|| l.max_eym.max(l.max_gamma).max(l.max_lambda))
    };
    let mut fitted = Vec::new();
    let mut degenerate = true;
    for w in out_levels.windows(2) {
        let (a, b) = (signal(&w[0]), signal(&w[1]));
        if a > 1e-13 && b > 1e-14 {
            degenerate = false;
            fitted.push((a / b).log2());
        } else {
            fitted.push(f64::NAN);
        }
    }
    let threshold = cfg.grid.stencil_order as f64 - 0.5;
    let pass = degenerate || fitted.iter().all(|o| o.is_nan() || *o >= threshold);
    Ok(ConvergenceOutput { levels: out_levels, fitted_orders: fitted, pass, degenerate })
}
