//! Right-hand sides of the coupled wave system and the explicit RK4 stepper.
//!
//! The evolved unknowns are `(h, pi, A, p)` with `pi = dt h` and `p = dt A`.
//! In wave coordinates and Lorenz gauge the field equations reduce to
//!
//! ```text
//! g^{ab} d_a d_b h_{mn} = Ptilde + Qtilde_{mn} - 2 R^src_{mn}
//! g^{ab} d_a d_b A_s    = S^A_s
//! ```
//!
//! with the exact quadratic forms in `d g` (full inverse metric, no
//! perturbative truncation) and the Yang-Mills curvature sources. The second
//! time derivative is solved out through `g^{tt}`, which the signature
//! invariant keeps away from zero.

use std::sync::Arc;

use crate::algebra::AlgebraSpec;
use crate::geometry::{
    self, christoffel_point, mat_mul, mat_zero, metric_at, sym_at, SymIdx, MAXN,
};
use crate::grid::{Boundary, GridFunction, GridSpec};
use crate::par;
use crate::{Error, Result};

/// Evolution kernels keep per-point algebra scratch on the stack.
pub const MAX_ALGEBRA_DIM: usize = 8;

/// Grid state at one time level.
#[derive(Debug, Clone)]
pub struct SpacetimeState {
    pub t: f64,
    pub grid: Arc<GridSpec>,
    pub algebra: Arc<AlgebraSpec>,
    /// Packed symmetric `h_{mn}`, `(n+1)(n+2)/2` components.
    pub h: GridFunction,
    /// `pi = dt h`, same layout.
    pub pi: GridFunction,
    /// Algebra-valued potential, component `mu * dim + basis`.
    pub a: GridFunction,
    /// `p = dt A`, same layout.
    pub p: GridFunction,
}

impl SpacetimeState {
    pub fn flat(grid: &Arc<GridSpec>, algebra: &Arc<AlgebraSpec>) -> Result<Self> {
        let nn = grid.n + 1;
        if algebra.dim() > MAX_ALGEBRA_DIM {
            return Err(Error::Config(format!(
                "algebra dimension {} exceeds the evolution kernel cap {MAX_ALGEBRA_DIM}",
                algebra.dim()
            )));
        }
        let s = geometry::sym_len(nn);
        let ac = nn * algebra.dim();
        Ok(Self {
            t: 0.0,
            grid: Arc::clone(grid),
            algebra: Arc::clone(algebra),
            h: GridFunction::zeros(grid, s),
            pi: GridFunction::zeros(grid, s),
            a: GridFunction::zeros(grid, ac),
            p: GridFunction::zeros(grid, ac),
        })
    }

    pub fn adim(&self) -> usize {
        self.algebra.dim()
    }

    /// Max absolute value across all evolved fields.
    pub fn linf(&self) -> f64 {
        self.h
            .linf()
            .max(self.pi.linf())
            .max(self.a.linf())
            .max(self.p.linf())
    }

    fn axpy(&mut self, c: f64, rhs: &Rhs) {
        self.h.axpy(c, &rhs.dt_h);
        self.pi.axpy(c, &rhs.dt_pi);
        self.a.axpy(c, &rhs.dt_a);
        self.p.axpy(c, &rhs.dt_p);
    }

    /// First non-finite entry across the evolved fields.
    pub fn check_finite(&self) -> Result<()> {
        for (name, f) in [("h", &self.h), ("pi", &self.pi), ("A", &self.a), ("p", &self.p)] {
            if let Err((comp, p)) = f.check_finite() {
                return Err(Error::Numerical {
                    what: format!("non-finite value in {name} component {comp}"),
                    t: self.t,
                    point: self.grid.multi_index(p),
                });
            }
        }
        Ok(())
    }
}

/// Time derivatives of the evolved fields (one RK stage).
pub struct Rhs {
    pub dt_h: GridFunction,
    pub dt_pi: GridFunction,
    pub dt_a: GridFunction,
    pub dt_p: GridFunction,
}

/// Index map for active-direction second-derivative pairs `i <= j`.
fn active_pairs(d_active: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for i in 1..=d_active {
        for j in i..=d_active {
            v.push((i, j));
        }
    }
    v
}

/// All stencil data the pointwise source assembly needs.
struct DerivPack {
    /// `dg[lam]`, lam in 0..=n; `dg[0] = pi`.
    dg: Vec<GridFunction>,
    /// `d2h[(i,j)]` over active pairs.
    d2h: Vec<GridFunction>,
    /// `dpi[i]` over active directions (index 0 = direction 1).
    dpi: Vec<GridFunction>,
    da: Vec<GridFunction>,
    d2a: Vec<GridFunction>,
    dp: Vec<GridFunction>,
    pairs: Vec<(usize, usize)>,
}

fn build_derivs(state: &SpacetimeState) -> DerivPack {
    let grid = &state.grid;
    let n = grid.n;
    let d = grid.d_active;
    let pairs = active_pairs(d);

    let mut dg = Vec::with_capacity(n + 1);
    dg.push(state.pi.clone());
    for dir in 1..=n {
        dg.push(state.h.partial(dir));
    }
    let mut da = Vec::with_capacity(n + 1);
    da.push(state.p.clone());
    for dir in 1..=n {
        da.push(state.a.partial(dir));
    }
    let d2h = pairs.iter().map(|&(i, j)| state.h.partial2(i, j)).collect();
    let d2a = pairs.iter().map(|&(i, j)| state.a.partial2(i, j)).collect();
    let dpi = (1..=d).map(|dir| state.pi.partial(dir)).collect();
    let dp = (1..=d).map(|dir| state.p.partial(dir)).collect();
    DerivPack { dg, d2h, dpi, da, d2a, dp, pairs }
}

/// Assemble the full right-hand side of the first-order system.
pub fn rhs(state: &SpacetimeState) -> Result<Rhs> {
    rhs_with(state, 0.0)
}

fn rhs_with(state: &SpacetimeState, dissipation_eps: f64) -> Result<Rhs> {
    let grid = &state.grid;
    let nn = grid.n + 1;
    let n = grid.n;
    let d_active = grid.d_active;
    let sym = SymIdx::new(nn);
    let s = sym.len();
    let adim = state.adim();
    let npts = grid.npoints();
    let alg = state.algebra.as_ref();

    let ginv = geometry::inverse_exact(&state.h, state.t)?;
    let pack = build_derivs(state);

    let mut dt_pi = GridFunction::zeros(grid, s);
    let mut dt_p = GridFunction::zeros(grid, nn * adim);

    let sommerfeld = grid.boundary == Boundary::Sommerfeld;
    let row_len = s + nn * adim;
    let mut rows = vec![0.0; npts * row_len];
    par::for_each_row(&mut rows, row_len, |pt, row| {
        // --- unpack metric data -------------------------------------------
        let gm = metric_at(&state.h, &sym, pt);
        let gi = sym_at(&ginv, &sym, pt);
        let mut dmat = [mat_zero(); MAXN];
        for (lam, slot) in dmat.iter_mut().enumerate().take(nn) {
            let src = &pack.dg[lam];
            for &(a, b) in sym.pairs() {
                let v = src.comp(sym.idx(a, b))[pt];
                slot[a][b] = v;
                slot[b][a] = v;
            }
        }

        // --- unpack gauge data --------------------------------------------
        let mut av = [[0.0f64; MAX_ALGEBRA_DIM]; MAXN];
        let mut dav = [[[0.0f64; MAX_ALGEBRA_DIM]; MAXN]; MAXN]; // [lam][mu][e]
        for mu in 0..nn {
            for e in 0..adim {
                av[mu][e] = state.a.comp(mu * adim + e)[pt];
                for lam in 0..nn {
                    dav[lam][mu][e] = pack.da[lam].comp(mu * adim + e)[pt];
                }
            }
        }

        // --- metric contractions ------------------------------------------
        let mut xm = [mat_zero(); MAXN]; // X[lam] = G D[lam]
        let mut um = [mat_zero(); MAXN]; // U[lam] = X[lam] G = -(d_lam g^{-1})
        let mut tr = [0.0f64; MAXN]; // g^{ab} d_lam g_{ab}
        for lam in 0..nn {
            xm[lam] = mat_mul(&gi, &dmat[lam], nn);
            um[lam] = mat_mul(&xm[lam], &gi, nn);
            let mut t = 0.0;
            for a in 0..nn {
                t += xm[lam][a][a];
            }
            tr[lam] = t;
        }
        // c[s] = g^{mn} d_m g_{sn}
        let mut cv = [0.0f64; MAXN];
        for (sdx, slot) in cv.iter_mut().enumerate().take(nn) {
            let mut acc = 0.0;
            for al in 0..nn {
                acc += xm[al][al][sdx];
            }
            *slot = acc;
        }
        // Raised helpers.
        let mut cu = [0.0f64; MAXN];
        let mut tru = [0.0f64; MAXN];
        for b in 0..nn {
            let mut c1 = 0.0;
            let mut c2 = 0.0;
            for bp in 0..nn {
                c1 += gi[b][bp] * cv[bp];
                c2 += gi[b][bp] * tr[bp];
            }
            cu[b] = c1;
            tru[b] = c2;
        }
        // Y[mu] = G Dhat[mu] G with Dhat[mu][a][b] = d_a g_{b mu}.
        let mut ym = [mat_zero(); MAXN];
        for mu in 0..nn {
            let mut dhat = mat_zero();
            for a in 0..nn {
                for b in 0..nn {
                    dhat[a][b] = dmat[a][b][mu];
                }
            }
            ym[mu] = mat_mul(&mat_mul(&gi, &dhat, nn), &gi, nn);
        }
        let gamma = christoffel_point(&gi, &dmat[..nn], nn);

        // --- Yang-Mills curvature at the point -----------------------------
        let mut fdn = [[[0.0f64; MAX_ALGEBRA_DIM]; MAXN]; MAXN];
        let mut br = [0.0f64; MAX_ALGEBRA_DIM];
        for mu in 0..nn {
            for nu in mu + 1..nn {
                alg.bracket_into(&av[mu][..adim], &av[nu][..adim], &mut br[..adim]);
                for e in 0..adim {
                    let v = dav[mu][nu][e] - dav[nu][mu][e] + br[e];
                    fdn[mu][nu][e] = v;
                    fdn[nu][mu][e] = -v;
                }
            }
        }
        // F with first index raised: fmix[a][b] = F^a_{. b}.
        let mut fmix = [[[0.0f64; MAX_ALGEBRA_DIM]; MAXN]; MAXN];
        for a in 0..nn {
            for b in 0..nn {
                for e in 0..adim {
                    let mut acc = 0.0;
                    for m in 0..nn {
                        acc += gi[a][m] * fdn[m][b][e];
                    }
                    fmix[a][b][e] = acc;
                }
            }
        }
        // <F, F> = F_{mn} F^{mn}.
        let mut ff = 0.0;
        let mut fup = [0.0f64; MAX_ALGEBRA_DIM];
        for m in 0..nn {
            for nv in 0..nn {
                for (e, slot) in fup.iter_mut().enumerate().take(adim) {
                    let mut acc = 0.0;
                    for b in 0..nn {
                        acc += fmix[m][b][e] * gi[nv][b];
                    }
                    *slot = acc;
                }
                ff += alg.inner_slices(&fdn[m][nv][..adim], &fup[..adim]);
            }
        }

        // --- metric source: Ptilde + Qtilde - 2 R^src ----------------------
        for (k, &(mu, nu)) in sym.pairs().iter().enumerate() {
            let mut p_t = 0.25 * tr[mu] * tr[nu];
            let mut a1 = 0.0;
            let mut a2 = 0.0;
            let mut g3a = 0.0;
            let mut g4a = 0.0;
            let mut g3b = 0.0;
            let mut g4b = 0.0;
            let mut g5a = 0.0;
            let mut g6a = 0.0;
            for a in 0..nn {
                for b in 0..nn {
                    p_t -= 0.5 * dmat[mu][a][b] * um[nu][a][b];
                    a1 += ym[mu][a][b] * dmat[a][b][nu];
                    a2 += ym[mu][a][b] * dmat[b][a][nu];
                    g3a += um[mu][a][b] * dmat[a][b][nu];
                    g4a += um[nu][a][b] * dmat[a][b][mu];
                }
                g3b -= cu[a] * dmat[mu][a][nu];
                g4b -= cu[a] * dmat[nu][a][mu];
                g5a += 0.5 * tru[a] * dmat[mu][a][nu];
                g6a += 0.5 * tru[a] * dmat[nu][a][mu];
            }
            let q_t = a1 - a2 + cv[mu] * cv[nu] + g3a + g3b + g4a + g4b + g5a
                - 0.5 * tr[mu] * cv[nu]
                + g6a
                - 0.5 * tr[nu] * cv[mu];
            // R^src_{mn} = 2 <F_{mb}, F_n^{ b}> + g_{mn}/(1-n) <F,F>,
            // with F_n^{ b} = g^{bm} F_{nm} = -fmix[b][n].
            let mut fcross = 0.0;
            for b in 0..nn {
                fcross += alg.inner_slices(&fdn[mu][b][..adim], &fmix[b][nu][..adim]);
            }
            let rsrc = -2.0 * fcross + gm[mu][nu] / (1.0 - n as f64) * ff;
            let source = p_t + q_t - 2.0 * rsrc;

            // Solve out dt^2 h through g^{tt}.
            let mut rhs_val = source;
            for (ii, &(i, j)) in pack.pairs.iter().enumerate() {
                let mult = if i == j { 1.0 } else { 2.0 };
                rhs_val -= mult * gi[i][j] * pack.d2h[ii].comp(k)[pt];
            }
            for i in 1..=d_active {
                rhs_val -= 2.0 * gi[0][i] * pack.dpi[i - 1].comp(k)[pt];
            }
            row[k] = rhs_val / gi[0][0];
        }

        // --- potential source ----------------------------------------------
        let mut au = [[0.0f64; MAX_ALGEBRA_DIM]; MAXN];
        for a in 0..nn {
            for e in 0..adim {
                let mut acc = 0.0;
                for m in 0..nn {
                    acc += gi[a][m] * av[m][e];
                }
                au[a][e] = acc;
            }
        }
        let mut tmp = [0.0f64; MAX_ALGEBRA_DIM];
        let mut tmp2 = [0.0f64; MAX_ALGEBRA_DIM];
        for sdx in 0..nn {
            let mut sval = [0.0f64; MAX_ALGEBRA_DIM];
            // -(d_s g^{am}) d_a A_m = +U[s][a][m] d_a A_m.
            for a in 0..nn {
                for m in 0..nn {
                    let w = um[sdx][a][m];
                    if w == 0.0 {
                        continue;
                    }
                    for e in 0..adim {
                        sval[e] += w * dav[a][m][e];
                    }
                }
            }
            // + g^{am} Gamma^nu_{as} F_{m nu} (the two half-Gamma groups of
            // the displayed source combine into this full-F contraction).
            for a in 0..nn {
                for nv in 0..nn {
                    let gw = gamma[nv][a][sdx];
                    if gw == 0.0 {
                        continue;
                    }
                    for e in 0..adim {
                        sval[e] += gw * fmix[a][nv][e];
                    }
                }
            }
            // -2 [Au^a, d_a A_s] + [Au^a, d_s A_a] - [Au^a, [A_a, A_s]].
            for a in 0..nn {
                alg.bracket_into(&au[a][..adim], &dav[a][sdx][..adim], &mut tmp[..adim]);
                for e in 0..adim {
                    sval[e] -= 2.0 * tmp[e];
                }
                alg.bracket_into(&au[a][..adim], &dav[sdx][a][..adim], &mut tmp[..adim]);
                for e in 0..adim {
                    sval[e] += tmp[e];
                }
                alg.bracket_into(&av[a][..adim], &av[sdx][..adim], &mut tmp[..adim]);
                alg.bracket_into(&au[a][..adim], &tmp[..adim], &mut tmp2[..adim]);
                for e in 0..adim {
                    sval[e] -= tmp2[e];
                }
            }
            for e in 0..adim {
                let mut rhs_val = sval[e];
                let c = sdx * adim + e;
                for (ii, &(i, j)) in pack.pairs.iter().enumerate() {
                    let mult = if i == j { 1.0 } else { 2.0 };
                    rhs_val -= mult * gi[i][j] * pack.d2a[ii].comp(c)[pt];
                }
                for i in 1..=d_active {
                    rhs_val -= 2.0 * gi[0][i] * pack.dp[i - 1].comp(c)[pt];
                }
                row[s + c] = rhs_val / gi[0][0];
            }
        }

        // --- Sommerfeld closure on outer faces ------------------------------
        // dt u = -(x_i/r) d_i u - (n-1) u / (2r) for the velocity variables.
        if sommerfeld && grid.on_boundary(pt) {
            let r = grid.radius(pt).max(1e-12);
            let damp = (n as f64 - 1.0) / (2.0 * r);
            for k in 0..s {
                let mut dr = 0.0;
                for i in 1..=d_active {
                    let x = grid.coord_of_dir(pt, i);
                    dr += x / r * pack.dpi[i - 1].comp(k)[pt];
                }
                row[k] = -dr - damp * state.pi.comp(k)[pt];
            }
            for c in 0..nn * adim {
                let mut dr = 0.0;
                for i in 1..=d_active {
                    let x = grid.coord_of_dir(pt, i);
                    dr += x / r * pack.dp[i - 1].comp(c)[pt];
                }
                row[s + c] = -dr - damp * state.p.comp(c)[pt];
            }
        }
    });
    for k in 0..s {
        let dst = dt_pi.comp_mut(k);
        for p in 0..npts {
            dst[p] = rows[p * row_len + k];
        }
    }
    for c in 0..nn * adim {
        let dst = dt_p.comp_mut(c);
        for p in 0..npts {
            dst[p] = rows[p * row_len + s + c];
        }
    }

    let mut out = Rhs {
        dt_h: state.pi.clone(),
        dt_pi,
        dt_a: state.p.clone(),
        dt_p,
    };

    if dissipation_eps != 0.0 {
        apply_kreiss_oliger(state, &mut out, dissipation_eps);
    }
    Ok(out)
}

/// Fourth-difference Kreiss-Oliger dissipation on all evolved fields,
/// interior points only. Off by default; documented stabiliser for long runs.
fn apply_kreiss_oliger(state: &SpacetimeState, rhs: &mut Rhs, eps: f64) {
    let grid = &state.grid;
    let d = grid.d_active;
    for (field, slot) in [
        (&state.h, &mut rhs.dt_h),
        (&state.pi, &mut rhs.dt_pi),
        (&state.a, &mut rhs.dt_a),
        (&state.p, &mut rhs.dt_p),
    ] {
        for axis in 0..d {
            let diss = undivided_fourth_difference(field, axis);
            let scale = -eps / (16.0 * grid.spacing[axis]);
            slot.axpy(scale, &diss);
        }
    }
}

fn undivided_fourth_difference(f: &GridFunction, axis: usize) -> GridFunction {
    let grid = f.spec();
    let nline = grid.points[axis];
    let stride: usize = grid.points[..axis].iter().product();
    let periodic = grid.boundary == Boundary::Periodic;
    let npts = grid.npoints();
    let ncomp = f.ncomp();
    let mut out = GridFunction::zeros(grid, ncomp);
    let values = f.values();
    par::fill_indexed(out.values_mut(), |g| {
        let c = g / npts;
        let p = g % npts;
        let i = (p / stride) % nline;
        let base = c * npts + (p - i * stride);
        if !periodic && (i < 2 || i + 2 >= nline) {
            return 0.0;
        }
        let at = |ii: isize| -> f64 {
            let idx = ii.rem_euclid(nline as isize) as usize;
            values[base + idx * stride]
        };
        let i = i as isize;
        at(i - 2) - 4.0 * at(i - 1) + 6.0 * at(i) - 4.0 * at(i + 1) + at(i + 2)
    });
    out
}

/// Evolution parameters.
#[derive(Debug, Clone)]
pub struct EvolutionConfig {
    pub cfl: f64,
    pub t_end: f64,
    pub diag_interval: f64,
    pub dissipation_eps: f64,
    /// Halt when the state norm grows by this factor over its initial value.
    pub max_growth_factor: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            cfl: 0.25,
            t_end: 1.0,
            diag_interval: 0.1,
            dissipation_eps: 0.0,
            max_growth_factor: 1e3,
        }
    }
}

/// One classical RK4 step; boundary closure is applied inside each stage RHS.
pub fn step_rk4(state: &SpacetimeState, dt: f64, dissipation_eps: f64) -> Result<SpacetimeState> {
    let stage_err = |e: Error, stage: usize| match e {
        Error::Numerical { what, t, point } => Error::InvariantViolation {
            invariant: what,
            t,
            point,
            stage,
        },
        other => other,
    };
    let k1 = rhs_with(state, dissipation_eps).map_err(|e| stage_err(e, 1))?;
    let mut y = state.clone();
    y.axpy(0.5 * dt, &k1);
    y.t = state.t + 0.5 * dt;
    let k2 = rhs_with(&y, dissipation_eps).map_err(|e| stage_err(e, 2))?;
    let mut y2 = state.clone();
    y2.axpy(0.5 * dt, &k2);
    y2.t = state.t + 0.5 * dt;
    let k3 = rhs_with(&y2, dissipation_eps).map_err(|e| stage_err(e, 3))?;
    let mut y3 = state.clone();
    y3.axpy(dt, &k3);
    y3.t = state.t + dt;
    let k4 = rhs_with(&y3, dissipation_eps).map_err(|e| stage_err(e, 4))?;

    let mut next = state.clone();
    next.axpy(dt / 6.0, &k1);
    next.axpy(dt / 3.0, &k2);
    next.axpy(dt / 3.0, &k3);
    next.axpy(dt / 6.0, &k4);
    next.t = state.t + dt;
    Ok(next)
}

/// Advance to `t_end`, invoking `on_sample` at the configured interval
/// (always at the initial and final times).
pub fn evolve<F>(
    initial: SpacetimeState,
    cfg: &EvolutionConfig,
    mut on_sample: F,
) -> Result<SpacetimeState>
where
    F: FnMut(&SpacetimeState) -> Result<()>,
{
    let mut state = initial;
    state.check_finite()?;
    geometry::signature_check(&state.h, state.t)?;
    let span = cfg.t_end - state.t;
    if span <= 0.0 {
        on_sample(&state)?;
        return Ok(state);
    }
    let dt_target = cfg.cfl * state.grid.min_spacing();
    let nsteps = (span / dt_target - 1e-12).ceil().max(1.0) as usize;
    let dt = span / nsteps as f64;
    let sample_every = if cfg.diag_interval <= 0.0 {
        1
    } else {
        ((cfg.diag_interval / dt).round() as usize).max(1)
    };
    let norm0 = state.linf().max(1e-10);

    on_sample(&state)?;
    for step in 1..=nsteps {
        state = step_rk4(&state, dt, cfg.dissipation_eps)?;
        state.check_finite()?;
        geometry::signature_check(&state.h, state.t)?;
        let norm = state.linf();
        if norm > cfg.max_growth_factor * norm0 {
            return Err(Error::Instability { t: state.t, factor: norm / norm0 });
        }
        if step % sample_every == 0 || step == nsteps {
            on_sample(&state)?;
        }
    }
    Ok(state)
}

/// Second time derivatives `(dt^2 h, dt^2 A)` solved out of the wave
/// equations; diagnostics use these for synchronous evaluation.
pub fn second_time_derivatives(state: &SpacetimeState) -> Result<(GridFunction, GridFunction)> {
    let r = rhs(state)?;
    Ok((r.dt_pi, r.dt_p))
}

// ---------------------------------------------------------------------------
// Test oracle: a literal transcription of the displayed source formulas with
// naive nested contractions, kept independent of the optimised assembly.
// ---------------------------------------------------------------------------
#[cfg(any(test, feature = "oracle"))]
pub mod oracle {
    use super::*;

    /// Metric-sector source `Ptilde + Qtilde - 2 R^src` at one point, by
    /// direct summation of the displayed quadratic forms.
    #[allow(clippy::needless_range_loop)]
    pub fn metric_source_at(state: &SpacetimeState, pt: usize) -> Vec<f64> {
        let grid = &state.grid;
        let nn = grid.n + 1;
        let n = grid.n;
        let sym = SymIdx::new(nn);
        let adim = state.adim();
        let alg = state.algebra.as_ref();
        let ginv = geometry::inverse_exact(&state.h, state.t).unwrap();
        let pack = build_derivs(state);
        let gm = metric_at(&state.h, &sym, pt);
        let gi = sym_at(&ginv, &sym, pt);
        let mut d = vec![mat_zero(); nn];
        for lam in 0..nn {
            for &(a, b) in sym.pairs() {
                let v = pack.dg[lam].comp(sym.idx(a, b))[pt];
                d[lam][a][b] = v;
                d[lam][b][a] = v;
            }
        }
        let mut av = vec![vec![0.0; adim]; nn];
        let mut dav = vec![vec![vec![0.0; adim]; nn]; nn];
        for mu in 0..nn {
            for e in 0..adim {
                av[mu][e] = state.a.comp(mu * adim + e)[pt];
                for lam in 0..nn {
                    dav[lam][mu][e] = pack.da[lam].comp(mu * adim + e)[pt];
                }
            }
        }
        let mut f = vec![vec![vec![0.0; adim]; nn]; nn];
        let mut br = vec![0.0; adim];
        for mu in 0..nn {
            for nu in 0..nn {
                alg.bracket_into(&av[mu], &av[nu], &mut br);
                for e in 0..adim {
                    f[mu][nu][e] = dav[mu][nu][e] - dav[nu][mu][e] + br[e];
                }
            }
        }

        let mut out = vec![0.0; sym.len()];
        for (k, &(mu, nu)) in sym.pairs().iter().enumerate() {
            let mut tr_mu = 0.0;
            let mut tr_nu = 0.0;
            let mut cross = 0.0;
            for a in 0..nn {
                for ap in 0..nn {
                    tr_mu += gi[a][ap] * d[mu][a][ap];
                    tr_nu += gi[a][ap] * d[nu][a][ap];
                }
            }
            for a in 0..nn {
                for ap in 0..nn {
                    for b in 0..nn {
                        for bp in 0..nn {
                            cross += gi[a][ap] * gi[b][bp] * d[mu][a][b] * d[nu][ap][bp];
                        }
                    }
                }
            }
            let ptilde = 0.25 * tr_mu * tr_nu - 0.5 * cross;

            let mut q = 0.0;
            for a in 0..nn {
                for ap in 0..nn {
                    for b in 0..nn {
                        for bp in 0..nn {
                            let gg = gi[a][ap] * gi[b][bp];
                            q += gg * d[a][b][mu] * d[ap][bp][nu];
                            q -= gg * (d[a][b][mu] * d[bp][ap][nu] - d[bp][b][mu] * d[a][ap][nu]);
                            q += gg * (d[mu][ap][bp] * d[a][b][nu] - d[a][ap][bp] * d[mu][b][nu]);
                            q += gg * (d[nu][ap][bp] * d[a][b][mu] - d[a][ap][bp] * d[nu][b][mu]);
                            q += 0.5
                                * gg
                                * (d[bp][a][ap] * d[mu][b][nu] - d[mu][a][ap] * d[bp][b][nu]);
                            q += 0.5
                                * gg
                                * (d[bp][a][ap] * d[nu][b][mu] - d[nu][a][ap] * d[bp][b][mu]);
                        }
                    }
                }
            }

            let mut fcross = 0.0;
            for b in 0..nn {
                for m in 0..nn {
                    fcross += gi[b][m] * alg.inner_slices(&f[mu][b], &f[nu][m]);
                }
            }
            let mut ff = 0.0;
            for a in 0..nn {
                for b in 0..nn {
                    for ap in 0..nn {
                        for bp in 0..nn {
                            ff += gi[a][ap] * gi[b][bp] * alg.inner_slices(&f[a][b], &f[ap][bp]);
                        }
                    }
                }
            }
            let rsrc = 2.0 * fcross + gm[mu][nu] / (1.0 - n as f64) * ff;
            out[k] = ptilde + q - 2.0 * rsrc;
        }
        out
    }

    /// Potential-sector source at one point, literal transcription.
    #[allow(clippy::needless_range_loop)]
    pub fn potential_source_at(state: &SpacetimeState, pt: usize) -> Vec<Vec<f64>> {
        let grid = &state.grid;
        let nn = grid.n + 1;
        let sym = SymIdx::new(nn);
        let adim = state.adim();
        let alg = state.algebra.as_ref();
        let ginv = geometry::inverse_exact(&state.h, state.t).unwrap();
        let pack = build_derivs(state);
        let gi = sym_at(&ginv, &sym, pt);
        let mut d = vec![mat_zero(); nn];
        for lam in 0..nn {
            for &(a, b) in sym.pairs() {
                let v = pack.dg[lam].comp(sym.idx(a, b))[pt];
                d[lam][a][b] = v;
                d[lam][b][a] = v;
            }
        }
        let mut av = vec![vec![0.0; adim]; nn];
        let mut dav = vec![vec![vec![0.0; adim]; nn]; nn];
        for mu in 0..nn {
            for e in 0..adim {
                av[mu][e] = state.a.comp(mu * adim + e)[pt];
                for lam in 0..nn {
                    dav[lam][mu][e] = pack.da[lam].comp(mu * adim + e)[pt];
                }
            }
        }
        // d_s g^{am} = -(G D[s] G)^{am}.
        let mut dginv = vec![mat_zero(); nn];
        for sdx in 0..nn {
            let t = mat_mul(&gi, &d[sdx], nn);
            let u = mat_mul(&t, &gi, nn);
            for a in 0..nn {
                for b in 0..nn {
                    dginv[sdx][a][b] = -u[a][b];
                }
            }
        }

        let mut out = vec![vec![0.0; adim]; nn];
        let mut br = vec![0.0; adim];
        let mut br2 = vec![0.0; adim];
        for sdx in 0..nn {
            let mut sval = vec![0.0; adim];
            for a in 0..nn {
                for m in 0..nn {
                    for e in 0..adim {
                        sval[e] -= dginv[sdx][a][m] * dav[a][m][e];
                    }
                }
            }
            for a in 0..nn {
                for m in 0..nn {
                    for b in 0..nn {
                        for nv in 0..nn {
                            let w = 0.5
                                * gi[a][m]
                                * gi[b][nv]
                                * (d[a][b][sdx] + d[sdx][b][a] - d[b][a][sdx]);
                            if w == 0.0 {
                                continue;
                            }
                            alg.bracket_into(&av[m], &av[nv], &mut br);
                            for e in 0..adim {
                                sval[e] += w * (dav[m][nv][e] - dav[nv][m][e] + br[e]);
                            }
                        }
                    }
                }
            }
            for a in 0..nn {
                for m in 0..nn {
                    let g = gi[a][m];
                    if g == 0.0 {
                        continue;
                    }
                    alg.bracket_into(&av[m], &dav[a][sdx], &mut br);
                    for e in 0..adim {
                        sval[e] -= g * br[e];
                    }
                    let mut diff = vec![0.0; adim];
                    for e in 0..adim {
                        diff[e] = dav[m][sdx][e] - dav[sdx][m][e];
                    }
                    alg.bracket_into(&av[a], &diff, &mut br);
                    for e in 0..adim {
                        sval[e] -= g * br[e];
                    }
                    alg.bracket_into(&av[m], &av[sdx], &mut br);
                    alg.bracket_into(&av[a], &br, &mut br2);
                    for e in 0..adim {
                        sval[e] -= g * br2[e];
                    }
                }
            }
            out[sdx] = sval;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sym_len;
    use approx::assert_abs_diff_eq;

    fn small_state(d_active: usize, npts: usize, amp: f64) -> SpacetimeState {
        let grid =
            GridSpec::symmetric_box(5, d_active, npts, 1.0, Boundary::Periodic, 4).unwrap();
        let alg = AlgebraSpec::su2();
        let mut st = SpacetimeState::flat(&grid, &alg).unwrap();
        let s = sym_len(6);
        let pi = std::f64::consts::PI;
        st.h = GridFunction::from_fn(&grid, s, |x, c| {
            amp * ((c % 3 + 1) as f64 * pi * x[0]).sin()
        });
        st.pi = GridFunction::from_fn(&grid, s, |x, c| {
            0.5 * amp * ((c % 4 + 1) as f64 * pi * x[0]).cos()
        });
        st.a = GridFunction::from_fn(&grid, 6 * 3, |x, c| {
            amp * ((c % 5 + 1) as f64 * pi * x[0]).sin()
        });
        st.p = GridFunction::from_fn(&grid, 6 * 3, |x, c| {
            0.3 * amp * ((c % 4 + 1) as f64 * pi * x[0]).cos()
        });
        st
    }

    #[test]
    fn flat_vacuum_rhs_is_zero() {
        let grid = GridSpec::symmetric_box(5, 1, 16, 1.0, Boundary::Periodic, 4).unwrap();
        let st = SpacetimeState::flat(&grid, &AlgebraSpec::su2()).unwrap();
        let r = rhs(&st).unwrap();
        assert_eq!(r.dt_pi.linf(), 0.0);
        assert_eq!(r.dt_p.linf(), 0.0);
    }

    #[test]
    fn optimised_sources_match_brute_force_oracle() {
        let st = small_state(1, 12, 0.05);
        let r = rhs(&st).unwrap();
        let grid = &st.grid;
        let nn = 6;
        let sym = SymIdx::new(nn);
        let ginv = geometry::inverse_exact(&st.h, 0.0).unwrap();
        let pack = build_derivs(&st);
        for pt in [0usize, 3, 7, 11] {
            let src_h = oracle::metric_source_at(&st, pt);
            let src_a = oracle::potential_source_at(&st, pt);
            let gi = sym_at(&ginv, &sym, pt);
            for (k, _) in sym.pairs().iter().enumerate() {
                let mut rhs_val = src_h[k];
                for (ii, &(i, j)) in pack.pairs.iter().enumerate() {
                    let mult = if i == j { 1.0 } else { 2.0 };
                    rhs_val -= mult * gi[i][j] * pack.d2h[ii].comp(k)[pt];
                }
                for i in 1..=grid.d_active {
                    rhs_val -= 2.0 * gi[0][i] * pack.dpi[i - 1].comp(k)[pt];
                }
                rhs_val /= gi[0][0];
                assert_abs_diff_eq!(r.dt_pi.comp(k)[pt], rhs_val, epsilon = 1e-10);
            }
            for sdx in 0..nn {
                for e in 0..3 {
                    let mut rhs_val = src_a[sdx][e];
                    let c = sdx * 3 + e;
                    for (ii, &(i, j)) in pack.pairs.iter().enumerate() {
                        let mult = if i == j { 1.0 } else { 2.0 };
                        rhs_val -= mult * gi[i][j] * pack.d2a[ii].comp(c)[pt];
                    }
                    for i in 1..=grid.d_active {
                        rhs_val -= 2.0 * gi[0][i] * pack.dp[i - 1].comp(c)[pt];
                    }
                    rhs_val /= gi[0][0];
                    assert_abs_diff_eq!(r.dt_p.comp(c)[pt], rhs_val, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn constant_su2_potential_double_bracket_source() {
        // Flat metric, A_1 = e1, A_2 = e2 constant: the only surviving term
        // is -g^{am}[A_a, [A_m, A_s]]; for s = 1 that is -[e2, [e2, e1]]
        // = -[e2, -e3] = +e1.
        let grid = GridSpec::symmetric_box(5, 1, 16, 1.0, Boundary::Periodic, 4).unwrap();
        let alg = AlgebraSpec::su2();
        let mut st = SpacetimeState::flat(&grid, &alg).unwrap();
        st.a.comp_mut(3).fill(1.0); // A_1 = e1
        st.a.comp_mut(2 * 3 + 1).fill(1.0); // A_2 = e2
        let src = oracle::potential_source_at(&st, 0);
        assert_abs_diff_eq!(src[1][0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(src[1][1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(src[1][2], 0.0, epsilon = 1e-14);
        // Solved out through g^{tt} = -1.
        let r = rhs(&st).unwrap();
        assert_abs_diff_eq!(r.dt_p.comp(3)[0], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn abelian_flat_wave_matches_dalembert() {
        let grid = GridSpec::symmetric_box(5, 1, 64, 1.0, Boundary::Periodic, 4).unwrap();
        let alg = AlgebraSpec::u1();
        let mut st = SpacetimeState::flat(&grid, &alg).unwrap();
        let k = std::f64::consts::PI;
        st.a = GridFunction::from_fn(&grid, 6, |x, c| if c == 2 { (k * x[0]).sin() } else { 0.0 });
        st.p = GridFunction::from_fn(&grid, 6, |x, c| {
            if c == 2 {
                -k * (k * x[0]).cos()
            } else {
                0.0
            }
        });
        let dt = 0.25 * grid.min_spacing();
        let mut cur = st;
        for _ in 0..64 {
            cur = step_rk4(&cur, dt, 0.0).unwrap();
        }
        let t = cur.t;
        let mut err = 0.0f64;
        for p in 0..grid.npoints() {
            let x = grid.coords(p)[0];
            err = err.max((cur.a.comp(2)[p] - (k * (x - t)).sin()).abs());
        }
        assert!(err < 5e-6, "travelling-wave error {err:.3e}");
    }

    #[test]
    fn flat_vacuum_fixed_point_over_200_steps() {
        let grid = GridSpec::symmetric_box(5, 1, 16, 1.0, Boundary::Periodic, 4).unwrap();
        let st = SpacetimeState::flat(&grid, &AlgebraSpec::su2()).unwrap();
        let dt = 0.25 * grid.min_spacing();
        let mut cur = st;
        for _ in 0..200 {
            cur = step_rk4(&cur, dt, 0.0).unwrap();
        }
        assert!(cur.linf() <= 1e-12);
    }

    #[test]
    fn time_reversal_returns_to_initial_state() {
        let st = small_state(1, 24, 1e-3);
        let dt = 0.05 * st.grid.min_spacing();
        let nsteps = 10;
        let mut fwd = st.clone();
        for _ in 0..nsteps {
            fwd = step_rk4(&fwd, dt, 0.0).unwrap();
        }
        let mut back = fwd;
        for _ in 0..nsteps {
            back = step_rk4(&back, -dt, 0.0).unwrap();
        }
        let mut err = 0.0f64;
        for c in 0..st.h.ncomp() {
            for p in 0..st.grid.npoints() {
                err = err.max((back.h.comp(c)[p] - st.h.comp(c)[p]).abs());
            }
        }
        for c in 0..st.a.ncomp() {
            for p in 0..st.grid.npoints() {
                err = err.max((back.a.comp(c)[p] - st.a.comp(c)[p]).abs());
            }
        }
        assert!(err < 1e-10, "time-reversal defect {err:.3e}");
    }

    #[test]
    fn cfl_violation_triggers_instability_halt() {
        let st = small_state(1, 32, 1e-2);
        let cfg = EvolutionConfig {
            cfl: 3.0, // far above the stability limit
            t_end: 200.0 * 3.0 * st.grid.min_spacing(),
            diag_interval: f64::INFINITY,
            dissipation_eps: 0.0,
            max_growth_factor: 10.0,
        };
        let err = evolve(st, &cfg, |_| Ok(())).unwrap_err();
        match err {
            Error::Instability { factor, .. } => assert!(factor >= 10.0),
            Error::Numerical { .. } | Error::InvariantViolation { .. } => {}
            other => panic!("expected instability-style halt, got {other}"),
        }
    }

    #[test]
    fn evolve_t_end_zero_is_identity() {
        let st = small_state(1, 16, 1e-3);
        let cfg = EvolutionConfig { t_end: 0.0, ..Default::default() };
        let h0 = st.h.clone();
        let out = evolve(st, &cfg, |_| Ok(())).unwrap();
        assert_eq!(out.t, 0.0);
        for c in 0..h0.ncomp() {
            assert_eq!(out.h.comp(c), h0.comp(c));
        }
    }

    #[test]
    fn rk4_self_convergence_order_four() {
        // Fixed spatial grid, halving dt: the full-step self-difference must
        // drop by ~2^4 (time error dominates at this resolution).
        let st = small_state(1, 64, 1e-3);
        let run = |dt: f64, nsteps: usize| {
            let mut cur = st.clone();
            for _ in 0..nsteps {
                cur = step_rk4(&cur, dt, 0.0).unwrap();
            }
            cur
        };
        let t_end = 0.05;
        let sols: Vec<SpacetimeState> =
            [8usize, 16, 32].iter().map(|&m| run(t_end / m as f64, m)).collect();
        let diff = |a: &SpacetimeState, b: &SpacetimeState| {
            let mut e = 0.0f64;
            for c in 0..a.h.ncomp() {
                for p in 0..a.grid.npoints() {
                    e = e.max((a.h.comp(c)[p] - b.h.comp(c)[p]).abs());
                }
            }
            e
        };
        let e1 = diff(&sols[0], &sols[1]);
        let e2 = diff(&sols[1], &sols[2]);
        let order = (e1 / e2).log2();
        assert!(
            (order - 4.0).abs() < 0.4,
            "RK4 self-convergence order {order:.2} (errors {e1:.3e}, {e2:.3e})"
        );
    }
}
