//! Metric bookkeeping in wave coordinates: `h <-> g <-> g^{-1}`, Christoffel
//! symbols, a direct finite-difference curvature oracle, and the
//! wave-coordinate gauge monitor `Gamma^lambda = g^{ab} Gamma^lambda_{ab}`.
//!
//! The background is the fixed Minkowski metric `m = diag(-1, +1, ..., +1)`
//! in wave coordinates; the evolved variable is `h = g - m`. Symmetric
//! 2-tensors are stored with `(n+1)(n+2)/2` packed components.

use std::sync::Arc;

use crate::grid::{GridFunction, GridSpec};
use crate::par;
use crate::{Error, Result};

/// Upper bound on `n + 1` (spatial dimension capped at 7).
pub const MAXN: usize = 8;

/// Dense square scratch matrix on the stack.
pub type Mat = [[f64; MAXN]; MAXN];

pub fn mat_zero() -> Mat {
    [[0.0; MAXN]; MAXN]
}

/// `c = a * b` over the leading `nn x nn` block.
#[inline]
pub fn mat_mul(a: &Mat, b: &Mat, nn: usize) -> Mat {
    let mut c = mat_zero();
    for i in 0..nn {
        for k in 0..nn {
            let v = a[i][k];
            if v == 0.0 {
                continue;
            }
            for j in 0..nn {
                c[i][j] += v * b[k][j];
            }
        }
    }
    c
}

/// Gauss-Jordan inverse with partial pivoting over the leading block.
pub fn mat_inverse(m: &Mat, nn: usize) -> Option<Mat> {
    let mut a = *m;
    let mut inv = mat_zero();
    for (i, row) in inv.iter_mut().enumerate().take(nn) {
        row[i] = 1.0;
    }
    for col in 0..nn {
        let mut piv = col;
        let mut best = a[col][col].abs();
        for r in col + 1..nn {
            if a[r][col].abs() > best {
                best = a[r][col].abs();
                piv = r;
            }
        }
        if best < 1e-14 {
            return None;
        }
        if piv != col {
            a.swap(col, piv);
            inv.swap(col, piv);
        }
        let d = a[col][col];
        for j in 0..nn {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..nn {
            if r == col {
                continue;
            }
            let f = a[r][col];
            if f == 0.0 {
                continue;
            }
            for j in 0..nn {
                a[r][j] -= f * a[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    Some(inv)
}

/// Packed storage map for symmetric 2-tensors over `nn` indices.
#[derive(Debug, Clone)]
pub struct SymIdx {
    pub nn: usize,
    map: [[usize; MAXN]; MAXN],
    pairs: Vec<(usize, usize)>,
}

impl SymIdx {
    pub fn new(nn: usize) -> Self {
        let mut map = [[0usize; MAXN]; MAXN];
        let mut pairs = Vec::new();
        let mut k = 0;
        for a in 0..nn {
            for b in a..nn {
                map[a][b] = k;
                map[b][a] = k;
                pairs.push((a, b));
                k += 1;
            }
        }
        Self { nn, map, pairs }
    }

    #[inline]
    pub fn idx(&self, a: usize, b: usize) -> usize {
        self.map[a][b]
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

/// Number of packed symmetric components for spacetime tensors.
pub fn sym_len(nn: usize) -> usize {
    nn * (nn + 1) / 2
}

/// Minkowski diagonal entry.
#[inline]
pub fn mink(a: usize) -> f64 {
    if a == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Unpack `g_{ab} = m_{ab} + h_{ab}` at a point into a dense matrix.
#[inline]
pub fn metric_at(h: &GridFunction, sym: &SymIdx, p: usize) -> Mat {
    let mut g = mat_zero();
    for &(a, b) in sym.pairs() {
        let v = h.comp(sym.idx(a, b))[p];
        g[a][b] = v;
        g[b][a] = v;
    }
    for a in 0..sym.nn {
        g[a][a] += mink(a);
    }
    g
}

/// Unpack a packed symmetric grid function (no Minkowski shift).
#[inline]
pub fn sym_at(f: &GridFunction, sym: &SymIdx, p: usize) -> Mat {
    let mut out = mat_zero();
    for &(a, b) in sym.pairs() {
        let v = f.comp(sym.idx(a, b))[p];
        out[a][b] = v;
        out[b][a] = v;
    }
    out
}

/// Exact pointwise inverse metric, packed symmetric. Fails with the first
/// singular point.
pub fn inverse_exact(h: &GridFunction, t: f64) -> Result<GridFunction> {
    let grid = h.spec();
    let nn = grid.n + 1;
    let sym = SymIdx::new(nn);
    let npts = grid.npoints();
    let mut out = GridFunction::zeros(grid, sym.len());
    let mut rows = vec![0.0; npts * sym.len()];
    let ncomp = sym.len();
    par::for_each_row(&mut rows, ncomp, |p, row| {
        let g = metric_at(h, &sym, p);
        match mat_inverse(&g, nn) {
            Some(ginv) => {
                for (k, &(a, b)) in sym.pairs().iter().enumerate() {
                    row[k] = ginv[a][b];
                }
            }
            None => row[0] = f64::NAN,
        }
    });
    // Transpose row-major scratch into component-major storage, surfacing
    // the first singular point.
    for p in 0..npts {
        if rows[p * ncomp].is_nan() {
            return Err(Error::Numerical {
                what: "singular metric".into(),
                t,
                point: grid.multi_index(p),
            });
        }
    }
    for k in 0..ncomp {
        let c = out.comp_mut(k);
        for p in 0..npts {
            c[p] = rows[p * ncomp + k];
        }
    }
    Ok(out)
}

/// Max over the grid of `|g^{ab}_exact - (m^{ab} - h^{ab})|`: the remainder
/// of the first-order inverse expansion, which must scale quadratically in h.
pub fn h_expansion_check(h: &GridFunction) -> Result<f64> {
    let grid = h.spec();
    let nn = grid.n + 1;
    let sym = SymIdx::new(nn);
    let ginv = inverse_exact(h, 0.0)?;
    Ok(par::max_indexed(grid.npoints(), |p| {
        let mut worst = 0.0f64;
        for &(a, b) in sym.pairs() {
            let exact = ginv.comp(sym.idx(a, b))[p];
            // h^{ab} = m^{aa} m^{bb} h_{ab} for diagonal m.
            let hup = mink(a) * mink(b) * h.comp(sym.idx(a, b))[p];
            let first_order = if a == b { mink(a) - hup } else { -hup };
            worst = worst.max((exact - first_order).abs());
        }
        worst
    }))
}

/// First derivatives of the metric: `dg[lambda]` holds `d_lambda g_{ab}`
/// (packed), with `dg[0] = pi` and spatial entries from stencils.
pub struct MetricDerivs {
    pub ginv: GridFunction,
    pub dg: Vec<GridFunction>,
}

pub fn metric_first_derivs(h: &GridFunction, pi: &GridFunction, t: f64) -> Result<MetricDerivs> {
    let grid = h.spec();
    let n = grid.n;
    let ginv = inverse_exact(h, t)?;
    let mut dg = Vec::with_capacity(n + 1);
    dg.push(pi.clone());
    for dir in 1..=n {
        dg.push(h.partial(dir));
    }
    Ok(MetricDerivs { ginv, dg })
}

/// `D[lambda][a][b] = d_lambda g_{ab}` at a point, dense.
#[inline]
pub fn derivs_at(md: &MetricDerivs, sym: &SymIdx, nn: usize, p: usize) -> Vec<Mat> {
    let mut d = vec![mat_zero(); nn];
    for (lam, slot) in d.iter_mut().enumerate() {
        let src = &md.dg[lam];
        for &(a, b) in sym.pairs() {
            let v = src.comp(sym.idx(a, b))[p];
            slot[a][b] = v;
            slot[b][a] = v;
        }
    }
    d
}

/// Christoffel symbols at a point from the inverse metric and the metric
/// gradient: `Gamma^l_{ab} = 1/2 g^{ld} (d_a g_{db} + d_b g_{da} - d_d g_{ab})`.
#[inline]
pub fn christoffel_point(ginv: &Mat, d: &[Mat], nn: usize) -> [[[f64; MAXN]; MAXN]; MAXN] {
    let mut gamma = [[[0.0; MAXN]; MAXN]; MAXN];
    for a in 0..nn {
        for b in a..nn {
            for l in 0..nn {
                let mut s = 0.0;
                for dd in 0..nn {
                    s += ginv[l][dd] * (d[a][dd][b] + d[b][dd][a] - d[dd][a][b]);
                }
                let v = 0.5 * s;
                gamma[l][a][b] = v;
                gamma[l][b][a] = v;
            }
        }
    }
    gamma
}

/// Christoffel symbols over the grid, packed as `lambda * s + sym(a,b)`.
pub fn christoffel(h: &GridFunction, pi: &GridFunction, t: f64) -> Result<GridFunction> {
    let grid = h.spec();
    let nn = grid.n + 1;
    let sym = SymIdx::new(nn);
    let md = metric_first_derivs(h, pi, t)?;
    Ok(christoffel_from_derivs(&md, grid, &sym))
}

pub fn christoffel_from_derivs(
    md: &MetricDerivs,
    grid: &Arc<GridSpec>,
    sym: &SymIdx,
) -> GridFunction {
    let nn = sym.nn;
    let s = sym.len();
    let npts = grid.npoints();
    let mut out = GridFunction::zeros(grid, nn * s);
    let mut rows = vec![0.0; npts * nn * s];
    par::for_each_row(&mut rows, nn * s, |p, row| {
        let ginv = sym_at(&md.ginv, sym, p);
        let d = derivs_at(md, sym, nn, p);
        let gamma = christoffel_point(&ginv, &d, nn);
        for l in 0..nn {
            for (k, &(a, b)) in sym.pairs().iter().enumerate() {
                row[l * s + k] = gamma[l][a][b];
            }
        }
    });
    scatter_rows(&mut out, &rows, nn * s);
    out
}

pub(crate) fn scatter_rows(out: &mut GridFunction, rows: &[f64], ncomp: usize) {
    let npts = out.npoints();
    for k in 0..ncomp {
        let c = out.comp_mut(k);
        for p in 0..npts {
            c[p] = rows[p * ncomp + k];
        }
    }
}

/// Prepared grids for the direct curvature oracle `R = dGamma + Gamma Gamma`.
///
/// Spatial derivatives of `Gamma` come from stencils; the time derivative is
/// assembled analytically from `pi` and the second time derivative of the
/// metric (`htt`), which the evolution module solves out of the wave
/// equation.
pub struct CurvatureContext {
    grid: Arc<GridSpec>,
    sym: SymIdx,
    md: MetricDerivs,
    gamma: GridFunction,
    /// `dgamma[lambda]` holds `d_lambda Gamma^l_{ab}` packed like `gamma`.
    dgamma: Vec<GridFunction>,
}

impl CurvatureContext {
    pub fn new(
        h: &GridFunction,
        pi: &GridFunction,
        htt: &GridFunction,
        t: f64,
    ) -> Result<Self> {
        let grid = Arc::clone(h.spec());
        let n = grid.n;
        let nn = n + 1;
        let sym = SymIdx::new(nn);
        let s = sym.len();
        let md = metric_first_derivs(h, pi, t)?;
        let gamma = christoffel_from_derivs(&md, &grid, &sym);

        // d_i pi for the mixed second derivatives d_t d_i g.
        let mut dpi = Vec::with_capacity(n);
        for dir in 1..=n {
            dpi.push(pi.partial(dir));
        }

        let mut dgamma = Vec::with_capacity(nn);
        // Time derivative: d_t Gamma^l_{ab} =
        //   1/2 d_t g^{ld} (..) + 1/2 g^{ld} d_t(..),
        // with d_t g^{-1} = -g^{-1} pi g^{-1} and
        // d_t d_lambda g = { htt for lambda = t, d_lambda pi otherwise }.
        let npts = grid.npoints();
        let mut gdot = GridFunction::zeros(&grid, nn * s);
        {
            let mut rows = vec![0.0; npts * nn * s];
            let md_ref = &md;
            let sym_ref = &sym;
            par::for_each_row(&mut rows, nn * s, |p, row| {
                let ginv = sym_at(&md_ref.ginv, sym_ref, p);
                let d = derivs_at(md_ref, sym_ref, nn, p);
                let pim = d[0];
                // dt_ginv = -ginv pi ginv
                let tmp = mat_mul(&ginv, &pim, nn);
                let mut dt_ginv = mat_mul(&tmp, &ginv, nn);
                for r in dt_ginv.iter_mut().take(nn) {
                    for v in r.iter_mut().take(nn) {
                        *v = -*v;
                    }
                }
                // dtd[lambda][a][b] = d_t d_lambda g_{ab}
                let mut dtd = vec![mat_zero(); nn];
                for &(a, b) in sym_ref.pairs() {
                    let v = htt.comp(sym_ref.idx(a, b))[p];
                    dtd[0][a][b] = v;
                    dtd[0][b][a] = v;
                }
                for lam in 1..nn {
                    for &(a, b) in sym_ref.pairs() {
                        let v = dpi[lam - 1].comp(sym_ref.idx(a, b))[p];
                        dtd[lam][a][b] = v;
                        dtd[lam][b][a] = v;
                    }
                }
                for (k, &(a, b)) in sym_ref.pairs().iter().enumerate() {
                    for l in 0..nn {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for dd in 0..nn {
                            s1 += dt_ginv[l][dd] * (d[a][dd][b] + d[b][dd][a] - d[dd][a][b]);
                            s2 += ginv[l][dd] * (dtd[a][dd][b] + dtd[b][dd][a] - dtd[dd][a][b]);
                        }
                        row[l * s + k] = 0.5 * (s1 + s2);
                    }
                }
            });
            scatter_rows(&mut gdot, &rows, nn * s);
        }
        dgamma.push(gdot);
        for dir in 1..=n {
            dgamma.push(gamma.partial(dir));
        }

        Ok(Self { grid, sym, md, gamma, dgamma })
    }

    pub fn gamma(&self) -> &GridFunction {
        &self.gamma
    }

    /// Ricci tensor `R_{ab} = d_l Gamma^l_{ba} - d_b Gamma^l_{la}
    /// + Gamma^l_{lr} Gamma^r_{ba} - Gamma^l_{br} Gamma^r_{la}`, packed.
    pub fn ricci(&self) -> GridFunction {
        let nn = self.sym.nn;
        let s = self.sym.len();
        let npts = self.grid.npoints();
        let mut out = GridFunction::zeros(&self.grid, s);
        let mut rows = vec![0.0; npts * s];
        par::for_each_row(&mut rows, s, |p, row| {
            let mut gm = [[[0.0; MAXN]; MAXN]; MAXN];
            let mut dgm = [[[[0.0; MAXN]; MAXN]; MAXN]; MAXN];
            for l in 0..nn {
                for (k, &(a, b)) in self.sym.pairs().iter().enumerate() {
                    let v = self.gamma.comp(l * s + k)[p];
                    gm[l][a][b] = v;
                    gm[l][b][a] = v;
                    for lam in 0..nn {
                        let w = self.dgamma[lam].comp(l * s + k)[p];
                        dgm[lam][l][a][b] = w;
                        dgm[lam][l][b][a] = w;
                    }
                }
            }
            for (k, &(a, b)) in self.sym.pairs().iter().enumerate() {
                let mut r = 0.0;
                for l in 0..nn {
                    r += dgm[l][l][b][a] - dgm[b][l][l][a];
                    for rho in 0..nn {
                        r += gm[l][l][rho] * gm[rho][b][a] - gm[l][b][rho] * gm[rho][l][a];
                    }
                }
                row[k] = r;
            }
        });
        scatter_rows(&mut out, &rows, s);
        out
    }

    /// Fully lowered Riemann tensor at one point, indexed `[a][b][c][d]`.
    /// Convention: `R^r_{s m n} = d_m Gamma^r_{ns} - d_n Gamma^r_{ms}
    /// + Gamma^r_{ml} Gamma^l_{ns} - Gamma^r_{nl} Gamma^l_{ms}`.
    pub fn riemann_lowered_at(&self, p: usize, h: &GridFunction) -> Vec<f64> {
        let nn = self.sym.nn;
        let s = self.sym.len();
        let g = metric_at(h, &self.sym, p);
        let mut gm = [[[0.0; MAXN]; MAXN]; MAXN];
        let mut dgm = [[[[0.0; MAXN]; MAXN]; MAXN]; MAXN];
        for l in 0..nn {
            for (k, &(a, b)) in self.sym.pairs().iter().enumerate() {
                let v = self.gamma.comp(l * s + k)[p];
                gm[l][a][b] = v;
                gm[l][b][a] = v;
                for lam in 0..nn {
                    let w = self.dgamma[lam].comp(l * s + k)[p];
                    dgm[lam][l][a][b] = w;
                    dgm[lam][l][b][a] = w;
                }
            }
        }
        let mut out = vec![0.0; nn * nn * nn * nn];
        for a in 0..nn {
            for b in 0..nn {
                for c in 0..nn {
                    for dd in 0..nn {
                        let mut up = 0.0;
                        for r in 0..nn {
                            let mut v = dgm[c][r][dd][b] - dgm[dd][r][c][b];
                            for l in 0..nn {
                                v += gm[r][c][l] * gm[l][dd][b] - gm[r][dd][l] * gm[l][c][b];
                            }
                            up += g[a][r] * v;
                        }
                        out[((a * nn + b) * nn + c) * nn + dd] = up;
                    }
                }
            }
        }
        out
    }

    pub fn metric_derivs(&self) -> &MetricDerivs {
        &self.md
    }
}

/// Wave-coordinate gauge monitor.
pub struct WaveGaugeMonitor {
    /// `Gamma^lambda` as an `(n+1)`-component grid function.
    pub gamma_up: GridFunction,
    /// Max pointwise gap between the two algebraically equal formulations.
    pub identity_gap: f64,
    pub linf: f64,
    /// Weighted L2 (weight supplied by the caller; `None` when skipped).
    pub weighted_l2: Option<f64>,
}

/// Computes `Gamma^lambda = g^{ab} Gamma^lambda_{ab}` and cross-checks the
/// lowered form against `g^{mn} d_m g_{sn} - 1/2 g^{mn} d_s g_{mn}`.
pub fn wave_gauge_monitor(
    h: &GridFunction,
    pi: &GridFunction,
    t: f64,
    weight: Option<&[f64]>,
) -> Result<WaveGaugeMonitor> {
    let grid = h.spec();
    let nn = grid.n + 1;
    let sym = SymIdx::new(nn);
    let md = metric_first_derivs(h, pi, t)?;
    let npts = grid.npoints();
    let mut gamma_up = GridFunction::zeros(grid, nn);
    let mut gap = vec![0.0; npts];
    {
        let mut rows = vec![0.0; npts * (nn + 1)];
        par::for_each_row(&mut rows, nn + 1, |p, row| {
            let ginv = sym_at(&md.ginv, &sym, p);
            let d = derivs_at(&md, &sym, nn, p);
            let gamma = christoffel_point(&ginv, &d, nn);
            let g = metric_at(h, &sym, p);
            let mut up = [0.0; MAXN];
            for (l, slot) in up.iter_mut().enumerate().take(nn) {
                let mut s = 0.0;
                for a in 0..nn {
                    for b in 0..nn {
                        s += ginv[a][b] * gamma[l][a][b];
                    }
                }
                *slot = s;
                row[l] = s;
            }
            // Alternative first-derivative form, lowered:
            // Gamma_s = g^{mn} d_m g_{sn} - 1/2 g^{mn} d_s g_{mn}.
            let mut worst = 0.0f64;
            for sdx in 0..nn {
                let mut c = 0.0;
                let mut tr = 0.0;
                for m in 0..nn {
                    for n2 in 0..nn {
                        c += ginv[m][n2] * d[m][sdx][n2];
                        tr += ginv[m][n2] * d[sdx][m][n2];
                    }
                }
                let alt = c - 0.5 * tr;
                let mut lowered = 0.0;
                for l in 0..nn {
                    lowered += g[sdx][l] * up[l];
                }
                worst = worst.max((lowered - alt).abs());
            }
            row[nn] = worst;
        });
        for p in 0..npts {
            gap[p] = rows[p * (nn + 1) + nn];
        }
        scatter_rows_partial(&mut gamma_up, &rows, nn + 1, nn);
    }
    let identity_gap = par::max_indexed(npts, |p| gap[p]);
    let linf = gamma_up.linf();
    let weighted_l2 = weight.map(|w| gamma_up.weighted_l2(w));
    Ok(WaveGaugeMonitor { gamma_up, identity_gap, linf, weighted_l2 })
}

fn scatter_rows_partial(out: &mut GridFunction, rows: &[f64], row_len: usize, ncomp: usize) {
    let npts = out.npoints();
    for k in 0..ncomp {
        let c = out.comp_mut(k);
        for p in 0..npts {
            c[p] = rows[p * row_len + k];
        }
    }
}

/// Lorentzian-signature guard: `-g^{tt} > 0` and the spatial block of
/// `g_{ij}` positive-definite at every point.
pub fn signature_check(h: &GridFunction, t: f64) -> Result<()> {
    let grid = h.spec();
    let nn = grid.n + 1;
    let n = grid.n;
    let sym = SymIdx::new(nn);
    let npts = grid.npoints();
    let bad = par::max_indexed(npts, |p| {
        let g = metric_at(h, &sym, p);
        let Some(ginv) = mat_inverse(&g, nn) else {
            return p as f64 + 1.0;
        };
        if -ginv[0][0] <= 0.0 {
            return p as f64 + 1.0;
        }
        // Cholesky of the spatial block.
        let mut l = mat_zero();
        for i in 0..n {
            for j in 0..=i {
                let mut s = g[i + 1][j + 1];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                if i == j {
                    if s <= 0.0 {
                        return p as f64 + 1.0;
                    }
                    l[i][i] = s.sqrt();
                } else {
                    l[i][j] = s / l[j][j];
                }
            }
        }
        0.0
    });
    if bad > 0.0 {
        let p = bad as usize - 1;
        return Err(Error::InvariantViolation {
            invariant: "lorentzian-signature".into(),
            t,
            point: grid.multi_index(p),
            stage: 0,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Spatial (Riemannian) curvature for the constraint equations.
// ---------------------------------------------------------------------------

/// Intrinsic curvature data of a spatial metric `gbar_{ij}` (packed over n
/// spatial indices).
pub struct SpatialCurvature {
    pub ginv: GridFunction,
    pub christoffel: GridFunction,
    pub ricci: GridFunction,
    pub scalar: GridFunction,
}

/// Direct `dGamma + Gamma Gamma` curvature of a Riemannian metric on the
/// slice; derivative directions run over the active spatial axes only.
pub fn spatial_curvature(gbar: &GridFunction) -> Result<SpatialCurvature> {
    let grid = gbar.spec();
    let n = grid.n;
    let sym = SymIdx::new(n);
    let s = sym.len();
    let npts = grid.npoints();

    // Inverse.
    let mut ginv = GridFunction::zeros(grid, s);
    {
        let mut rows = vec![0.0; npts * s];
        let mut singular = vec![false; npts];
        par::for_each_row(&mut rows, s, |p, row| {
            let g = sym_at(gbar, &sym, p);
            match mat_inverse(&g, n) {
                Some(gi) => {
                    for (k, &(a, b)) in sym.pairs().iter().enumerate() {
                        row[k] = gi[a][b];
                    }
                }
                None => row[0] = f64::NAN,
            }
        });
        for (p, fl) in singular.iter_mut().enumerate() {
            *fl = rows[p * s].is_nan();
        }
        if let Some(p) = singular.iter().position(|&b| b) {
            return Err(Error::Input(format!(
                "spatial metric degenerate at point {:?}",
                grid.multi_index(p)
            )));
        }
        scatter_rows(&mut ginv, &rows, s);
    }

    // Spatial first derivatives.
    let mut dg = Vec::with_capacity(n);
    for dir in 1..=n {
        dg.push(gbar.partial(dir));
    }

    // Christoffels of gbar.
    let mut christ = GridFunction::zeros(grid, n * s);
    {
        let mut rows = vec![0.0; npts * n * s];
        par::for_each_row(&mut rows, n * s, |p, row| {
            let gi = sym_at(&ginv, &sym, p);
            let mut d = vec![mat_zero(); n];
            for (k, slot) in d.iter_mut().enumerate() {
                for &(a, b) in sym.pairs() {
                    let v = dg[k].comp(sym.idx(a, b))[p];
                    slot[a][b] = v;
                    slot[b][a] = v;
                }
            }
            for (k, &(a, b)) in sym.pairs().iter().enumerate() {
                for l in 0..n {
                    let mut acc = 0.0;
                    for dd in 0..n {
                        acc += gi[l][dd] * (d[a][dd][b] + d[b][dd][a] - d[dd][a][b]);
                    }
                    row[l * s + k] = 0.5 * acc;
                }
            }
        });
        scatter_rows(&mut christ, &rows, n * s);
    }

    // dGamma (spatial only) and assembly.
    let mut dchrist = Vec::with_capacity(n);
    for dir in 1..=n {
        dchrist.push(christ.partial(dir));
    }
    let mut ricci = GridFunction::zeros(grid, s);
    let mut scalar = GridFunction::zeros(grid, 1);
    {
        let mut rows = vec![0.0; npts * (s + 1)];
        par::for_each_row(&mut rows, s + 1, |p, row| {
            let gi = sym_at(&ginv, &sym, p);
            let mut gm = [[[0.0; MAXN]; MAXN]; MAXN];
            let mut dgm = [[[[0.0; MAXN]; MAXN]; MAXN]; MAXN];
            for l in 0..n {
                for (k, &(a, b)) in sym.pairs().iter().enumerate() {
                    let v = christ.comp(l * s + k)[p];
                    gm[l][a][b] = v;
                    gm[l][b][a] = v;
                    for (lam, dch) in dchrist.iter().enumerate() {
                        let w = dch.comp(l * s + k)[p];
                        dgm[lam][l][a][b] = w;
                        dgm[lam][l][b][a] = w;
                    }
                }
            }
            let mut rs = 0.0;
            for (k, &(a, b)) in sym.pairs().iter().enumerate() {
                let mut r = 0.0;
                for l in 0..n {
                    r += dgm[l][l][b][a] - dgm[b][l][l][a];
                    for rho in 0..n {
                        r += gm[l][l][rho] * gm[rho][b][a] - gm[l][b][rho] * gm[rho][l][a];
                    }
                }
                row[k] = r;
                let mult = if a == b { 1.0 } else { 2.0 };
                rs += mult * gi[a][b] * r;
            }
            row[s] = rs;
        });
        scatter_rows_partial(&mut ricci, &rows, s + 1, s);
        let c = scalar.comp_mut(0);
        for p in 0..npts {
            c[p] = rows[p * (s + 1) + s];
        }
    }

    Ok(SpatialCurvature { ginv, christoffel: christ, ricci, scalar })
}
