//! Compact Lie algebra arithmetic: structure constants, Ad-invariant inner
//! product, and the fundamental-representation machinery needed to build test
//! gauge transformations.
//!
//! An algebra is described by a basis `e_a`, structure constants
//! `[e_a, e_b] = c[a][b][k] e_k` and a symmetric positive-definite metric for
//! `<.,.>`. Validation enforces antisymmetry, the Jacobi identity and
//! Ad-invariance at load time, so everything downstream can assume a genuine
//! compact-algebra structure.

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Deserialize;

use crate::grid::GridFunction;
use crate::{Error, Result};

/// Tolerance for the structural identities checked at load time.
pub const VALIDATION_TOL: f64 = 1e-12;

/// Coefficient vector in the fixed basis of the active algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    pub coeffs: Vec<f64>,
}

impl AlgebraElement {
    pub fn zeros(dim: usize) -> Self {
        Self { coeffs: vec![0.0; dim] }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    /// Basis element `e_a`.
    pub fn basis(dim: usize, a: usize) -> Self {
        let mut coeffs = vec![0.0; dim];
        coeffs[a] = 1.0;
        Self { coeffs }
    }
}

/// A finite-dimensional compact Lie algebra with a fixed basis.
#[derive(Debug, Clone)]
pub struct AlgebraSpec {
    name: String,
    dim: usize,
    /// `c[((a * dim) + b) * dim + k]` is the `e_k` coefficient of `[e_a, e_b]`.
    structure: Vec<f64>,
    /// Row-major `dim x dim` metric of the Ad-invariant inner product.
    metric: Vec<f64>,
    /// Fundamental-representation generators, when known (presets only).
    rep: Option<MatrixRep>,
}

impl AlgebraSpec {
    /// Abelian u(1): one generator, vanishing bracket, metric `[1]`.
    pub fn u1() -> Arc<Self> {
        let spec = Self {
            name: "u1".into(),
            dim: 1,
            structure: vec![0.0],
            metric: vec![1.0],
            rep: Some(MatrixRep::u1()),
        };
        spec.validate().expect("u1 preset must validate");
        Arc::new(spec)
    }

    /// su(2) with `[e_a, e_b] = eps_{abk} e_k` and the identity metric.
    pub fn su2() -> Arc<Self> {
        let dim = 3;
        let mut structure = vec![0.0; dim * dim * dim];
        for a in 0..3 {
            for b in 0..3 {
                for k in 0..3 {
                    structure[(a * dim + b) * dim + k] = levi_civita3(a, b, k);
                }
            }
        }
        let mut metric = vec![0.0; dim * dim];
        for a in 0..dim {
            metric[a * dim + a] = 1.0;
        }
        let spec = Self {
            name: "su2".into(),
            dim,
            structure,
            metric,
            rep: Some(MatrixRep::su2()),
        };
        spec.validate().expect("su2 preset must validate");
        Arc::new(spec)
    }

    /// Load a user-defined algebra from a TOML file listing `dim`, bracket
    /// triples `structure = [[a, b, k, value], ...]` (0-based indices) and the
    /// full `metric` matrix.
    pub fn from_file(path: &Path) -> Result<Arc<Self>> {
        #[derive(Deserialize)]
        struct FileAlgebra {
            name: Option<String>,
            dim: usize,
            structure: Vec<(usize, usize, usize, f64)>,
            metric: Vec<Vec<f64>>,
        }
        let text = std::fs::read_to_string(path)?;
        let parsed: FileAlgebra = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("algebra file {}: {e}", path.display())))?;
        let dim = parsed.dim;
        if dim == 0 {
            return Err(Error::Config("algebra dim must be positive".into()));
        }
        let mut structure = vec![0.0; dim * dim * dim];
        for (a, b, k, v) in parsed.structure {
            if a >= dim || b >= dim || k >= dim {
                return Err(Error::Config(format!(
                    "structure triple ({a},{b},{k}) out of range for dim {dim}"
                )));
            }
            structure[(a * dim + b) * dim + k] = v;
            // Antisymmetric completion; an explicit conflicting entry is
            // caught by validation below.
            if structure[(b * dim + a) * dim + k] == 0.0 {
                structure[(b * dim + a) * dim + k] = -v;
            }
        }
        if parsed.metric.len() != dim || parsed.metric.iter().any(|r| r.len() != dim) {
            return Err(Error::Config(format!("metric must be {dim}x{dim}")));
        }
        let metric: Vec<f64> = parsed.metric.into_iter().flatten().collect();
        let spec = Self {
            name: parsed.name.unwrap_or_else(|| "custom".into()),
            dim,
            structure,
            metric,
            rep: None,
        };
        spec.validate()?;
        Ok(Arc::new(spec))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_rep(&self) -> bool {
        self.rep.is_some()
    }

    #[inline]
    pub fn structure_constant(&self, a: usize, b: usize, k: usize) -> f64 {
        self.structure[(a * self.dim + b) * self.dim + k]
    }

    /// `[x, y]` written into `out`; all three must have length `dim`.
    #[inline]
    pub fn bracket_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let d = self.dim;
        debug_assert!(x.len() == d && y.len() == d && out.len() == d);
        out.fill(0.0);
        if d == 1 {
            return; // abelian
        }
        for a in 0..d {
            let xa = x[a];
            if xa == 0.0 {
                continue;
            }
            for b in 0..d {
                let f = xa * y[b];
                if f == 0.0 {
                    continue;
                }
                let row = (a * d + b) * d;
                for k in 0..d {
                    out[k] += f * self.structure[row + k];
                }
            }
        }
    }

    pub fn bracket(&self, x: &AlgebraElement, y: &AlgebraElement) -> Result<AlgebraElement> {
        if x.coeffs.len() != self.dim || y.coeffs.len() != self.dim {
            return Err(Error::Input(format!(
                "algebra dimension mismatch: spec dim {}, operands {} and {}",
                self.dim,
                x.coeffs.len(),
                y.coeffs.len()
            )));
        }
        let mut out = AlgebraElement::zeros(self.dim);
        self.bracket_into(&x.coeffs, &y.coeffs, &mut out.coeffs);
        Ok(out)
    }

    /// `<x, y>` with the configured metric.
    #[inline]
    pub fn inner_slices(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for a in 0..d {
            let row = a * d;
            let mut s = 0.0;
            for b in 0..d {
                s += self.metric[row + b] * y[b];
            }
            acc += x[a] * s;
        }
        acc
    }

    pub fn inner(&self, x: &AlgebraElement, y: &AlgebraElement) -> Result<f64> {
        if x.coeffs.len() != self.dim || y.coeffs.len() != self.dim {
            return Err(Error::Input(format!(
                "algebra dimension mismatch: spec dim {}, operands {} and {}",
                self.dim,
                x.coeffs.len(),
                y.coeffs.len()
            )));
        }
        Ok(self.inner_slices(&x.coeffs, &y.coeffs))
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim;
        // Antisymmetry of the structure constants.
        for a in 0..d {
            for b in 0..d {
                for k in 0..d {
                    let forward = self.structure_constant(a, b, k);
                    let backward = self.structure_constant(b, a, k);
                    if (forward + backward).abs() > VALIDATION_TOL {
                        return Err(Error::Config(format!(
                            "structure constants not antisymmetric at ({a},{b},{k})"
                        )));
                    }
                }
            }
        }
        // Jacobi identity over all basis triples.
        let mut t1 = vec![0.0; d];
        let mut t2 = vec![0.0; d];
        let mut acc = vec![0.0; d];
        for a in 0..d {
            for b in 0..d {
                for c in 0..d {
                    acc.fill(0.0);
                    let ea = basis_vec(d, a);
                    let eb = basis_vec(d, b);
                    let ec = basis_vec(d, c);
                    // [a,[b,c]] + [b,[c,a]] + [c,[a,b]]
                    self.bracket_into(&eb, &ec, &mut t1);
                    self.bracket_into(&ea, &t1, &mut t2);
                    add_assign(&mut acc, &t2);
                    self.bracket_into(&ec, &ea, &mut t1);
                    self.bracket_into(&eb, &t1, &mut t2);
                    add_assign(&mut acc, &t2);
                    self.bracket_into(&ea, &eb, &mut t1);
                    self.bracket_into(&ec, &t1, &mut t2);
                    add_assign(&mut acc, &t2);
                    let res = acc.iter().map(|v| v.abs()).fold(0.0, f64::max);
                    if res > VALIDATION_TOL {
                        return Err(Error::Config(format!(
                            "Jacobi identity fails on basis triple ({a},{b},{c}): residual {res:.3e}"
                        )));
                    }
                }
            }
        }
        // Metric symmetric positive-definite (Cholesky succeeds iff SPD).
        for a in 0..d {
            for b in 0..d {
                if (self.metric[a * d + b] - self.metric[b * d + a]).abs() > VALIDATION_TOL {
                    return Err(Error::Config("algebra metric not symmetric".into()));
                }
            }
        }
        if !cholesky_spd(&self.metric, d) {
            return Err(Error::Config("algebra metric not positive-definite".into()));
        }
        // Ad-invariance <[z,x],y> + <x,[z,y]> = 0 on basis triples.
        for z in 0..d {
            for x in 0..d {
                for y in 0..d {
                    let ez = basis_vec(d, z);
                    let ex = basis_vec(d, x);
                    let ey = basis_vec(d, y);
                    self.bracket_into(&ez, &ex, &mut t1);
                    let lhs = self.inner_slices(&t1, &ey);
                    self.bracket_into(&ez, &ey, &mut t2);
                    let rhs = self.inner_slices(&ex, &t2);
                    if (lhs + rhs).abs() > VALIDATION_TOL {
                        return Err(Error::Config(format!(
                            "inner product not Ad-invariant on basis triple ({z},{x},{y})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn rep(&self) -> Result<&MatrixRep> {
        self.rep.as_ref().ok_or_else(|| {
            Error::Unsupported(format!(
                "algebra `{}` carries no fundamental representation; gauge transformations \
                 are only available for the u1/su2 presets",
                self.name
            ))
        })
    }

    /// Matrix of `x` in the fundamental representation.
    pub fn to_matrix(&self, x: &[f64]) -> Result<CMat> {
        let rep = self.rep()?;
        let mut m = CMat::zeros(rep.dim_rep);
        for (a, gen) in rep.generators.iter().enumerate() {
            m.add_scaled(gen, Complex64::new(x[a], 0.0));
        }
        Ok(m)
    }

    /// Orthogonal projection of an (anti-hermitian) matrix back onto the
    /// algebra basis.
    pub fn from_matrix(&self, m: &CMat) -> Result<Vec<f64>> {
        let rep = self.rep()?;
        let mut coeffs = vec![0.0; self.dim];
        for (a, gen) in rep.generators.iter().enumerate() {
            coeffs[a] = m.frobenius_re(gen) / rep.gram_diag[a];
        }
        Ok(coeffs)
    }

    /// Group element `exp(x)` in the fundamental representation.
    pub fn exp(&self, x: &[f64]) -> Result<CMat> {
        Ok(self.to_matrix(x)?.expm())
    }

    /// `O X O^{-1}` projected back to algebra coefficients.
    pub fn adjoint_action(&self, o: &CMat, x: &[f64]) -> Result<Vec<f64>> {
        let xm = self.to_matrix(x)?;
        let oinv = o.inverse().ok_or_else(|| {
            Error::Numerical {
                what: "non-invertible group element in adjoint action".into(),
                t: 0.0,
                point: vec![],
            }
        })?;
        let m = o.mul(&xm).mul(&oinv);
        self.from_matrix(&m)
    }
}

fn basis_vec(d: usize, a: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[a] = 1.0;
    v
}

fn add_assign(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += *b;
    }
}

fn levi_civita3(a: usize, b: usize, c: usize) -> f64 {
    match (a, b, c) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

fn cholesky_spd(m: &[f64], d: usize) -> bool {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = m[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return false;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    true
}

/// Small dense complex matrix (fundamental representation workhorse).
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub n: usize,
    pub a: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        Self { n, a: vec![Complex64::ZERO; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = Complex64::ONE;
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.a[i * self.n + j]
    }

    pub fn add_scaled(&mut self, other: &CMat, s: Complex64) {
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            *x += s * y;
        }
    }

    pub fn mul(&self, other: &CMat) -> CMat {
        let n = self.n;
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let v = self.a[i * n + k];
                if v == Complex64::ZERO {
                    continue;
                }
                for j in 0..n {
                    out.a[i * n + j] += v * other.a[k * n + j];
                }
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.a {
            *x *= s;
        }
    }

    fn one_norm(&self) -> f64 {
        let n = self.n;
        (0..n)
            .map(|j| (0..n).map(|i| self.a[i * n + j].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Re tr(self * other^dagger).
    pub fn frobenius_re(&self, other: &CMat) -> f64 {
        self.a
            .iter()
            .zip(&other.a)
            .map(|(x, y)| (x * y.conj()).re)
            .sum()
    }

    /// Matrix exponential by scaling-and-squaring with a Taylor core.
    pub fn expm(&self) -> CMat {
        let mut squarings = 0u32;
        let mut norm = self.one_norm();
        while norm > 0.25 {
            norm *= 0.5;
            squarings += 1;
        }
        let mut scaled = self.clone();
        scaled.scale(0.5f64.powi(squarings as i32));

        // Taylor series; terms fall like (1/4)^k / k! so this converges
        // well below 1e-13 within ~16 terms.
        let mut result = CMat::identity(self.n);
        let mut term = CMat::identity(self.n);
        for k in 1..=24 {
            term = term.mul(&scaled);
            term.scale(1.0 / k as f64);
            result.add_scaled(&term, Complex64::ONE);
            if term.one_norm() < 1e-16 {
                break;
            }
        }
        for _ in 0..squarings {
            result = result.mul(&result);
        }
        result
    }

    /// Gauss-Jordan inverse with partial pivoting; `None` when singular.
    pub fn inverse(&self) -> Option<CMat> {
        let n = self.n;
        let mut work = self.clone();
        let mut inv = CMat::identity(n);
        for col in 0..n {
            let mut pivot = col;
            let mut best = work.a[col * n + col].norm();
            for r in col + 1..n {
                let v = work.a[r * n + col].norm();
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if best < 1e-14 {
                return None;
            }
            if pivot != col {
                for j in 0..n {
                    work.a.swap(col * n + j, pivot * n + j);
                    inv.a.swap(col * n + j, pivot * n + j);
                }
            }
            let d = work.a[col * n + col];
            for j in 0..n {
                work.a[col * n + j] /= d;
                inv.a[col * n + j] /= d;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = work.a[r * n + col];
                if f == Complex64::ZERO {
                    continue;
                }
                for j in 0..n {
                    let wcj = work.a[col * n + j];
                    let icj = inv.a[col * n + j];
                    work.a[r * n + j] -= f * wcj;
                    inv.a[r * n + j] -= f * icj;
                }
            }
        }
        Some(inv)
    }
}

/// Fundamental representation data for a preset algebra.
#[derive(Debug, Clone)]
struct MatrixRep {
    dim_rep: usize,
    generators: Vec<CMat>,
    /// `Re tr(T_a T_a^dagger)` for the projection back to coefficients.
    gram_diag: Vec<f64>,
}

impl MatrixRep {
    fn u1() -> Self {
        // Generator i: exp(theta * i) is the unit phase.
        let mut g = CMat::zeros(1);
        g.a[0] = Complex64::new(0.0, 1.0);
        Self { dim_rep: 1, generators: vec![g], gram_diag: vec![1.0] }
    }

    fn su2() -> Self {
        // T_a = -(i/2) sigma_a satisfies [T_a, T_b] = eps_{abk} T_k.
        let i = Complex64::new(0.0, 1.0);
        let half = Complex64::new(0.5, 0.0);
        let mut t1 = CMat::zeros(2);
        t1.a[1] = -i * half;
        t1.a[2] = -i * half;
        let mut t2 = CMat::zeros(2);
        t2.a[1] = -half;
        t2.a[2] = half;
        let mut t3 = CMat::zeros(2);
        t3.a[0] = -i * half;
        t3.a[3] = i * half;
        let generators = vec![t1, t2, t3];
        let gram_diag = generators.iter().map(|g| g.frobenius_re(g)).collect();
        Self { dim_rep: 2, generators, gram_diag }
    }
}

/// A group-valued grid function in the fundamental representation, stored as
/// interleaved (re, im) components so grid stencils apply entrywise.
pub struct GroupField {
    pub spec: Arc<AlgebraSpec>,
    pub dim_rep: usize,
    /// `2 * dim_rep^2` real components per point.
    pub entries: GridFunction,
}

impl GroupField {
    /// Build `O(x) = exp(theta(x))` from an algebra-valued profile.
    pub fn from_exponent<F>(
        spec: &Arc<AlgebraSpec>,
        grid: &Arc<crate::grid::GridSpec>,
        profile: F,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        let rep_dim = spec.rep()?.dim_rep;
        let ncomp = 2 * rep_dim * rep_dim;
        let mut entries = GridFunction::zeros(grid, ncomp);
        let npts = grid.npoints();
        let mut coords = vec![0.0; grid.d_active];
        // Matrix exponentials are not hot; a serial fill keeps this simple.
        for p in 0..npts {
            grid.coords_into(p, &mut coords);
            let theta = profile(&coords);
            let o = spec.exp(&theta)?;
            for (e, z) in o.a.iter().enumerate() {
                entries.comp_mut(2 * e)[p] = z.re;
                entries.comp_mut(2 * e + 1)[p] = z.im;
            }
        }
        Ok(Self { spec: Arc::clone(spec), dim_rep: rep_dim, entries })
    }

    pub fn matrix_at(&self, p: usize) -> CMat {
        let n = self.dim_rep;
        let mut m = CMat::zeros(n);
        for e in 0..n * n {
            m.a[e] = Complex64::new(self.entries.comp(2 * e)[p], self.entries.comp(2 * e + 1)[p]);
        }
        m
    }
}

/// Gauge transform of a potential: `A~_alpha = O A_alpha O^{-1} - (d_alpha O) O^{-1}`.
///
/// `a` holds `(n+1) * dim` algebra components per point ordered
/// `[mu * dim + basis]`; `O` is time-independent here (test construction), so
/// the `alpha = t` component transforms purely by conjugation.
pub fn gauge_transform_potential(
    spec: &AlgebraSpec,
    a: &GridFunction,
    o: &GroupField,
) -> Result<GridFunction> {
    let grid = a.spec();
    let n = grid.n;
    let dim = spec.dim();
    if a.ncomp() != (n + 1) * dim {
        return Err(Error::Input(format!(
            "potential has {} components, expected {}",
            a.ncomp(),
            (n + 1) * dim
        )));
    }
    // Entrywise spatial derivatives of O.
    let mut do_spatial = Vec::with_capacity(n);
    for dir in 1..=n {
        do_spatial.push(o.entries.partial(dir));
    }
    let mut out = GridFunction::zeros(grid, a.ncomp());
    let npts = grid.npoints();
    for p in 0..npts {
        let om = o.matrix_at(p);
        let oinv = om.inverse().ok_or_else(|| Error::Numerical {
            what: "gauge transformation hit a non-invertible group sample".into(),
            t: 0.0,
            point: grid.multi_index(p),
        })?;
        for mu in 0..=n {
            let mut acomp = vec![0.0; dim];
            for k in 0..dim {
                acomp[k] = a.comp(mu * dim + k)[p];
            }
            let mut new = spec.adjoint_action(&om, &acomp)?;
            if mu >= 1 {
                // -(d_mu O) O^{-1}
                let deriv = &do_spatial[mu - 1];
                let nrep = o.dim_rep;
                let mut dm = CMat::zeros(nrep);
                for e in 0..nrep * nrep {
                    dm.a[e] =
                        Complex64::new(deriv.comp(2 * e)[p], deriv.comp(2 * e + 1)[p]);
                }
                let pure = dm.mul(&oinv);
                let pure_coeffs = spec.from_matrix(&pure)?;
                for k in 0..dim {
                    new[k] -= pure_coeffs[k];
                }
            }
            for k in 0..dim {
                out.comp_mut(mu * dim + k)[p] = new[k];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn su2_bracket_is_levi_civita() {
        let su2 = AlgebraSpec::su2();
        let e1 = AlgebraElement::basis(3, 0);
        let e2 = AlgebraElement::basis(3, 1);
        let b = su2.bracket(&e1, &e2).unwrap();
        assert_eq!(b.coeffs, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn bracket_of_element_with_itself_vanishes() {
        let su2 = AlgebraSpec::su2();
        let x = AlgebraElement::from_coeffs(vec![0.3, -1.7, 2.4]);
        let b = su2.bracket(&x, &x).unwrap();
        for v in b.coeffs {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn bracket_dimension_mismatch_is_an_input_error() {
        let su2 = AlgebraSpec::su2();
        let x = AlgebraElement::from_coeffs(vec![1.0, 2.0]);
        let y = AlgebraElement::basis(3, 0);
        assert!(matches!(su2.bracket(&x, &y), Err(Error::Input(_))));
    }

    #[test]
    fn abelian_inner_is_plain_product() {
        let u1 = AlgebraSpec::u1();
        let x = AlgebraElement::from_coeffs(vec![3.0]);
        let y = AlgebraElement::from_coeffs(vec![-0.5]);
        assert_eq!(u1.inner(&x, &y).unwrap(), -1.5);
    }

    #[test]
    fn inner_positive_definite_iff_nonzero() {
        let su2 = AlgebraSpec::su2();
        let zero = AlgebraElement::zeros(3);
        assert_eq!(su2.inner(&zero, &zero).unwrap(), 0.0);
        let x = AlgebraElement::from_coeffs(vec![1e-8, 0.0, -2e-9]);
        assert!(su2.inner(&x, &x).unwrap() > 0.0);
    }

    /// Killing form computed numerically from structure constants:
    /// K_ab = tr(ad_a ad_b), normalised so <e1,e1> = 1 gives the identity.
    #[test]
    fn su2_killing_form_normalised_matches_identity_metric() {
        let su2 = AlgebraSpec::su2();
        let d = 3;
        let mut killing = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                let mut tr = 0.0;
                for c in 0..d {
                    for e in 0..d {
                        tr += su2.structure_constant(a, e, c) * su2.structure_constant(b, c, e);
                    }
                }
                killing[a * d + b] = tr;
            }
        }
        // -K/2 should be the identity; <e1,e2> = 0 in particular.
        let norm = -killing[0] / 1.0;
        for a in 0..d {
            for b in 0..d {
                let v = -killing[a * d + b] / norm;
                let want = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(v, want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn expm_matches_su2_closed_form() {
        // exp(theta * T_1) = cos(theta/2) I - i sin(theta/2) sigma_1.
        let su2 = AlgebraSpec::su2();
        let theta = 0.83;
        let o = su2.exp(&[theta, 0.0, 0.0]).unwrap();
        let c = (theta / 2.0).cos();
        let s = (theta / 2.0).sin();
        assert_abs_diff_eq!(o.at(0, 0).re, c, epsilon = 1e-13);
        assert_abs_diff_eq!(o.at(0, 1).im, -s, epsilon = 1e-13);
        assert_abs_diff_eq!(o.at(1, 0).im, -s, epsilon = 1e-13);
        assert_abs_diff_eq!(o.at(1, 1).re, c, epsilon = 1e-13);
    }

    #[test]
    fn matrix_roundtrip_through_rep() {
        let su2 = AlgebraSpec::su2();
        let x = vec![0.2, -0.7, 1.1];
        let m = su2.to_matrix(&x).unwrap();
        let back = su2.from_matrix(&m).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn constant_adjoint_action_preserves_inner_product() {
        let su2 = AlgebraSpec::su2();
        let o = su2.exp(&[0.4, 1.2, -0.3]).unwrap();
        let x = vec![0.5, -0.1, 0.9];
        let y = vec![-1.3, 0.2, 0.4];
        let ox = su2.adjoint_action(&o, &x).unwrap();
        let oy = su2.adjoint_action(&o, &y).unwrap();
        let before = su2.inner_slices(&x, &y);
        let after = su2.inner_slices(&ox, &oy);
        assert_abs_diff_eq!(before, after, epsilon = 1e-12);
    }

    #[test]
    fn custom_algebra_file_validation_rejects_bad_jacobi() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(
            &path,
            r#"
dim = 3
structure = [[0, 1, 2, 1.0], [1, 2, 0, 1.0], [2, 0, 1, -1.0]]
metric = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
"#,
        )
        .unwrap();
        let err = AlgebraSpec::from_file(&path).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("Jacobi") || msg.contains("Ad-invariant"), "{msg}");
    }

    #[test]
    fn custom_algebra_file_accepts_su2_clone() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("su2.toml");
        std::fs::write(
            &path,
            r#"
name = "su2-file"
dim = 3
structure = [[0, 1, 2, 1.0], [1, 2, 0, 1.0], [2, 0, 1, 1.0]]
metric = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
"#,
        )
        .unwrap();
        let alg = AlgebraSpec::from_file(&path).unwrap();
        assert_eq!(alg.dim(), 3);
        assert!(!alg.has_rep());
    }

    proptest! {
        #[test]
        fn bracket_antisymmetry_on_random_elements(
            x in prop::array::uniform3(-5.0f64..5.0),
            y in prop::array::uniform3(-5.0f64..5.0),
        ) {
            let su2 = AlgebraSpec::su2();
            let a = AlgebraElement::from_coeffs(x.to_vec());
            let b = AlgebraElement::from_coeffs(y.to_vec());
            let ab = su2.bracket(&a, &b).unwrap();
            let ba = su2.bracket(&b, &a).unwrap();
            for (u, v) in ab.coeffs.iter().zip(&ba.coeffs) {
                prop_assert!((u + v).abs() <= 1e-14);
            }
        }

        #[test]
        fn jacobi_identity_on_random_triples(
            x in prop::array::uniform3(-3.0f64..3.0),
            y in prop::array::uniform3(-3.0f64..3.0),
            z in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let su2 = AlgebraSpec::su2();
            let a = AlgebraElement::from_coeffs(x.to_vec());
            let b = AlgebraElement::from_coeffs(y.to_vec());
            let c = AlgebraElement::from_coeffs(z.to_vec());
            let t1 = su2.bracket(&b, &c).unwrap();
            let t1 = su2.bracket(&a, &t1).unwrap();
            let t2 = su2.bracket(&c, &a).unwrap();
            let t2 = su2.bracket(&b, &t2).unwrap();
            let t3 = su2.bracket(&a, &b).unwrap();
            let t3 = su2.bracket(&c, &t3).unwrap();
            for k in 0..3 {
                prop_assert!((t1.coeffs[k] + t2.coeffs[k] + t3.coeffs[k]).abs() <= 1e-12);
            }
        }

        #[test]
        fn ad_invariance_on_random_triples(
            x in prop::array::uniform3(-3.0f64..3.0),
            y in prop::array::uniform3(-3.0f64..3.0),
            z in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let su2 = AlgebraSpec::su2();
            let zx = su2.bracket_pair(&z, &x);
            let zy = su2.bracket_pair(&z, &y);
            let lhs = su2.inner_slices(&zx, &y);
            let rhs = su2.inner_slices(&x, &zy);
            prop_assert!((lhs + rhs).abs() <= 1e-12);
        }
    }

    impl AlgebraSpec {
        fn bracket_pair(&self, x: &[f64; 3], y: &[f64; 3]) -> Vec<f64> {
            let mut out = vec![0.0; 3];
            self.bracket_into(x, y, &mut out);
            out
        }
    }
}
