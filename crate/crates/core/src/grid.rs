//! n-dimensional spatial discretisation with symmetry reduction.
//!
//! Fields live on a Cartesian grid over the first `d_active` spatial
//! coordinates and are homogeneous in the remaining `n - d_active`
//! directions: derivatives there vanish identically while every tensor
//! component keeps its full `0..=n` index range. All other modules obtain
//! derivatives exclusively through [`GridFunction::partial`] and
//! [`GridFunction::partial2`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::par;
use crate::{Error, Result};

/// Boundary handling for the active directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Wrap-around; the run mode for convergence and gauge-propagation tests.
    Periodic,
    /// One-sided stencils at faces plus an outgoing-wave closure applied by
    /// the evolution loop; the run mode for decay/energy diagnostics.
    Sommerfeld,
}

/// Finite-difference weights for one derivative order on one axis.
///
/// Interior rows are stored in difference form so constants are annihilated
/// exactly: first derivatives as `sum_k w_k (f[i+k] - f[i-k])`, second
/// derivatives as `sum_k w_k ((f[i+k] - f[i]) + (f[i-k] - f[i]))`,
/// `k = 1..=halo`.
#[derive(Debug, Clone)]
struct AxisStencil {
    /// Difference-form weights for offsets `1..=halo`.
    interior: Vec<f64>,
    halo: usize,
    /// One-sided rows used at distance `0..halo` from the low face
    /// (Sommerfeld mode only). Row `d` holds weights on nodes `0..row.len()`
    /// evaluated at node `d`.
    edge_lo: Vec<Vec<f64>>,
    /// Mirrored rows for the high face.
    edge_hi: Vec<Vec<f64>>,
}

/// Grid geometry, boundary mode and stencil tables.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub n: usize,
    pub d_active: usize,
    pub points: Vec<usize>,
    pub spacing: Vec<f64>,
    pub origin: Vec<f64>,
    pub boundary: Boundary,
    pub stencil_order: usize,
    strides: Vec<usize>,
    npts: usize,
    d1: Vec<AxisStencil>,
    d2: Vec<AxisStencil>,
    /// Test hook: degrade first-derivative accuracy by one order.
    pub stencil_fault_injection: bool,
}

/// Fornberg weights: row `m` holds the weights of the `m`-th derivative at
/// `z` on the given nodes.
fn fd_weights(z: f64, nodes: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Adjust the self-node weight so rows annihilate constants exactly
/// (the analytic sum is zero; floating-point rounding leaves ~1 ulp).
fn zero_sum(row: &mut [f64], self_node: usize) {
    let sum: f64 = row.iter().sum();
    row[self_node] -= sum;
}

fn build_axis_stencil(order: usize, deriv: usize, dx: f64) -> AxisStencil {
    let halo = order / 2;
    let scale = dx.powi(-(deriv as i32));
    // Centered window of order+1 nodes, symmetrised into difference form.
    let nodes: Vec<f64> = (-(halo as isize)..=halo as isize).map(|k| k as f64).collect();
    let full = &fd_weights(0.0, &nodes, deriv)[deriv];
    let mirror_sign = if deriv.is_multiple_of(2) { 1.0 } else { -1.0 };
    let interior: Vec<f64> = (1..=halo)
        .map(|k| 0.5 * (full[halo + k] + mirror_sign * full[halo - k]) * scale)
        .collect();
    // One-sided windows: order+deriv nodes keep the formal order at faces.
    let width = order + deriv;
    let edge_nodes: Vec<f64> = (0..width).map(|k| k as f64).collect();
    let mut edge_lo = Vec::with_capacity(halo);
    let mut edge_hi = Vec::with_capacity(halo);
    for d in 0..halo {
        let mut row: Vec<f64> = fd_weights(d as f64, &edge_nodes, deriv)[deriv]
            .iter()
            .map(|w| w * scale)
            .collect();
        zero_sum(&mut row, d);
        // Mirror: f(-x) flips odd derivatives.
        let mirrored: Vec<f64> = row.iter().rev().map(|w| mirror_sign * w).collect();
        edge_lo.push(row);
        edge_hi.push(mirrored);
    }
    AxisStencil { interior, halo, edge_lo, edge_hi }
}

impl GridSpec {
    pub fn new(
        n: usize,
        d_active: usize,
        points: Vec<usize>,
        spacing: Vec<f64>,
        origin: Vec<f64>,
        boundary: Boundary,
        stencil_order: usize,
    ) -> Result<Arc<Self>> {
        if !(3..=7).contains(&n) {
            return Err(Error::Config(format!("spatial dimension n={n} outside 3..=7")));
        }
        if d_active == 0 || d_active > n {
            return Err(Error::Config(format!("d_active={d_active} outside 1..={n}")));
        }
        if stencil_order != 2 && stencil_order != 4 {
            return Err(Error::Config(format!("stencil_order={stencil_order} not in {{2,4}}")));
        }
        if points.len() != d_active || spacing.len() != d_active || origin.len() != d_active {
            return Err(Error::Config(
                "points/spacing/origin must each have d_active entries".into(),
            ));
        }
        let min_pts = 2 * stencil_order + 1;
        for (k, &np) in points.iter().enumerate() {
            if np < min_pts {
                return Err(Error::Config(format!(
                    "points[{k}]={np} below minimum {min_pts} for stencil order {stencil_order}"
                )));
            }
        }
        for (k, &dx) in spacing.iter().enumerate() {
            // Also rejects NaN.
            if dx.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::Config(format!("spacing[{k}]={dx} must be positive")));
            }
        }
        let mut strides = vec![1usize; d_active];
        for k in 1..d_active {
            strides[k] = strides[k - 1] * points[k - 1];
        }
        let npts = points.iter().product();
        let d1 = spacing.iter().map(|&dx| build_axis_stencil(stencil_order, 1, dx)).collect();
        let d2 = spacing.iter().map(|&dx| build_axis_stencil(stencil_order, 2, dx)).collect();
        Ok(Arc::new(Self {
            n,
            d_active,
            points,
            spacing,
            origin,
            boundary,
            stencil_order,
            strides,
            npts,
            d1,
            d2,
            stencil_fault_injection: false,
        }))
    }

    /// Symmetric box `[-half, half]^d_active`, node-centred with an odd point
    /// count so the origin lies on a node.
    pub fn symmetric_box(
        n: usize,
        d_active: usize,
        points_per_dim: usize,
        half_extent: f64,
        boundary: Boundary,
        stencil_order: usize,
    ) -> Result<Arc<Self>> {
        let np = points_per_dim;
        let dx = match boundary {
            // Periodic cell of length 2*half: nodes at -half + i*dx, no
            // duplicate endpoint.
            Boundary::Periodic => 2.0 * half_extent / np as f64,
            Boundary::Sommerfeld => 2.0 * half_extent / (np - 1) as f64,
        };
        Self::new(
            n,
            d_active,
            vec![np; d_active],
            vec![dx; d_active],
            vec![-half_extent; d_active],
            boundary,
            stencil_order,
        )
    }

    pub fn npoints(&self) -> usize {
        self.npts
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Volume of one cell over the active directions (homogeneous directions
    /// are normalised per unit volume).
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn multi_index(&self, p: usize) -> Vec<usize> {
        let mut out = vec![0; self.d_active];
        let mut rem = p;
        for k in 0..self.d_active {
            out[k] = rem % self.points[k];
            rem /= self.points[k];
        }
        out
    }

    #[inline]
    pub fn axis_index(&self, p: usize, axis: usize) -> usize {
        (p / self.strides[axis]) % self.points[axis]
    }

    pub fn coords_into(&self, p: usize, out: &mut [f64]) {
        for k in 0..self.d_active {
            out[k] = self.origin[k] + self.axis_index(p, k) as f64 * self.spacing[k];
        }
    }

    pub fn coords(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.d_active];
        self.coords_into(p, &mut out);
        out
    }

    /// Coordinate of spatial direction `i` (1-based); inactive directions sit
    /// at their homogeneous slice `x^i = 0`.
    #[inline]
    pub fn coord_of_dir(&self, p: usize, dir: usize) -> f64 {
        debug_assert!((1..=self.n).contains(&dir));
        if dir <= self.d_active {
            self.origin[dir - 1] + self.axis_index(p, dir - 1) as f64 * self.spacing[dir - 1]
        } else {
            0.0
        }
    }

    /// Euclidean radius over the active coordinates.
    #[inline]
    pub fn radius(&self, p: usize) -> f64 {
        let mut s = 0.0;
        for k in 0..self.d_active {
            let x = self.origin[k] + self.axis_index(p, k) as f64 * self.spacing[k];
            s += x * x;
        }
        s.sqrt()
    }

    /// Retarded coordinate `q = r - t`.
    #[inline]
    pub fn retarded_q(&self, p: usize, t: f64) -> f64 {
        self.radius(p) - t
    }

    pub fn radial_coordinate(self: &Arc<Self>) -> GridFunction {
        let mut f = GridFunction::zeros(self, 1);
        let spec = Arc::clone(self);
        par::fill_indexed(&mut f.values, move |p| spec.radius(p));
        f
    }

    /// True when `p` touches an outer face of any active direction.
    #[inline]
    pub fn on_boundary(&self, p: usize) -> bool {
        for k in 0..self.d_active {
            let i = self.axis_index(p, k);
            if i == 0 || i + 1 == self.points[k] {
                return true;
            }
        }
        false
    }

    /// Same extent at doubled resolution (convergence studies).
    pub fn refine(&self) -> Result<Arc<Self>> {
        let (points, spacing): (Vec<usize>, Vec<f64>) = match self.boundary {
            Boundary::Periodic => self
                .points
                .iter()
                .zip(&self.spacing)
                .map(|(&np, &dx)| (np * 2, dx / 2.0))
                .unzip(),
            Boundary::Sommerfeld => self
                .points
                .iter()
                .zip(&self.spacing)
                .map(|(&np, &dx)| (np * 2 - 1, dx / 2.0))
                .unzip(),
        };
        let mut spec = Self::new(
            self.n,
            self.d_active,
            points,
            spacing,
            self.origin.clone(),
            self.boundary,
            self.stencil_order,
        )?;
        if self.stencil_fault_injection {
            Arc::get_mut(&mut spec).unwrap().stencil_fault_injection = true;
        }
        Ok(spec)
    }

    /// Copy with the fault-injection hook enabled (convergence-harness test).
    pub fn with_fault_injection(self: &Arc<Self>) -> Arc<Self> {
        let mut spec = (**self).clone();
        spec.stencil_fault_injection = true;
        Arc::new(spec)
    }
}

/// Dense multi-component field over a grid, component-major storage.
#[derive(Debug, Clone)]
pub struct GridFunction {
    spec: Arc<GridSpec>,
    ncomp: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(spec: &Arc<GridSpec>, ncomp: usize) -> Self {
        Self { spec: Arc::clone(spec), ncomp, values: vec![0.0; ncomp * spec.npts] }
    }

    pub fn from_fn<F>(spec: &Arc<GridSpec>, ncomp: usize, f: F) -> Self
    where
        F: Fn(&[f64], usize) -> f64 + Sync + Send,
    {
        let mut out = Self::zeros(spec, ncomp);
        let npts = spec.npts;
        let s = Arc::clone(spec);
        par::fill_indexed(&mut out.values, move |g| {
            let c = g / npts;
            let p = g % npts;
            let mut coords = [0.0; 7];
            s.coords_into(p, &mut coords[..s.d_active]);
            f(&coords[..s.d_active], c)
        });
        out
    }

    pub fn spec(&self) -> &Arc<GridSpec> {
        &self.spec
    }

    pub fn ncomp(&self) -> usize {
        self.ncomp
    }

    pub fn npoints(&self) -> usize {
        self.spec.npts
    }

    #[inline]
    pub fn comp(&self, c: usize) -> &[f64] {
        let n = self.spec.npts;
        &self.values[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.spec.npts;
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn fill_from<F>(&mut self, f: F)
    where
        F: Fn(usize, usize) -> f64 + Sync + Send,
    {
        let npts = self.spec.npts;
        par::fill_indexed(&mut self.values, move |g| f(g / npts, g % npts));
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    pub fn axpy(&mut self, a: f64, x: &GridFunction) {
        debug_assert_eq!(self.values.len(), x.values.len());
        let xs = &x.values;
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.values
                .par_chunks_mut(par::SUM_BLOCK)
                .enumerate()
                .for_each(|(b, chunk)| {
                    let base = b * par::SUM_BLOCK;
                    for (k, v) in chunk.iter_mut().enumerate() {
                        *v += a * xs[base + k];
                    }
                });
        }
        #[cfg(not(feature = "parallel"))]
        for (v, x) in self.values.iter_mut().zip(xs) {
            *v += a * x;
        }
    }

    /// First derivative along spatial direction `dir` (1-based). Directions
    /// beyond `d_active` are homogeneous and give the zero field.
    pub fn partial(&self, dir: usize) -> GridFunction {
        assert!((1..=self.spec.n).contains(&dir), "direction out of range");
        if dir > self.spec.d_active {
            return GridFunction::zeros(&self.spec, self.ncomp);
        }
        self.apply_stencil(dir - 1, 1)
    }

    /// Second derivative `d_i d_j`. Equal indices use the dedicated
    /// second-derivative stencil; mixed indices compose two first-derivative
    /// applications.
    pub fn partial2(&self, i: usize, j: usize) -> GridFunction {
        assert!((1..=self.spec.n).contains(&i) && (1..=self.spec.n).contains(&j));
        let d = self.spec.d_active;
        if i > d || j > d {
            return GridFunction::zeros(&self.spec, self.ncomp);
        }
        if i == j {
            self.apply_stencil(i - 1, 2)
        } else {
            self.partial(i).partial(j)
        }
    }

    fn apply_stencil(&self, axis: usize, deriv: usize) -> GridFunction {
        let spec = &self.spec;
        let st = if deriv == 1 { &spec.d1[axis] } else { &spec.d2[axis] };
        let npts = spec.npts;
        let nline = spec.points[axis];
        let stride = spec.strides[axis];
        let halo = st.halo;
        let periodic = spec.boundary == Boundary::Periodic;
        let mut out = GridFunction::zeros(spec, self.ncomp);
        let values = &self.values;

        let fault = if spec.stencil_fault_injection && deriv == 1 {
            0.5 * spec.spacing[axis].powi(spec.stencil_order as i32 - 1)
        } else {
            0.0
        };

        let second = deriv == 2;
        par::fill_indexed(&mut out.values, |g| {
            let c = g / npts;
            let p = g % npts;
            let base = c * npts;
            let i = (p / stride) % nline;
            let line0 = p - i * stride;
            let mut acc = 0.0;
            if periodic {
                let center = values[base + p];
                for (k, &w) in st.interior.iter().enumerate() {
                    let off = (k + 1) as isize;
                    let up = (i as isize + off).rem_euclid(nline as isize) as usize;
                    let dn = (i as isize - off).rem_euclid(nline as isize) as usize;
                    let fu = values[base + line0 + up * stride];
                    let fd = values[base + line0 + dn * stride];
                    acc += if second {
                        w * ((fu - center) + (fd - center))
                    } else {
                        w * (fu - fd)
                    };
                }
            } else if i >= halo && i + halo < nline {
                let center = values[base + p];
                for (k, &w) in st.interior.iter().enumerate() {
                    let off = (k + 1) * stride;
                    let fu = values[base + line0 + i * stride + off];
                    let fd = values[base + line0 + i * stride - off];
                    acc += if second {
                        w * ((fu - center) + (fd - center))
                    } else {
                        w * (fu - fd)
                    };
                }
            } else if i < halo {
                let row = &st.edge_lo[i];
                for (k, &w) in row.iter().enumerate() {
                    acc += w * values[base + line0 + k * stride];
                }
            } else {
                let d = nline - 1 - i;
                let row = &st.edge_hi[d];
                let start = nline - row.len();
                for (k, &w) in row.iter().enumerate() {
                    acc += w * values[base + line0 + (start + k) * stride];
                }
            }
            acc + fault * values[base + p]
        });
        out
    }

    /// Radial derivative `(x_i / r) d_i` over active directions. At `r = 0`
    /// the radial direction is undefined and the derivative is set to zero.
    pub fn partial_radial(&self) -> GridFunction {
        let spec = Arc::clone(&self.spec);
        let mut out = GridFunction::zeros(&self.spec, self.ncomp);
        let npts = spec.npts;
        let mut parts = Vec::with_capacity(spec.d_active);
        for k in 0..spec.d_active {
            parts.push(self.partial(k + 1));
        }
        par::fill_indexed(&mut out.values, |g| {
            let c = g / npts;
            let p = g % npts;
            let r = spec.radius(p);
            if r < 1e-300 {
                return 0.0;
            }
            let mut acc = 0.0;
            for (k, part) in parts.iter().enumerate() {
                let x = spec.origin[k] + spec.axis_index(p, k) as f64 * spec.spacing[k];
                acc += x / r * part.comp(c)[p];
            }
            acc
        });
        out
    }

    /// Max absolute value over all components and points.
    pub fn linf(&self) -> f64 {
        par::max_indexed(self.values.len(), |i| self.values[i].abs())
    }

    /// Max absolute value over points with radius at most `r_max` (the
    /// causally clean interior of a Sommerfeld box).
    pub fn linf_within(&self, r_max: f64) -> f64 {
        let npts = self.spec.npts;
        par::max_indexed(self.values.len(), |i| {
            if self.spec.radius(i % npts) <= r_max {
                self.values[i].abs()
            } else {
                0.0
            }
        })
    }

    /// Plain L2 norm `sqrt(sum v^2 * cell_volume)` over all components.
    pub fn l2(&self) -> f64 {
        let vol = self.spec.cell_volume();
        (par::sum_indexed(self.values.len(), |i| self.values[i] * self.values[i]) * vol).sqrt()
    }

    /// Weighted L2 norm with a per-point weight field.
    pub fn weighted_l2(&self, weight: &[f64]) -> f64 {
        assert_eq!(weight.len(), self.spec.npts);
        let npts = self.spec.npts;
        let vol = self.spec.cell_volume();
        let s = par::sum_indexed(self.values.len(), |g| {
            let p = g % npts;
            weight[p] * self.values[g] * self.values[g]
        });
        (s * vol).sqrt()
    }

    /// Midpoint-rule integral of component 0 over the active volume.
    pub fn integral(&self) -> f64 {
        par::sum(self.comp(0)) * self.spec.cell_volume()
    }

    /// First non-finite entry as `(component, point)`.
    pub fn check_finite(&self) -> std::result::Result<(), (usize, usize)> {
        let npts = self.spec.npts;
        for (g, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err((g / npts, g % npts));
            }
        }
        Ok(())
    }
}
