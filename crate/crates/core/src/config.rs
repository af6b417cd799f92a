//! Run configuration: TOML with sections, resolved into grid/algebra/data
//! objects. Reproducibility by file: no environment configuration except an
//! output-directory override.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::algebra::AlgebraSpec;
use crate::grid::{Boundary, GridSpec};
use crate::initial::InitialDataSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub d_active: usize,
    pub points: usize,
    /// Half side length of the symmetric box.
    pub half_extent: f64,
    pub boundary: Boundary,
    #[serde(default = "default_stencil_order")]
    pub stencil_order: usize,
    /// Test hook: degrade the first-derivative stencil by one order.
    #[serde(default)]
    pub stencil_fault_injection: bool,
}

fn default_stencil_order() -> usize {
    4
}

/// `algebra = "u1" | "su2" | { file = <path> }`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AlgebraConfig {
    Named(String),
    File { file: PathBuf },
}

impl Default for AlgebraConfig {
    fn default() -> Self {
        AlgebraConfig::Named("u1".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdConfig {
    pub family: String,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_mode")]
    pub mode: usize,
    #[serde(default = "default_component")]
    pub component: usize,
    /// Snapshot path for `family = "file"`.
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Run the conformal Hamiltonian relaxation before building data.
    #[serde(default)]
    pub relax: bool,
    /// Relative relaxation tolerance (fraction of the initial residual).
    #[serde(default = "default_relax_tol")]
    pub relax_tol: f64,
    #[serde(default = "default_relax_iters")]
    pub relax_max_iters: usize,
}

fn default_amplitude() -> f64 {
    1e-3
}
fn default_width() -> f64 {
    1.0
}
fn default_mode() -> usize {
    1
}
fn default_component() -> usize {
    2
}
fn default_relax_tol() -> f64 {
    1e-8
}
fn default_relax_iters() -> usize {
    400
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub t_end: f64,
    #[serde(default = "default_diag_interval")]
    pub diag_interval: f64,
    #[serde(default)]
    pub dissipation_eps: f64,
    #[serde(default = "default_growth")]
    pub max_growth_factor: f64,
}

fn default_cfl() -> f64 {
    0.25
}
fn default_diag_interval() -> f64 {
    0.1
}
fn default_growth() -> f64 {
    1e3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Highest Lie-derivative order in the energy (0..=2).
    #[serde(default = "default_energy_order")]
    pub energy_max_order: usize,
    #[serde(default)]
    pub hardy: bool,
    #[serde(default = "default_hardy_a")]
    pub hardy_a: usize,
    #[serde(default)]
    pub ks: bool,
    #[serde(default)]
    pub decay_fit: bool,
    #[serde(default)]
    pub groenwall: bool,
    #[serde(default = "default_groenwall_bound")]
    pub groenwall_bound: f64,
    /// Evaluate the EYM / YM-divergence residual oracles per sample.
    #[serde(default = "default_true")]
    pub eym_residual: bool,
    /// Constraint gate for build_hyperbolic_data.
    #[serde(default = "default_gate")]
    pub constraint_gate: f64,
}

fn default_gamma() -> f64 {
    0.5
}
fn default_energy_order() -> usize {
    0
}
fn default_hardy_a() -> usize {
    0
}
fn default_groenwall_bound() -> f64 {
    1.2
}
fn default_true() -> bool {
    true
}
fn default_gate() -> f64 {
    1e-6
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub algebra: AlgebraConfig,
    pub id: IdConfig,
    pub evolution: EvolutionSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_str(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.diagnostics.gamma <= 0.0 {
            return Err(Error::Config("diagnostics.gamma must be positive".into()));
        }
        if self.evolution.cfl <= 0.0 {
            return Err(Error::Config("evolution.cfl must be positive".into()));
        }
        if self.evolution.t_end < 0.0 {
            return Err(Error::Config("evolution.t_end must be nonnegative".into()));
        }
        if self.diagnostics.energy_max_order > crate::diagnostics::N_MAX {
            return Err(Error::Config(format!(
                "diagnostics.energy_max_order exceeds {}",
                crate::diagnostics::N_MAX
            )));
        }
        match self.id.family.as_str() {
            "flat" | "abelian_wave" | "su2_pulse" => {}
            "file" => {
                if self.id.file.is_none() {
                    return Err(Error::Config("id.family = \"file\" needs id.file".into()));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown id.family `{other}` (expected flat | abelian_wave | su2_pulse | file)"
                )))
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Arc<GridSpec>> {
        let g = GridSpec::symmetric_box(
            self.grid.n,
            self.grid.d_active,
            self.grid.points,
            self.grid.half_extent,
            self.grid.boundary,
            self.grid.stencil_order,
        )?;
        Ok(if self.grid.stencil_fault_injection { g.with_fault_injection() } else { g })
    }

    pub fn build_algebra(&self) -> Result<Arc<AlgebraSpec>> {
        match &self.algebra {
            AlgebraConfig::Named(name) => match name.as_str() {
                "u1" => Ok(AlgebraSpec::u1()),
                "su2" => Ok(AlgebraSpec::su2()),
                other => Err(Error::Config(format!(
                    "unknown algebra `{other}` (expected u1 | su2 | {{ file = ... }})"
                ))),
            },
            AlgebraConfig::File { file } => AlgebraSpec::from_file(file),
        }
    }

    pub fn build_initial_data(
        &self,
        grid: &Arc<GridSpec>,
        algebra: &Arc<AlgebraSpec>,
    ) -> Result<InitialDataSet> {
        match self.id.family.as_str() {
            "flat" => Ok(InitialDataSet::flat(grid, algebra)),
            "abelian_wave" => InitialDataSet::abelian_wave(
                grid,
                algebra,
                self.id.amplitude,
                self.id.mode,
                self.id.component,
                if grid.boundary == Boundary::Sommerfeld { self.id.width } else { 0.0 },
            ),
            "su2_pulse" => {
                InitialDataSet::su2_pulse(grid, algebra, self.id.amplitude, self.id.width)
            }
            "file" => Err(Error::Config(
                "id.family = \"file\" is resolved by the driver via snapshot loading".into(),
            )),
            _ => unreachable!("validated"),
        }
    }

    /// Fixed-order key = value rendering embedded in output headers; the
    /// byte-for-byte identical header is part of the determinism contract.
    pub fn canonical_text(&self) -> String {
        let g = &self.grid;
        let id = &self.id;
        let e = &self.evolution;
        let d = &self.diagnostics;
        let algebra = match &self.algebra {
            AlgebraConfig::Named(s) => s.clone(),
            AlgebraConfig::File { file } => format!("file:{}", file.display()),
        };
        let boundary = match g.boundary {
            Boundary::Periodic => "periodic",
            Boundary::Sommerfeld => "sommerfeld",
        };
        format!(
            "grid.n = {}\ngrid.d_active = {}\ngrid.points = {}\ngrid.half_extent = {:e}\n\
             grid.boundary = {}\ngrid.stencil_order = {}\ngrid.fault_injection = {}\n\
             algebra = {}\n\
             id.family = {}\nid.amplitude = {:e}\nid.width = {:e}\nid.mode = {}\n\
             id.component = {}\nid.relax = {}\nid.relax_tol = {:e}\n\
             evolution.cfl = {:e}\nevolution.t_end = {:e}\nevolution.diag_interval = {:e}\n\
             evolution.dissipation_eps = {:e}\nevolution.max_growth_factor = {:e}\n\
             diagnostics.gamma = {:e}\ndiagnostics.energy_max_order = {}\n\
             diagnostics.hardy = {}\ndiagnostics.ks = {}\ndiagnostics.decay_fit = {}\n\
             diagnostics.groenwall = {}\ndiagnostics.groenwall_bound = {:e}\n\
             diagnostics.eym_residual = {}\ndiagnostics.constraint_gate = {:e}\n\
             output.seed = {}",
            g.n,
            g.d_active,
            g.points,
            g.half_extent,
            boundary,
            g.stencil_order,
            g.stencil_fault_injection,
            algebra,
            id.family,
            id.amplitude,
            id.width,
            id.mode,
            id.component,
            id.relax,
            id.relax_tol,
            e.cfl,
            e.t_end,
            e.diag_interval,
            e.dissipation_eps,
            e.max_growth_factor,
            d.gamma,
            d.energy_max_order,
            d.hardy,
            d.ks,
            d.decay_fit,
            d.groenwall,
            d.groenwall_bound,
            d.eym_residual,
            d.constraint_gate,
            self.output.seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Top-level keys (algebra) must precede the first section.
    const SAMPLE: &str = r#"
algebra = "su2"

[grid]
n = 5
d_active = 1
points = 64
half_extent = 4.0
boundary = "sommerfeld"

[id]
family = "su2_pulse"
amplitude = 1e-3
width = 1.0
relax = true

[evolution]
t_end = 2.0

[diagnostics]
gamma = 0.5
energy_max_order = 1
"#;

    #[test]
    fn sample_config_parses_and_resolves() {
        let cfg = RunConfig::from_str(SAMPLE).unwrap();
        assert_eq!(cfg.grid.stencil_order, 4);
        let grid = cfg.build_grid().unwrap();
        assert_eq!(grid.npoints(), 64);
        let alg = cfg.build_algebra().unwrap();
        assert_eq!(alg.dim(), 3);
        let id = cfg.build_initial_data(&grid, &alg).unwrap();
        assert!(id.abar.linf() > 0.0);
    }

    #[test]
    fn algebra_file_form_parses() {
        let text = SAMPLE.replace("algebra = \"su2\"", "algebra = { file = \"custom.toml\" }");
        let cfg = RunConfig::from_str(&text).unwrap();
        assert!(matches!(cfg.algebra, AlgebraConfig::File { .. }));
    }

    #[test]
    fn bad_family_rejected_with_message() {
        let text = SAMPLE.replace("su2_pulse", "vortex");
        let err = RunConfig::from_str(&text).unwrap_err();
        assert!(format!("{err}").contains("vortex"));
    }

    #[test]
    fn canonical_text_is_stable() {
        let cfg = RunConfig::from_str(SAMPLE).unwrap();
        assert_eq!(cfg.canonical_text(), cfg.canonical_text());
        assert!(cfg.canonical_text().contains("id.family = su2_pulse"));
    }
}
