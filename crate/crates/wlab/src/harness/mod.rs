//! Configured experiments, their reports and verdicts.
//!
//! An experiment reads one TOML file, runs on a refinement ladder of grids and
//! emits an [`ExperimentReport`]: a config echo, CSV-ready tables, fitted
//! constants and one verdict per checked property.

mod corpus;
mod experiments;
mod report;

pub use corpus::{build_corpus, CorpusSpec, Member};
pub use experiments::*;
pub use report::{exit_code, Cell, ExperimentReport, LineFit, Status, Table, Verdict};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calculus::SpectralFunction;
use crate::kernels::{FitOptions, TimeWindow};
use crate::lattice::GridSpec;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Weights,
    Assemble,
    Scaling,
    Hls,
    Lorentz,
    Sharpness,
    Calculus,
    Coeff,
    Riesz,
    Gaussian,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Weights => "weights",
            Experiment::Assemble => "assemble",
            Experiment::Scaling => "scaling",
            Experiment::Hls => "hls",
            Experiment::Lorentz => "lorentz",
            Experiment::Sharpness => "sharpness",
            Experiment::Calculus => "calculus",
            Experiment::Coeff => "coeff",
            Experiment::Riesz => "riesz",
            Experiment::Gaussian => "gaussian",
        }
    }
}

/// `(h, h/2, …) × (X, 2X, …)`: every extent multiplier is run with
/// `refinements` successive halvings of the base spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ladder {
    pub refinements: usize,
    pub extents: Vec<f64>,
}

impl Default for Ladder {
    fn default() -> Self {
        Self { refinements: 3, extents: vec![1.0, 2.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative slope tolerance of the exact `p = 1` scaling route.
    pub slope: f64,
    /// Relative slope tolerance of the ε-perturbed lower-bound route.
    pub epsilon_slope: f64,
    /// Allowed `max/min` of a sup-ratio across the ladder.
    pub stability: f64,
    /// Spectral vs Calderón relative `L²_ω` agreement.
    pub route: f64,
    /// Relative change of Gaussian constants across one refinement.
    pub fit: f64,
    /// Relative tolerance on the per-halving growth of the RH functional.
    pub growth: f64,
    /// Required cumulative growth of the sharpness functional.
    pub blowup: f64,
    /// Allowed `max/min` of the Riesz ratio band.
    pub band: f64,
    /// Allowed factor around the classical Riesz constant.
    pub classical: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            slope: 0.10,
            epsilon_slope: 0.15,
            stability: 2.0,
            route: 1e-5,
            fit: 0.20,
            growth: 0.15,
            blowup: 2.0,
            band: 10.0,
            classical: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingSpec {
    /// Target exponents `q` of the exact `p = 1` route; `inf` allowed.
    pub qs: Vec<f64>,
    /// Restrict sources to `|y| <= interior·X`; 1 keeps every node.
    pub interior: f64,
    /// Minimum decades the time window must span.
    pub min_decades: f64,
    /// Dilation factors `c` of the `c·√t` test family of the ε-route.
    pub widths: Vec<f64>,
    /// Offsets of the family's centres from the singular points, in units
    /// of `√t` along the diagonal.
    pub shifts: Vec<f64>,
    /// Keep every `stride`-th source per axis, plus the nodes next to the
    /// weight's singular points.
    pub stride: usize,
    /// Above this many nodes the heat semigroup is applied by a Chebyshev
    /// expansion instead of a dense decomposition.
    pub spectral_limit: usize,
}

impl Default for ScalingSpec {
    fn default() -> Self {
        Self { qs: vec![2.0], interior: 1.0, min_decades: 1.0, widths: vec![0.5, 1.0], shifts: vec![0.0, 1.0], stride: 1, spectral_limit: 2048 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HlsSpec {
    /// Also run the weak endpoint `p = 1` at the same `q`.
    pub weak_endpoint: bool,
    /// Cross-check every spectral `L^{-α} f` by the Calderón route.
    pub calderon: bool,
}

impl Default for HlsSpec {
    fn default() -> Self {
        Self { weak_endpoint: true, calderon: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SharpnessSpec {
    /// Side of the cube `[0, ℓ]ⁿ` and square root of the heat time.
    pub ell: f64,
    pub halvings: usize,
    /// Member weight exponent run on the same ladder as a control.
    pub control_beta: Option<f64>,
}

impl Default for SharpnessSpec {
    fn default() -> Self {
        Self { ell: 0.5, halvings: 3, control_beta: Some(0.5) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassesSpec {
    pub betas: Vec<f64>,
    pub k_min: i32,
    pub k_max: i32,
    pub translates: usize,
    pub resolution: usize,
}

impl Default for ClassesSpec {
    fn default() -> Self {
        Self { betas: vec![-0.9, -0.75, -0.5, 0.0, 0.5, 0.9], k_min: 0, k_max: 6, translates: 2, resolution: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RieszSpec {
    /// Riesz order; defaults to the HLS value `(n/2)(1/p − 1/q)`.
    pub alpha: Option<f64>,
    /// Width of the Gaussian source `f`, in units of the base extent.
    pub width: f64,
    /// Ratios are read on `|x| <= interior·X`.
    pub interior: f64,
}

impl Default for RieszSpec {
    fn default() -> Self {
        Self { alpha: None, width: 0.025, interior: 0.125 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianSpec {
    /// Minimum decades the time window must span.
    pub min_decades: f64,
    /// Also fit the kernel of `(tL)e^{-tL}`.
    pub derivative: bool,
    pub options: FitOptions,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        Self { min_decades: 2.0, derivative: true, options: FitOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    #[serde(default)]
    pub ladder: Ladder,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    /// Optional; must equal `(n/2)(1/p − 1/q)` when given.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub window: TimeWindow,
    #[serde(default)]
    pub corpus: CorpusSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Bounded `φ` for the calculus experiment.
    #[serde(default)]
    pub functions: Vec<SpectralFunction>,
    #[serde(default)]
    pub hls: HlsSpec,
    #[serde(default)]
    pub scaling: ScalingSpec,
    #[serde(default)]
    pub sharpness: SharpnessSpec,
    #[serde(default)]
    pub classes: ClassesSpec,
    #[serde(default)]
    pub riesz: RieszSpec,
    #[serde(default)]
    pub gaussian: GaussianSpec,
    /// Write operators as MatrixMarket files next to the report.
    #[serde(default)]
    pub export_operators: bool,
}

fn default_p() -> f64 {
    2.0
}

fn default_q() -> f64 {
    4.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    /// `α = (n/2)(1/p − 1/q)`, never a free parameter.
    pub fn derived_alpha(&self) -> f64 {
        0.5 * self.dim() as f64 * (1.0 / self.p - 1.0 / self.q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid experiment id {:?}", self.id)));
        }
        self.grid.grid()?;
        if self.grid.weight.dimension != self.grid.dim {
            return Err(Error::Config("weight and grid dimensions differ".into()));
        }
        if !(self.p >= 1.0 && self.q > self.p) {
            return Err(Error::Config(format!("need 1 <= p < q, got p = {}, q = {}", self.p, self.q)));
        }
        if let Some(a) = self.alpha {
            let d = self.derived_alpha();
            if (a - d).abs() > 1e-12 * d.abs().max(1.0) {
                return Err(Error::Config(format!(
                    "alpha = {a} is inconsistent with (n/2)(1/p - 1/q) = {d}; alpha is derived, not free"
                )));
            }
        }
        if self.ladder.refinements == 0 || self.ladder.extents.is_empty() {
            return Err(Error::Config("the refinement ladder is empty".into()));
        }
        if self.ladder.extents.iter().any(|e| !(*e >= 1.0) || (e.fract() != 0.0)) {
            return Err(Error::Config("ladder extents must be integer multipliers >= 1".into()));
        }
        if let Some(e) = self.epsilon.iter().find(|e| !e.is_finite() || e.abs() >= self.q / self.p) {
            return Err(Error::Config(format!("epsilon {e} is outside (-q/p, q/p)")));
        }
        if self.window.samples < 2 {
            return Err(Error::Config("the time window needs at least two samples".into()));
        }
        Ok(())
    }

    /// Grid specs of the ladder, extent-major.
    pub fn ladder_specs(&self) -> Vec<GridSpec> {
        let mut out = Vec::new();
        for &e in &self.ladder.extents {
            for k in 0..self.ladder.refinements {
                let mut g = self.grid.clone();
                g.extent = self.grid.extent * e;
                g.points = ((self.grid.points as f64 * e) as usize) << k;
                out.push(g);
            }
        }
        out
    }
}

/// Run `exp` (or the config's own experiment) and time it.
pub fn run(cfg: &ExperimentConfig, exp: Option<Experiment>) -> Result<ExperimentReport> {
    let exp = exp
        .or(cfg.experiment)
        .ok_or_else(|| Error::Config("no experiment selected".into()))?;
    let start = std::time::Instant::now();
    let mut report = match exp {
        Experiment::Weights => run_weight_classes(cfg)?,
        Experiment::Assemble => run_assemble(cfg)?,
        Experiment::Scaling => run_semigroup_scaling(cfg)?,
        Experiment::Hls => run_hls(cfg)?,
        Experiment::Lorentz => run_lorentz(cfg)?,
        Experiment::Sharpness => run_sharpness(cfg)?,
        Experiment::Calculus => run_calculus_check(cfg)?,
        Experiment::Coeff => run_coefficient_variant(cfg)?,
        Experiment::Riesz => run_riesz(cfg)?,
        Experiment::Gaussian => run_gaussian(cfg)?,
    };
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
id = "t"
[grid]
dim = 1
extent = 1.0
points = 16
bc = "dirichlet"
weight = { kind = "power", beta = 0.5, dimension = 1 }
"#;

    #[test]
    fn config_parses_with_defaults() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!((c.p, c.q), (2.0, 4.0));
        assert_eq!(c.derived_alpha(), 0.125);
        let pts: Vec<usize> = c.ladder_specs().iter().map(|g| g.points).collect();
        assert_eq!(pts, vec![16, 32, 64, 32, 64, 128]);
    }

    #[test]
    fn inconsistent_alpha_is_rejected() {
        let bad = BASE.replace("id = \"t\"", "id = \"t\"\nalpha = 0.2");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))));
        let ok = BASE.replace("id = \"t\"", "id = \"t\"\nalpha = 0.125");
        assert!(ExperimentConfig::from_toml(&ok).is_ok());
    }

    #[test]
    fn functions_and_coefficients_parse() {
        let text = format!(
            "{BASE}coeff = {{ kind = \"sinusoid\", mean = 2.0, amp = 1.0, freq = 1.0 }}\n"
        )
        .replace("id = \"t\"", "id = \"t\"\nfunctions = [{ kind = \"bounded\", params = \"exp\" }, { kind = \"heat\", params = { t = 0.5 } }]");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c.functions.len(), 2);
        assert!(c.grid.coeff.is_some());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = BASE.replace("id = \"t\"", "id = \"t\"\nbogus = 1");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }
}
