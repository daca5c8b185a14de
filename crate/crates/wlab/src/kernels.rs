//! Heat-kernel slices, two-sided Gaussian envelopes and the weighted Riesz
//! potential comparison.
//!
//! Kernels are taken against `dω`: `(e^{-tL} u)_i = Σ_j K_t(x_i, y_j) u_j m_j`,
//! so a column is `e^{-tL} e_j / m_j`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::calculus::{SpectralDecomposition, SpectralFunction};
use crate::lattice::{DegenerateOperator, Grid};
use crate::weights::ball_measure;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelSlice {
    pub t: f64,
    pub source: usize,
    pub values: Vec<f64>,
}

pub fn kernel_slice(dec: &SpectralDecomposition, t: f64, j: usize) -> Result<HeatKernelSlice> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("kernel time must be positive, got {t}")));
    }
    let col = dec.kernel_columns(&SpectralFunction::Heat { t }, &[j])?;
    Ok(HeatKernelSlice { t, source: j, values: col.column(0).iter().copied().collect() })
}

/// Which kernel to sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    Heat,
    /// Kernel of `(tL)^k e^{-tL}`.
    Derivative { k: u32 },
}

impl KernelKind {
    fn function(&self, t: f64) -> SpectralFunction {
        match *self {
            KernelKind::Heat => SpectralFunction::Heat { t },
            KernelKind::Derivative { k } => SpectralFunction::HeatDerivative { t, k },
        }
    }
}

/// Squared distances between nodes.
fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// `ω_t(x_i) = Σ_{|x_j - x_i| <= √t} m_j`, the lattice ball mass.
pub fn lattice_ball_mass(grid: &Grid, mass: &[f64], i: usize, t: f64) -> f64 {
    let nodes = grid.nodes();
    let c = nodes[i];
    nodes.iter().zip(mass).filter(|(x, _)| dist2(**x, c) <= t).map(|(_, m)| m).sum()
}

/// `log_{10}`-spaced sample times in `[lo·h², hi·X²]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeWindow {
    /// Lower cutoff in units of `h²`.
    pub lo: f64,
    /// Upper cutoff in units of `X²`.
    pub hi: f64,
    pub samples: usize,
}

impl Default for TimeWindow {
    fn default() -> Self {
        Self { lo: 10.0, hi: 0.1, samples: 8 }
    }
}

impl TimeWindow {
    pub fn bounds(&self, grid: &Grid) -> (f64, f64) {
        (self.lo * grid.h().powi(2), self.hi * grid.extent().powi(2))
    }

    /// Sample times; an error when the window spans less than `min_decades`.
    pub fn times(&self, grid: &Grid, min_decades: f64) -> Result<Vec<f64>> {
        let (a, b) = self.bounds(grid);
        if self.samples < 2 || !(b > a) || (b / a).log10() < min_decades {
            return Err(Error::Fit(format!(
                "time window [{a:.3e}, {b:.3e}] spans less than {min_decades} decades; refine the grid"
            )));
        }
        let k = self.samples - 1;
        Ok((0..=k).map(|i| a * (b / a).powf(i as f64 / k as f64)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Denominator {
    /// `max` in the upper bound and `min` in the lower bound.
    Paper,
    Max,
    Min,
    Geometric,
}

impl Denominator {
    fn upper(&self, a: f64, b: f64) -> f64 {
        match self {
            Denominator::Paper | Denominator::Max => a.max(b),
            Denominator::Min => a.min(b),
            Denominator::Geometric => (a * b).sqrt(),
        }
    }

    fn lower(&self, a: f64, b: f64) -> f64 {
        match self {
            Denominator::Paper | Denominator::Min => a.min(b),
            Denominator::Max => a.max(b),
            Denominator::Geometric => (a * b).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Sweep range for `c` in `e^{-d²/(ct)}`.
    pub upper_c: (f64, f64),
    /// Sweep range for `c'` in `e^{-c' d²/t}`.
    pub lower_c: (f64, f64),
    pub sweep: usize,
    /// Lower-bound samples are restricted to `d <= lower_radius·√t`.
    pub lower_radius: f64,
    /// Values below `noise · max K_t` are dropped.
    pub noise: f64,
    /// Sources and targets are kept within `interior · X` in sup norm.
    pub interior: f64,
    pub denominator: Denominator,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            upper_c: (0.5, 64.0),
            lower_c: (1.0 / 64.0, 2.0),
            sweep: 241,
            lower_radius: 3.0,
            noise: 1e-10,
            interior: 0.5,
            denominator: Denominator::Paper,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub t: f64,
    pub x: usize,
    pub y: usize,
    pub d2: f64,
    pub k: f64,
    pub wx: f64,
    pub wy: f64,
}

/// Nodes within `frac · X` of the origin in sup norm.
pub fn interior_nodes(grid: &Grid, frac: f64) -> Vec<usize> {
    let lim = frac * grid.extent() + 1e-12;
    (0..grid.len())
        .filter(|&i| {
            let x = grid.node(i);
            x[..grid.dim()].iter().all(|v| v.abs() <= lim)
        })
        .collect()
}

/// Sample `|K_t(x, y)|` over interior pairs for every `t`, with the lattice
/// ball masses needed by the envelope.
pub fn sample_kernels(
    op: &DegenerateOperator,
    dec: &SpectralDecomposition,
    kind: KernelKind,
    times: &[f64],
    sources: Option<&[usize]>,
    opts: &FitOptions,
) -> Result<Vec<KernelSample>> {
    let grid = op.grid();
    let inner = interior_nodes(grid, opts.interior);
    let sources: Vec<usize> = sources.map_or_else(|| inner.clone(), |s| s.to_vec());
    let nodes = grid.nodes();
    let mut out = Vec::new();
    for &t in times {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("kernel time must be positive, got {t}")));
        }
        let cols = dec.kernel_columns(&kind.function(t), &sources)?;
        let top = cols.amax();
        let wt: Vec<f64> = {
            let mut need = inner.clone();
            need.extend(&sources);
            need.sort_unstable();
            need.dedup();
            let mut v = vec![0.0; grid.len()];
            for i in need {
                v[i] = lattice_ball_mass(grid, op.mass(), i, t);
            }
            v
        };
        for (c, &y) in sources.iter().enumerate() {
            for &x in &inner {
                let k = cols[(x, c)].abs();
                if k < opts.noise * top {
                    continue;
                }
                out.push(KernelSample { t, x, y, d2: dist2(nodes[x], nodes[y]), k, wx: wt[x], wy: wt[y] });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    #[serde(rename = "C")]
    pub big_c: f64,
    pub c: f64,
    /// `C'` with `K ≥ C'^{-1} e^{-c' d²/t} / ω_t`.
    #[serde(rename = "C_lower")]
    pub big_c_lower: f64,
    pub c_lower: f64,
    pub window: (f64, f64),
    /// Filled in by [`compare_fits`]; `None` until a refinement is available.
    pub stable: Option<bool>,
    /// `max K·ω_t·e^{d²/(ct)} / C` over the sample; 1 at the reported fit.
    pub max_violation: f64,
    pub samples: usize,
    pub lower_samples: usize,
    pub denominator: Denominator,
}

fn log_sweep(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
}

/// Fit the two-sided envelope. The upper constant is the smallest `C` for
/// each `c` on a log sweep; the reported pair minimises `C · c^{n/2}`.
/// The lower pair maximises `C'^{-1} · c'^{-n/2}` over near-diagonal samples.
pub fn gaussian_fit(samples: &[KernelSample], dim: usize, opts: &FitOptions) -> Result<GaussianFit> {
    if samples.is_empty() {
        return Err(Error::Fit("no kernel samples".into()));
    }
    let half_n = 0.5 * dim as f64;
    let up: Vec<(f64, f64)> =
        samples.iter().map(|s| ((s.k * opts.denominator.upper(s.wx, s.wy)).ln(), s.d2 / s.t)).collect();
    if up.iter().any(|(a, _)| !a.is_finite()) {
        return Err(Error::Fit("non-finite kernel sample".into()));
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for c in log_sweep(opts.upper_c.0, opts.upper_c.1, opts.sweep) {
        let ln_c = up.iter().map(|(a, r)| a + r / c).fold(f64::NEG_INFINITY, f64::max);
        let score = ln_c + half_n * c.ln();
        if best.is_none_or(|b| score < b.0) {
            best = Some((score, ln_c, c));
        }
    }
    let (_, ln_big_c, c) = best.unwrap();
    if !ln_big_c.is_finite() {
        return Err(Error::Fit("no finite upper constant in the sweep window".into()));
    }

    let r2 = opts.lower_radius.powi(2);
    let low: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.d2 <= r2 * s.t && s.k > 0.0)
        .map(|s| ((s.k * opts.denominator.lower(s.wx, s.wy)).ln(), s.d2 / s.t))
        .collect();
    if low.is_empty() {
        return Err(Error::Fit("no near-diagonal samples for the lower bound".into()));
    }
    let mut best_low: Option<(f64, f64, f64)> = None;
    for cl in log_sweep(opts.lower_c.0, opts.lower_c.1, opts.sweep) {
        let ln_inv = low.iter().map(|(a, r)| a + cl * r).fold(f64::INFINITY, f64::min);
        let score = ln_inv - half_n * cl.ln();
        if best_low.is_none_or(|b| score > b.0) {
            best_low = Some((score, ln_inv, cl));
        }
    }
    let (_, ln_inv, c_lower) = best_low.unwrap();
    let (t_min, t_max) = samples.iter().fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(s.t), b.max(s.t)));
    let big_c = ln_big_c.exp();
    let max_violation = up.iter().map(|(a, r)| (a + r / c).exp() / big_c).fold(0.0, f64::max);
    Ok(GaussianFit {
        big_c,
        c,
        big_c_lower: (-ln_inv).exp(),
        c_lower,
        window: (t_min, t_max),
        stable: None,
        max_violation,
        samples: up.len(),
        lower_samples: low.len(),
        denominator: opts.denominator,
    })
}

/// Mark `fine` stable when its `(C, c)` are within `tol` of `coarse`.
pub fn compare_fits(coarse: &GaussianFit, fine: &mut GaussianFit, tol: f64) -> bool {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let ok = rel(fine.big_c, coarse.big_c) <= tol && rel(fine.c, coarse.c) <= tol;
    fine.stable = Some(ok);
    ok
}

/// `sup_i Σ_j |K(x_i, y_j)| m_j` for the kernel of `f(L)`.
pub fn kernel_mass_sup(dec: &SpectralDecomposition, f: &SpectralFunction) -> Result<f64> {
    let n = dec.len();
    let mass = dec.mass();
    let all: Vec<usize> = (0..n).collect();
    let k: DMatrix<f64> = dec.kernel_columns(f, &all)?;
    Ok((0..n).map(|i| (0..n).map(|j| k[(i, j)].abs() * mass[j]).sum::<f64>()).fold(0.0, f64::max))
}

/// `c_{n,α} = Γ(n/2 − α) / (4^α π^{n/2} Γ(α))`, the constant in
/// `(−Δ)^{−α} f = c_{n,α} ∫ |x−y|^{2α−n} f(y) dy` for `0 < α < n/2`.
pub fn riesz_constant(n: usize, alpha: f64) -> f64 {
    let n = n as f64;
    gamma(0.5 * n - alpha) / (4f64.powf(alpha) * std::f64::consts::PI.powf(0.5 * n) * gamma(alpha))
}

/// Volume of the unit ball in dimension 1 or 2.
pub fn unit_ball_volume(n: usize) -> f64 {
    if n == 1 {
        2.0
    } else {
        std::f64::consts::PI
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RieszReport {
    pub alpha: f64,
    pub reverse_doubling: f64,
    /// `min` and `max` over interior nodes of `L^{-α}f / R_α f`; `None` for `f = 0`.
    pub ratio_min: Option<f64>,
    pub ratio_max: Option<f64>,
    pub spectral_sup: f64,
    pub riesz_sup: f64,
    pub nodes: usize,
}

impl RieszReport {
    pub fn band(&self) -> Option<f64> {
        Some(self.ratio_max? / self.ratio_min?)
    }
}

/// Discrete weighted Riesz potential
/// `R_α f(x_i) = Σ_j |x_i − y_j|^{2α} / ω(B(x_i, |x_i − y_j|)) f_j m_j`,
/// with the diagonal term at distance and radius `h/2`.
pub fn riesz_potential(op: &DegenerateOperator, alpha: f64, f: &[f64], targets: &[usize], resolution: usize) -> Result<Vec<f64>> {
    let grid = op.grid();
    let nodes = grid.nodes();
    let w = op.weight();
    let h = grid.h();
    let mut out = Vec::with_capacity(targets.len());
    for &i in targets {
        let mut s = 0.0;
        for (j, &fj) in f.iter().enumerate() {
            if fj == 0.0 {
                continue;
            }
            let r = if i == j { 0.5 * h } else { dist2(nodes[i], nodes[j]).sqrt() };
            let b = ball_measure(w, &nodes[i][..grid.dim()], r, resolution)?;
            s += r.powf(2.0 * alpha) / b * fj * op.mass()[j];
        }
        out.push(s);
    }
    Ok(out)
}

/// Compare the spectral `L^{-α} f` with the weighted Riesz potential on
/// interior nodes. Requires `α < RD/2`.
pub fn riesz_compare(
    op: &DegenerateOperator,
    dec: &SpectralDecomposition,
    alpha: f64,
    reverse_doubling: f64,
    f: &[f64],
    interior: f64,
) -> Result<RieszReport> {
    if !(alpha > 0.0) || alpha >= 0.5 * reverse_doubling {
        return Err(Error::Precondition(format!(
            "the Riesz comparison needs 0 < alpha < RD/2; alpha = {alpha}, RD = {reverse_doubling}"
        )));
    }
    if let Some(v) = f.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("f must be nonnegative, found {v}")));
    }
    let targets = interior_nodes(op.grid(), interior);
    let spec = dec.apply(&SpectralFunction::Power { beta: -alpha }, f)?;
    let riesz = riesz_potential(op, alpha, f, &targets, 1)?;
    let spectral_sup = targets.iter().map(|&i| spec[i].abs()).fold(0.0, f64::max);
    let riesz_sup = riesz.iter().cloned().fold(0.0, f64::max);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (k, &i) in targets.iter().enumerate() {
        if riesz[k] > 0.0 {
            let r = spec[i] / riesz[k];
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    let any = riesz_sup > 0.0;
    Ok(RieszReport {
        alpha,
        reverse_doubling,
        ratio_min: any.then_some(lo),
        ratio_max: any.then_some(hi),
        spectral_sup,
        riesz_sup,
        nodes: targets.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::decompose;
    use crate::lattice::{assemble, Boundary};
    use crate::weights::Weight;

    fn setup(n: usize, beta: f64, bc: Boundary) -> (DegenerateOperator, SpectralDecomposition) {
        let g = Grid::new(1, 1.0, n, bc).unwrap();
        let op = assemble(&g, &Weight::power(1, beta).unwrap(), None).unwrap();
        let d = decompose(&op).unwrap();
        (op, d)
    }

    #[test]
    fn slice_symmetry_and_conservation() {
        let (op, d) = setup(64, 0.5, Boundary::Periodic);
        let (a, b) = (kernel_slice(&d, 0.01, 7).unwrap(), kernel_slice(&d, 0.01, 40).unwrap());
        assert!((a.values[40] - b.values[7]).abs() < 1e-10 * a.values[40].abs().max(1.0));
        let total: f64 = a.values.iter().zip(op.mass()).map(|(k, m)| k * m).sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(a.values.iter().all(|v| *v > -1e-12));
        assert!(kernel_slice(&d, 0.0, 0).is_err());
    }

    #[test]
    fn long_time_periodic_kernel_is_uniform() {
        let (op, d) = setup(32, 0.0, Boundary::Periodic);
        let s = kernel_slice(&d, 1e3, 3).unwrap();
        let total: f64 = op.mass().iter().sum();
        assert!(s.values.iter().all(|v| (v - 1.0 / total).abs() < 1e-8));
    }

    #[test]
    fn periodic_kernel_matches_continuum_images() {
        let (op, d) = setup(256, 0.0, Boundary::Periodic);
        let t = 0.02;
        let j = 128;
        let s = kernel_slice(&d, t, j).unwrap();
        let y = op.grid().node(j)[0];
        for i in (96..160).step_by(4) {
            let x = op.grid().node(i)[0];
            let k: f64 = (-3..=3)
                .map(|m| {
                    let dd = x - y + 2.0 * m as f64;
                    (-dd * dd / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t).sqrt()
                })
                .sum();
            assert!((s.values[i] / k - 1.0).abs() < 0.05, "i={i}");
        }
    }

    #[test]
    fn unweighted_fit_brackets_four() {
        let (op, d) = setup(256, 0.0, Boundary::Dirichlet);
        let ts = TimeWindow::default().times(op.grid(), 2.0).unwrap();
        let opts = FitOptions::default();
        let s = sample_kernels(&op, &d, KernelKind::Heat, &ts, None, &opts).unwrap();
        let fit = gaussian_fit(&s, 1, &opts).unwrap();
        assert!((3.9..=8.0).contains(&fit.c), "{fit:?}");
        assert!(fit.big_c <= 2.0 && fit.big_c_lower.is_finite(), "{fit:?}");
        let js = serde_json::to_value(&fit).unwrap();
        for k in ["C", "c", "C_lower", "c_lower", "window", "stable"] {
            assert!(js.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn mass_bound_is_one_on_periodic_grids() {
        let (_, d) = setup(64, 0.5, Boundary::Periodic);
        for t in [1e-3, 1e-2, 1e-1] {
            let m = kernel_mass_sup(&d, &SpectralFunction::Heat { t }).unwrap();
            assert!(m <= 1.0 + 1e-8, "{m}");
        }
    }

    #[test]
    fn riesz_constant_values() {
        assert!((riesz_constant(1, 0.25) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-14);
        // n = 3, α = 1: Newton kernel 1/(4π|x|)
        assert!((riesz_constant(3, 1.0) - 1.0 / (4.0 * std::f64::consts::PI)).abs() < 1e-14);
    }

    #[test]
    fn riesz_precondition_and_zero() {
        let (op, d) = setup(64, 0.0, Boundary::Dirichlet);
        let f = vec![0.0; 64];
        assert!(riesz_compare(&op, &d, 0.5, 1.0, &f, 0.5).is_err());
        let r = riesz_compare(&op, &d, 0.25, 1.0, &f, 0.5).unwrap();
        assert_eq!((r.spectral_sup, r.riesz_sup, r.band()), (0.0, 0.0, None));
    }
}
