//! Lebesgue, weak and Lorentz norms of lattice step functions, computed
//! exactly from the distribution function.
//!
//! A grid function is the step function equal to `u_i` on cell `i`, so its
//! distribution function is itself a step function and every norm reduces to
//! a finite sum.

use serde::{Deserialize, Serialize};

use crate::lattice::DegenerateOperator;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Base {
    Lebesgue,
    Weighted,
}

/// `{base, s, multiplier_exponent}`: the measure `ω^s dx` (or `dx`) and the
/// pointwise multiplier `ω^e` applied before norming.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub base: Base,
    #[serde(default = "one")]
    pub s: f64,
    #[serde(default)]
    pub multiplier_exponent: f64,
}

fn one() -> f64 {
    1.0
}

impl MeasureSpec {
    pub fn lebesgue() -> Self {
        Self { base: Base::Lebesgue, s: 1.0, multiplier_exponent: 0.0 }
    }

    /// `ω^s dx`.
    pub fn weighted(s: f64) -> Self {
        Self { base: Base::Weighted, s, multiplier_exponent: 0.0 }
    }

    pub fn with_multiplier(self, e: f64) -> Self {
        Self { multiplier_exponent: e, ..self }
    }
}

/// Node masses `μ_i` and multiplier values `ω̃_i` on a concrete grid.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeMeasure {
    pub mass: Vec<f64>,
    pub multiplier: Vec<f64>,
}

impl NodeMeasure {
    pub fn new(mass: Vec<f64>, multiplier: Vec<f64>) -> Result<Self> {
        if mass.len() != multiplier.len() {
            return Err(Error::Grid("mass and multiplier lengths differ".into()));
        }
        if let Some(m) = mass.iter().chain(&multiplier).find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::Domain(format!("node masses and multipliers must be positive and finite, found {m}")));
        }
        Ok(Self { mass, multiplier })
    }

    /// Realise `spec` from node weights and the cell volume.
    pub fn from_weights(node_weights: &[f64], cell_volume: f64, spec: MeasureSpec) -> Result<Self> {
        let mass = node_weights
            .iter()
            .map(|w| match spec.base {
                Base::Lebesgue => cell_volume,
                Base::Weighted => w.powf(spec.s) * cell_volume,
            })
            .collect();
        let multiplier = node_weights.iter().map(|w| w.powf(spec.multiplier_exponent)).collect();
        Self::new(mass, multiplier)
    }

    pub fn on(op: &DegenerateOperator, spec: MeasureSpec) -> Result<Self> {
        Self::from_weights(op.node_weights(), op.grid().cell_volume(), spec)
    }

    /// Counting measure scaled by `c`, no multiplier.
    pub fn uniform(n: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; n], vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    fn values(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.len() {
            return Err(Error::Grid(format!("grid function has {} values, measure has {}", u.len(), self.len())));
        }
        if let Some(v) = u.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("grid function is not finite ({v})")));
        }
        Ok(u.iter().zip(&self.multiplier).map(|(a, w)| (a * w).abs()).collect())
    }
}

/// `(Σ |ω̃ u|^p μ)^{1/p}`, or `max |ω̃ u|` for `p = ∞`.
pub fn lp_norm(u: &[f64], p: f64, mu: &NodeMeasure) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("exponent must be at least 1, got {p}")));
    }
    let v = mu.values(u)?;
    if p.is_infinite() {
        return Ok(v.iter().cloned().fold(0.0, f64::max));
    }
    // scale out the maximum to keep large p from overflowing
    let top = v.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = v.iter().zip(&mu.mass).map(|(a, m)| (a / top).powf(p) * m).sum();
    Ok(top * s.powf(1.0 / p))
}

/// Right-continuous `λ(s) = μ{|ω̃ u| > s}` as a step function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionFunction {
    /// Distinct positive levels, strictly decreasing.
    pub levels: Vec<f64>,
    /// `masses[j] = μ{|ω̃ u| ≥ levels[j]}`, strictly increasing.
    pub masses: Vec<f64>,
}

impl DistributionFunction {
    /// `λ(s)`.
    pub fn eval(&self, s: f64) -> f64 {
        // λ(s) = masses[j] for levels[j+1] <= s < levels[j]
        let k = self.levels.partition_point(|&v| v > s);
        if k == 0 {
            0.0
        } else {
            self.masses[k - 1]
        }
    }
}

pub fn distribution_function(u: &[f64], mu: &NodeMeasure) -> Result<DistributionFunction> {
    let v = mu.values(u)?;
    let mut pairs: Vec<(f64, f64)> = v.into_iter().zip(mu.mass.iter().copied()).filter(|(a, _)| *a > 0.0).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut levels = Vec::new();
    let mut masses: Vec<f64> = Vec::new();
    let mut acc = 0.0;
    for (a, m) in pairs {
        acc += m;
        if levels.last() == Some(&a) {
            *masses.last_mut().unwrap() = acc;
        } else {
            levels.push(a);
            masses.push(acc);
        }
    }
    Ok(DistributionFunction { levels, masses })
}

/// `(q, r)` with `1 <= q < ∞`, `1 <= r <= ∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzIndex {
    pub q: f64,
    pub r: f64,
}

impl LorentzIndex {
    pub fn new(q: f64, r: f64) -> Result<Self> {
        if !(q >= 1.0 && q.is_finite() && r >= 1.0) {
            return Err(Error::Domain(format!("invalid Lorentz index ({q}, {r})")));
        }
        Ok(Self { q, r })
    }

    pub fn weak(q: f64) -> Result<Self> {
        Self::new(q, f64::INFINITY)
    }
}

/// `(r ∫₀^∞ s^{r-1} λ(s)^{r/q} ds)^{1/r}`, or `sup_s s λ(s)^{1/q}` for
/// `r = ∞`, summed exactly over the steps of `λ`.
pub fn lorentz_from_distribution(d: &DistributionFunction, idx: LorentzIndex) -> f64 {
    let (q, r) = (idx.q, idx.r);
    if d.levels.is_empty() {
        return 0.0;
    }
    if r.is_infinite() {
        return d.levels.iter().zip(&d.masses).map(|(v, m)| v * m.powf(1.0 / q)).fold(0.0, f64::max);
    }
    let top = d.levels[0];
    let mut s = 0.0;
    for j in 0..d.levels.len() {
        let hi = (d.levels[j] / top).powf(r);
        let lo = d.levels.get(j + 1).map_or(0.0, |v| (v / top).powf(r));
        s += d.masses[j].powf(r / q) * (hi - lo);
    }
    top * s.powf(1.0 / r)
}

pub fn lorentz_norm(u: &[f64], idx: LorentzIndex, mu: &NodeMeasure) -> Result<f64> {
    Ok(lorentz_from_distribution(&distribution_function(u, mu)?, idx))
}

/// A pair `r₁ < r₂` where the `(q, r)` norm increased.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub r_small: f64,
    pub r_large: f64,
    pub norm_small: f64,
    pub norm_large: f64,
}

/// Check that `r ↦ ‖u‖_{L^{q,r}}` is non-increasing along `rs` (sorted
/// ascending internally), allowing `1e-12` relative slack.
pub fn lorentz_monotonicity_probe(u: &[f64], q: f64, rs: &[f64], mu: &NodeMeasure) -> Result<Vec<MonotonicityViolation>> {
    let d = distribution_function(u, mu)?;
    let mut rs = rs.to_vec();
    rs.sort_by(f64::total_cmp);
    let norms: Vec<f64> = rs
        .iter()
        .map(|&r| LorentzIndex::new(q, r).map(|i| lorentz_from_distribution(&d, i)))
        .collect::<Result<_>>()?;
    Ok(rs
        .windows(2)
        .zip(norms.windows(2))
        .filter(|(_, n)| n[1] > n[0] * (1.0 + 1e-12))
        .map(|(r, n)| MonotonicityViolation { r_small: r[0], r_large: r[1], norm_small: n[0], norm_large: n[1] })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn unit_function_on_unit_weight() {
        let mu = NodeMeasure::from_weights(&vec![1.0; 64], 2.0 / 64.0, MeasureSpec::weighted(1.0)).unwrap();
        for p in [1.0, 2.0, 4.0] {
            assert!(close(lp_norm(&vec![1.0; 64], p, &mu).unwrap(), 2f64.powf(1.0 / p)));
        }
        assert_eq!(lp_norm(&vec![1.0; 64], f64::INFINITY, &mu).unwrap(), 1.0);
        let u: Vec<f64> = (0..64).map(|i| (i as f64 - 20.0) * 0.1).collect();
        let a = lp_norm(&u, 3.0, &mu).unwrap();
        let b = lp_norm(&u.iter().map(|x| -2.5 * x).collect::<Vec<_>>(), 3.0, &mu).unwrap();
        assert!(close(b, 2.5 * a));
    }

    #[test]
    fn weighted_square_measure() {
        // ∫_{-1}^{1} |x| dx = 1, sampled at cell centres (exact for |x|)
        let n = 64;
        let h = 2.0 / n as f64;
        let w: Vec<f64> = (0..n).map(|i| (-1.0 + (i as f64 + 0.5) * h).abs().sqrt()).collect();
        let mu = NodeMeasure::from_weights(&w, h, MeasureSpec::weighted(2.0)).unwrap();
        assert!(close(lp_norm(&vec![1.0; n], 1.0, &mu).unwrap(), 1.0));
    }

    #[test]
    fn distribution_examples() {
        let mu = NodeMeasure::uniform(5, 0.5).unwrap();
        let ind = [0.0, 1.0, 1.0, 0.0, 1.0];
        let d = distribution_function(&ind, &mu).unwrap();
        assert_eq!(d.levels, vec![1.0]);
        assert_eq!((d.eval(0.0), d.eval(0.99), d.eval(1.0)), (1.5, 1.5, 0.0));
        assert_eq!(distribution_function(&[0.0; 5], &mu).unwrap().eval(0.0), 0.0);
        let two = [2.0, -1.0, 2.0, 0.0, 1.0];
        let d = distribution_function(&two, &mu).unwrap();
        assert_eq!(d.levels, vec![2.0, 1.0]);
        // direct enumeration
        for s in [0.0, 0.5, 1.0, 1.5, 2.0, 3.0] {
            let direct: f64 = two.iter().filter(|v| v.abs() > s).count() as f64 * 0.5;
            assert_eq!(d.eval(s), direct, "s={s}");
        }
    }

    #[test]
    fn lorentz_examples() {
        let mu = NodeMeasure::new(vec![0.3, 0.2, 0.4, 0.1], vec![1.0, 2.0, 1.0, 0.5]).unwrap();
        let u = [1.5, -0.2, 0.7, 3.0];
        for q in [1.0, 2.0, 4.0] {
            assert!(close(lorentz_norm(&u, LorentzIndex::new(q, q).unwrap(), &mu).unwrap(), lp_norm(&u, q, &mu).unwrap()));
        }
        let ind = [1.0, 0.0, 1.0, 0.0];
        let plain = NodeMeasure::new(mu.mass.clone(), vec![1.0; 4]).unwrap();
        for r in [1.0, 2.0, 7.0, f64::INFINITY] {
            let v = lorentz_norm(&ind, LorentzIndex::new(2.0, r).unwrap(), &plain).unwrap();
            assert!(close(v, 0.7f64.sqrt()), "r={r}");
        }
        let weak = lorentz_norm(&u, LorentzIndex::weak(2.0).unwrap(), &mu).unwrap();
        for r in [1.0, 2.0, 3.0] {
            assert!(weak <= lorentz_norm(&u, LorentzIndex::new(2.0, r).unwrap(), &mu).unwrap());
        }
        assert!(LorentzIndex::new(0.5, 1.0).is_err());
    }

    #[test]
    fn monotone_in_r_on_a_sample() {
        let mu = NodeMeasure::uniform(6, 1.0).unwrap();
        let u = [5.0, 1.0, 0.3, 0.3, 2.0, 0.01];
        let v = lorentz_monotonicity_probe(&u, 3.0, &[1.0, 1.5, 2.0, 3.0, 6.0, f64::INFINITY], &mu).unwrap();
        assert!(v.is_empty(), "{v:?}");
    }
}
