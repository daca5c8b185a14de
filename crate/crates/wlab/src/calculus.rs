//! Spectral calculus of an assembled operator and the Calderón quadrature
//! for its negative powers.
//!
//! Everything goes through one dense eigendecomposition of the symmetrized
//! matrix `A = diag(m)^{-1/2} S diag(m)^{-1/2}`. With `A = V Λ Vᵀ`,
//! `f(L) u = diag(m)^{-1/2} V f(Λ) Vᵀ diag(m)^{1/2} u`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::lattice::DegenerateOperator;
use crate::{Error, Result};

/// Relative level below which an eigenvalue is treated as a zero mode.
const ZERO_MODE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    eigenvalues: Vec<f64>,
    vectors: DMatrix<f64>,
    sqrt_mass: Vec<f64>,
    zero_modes: usize,
}

pub fn decompose(op: &DegenerateOperator) -> Result<SpectralDecomposition> {
    let a = op.symmetrized_dense();
    let n = a.nrows();
    let eig = SymmetricEigen::try_new(a, f64::EPSILON, 10_000 * n.max(1)).ok_or(Error::Eigen)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut eigenvalues = Vec::with_capacity(n);
    for &i in &order {
        let l = eig.eigenvalues[i];
        if l < -1e-10 * lmax {
            return Err(Error::Domain(format!("operator has a negative eigenvalue {l}")));
        }
        eigenvalues.push(l.max(0.0));
    }
    let vectors = eig.eigenvectors.select_columns(&order);
    let zero_modes = eigenvalues.iter().take_while(|&&l| l <= ZERO_MODE * lmax).count();
    for l in eigenvalues.iter_mut().take(zero_modes) {
        *l = 0.0;
    }
    let sqrt_mass = op.mass().iter().map(|m| m.sqrt()).collect();
    Ok(SpectralDecomposition { eigenvalues, vectors, sqrt_mass, zero_modes })
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors of the symmetrized matrix, one per column.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn zero_modes(&self) -> usize {
        self.zero_modes
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[self.zero_modes.min(self.len() - 1)]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    pub fn mass(&self) -> Vec<f64> {
        self.sqrt_mass.iter().map(|s| s * s).collect()
    }

    /// The `k`-th eigenfunction of `L`, normalised in `L²_ω`.
    pub fn eigenfunction(&self, k: usize) -> Vec<f64> {
        self.vectors.column(k).iter().zip(&self.sqrt_mass).map(|(v, s)| v / s).collect()
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::Grid(format!("grid function has {} values, expected {}", u.len(), self.len())));
        }
        Ok(())
    }

    /// Coefficients `Vᵀ diag(m)^{1/2} u`.
    pub fn to_spectral(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check(u)?;
        let x = DVector::from_iterator(self.len(), u.iter().zip(&self.sqrt_mass).map(|(a, s)| a * s));
        Ok(self.vectors.tr_mul(&x).iter().copied().collect())
    }

    pub fn from_spectral(&self, c: &[f64]) -> Vec<f64> {
        let y = &self.vectors * DVector::from_column_slice(c);
        y.iter().zip(&self.sqrt_mass).map(|(a, s)| a / s).collect()
    }

    /// Column-wise [`Self::to_spectral`].
    pub fn to_spectral_batch(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = u.clone();
        for (i, mut row) in x.row_iter_mut().enumerate() {
            row *= self.sqrt_mass[i];
        }
        self.vectors.tr_mul(&x)
    }

    pub fn from_spectral_batch(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = &self.vectors * c;
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row /= self.sqrt_mass[i];
        }
        y
    }

    fn zero_component(&self, c: &[f64]) -> f64 {
        c[..self.zero_modes].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `f(L) u`. Functions singular at 0 are refused when `u` has a
    /// component along the kernel; see [`Self::apply_projected`].
    pub fn apply(&self, f: &SpectralFunction, u: &[f64]) -> Result<Vec<f64>> {
        f.validate()?;
        let mut c = self.to_spectral(u)?;
        if f.singular_at_zero() && self.zero_modes > 0 {
            let z = self.zero_component(&c);
            let total = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if z > 1e-12 * total.max(f64::MIN_POSITIVE) {
                return Err(Error::Domain(format!(
                    "{} is undefined at λ = 0 and u has a kernel component of norm {z:.3e}",
                    f.label()
                )));
            }
            for v in c.iter_mut().take(self.zero_modes) {
                *v = 0.0;
            }
        }
        for (ck, &l) in c.iter_mut().zip(&self.eigenvalues).skip(if f.singular_at_zero() { self.zero_modes } else { 0 }) {
            *ck *= f.eval(l);
        }
        Ok(self.from_spectral(&c))
    }

    /// Project out the kernel, then apply `f`. Returns the result and the
    /// `L²_ω` norm of the removed component.
    pub fn apply_projected(&self, f: &SpectralFunction, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        f.validate()?;
        let mut c = self.to_spectral(u)?;
        let removed = self.zero_component(&c);
        for v in c.iter_mut().take(self.zero_modes) {
            *v = 0.0;
        }
        for (ck, &l) in c.iter_mut().zip(&self.eigenvalues).skip(self.zero_modes) {
            *ck *= f.eval(l);
        }
        Ok((self.from_spectral(&c), removed))
    }

    /// `f(L)` applied to every column of `u`.
    pub fn apply_batch(&self, f: &SpectralFunction, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        f.validate()?;
        if u.nrows() != self.len() {
            return Err(Error::Grid("batch row count does not match the grid".into()));
        }
        let mut c = self.to_spectral_batch(u);
        let skip = if f.singular_at_zero() { self.zero_modes } else { 0 };
        if skip > 0 {
            let z = c.rows(0, skip).norm();
            if z > 1e-12 * c.norm().max(f64::MIN_POSITIVE) {
                return Err(Error::Domain(format!("{} is undefined at λ = 0", f.label())));
            }
            c.rows_mut(0, skip).fill(0.0);
        }
        for (k, mut row) in c.row_iter_mut().enumerate().skip(skip) {
            row *= f.eval(self.eigenvalues[k]);
        }
        Ok(self.from_spectral_batch(&c))
    }

    pub fn heat(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        self.apply(&SpectralFunction::Heat { t }, u)
    }

    /// Kernel columns `f(L) e_j / m_j` for the requested sources, so that
    /// `(f(L) u)_i = Σ_j K(x_i, y_j) u_j m_j`.
    pub fn kernel_columns(&self, f: &SpectralFunction, sources: &[usize]) -> Result<DMatrix<f64>> {
        f.validate()?;
        if let Some(&j) = sources.iter().find(|&&j| j >= self.len()) {
            return Err(Error::Grid(format!("source {j} is out of range")));
        }
        let skip = if f.singular_at_zero() { self.zero_modes } else { 0 };
        let n = self.len();
        let mut b = DMatrix::zeros(n, sources.len());
        for (c, &j) in sources.iter().enumerate() {
            for k in skip..n {
                b[(k, c)] = f.eval(self.eigenvalues[k]) * self.vectors[(j, k)] / self.sqrt_mass[j];
            }
        }
        Ok(self.from_spectral_batch(&b))
    }

    /// Full kernel matrix of a nonnegative function, via `W Wᵀ` with
    /// `W = diag(m)^{-1/2} V f(Λ)^{1/2}`; exactly symmetric.
    pub fn kernel_matrix(&self, f: &SpectralFunction) -> Result<DMatrix<f64>> {
        f.validate()?;
        let mut w = self.vectors.clone();
        for (k, mut col) in w.column_iter_mut().enumerate() {
            let v = if f.singular_at_zero() && k < self.zero_modes { 0.0 } else { f.eval(self.eigenvalues[k]) };
            if v < 0.0 {
                return Err(Error::Domain(format!("{} is negative on the spectrum", f.label())));
            }
            col *= v.sqrt();
        }
        for (i, mut row) in w.row_iter_mut().enumerate() {
            row /= self.sqrt_mass[i];
        }
        Ok(&w * w.transpose())
    }

    /// `max |VᵀV − I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let g = self.vectors.tr_mul(&self.vectors);
        (g - DMatrix::identity(self.len(), self.len())).amax()
    }

    /// `‖A − V Λ Vᵀ‖_F / ‖A‖_F` against the operator's own symmetrized matrix.
    pub fn reconstruction_residual(&self, op: &DegenerateOperator) -> f64 {
        let a = op.symmetrized_dense();
        let mut vl = self.vectors.clone();
        for (k, mut col) in vl.column_iter_mut().enumerate() {
            col *= self.eigenvalues[k];
        }
        (&a - vl * self.vectors.transpose()).norm() / a.norm()
    }
}

/// Library of bounded functions selectable from configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundedFn {
    /// `φ ≡ 1`.
    One,
    /// `e^{-λ}`.
    Exp,
    /// `λ/(1+λ)`.
    Resolvent,
}

/// Code-level function on `[0, ∞)` with an optional known bound.
#[derive(Clone)]
pub struct CustomFn {
    pub name: String,
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub sup: Option<f64>,
}

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFn").field("name", &self.name).field("sup", &self.sup).finish()
    }
}

impl PartialEq for CustomFn {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.f, &other.f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum SpectralFunction {
    /// `e^{-tλ}`.
    Heat { t: f64 },
    /// `λ^β`.
    Power { beta: f64 },
    /// `(tλ)^k e^{-tλ}`.
    HeatDerivative { t: f64, k: u32 },
    /// `λ^{-α} e^{-sλ}`.
    Psi { alpha: f64, s: f64 },
    Bounded(BoundedFn),
    /// `Q(N, λ/ℓ) − Q(N, λℓ)` with `Q(N, x) = e^{-x} Σ_{k<N} x^k/k!`: the
    /// truncated reproducing integral of `λ^N e^{-λ}/Γ(N)` over `[1/ℓ, ℓ]`.
    PhiEll { order: u32, ell: f64 },
    #[serde(skip)]
    Custom(CustomFn),
}

fn upper_gamma_q(n: u32, x: f64) -> f64 {
    let mut term = 1.0;
    let mut s = 1.0;
    for k in 1..n {
        term *= x / k as f64;
        s += term;
    }
    (-x).exp() * s
}

impl SpectralFunction {
    pub fn custom(name: &str, f: impl Fn(f64) -> f64 + Send + Sync + 'static, sup: Option<f64>) -> Self {
        SpectralFunction::Custom(CustomFn { name: name.into(), f: Arc::new(f), sup })
    }

    pub fn label(&self) -> String {
        match self {
            SpectralFunction::Heat { t } => format!("exp(-{t} λ)"),
            SpectralFunction::Power { beta } => format!("λ^{beta}"),
            SpectralFunction::HeatDerivative { t, k } => format!("({t} λ)^{k} exp(-{t} λ)"),
            SpectralFunction::Psi { alpha, s } => format!("λ^-{alpha} exp(-{s} λ)"),
            SpectralFunction::Bounded(b) => format!("{b:?}").to_lowercase(),
            SpectralFunction::PhiEll { order, ell } => format!("phi_{ell}[N={order}]"),
            SpectralFunction::Custom(c) => c.name.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        match *self {
            SpectralFunction::Heat { t } | SpectralFunction::HeatDerivative { t, .. } if !(t >= 0.0) => {
                bad(format!("heat time must be nonnegative, got {t}"))
            }
            SpectralFunction::Psi { alpha, s } if !(alpha > 0.0 && s >= 0.0) => {
                bad(format!("psi needs alpha > 0 and s >= 0, got ({alpha}, {s})"))
            }
            SpectralFunction::PhiEll { order, ell } if order == 0 || !(ell >= 1.0) => {
                bad(format!("phi_ell needs N >= 1 and ell >= 1, got ({order}, {ell})"))
            }
            SpectralFunction::Power { beta } if !beta.is_finite() => bad("power exponent must be finite".into()),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, l: f64) -> f64 {
        match self {
            SpectralFunction::Heat { t } => (-t * l).exp(),
            SpectralFunction::Power { beta } => {
                if *beta == 0.0 {
                    1.0
                } else {
                    l.powf(*beta)
                }
            }
            SpectralFunction::HeatDerivative { t, k } => (t * l).powi(*k as i32) * (-t * l).exp(),
            SpectralFunction::Psi { alpha, s } => l.powf(-alpha) * (-s * l).exp(),
            SpectralFunction::Bounded(BoundedFn::One) => 1.0,
            SpectralFunction::Bounded(BoundedFn::Exp) => (-l).exp(),
            SpectralFunction::Bounded(BoundedFn::Resolvent) => l / (1.0 + l),
            SpectralFunction::PhiEll { order, ell } => upper_gamma_q(*order, l / ell) - upper_gamma_q(*order, l * ell),
            SpectralFunction::Custom(c) => (c.f)(l),
        }
    }

    pub fn singular_at_zero(&self) -> bool {
        match *self {
            SpectralFunction::Power { beta } => beta < 0.0,
            SpectralFunction::Psi { .. } => true,
            _ => false,
        }
    }

    /// `sup_{λ ≥ 0} |f(λ)|` when the function is known to be bounded.
    pub fn sup(&self) -> Option<f64> {
        match *self {
            SpectralFunction::Heat { .. } | SpectralFunction::Bounded(_) | SpectralFunction::PhiEll { .. } => Some(1.0),
            SpectralFunction::HeatDerivative { t, k } => {
                Some(if t == 0.0 && k > 0 { 0.0 } else if k == 0 { 1.0 } else { (k as f64).powi(k as i32) * (-(k as f64)).exp() })
            }
            SpectralFunction::Power { beta } if beta == 0.0 => Some(1.0),
            SpectralFunction::Custom(ref c) => c.sup,
            _ => None,
        }
    }
}

/// `ψ(L) u` with `ψ(λ) = λ^{-α} φ(λ)` for a bounded `φ`.
pub fn psi_calculus(dec: &SpectralDecomposition, alpha: f64, phi: &SpectralFunction, u: &[f64]) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if phi.sup().is_none() {
        return Err(Error::Domain(format!("{} is not a bounded function", phi.label())));
    }
    phi.validate()?;
    let phi = phi.clone();
    let psi = SpectralFunction::custom("psi", move |l| l.powf(-alpha) * phi.eval(l), None);
    let mut c = dec.to_spectral(u)?;
    if dec.zero_modes > 0 && dec.zero_component(&c) > 1e-12 * c.iter().map(|v| v * v).sum::<f64>().sqrt() {
        return Err(Error::Domain("psi(L) is undefined on the kernel".into()));
    }
    for (k, ck) in c.iter_mut().enumerate() {
        *ck = if k < dec.zero_modes { 0.0 } else { *ck * psi.eval(dec.eigenvalues[k]) };
    }
    Ok(dec.from_spectral(&c))
}

/// Log-uniform trapezoid for `(1/Γ(α)) ∫ t^α e^{-tL} dt/t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalderonScheme {
    pub alpha: f64,
    pub delta: f64,
    pub r: f64,
    pub nodes: usize,
    /// `true`: the finite truncation `T_{δ,R}` with halved endpoint weights.
    /// `false`: the nodes continue as an infinite trapezoid below `δ`,
    /// summed in closed form through the Taylor series of `e^{-tL}`, and the
    /// part above `R` is dropped.
    pub truncated: bool,
    /// Double `nodes` until the filter changes by less than this.
    #[serde(default)]
    pub adapt_tol: Option<f64>,
}

impl CalderonScheme {
    /// `δ = 10⁻³/λ_max`, `R = 10³/λ_min`, 400 nodes, adaptive doubling.
    pub fn standard(dec: &SpectralDecomposition, alpha: f64) -> Self {
        Self {
            alpha,
            delta: 1e-3 / dec.lambda_max(),
            r: 1e3 / dec.lambda_min(),
            nodes: 400,
            truncated: false,
            adapt_tol: Some(1e-8),
        }
    }

    /// `T_{δ,R}` with a fixed node count.
    pub fn truncated(alpha: f64, delta: f64, r: f64, nodes: usize) -> Self {
        Self { alpha, delta, r, nodes, truncated: true, adapt_tol: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Scheme(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.nodes < 2 {
            return Err(Error::Scheme("at least two nodes are needed".into()));
        }
        if !(self.delta > 0.0 && self.r.is_finite()) {
            return Err(Error::Scheme("need 0 < delta and finite R".into()));
        }
        // δ = R is the empty truncation; only the finite variant allows it
        let ok = if self.truncated { self.delta <= self.r } else { self.delta < self.r };
        if !ok {
            return Err(Error::Scheme(format!("need delta < R, got {} and {}", self.delta, self.r)));
        }
        Ok(())
    }

    fn grid(&self, nodes: usize) -> (Vec<f64>, Vec<f64>, f64) {
        let (a, b) = (self.delta.ln(), self.r.ln());
        let ds = (b - a) / (nodes - 1) as f64;
        let t: Vec<f64> = (0..nodes).map(|k| (a + k as f64 * ds).exp()).collect();
        let mut w = vec![ds; nodes];
        if self.truncated {
            w[0] *= 0.5;
            w[nodes - 1] *= 0.5;
        }
        (t, w, ds)
    }

    /// `(1/Γ(α)) Σ_k w_k t_k^α e^{-t_k λ}` on each `λ`.
    fn filter(&self, lambdas: &[f64], nodes: usize) -> Vec<f64> {
        let (t, w, _) = self.grid(nodes);
        let g = gamma(self.alpha);
        lambdas
            .iter()
            .map(|&l| t.iter().zip(&w).map(|(tk, wk)| wk * tk.powf(self.alpha) * (-tk * l).exp()).sum::<f64>() / g)
            .collect()
    }

    /// The filter plus the scalar value of the lower tail: the full
    /// approximation of `λ^{-α}` realised by this scheme.
    fn symbol(&self, lambdas: &[f64], nodes: usize, lmax: f64) -> Vec<f64> {
        let mut g = self.filter(lambdas, nodes);
        if !self.truncated {
            let (_, _, ds) = self.grid(nodes);
            let c = self.tail_coefficients(ds, lmax);
            for (gi, &l) in g.iter_mut().zip(lambdas) {
                *gi += c.iter().rev().fold(0.0, |acc, cm| acc * l + cm);
            }
        }
        g
    }

    /// Coefficients `c_m` of the closed-form sum over the nodes below `δ`:
    /// `tail = Σ_m c_m L^m u`.
    fn tail_coefficients(&self, ds: f64, lmax: f64) -> Vec<f64> {
        let g = gamma(self.alpha);
        let mut out = Vec::new();
        let mut fact = 1.0;
        for m in 0..200 {
            if m > 0 {
                fact *= m as f64;
            }
            let e = (-(self.alpha + m as f64) * ds).exp();
            let geo = ds * e / (1.0 - e);
            let c = (-self.delta).powi(m) / fact * self.delta.powf(self.alpha) * geo / g;
            out.push(c);
            if m > 0 && c.abs() * lmax.powi(m) < 1e-18 * out[0].abs() {
                break;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalderonOutput {
    pub values: Vec<f64>,
    pub nodes: usize,
    pub warnings: Vec<String>,
}

/// Calderón route to `L^{-α} u`.
pub fn calderon_inverse_power(
    op: &DegenerateOperator,
    dec: &SpectralDecomposition,
    scheme: &CalderonScheme,
    u: &[f64],
) -> Result<CalderonOutput> {
    let b = calderon_inverse_power_batch(op, dec, scheme, &DMatrix::from_column_slice(u.len(), 1, u))?;
    Ok(CalderonOutput { values: b.values.column(0).iter().copied().collect(), nodes: b.nodes, warnings: b.warnings })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalderonBatch {
    pub values: DMatrix<f64>,
    pub nodes: usize,
    pub warnings: Vec<String>,
}

/// Calderón route applied to every column of `u`.
pub fn calderon_inverse_power_batch(
    op: &DegenerateOperator,
    dec: &SpectralDecomposition,
    scheme: &CalderonScheme,
    u: &DMatrix<f64>,
) -> Result<CalderonBatch> {
    scheme.validate()?;
    if u.nrows() != dec.len() || op.len() != dec.len() {
        return Err(Error::Grid("batch row count does not match the grid".into()));
    }
    let mut warnings = Vec::new();
    if scheme.delta > 0.1 / dec.lambda_max() {
        warnings.push(format!(
            "delta = {:.3e} exceeds 0.1/lambda_max = {:.3e}; truncation dominates",
            scheme.delta,
            0.1 / dec.lambda_max()
        ));
    }
    if scheme.r < 10.0 / dec.lambda_min() {
        warnings.push(format!(
            "R = {:.3e} is below 10/lambda_min = {:.3e}; truncation dominates",
            scheme.r,
            10.0 / dec.lambda_min()
        ));
    }
    let mut c = dec.to_spectral_batch(u);
    if dec.zero_modes > 0 {
        let z = c.rows(0, dec.zero_modes).norm();
        if z > 1e-12 * c.norm() {
            return Err(Error::Domain("L^-alpha is undefined on the kernel; pass a mean-zero u".into()));
        }
    }
    if scheme.delta == scheme.r {
        return Ok(CalderonBatch { values: DMatrix::zeros(u.nrows(), u.ncols()), nodes: 0, warnings });
    }
    let lambdas = dec.eigenvalues();
    let mut nodes = scheme.nodes;
    if let Some(tol) = scheme.adapt_tol {
        let lmax = dec.lambda_max();
        let mut cur = scheme.symbol(lambdas, nodes, lmax);
        loop {
            if nodes > 1 << 16 {
                warnings.push(format!("node doubling stopped at {nodes} without reaching {tol:e}"));
                break;
            }
            let finer = scheme.symbol(lambdas, 2 * nodes - 1, lmax);
            let change = cur
                .iter()
                .zip(&finer)
                .skip(dec.zero_modes)
                .map(|(a, b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            if change < tol {
                break;
            }
            nodes = 2 * nodes - 1;
            cur = finer;
        }
    }
    let g = scheme.filter(lambdas, nodes);
    for (k, mut row) in c.row_iter_mut().enumerate() {
        row *= if k < dec.zero_modes { 0.0 } else { g[k] };
    }
    let mut out = dec.from_spectral_batch(&c);
    if !scheme.truncated {
        let (_, _, ds) = scheme.grid(nodes);
        let coeffs = scheme.tail_coefficients(ds, dec.lambda_max());
        // Σ_m c_m L^m u with the sparse operator
        let mut lm = u.clone();
        for (m, cm) in coeffs.iter().enumerate() {
            if m > 0 {
                lm = op.stiffness() * &lm;
                for (i, mut row) in lm.row_iter_mut().enumerate() {
                    row /= op.mass()[i];
                }
            }
            out += &lm * *cm;
        }
    }
    Ok(CalderonBatch { values: out, nodes, warnings })
}

/// `e^{-a} I_k(a)` for `k = 0..len` by Miller's backward recurrence,
/// normalised through `I_0 + 2 Σ_{k≥1} I_k = e^a`.
fn scaled_bessel_i(a: f64, len: usize) -> Vec<f64> {
    if a == 0.0 {
        let mut v = vec![0.0; len];
        v[0] = 1.0;
        return v;
    }
    let start = len + 40 + (4.0 * a.sqrt()) as usize;
    let mut v = vec![0.0; start + 2];
    v[start] = 1e-300;
    for k in (1..=start).rev() {
        v[k - 1] = v[k + 1] + 2.0 * k as f64 / a * v[k];
        if v[k - 1] > 1e250 {
            v.iter_mut().for_each(|x| *x *= 1e-250);
        }
    }
    let norm = v[0] + 2.0 * v[1..].iter().sum::<f64>();
    v.truncate(len);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// `e^{-tL} u` for every column of `u` by a Chebyshev expansion on
/// `[0, b]`, `b` a Gershgorin bound of `L`. Needs only sparse products, so it
/// reaches grids where a dense decomposition is out of budget.
pub fn heat_chebyshev(op: &DegenerateOperator, t: f64, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("heat time must be nonnegative, got {t}")));
    }
    if u.nrows() != op.len() {
        return Err(Error::Grid("batch row count does not match the grid".into()));
    }
    let (offs, _, vals) = op.stiffness().csr_data();
    let mass = op.mass();
    let b = (0..op.len())
        .map(|i| vals[offs[i]..offs[i + 1]].iter().map(|v| v.abs()).sum::<f64>() / mass[i])
        .fold(0.0, f64::max);
    let a = 0.5 * t * b;
    if a == 0.0 {
        return Ok(u.clone());
    }
    // coefficients are negligible well beyond a + O(√a)
    let len = (a + 30.0 * a.sqrt() + 50.0) as usize;
    let bes = scaled_bessel_i(a, len);
    let top = bes.iter().rposition(|c| *c > 1e-18).unwrap_or(0) + 1;
    // x = 2L/b − 1 maps the spectrum into [−1, 1]
    let shifted = |v: &DMatrix<f64>| {
        let mut w = op.stiffness() * v;
        for (i, mut row) in w.row_iter_mut().enumerate() {
            row *= 2.0 / (b * mass[i]);
        }
        w - v
    };
    let mut prev = u.clone();
    let mut cur = shifted(u);
    let mut out = u * bes[0] - &cur * (2.0 * bes.get(1).copied().unwrap_or(0.0));
    for (k, c) in bes.iter().enumerate().take(top).skip(2) {
        let next = shifted(&cur) * 2.0 - &prev;
        let sign = if k % 2 == 0 { 2.0 } else { -2.0 };
        out += &next * (sign * c);
        prev = cur;
        cur = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{assemble, Boundary, Coefficient, Grid};
    use crate::weights::Weight;

    fn op(n: usize, beta: f64, bc: Boundary) -> DegenerateOperator {
        let g = Grid::new(1, 1.0, n, bc).unwrap();
        assemble(&g, &Weight::power(1, beta).unwrap(), None).unwrap()
    }

    fn rel(a: &[f64], b: &[f64], m: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).zip(m).map(|((x, y), w)| (x - y).powi(2) * w).sum();
        let n: f64 = b.iter().zip(m).map(|(y, w)| y * y * w).sum();
        (d / n).sqrt()
    }

    fn bump(o: &DegenerateOperator) -> Vec<f64> {
        o.grid().nodes().iter().map(|x| (-8.0 * (x[0] - 0.2).powi(2)).exp() + 0.3 * x[0]).collect()
    }

    #[test]
    fn unweighted_dirichlet_spectrum_is_closed_form() {
        let o = op(64, 0.0, Boundary::Dirichlet);
        let d = decompose(&o).unwrap();
        let h = o.grid().h();
        for (k, l) in d.eigenvalues().iter().enumerate() {
            let exact = 4.0 / (h * h) * ((k + 1) as f64 * std::f64::consts::PI / (2.0 * 65.0)).sin().powi(2);
            assert!((l - exact).abs() <= 1e-9 * exact.max(1.0), "k={k}");
        }
        assert!(d.orthonormality_residual() < 1e-10);
        assert!(d.reconstruction_residual(&o) < 1e-10);
    }

    #[test]
    fn periodic_zero_mode_is_constant() {
        let o = op(32, 0.5, Boundary::Periodic);
        let d = decompose(&o).unwrap();
        assert_eq!(d.zero_modes(), 1);
        assert_eq!(d.eigenvalues()[0], 0.0);
        let v = d.eigenfunction(0);
        assert!(v.iter().all(|x| (x.abs() - v[0].abs()).abs() < 1e-10));
    }

    #[test]
    fn coefficient_doubles_spectrum() {
        let g = Grid::new(1, 1.0, 16, Boundary::Dirichlet).unwrap();
        let w = Weight::constant(1, 1.0).unwrap();
        let a = decompose(&assemble(&g, &w, None).unwrap()).unwrap();
        let b = decompose(&assemble(&g, &w, Some(&Coefficient::Constant { value: 2.0 })).unwrap()).unwrap();
        for (x, y) in a.eigenvalues().iter().zip(b.eigenvalues()) {
            assert!((2.0 * x - y).abs() < 1e-10 * y);
        }
    }

    #[test]
    fn spectral_apply_identities() {
        let o = op(64, 0.5, Boundary::Dirichlet);
        let d = decompose(&o).unwrap();
        let u = bump(&o);
        let id = d.heat(0.0, &u).unwrap();
        assert!(rel(&id, &u, o.mass()) < 1e-13);
        let v = d.eigenfunction(5);
        let pv = d.apply(&SpectralFunction::Power { beta: -0.25 }, &v).unwrap();
        let l = d.eigenvalues()[5].powf(-0.25);
        assert!(pv.iter().zip(&v).all(|(a, b)| (a - l * b).abs() < 1e-12 * l));
        let st = d.heat(0.01, &d.heat(0.02, &u).unwrap()).unwrap();
        assert!(rel(&st, &d.heat(0.03, &u).unwrap(), o.mass()) < 1e-11);
        assert!(d.heat(-1.0, &u).is_err());
    }

    #[test]
    fn negative_power_on_the_kernel_is_refused() {
        let o = op(16, 0.0, Boundary::Periodic);
        let d = decompose(&o).unwrap();
        let u: Vec<f64> = o.grid().nodes().iter().map(|x| 1.0 + x[0]).collect();
        let f = SpectralFunction::Power { beta: -0.5 };
        assert!(d.apply(&f, &u).is_err());
        let (_, removed) = d.apply_projected(&f, &u).unwrap();
        let total: f64 = o.mass().iter().sum();
        assert!((removed - total.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn periodic_heat_relaxes_to_the_mean() {
        let o = op(32, 0.5, Boundary::Periodic);
        let d = decompose(&o).unwrap();
        let u = bump(&o);
        let one = vec![1.0; u.len()];
        let mean = o.weighted_inner(&u, &one).unwrap() / o.weighted_inner(&one, &one).unwrap();
        let v = d.heat(1e3, &u).unwrap();
        assert!(v.iter().all(|x| (x - mean).abs() < 1e-8));
    }

    #[test]
    fn scalar_calderon_identity() {
        // λ^{-α} = (1/Γ(α)) ∫ t^{α-1} e^{-tλ} dt, by the trapezoid in log t
        for alpha in [0.125, 0.25, 0.5, 1.0] {
            for l in [0.3, 2.0, 50.0] {
                let s = CalderonScheme { alpha, delta: 1e-3 / l, r: 1e3 / l, nodes: 400, truncated: false, adapt_tol: None };
                let (_, _, ds) = s.grid(400);
                let g = s.filter(&[l], 400)[0];
                let tail: f64 = s.tail_coefficients(ds, l).iter().enumerate().map(|(m, c)| c * l.powi(m as i32)).sum();
                let exact = l.powf(-alpha);
                assert!(((g + tail) - exact).abs() < 1e-9 * exact, "alpha={alpha} l={l}");
            }
        }
    }

    #[test]
    fn calderon_matches_spectral_power() {
        let o = op(128, 0.5, Boundary::Dirichlet);
        let d = decompose(&o).unwrap();
        for k in [0, 7, 60] {
            let v = d.eigenfunction(k);
            for alpha in [0.125, 0.5] {
                let s = CalderonScheme::standard(&d, alpha);
                let c = calderon_inverse_power(&o, &d, &s, &v).unwrap();
                assert!(c.warnings.is_empty());
                let exact: Vec<f64> = v.iter().map(|x| x * d.eigenvalues()[k].powf(-alpha)).collect();
                assert!(rel(&c.values, &exact, o.mass()) < 1e-6);
            }
        }
    }

    #[test]
    fn calderon_alpha_one_is_the_inverse() {
        let o = op(64, 0.0, Boundary::Dirichlet);
        let d = decompose(&o).unwrap();
        let u = bump(&o);
        let c = calderon_inverse_power(&o, &d, &CalderonScheme::standard(&d, 1.0), &u).unwrap();
        let x = o.solve(&u).unwrap();
        assert!(rel(&c.values, &x, o.mass()) < 1e-6);
    }

    #[test]
    fn degenerate_truncation_is_zero() {
        let o = op(16, 0.0, Boundary::Dirichlet);
        let d = decompose(&o).unwrap();
        let s = CalderonScheme::truncated(0.5, 0.1, 0.1, 10);
        let c = calderon_inverse_power(&o, &d, &s, &bump(&o)).unwrap();
        assert!(c.values.iter().all(|v| *v == 0.0));
        assert!(!c.warnings.is_empty());
        assert!(CalderonScheme::truncated(0.5, 0.2, 0.1, 10).validate().is_err());
    }

    #[test]
    fn psi_calculus_examples() {
        let o = op(64, 0.5, Boundary::Dirichlet);
        let d = decompose(&o).unwrap();
        let u = bump(&o);
        let alpha = 0.25;
        let p = d.apply(&SpectralFunction::Power { beta: -alpha }, &u).unwrap();
        let one = psi_calculus(&d, alpha, &SpectralFunction::Bounded(BoundedFn::One), &u).unwrap();
        assert!(rel(&one, &p, o.mass()) < 1e-13);
        let e = psi_calculus(&d, alpha, &SpectralFunction::Bounded(BoundedFn::Exp), &u).unwrap();
        let pe = d.apply(&SpectralFunction::Power { beta: -alpha }, &d.heat(1.0, &u).unwrap()).unwrap();
        assert!(rel(&e, &pe, o.mass()) < 1e-11);
        // ψ(L)(L^α u) = φ(L)u
        let la = d.apply(&SpectralFunction::Power { beta: alpha }, &u).unwrap();
        let r = SpectralFunction::Bounded(BoundedFn::Resolvent);
        let lhs = psi_calculus(&d, alpha, &r, &la).unwrap();
        assert!(rel(&lhs, &d.apply(&r, &u).unwrap(), o.mass()) < 1e-10);
        assert!(psi_calculus(&d, alpha, &SpectralFunction::Power { beta: 1.0 }, &u).is_err());
    }

    #[test]
    fn phi_ell_tends_to_one() {
        for order in [1, 2] {
            let f = |ell| SpectralFunction::PhiEll { order, ell };
            assert!((f(1.0).eval(3.0)).abs() < 1e-15);
            assert!((f(1e4).eval(3.0) - 1.0).abs() < 1e-3);
            // direct quadrature of ∫_{1/ℓ}^{ℓ} (tz)^N e^{-tz}/Γ(N) dt/t
            let (ell, z) = (4.0f64, 0.7);
            let n = 20000;
            let (a, b) = ((1.0 / ell).ln(), ell.ln());
            let hs = (b - a) / n as f64;
            let mut s = 0.0;
            for i in 0..=n {
                let t = (a + i as f64 * hs).exp();
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                s += w * (t * z).powi(order as i32) * (-t * z).exp() / gamma(order as f64);
            }
            assert!((f(ell).eval(z) - s * hs).abs() < 1e-8);
        }
    }

    #[test]
    fn spectral_function_config_form() {
        let f: SpectralFunction = serde_json::from_str(r#"{"kind":"heat","params":{"t":0.5}}"#).unwrap();
        assert_eq!(f, SpectralFunction::Heat { t: 0.5 });
        let b: SpectralFunction = serde_json::from_str(r#"{"kind":"bounded","params":"resolvent"}"#).unwrap();
        assert_eq!(b.sup(), Some(1.0));
        assert!(serde_json::from_str::<SpectralFunction>(r#"{"kind":"custom","params":null}"#).is_err());
    }

    #[test]
    fn chebyshev_heat_matches_spectral() {
        for beta in [0.0, 0.5, -0.5] {
            let o = op(64, beta, Boundary::Dirichlet);
            let d = decompose(&o).unwrap();
            let u = DMatrix::from_fn(64, 3, |i, j| ((i * (j + 2)) as f64 * 0.37).sin());
            for t in [0.0, 1e-4, 3e-3, 0.1, 1.0] {
                let a = heat_chebyshev(&o, t, &u).unwrap();
                let b = d.apply_batch(&SpectralFunction::Heat { t }, &u).unwrap();
                assert!((&a - &b).amax() <= 1e-11 * u.amax(), "beta {beta} t {t}: {}", (&a - &b).amax());
            }
        }
        assert!(scaled_bessel_i(3.0, 4).iter().zip([0.243000354161825, 0.196826713297301, 0.111782545296958, 0.047783319568023]).all(|(a, b)| (a - b).abs() < 1e-13));
    }
}
