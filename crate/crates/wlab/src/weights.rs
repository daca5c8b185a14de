//! Weight families, their cube and ball measures, and finite-family
//! estimates of the Muckenhoupt, reverse-Hölder and Muckenhoupt–Wheeden
//! constants.
//!
//! Power weights are integrated with exact antiderivatives (per axis in one
//! dimension and for tensor products, polar in two dimensions), so the
//! divergence of a class constant shows up as a genuine `+∞` rather than as
//! slow quadrature drift.

use serde::{Deserialize, Serialize};

use crate::quad::{gauss_legendre, integrate};
use crate::{Error, Result};

/// Piecewise-constant weight on a rectangular cell grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledField {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Cells per axis; axis 0 varies slowest in `values`.
    pub cells: Vec<usize>,
    pub values: Vec<f64>,
}

impl SampledField {
    fn width(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.cells[axis] as f64
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.cells).fold(0, |acc, (&i, &c)| acc * c + i)
    }

    fn locate(&self, x: &[f64]) -> Option<usize> {
        let mut idx = Vec::with_capacity(x.len());
        for (a, &xa) in x.iter().enumerate() {
            if xa < self.lo[a] || xa > self.hi[a] {
                return None;
            }
            let k = ((xa - self.lo[a]) / self.width(a)).floor() as usize;
            idx.push(k.min(self.cells[a] - 1));
        }
        Some(self.flat(&idx))
    }

    fn covers(&self, lo: &[f64], hi: &[f64]) -> bool {
        (0..lo.len()).all(|a| lo[a] >= self.lo[a] - 1e-12 && hi[a] <= self.hi[a] + 1e-12)
    }

    /// Cells overlapping the box with their overlap volumes.
    fn overlaps(&self, lo: &[f64], hi: &[f64]) -> Vec<(usize, f64)> {
        let dim = lo.len();
        let mut ranges = Vec::with_capacity(dim);
        for a in 0..dim {
            let w = self.width(a);
            let first = (((lo[a] - self.lo[a]) / w).floor().max(0.0)) as usize;
            let last = ((((hi[a] - self.lo[a]) / w).ceil()) as usize).min(self.cells[a]);
            let mut r = Vec::new();
            for k in first..last {
                let c0 = self.lo[a] + k as f64 * w;
                let len = (hi[a].min(c0 + w) - lo[a].max(c0)).max(0.0);
                if len > 0.0 {
                    r.push((k, len));
                }
            }
            ranges.push(r);
        }
        let mut out = vec![(Vec::new(), 1.0)];
        for r in &ranges {
            let mut next = Vec::with_capacity(out.len() * r.len());
            for (idx, vol) in &out {
                for &(k, len) in r {
                    let mut i2: Vec<usize> = idx.clone();
                    i2.push(k);
                    next.push((i2, vol * len));
                }
            }
            out = next;
        }
        out.into_iter().map(|(idx, v)| (self.flat(&idx), v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightKind {
    Constant,
    /// Radial power `|x|^β`.
    Power(f64),
    /// Product `Π |x_a|^{β_a}`.
    Tensor(Vec<f64>),
    Sampled(SampledField),
}

/// A positive weight `scale · kind(x)` on ℝⁿ.
#[derive(Clone, Debug, PartialEq)]
pub struct Weight {
    dim: usize,
    scale: f64,
    kind: WeightKind,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::Weight("dimension must be at least 1".into()));
    }
    Ok(())
}

impl Weight {
    pub fn constant(dim: usize, c: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Weight(format!("constant weight needs 0 < c < inf, got {c}")));
        }
        Ok(Self { dim, scale: c, kind: WeightKind::Constant })
    }

    pub fn power(dim: usize, beta: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(beta > -(dim as f64)) || !beta.is_finite() {
            return Err(Error::Weight(format!(
                "|x|^{beta} is not locally integrable in dimension {dim}"
            )));
        }
        let kind = if beta == 0.0 { WeightKind::Constant } else { WeightKind::Power(beta) };
        Ok(Self { dim, scale: 1.0, kind })
    }

    pub fn tensor(betas: Vec<f64>) -> Result<Self> {
        check_dim(betas.len())?;
        if let Some(b) = betas.iter().find(|b| !(**b > -1.0) || !b.is_finite()) {
            return Err(Error::Weight(format!("tensor factor |x_a|^{b} is not locally integrable")));
        }
        Ok(Self { dim: betas.len(), scale: 1.0, kind: WeightKind::Tensor(betas) })
    }

    pub fn sampled(field: SampledField) -> Result<Self> {
        let dim = field.cells.len();
        check_dim(dim)?;
        if field.lo.len() != dim || field.hi.len() != dim {
            return Err(Error::Weight("sampled bounds do not match the cell layout".into()));
        }
        if field.cells.contains(&0) || (0..dim).any(|a| !(field.hi[a] > field.lo[a])) {
            return Err(Error::Weight("sampled grid is empty".into()));
        }
        if field.values.len() != field.cells.iter().product::<usize>() {
            return Err(Error::Weight("sampled value count does not match the cell layout".into()));
        }
        if let Some(v) = field.values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Weight(format!("sampled values must lie in (0, inf), found {v}")));
        }
        Ok(Self { dim, scale: 1.0, kind: WeightKind::Sampled(field) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, WeightKind::Constant)
    }

    /// `c · w`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { scale: self.scale * c, ..self.clone() }
    }

    /// `w^s`. No integrability guard: class functionals need powers such as
    /// `ω^{1-p'}` whose local integrability is exactly what is being probed.
    pub fn powf(&self, s: f64) -> Self {
        let kind = match &self.kind {
            WeightKind::Constant => WeightKind::Constant,
            WeightKind::Power(b) => WeightKind::Power(b * s),
            WeightKind::Tensor(bs) => WeightKind::Tensor(bs.iter().map(|b| b * s).collect()),
            WeightKind::Sampled(f) => WeightKind::Sampled(SampledField {
                values: f.values.iter().map(|v| v.powf(s)).collect(),
                ..f.clone()
            }),
        };
        Self { dim: self.dim, scale: self.scale.powf(s), kind }
    }

    /// Pointwise value; `NaN` outside the support of a sampled weight.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let x = &x[..self.dim];
        self.scale
            * match &self.kind {
                WeightKind::Constant => 1.0,
                WeightKind::Power(b) => x.iter().map(|v| v * v).sum::<f64>().powf(0.5 * b),
                WeightKind::Tensor(bs) => x.iter().zip(bs).map(|(v, b)| v.abs().powf(*b)).product(),
                WeightKind::Sampled(f) => f.locate(x).map_or(f64::NAN, |k| f.values[k]),
            }
    }

    /// Points where the weight vanishes or blows up.
    pub fn singular_points(&self) -> Vec<Vec<f64>> {
        match &self.kind {
            WeightKind::Power(_) | WeightKind::Tensor(_) => vec![vec![0.0; self.dim]],
            _ => Vec::new(),
        }
    }

    pub fn describe(&self) -> String {
        let body = match &self.kind {
            WeightKind::Constant => "1".to_string(),
            WeightKind::Power(b) => format!("|x|^{b}"),
            WeightKind::Tensor(bs) => {
                bs.iter().enumerate().map(|(a, b)| format!("|x{a}|^{b}")).collect::<Vec<_>>().join("*")
            }
            WeightKind::Sampled(f) => format!("sampled{:?}", f.cells),
        };
        if self.scale == 1.0 {
            body
        } else {
            format!("{}*{}", self.scale, body)
        }
    }

    /// `∫_box w`, `+∞` when the weight is not integrable on the box.
    pub fn box_integral(&self, lo: &[f64], hi: &[f64], resolution: usize) -> Result<f64> {
        check_box(self.dim, lo, hi)?;
        if resolution < 1 {
            return Err(Error::Quadrature("resolution must be at least 1".into()));
        }
        let vol: f64 = (0..self.dim).map(|a| hi[a] - lo[a]).product();
        let v = match &self.kind {
            WeightKind::Constant => vol,
            WeightKind::Power(b) => match self.dim {
                1 => power_interval(*b, lo[0], hi[0]),
                2 => radial_rect(*b, lo, hi, resolution),
                _ => {
                    return Err(Error::Quadrature(
                        "radial power integrals are implemented for n <= 2".into(),
                    ))
                }
            },
            WeightKind::Tensor(bs) => (0..self.dim).map(|a| power_interval(bs[a], lo[a], hi[a])).product(),
            WeightKind::Sampled(f) => {
                if !f.covers(lo, hi) {
                    return Err(Error::Quadrature("box leaves the support of the sampled weight".into()));
                }
                f.overlaps(lo, hi).iter().map(|&(k, v)| f.values[k] * v).sum()
            }
        };
        Ok(self.scale * v)
    }

    /// Minimum and maximum over a midpoint lattice of `(4·resolution)^n`
    /// nodes: the surrogate for the essential infimum and supremum.
    pub fn node_range(&self, lo: &[f64], hi: &[f64], resolution: usize) -> Result<(f64, f64)> {
        check_box(self.dim, lo, hi)?;
        if let WeightKind::Sampled(f) = &self.kind {
            if !f.covers(lo, hi) {
                return Err(Error::Quadrature("box leaves the support of the sampled weight".into()));
            }
            let vals = f.overlaps(lo, hi);
            let (mut mn, mut mx) = (f64::INFINITY, 0.0f64);
            for (k, _) in vals {
                mn = mn.min(f.values[k]);
                mx = mx.max(f.values[k]);
            }
            return Ok((self.scale * mn, self.scale * mx));
        }
        let k = 4 * resolution.max(1);
        let total = k.pow(self.dim as u32);
        let (mut mn, mut mx) = (f64::INFINITY, 0.0f64);
        let mut x = vec![0.0; self.dim];
        for idx in 0..total {
            let mut r = idx;
            for a in (0..self.dim).rev() {
                let i = r % k;
                r /= k;
                x[a] = lo[a] + (i as f64 + 0.5) * (hi[a] - lo[a]) / k as f64;
            }
            let v = self.eval(&x);
            mn = mn.min(v);
            mx = mx.max(v);
        }
        Ok((mn, mx))
    }

    /// Harmonic mean of the weight along the axis-aligned segment `[a, b]`:
    /// the exact one-dimensional flux coefficient between two nodes.
    pub fn harmonic_segment_mean(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let axis = (0..self.dim)
            .find(|&k| a[k] != b[k])
            .ok_or_else(|| Error::Geometry("degenerate segment".into()))?;
        if (0..self.dim).any(|k| k != axis && a[k] != b[k]) {
            return Err(Error::Geometry("segment is not axis-aligned".into()));
        }
        let (lo, hi) = (a[axis].min(b[axis]), a[axis].max(b[axis]));
        let len = hi - lo;
        let inv = match &self.kind {
            WeightKind::Constant => len,
            WeightKind::Power(beta) if self.dim == 1 => power_interval(-beta, lo, hi),
            WeightKind::Tensor(bs) => {
                let mut v = power_interval(-bs[axis], lo, hi);
                for k in (0..self.dim).filter(|&k| k != axis) {
                    v *= a[k].abs().powf(-bs[k]);
                }
                v
            }
            _ => {
                let mut x = a.to_vec();
                integrate(
                    |t| {
                        x[axis] = t;
                        1.0 / self.kind_eval(&x)
                    },
                    lo,
                    hi,
                    16,
                    8,
                )
            }
        };
        Ok(self.scale * len / inv)
    }

    fn kind_eval(&self, x: &[f64]) -> f64 {
        self.eval(x) / self.scale
    }
}

fn check_box(dim: usize, lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.len() < dim || hi.len() < dim {
        return Err(Error::Geometry("box dimension mismatch".into()));
    }
    if (0..dim).any(|a| !(hi[a] > lo[a]) || !lo[a].is_finite() || !hi[a].is_finite()) {
        return Err(Error::Geometry("box sides must be positive and finite".into()));
    }
    Ok(())
}

/// `(b^e - a^e)/e` for `0 <= a < b`, accurate when `a ≈ b` and when `e ≈ 0`.
fn pow_diff(a: f64, b: f64, e: f64) -> f64 {
    if a == 0.0 {
        return if e > 0.0 { b.powf(e) / e } else { f64::INFINITY };
    }
    let l = ((b - a) / a).ln_1p();
    if e.abs() < 1e-14 {
        return l;
    }
    a.powf(e) * (e * l).exp_m1() / e
}

/// `∫_a^b |x|^β dx`, exact.
pub fn power_interval(beta: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if beta == 0.0 {
        return b - a;
    }
    let e = beta + 1.0;
    if a >= 0.0 {
        pow_diff(a, b, e)
    } else if b <= 0.0 {
        pow_diff(-b, -a, e)
    } else {
        pow_diff(0.0, -a, e) + pow_diff(0.0, b, e)
    }
}

/// Split `[lo, hi]` into pieces reflected onto `[0, ∞)`.
fn fold_interval(lo: f64, hi: f64) -> Vec<(f64, f64)> {
    if lo < 0.0 && hi > 0.0 {
        vec![(0.0, -lo), (0.0, hi)]
    } else if hi <= 0.0 {
        vec![(-hi, -lo)]
    } else {
        vec![(lo, hi)]
    }
}

fn radial_rect(beta: f64, lo: &[f64], hi: &[f64], res: usize) -> f64 {
    let mut total = 0.0;
    for &(a, b) in &fold_interval(lo[0], hi[0]) {
        for &(c, d) in &fold_interval(lo[1], hi[1]) {
            total += quadrant_rect(beta, a, b, c, d, res, 0);
        }
    }
    total
}

/// `∫_{[a,b]×[c,d]} |x|^β` for `0 <= a < b`, `0 <= c < d`.
fn quadrant_rect(beta: f64, a: f64, b: f64, c: f64, d: f64, res: usize, depth: u32) -> f64 {
    if a == 0.0 && c == 0.0 {
        return corner_rect(beta, b, d, res);
    }
    let diam = ((b - a).powi(2) + (d - c).powi(2)).sqrt();
    let dist = (a * a + c * c).sqrt();
    if dist > 2.0 * diam || depth > 60 {
        let m = 12 * res;
        let (x, w) = gauss_legendre(m);
        let (hx, hy) = (0.5 * (b - a), 0.5 * (d - c));
        let (mx, my) = (a + hx, c + hy);
        let mut s = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            let px = mx + hx * xi;
            for (yj, wj) in x.iter().zip(&w) {
                let py = my + hy * yj;
                s += wi * wj * (px * px + py * py).powf(0.5 * beta);
            }
        }
        return s * hx * hy;
    }
    let (mx, my) = (0.5 * (a + b), 0.5 * (c + d));
    quadrant_rect(beta, a, mx, c, my, res, depth + 1)
        + quadrant_rect(beta, mx, b, c, my, res, depth + 1)
        + quadrant_rect(beta, a, mx, my, d, res, depth + 1)
        + quadrant_rect(beta, mx, b, my, d, res, depth + 1)
}

/// `∫_0^u ∫_0^v |x|^β` in polar coordinates: two triangles split by the
/// diagonal, radial integral in closed form.
fn corner_rect(beta: f64, u: f64, v: f64, res: usize) -> f64 {
    let e = beta + 2.0;
    if e <= 0.0 {
        return f64::INFINITY;
    }
    let theta0 = v.atan2(u);
    let m = 16 * res;
    let t1 = integrate(|t| (u / t.cos()).powf(e) / e, 0.0, theta0, m, 4);
    let t2 = integrate(|t| (v / t.sin()).powf(e) / e, theta0, std::f64::consts::FRAC_PI_2, m, 4);
    t1 + t2
}

/// An axis-aligned cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub side: f64,
}

impl Cube {
    pub fn new(center: Vec<f64>, side: f64) -> Result<Self> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::Geometry(format!("cube side must be positive, got {side}")));
        }
        Ok(Self { center, side })
    }

    pub fn lo(&self) -> Vec<f64> {
        self.center.iter().map(|c| c - 0.5 * self.side).collect()
    }

    pub fn hi(&self) -> Vec<f64> {
        self.center.iter().map(|c| c + 0.5 * self.side).collect()
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.center.len() as i32)
    }

    pub fn dilate(&self, k: f64) -> Self {
        Self { center: self.center.clone(), side: self.side * k }
    }
}

pub fn cube_measure(w: &Weight, q: &Cube, resolution: usize) -> Result<f64> {
    if q.center.len() != w.dim() {
        return Err(Error::Geometry("cube and weight dimensions differ".into()));
    }
    w.box_integral(&q.lo(), &q.hi(), resolution)
}

/// `ω(B(x, r))`.
pub fn ball_measure(w: &Weight, x: &[f64], r: f64, resolution: usize) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Geometry(format!("ball radius must be positive, got {r}")));
    }
    if resolution < 1 {
        return Err(Error::Quadrature("resolution must be at least 1".into()));
    }
    let n = w.dim();
    if n == 1 {
        return w.box_integral(&[x[0] - r], &[x[0] + r], resolution);
    }
    if n != 2 {
        return Err(Error::Quadrature("ball measures are implemented for n <= 2".into()));
    }
    if let WeightKind::Sampled(f) = &w.kind {
        if !f.covers(&[x[0] - r, x[1] - r], &[x[0] + r, x[1] + r]) {
            return Err(Error::Quadrature("ball leaves the support of the sampled weight".into()));
        }
    }
    let v = match &w.kind {
        WeightKind::Constant => std::f64::consts::PI * r * r,
        WeightKind::Power(b) => radial_ball(*b, x[0].hypot(x[1]), r, resolution),
        _ => {
            // composite midpoint in polar coordinates about the centre
            let (nr, nt) = (64 * resolution, 64 * resolution);
            let mut s = 0.0;
            for i in 0..nr {
                let rho = (i as f64 + 0.5) * r / nr as f64;
                for j in 0..nt {
                    let th = (j as f64 + 0.5) * std::f64::consts::TAU / nt as f64;
                    s += w.kind_eval(&[x[0] + rho * th.cos(), x[1] + rho * th.sin()]) * rho;
                }
            }
            s * (r / nr as f64) * (std::f64::consts::TAU / nt as f64)
        }
    };
    Ok(w.scale * v)
}

/// Ball of radius `r` whose centre is at distance `d` from the origin,
/// integrated in polar coordinates about the origin with the radial
/// integral in closed form.
fn radial_ball(beta: f64, d: f64, r: f64, res: usize) -> f64 {
    let e = beta + 2.0;
    let m = 32 * res;
    if d < r {
        if e <= 0.0 {
            return f64::INFINITY;
        }
        let f = |psi: f64| {
            let rho = d * psi.cos() + (r * r - d * d * psi.sin().powi(2)).sqrt();
            pow_diff(0.0, rho, e)
        };
        // smooth and periodic: the trapezoid rule is spectrally accurate
        let k = 4 * m;
        let h = std::f64::consts::TAU / k as f64;
        return (0..k).map(|i| f(i as f64 * h)).sum::<f64>() * h;
    }
    if d == r {
        if e <= 0.0 {
            return f64::INFINITY;
        }
        return integrate(|psi| pow_diff(0.0, 2.0 * d * psi.cos(), e), -std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2, m, 8);
    }
    let k = r / d;
    integrate(
        |tau| {
            let s = k * tau.sin();
            let cpsi = (1.0 - s * s).sqrt();
            let (r1, r2) = (d * cpsi - r * tau.cos(), d * cpsi + r * tau.cos());
            if r2 <= r1 {
                return 0.0;
            }
            pow_diff(r1, r2, e) * k * tau.cos() / cpsi
        },
        -std::f64::consts::FRAC_PI_2,
        std::f64::consts::FRAC_PI_2,
        m,
        4,
    )
}

/// Class functional to be maximised over cubes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum WeightClass {
    /// `A_p`, `p >= 1`.
    Ap { p: f64 },
    /// `RH_q`, `1 < q <= ∞` (`q = ∞` encoded as infinity).
    Rh { q: f64 },
    /// `A_{p,q}`, `1 <= p <= q < ∞`.
    Apq { p: f64, q: f64 },
}

impl WeightClass {
    pub fn label(&self) -> String {
        match self {
            WeightClass::Ap { .. } => "A_p".into(),
            WeightClass::Rh { .. } => "RH_q".into(),
            WeightClass::Apq { .. } => "A_pq".into(),
        }
    }

    pub fn exponents(&self) -> Vec<f64> {
        match *self {
            WeightClass::Ap { p } => vec![p],
            WeightClass::Rh { q } => vec![q],
            WeightClass::Apq { p, q } => vec![p, q],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            WeightClass::Ap { p } => p >= 1.0 && p.is_finite(),
            WeightClass::Rh { q } => q > 1.0,
            WeightClass::Apq { p, q } => p >= 1.0 && q >= p && q.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Weight(format!("invalid class exponents {self:?}")))
        }
    }
}

fn avg(w: &Weight, s: f64, lo: &[f64], hi: &[f64], vol: f64, res: usize) -> Result<f64> {
    Ok(w.powf(s).box_integral(lo, hi, res)? / vol)
}

/// The defining functional of `class` on one box.
pub fn box_functional(w: &Weight, class: WeightClass, lo: &[f64], hi: &[f64], res: usize) -> Result<f64> {
    let vol: f64 = (0..w.dim()).map(|a| hi[a] - lo[a]).product();
    let v = match class {
        WeightClass::Ap { p } if p == 1.0 => {
            let (mn, _) = w.node_range(lo, hi, res)?;
            avg(w, 1.0, lo, hi, vol, res)? / mn
        }
        WeightClass::Ap { p } => {
            let pp = p / (p - 1.0);
            avg(w, 1.0, lo, hi, vol, res)? * avg(w, 1.0 - pp, lo, hi, vol, res)?.powf(p - 1.0)
        }
        WeightClass::Rh { q } if q.is_infinite() => {
            let (_, mx) = w.node_range(lo, hi, res)?;
            mx / avg(w, 1.0, lo, hi, vol, res)?
        }
        WeightClass::Rh { q } => avg(w, q, lo, hi, vol, res)?.powf(1.0 / q) / avg(w, 1.0, lo, hi, vol, res)?,
        WeightClass::Apq { p, q } if p == 1.0 => {
            let (mn, _) = w.node_range(lo, hi, res)?;
            avg(w, q, lo, hi, vol, res)?.powf(1.0 / q) / mn
        }
        WeightClass::Apq { p, q } => {
            let pp = p / (p - 1.0);
            avg(w, q, lo, hi, vol, res)?.powf(1.0 / q) * avg(w, -pp, lo, hi, vol, res)?.powf(1.0 / pp)
        }
    };
    Ok(if v.is_nan() { f64::INFINITY } else { v })
}

/// Reverse-Hölder-type ratio `avg(ω^s)^{1/s} / avg(ω)` for any `s > 0`.
pub fn holder_ratio(w: &Weight, s: f64, q: &Cube, res: usize) -> Result<f64> {
    let (lo, hi) = (q.lo(), q.hi());
    let vol = q.volume();
    Ok(avg(w, s, &lo, &hi, vol, res)?.powf(1.0 / s) / avg(w, 1.0, &lo, &hi, vol, res)?)
}

/// Deterministic generation rule of a [`CubeFamily`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub dim: usize,
    /// Coarsest scale index; the side at scale `k` is `base_side · 2^{-k}`.
    pub k_min: i32,
    pub k_max: i32,
    pub base_side: f64,
    pub anchors: Vec<Vec<f64>>,
    /// Translates `anchor + j·side/2` for `j ∈ {-T..T}ⁿ`; `T >= 1` puts a
    /// cube with a corner at the anchor in every orthant.
    pub translates: usize,
}

impl FamilySpec {
    /// Scales `k_min..=k_max` anchored at the weight's singular points (or the
    /// origin when it has none).
    pub fn dyadic(w: &Weight, k_min: i32, k_max: i32, translates: usize) -> Self {
        let mut anchors = w.singular_points();
        if anchors.is_empty() {
            anchors.push(vec![0.0; w.dim()]);
        }
        Self { dim: w.dim(), k_min, k_max, base_side: 1.0, anchors, translates }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CubeFamily {
    spec: FamilySpec,
    cubes: Vec<(i32, Cube)>,
}

impl CubeFamily {
    pub fn generate(spec: FamilySpec) -> Result<Self> {
        if spec.k_max < spec.k_min || spec.anchors.is_empty() || !(spec.base_side > 0.0) {
            return Err(Error::Geometry("empty cube family".into()));
        }
        if spec.anchors.iter().any(|a| a.len() != spec.dim) {
            return Err(Error::Geometry("anchor dimension mismatch".into()));
        }
        let t = spec.translates as i64;
        let per_axis = (2 * t + 1) as usize;
        let mut cubes = Vec::new();
        for k in spec.k_min..=spec.k_max {
            let side = spec.base_side * 2f64.powi(-k);
            for a in &spec.anchors {
                for idx in 0..per_axis.pow(spec.dim as u32) {
                    let mut r = idx;
                    let mut c = a.clone();
                    for ca in c.iter_mut() {
                        let j = (r % per_axis) as i64 - t;
                        r /= per_axis;
                        *ca += j as f64 * 0.5 * side;
                    }
                    cubes.push((k, Cube::new(c, side)?));
                }
            }
        }
        Ok(Self { spec, cubes })
    }

    pub fn spec(&self) -> &FamilySpec {
        &self.spec
    }

    pub fn cubes(&self) -> impl Iterator<Item = &Cube> {
        self.cubes.iter().map(|(_, c)| c)
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    fn scales(&self) -> Vec<i32> {
        (self.spec.k_min..=self.spec.k_max).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightClassEstimate {
    pub class: String,
    pub exponents: Vec<f64>,
    /// Supremum over the family; serialized as `null` when infinite.
    pub constant: f64,
    pub diverged: bool,
    pub family: FamilySpec,
    pub resolution: usize,
}

/// Divergence policy: a running supremum that still grows by `factor`
/// across the two finest scales, or under two quadrature doublings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRule {
    pub factor: f64,
    pub refinements: u32,
}

impl Default for DivergenceRule {
    fn default() -> Self {
        Self { factor: 1.1, refinements: 2 }
    }
}

fn scale_sups(w: &Weight, class: WeightClass, f: &CubeFamily, res: usize) -> Result<Vec<f64>> {
    let scales = f.scales();
    let mut sup = vec![0.0f64; scales.len()];
    for (k, q) in &f.cubes {
        let v = box_functional(w, class, &q.lo(), &q.hi(), res)?;
        let slot = (k - f.spec.k_min) as usize;
        sup[slot] = sup[slot].max(v);
    }
    Ok(sup)
}

pub fn class_constant(w: &Weight, class: WeightClass, f: &CubeFamily, resolution: usize) -> Result<WeightClassEstimate> {
    class_constant_with(w, class, f, resolution, DivergenceRule::default())
}

pub fn class_constant_with(
    w: &Weight,
    class: WeightClass,
    f: &CubeFamily,
    resolution: usize,
    rule: DivergenceRule,
) -> Result<WeightClassEstimate> {
    class.validate()?;
    if f.spec.dim != w.dim() {
        return Err(Error::Geometry("family and weight dimensions differ".into()));
    }
    let coarse = scale_sups(w, class, f, resolution)?;
    let fine_res = resolution << rule.refinements;
    let fine = scale_sups(w, class, f, fine_res)?;
    let running: Vec<f64> = fine
        .iter()
        .scan(0.0f64, |acc, &v| {
            *acc = acc.max(v);
            Some(*acc)
        })
        .collect();
    let constant = *running.last().unwrap();
    let coarse_sup = coarse.iter().cloned().fold(0.0, f64::max);
    let mut diverged = !constant.is_finite();
    if !diverged && running.len() >= 2 {
        let prev = running[running.len() - 2];
        diverged |= constant >= rule.factor * prev;
    }
    if !diverged && rule.refinements > 0 {
        diverged |= constant >= rule.factor * coarse_sup;
    }
    Ok(WeightClassEstimate {
        class: class.label(),
        exponents: class.exponents(),
        constant,
        diverged,
        family: f.spec.clone(),
        resolution: fine_res,
    })
}

/// Analytic membership question for `|x|^β`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum PowerClass {
    Ap { p: f64 },
    Rh { s: f64 },
    /// `A_2 ∩ RH_{q/p}`.
    A2Rh { p: f64, q: f64 },
    /// `ω^{1/p} ∈ A_{p,q}`, equivalently `ω ∈ A_p ∩ RH_{q/p}`.
    ApqRoot { p: f64, q: f64 },
    /// `ω ∈ A_{p,q}` itself.
    Apq { p: f64, q: f64 },
}

/// Exact verdict for `|x|^β` in dimension `n`.
pub fn power_membership(n: usize, beta: f64, class: PowerClass) -> Result<bool> {
    let n = n as f64;
    if !(beta > -n) {
        return Err(Error::Weight(format!("|x|^{beta} is not a weight in dimension {n}")));
    }
    Ok(match class {
        PowerClass::Ap { p } if p == 1.0 => beta <= 0.0,
        PowerClass::Ap { p } => beta < n * (p - 1.0),
        PowerClass::Rh { s } if s.is_infinite() => beta >= 0.0,
        PowerClass::Rh { s } => beta > -n / s,
        PowerClass::A2Rh { p, q } => -n * p / q < beta && beta < n,
        PowerClass::ApqRoot { p, q } => {
            let upper = if p == 1.0 { beta <= 0.0 } else { beta < n * (p - 1.0) };
            -n * p / q < beta && upper
        }
        PowerClass::Apq { p, q } => {
            let upper = if p == 1.0 { beta <= 0.0 } else { beta < n * (p - 1.0) / p };
            -n / q < beta && upper
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceEntry {
    pub statement: String,
    pub lhs: Vec<WeightClassEstimate>,
    pub rhs: Vec<WeightClassEstimate>,
    pub lhs_member: bool,
    pub rhs_member: bool,
    pub agree: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub p: f64,
    pub q: f64,
    pub entries: Vec<EquivalenceEntry>,
    /// Analytic verdict for `ω^{1/p} ∈ A_{p,q}` when ω is a radial power.
    pub power_verdict: Option<bool>,
    pub consistent: bool,
}

/// Both sides of the three class equivalences for exponents `1 < p < q`.
pub fn equivalence_check(w: &Weight, p: f64, q: f64, f: &CubeFamily, res: usize) -> Result<EquivalenceReport> {
    if !(1.0 < p && p < q && q.is_finite()) {
        return Err(Error::Weight(format!("need 1 < p < q < inf, got p={p}, q={q}")));
    }
    let s = q / p;
    let pp = p / (p - 1.0);
    let est = |w: &Weight, c: WeightClass| class_constant(w, c, f, res);
    let member = |v: &[WeightClassEstimate]| v.iter().all(|e| !e.diverged);
    let root = w.powf(1.0 / p);
    let mut entries = Vec::new();
    let mut push = |statement: String, lhs: Vec<WeightClassEstimate>, rhs: Vec<WeightClassEstimate>| {
        let (lm, rm) = (member(&lhs), member(&rhs));
        entries.push(EquivalenceEntry { statement, lhs, rhs, lhs_member: lm, rhs_member: rm, agree: lm == rm });
    };
    push(
        format!("w in A_{p} & RH_{s}  <=>  w^{s} in A_{}", s * (p - 1.0) + 1.0),
        vec![est(w, WeightClass::Ap { p })?, est(w, WeightClass::Rh { q: s })?],
        vec![est(&w.powf(s), WeightClass::Ap { p: s * (p - 1.0) + 1.0 })?],
    );
    push(
        format!("v = w^(1/{p}) in A_({p},{q})  <=>  v^{q} in A_{}", 1.0 + q / pp),
        vec![est(&root, WeightClass::Apq { p, q })?],
        vec![est(&root.powf(q), WeightClass::Ap { p: 1.0 + q / pp })?],
    );
    push(
        format!("w^(1/{p}) in A_({p},{q})  <=>  w in A_{p} & RH_{s}"),
        vec![est(&root, WeightClass::Apq { p, q })?],
        vec![est(w, WeightClass::Ap { p })?, est(w, WeightClass::Rh { q: s })?],
    );
    let power_verdict = match w.kind() {
        WeightKind::Power(b) => Some(power_membership(w.dim(), *b, PowerClass::ApqRoot { p, q })?),
        WeightKind::Constant => Some(true),
        _ => None,
    };
    let mut consistent = entries.iter().all(|e| e.agree);
    if let Some(v) = power_verdict {
        consistent &= entries[2].lhs_member == v;
    }
    Ok(EquivalenceReport { p, q, entries, power_verdict, consistent })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    /// `max ω(2Q)/ω(Q)` over the family.
    pub doubling: f64,
    /// `min log₂ ω(B(x,2r))/ω(B(x,r))` over the family's centres and half-sides.
    pub reverse_doubling: f64,
    pub family: FamilySpec,
}

pub fn doubling_report(w: &Weight, f: &CubeFamily, res: usize) -> Result<DoublingReport> {
    let mut d = 1.0f64;
    let mut rd = f64::INFINITY;
    for q in f.cubes() {
        let inner = cube_measure(w, q, res)?;
        let outer = cube_measure(w, &q.dilate(2.0), res)?;
        d = d.max(outer / inner);
        let r = 0.5 * q.side;
        let b1 = ball_measure(w, &q.center, r, res)?;
        let b2 = ball_measure(w, &q.center, 2.0 * r, res)?;
        rd = rd.min((b2 / b1).log2());
    }
    Ok(DoublingReport { doubling: d, reverse_doubling: rd, family: f.spec.clone() })
}

/// Config-level weight description `{kind, beta, dimension}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub kind: String,
    #[serde(default)]
    pub beta: f64,
    pub dimension: usize,
    /// Per-axis exponents for `kind = "tensor"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    /// Value for `kind = "constant"` (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<SampledField>,
}

impl WeightSpec {
    pub fn power(dimension: usize, beta: f64) -> Self {
        Self { kind: "power".into(), beta, dimension, betas: None, value: None, field: None }
    }

    pub fn build(&self) -> Result<Weight> {
        match self.kind.as_str() {
            "constant" => Weight::constant(self.dimension, self.value.unwrap_or(1.0)),
            "power" => Weight::power(self.dimension, self.beta),
            "tensor" => {
                let bs = self.betas.clone().unwrap_or_else(|| vec![self.beta; self.dimension]);
                if bs.len() != self.dimension {
                    return Err(Error::Weight("tensor exponents do not match the dimension".into()));
                }
                Weight::tensor(bs)
            }
            "sampled" => Weight::sampled(
                self.field.clone().ok_or_else(|| Error::Weight("sampled weight needs a field".into()))?,
            ),
            k => Err(Error::Weight(format!("unknown weight kind {k:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn construction_guards() {
        assert!(Weight::power(1, -1.0).is_err());
        assert!(Weight::power(2, -1.5).is_ok());
        assert!(Weight::power(2, -2.0).is_err());
        assert!(Weight::constant(1, 0.0).is_err());
        assert!(Weight::tensor(vec![0.5, -1.0]).is_err());
        let bad = SampledField { lo: vec![0.0], hi: vec![1.0], cells: vec![2], values: vec![1.0, 0.0] };
        assert!(Weight::sampled(bad).is_err());
    }

    #[test]
    fn unit_cube_examples() {
        let one = Weight::constant(2, 1.0).unwrap();
        let q = Cube::new(vec![0.5, 0.5], 1.0).unwrap();
        assert_eq!(cube_measure(&one, &q, 1).unwrap(), 1.0);
        let w = Weight::power(1, 0.5).unwrap();
        let q1 = Cube::new(vec![0.5], 1.0).unwrap();
        assert!(close(cube_measure(&w, &q1, 1).unwrap(), 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn tensor_square_matches_two_dimensional_quadrature() {
        let t = Weight::tensor(vec![0.5, 0.5]).unwrap();
        let exact = t.box_integral(&[0.0, 0.0], &[1.0, 1.0], 1).unwrap();
        assert!(close(exact, 4.0 / 9.0, 1e-14));
        // oracle: composite midpoint with Richardson extrapolation in h^{3/2}
        let mid = |k: usize| {
            let h = 1.0 / k as f64;
            let mut s = 0.0;
            for i in 0..k {
                for j in 0..k {
                    s += t.eval(&[(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
                }
            }
            s * h * h
        };
        let (a, b) = (mid(400), mid(800));
        assert!((b - 4.0 / 9.0).abs() < 1e-4 && (a - 4.0 / 9.0).abs() > (b - 4.0 / 9.0).abs());
    }

    #[test]
    fn radial_square_against_polar_closed_form() {
        // ∫_{[-a,a]^2} |x|^β over the inscribed disc is 2π a^{β+2}/(β+2); the
        // square exceeds it, the circumscribed disc bounds it from above.
        for beta in [-1.5, -0.5, 0.5, 1.5] {
            let w = Weight::power(2, beta).unwrap();
            let sq = w.box_integral(&[-1.0, -1.0], &[1.0, 1.0], 2).unwrap();
            let disc = |r: f64| 2.0 * std::f64::consts::PI * r.powf(beta + 2.0) / (beta + 2.0);
            assert!(disc(1.0) < sq && sq < disc(2f64.sqrt()), "beta={beta}");
            // against ball_measure at the origin, which is exact
            let b = ball_measure(&w, &[0.0, 0.0], 1.0, 2).unwrap();
            assert!(close(b, disc(1.0), 1e-13));
            // symmetric split consistency
            let q = w.box_integral(&[0.0, 0.0], &[1.0, 1.0], 2).unwrap();
            assert!(close(sq, 4.0 * q, 1e-13));
        }
    }

    #[test]
    fn radial_rectangles_converge_under_resolution() {
        let w = Weight::power(2, -1.2).unwrap();
        let (lo, hi) = ([0.05, -0.3], [0.4, 0.2]);
        let a = w.box_integral(&lo, &hi, 1).unwrap();
        let b = w.box_integral(&lo, &hi, 4).unwrap();
        assert!(close(a, b, 1e-9), "{a} {b}");
        // additivity across a cut
        let l = w.box_integral(&lo, &[0.2, 0.2], 4).unwrap();
        let r = w.box_integral(&[0.2, -0.3], &hi, 4).unwrap();
        assert!(close(l + r, b, 1e-11));
    }

    #[test]
    fn ball_examples() {
        let one = Weight::constant(1, 1.0).unwrap();
        assert!(close(ball_measure(&one, &[0.3], 0.7, 1).unwrap(), 1.4, 1e-15));
        let w = Weight::power(1, 0.5).unwrap();
        assert!(close(ball_measure(&w, &[0.0], 1.0, 1).unwrap(), 4.0 / 3.0, 1e-15));
        let one2 = Weight::constant(2, 1.0).unwrap();
        assert!(close(ball_measure(&one2, &[0.1, 0.2], 1.0, 1).unwrap(), std::f64::consts::PI, 1e-15));
    }

    #[test]
    fn off_centre_radial_ball_matches_polar_oracle() {
        // oracle: polar coordinates about the centre, composite Gauss rule
        let w = Weight::power(2, 0.5).unwrap();
        for (x, r) in [([0.3, 0.1], 0.2), ([0.1, 0.0], 0.5), ([1.0, 1.0], 0.1)] {
            let v = ball_measure(&w, &x, r, 2).unwrap();
            let oracle = integrate(
                |rho| {
                    integrate(
                        |th| w.eval(&[x[0] + rho * th.cos(), x[1] + rho * th.sin()]) * rho,
                        0.0,
                        std::f64::consts::TAU,
                        16,
                        32,
                    )
                },
                0.0,
                r,
                16,
                32,
            );
            assert!(close(v, oracle, 1e-6), "x={x:?} r={r} {v} {oracle}");
        }
    }

    #[test]
    fn a2_of_constant_is_one() {
        let w = Weight::constant(1, 3.0).unwrap();
        let f = CubeFamily::generate(FamilySpec::dyadic(&w, 0, 3, 2)).unwrap();
        for c in [WeightClass::Ap { p: 2.0 }, WeightClass::Rh { q: 2.0 }, WeightClass::Apq { p: 2.0, q: 4.0 }] {
            let e = class_constant(&w, c, &f, 1).unwrap();
            assert!(close(e.constant, 1.0, 1e-14) && !e.diverged, "{c:?}");
        }
    }

    #[test]
    fn sqrt_weight_a2_closed_form() {
        // On [0,ℓ]: avg(x^{1/2}) avg(x^{-1/2}) = (2/3)(2) = 4/3, on centred
        // cubes the same; translated cubes are smaller.
        let w = Weight::power(1, 0.5).unwrap();
        let f = CubeFamily::generate(FamilySpec::dyadic(&w, -2, 6, 2)).unwrap();
        let e = class_constant(&w, WeightClass::Ap { p: 2.0 }, &f, 1).unwrap();
        assert!(close(e.constant, 4.0 / 3.0, 1e-12), "{}", e.constant);
        assert!(!e.diverged);
    }

    #[test]
    fn negative_three_quarters_fails_rh2() {
        let w = Weight::power(1, -0.75).unwrap();
        let f = CubeFamily::generate(FamilySpec::dyadic(&w, 0, 6, 2)).unwrap();
        let e = class_constant(&w, WeightClass::Rh { q: 2.0 }, &f, 1).unwrap();
        assert!(e.diverged && e.constant.is_infinite());
        let js = serde_json::to_value(&e).unwrap();
        for k in ["class", "exponents", "constant", "diverged", "family"] {
            assert!(js.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn power_membership_examples() {
        assert!(power_membership(1, 0.0, PowerClass::Ap { p: 2.0 }).unwrap());
        assert!(power_membership(1, 0.5, PowerClass::A2Rh { p: 2.0, q: 4.0 }).unwrap());
        assert!(power_membership(1, -0.75, PowerClass::Ap { p: 2.0 }).unwrap());
        assert!(!power_membership(1, -0.75, PowerClass::A2Rh { p: 2.0, q: 4.0 }).unwrap());
        assert!(power_membership(1, -1.0, PowerClass::Ap { p: 2.0 }).is_err());
    }

    #[test]
    fn equivalences_for_power_weights() {
        for (beta, member) in [(0.5, true), (-0.75, false)] {
            let w = Weight::power(1, beta).unwrap();
            let f = CubeFamily::generate(FamilySpec::dyadic(&w, 0, 5, 2)).unwrap();
            let r = equivalence_check(&w, 2.0, 4.0, &f, 1).unwrap();
            assert!(r.consistent, "beta={beta}: {r:?}");
            assert_eq!(r.entries[2].lhs_member, member);
        }
        let one = Weight::constant(1, 1.0).unwrap();
        let f = CubeFamily::generate(FamilySpec::dyadic(&one, 0, 2, 1)).unwrap();
        let r = equivalence_check(&one, 2.0, 4.0, &f, 1).unwrap();
        assert!(r.entries.iter().all(|e| e.lhs_member && e.rhs_member));
        for e in r.entries.iter().flat_map(|e| e.lhs.iter().chain(&e.rhs)) {
            assert!(close(e.constant, 1.0, 1e-14));
        }
    }

    #[test]
    fn doubling_examples() {
        let one = Weight::constant(1, 1.0).unwrap();
        let f = CubeFamily::generate(FamilySpec::dyadic(&one, 0, 3, 1)).unwrap();
        let d = doubling_report(&one, &f, 1).unwrap();
        assert!(close(d.doubling, 2.0, 1e-14) && close(d.reverse_doubling, 1.0, 1e-14));

        let w = Weight::power(1, 0.5).unwrap();
        let at0 = CubeFamily::generate(FamilySpec {
            dim: 1,
            k_min: 0,
            k_max: 4,
            base_side: 1.0,
            anchors: vec![vec![0.0]],
            translates: 0,
        })
        .unwrap();
        let d = doubling_report(&w, &at0, 1).unwrap();
        assert!(close(d.reverse_doubling, 1.5, 1e-13));
        assert!(close(d.doubling, 2f64.powf(1.5), 1e-13));

        let far = CubeFamily::generate(FamilySpec {
            dim: 1,
            k_min: 4,
            k_max: 8,
            base_side: 1.0,
            anchors: vec![vec![0.0], vec![5.0]],
            translates: 0,
        })
        .unwrap();
        let d = doubling_report(&w, &far, 1).unwrap();
        assert!((d.reverse_doubling - 1.0).abs() < 1e-3, "{}", d.reverse_doubling);
    }

    #[test]
    fn harmonic_mean_at_the_singular_face() {
        let w = Weight::power(1, 0.5).unwrap();
        let h: f64 = 0.25;
        let v = w.harmonic_segment_mean(&[-h / 2.0], &[h / 2.0]).unwrap();
        assert!(close(v, 0.5 * (h / 2.0).sqrt(), 1e-14));
    }

    #[test]
    fn sampled_weight_overlap_integral() {
        let field = SampledField { lo: vec![0.0, 0.0], hi: vec![2.0, 2.0], cells: vec![2, 2], values: vec![1.0, 2.0, 3.0, 4.0] };
        let w = Weight::sampled(field).unwrap();
        assert!(close(w.box_integral(&[0.0, 0.0], &[2.0, 2.0], 1).unwrap(), 10.0, 1e-15));
        assert!(close(w.box_integral(&[0.5, 0.5], &[1.5, 1.5], 1).unwrap(), 2.5, 1e-15));
        assert!(w.box_integral(&[1.5, 1.5], &[2.5, 2.5], 1).is_err());
        assert_eq!(w.node_range(&[0.5, 0.5], &[1.5, 1.5], 1).unwrap(), (1.0, 4.0));
    }
}
