//! Cell-centred grids on `[-X, X]ⁿ` and the finite-volume discretization of
//! the degenerate operator `-div(a ω ∇·)/ω`.
//!
//! The stiffness matrix is assembled face by face, so it is symmetric by
//! construction and `L = diag(m)⁻¹ S` is self-adjoint for `⟨u,v⟩ = Σ u v m`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use serde::{Deserialize, Serialize};

use crate::weights::{Weight, WeightSpec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    Periodic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    extent: f64,
    points: usize,
    bc: Boundary,
}

impl Grid {
    pub fn new(dim: usize, extent: f64, points: usize, bc: Boundary) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Grid(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::Grid(format!("extent must be positive, got {extent}")));
        }
        if points < 8 || points % 2 == 1 {
            return Err(Error::Grid(format!(
                "points per axis must be even and at least 8, got {points}"
            )));
        }
        Ok(Self { dim, extent, points, bc })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn bc(&self) -> Boundary {
        self.bc
    }

    pub fn h(&self) -> f64 {
        2.0 * self.extent / self.points as f64
    }

    /// `hⁿ`, the cell volume.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.extent + (i as f64 + 0.5) * self.h()
    }

    /// Coordinate of the `k`-th cell face, `k = 0..=N`. The centre face is
    /// snapped to zero: roundoff there would sample a singular weight at a
    /// tiny nonzero point.
    fn face_coord(&self, k: usize) -> f64 {
        if 2 * k == self.points {
            return 0.0;
        }
        -self.extent + k as f64 * self.h()
    }

    /// Node coordinates; in 2D node `i·N + j` sits at `(x_i, x_j)`.
    pub fn node(&self, k: usize) -> [f64; 2] {
        match self.dim {
            1 => [self.axis_coord(k), 0.0],
            _ => [self.axis_coord(k / self.points), self.axis_coord(k % self.points)],
        }
    }

    pub fn nodes(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|k| self.node(k)).collect()
    }

    /// Index of the node closest to `x`.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let idx = |v: f64| (((v + self.extent) / self.h() - 0.5).round().max(0.0) as usize).min(self.points - 1);
        match self.dim {
            1 => idx(x[0]),
            _ => idx(x[0]) * self.points + idx(x[1]),
        }
    }

    /// Same extent and boundary, twice the points.
    pub fn refined(&self) -> Self {
        Self { points: 2 * self.points, ..self.clone() }
    }

    /// Faces as `(node, neighbour or None for a Dirichlet wall, axis,
    /// midpoint)`.
    fn faces(&self) -> Vec<(usize, Option<usize>, usize, [f64; 2])> {
        let n = self.points;
        let mut out = Vec::new();
        let strides: Vec<usize> = if self.dim == 1 { vec![1] } else { vec![n, 1] };
        for k in 0..self.len() {
            let x = self.node(k);
            for (axis, &stride) in strides.iter().enumerate() {
                let i = (k / stride) % n;
                // face on the +axis side of node k
                let mut mid = x;
                mid[axis] = self.face_coord(i + 1);
                if i + 1 < n {
                    out.push((k, Some(k + stride), axis, mid));
                } else if self.bc == Boundary::Periodic {
                    out.push((k, Some(k + stride - n * stride), axis, mid));
                } else {
                    out.push((k, None, axis, mid));
                }
                if i == 0 && self.bc == Boundary::Dirichlet {
                    let mut lo = x;
                    lo[axis] = self.face_coord(0);
                    out.push((k, None, axis, lo));
                }
            }
        }
        out
    }
}

/// Real coefficient field `a(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coefficient {
    Constant { value: f64 },
    /// `mean + amp · Π_d sin(freq·π·x_d)`.
    Sinusoid { mean: f64, amp: f64, freq: f64 },
    /// Constant diagonal matrix, one entry per axis.
    Diagonal { values: Vec<f64> },
}

impl Coefficient {
    pub fn eval(&self, x: &[f64], axis: usize, dim: usize) -> f64 {
        match self {
            Coefficient::Constant { value } => *value,
            Coefficient::Sinusoid { mean, amp, freq } => {
                mean + amp * x[..dim].iter().map(|v| (freq * std::f64::consts::PI * v).sin()).product::<f64>()
            }
            Coefficient::Diagonal { values } => values[axis],
        }
    }
}

/// Config form of an operator: `{dim, extent, points, bc, weight, coeff}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub extent: f64,
    pub points: usize,
    #[serde(default = "default_bc")]
    pub bc: Boundary,
    pub weight: WeightSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeff: Option<Coefficient>,
}

fn default_bc() -> Boundary {
    Boundary::Dirichlet
}

impl GridSpec {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.extent, self.points, self.bc)
    }

    pub fn assemble(&self) -> Result<DegenerateOperator> {
        if self.weight.dimension != self.dim {
            return Err(Error::Config("weight and grid dimensions differ".into()));
        }
        assemble(&self.grid()?, &self.weight.build()?, self.coeff.as_ref())
    }
}

/// Assembled `L = diag(m)⁻¹ S` together with its ingredients.
#[derive(Clone, Debug)]
pub struct DegenerateOperator {
    grid: Grid,
    weight: Weight,
    node_weights: Vec<f64>,
    mass: Vec<f64>,
    stiffness: CsrMatrix<f64>,
    face_weights: Vec<f64>,
    ellipticity: (f64, f64),
}

/// Assemble the operator. `coeff = None` means `a ≡ 1`.
pub fn assemble(grid: &Grid, w: &Weight, coeff: Option<&Coefficient>) -> Result<DegenerateOperator> {
    if w.dim() != grid.dim() {
        return Err(Error::Assembly("weight and grid dimensions differ".into()));
    }
    if let Some(Coefficient::Diagonal { values }) = coeff {
        if values.len() != grid.dim() {
            return Err(Error::Assembly("diagonal coefficient needs one entry per axis".into()));
        }
    }
    let n = grid.len();
    let h = grid.h();
    let vol = grid.cell_volume();
    let node_weights: Vec<f64> = grid.nodes().iter().map(|x| w.eval(x)).collect();
    if let Some(v) = node_weights.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Assembly(format!("weight is {v} at a node")));
    }
    let mass: Vec<f64> = node_weights.iter().map(|v| v * vol).collect();

    let scale = h.powi(grid.dim() as i32 - 2);
    let mut coo = CooMatrix::new(n, n);
    let mut face_weights = Vec::new();
    let (mut nu, mut big_m) = (f64::INFINITY, 0.0f64);
    for (i, j, axis, mid) in grid.faces() {
        let a = coeff.map_or(1.0, |c| c.eval(&mid, axis, grid.dim()));
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Assembly(format!(
                "coefficient {a} at {mid:?} violates ellipticity"
            )));
        }
        nu = nu.min(a);
        big_m = big_m.max(a);
        let mut wf = w.eval(&mid);
        if !(wf > 0.0 && wf.is_finite()) {
            // singular face: harmonic mean over the dual segment
            let (mut lo, mut hi) = (mid, mid);
            lo[axis] -= 0.5 * h;
            hi[axis] += 0.5 * h;
            wf = w.harmonic_segment_mean(&lo[..grid.dim()], &hi[..grid.dim()])?;
        }
        let c = a * wf;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Assembly(format!("non-positive face weight {c} at {mid:?}")));
        }
        face_weights.push(c);
        let c = c * scale;
        coo.push(i, i, c);
        if let Some(j) = j {
            coo.push(j, j, c);
            coo.push(i, j, -c);
            coo.push(j, i, -c);
        }
    }
    Ok(DegenerateOperator {
        grid: grid.clone(),
        weight: w.clone(),
        node_weights,
        mass,
        stiffness: CsrMatrix::from(&coo),
        face_weights,
        ellipticity: (nu, big_m),
    })
}

impl DegenerateOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weight(&self) -> &Weight {
        &self.weight
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn stiffness(&self) -> &CsrMatrix<f64> {
        &self.stiffness
    }

    pub fn face_weights(&self) -> &[f64] {
        &self.face_weights
    }

    /// `(ν, M)`: extreme coefficient values over the faces.
    pub fn ellipticity(&self) -> (f64, f64) {
        self.ellipticity
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::Grid(format!(
                "grid function has {} values, grid has {} nodes",
                u.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// `S u`.
    pub fn stiffness_apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check(u)?;
        let (offs, cols, vals) = self.stiffness.csr_data();
        Ok((0..self.len())
            .map(|i| (offs[i]..offs[i + 1]).map(|k| vals[k] * u[cols[k]]).sum())
            .collect())
    }

    /// `L u = S u / m`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut v = self.stiffness_apply(u)?;
        for (vi, mi) in v.iter_mut().zip(&self.mass) {
            *vi /= mi;
        }
        Ok(v)
    }

    /// `⟨u, v⟩_ω = Σ u v m`.
    pub fn weighted_inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check(u)?;
        self.check(v)?;
        Ok(u.iter().zip(v).zip(&self.mass).map(|((a, b), m)| a * b * m).sum())
    }

    /// `⟨Lu, u⟩_ω = uᵀ S u`.
    pub fn form(&self, u: &[f64]) -> Result<f64> {
        let su = self.stiffness_apply(u)?;
        Ok(su.iter().zip(u).map(|(a, b)| a * b).sum())
    }

    /// `|⟨Lu,v⟩ − ⟨u,Lv⟩| / (‖Lu‖‖v‖ + ‖u‖‖Lv‖)` in the weighted norm.
    pub fn self_adjoint_residual(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        let (lu, lv) = (self.apply(u)?, self.apply(v)?);
        let a = self.weighted_inner(&lu, v)?;
        let b = self.weighted_inner(u, &lv)?;
        let norm = |x: &[f64]| self.weighted_inner(x, x).map(f64::sqrt);
        let scale = norm(&lu)? * norm(v)? + norm(u)? * norm(&lv)?;
        Ok(if scale == 0.0 { 0.0 } else { (a - b).abs() / scale })
    }

    /// Dense `diag(m)^{-1/2} S diag(m)^{-1/2}`.
    pub fn symmetrized_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let d: Vec<f64> = self.mass.iter().map(|m| m.sqrt().recip()).collect();
        let mut a = DMatrix::zeros(n, n);
        for (i, j, v) in self.stiffness.triplet_iter() {
            a[(i, j)] = v * d[i] * d[j];
        }
        a
    }

    /// Solve `L u = f` by dense Cholesky of `S` (Dirichlet only).
    pub fn solve(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check(f)?;
        if self.grid.bc() == Boundary::Periodic {
            return Err(Error::Domain("periodic operator is singular".into()));
        }
        let n = self.len();
        let mut s = DMatrix::zeros(n, n);
        for (i, j, v) in self.stiffness.triplet_iter() {
            s[(i, j)] = *v;
        }
        let chol = s.cholesky().ok_or_else(|| Error::Domain("stiffness is not positive definite".into()))?;
        let rhs = DVector::from_iterator(n, f.iter().zip(&self.mass).map(|(a, m)| a * m));
        Ok(chol.solve(&rhs).iter().copied().collect())
    }

    /// Write `S` as a MatrixMarket coordinate file.
    pub fn export_matrix_market(&self, path: &Path) -> Result<()> {
        nalgebra_sparse::io::save_to_matrix_market_file(&self.stiffness, path)?;
        Ok(())
    }

    /// Write the diagonal mass matrix `diag(m)`, so that `L = M⁻¹ S` can be
    /// rebuilt from the two files.
    pub fn export_mass_matrix_market(&self, path: &Path) -> Result<()> {
        let n = self.len();
        let idx: Vec<usize> = (0..n).collect();
        let coo = nalgebra_sparse::CooMatrix::try_from_triplets(n, n, idx.clone(), idx, self.mass.clone())
            .map_err(|e| Error::Assembly(e.to_string()))?;
        nalgebra_sparse::io::save_to_matrix_market_file(&coo, path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn centre_face_is_exactly_singular() {
        // h = 1/12 is not a binary fraction, so naive midpoints miss zero
        for (beta, n) in [(-0.5, 24), (0.5, 24), (-0.5, 48)] {
            let g = Grid::new(1, 1.0, n, Boundary::Dirichlet).unwrap();
            let w = Weight::power(1, beta).unwrap();
            let op = assemble(&g, &w, None).unwrap();
            let h = g.h();
            let want = w.harmonic_segment_mean(&[-0.5 * h], &[0.5 * h]).unwrap();
            // node 0 also owns the left wall face
            let got = op.face_weights()[n / 2];
            assert!((got - want).abs() <= 1e-12 * want, "beta {beta}: {got} vs {want}");
        }
        // 1/|x|^{3/2} is not integrable across the face
        let g = Grid::new(1, 1.0, 24, Boundary::Dirichlet).unwrap();
        assert!(assemble(&g, &Weight::power(1, 1.5).unwrap(), None).is_err());
    }

    #[test]
    fn grid_examples() {
        let g = Grid::new(1, 1.0, 8, Boundary::Dirichlet).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.node(0)[0], -0.875);
        let g = Grid::new(2, 1.0, 16, Boundary::Dirichlet).unwrap();
        assert_eq!((g.len(), g.h()), (256, 0.125));
        assert!(Grid::new(1, 1.0, 9, Boundary::Dirichlet).is_err());
        assert!(Grid::new(3, 1.0, 8, Boundary::Dirichlet).is_err());
    }

    #[test]
    fn unweighted_dirichlet_is_the_classical_stencil() {
        let g = Grid::new(1, 1.0, 8, Boundary::Dirichlet).unwrap();
        let op = assemble(&g, &Weight::constant(1, 1.0).unwrap(), None).unwrap();
        let h = g.h();
        for (i, j, v) in op.stiffness().triplet_iter() {
            let expect = if i == j { 2.0 } else if i.abs_diff(j) == 1 { -1.0 } else { 0.0 };
            assert!((v * h - expect).abs() < 1e-14, "({i},{j}) {v}");
        }
    }

    #[test]
    fn periodic_constants_are_in_the_kernel() {
        for dim in [1, 2] {
            let g = Grid::new(dim, 1.0, 8, Boundary::Periodic).unwrap();
            let op = assemble(&g, &Weight::power(dim, 0.5).unwrap(), None).unwrap();
            let s1 = op.stiffness_apply(&vec![1.0; g.len()]).unwrap();
            assert!(s1.iter().all(|v| v.abs() < 1e-13));
        }
    }

    #[test]
    fn weighted_self_adjointness() {
        let g = Grid::new(1, 1.0, 64, Boundary::Dirichlet).unwrap();
        let op = assemble(&g, &Weight::power(1, 0.5).unwrap(), None).unwrap();
        let (u, v) = (sample(64, 1), sample(64, 2));
        assert!(op.self_adjoint_residual(&u, &v).unwrap() <= 1e-12);
    }

    #[test]
    fn coefficient_two_doubles_the_operator() {
        let g = Grid::new(2, 1.0, 8, Boundary::Dirichlet).unwrap();
        let w = Weight::constant(2, 1.0).unwrap();
        let a = assemble(&g, &w, None).unwrap();
        let b = assemble(&g, &w, Some(&Coefficient::Constant { value: 2.0 })).unwrap();
        let u = sample(g.len(), 3);
        let (la, lb) = (a.apply(&u).unwrap(), b.apply(&u).unwrap());
        assert!(la.iter().zip(&lb).all(|(x, y)| (2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0)));
        assert_eq!(b.ellipticity(), (2.0, 2.0));
    }

    #[test]
    fn bad_coefficient_is_rejected() {
        let g = Grid::new(1, 1.0, 8, Boundary::Dirichlet).unwrap();
        let w = Weight::constant(1, 1.0).unwrap();
        let c = Coefficient::Sinusoid { mean: 0.5, amp: 1.0, freq: 1.0 };
        assert!(assemble(&g, &w, Some(&c)).is_err());
    }

    #[test]
    fn total_mass() {
        let g = Grid::new(1, 1.0, 64, Boundary::Dirichlet).unwrap();
        let one = vec![1.0; 64];
        let op = assemble(&g, &Weight::constant(1, 1.0).unwrap(), None).unwrap();
        assert!((op.weighted_inner(&one, &one).unwrap() - 2.0).abs() < 1e-12);
        // midpoint-rule oracle for ∫|x|^{1/2} = 4/3; error O(h^{3/2})
        let op = assemble(&g, &Weight::power(1, 0.5).unwrap(), None).unwrap();
        let m = op.weighted_inner(&one, &one).unwrap();
        assert!((m - 4.0 / 3.0).abs() < 2.0 * g.h().powf(1.5), "{m}");
    }

    #[test]
    fn cholesky_solve_inverts() {
        let g = Grid::new(1, 1.0, 32, Boundary::Dirichlet).unwrap();
        let op = assemble(&g, &Weight::power(1, -0.5).unwrap(), None).unwrap();
        let f = sample(32, 4);
        let u = op.solve(&f).unwrap();
        let lu = op.apply(&u).unwrap();
        assert!(lu.iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn matrix_market_roundtrip() {
        let g = Grid::new(2, 1.0, 8, Boundary::Periodic).unwrap();
        let op = assemble(&g, &Weight::power(2, 0.5).unwrap(), None).unwrap();
        let dir = std::env::temp_dir().join(format!("wlab-mm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("s.mtx");
        op.export_matrix_market(&p).unwrap();
        let back: CooMatrix<f64> = nalgebra_sparse::io::load_coo_from_matrix_market_file(&p).unwrap();
        let back = CsrMatrix::from(&back);
        assert_eq!(back.nnz(), op.stiffness().nnz());
        let _ = std::fs::remove_dir_all(dir);
    }
}
