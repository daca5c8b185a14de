//! Deterministic test functions.
//!
//! Members are defined physically (side lengths and widths in units of the
//! base extent, random signs on a fixed cell grid) so that the same member
//! can be sampled on every grid of a refinement ladder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::SpectralDecomposition;
use crate::lattice::Grid;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    /// Cube sides as fractions of the base extent.
    pub sides: Vec<f64>,
    /// Also place each cube with one corner at the origin, `[0, side]ⁿ`.
    pub corner: bool,
    /// Cube centres along the diagonal, as fractions of the base extent.
    pub offsets: Vec<f64>,
    /// Widest Gaussian bump, as a fraction of the base extent.
    pub bump_width: f64,
    /// Bumps on the width ladder `w · 2^{-k/4}`.
    pub bump_levels: usize,
    /// Bump centres along the diagonal, as fractions of the base extent.
    pub bump_centres: Vec<f64>,
    pub random: usize,
    /// Cells per axis of the random sign pattern over `[-X, X]ⁿ`.
    pub random_cells: usize,
    /// Single low eigenfunctions.
    pub eigen: usize,
    /// Random combinations of the first `eigen` eigenfunctions.
    pub eigen_combos: usize,
    /// Keep only nonnegative members.
    pub nonnegative: bool,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            sides: vec![0.5, 0.25, 0.125, 0.0625],
            corner: true,
            offsets: vec![0.0, 0.3],
            bump_width: 0.2,
            bump_levels: 8,
            bump_centres: vec![0.0, 0.25],
            random: 40,
            random_cells: 16,
            eigen: 8,
            eigen_combos: 24,
            nonnegative: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub name: String,
    pub values: Vec<f64>,
}

/// Sample the corpus on `grid`. `base_extent` fixes the physical scale and
/// `dec` supplies eigenfunctions.
pub fn build_corpus(
    spec: &CorpusSpec,
    grid: &Grid,
    base_extent: f64,
    dec: Option<&SpectralDecomposition>,
    seed: u64,
) -> Result<Vec<Member>> {
    let nodes = grid.nodes();
    let dim = grid.dim();
    let x0 = base_extent;
    let mut out = Vec::new();

    for &s in &spec.sides {
        let side = s * x0;
        let corner = spec.corner.then_some((0.0, format!("cube[corner,{s}]")));
        let centred = spec.offsets.iter().map(|o| (o * x0 - 0.5 * side, format!("cube[{o},{s}]")));
        for (lo, name) in corner.into_iter().chain(centred) {
            let values = nodes
                .iter()
                .map(|x| {
                    let inside = x[..dim].iter().all(|v| *v >= lo && *v < lo + side);
                    if inside {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            out.push(Member { name, values });
        }
    }

    for &c in &spec.bump_centres {
        for k in 0..spec.bump_levels {
            let w = spec.bump_width * x0 * 2f64.powf(-(k as f64) / 4.0);
            let values = nodes
                .iter()
                .map(|x| {
                    let r2: f64 = x[..dim].iter().map(|v| (v - c * x0).powi(2)).sum();
                    (-0.5 * r2 / (w * w)).exp()
                })
                .collect();
            out.push(Member { name: format!("bump[{c},{k}]"), values });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = spec.random_cells.max(1);
    for r in 0..spec.random {
        let signs: Vec<f64> = (0..cells.pow(dim as u32))
            .map(|_| if spec.nonnegative || rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        // nonnegative corpora use random {0, 1} patterns instead
        let keep: Vec<bool> = (0..signs.len()).map(|_| !spec.nonnegative || rng.random_bool(0.5)).collect();
        let cell = |v: f64| (((v + x0) / (2.0 * x0) * cells as f64).floor().max(0.0) as usize).min(cells - 1);
        let values = nodes
            .iter()
            .map(|x| {
                if x[..dim].iter().any(|v| v.abs() > x0) {
                    return 0.0;
                }
                let k = x[..dim].iter().fold(0, |acc, v| acc * cells + cell(*v));
                if keep[k] {
                    signs[k]
                } else {
                    0.0
                }
            })
            .collect();
        out.push(Member { name: format!("random[{r}]"), values });
    }

    if spec.eigen > 0 {
        let dec = dec.ok_or_else(|| Error::Config("eigenfunction members need a decomposition".into()))?;
        // generic smooth reference fixing the sign of each eigenfunction
        let reference: Vec<f64> = nodes
            .iter()
            .map(|x| 1.0 + 0.37 * x[0] / x0 + 0.21 * x[1] / x0 + 0.13 * (x[0] * x[1]) / (x0 * x0))
            .collect();
        let mass = dec.mass();
        let eig: Vec<Vec<f64>> = (0..spec.eigen.min(dec.len()))
            .map(|k| {
                let mut v = dec.eigenfunction(k);
                let s: f64 = v.iter().zip(&reference).zip(&mass).map(|((a, b), m)| a * b * m).sum();
                if s < 0.0 {
                    v.iter_mut().for_each(|a| *a = -*a);
                }
                v
            })
            .collect();
        if !spec.nonnegative {
            for (k, v) in eig.iter().enumerate() {
                out.push(Member { name: format!("eigen[{k}]"), values: v.clone() });
            }
            for c in 0..spec.eigen_combos {
                let coef: Vec<f64> = (0..eig.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut values = vec![0.0; nodes.len()];
                for (a, v) in coef.iter().zip(&eig) {
                    for (o, x) in values.iter_mut().zip(v) {
                        *o += a * x;
                    }
                }
                out.push(Member { name: format!("eigen_combo[{c}]"), values });
            }
        } else if let Some(v) = eig.first() {
            out.push(Member { name: "eigen[0]".into(), values: v.iter().map(|a| a.abs()).collect() });
        }
    }

    out.retain(|m| m.values.iter().any(|v| *v != 0.0));
    if out.is_empty() {
        return Err(Error::Config("test corpus is empty on this grid".into()));
    }
    Ok(out)
}
