//! Mode prediction and relaxed maximisation over each output space.
//!
//! | space                | mode solver                         |
//! |----------------------|-------------------------------------|
//! | binary, bilinear     | threshold `θ_j >= 0`                |
//! | binary, pairwise     | coordinate ascent on `[0,1]^k`      |
//! | rank vectors         | argsort (rearrangement inequality)  |
//! | permutation matrices | Hungarian algorithm                 |
//!
//! The quadratically regularised maximisers used by the generalised
//! Fenchel-Young baseline are Euclidean projections onto the same polytopes.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::energy::{CouplingKind, EnergyModel};
use crate::nets::sigmoid;
use crate::spaces::{SpaceKind, StructuredOutput};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSolverConfig {
    pub max_sweeps: usize,
    pub tol: f64,
    pub rounding_threshold: f64,
}

impl Default for ModeSolverConfig {
    fn default() -> Self {
        ModeSolverConfig {
            max_sweeps: 100,
            tol: 1e-9,
            rounding_threshold: 0.5,
        }
    }
}

impl ModeSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 || !(self.tol >= 0.0) || !(self.rounding_threshold > 0.0 && self.rounding_threshold < 1.0) {
            return Err(Error::Config(format!("invalid mode solver config {self:?}")));
        }
        Ok(())
    }
}

/// `y_j = 1` iff `θ_j >= 0`.
pub fn mode_unary(theta: &[f64]) -> StructuredOutput {
    StructuredOutput(theta.iter().map(|&t| if t >= 0.0 { 1.0 } else { 0.0 }).collect())
}

/// Per-label marginals of the unary model, `sigmoid(θ_j)`.
pub fn marginals_unary(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|&t| sigmoid(t)).collect()
}

/// Check that `U` (row-major `k×k`) is symmetric and `-U` is positive
/// semidefinite, both to within `1e-8`.
pub fn check_nsd(big_u: &[f64], k: usize) -> Result<()> {
    if big_u.len() != k * k {
        return Err(Error::DimensionMismatch {
            expected: k * k,
            got: big_u.len(),
        });
    }
    let tol = 1e-8;
    for i in 0..k {
        for j in 0..i {
            if (big_u[i * k + j] - big_u[j * k + i]).abs() > tol {
                return Err(Error::NotNsd(format!("U[{i},{j}] != U[{j},{i}]")));
            }
        }
    }
    let m = DMatrix::from_row_slice(k, k, big_u);
    let sym = (&m + m.transpose()) * 0.5;
    let max_eig = SymmetricEigen::new(sym).eigenvalues.max();
    if max_eig > tol {
        return Err(Error::NotNsd(format!("largest eigenvalue {max_eig:e}")));
    }
    Ok(())
}

/// `⟨u, μ⟩ + ½ μᵀ U μ`.
pub fn pairwise_objective(u: &[f64], big_u: &[f64], mu: &[f64]) -> f64 {
    let k = u.len();
    let mut quad = 0.0;
    for i in 0..k {
        let row = &big_u[i * k..(i + 1) * k];
        quad += mu[i] * row.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>();
    }
    u.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>() + 0.5 * quad
}

/// Cyclic coordinate ascent for `max_{μ ∈ [0,1]^k} ⟨u, μ⟩ + ½ μᵀ U μ`,
/// starting from `mu`. `observe` receives the objective after every
/// single-coordinate update. Returns the number of sweeps run.
pub fn coordinate_ascent(
    u: &[f64],
    big_u: &[f64],
    mu: &mut [f64],
    cfg: &ModeSolverConfig,
    mut observe: impl FnMut(f64),
) -> usize {
    let k = u.len();
    let mut value = pairwise_objective(u, big_u, mu);
    for sweep in 1..=cfg.max_sweeps {
        let start = value;
        for j in 0..k {
            let row = &big_u[j * k..(j + 1) * k];
            let diag = row[j];
            let slope = u[j] + row.iter().zip(mu.iter()).enumerate().filter(|&(i, _)| i != j).map(|(_, (a, b))| a * b).sum::<f64>();
            let old = mu[j];
            let new = if diag < 0.0 {
                (slope / -diag).clamp(0.0, 1.0)
            } else if slope >= 0.0 {
                1.0
            } else {
                0.0
            };
            if new != old {
                let d = new - old;
                // Φ changes by d·(slope + diag·old) + ½ diag d²
                value += d * (slope + diag * old) + 0.5 * diag * d * d;
                mu[j] = new;
            }
            observe(value);
        }
        if value - start < cfg.tol {
            return sweep;
        }
    }
    cfg.max_sweeps
}

/// Relaxed pairwise mode and its rounding.
pub fn mode_pairwise(u: &[f64], big_u: &[f64], cfg: &ModeSolverConfig) -> Result<(Vec<f64>, StructuredOutput)> {
    cfg.validate()?;
    check_nsd(big_u, u.len())?;
    let mut mu = marginals_unary(u);
    coordinate_ascent(u, big_u, &mut mu, cfg, |_| {});
    let y = mu.iter().map(|&m| if m >= cfg.rounding_threshold { 1.0 } else { 0.0 }).collect();
    Ok((mu, StructuredOutput(y)))
}

/// Rank `k` for the largest score down to rank 1 for the smallest; among
/// equal scores the lower index gets the higher rank.
pub fn mode_permutahedron(theta: &[f64]) -> StructuredOutput {
    let k = theta.len();
    let order = argsort_desc(theta);
    let mut y = vec![0.0; k];
    for (pos, &j) in order.iter().enumerate() {
        y[j] = (k - pos) as f64;
    }
    StructuredOutput(y)
}

// Indices by decreasing value, stable in index.
fn argsort_desc(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// Minimum-cost perfect assignment on a square row-major cost matrix.
/// Returns `assignment[row] = col` and the total cost.
pub fn hungarian_min(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return (vec![], 0.0);
    }
    // Shortest augmenting paths with row/column potentials; 1-based with a
    // virtual column 0.
    let inf = f64::INFINITY;
    let mut pot_row = vec![0.0; n + 1];
    let mut pot_col = vec![0.0; n + 1];
    let mut match_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        match_col[0] = row;
        let mut col0 = 0;
        let mut min_v = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = match_col[col0];
            let mut delta = inf;
            let mut col1 = 0;
            for c in 1..=n {
                if !used[c] {
                    let cur = cost[(r0 - 1) * n + (c - 1)] - pot_row[r0] - pot_col[c];
                    if cur < min_v[c] {
                        min_v[c] = cur;
                        way[c] = col0;
                    }
                    if min_v[c] < delta {
                        delta = min_v[c];
                        col1 = c;
                    }
                }
            }
            for c in 0..=n {
                if used[c] {
                    pot_row[match_col[c]] += delta;
                    pot_col[c] -= delta;
                } else {
                    min_v[c] -= delta;
                }
            }
            col0 = col1;
            if match_col[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            match_col[col0] = match_col[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for c in 1..=n {
        assignment[match_col[c] - 1] = c - 1;
    }
    let total = assignment.iter().enumerate().map(|(r, &c)| cost[r * n + c]).sum();
    (assignment, total)
}

/// Permutation matrix maximising `⟨θ, P⟩`, `θ` row-major `k×k`.
pub fn mode_birkhoff(theta: &[f64], k: usize) -> Result<StructuredOutput> {
    if theta.len() != k * k {
        return Err(Error::DimensionMismatch {
            expected: k * k,
            got: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure("non-finite profit matrix".into()));
    }
    let cost: Vec<f64> = theta.iter().map(|&t| -t).collect();
    let (assignment, _) = hungarian_min(&cost, k);
    let mut p = vec![0.0; k * k];
    for (r, c) in assignment.into_iter().enumerate() {
        p[r * k + c] = 1.0;
    }
    Ok(StructuredOutput(p))
}

/// Euclidean projection onto the permutahedron of `(1, ..., k)`.
pub fn project_permutahedron(z: &[f64]) -> Vec<f64> {
    let k = z.len();
    let order = argsort_desc(z);
    // Fit a non-increasing sequence to s - w, w = (k, ..., 1), by pooling
    // adjacent violators; the projection is s - fit.
    let target: Vec<f64> = order.iter().enumerate().map(|(pos, &j)| z[j] - (k - pos) as f64).collect();
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(k); // (sum, count)
    for &t in &target {
        blocks.push((t, 1));
        while blocks.len() > 1 {
            let (s2, c2) = blocks[blocks.len() - 1];
            let (s1, c1) = blocks[blocks.len() - 2];
            if s1 / c1 as f64 >= s2 / c2 as f64 {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().expect("two blocks");
            *last = (s1 + s2, c1 + c2);
        }
    }
    let mut out = vec![0.0; k];
    let mut pos = 0;
    for (sum, count) in blocks {
        let mean = sum / count as f64;
        for _ in 0..count {
            let j = order[pos];
            out[j] = z[j] - mean;
            pos += 1;
        }
    }
    out
}

/// Euclidean projection onto the Birkhoff polytope by Dykstra's alternating
/// projections (row sums, column sums, nonnegativity).
pub fn project_birkhoff(z: &[f64], k: usize, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if z.len() != k * k {
        return Err(Error::DimensionMismatch {
            expected: k * k,
            got: z.len(),
        });
    }
    let n = k * k;
    let mut x = z.to_vec();
    let mut inc = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut y = vec![0.0; n];
    for _ in 0..max_iter {
        let before = x.clone();
        for (set, p) in inc.iter_mut().enumerate() {
            for i in 0..n {
                y[i] = x[i] + p[i];
            }
            match set {
                0 => {
                    for r in 0..k {
                        let row = &mut y[r * k..(r + 1) * k];
                        let shift = (row.iter().sum::<f64>() - 1.0) / k as f64;
                        row.iter_mut().for_each(|v| *v -= shift);
                    }
                }
                1 => {
                    for c in 0..k {
                        let shift = ((0..k).map(|r| y[r * k + c]).sum::<f64>() - 1.0) / k as f64;
                        (0..k).for_each(|r| y[r * k + c] -= shift);
                    }
                }
                _ => y.iter_mut().for_each(|v| *v = v.max(0.0)),
            }
            for i in 0..n {
                p[i] = x[i] + p[i] - y[i];
                x[i] = y[i];
            }
        }
        let moved = x.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let row_err = (0..k)
            .map(|r| (x[r * k..(r + 1) * k].iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        if moved < tol && row_err < tol {
            return Ok(x);
        }
    }
    Err(Error::SolverFailure(format!("Birkhoff projection did not converge in {max_iter} iterations")))
}

/// `argmax_{μ ∈ conv(Y)} Φ(θ, μ) - ω‖μ‖²/2` for the model's coupling and space.
///
/// With `ω = 0` the maximiser is a vertex (the mode, or the relaxed pairwise
/// solution); with `ω > 0` it is unique.
pub fn regularized_argmax(model: &EnergyModel, theta: &[f64], omega: f64, cfg: &ModeSolverConfig) -> Result<Vec<f64>> {
    if omega < 0.0 || !omega.is_finite() {
        return Err(Error::Config(format!("regularisation weight must be >= 0, got {omega}")));
    }
    let space = model.space;
    match (model.coupling.kind, space.kind) {
        (CouplingKind::Bilinear, SpaceKind::BinaryVectors) => Ok(if omega == 0.0 {
            mode_unary(theta).0
        } else {
            theta.iter().map(|&t| (t / omega).clamp(0.0, 1.0)).collect()
        }),
        (CouplingKind::LinearQuadratic, _) => {
            let (u, mut big_u) = model.coupling.unary_and_interactions(theta)?;
            let k = u.len();
            for j in 0..k {
                big_u[j * k + j] -= omega;
            }
            let mut mu = marginals_unary(&u);
            let tight = ModeSolverConfig {
                max_sweeps: cfg.max_sweeps.max(10_000),
                tol: cfg.tol.min(1e-15),
                ..*cfg
            };
            coordinate_ascent(&u, &big_u, &mut mu, &tight, |_| {});
            Ok(mu)
        }
        (CouplingKind::Bilinear, SpaceKind::PermutationVectors) => Ok(if omega == 0.0 {
            mode_permutahedron(theta).0
        } else {
            let z: Vec<f64> = theta.iter().map(|t| t / omega).collect();
            project_permutahedron(&z)
        }),
        (CouplingKind::Bilinear, SpaceKind::PermutationMatrices) => {
            if omega == 0.0 {
                Ok(mode_birkhoff(theta, space.k)?.0)
            } else {
                let z: Vec<f64> = theta.iter().map(|t| t / omega).collect();
                project_birkhoff(&z, space.k, 1e-13, 200_000)
            }
        }
    }
}

/// Predicted structured output for input `x`.
pub fn predict(model: &EnergyModel, x: &[f64], cfg: &ModeSolverConfig) -> Result<StructuredOutput> {
    let (theta, _) = model.logits(x)?;
    predict_from_logits(model, &theta, cfg)
}

pub fn predict_from_logits(model: &EnergyModel, theta: &[f64], cfg: &ModeSolverConfig) -> Result<StructuredOutput> {
    match (model.coupling.kind, model.space.kind) {
        (CouplingKind::Bilinear, SpaceKind::BinaryVectors) => Ok(mode_unary(theta)),
        (CouplingKind::LinearQuadratic, _) => {
            let (u, big_u) = model.coupling.unary_and_interactions(theta)?;
            Ok(mode_pairwise(&u, &big_u, cfg)?.1)
        }
        (CouplingKind::Bilinear, SpaceKind::PermutationVectors) => Ok(mode_permutahedron(theta)),
        (CouplingKind::Bilinear, SpaceKind::PermutationMatrices) => mode_birkhoff(theta, model.space.k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unary_examples() {
        assert_eq!(mode_unary(&[0.5, -0.5]).0, vec![1.0, 0.0]);
        assert_eq!(mode_unary(&[0.0, 0.0, 0.0]).0, vec![1.0; 3]);
        assert_eq!(marginals_unary(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(marginals_unary(&[800.0])[0], 1.0);
    }

    #[test]
    fn pairwise_identity_interaction() {
        let (mu, y) = mode_pairwise(&[1.0, 1.0], &[-1.0, 0.0, 0.0, -1.0], &ModeSolverConfig::default()).unwrap();
        assert_eq!(mu, vec![1.0, 1.0]);
        assert_eq!(y.0, vec![1.0, 1.0]);
    }

    #[test]
    fn pairwise_rejects_non_nsd() {
        let cfg = ModeSolverConfig::default();
        assert!(matches!(mode_pairwise(&[0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], &cfg), Err(Error::NotNsd(_))));
        assert!(matches!(mode_pairwise(&[0.0, 0.0], &[-1.0, 0.5, 0.0, -1.0], &cfg), Err(Error::NotNsd(_))));
    }

    #[test]
    fn permutahedron_examples() {
        assert_eq!(mode_permutahedron(&[0.3, -1.2, 2.0]).0, vec![2.0, 1.0, 3.0]);
        assert_eq!(mode_permutahedron(&[1.0; 4]).0, vec![4.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn birkhoff_examples() {
        let p = mode_birkhoff(&[1.0, 2.0, 3.0, 1.0], 2).unwrap();
        assert_eq!(p.0, vec![0.0, 1.0, 1.0, 0.0]);
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(mode_birkhoff(&eye, 3).unwrap().0, eye.to_vec());
        assert!(mode_birkhoff(&[f64::NAN, 0.0, 0.0, 0.0], 2).is_err());
    }

    #[test]
    fn permutahedron_projection_of_vertex_is_identity() {
        let z = [3.0, 1.0, 4.0, 2.0];
        assert_eq!(project_permutahedron(&z), z.to_vec());
        // Constant input projects to the barycentre.
        let c = project_permutahedron(&[0.0; 3]);
        assert!(c.iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn birkhoff_projection_of_vertex_is_identity() {
        let z = [0.0, 1.0, 1.0, 0.0];
        let p = project_birkhoff(&z, 2, 1e-13, 10_000).unwrap();
        for (a, b) in p.iter().zip(z) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
