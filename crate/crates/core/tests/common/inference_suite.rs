//! Brute-force oracles for the mode solvers. Each check returns the first
//! violation it finds.

use minmin_core::inference::{
    coordinate_ascent, hungarian_min, mode_birkhoff, mode_pairwise, mode_permutahedron, mode_unary, pairwise_objective,
    ModeSolverConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rank vector where item `i` gets rank `perm[i] + 1`.
pub fn rank_vector(perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&p| (p + 1) as f64).collect()
}

pub fn perm_matrix(perm: &[usize]) -> Vec<f64> {
    let k = perm.len();
    let mut m = vec![0.0; k * k];
    for (i, &j) in perm.iter().enumerate() {
        m[i * k + j] = 1.0;
    }
    m
}

/// `-A Aᵀ` for a random `k x rank` factor.
pub fn random_nsd<R: Rng>(k: usize, rank: usize, rng: &mut R) -> Vec<f64> {
    let a = random_vec(k * rank, rng);
    let mut u = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            u[i * k + j] = -(0..rank).map(|c| a[i * rank + c] * a[j * rank + c]).sum::<f64>();
        }
    }
    u
}

fn best_vertex(theta: &[f64], vertices: impl Iterator<Item = Vec<f64>>) -> Vec<f64> {
    vertices.max_by(|a, b| dot(theta, a).total_cmp(&dot(theta, b))).unwrap()
}

pub fn permutahedron_vs_brute_force(seed: u64, trials: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let k = rng.gen_range(1..=6);
        let theta = random_vec(k, &mut rng);
        let best = best_vertex(&theta, permutations(k).iter().map(|p| rank_vector(p)));
        let got = mode_permutahedron(&theta).0;
        if got != best {
            return Err(format!("theta {theta:?}: got {got:?}, brute force {best:?}"));
        }
    }
    Ok(())
}

pub fn birkhoff_vs_brute_force(seed: u64, trials: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let k = rng.gen_range(1..=6);
        let theta = random_vec(k * k, &mut rng);
        let best = best_vertex(&theta, permutations(k).iter().map(|p| perm_matrix(p)));
        let got = mode_birkhoff(&theta, k).map_err(|e| e.to_string())?.0;
        if got != best {
            return Err(format!("k={k}: got {got:?}, brute force {best:?}"));
        }
    }
    Ok(())
}

/// Integer costs make every total exactly representable.
pub fn hungarian_exact_on_integer_costs(seed: u64, trials: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let n = rng.gen_range(1..=6);
        let cost: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-20i32..=20) as f64).collect();
        let brute = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let (assign, total) = hungarian_min(&cost, n);
        if total != brute {
            return Err(format!("cost {cost:?}: {total} vs brute force {brute}"));
        }
        let recomputed: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
        let mut seen = assign.clone();
        seen.sort_unstable();
        if recomputed != total || seen != (0..n).collect::<Vec<_>>() {
            return Err(format!("assignment {assign:?} inconsistent with total {total}"));
        }
    }
    Ok(())
}

pub fn coordinate_ascent_monotone(seed: u64, trials: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModeSolverConfig::default();
    for _ in 0..trials {
        let k = rng.gen_range(1..=8);
        let u = random_vec(k, &mut rng);
        let rank = rng.gen_range(1..=k);
        let big_u = random_nsd(k, rank, &mut rng);
        let mut mu: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
        let mut values = vec![pairwise_objective(&u, &big_u, &mu)];
        coordinate_ascent(&u, &big_u, &mut mu, &cfg, |v| values.push(v));
        if let Some(w) = values.windows(2).find(|w| w[1] < w[0] - 1e-12) {
            return Err(format!("objective fell from {} to {}", w[0], w[1]));
        }
        let tracked = *values.last().unwrap();
        if (tracked - pairwise_objective(&u, &big_u, &mu)).abs() >= 1e-9 {
            return Err("tracked objective drifted from the recomputed one".into());
        }
        if !mu.iter().all(|m| (0.0..=1.0).contains(m)) {
            return Err(format!("iterate left the box: {mu:?}"));
        }
    }
    Ok(())
}

pub fn zero_interactions_reduce_to_unary(seed: u64, trials: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModeSolverConfig::default();
    for _ in 0..trials {
        let k = rng.gen_range(1..=10);
        let mut u = random_vec(k, &mut rng);
        if k > 2 {
            u[1] = 0.0;
        }
        let (mu, y) = mode_pairwise(&u, &vec![0.0; k * k], &cfg).map_err(|e| e.to_string())?;
        let expected = mode_unary(&u);
        if y != expected || mu != expected.0 {
            return Err(format!("u {u:?}: got {y:?}, unary mode {expected:?}"));
        }
    }
    Ok(())
}
