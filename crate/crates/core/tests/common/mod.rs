//! Finite-difference oracle and random fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod gradient_suite;
pub mod inference_suite;

use minmin_core::energy::{Coupling, CouplingKind, EnergyModel};
use minmin_core::losses::Batch;
use minmin_core::nets::{Activation, Net, NetSpec, ParamVector};
use minmin_core::spaces::{OutputSpace, SpaceKind};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;

/// Norm-wise relative error `‖a - b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` around `v`.
pub fn fd_grad_vec(v: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut q = v.to_vec();
    (0..v.len())
        .map(|i| {
            let orig = q[i];
            q[i] = orig + FD_STEP;
            let up = f(&q);
            q[i] = orig - FD_STEP;
            let down = f(&q);
            q[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Central differences of `f` around the parameters `p`.
pub fn fd_grad(p: &ParamVector, mut f: impl FnMut(&ParamVector) -> f64) -> Vec<f64> {
    let mut q = p.clone();
    fd_grad_vec(&p.values, |v| {
        q.values.copy_from_slice(v);
        f(&q)
    })
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn randomize<R: Rng + ?Sized>(p: &mut ParamVector, scale: f64, rng: &mut R) {
    for v in &mut p.values {
        *v = scale * normal(rng);
    }
}

pub fn random_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Every non-table architecture, for `d` inputs and `out` outputs.
pub fn feature_net_specs(d: usize, out: usize) -> Vec<NetSpec> {
    vec![
        NetSpec::linear(d, out),
        NetSpec::mlp(d, vec![6], out, Activation::Relu),
        NetSpec::mlp(d, vec![5, 4], out, Activation::Softplus),
        NetSpec::resnet(d, 5, 2, out, Activation::Relu),
        NetSpec::icnn(d, vec![5, 4], out),
    ]
}

/// A net of `spec` with random parameters (ICNN kept convex).
pub fn random_net<R: Rng + ?Sized>(spec: NetSpec, scale: f64, rng: &mut R) -> Net {
    let mut net = Net::init(spec, rng).unwrap();
    randomize(&mut net.params, scale, rng);
    if net.spec.kind == minmin_core::nets::NetKind::Icnn {
        minmin_core::nets::project_icnn_in_place(&net.spec, &mut net.params).unwrap();
    }
    net
}

pub fn coupling_for(space: &OutputSpace, kind: CouplingKind, rank: usize) -> Coupling {
    match kind {
        CouplingKind::Bilinear => Coupling::bilinear(space),
        CouplingKind::LinearQuadratic => Coupling::linear_quadratic(space.k, rank),
    }
}

pub fn random_model<R: Rng + ?Sized>(space: OutputSpace, coupling: Coupling, h_spec: NetSpec, scale: f64, rng: &mut R) -> EnergyModel {
    let h = random_net(h_spec, scale, rng);
    EnergyModel::new(space, coupling, h).unwrap()
}

/// Owned examples a `Batch` can borrow from.
#[derive(Clone, Debug)]
pub struct Examples {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

impl Examples {
    pub fn random<R: Rng + ?Sized>(space: &OutputSpace, d: usize, n: usize, rng: &mut R) -> Self {
        Examples {
            xs: (0..n).map(|_| random_vec(d, rng)).collect(),
            ys: (0..n).map(|_| space.sample_uniform(rng).0).collect(),
        }
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch::new(
            self.xs.iter().map(Vec::as_slice).collect(),
            self.ys.iter().map(Vec::as_slice).collect(),
            (0..self.xs.len()).collect(),
        )
        .unwrap()
    }
}

/// Small instances of every (space, coupling) pair the losses support.
pub fn small_settings() -> Vec<(OutputSpace, Coupling)> {
    let b = OutputSpace::binary(3);
    let p = OutputSpace::permutations(3);
    let m = OutputSpace::permutation_matrices(3);
    vec![
        (b, Coupling::bilinear(&b)),
        (b, Coupling::linear_quadratic(3, 2)),
        (p, Coupling::bilinear(&p)),
        (m, Coupling::bilinear(&m)),
    ]
}

pub fn space_label(s: &OutputSpace, c: &Coupling) -> String {
    let kind = match s.kind {
        SpaceKind::BinaryVectors => "binary",
        SpaceKind::PermutationVectors => "perm_vectors",
        SpaceKind::PermutationMatrices => "perm_matrices",
    };
    format!("{kind}(k={})/{:?}", s.k, c.kind)
}

/// All permutations of `0..k` (Heap's algorithm).
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn heap(n: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..n - 1 {
            heap(n - 1, a, out);
            if n % 2 == 0 {
                a.swap(i, n - 1);
            } else {
                a.swap(0, n - 1);
            }
        }
        heap(n - 1, a, out);
    }
    let mut a: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    heap(k, &mut a, &mut out);
    out
}

/// Every encoded element of `space`, enumerated independently of the library.
pub fn brute_force_elements(space: &OutputSpace) -> Vec<Vec<f64>> {
    let k = space.k;
    match space.kind {
        SpaceKind::BinaryVectors => (0..1u64 << k)
            .map(|bits| (0..k).map(|j| ((bits >> j) & 1) as f64).collect())
            .collect(),
        SpaceKind::PermutationVectors => permutations(k)
            .iter()
            .map(|p| p.iter().map(|&r| (r + 1) as f64).collect())
            .collect(),
        SpaceKind::PermutationMatrices => permutations(k)
            .iter()
            .map(|p| {
                let mut m = vec![0.0; k * k];
                for (i, &j) in p.iter().enumerate() {
                    m[i * k + j] = 1.0;
                }
                m
            })
            .collect(),
    }
}

/// `log mean_y exp Φ(θ, y)` by brute force.
pub fn brute_force_lse(coupling: &Coupling, space: &OutputSpace, theta: &[f64]) -> f64 {
    let e: Vec<f64> = brute_force_elements(space)
        .iter()
        .map(|y| coupling.phi(theta, y).unwrap())
        .collect();
    let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + (e.iter().map(|v| (v - m).exp()).sum::<f64>() / e.len() as f64).ln()
}
