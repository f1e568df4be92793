mod common;

use common::*;
use minmin_core::energy::{Coupling, EnergyModel};
use minmin_core::losses::{
    exact_mle_objective, exact_objective, minmin_objective, recovered_density, tau_optimal_per_example,
    unary_log_partition, FGenerator, PriorSampling, DEFAULT_ENUMERATION_CAP,
};
use minmin_core::nets::{Net, NetSpec, ParamVector};
use minmin_core::spaces::OutputSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAP: u64 = DEFAULT_ENUMERATION_CAP;

fn table_with(values: Vec<f64>) -> Net {
    let spec = NetSpec::table(values.len());
    let p = ParamVector::from_values(&spec, values).unwrap();
    Net::new(spec, p).unwrap()
}

#[test]
fn unary_closed_form_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let space = OutputSpace::binary(6);
    let c = Coupling::bilinear(&space);
    for _ in 0..50 {
        let theta: Vec<f64> = random_vec(6, &mut rng).iter().map(|t| 3.0 * t).collect();
        let lse = unary_log_partition(&theta);
        assert!((lse - brute_force_lse(&c, &space, &theta)).abs() < 1e-12);
    }
    // softplus(1) + softplus(-1) = 1 + 2 ln(1 + e^-1)
    let two = 1.0 + 2.0 * (1.0 + (-1.0f64).exp()).ln() - 2.0 * std::f64::consts::LN_2;
    assert!((unary_log_partition(&[1.0, -1.0]) - two).abs() < 1e-14);
}

#[test]
fn exact_mle_matches_brute_force_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (space, coupling) in small_settings() {
        let g = random_model(space, coupling, NetSpec::linear(3, coupling.theta_dim(&space)), 0.8, &mut rng);
        let ex = Examples::random(&space, 3, 4, &mut rng);
        let value = exact_mle_objective(&g, &ex.batch(), CAP).unwrap().value;
        let oracle: f64 = ex
            .xs
            .iter()
            .zip(&ex.ys)
            .map(|(x, y)| {
                let (theta, _) = g.logits(x).unwrap();
                brute_force_lse(&coupling, &space, &theta) - coupling.phi(&theta, y).unwrap()
            })
            .sum::<f64>()
            / 4.0;
        assert!((value - oracle).abs() < 1e-10, "{}", space_label(&space, &coupling));
    }
}

#[test]
fn exhaustive_sampling_equals_exact_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for space in [OutputSpace::binary(4), OutputSpace::permutations(4)] {
        let coupling = Coupling::bilinear(&space);
        for _ in 0..20 {
            let g = random_model(space, coupling, NetSpec::mlp(3, vec![5], space.k, Default::default()), 0.4, &mut rng);
            let ex = Examples::random(&space, 3, 5, &mut rng);
            let tau = random_net(NetSpec::table(5), 1.0, &mut rng);
            for f in [FGenerator::Kl, FGenerator::ChiSquare] {
                let a = minmin_objective(&g, &tau, f, &ex.batch(), PriorSampling::Exhaustive, &mut rng).unwrap();
                let b = exact_objective(&g, &tau, f, &ex.batch(), CAP).unwrap();
                assert!((a.value - b.value).abs() <= 1e-10 * b.value.abs().max(1.0), "{} {:?}: {} vs {}", space_label(&space, &coupling), f, a.value, b.value);
                let dg = a.grad_g.values.iter().zip(&b.grad_g.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                let gs = b.grad_g.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                assert!(dg <= 1e-10 * gs);
            }
        }
    }
}

#[test]
fn sampled_objective_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let space = OutputSpace::binary(4);
    let g = random_model(space, Coupling::bilinear(&space), NetSpec::linear(2, 4), 0.7, &mut rng);
    let ex = Examples::random(&space, 2, 1, &mut rng);
    let tau = table_with(vec![0.3]);
    let exact = exact_objective(&g, &tau, FGenerator::Kl, &ex.batch(), CAP).unwrap().value;
    let reps = 4000;
    let draws: Vec<f64> = (0..reps)
        .map(|_| minmin_objective(&g, &tau, FGenerator::Kl, &ex.batch(), PriorSampling::Sampled(4), &mut rng).unwrap().value)
        .collect();
    let mean = draws.iter().sum::<f64>() / reps as f64;
    let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    assert!((mean - exact).abs() < 4.0 * sd / (reps as f64).sqrt(), "{mean} vs {exact}");
}

#[test]
fn kl_optimal_tau_is_the_log_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (space, coupling) in small_settings() {
        let g = random_model(space, coupling, NetSpec::linear(3, coupling.theta_dim(&space)), 0.8, &mut rng);
        let ex = Examples::random(&space, 3, 3, &mut rng);
        let lses: Vec<f64> = ex
            .xs
            .iter()
            .map(|x| brute_force_lse(&coupling, &space, &g.logits(x).unwrap().0))
            .collect();
        for (x, &l) in ex.xs.iter().zip(&lses) {
            assert!((tau_optimal_per_example(&g, x, FGenerator::Kl, CAP).unwrap() - l).abs() < 1e-10);
        }
        let tau = table_with(lses);
        let r = exact_objective(&g, &tau, FGenerator::Kl, &ex.batch(), CAP).unwrap();
        assert!(r.grad_tau.unwrap().norm() < 1e-10);
        let mle = exact_mle_objective(&g, &ex.batch(), CAP).unwrap();
        assert!((r.value - mle.value).abs() < 1e-10);
        let dg = r.grad_g.values.iter().zip(&mle.grad_g.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dg < 1e-10);
    }
}

#[test]
fn chi_square_optimal_tau_normalizes_a_sparse_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let space = OutputSpace::binary(4);
    let coupling = Coupling::bilinear(&space);
    let mut saw_zero = false;
    for _ in 0..20 {
        let g = random_model(space, coupling, NetSpec::linear(2, 4), 1.5, &mut rng);
        let x = random_vec(2, &mut rng);
        let t = tau_optimal_per_example(&g, &x, FGenerator::ChiSquare, CAP).unwrap();
        let density = recovered_density(&g, &x, t, FGenerator::ChiSquare, CAP).unwrap();
        let mass: f64 = density.iter().map(|(_, p)| p).sum();
        assert!((mass - 1.0).abs() < 1e-8);
        assert!(density.iter().all(|(_, p)| *p >= 0.0));
        saw_zero |= density.iter().any(|(_, p)| *p == 0.0);
        let tau = table_with(vec![t]);
        let y = space.sample_uniform(&mut rng).0;
        let xs = [x.as_slice()];
        let ys = [y.as_slice()];
        let batch = minmin_core::losses::Batch::new(xs.to_vec(), ys.to_vec(), vec![0]).unwrap();
        let r = exact_objective(&g, &tau, FGenerator::ChiSquare, &batch, CAP).unwrap();
        assert!(r.grad_tau.unwrap().norm() < 1e-8);
    }
    assert!(saw_zero);
}

fn lerp(a: &ParamVector, b: &ParamVector, lambda: f64) -> ParamVector {
    let mut out = b.clone();
    out.scale(1.0 - lambda);
    out.axpy(lambda, a);
    out
}

#[test]
fn linear_energy_with_table_is_jointly_convex() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for space in [OutputSpace::binary(4), OutputSpace::permutations(3)] {
        let coupling = Coupling::bilinear(&space);
        let ex = Examples::random(&space, 3, 4, &mut rng);
        let spec = NetSpec::linear(3, space.encoding_dim());
        let tspec = NetSpec::table(4);
        let value = |gp: &ParamVector, tp: &ParamVector, f: FGenerator| {
            let g = EnergyModel::new(space, coupling, Net::new(spec.clone(), gp.clone()).unwrap()).unwrap();
            let t = Net::new(tspec.clone(), tp.clone()).unwrap();
            exact_objective(&g, &t, f, &ex.batch(), CAP).unwrap().value
        };
        for f in [FGenerator::Kl, FGenerator::ChiSquare] {
            for _ in 0..30 {
                let mut g1 = ParamVector::zeros(&spec);
                let mut g2 = ParamVector::zeros(&spec);
                let mut t1 = ParamVector::zeros(&tspec);
                let mut t2 = ParamVector::zeros(&tspec);
                for p in [&mut g1, &mut g2, &mut t1, &mut t2] {
                    randomize(p, rng.gen_range(0.1..2.0), &mut rng);
                }
                let (v1, v2) = (value(&g1, &t1, f), value(&g2, &t2, f));
                for lambda in [0.25, 0.5, 0.75] {
                    let mid = value(&lerp(&g1, &g2, lambda), &lerp(&t1, &t2, lambda), f);
                    assert!(mid <= lambda * v1 + (1.0 - lambda) * v2 + 1e-9);
                }
            }
        }
    }
}

#[test]
fn zero_energy_and_zero_tau_give_zero() {
    let space = OutputSpace::binary(3);
    let g = EnergyModel::new(space, Coupling::bilinear(&space), Net::new(NetSpec::linear(2, 3), ParamVector::zeros(&NetSpec::linear(2, 3))).unwrap()).unwrap();
    let tau = table_with(vec![0.0, 0.0]);
    let xs = [[0.3, -1.0], [2.0, 0.5]];
    let ys = [[1.0, 0.0, 1.0], [0.0, 0.0, 0.0]];
    let batch = minmin_core::losses::Batch::new(
        xs.iter().map(|x| x.as_slice()).collect(),
        ys.iter().map(|y| y.as_slice()).collect(),
        vec![0, 1],
    )
    .unwrap();
    for f in [FGenerator::Kl, FGenerator::ChiSquare] {
        let r = minmin_objective(&g, &tau, f, &batch, PriorSampling::Sampled(8), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // both conjugates vanish at 0
        assert!(r.value.abs() < 1e-15, "{f:?}: {}", r.value);
    }
}

#[test]
fn errors_are_reported() {
    let space = OutputSpace::binary(3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_model(space, Coupling::bilinear(&space), NetSpec::linear(2, 3), 0.5, &mut rng);
    let ex = Examples::random(&space, 2, 2, &mut rng);
    let tau = table_with(vec![0.0, 0.0]);
    assert!(minmin_objective(&g, &tau, FGenerator::Kl, &ex.batch(), PriorSampling::Sampled(0), &mut rng).is_err());
    let wide = random_net(NetSpec::linear(2, 2), 0.5, &mut rng);
    assert!(minmin_objective(&g, &wide, FGenerator::Kl, &ex.batch(), PriorSampling::Sampled(3), &mut rng).is_err());
    let small = table_with(vec![0.0]);
    assert!(minmin_objective(&g, &small, FGenerator::Kl, &ex.batch(), PriorSampling::Sampled(3), &mut rng).is_err());
    let huge = OutputSpace::binary(40);
    let gh = random_model(huge, Coupling::bilinear(&huge), NetSpec::linear(2, 40), 0.5, &mut rng);
    let exh = Examples::random(&huge, 2, 1, &mut rng);
    assert!(exact_objective(&gh, &table_with(vec![0.0]), FGenerator::ChiSquare, &exh.batch(), CAP).is_err());
    // the unary KL closed form needs no enumeration
    assert!(exact_objective(&gh, &table_with(vec![0.0]), FGenerator::Kl, &exh.batch(), CAP).is_ok());
}
