//! Analytic gradients of every network, coupling and loss against central
//! finite differences of the same (fixed-seed) value.

use minmin_core::energy::EnergyModel;
use minmin_core::inference::ModeSolverConfig;
use minmin_core::losses::{
    exact_mle_objective, exact_objective, gfy_objective, mcmc_mle_grad, minmax_reinforce_step, minmin_objective,
    FGenerator, PriorSampling, ReinforceBaseline, DEFAULT_ENUMERATION_CAP,
};
use minmin_core::nets::{Net, NetInput, NetKind, NetSpec, ParamVector};
use minmin_core::spaces::OutputSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub rel_err: f64,
}

fn push(out: &mut Vec<Check>, name: String, analytic: &[f64], numeric: &[f64]) {
    out.push(Check {
        rel_err: rel_err(analytic, numeric),
        name,
    });
}

fn with_params(net: &Net, p: &ParamVector) -> Net {
    Net::new(net.spec.clone(), p.clone()).unwrap()
}

fn with_h(model: &EnergyModel, p: &ParamVector) -> EnergyModel {
    EnergyModel::new(model.space, model.coupling, with_params(&model.h, p)).unwrap()
}

/// `instances` random instances per architecture, random cotangent.
pub fn nets(instances: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut specs = feature_net_specs(4, 3);
    specs.push(NetSpec::table(5));
    for spec in specs {
        for inst in 0..instances {
            let net = random_net(spec.clone(), 0.7, &mut rng);
            let x = random_vec(spec.input_dim, &mut rng);
            let id = rng.gen_range(0..spec.table_size.max(1));
            let input = if spec.kind == NetKind::PerExampleTable {
                NetInput::Example(id)
            } else {
                NetInput::Features(&x)
            };
            let cot = random_vec(spec.output_dim, &mut rng);
            let (_, tape) = net.forward(input).unwrap();
            let analytic = net.backward(&tape, &cot).unwrap();
            let numeric = fd_grad(&net.params, |p| {
                let (y, _) = with_params(&net, p).forward(input).unwrap();
                y.iter().zip(&cot).map(|(a, b)| a * b).sum()
            });
            push(&mut out, format!("net {} #{inst}", spec.kind.name()), &analytic.values, &numeric);
        }
    }
    out
}

/// Coupling gradients in `θ` at random targets and random interior points.
pub fn couplings(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut settings = small_settings();
    let b5 = OutputSpace::binary(5);
    settings.push((b5, Coupling::linear_quadratic(5, 5)));
    for (space, coupling) in settings {
        for inst in 0..10 {
            let theta = random_vec(coupling.theta_dim(&space), &mut rng);
            let mu: Vec<f64> = if inst % 2 == 0 {
                space.sample_uniform(&mut rng).0
            } else {
                (0..space.encoding_dim()).map(|_| rng.gen::<f64>()).collect()
            };
            let mut analytic = vec![0.0; theta.len()];
            coupling.add_phi_grad(&theta, &mu, 1.0, &mut analytic).unwrap();
            let numeric = fd_grad_vec(&theta, |t| coupling.phi(t, &mu).unwrap());
            push(&mut out, format!("coupling {} #{inst}", space_label(&space, &coupling)), &analytic, &numeric);
        }
    }
    out
}

fn tau_specs(d: usize, n: usize) -> Vec<NetSpec> {
    let mut v = vec![NetSpec::table(n)];
    v.extend(feature_net_specs(d, 1));
    v
}

fn check_minmin_family(
    out: &mut Vec<Check>,
    label: &str,
    g: &EnergyModel,
    tau: &Net,
    ex: &Examples,
    seed: u64,
) {
    let batch = ex.batch();
    for f in [FGenerator::Kl, FGenerator::ChiSquare] {
        let variants: [(&str, Box<dyn Fn(&EnergyModel, &Net) -> minmin_core::losses::LossValueAndGrads>); 3] = [
            (
                "minmin sampled",
                Box::new(|g: &EnergyModel, t: &Net| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    minmin_objective(g, t, f, &batch, PriorSampling::Sampled(7), &mut r).unwrap()
                }),
            ),
            (
                "minmin exhaustive",
                Box::new(|g: &EnergyModel, t: &Net| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    minmin_objective(g, t, f, &batch, PriorSampling::Exhaustive, &mut r).unwrap()
                }),
            ),
            (
                "exact objective",
                Box::new(|g: &EnergyModel, t: &Net| exact_objective(g, t, f, &batch, DEFAULT_ENUMERATION_CAP).unwrap()),
            ),
        ];
        for (name, eval) in &variants {
            let r = eval(g, tau);
            let ng = fd_grad(&g.h.params, |p| eval(&with_h(g, p), tau).value);
            push(out, format!("{name} {f:?} {label} wrt g"), &r.grad_g.values, &ng);
            let nt = fd_grad(&tau.params, |p| eval(g, &with_params(tau, p)).value);
            push(out, format!("{name} {f:?} {label} wrt tau"), &r.grad_tau.unwrap().values, &nt);
        }
    }
}

fn check_g_only_losses(out: &mut Vec<Check>, label: &str, g: &EnergyModel, ex: &Examples, seed: u64) {
    let batch = ex.batch();
    let solver = ModeSolverConfig::default();

    let r = exact_mle_objective(g, &batch, DEFAULT_ENUMERATION_CAP).unwrap();
    let n = fd_grad(&g.h.params, |p| exact_mle_objective(&with_h(g, p), &batch, DEFAULT_ENUMERATION_CAP).unwrap().value);
    push(out, format!("exact mle {label}"), &r.grad_g.values, &n);

    let mcmc = |m: &EnergyModel| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        mcmc_mle_grad(m, &batch, 15, &mut r).unwrap()
    };
    let r = mcmc(g);
    let n = fd_grad(&g.h.params, |p| mcmc(&with_h(g, p)).value);
    push(out, format!("mcmc {label}"), &r.grad_g.values, &n);

    let mut grng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let generator = random_net(NetSpec::linear(ex.xs[0].len(), g.space.k), 0.5, &mut grng);
    let minmax = |m: &EnergyModel| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ReinforceBaseline::default();
        minmax_reinforce_step(m, &generator, &mut b, &batch, 6, &mut r).unwrap()
    };
    let r = minmax(g);
    let n = fd_grad(&g.h.params, |p| minmax(&with_h(g, p)).value);
    push(out, format!("minmax {label} wrt g"), &r.grad_g.values, &n);

    for omega in [0.0, 0.7] {
        let r = gfy_objective(g, &batch, omega, &solver).unwrap();
        let n = fd_grad(&g.h.params, |p| gfy_objective(&with_h(g, p), &batch, omega, &solver).unwrap().value);
        push(out, format!("gfy omega={omega} {label}"), &r.grad_g.values, &n);
    }
}

/// Every loss, over every (space, coupling) pair, for every energy-network
/// kind (with a table `τ`) and every `τ` kind (with a linear energy).
pub fn losses(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let d = 3;
    let n = 3;
    for (space, coupling) in small_settings() {
        let sl = space_label(&space, &coupling);
        let ex = Examples::random(&space, d, n, &mut rng);
        let theta_dim = coupling.theta_dim(&space);
        for spec in feature_net_specs(d, theta_dim) {
            let g = random_model(space, coupling, spec.clone(), 0.5, &mut rng);
            let tau = random_net(NetSpec::table(n), 0.5, &mut rng);
            let label = format!("{sl} g={} tau=table", spec.kind.name());
            let s = rng.gen();
            check_minmin_family(&mut out, &label, &g, &tau, &ex, s);
            check_g_only_losses(&mut out, &format!("{sl} g={}", spec.kind.name()), &g, &ex, s);
        }
        for tspec in tau_specs(d, n).into_iter().skip(1) {
            let g = random_model(space, coupling, NetSpec::linear(d, theta_dim), 0.5, &mut rng);
            let tau = random_net(tspec.clone(), 0.5, &mut rng);
            let label = format!("{sl} g=linear tau={}", tspec.kind.name());
            check_minmin_family(&mut out, &label, &g, &tau, &ex, rng.gen());
        }
    }
    out
}

/// All of the above.
pub fn all(seed: u64) -> Vec<Check> {
    let mut v = nets(20, seed);
    v.extend(couplings(seed + 1));
    v.extend(losses(seed + 2));
    v
}
