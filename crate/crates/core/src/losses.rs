//! Training objectives.
//!
//! The central object is the min-min objective: for an energy `g` and a
//! learned scalar function `τ`,
//!
//! ```text
//! L(g, τ) = mean_i [ τ(x_i) + E_{y'~q} f₊*(g(x_i, y') - τ(x_i)) - g(x_i, y_i) ]
//! ```
//!
//! where `q` is uniform over the output space and `f₊*` is the restricted
//! conjugate of an f-divergence generator ([`FGenerator`]). With the KL
//! generator, minimising over `τ` recovers the log-partition exactly; with the
//! chi-square generator the loss is the sparsemax loss and `τ` becomes the
//! normalisation multiplier. The expectation is estimated by `B'` uniform
//! samples per example ([`minmin_objective`]) or computed exactly on small
//! spaces ([`exact_objective`]).
//!
//! Baselines: exact maximum likelihood ([`exact_mle_objective`]),
//! Metropolis-Hastings likelihood gradients ([`mcmc_mle_grad`]), the min-max
//! formulation with a REINFORCE-trained generator ([`minmax_reinforce_step`])
//! and the generalised Fenchel-Young loss ([`gfy_objective`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyModel;
use crate::inference::{regularized_argmax, ModeSolverConfig};
use crate::nets::{sigmoid, softplus, Net, NetInput, ParamVector};
use crate::spaces::{OutputSpace, SpaceKind, StructuredOutput};
use crate::{Error, Result};

/// Largest space enumerated by the exact oracles unless a caller says otherwise.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 20;

/// f-divergence generator, exposed through its restricted conjugate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FGenerator {
    /// `f₊*(v) = e^v - 1`: logistic loss / maximum likelihood.
    Kl,
    /// `f₊*(v) = ½[v]₊²`: sparsemax loss. The true conjugate of
    /// `f(u) = ½(u² - 1)` is `½[v]₊² + ½`; the constant is dropped, so
    /// objective values are shifted by `-½` and gradients are unchanged.
    ChiSquare,
}

impl FGenerator {
    #[inline]
    pub fn conjugate(self, v: f64) -> f64 {
        match self {
            FGenerator::Kl => v.exp() - 1.0,
            FGenerator::ChiSquare => {
                let p = v.max(0.0);
                0.5 * p * p
            }
        }
    }

    #[inline]
    pub fn conjugate_deriv(self, v: f64) -> f64 {
        match self {
            FGenerator::Kl => v.exp(),
            FGenerator::ChiSquare => v.max(0.0),
        }
    }
}

/// A mini-batch of `(x_i, y_i)` pairs with their dataset ids.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub xs: Vec<&'a [f64]>,
    pub ys: Vec<&'a [f64]>,
    pub ids: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn new(xs: Vec<&'a [f64]>, ys: Vec<&'a [f64]>, ids: Vec<usize>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() != ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "batch with {} inputs, {} outputs, {} ids",
                xs.len(),
                ys.len(),
                ids.len()
            )));
        }
        Ok(Batch { xs, ys, ids })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    fn check(&self, space: &OutputSpace) -> Result<()> {
        for y in &self.ys {
            space.validate(y, "batch target")?;
        }
        Ok(())
    }
}

/// Objective value with gradients for the energy parameters and, where the
/// objective has one, the `τ` parameters.
#[derive(Clone, Debug)]
pub struct LossValueAndGrads {
    pub value: f64,
    pub grad_g: ParamVector,
    pub grad_tau: Option<ParamVector>,
}

impl LossValueAndGrads {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad_g.is_finite() && self.grad_tau.as_ref().is_none_or(|g| g.is_finite())
    }
}

/// How the expectation over `y' ~ q` is estimated.
///
/// Serialized as a sample count or the string `"exhaustive"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PriorRepr", into = "PriorRepr")]
pub enum PriorSampling {
    /// `B'` i.i.d. uniform draws per example.
    Sampled(usize),
    /// Every element of the space once, equally weighted.
    Exhaustive,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PriorRepr {
    Count(usize),
    Name(String),
}

impl TryFrom<PriorRepr> for PriorSampling {
    type Error = String;

    fn try_from(r: PriorRepr) -> std::result::Result<Self, String> {
        match r {
            PriorRepr::Count(n) => Ok(PriorSampling::Sampled(n)),
            PriorRepr::Name(s) if s == "exhaustive" => Ok(PriorSampling::Exhaustive),
            PriorRepr::Name(s) => Err(format!("expected a sample count or \"exhaustive\", got {s:?}")),
        }
    }
}

impl From<PriorSampling> for PriorRepr {
    fn from(p: PriorSampling) -> Self {
        match p {
            PriorSampling::Sampled(n) => PriorRepr::Count(n),
            PriorSampling::Exhaustive => PriorRepr::Name("exhaustive".into()),
        }
    }
}

impl std::fmt::Display for PriorSampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PriorSampling::Sampled(n) => write!(f, "{n}"),
            PriorSampling::Exhaustive => f.write_str("exhaustive"),
        }
    }
}

struct ExampleTerms {
    value: f64,
    grad_g: ParamVector,
    grad_tau: Option<ParamVector>,
}

fn reduce(model: &EnergyModel, tau: Option<&Net>, terms: Vec<Result<ExampleTerms>>) -> Result<LossValueAndGrads> {
    let b = terms.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad_g = model.h.params.zeros_like();
    let mut grad_tau = tau.map(|t| t.params.zeros_like());
    for t in terms {
        let t = t?;
        value += t.value;
        grad_g.axpy(1.0, &t.grad_g);
        if let (Some(acc), Some(g)) = (grad_tau.as_mut(), t.grad_tau.as_ref()) {
            acc.axpy(1.0, g);
        }
    }
    grad_g.scale(1.0 / b);
    if let Some(g) = grad_tau.as_mut() {
        g.scale(1.0 / b);
    }
    Ok(LossValueAndGrads {
        value: value / b,
        grad_g,
        grad_tau,
    })
}

fn check_tau(tau: &Net) -> Result<()> {
    if tau.spec.output_dim != 1 {
        return Err(Error::ShapeMismatch(format!(
            "log-partition network must be scalar, has {} outputs",
            tau.spec.output_dim
        )));
    }
    Ok(())
}

/// Doubly stochastic estimate of the min-min objective and its exact
/// gradients (for the drawn samples).
///
/// Each example draws its prior samples from its own generator seeded from
/// `rng`, so results do not depend on thread scheduling.
pub fn minmin_objective<R: Rng + ?Sized>(
    g: &EnergyModel,
    tau: &Net,
    f: FGenerator,
    batch: &Batch<'_>,
    prior: PriorSampling,
    rng: &mut R,
) -> Result<LossValueAndGrads> {
    check_tau(tau)?;
    batch.check(&g.space)?;
    let enumerated = match prior {
        PriorSampling::Sampled(0) => return Err(Error::Config("need at least one prior sample".into())),
        PriorSampling::Sampled(_) => None,
        PriorSampling::Exhaustive => Some(g.space.enumerate(DEFAULT_ENUMERATION_CAP)?),
    };
    let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();

    let terms: Vec<Result<ExampleTerms>> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let x = batch.xs[i];
            let (theta, h_tape) = g.logits(x)?;
            let (t_out, tau_tape) = tau.forward(tau.input(x, batch.ids[i]))?;
            let t = t_out[0];
            let coupling = g.coupling;

            let mut cot = vec![0.0; theta.len()];
            let mut conj_sum = 0.0;
            let mut deriv_sum = 0.0;
            let mut visit = |y: &[f64], inv_count: f64| {
                let v = coupling.phi_unchecked(&theta, y) - t;
                conj_sum += f.conjugate(v);
                let d = f.conjugate_deriv(v);
                deriv_sum += d;
                coupling.add_phi_grad_unchecked(&theta, y, d * inv_count, &mut cot);
            };
            let count = match (&enumerated, prior) {
                (Some(all), _) => {
                    let inv = 1.0 / all.len() as f64;
                    for y in all {
                        visit(&y.0, inv);
                    }
                    all.len()
                }
                (None, PriorSampling::Sampled(n)) => {
                    let mut local = ChaCha8Rng::seed_from_u64(seeds[i]);
                    let mut buf = vec![0.0; g.space.encoding_dim()];
                    let mut scratch = Vec::new();
                    let inv = 1.0 / n as f64;
                    for _ in 0..n {
                        g.space.sample_into(&mut buf, &mut scratch, &mut local);
                        visit(&buf, inv);
                    }
                    n
                }
                (None, PriorSampling::Exhaustive) => unreachable!(),
            };
            let inv = 1.0 / count as f64;
            let y = batch.ys[i];
            let value = t + conj_sum * inv - coupling.phi_unchecked(&theta, y);
            coupling.add_phi_grad_unchecked(&theta, y, -1.0, &mut cot);
            let grad_g = g.backward_logits(&h_tape, &cot)?;
            let grad_tau = tau.backward(&tau_tape, &[1.0 - deriv_sum * inv])?;
            Ok(ExampleTerms {
                value,
                grad_g,
                grad_tau: Some(grad_tau),
            })
        })
        .collect();
    reduce(g, Some(tau), terms)
}

/// Closed-form unary log-partition under uniform `q`:
/// `Σ_j softplus(θ_j) - k log 2`.
pub fn unary_log_partition(theta: &[f64]) -> f64 {
    theta.iter().map(|&t| softplus(t)).sum::<f64>() - theta.len() as f64 * std::f64::consts::LN_2
}

/// `log E_{y~q} exp(Φ(θ, y))`, closed form for unary models and by
/// enumeration otherwise.
pub fn exact_log_partition(g: &EnergyModel, theta: &[f64], cap: u64) -> Result<f64> {
    if g.is_unary() {
        return Ok(unary_log_partition(theta));
    }
    let all = g.space.enumerate(cap)?;
    let energies: Vec<f64> = all.iter().map(|y| g.coupling.phi_unchecked(theta, &y.0)).collect();
    Ok(log_mean_exp(&energies))
}

pub(crate) fn log_mean_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + (v.iter().map(|&e| (e - m).exp()).sum::<f64>() / v.len() as f64).ln()
}

/// Min-min objective with the prior expectation computed exactly.
///
/// Uses the unary closed form when `g` is unary and `f` is KL; otherwise
/// enumerates the space (up to `cap` elements).
pub fn exact_objective(g: &EnergyModel, tau: &Net, f: FGenerator, batch: &Batch<'_>, cap: u64) -> Result<LossValueAndGrads> {
    check_tau(tau)?;
    batch.check(&g.space)?;
    let closed_form = g.is_unary() && f == FGenerator::Kl;
    let enumerated = if closed_form { None } else { Some(g.space.enumerate(cap)?) };
    let q = g.space.uniform_mass();

    let terms: Vec<Result<ExampleTerms>> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let x = batch.xs[i];
            let (theta, h_tape) = g.logits(x)?;
            let (t_out, tau_tape) = tau.forward(tau.input(x, batch.ids[i]))?;
            let t = t_out[0];
            let y = batch.ys[i];
            let mut cot: Vec<f64> = vec![0.0; theta.len()];
            let (expect_conj, expect_deriv) = match &enumerated {
                None => {
                    // E_q e^{g - τ} = e^{LSE - τ}; E_q[e^{g-τ} ∇_θ g] = e^{LSE - τ} σ(θ)
                    let z = (unary_log_partition(&theta) - t).exp();
                    for (c, &th) in cot.iter_mut().zip(&theta) {
                        *c = z * sigmoid(th);
                    }
                    (z - 1.0, z)
                }
                Some(all) => {
                    // sum first, scale by q once
                    let mut ec = 0.0;
                    let mut ed = 0.0;
                    for yp in all {
                        let v = g.coupling.phi_unchecked(&theta, &yp.0) - t;
                        ec += f.conjugate(v);
                        let d = f.conjugate_deriv(v);
                        ed += d;
                        g.coupling.add_phi_grad_unchecked(&theta, &yp.0, d * q, &mut cot);
                    }
                    (ec * q, ed * q)
                }
            };
            let value = t + expect_conj - g.coupling.phi_unchecked(&theta, y);
            g.coupling.add_phi_grad_unchecked(&theta, y, -1.0, &mut cot);
            Ok(ExampleTerms {
                value,
                grad_g: g.backward_logits(&h_tape, &cot)?,
                grad_tau: Some(tau.backward(&tau_tape, &[1.0 - expect_deriv])?),
            })
        })
        .collect();
    reduce(g, Some(tau), terms)
}

/// Exact negative log-likelihood `mean_i [LSE(x_i) - g(x_i, y_i)]` under
/// uniform `q` (so it is `log |Y|` below the counting-measure form).
pub fn exact_mle_objective(g: &EnergyModel, batch: &Batch<'_>, cap: u64) -> Result<LossValueAndGrads> {
    batch.check(&g.space)?;
    let enumerated = if g.is_unary() { None } else { Some(g.space.enumerate(cap)?) };
    let terms: Vec<Result<ExampleTerms>> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let (theta, h_tape) = g.logits(batch.xs[i])?;
            let y = batch.ys[i];
            let mut cot = vec![0.0; theta.len()];
            let lse = match &enumerated {
                None => {
                    for (c, &th) in cot.iter_mut().zip(&theta) {
                        *c = sigmoid(th);
                    }
                    unary_log_partition(&theta)
                }
                Some(all) => {
                    let energies: Vec<f64> = all.iter().map(|yp| g.coupling.phi_unchecked(&theta, &yp.0)).collect();
                    let lse = log_mean_exp(&energies);
                    let q = g.space.uniform_mass();
                    for (yp, &e) in all.iter().zip(&energies) {
                        g.coupling.add_phi_grad_unchecked(&theta, &yp.0, q * (e - lse).exp(), &mut cot);
                    }
                    lse
                }
            };
            let value = lse - g.coupling.phi_unchecked(&theta, y);
            g.coupling.add_phi_grad_unchecked(&theta, y, -1.0, &mut cot);
            Ok(ExampleTerms {
                value,
                grad_g: g.backward_logits(&h_tape, &cot)?,
                grad_tau: None,
            })
        })
        .collect();
    reduce(g, None, terms)
}

/// Bisection controls for the chi-square multiplier.
pub const TAU_BISECTION_TOL: f64 = 1e-10;
pub const TAU_BISECTION_MAX_ITER: usize = 200;

/// The optimal `τ(x)` for a fixed energy: the log-partition for KL, the
/// unique root of `Σ_y q(y)[g(x, y) - τ]₊ = 1` for chi-square.
pub fn tau_optimal_per_example(g: &EnergyModel, x: &[f64], f: FGenerator, cap: u64) -> Result<f64> {
    let (theta, _) = g.logits(x)?;
    match f {
        FGenerator::Kl => {
            let all = g.space.enumerate(cap)?;
            let energies: Vec<f64> = all.iter().map(|y| g.coupling.phi_unchecked(&theta, &y.0)).collect();
            Ok(log_mean_exp(&energies))
        }
        FGenerator::ChiSquare => {
            let all = g.space.enumerate(cap)?;
            let energies: Vec<f64> = all.iter().map(|y| g.coupling.phi_unchecked(&theta, &y.0)).collect();
            Ok(sparse_multiplier(&energies, g.space.uniform_mass()))
        }
    }
}

/// Root of `Σ q [e - τ]₊ = 1` by bisection on `[min e - 1/q, max e]`.
pub(crate) fn sparse_multiplier(energies: &[f64], q: f64) -> f64 {
    let mass = |tau: f64| energies.iter().map(|&e| q * (e - tau).max(0.0)).sum::<f64>();
    let hi0 = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo0 = energies.iter().copied().fold(f64::INFINITY, f64::min) - 1.0 / q;
    let (mut lo, mut hi) = (lo0, hi0);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..TAU_BISECTION_MAX_ITER {
        mid = 0.5 * (lo + hi);
        let r = mass(mid) - 1.0;
        if r.abs() <= TAU_BISECTION_TOL {
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mid
}

/// Density recovered from `(g, τ)`: `p(y|x) = q(y) (f₊*)'(g(x, y) - τ)` for
/// every `y` of the (enumerable) space, in enumeration order.
pub fn recovered_density(g: &EnergyModel, x: &[f64], tau_value: f64, f: FGenerator, cap: u64) -> Result<Vec<(StructuredOutput, f64)>> {
    let (theta, _) = g.logits(x)?;
    let q = g.space.uniform_mass();
    Ok(g.space
        .enumerate(cap)?
        .into_iter()
        .map(|y| {
            let p = q * f.conjugate_deriv(g.coupling.phi_unchecked(&theta, &y.0) - tau_value);
            (y, p)
        })
        .collect())
}

/// Run a Metropolis-Hastings chain with uniform proposals targeting
/// `p(y) ∝ exp Φ(θ, y)`, starting from `state`. `visit` sees the state after
/// each step. Returns the number of accepted moves.
pub fn metropolis_chain<R: Rng + ?Sized>(
    g: &EnergyModel,
    theta: &[f64],
    state: &mut [f64],
    steps: usize,
    rng: &mut R,
    mut visit: impl FnMut(&[f64]),
) -> usize {
    let mut proposal = vec![0.0; state.len()];
    let mut scratch = Vec::new();
    let mut current = g.coupling.phi_unchecked(theta, state);
    let mut accepted = 0;
    for _ in 0..steps {
        g.space.sample_into(&mut proposal, &mut scratch, rng);
        let cand = g.coupling.phi_unchecked(theta, &proposal);
        let delta = cand - current;
        if delta >= 0.0 || rng.gen::<f64>().ln() < delta {
            state.copy_from_slice(&proposal);
            current = cand;
            accepted += 1;
        }
        visit(state);
    }
    accepted
}

/// Default chain length for [`mcmc_mle_grad`].
pub const DEFAULT_CHAIN_LEN: usize = 20;

/// Likelihood gradient with the model expectation replaced by the final
/// state of a short Metropolis-Hastings chain started from a uniform draw:
/// `mean_i [∇g(x_i, y_chain) - ∇g(x_i, y_i)]`. The reported value is the mean
/// energy gap `g(x_i, y_chain) - g(x_i, y_i)`.
pub fn mcmc_mle_grad<R: Rng + ?Sized>(g: &EnergyModel, batch: &Batch<'_>, chain_len: usize, rng: &mut R) -> Result<LossValueAndGrads> {
    if chain_len == 0 {
        return Err(Error::Config("chain length must be >= 1".into()));
    }
    batch.check(&g.space)?;
    let mut terms = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let (theta, h_tape) = g.logits(batch.xs[i])?;
        let mut state = g.space.sample_uniform(rng).0;
        metropolis_chain(g, &theta, &mut state, chain_len, rng, |_| {});
        let y = batch.ys[i];
        let mut cot = vec![0.0; theta.len()];
        g.coupling.add_phi_grad_unchecked(&theta, &state, 1.0, &mut cot);
        g.coupling.add_phi_grad_unchecked(&theta, y, -1.0, &mut cot);
        terms.push(Ok(ExampleTerms {
            value: g.coupling.phi_unchecked(&theta, &state) - g.coupling.phi_unchecked(&theta, y),
            grad_g: g.backward_logits(&h_tape, &cot)?,
            grad_tau: None,
        }));
    }
    reduce(g, None, terms)
}

/// Tractable sampling distribution parameterised by `k` generator logits:
/// factorised Bernoulli on label sets, Plackett-Luce on rankings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorFamily {
    Bernoulli,
    PlackettLuce,
}

impl GeneratorFamily {
    pub fn for_space(space: &OutputSpace) -> Self {
        match space.kind {
            SpaceKind::BinaryVectors => GeneratorFamily::Bernoulli,
            _ => GeneratorFamily::PlackettLuce,
        }
    }
}

/// Draw `y ~ p_logits` encoded for `space`.
pub fn generator_sample<R: Rng + ?Sized>(space: &OutputSpace, logits: &[f64], rng: &mut R) -> Vec<f64> {
    let k = space.k;
    match GeneratorFamily::for_space(space) {
        GeneratorFamily::Bernoulli => logits
            .iter()
            .map(|&l| if rng.gen::<f64>() < sigmoid(l) { 1.0 } else { 0.0 })
            .collect(),
        GeneratorFamily::PlackettLuce => {
            // Gumbel-max: sorting perturbed logits gives a Plackett-Luce order.
            let keys: Vec<f64> = logits
                .iter()
                .map(|&l| {
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    l - (-u.ln()).ln()
                })
                .collect();
            let ranks = crate::inference::mode_permutahedron(&keys).0;
            match space.kind {
                SpaceKind::PermutationMatrices => crate::spaces::ranks_to_matrix(&ranks).expect("valid ranks"),
                _ => {
                    debug_assert_eq!(ranks.len(), k);
                    ranks
                }
            }
        }
    }
}

/// `log p_logits(y)` and its gradient with respect to the logits.
pub fn generator_log_prob(space: &OutputSpace, logits: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let k = space.k;
    match GeneratorFamily::for_space(space) {
        GeneratorFamily::Bernoulli => {
            let lp = logits.iter().zip(y).map(|(&l, &yj)| yj * l - softplus(l)).sum();
            let grad = logits.iter().zip(y).map(|(&l, &yj)| yj - sigmoid(l)).collect();
            Ok((lp, grad))
        }
        GeneratorFamily::PlackettLuce => {
            let ranks = match space.kind {
                SpaceKind::PermutationMatrices => crate::spaces::matrix_to_ranks(y, k)?,
                _ => y.to_vec(),
            };
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| ranks[b].total_cmp(&ranks[a]));
            let mut lp = 0.0;
            let mut grad = vec![0.0; k];
            for t in 0..k {
                let rest = &order[t..];
                let m = rest.iter().map(|&j| logits[j]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = rest.iter().map(|&j| (logits[j] - m).exp()).sum();
                lp += logits[order[t]] - m - z.ln();
                grad[order[t]] += 1.0;
                for &j in rest {
                    grad[j] -= (logits[j] - m).exp() / z;
                }
            }
            Ok((lp, grad))
        }
    }
}

/// Closed-form `KL(Bernoulli(σ(l)) ‖ uniform)` and its logit gradient.
pub fn bernoulli_kl_to_uniform(logits: &[f64]) -> (f64, Vec<f64>) {
    let mut kl = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for &l in logits {
        let p = sigmoid(l);
        let term = |a: f64| if a > 0.0 { a * (2.0 * a).ln() } else { 0.0 };
        kl += term(p) + term(1.0 - p);
        grad.push(l * p * (1.0 - p));
    }
    (kl, grad)
}

/// Running-mean control variate for the score-function estimator.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReinforceBaseline {
    pub value: Option<f64>,
}

impl ReinforceBaseline {
    pub const DECAY: f64 = 0.99;

    pub fn get(&self) -> f64 {
        self.value.unwrap_or(0.0)
    }

    pub fn update(&mut self, mean_reward: f64) {
        self.value = Some(match self.value {
            None => mean_reward,
            Some(b) => Self::DECAY * b + (1.0 - Self::DECAY) * mean_reward,
        });
    }
}

/// Gradients of one min-max step.
#[derive(Clone, Debug)]
pub struct MinMaxGrads {
    /// Estimate of `E_p[g] - KL(p, q) - E_data[g]`.
    pub value: f64,
    /// Descent direction for the energy parameters.
    pub grad_g: ParamVector,
    /// Descent direction for the generator (negated ascent direction).
    pub grad_generator: ParamVector,
}

/// One min-max step: `g` minimises `E_p[g] - E_data[g]`, the generator
/// maximises `E_p[g] - KL(p, q)` through the score-function estimator.
pub fn minmax_reinforce_step<R: Rng + ?Sized>(
    g: &EnergyModel,
    generator: &Net,
    baseline: &mut ReinforceBaseline,
    batch: &Batch<'_>,
    bprime: usize,
    rng: &mut R,
) -> Result<MinMaxGrads> {
    if bprime == 0 {
        return Err(Error::Config("need at least one generator sample".into()));
    }
    if generator.spec.output_dim != g.space.k {
        return Err(Error::ShapeMismatch(format!(
            "generator emits {} logits, space has {} labels",
            generator.spec.output_dim, g.space.k
        )));
    }
    batch.check(&g.space)?;
    let space = g.space;
    let family = GeneratorFamily::for_space(&space);
    let b = batch.len().max(1) as f64;
    let inv_n = 1.0 / bprime as f64;
    let base = baseline.get();
    let mut value = 0.0;
    let mut reward_sum = 0.0;
    let mut grad_g = g.h.params.zeros_like();
    let mut grad_gen = generator.params.zeros_like();

    for i in 0..batch.len() {
        let x = batch.xs[i];
        let (theta, h_tape) = g.logits(x)?;
        let (logits, gen_tape) = generator.forward(generator.input(x, batch.ids[i]))?;
        let mut cot_theta = vec![0.0; theta.len()];
        let mut cot_logits = vec![0.0; logits.len()];
        let mut energy_mean = 0.0;
        let mut neg_log_prob_mean = 0.0;
        for _ in 0..bprime {
            let y = generator_sample(&space, &logits, rng);
            let e = g.coupling.phi_unchecked(&theta, &y);
            g.coupling.add_phi_grad_unchecked(&theta, &y, inv_n, &mut cot_theta);
            let (lp, score) = generator_log_prob(&space, &logits, &y)?;
            let reward = match family {
                GeneratorFamily::Bernoulli => e,
                GeneratorFamily::PlackettLuce => e - lp,
            };
            reward_sum += reward;
            energy_mean += e * inv_n;
            neg_log_prob_mean -= lp * inv_n;
            // ascent direction (r - b) ∇ log p, negated for descent
            for (c, s) in cot_logits.iter_mut().zip(&score) {
                *c -= (reward - base) * s * inv_n;
            }
        }
        let kl = match family {
            GeneratorFamily::Bernoulli => {
                let (kl, grad) = bernoulli_kl_to_uniform(&logits);
                for (c, gk) in cot_logits.iter_mut().zip(&grad) {
                    *c += gk;
                }
                kl
            }
            GeneratorFamily::PlackettLuce => space.log_cardinality() - neg_log_prob_mean,
        };
        let y = batch.ys[i];
        value += energy_mean - kl - g.coupling.phi_unchecked(&theta, y);
        g.coupling.add_phi_grad_unchecked(&theta, y, -1.0, &mut cot_theta);
        grad_g.axpy(1.0 / b, &g.backward_logits(&h_tape, &cot_theta)?);
        grad_gen.axpy(1.0 / b, &generator.backward(&gen_tape, &cot_logits)?);
    }
    baseline.update(reward_sum / (b * bprime as f64));
    Ok(MinMaxGrads {
        value: value / b,
        grad_g,
        grad_generator: grad_gen,
    })
}

/// Generalised Fenchel-Young loss with quadratic regulariser `ω‖μ‖²/2`:
/// `max_{μ ∈ conv(Y)} [Φ(θ, μ) - ω‖μ‖²/2] - Φ(θ, y) + ω‖y‖²/2`, with the
/// gradient from the envelope theorem.
pub fn gfy_objective(g: &EnergyModel, batch: &Batch<'_>, omega: f64, cfg: &ModeSolverConfig) -> Result<LossValueAndGrads> {
    batch.check(&g.space)?;
    let terms: Vec<Result<ExampleTerms>> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let (theta, h_tape) = g.logits(batch.xs[i])?;
            let mu = regularized_argmax(g, &theta, omega, cfg)?;
            let y = batch.ys[i];
            let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
            let value = g.coupling.phi_unchecked(&theta, &mu) - 0.5 * omega * sq(&mu) - g.coupling.phi_unchecked(&theta, y)
                + 0.5 * omega * sq(y);
            let mut cot = vec![0.0; theta.len()];
            g.coupling.add_phi_grad_unchecked(&theta, &mu, 1.0, &mut cot);
            g.coupling.add_phi_grad_unchecked(&theta, y, -1.0, &mut cot);
            Ok(ExampleTerms {
                value,
                grad_g: g.backward_logits(&h_tape, &cot)?,
                grad_tau: None,
            })
        })
        .collect();
    reduce(g, None, terms)
}

/// Convenience: evaluate `τ` at one example.
pub fn tau_value(tau: &Net, x: &[f64], id: usize) -> Result<f64> {
    let input = if tau.spec.kind == crate::nets::NetKind::PerExampleTable {
        NetInput::Example(id)
    } else {
        NetInput::Features(x)
    };
    Ok(tau.forward(input)?.0[0])
}
