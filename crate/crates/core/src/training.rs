//! Adam and the training loop.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{concat, Dataset};
use crate::energy::{Coupling, CouplingKind, EnergyModel};
use crate::evaluation::{evaluate, MetricReport};
use crate::inference::ModeSolverConfig;
use crate::losses::{
    exact_mle_objective, gfy_objective, mcmc_mle_grad, minmax_reinforce_step, minmin_objective, FGenerator,
    PriorSampling, ReinforceBaseline, DEFAULT_CHAIN_LEN,
};
use crate::nets::{project_icnn_in_place, Activation, Net, NetKind, NetSpec, ParamVector};
use crate::spaces::SpaceKind;
use crate::{Error, Result};

/// Adam moments and hyperparameters for one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<f64>,
    pub u: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    /// Feed `2·g_t - g_{t-1}` to the moment updates instead of `g_t`.
    pub optimistic: bool,
    pub prev_grad: Option<Vec<f64>>,
}

impl OptimState {
    pub fn new(len: usize, lr: f64) -> Self {
        OptimState {
            step: 0,
            m: vec![0.0; len],
            u: vec![0.0; len],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            optimistic: false,
            prev_grad: None,
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_optimistic(mut self, on: bool) -> Self {
        self.optimistic = on;
        self
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn adam_step(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        let n = self.m.len();
        if params.len() != n || grad.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {n} moments, params {} grad {}",
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let prev = self.prev_grad.take();
        for i in 0..n {
            let mut g = grad.values[i];
            if self.optimistic {
                if let Some(p) = &prev {
                    g += g - p[i];
                }
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.u[i] = self.beta2 * self.u[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let u_hat = self.u[i] / c2;
            let w = &mut params.values[i];
            *w -= self.lr * (m_hat / (u_hat.sqrt() + self.eps) + self.weight_decay * *w);
        }
        if self.optimistic {
            self.prev_grad = Some(grad.values.clone());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Min-min with the KL generator (logistic loss).
    MinminKl,
    /// Min-min with the chi-square generator (sparsemax loss).
    MinminSparsemax,
    /// Exact likelihood (unary closed form or enumeration).
    ExactMle,
    /// Likelihood gradient estimated by Metropolis-Hastings.
    Mcmc,
    /// Min-max with a REINFORCE-trained generator.
    Minmax,
    /// Generalised Fenchel-Young loss.
    Gfy,
}

impl LossKind {
    pub fn uses_tau(self) -> bool {
        matches!(self, LossKind::MinminKl | LossKind::MinminSparsemax)
    }

    pub fn generator(self) -> Option<FGenerator> {
        match self {
            LossKind::MinminKl => Some(FGenerator::Kl),
            LossKind::MinminSparsemax => Some(FGenerator::ChiSquare),
            _ => None,
        }
    }
}

/// Architecture without input/output sizes; those come from the dataset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: NetKind,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Architecture {
    pub fn linear() -> Self {
        Architecture {
            kind: NetKind::Linear,
            hidden_dims: vec![],
            activation: Activation::Relu,
        }
    }

    pub fn table() -> Self {
        Architecture {
            kind: NetKind::PerExampleTable,
            hidden_dims: vec![],
            activation: Activation::Relu,
        }
    }

    pub fn mlp(hidden: usize) -> Self {
        Architecture {
            kind: NetKind::Mlp,
            hidden_dims: vec![hidden],
            activation: Activation::Relu,
        }
    }

    pub fn spec(&self, input_dim: usize, output_dim: usize, table_size: usize) -> NetSpec {
        NetSpec {
            kind: self.kind,
            input_dim,
            output_dim,
            hidden_dims: self.hidden_dims.clone(),
            activation: self.activation,
            table_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub g: Architecture,
    pub tau: Architecture,
    pub coupling: CouplingKind,
    /// Rank of the interaction factor for linear-quadratic couplings; 0 means `k`.
    pub rank: usize,
    /// Examples per step; values `>= n` mean full batch.
    pub batch_size: usize,
    /// Prior samples per example (`B'`), or exhaustive enumeration.
    pub prior: PriorSampling,
    pub steps: usize,
    pub lr_g: f64,
    pub lr_tau: f64,
    pub l2: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub chain_len: usize,
    /// Quadratic regularisation weight for the Fenchel-Young baseline.
    pub omega: f64,
    /// Architecture of the min-max generator.
    pub generator: Architecture,
    pub mode_solver: ModeSolverConfig,
    /// Largest space enumerated for the logged exact objective.
    pub exact_cap: u64,
    pub g_init: InitScheme,
}

/// Starting point for the energy network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    Glorot,
    /// All parameters zero: a constant energy, so `τ = 0` is already optimal.
    Zeros,
}

fn default_exact_cap() -> u64 {
    4096
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::MinminKl,
            g: Architecture::linear(),
            tau: Architecture::mlp(128),
            coupling: CouplingKind::Bilinear,
            rank: 0,
            batch_size: usize::MAX,
            prior: PriorSampling::Sampled(1024),
            steps: 5000,
            lr_g: 1e-4,
            lr_tau: 1e-4,
            l2: 0.0,
            seed: 0,
            eval_every: 100,
            chain_len: DEFAULT_CHAIN_LEN,
            omega: 0.0,
            generator: Architecture::linear(),
            mode_solver: ModeSolverConfig::default(),
            exact_cap: default_exact_cap(),
            g_init: InitScheme::Glorot,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if self.prior == PriorSampling::Sampled(0) {
            return bad("prior samples must be positive".into());
        }
        if !(self.lr_g >= 0.0 && self.lr_tau >= 0.0 && self.l2 >= 0.0 && self.omega >= 0.0) {
            return bad("learning rates, l2 and omega must be nonnegative".into());
        }
        if self.chain_len == 0 {
            return bad("chain_len must be positive".into());
        }
        if self.g.kind == NetKind::PerExampleTable {
            return bad("the energy network cannot be a lookup table".into());
        }
        self.mode_solver.validate()
    }
}

fn optimizer(cfg: &TrainConfig, len: usize, lr: f64) -> OptimState {
    OptimState::new(len, lr).with_weight_decay(cfg.l2)
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub exact_loss: Option<f64>,
    pub grad_norm: f64,
    pub eval_metric: Option<f64>,
    pub wall_ms: u128,
}

pub const METRICS_HEADER: &str = "step,loss,exact_loss,grad_norm,eval_metric,wall_ms";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.step,
            self.loss,
            opt(self.exact_loss),
            self.grad_norm,
            opt(self.eval_metric),
            self.wall_ms
        )
    }
}

pub fn write_metrics_csv<W: std::io::Write>(mut w: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Models and log produced by [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: EnergyModel,
    pub tau: Option<Net>,
    pub generator: Option<Net>,
    pub log: Vec<MetricsRow>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.loss)
    }
}

/// Build the energy model and auxiliary networks `train` starts from.
pub fn initial_models(cfg: &TrainConfig, data: &Dataset, rng: &mut ChaCha8Rng) -> Result<(EnergyModel, Option<Net>, Option<Net>)> {
    let space = data.space;
    let d = data.dim();
    let coupling = match cfg.coupling {
        CouplingKind::Bilinear => Coupling::bilinear(&space),
        CouplingKind::LinearQuadratic => {
            let rank = if cfg.rank == 0 { space.k } else { cfg.rank };
            Coupling::linear_quadratic(space.k, rank)
        }
    };
    let g_spec = cfg.g.spec(d, coupling.theta_dim(&space), 0);
    let mut h = Net::init(g_spec, rng)?;
    if cfg.g_init == InitScheme::Zeros {
        h.params.scale(0.0);
    }
    let model = EnergyModel::new(space, coupling, h)?;
    let tau = if cfg.loss.uses_tau() {
        Some(Net::init(cfg.tau.spec(d, 1, data.len()), rng)?)
    } else {
        None
    };
    let generator = if cfg.loss == LossKind::Minmax {
        if cfg.generator.kind == NetKind::PerExampleTable {
            return Err(Error::Config("generator cannot be a lookup table".into()));
        }
        Some(Net::init(cfg.generator.spec(d, space.k, 0), rng)?)
    } else {
        None
    };
    Ok((model, tau, generator))
}

/// Exact likelihood objective over a whole dataset, when computable.
pub fn exact_mle_value(model: &EnergyModel, data: &Dataset, cap: u64) -> Option<f64> {
    if data.is_empty() {
        return None;
    }
    let enumerable = model.is_unary() || model.space.cardinality().finite().is_some_and(|c| c <= cap);
    if !enumerable {
        return None;
    }
    exact_mle_objective(model, &data.full_batch(), cap).ok().map(|r| r.value)
}

pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    train_with_eval(cfg, data, None)
}

/// Train on `data`; the logged `eval_metric` is computed on `eval` when given,
/// otherwise on `data`.
pub fn train_with_eval(cfg: &TrainConfig, data: &Dataset, eval: Option<&Dataset>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut model, mut tau, mut generator) = initial_models(cfg, data, &mut rng)?;
    if let Some(t) = tau.as_mut() {
        if t.spec.kind == NetKind::Icnn {
            project_icnn_in_place(&t.spec, &mut t.params)?;
        }
    }

    let optimistic = cfg.loss == LossKind::Minmax;
    let mut opt_g = optimizer(cfg, model.h.params.len(), cfg.lr_g).with_optimistic(optimistic);
    let mut opt_tau = tau.as_ref().map(|t| optimizer(cfg, t.params.len(), cfg.lr_tau));
    let mut opt_gen = generator
        .as_ref()
        .map(|n| optimizer(cfg, n.params.len(), cfg.lr_g).with_optimistic(true));
    let mut baseline = ReinforceBaseline::default();

    let n = data.len();
    let full: Vec<usize> = (0..n).collect();
    let started = Instant::now();
    let mut log = Vec::new();

    for step in 1..=cfg.steps {
        let idx = if cfg.batch_size >= n {
            full.clone()
        } else {
            let mut v = sample(&mut rng, n, cfg.batch_size).into_vec();
            v.sort_unstable();
            v
        };
        let batch = data.batch(&idx);
        let mut step_rng = ChaCha8Rng::seed_from_u64(rng.gen());

        let (loss, grad_g, grad_tau, grad_gen) = match cfg.loss {
            LossKind::MinminKl | LossKind::MinminSparsemax => {
                let f = cfg.loss.generator().expect("min-min loss");
                let t = tau.as_ref().expect("tau model");
                let r = minmin_objective(&model, t, f, &batch, cfg.prior, &mut step_rng)?;
                (r.value, r.grad_g, r.grad_tau, None)
            }
            LossKind::ExactMle => {
                let r = exact_mle_objective(&model, &batch, crate::losses::DEFAULT_ENUMERATION_CAP)?;
                (r.value, r.grad_g, None, None)
            }
            LossKind::Mcmc => {
                let r = mcmc_mle_grad(&model, &batch, cfg.chain_len, &mut step_rng)?;
                (r.value, r.grad_g, None, None)
            }
            LossKind::Gfy => {
                let r = gfy_objective(&model, &batch, cfg.omega, &cfg.mode_solver)?;
                (r.value, r.grad_g, None, None)
            }
            LossKind::Minmax => {
                let gen = generator.as_ref().expect("generator");
                let bprime = match cfg.prior {
                    PriorSampling::Sampled(b) => b,
                    PriorSampling::Exhaustive => {
                        return Err(Error::Config("min-max needs a finite number of generator samples".into()))
                    }
                };
                let r = minmax_reinforce_step(&model, gen, &mut baseline, &batch, bprime, &mut step_rng)?;
                (r.value, r.grad_g, None, Some(r.grad_generator))
            }
        };

        let finite = loss.is_finite()
            && grad_g.is_finite()
            && grad_tau.as_ref().is_none_or(ParamVector::is_finite)
            && grad_gen.as_ref().is_none_or(ParamVector::is_finite);
        if !finite {
            return Err(Error::Divergence {
                step,
                what: format!("{:?} loss or gradient", cfg.loss),
            });
        }
        let mut grad_norm_sq = grad_g.norm().powi(2);

        opt_g.adam_step(&mut model.h.params, &grad_g)?;
        if let (Some(t), Some(opt), Some(gt)) = (tau.as_mut(), opt_tau.as_mut(), grad_tau.as_ref()) {
            grad_norm_sq += gt.norm().powi(2);
            opt.adam_step(&mut t.params, gt)?;
            if t.spec.kind == NetKind::Icnn {
                project_icnn_in_place(&t.spec, &mut t.params)?;
            }
        }
        if let (Some(gn), Some(opt), Some(gg)) = (generator.as_mut(), opt_gen.as_mut(), grad_gen.as_ref()) {
            opt.adam_step(&mut gn.params, gg)?;
        }
        let params_ok = model.h.params.is_finite()
            && tau.as_ref().is_none_or(|t| t.params.is_finite())
            && generator.as_ref().is_none_or(|t| t.params.is_finite());
        if !params_ok {
            return Err(Error::Divergence {
                step,
                what: "parameters".into(),
            });
        }

        if step % cfg.eval_every == 0 || step == cfg.steps {
            let exact_loss = exact_mle_value(&model, data, cfg.exact_cap);
            let eval_metric = evaluate(&model, eval.unwrap_or(data), &cfg.mode_solver).ok().map(|r| r.value);
            log.push(MetricsRow {
                step,
                loss,
                exact_loss,
                grad_norm: grad_norm_sq.sqrt(),
                eval_metric,
                wall_ms: started.elapsed().as_millis(),
            });
        }
    }

    Ok(TrainOutcome {
        model,
        tau,
        generator,
        log,
    })
}

/// Outcome of [`grid_search`].
#[derive(Clone, Debug)]
pub struct GridResult {
    pub best_index: usize,
    pub best: TrainConfig,
    pub val_scores: Vec<f64>,
    /// The best configuration retrained on train ∪ validation.
    pub refit: TrainOutcome,
}

/// Train every configuration on `train`, score on `val`, keep the first
/// best, and refit it on both sets.
pub fn grid_search(configs: &[TrainConfig], train_set: &Dataset, val: &Dataset) -> Result<GridResult> {
    if configs.is_empty() {
        return Err(Error::Config("grid search needs at least one configuration".into()));
    }
    let mut scores = Vec::with_capacity(configs.len());
    let mut best_index = 0;
    for (i, cfg) in configs.iter().enumerate() {
        let outcome = train(cfg, train_set)?;
        let score = validation_score(&outcome, val, cfg)?;
        if score > scores.get(best_index).copied().unwrap_or(f64::NEG_INFINITY) || i == 0 {
            best_index = i;
        }
        scores.push(score);
    }
    let best = configs[best_index].clone();
    let combined = concat(&[train_set, val])?;
    let refit = train(&best, &combined)?;
    Ok(GridResult {
        best_index,
        best,
        val_scores: scores,
        refit,
    })
}

fn validation_score(outcome: &TrainOutcome, val: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let r: MetricReport = evaluate(&outcome.model, val, &cfg.mode_solver)?;
    Ok(r.value)
}

/// Learning rates and weight decays explored when no grid is configured.
pub const DEFAULT_LR_GRID: [f64; 3] = [1e-2, 1e-3, 1e-4];
pub const DEFAULT_L2_GRID: [f64; 3] = [0.0, 1e-4, 1e-2];

/// Cartesian product of `base` over learning rates and weight decays.
pub fn expand_grid(base: &TrainConfig, lrs: &[f64], l2s: &[f64]) -> Vec<TrainConfig> {
    let mut out = Vec::new();
    for &lr in lrs {
        for &l2 in l2s {
            out.push(TrainConfig {
                lr_g: lr,
                lr_tau: lr,
                l2,
                ..base.clone()
            });
        }
    }
    out
}

/// Whether the configured task has a closed-form or enumerable exact objective.
pub fn exact_objective_available(data: &Dataset, cfg: &TrainConfig) -> bool {
    (data.space.kind == SpaceKind::BinaryVectors && cfg.coupling == CouplingKind::Bilinear)
        || data.space.cardinality().finite().is_some_and(|c| c <= cfg.exact_cap)
}
