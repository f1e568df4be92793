//! Couplings `Φ(θ, y)` and the composed energy `g(x, y) = Φ(h(x), y)`.

use serde::{Deserialize, Serialize};

use crate::nets::{EvalTape, Net, NetInput, ParamVector};
use crate::spaces::{OutputSpace, SpaceKind};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    /// `Φ(θ, y) = ⟨θ, y⟩`.
    Bilinear,
    /// `Φ((u, A), y) = ⟨u, y⟩ + ½ yᵀ U y` with `U = -A Aᵀ`, `A ∈ ℝ^{k×r}`.
    LinearQuadratic,
}

/// How logits `θ` and an output encoding combine into an energy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Coupling {
    pub kind: CouplingKind,
    pub k: usize,
    /// Column count of `A`; ignored for bilinear couplings.
    #[serde(default)]
    pub rank: usize,
}

impl Coupling {
    pub fn bilinear(space: &OutputSpace) -> Self {
        Coupling {
            kind: CouplingKind::Bilinear,
            k: space.k,
            rank: 0,
        }
    }

    pub fn linear_quadratic(k: usize, rank: usize) -> Self {
        Coupling {
            kind: CouplingKind::LinearQuadratic,
            k,
            rank,
        }
    }

    /// Logit length this coupling expects over `space`.
    pub fn theta_dim(&self, space: &OutputSpace) -> usize {
        match self.kind {
            CouplingKind::Bilinear => space.encoding_dim(),
            CouplingKind::LinearQuadratic => self.k + self.k * self.rank,
        }
    }

    pub fn check(&self, space: &OutputSpace) -> Result<()> {
        if self.k != space.k {
            return Err(Error::ShapeMismatch(format!(
                "coupling over {} labels, space over {}",
                self.k, space.k
            )));
        }
        if self.kind == CouplingKind::LinearQuadratic {
            if space.kind != SpaceKind::BinaryVectors {
                return Err(Error::Config("linear-quadratic coupling requires binary vectors".into()));
            }
            if self.rank == 0 {
                return Err(Error::Config("linear-quadratic coupling needs rank >= 1".into()));
            }
        }
        Ok(())
    }

    fn mu_dim(&self, theta: &[f64]) -> usize {
        match self.kind {
            CouplingKind::Bilinear => theta.len(),
            CouplingKind::LinearQuadratic => self.k,
        }
    }

    fn check_shapes(&self, theta: &[f64], mu: &[f64]) -> Result<()> {
        let ok = match self.kind {
            CouplingKind::Bilinear => theta.len() == mu.len(),
            CouplingKind::LinearQuadratic => theta.len() == self.k + self.k * self.rank && mu.len() == self.k,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{:?} coupling: theta has {} entries, point has {} (expected {})",
                self.kind,
                theta.len(),
                mu.len(),
                self.mu_dim(theta)
            )))
        }
    }

    /// `Φ(θ, μ)` for any point of the relaxed polytope.
    pub fn phi(&self, theta: &[f64], mu: &[f64]) -> Result<f64> {
        self.check_shapes(theta, mu)?;
        Ok(self.phi_unchecked(theta, mu))
    }

    #[inline]
    pub(crate) fn phi_unchecked(&self, theta: &[f64], mu: &[f64]) -> f64 {
        match self.kind {
            CouplingKind::Bilinear => dot(theta, mu),
            CouplingKind::LinearQuadratic => {
                let k = self.k;
                let (u, a) = theta.split_at(k);
                let quad: f64 = (0..self.rank)
                    .map(|c| {
                        let s: f64 = (0..k).map(|i| a[i * self.rank + c] * mu[i]).sum();
                        s * s
                    })
                    .sum();
                dot(u, mu) - 0.5 * quad
            }
        }
    }

    /// `out += scale · ∂Φ(θ, μ)/∂θ`.
    pub fn add_phi_grad(&self, theta: &[f64], mu: &[f64], scale: f64, out: &mut [f64]) -> Result<()> {
        self.check_shapes(theta, mu)?;
        if out.len() != theta.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                got: out.len(),
            });
        }
        self.add_phi_grad_unchecked(theta, mu, scale, out);
        Ok(())
    }

    #[inline]
    pub(crate) fn add_phi_grad_unchecked(&self, theta: &[f64], mu: &[f64], scale: f64, out: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        match self.kind {
            CouplingKind::Bilinear => {
                for (o, &m) in out.iter_mut().zip(mu) {
                    *o += scale * m;
                }
            }
            CouplingKind::LinearQuadratic => {
                let k = self.k;
                let r = self.rank;
                let a = &theta[k..];
                for (o, &m) in out[..k].iter_mut().zip(mu) {
                    *o += scale * m;
                }
                // ∂/∂A_{ic} of -½ Σ_c (Σ_i A_{ic} μ_i)² = -μ_i (Aᵀμ)_c
                for c in 0..r {
                    let s: f64 = (0..k).map(|i| a[i * r + c] * mu[i]).sum();
                    for i in 0..k {
                        out[k + i * r + c] -= scale * mu[i] * s;
                    }
                }
            }
        }
    }

    /// Split linear-quadratic logits into `(u, U = -A Aᵀ)`, `U` row-major.
    pub fn unary_and_interactions(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.kind != CouplingKind::LinearQuadratic || theta.len() != self.k + self.k * self.rank {
            return Err(Error::ShapeMismatch("expected linear-quadratic logits".into()));
        }
        let k = self.k;
        let r = self.rank;
        let (u, a) = theta.split_at(k);
        let mut big_u = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                big_u[i * k + j] = -(0..r).map(|c| a[i * r + c] * a[j * r + c]).sum::<f64>();
            }
        }
        Ok((u.to_vec(), big_u))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Energy `g(x, y) = Φ(h(x), y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    pub space: OutputSpace,
    pub coupling: Coupling,
    pub h: Net,
}

/// Everything [`EnergyModel::grad_energy`] needs from a forward evaluation.
#[derive(Clone, Debug)]
pub struct EnergyTape {
    pub net: EvalTape,
    pub theta: Vec<f64>,
    pub y: Vec<f64>,
}

impl EnergyModel {
    pub fn new(space: OutputSpace, coupling: Coupling, h: Net) -> Result<Self> {
        coupling.check(&space)?;
        let want = coupling.theta_dim(&space);
        if h.spec.output_dim != want {
            return Err(Error::ShapeMismatch(format!(
                "logits network emits {} values, coupling expects {want}",
                h.spec.output_dim
            )));
        }
        Ok(EnergyModel { space, coupling, h })
    }

    /// Whether the log-partition has the closed form `Σ softplus(θ_j) - k log 2`.
    pub fn is_unary(&self) -> bool {
        self.coupling.kind == CouplingKind::Bilinear && self.space.kind == SpaceKind::BinaryVectors
    }

    pub fn logits(&self, x: &[f64]) -> Result<(Vec<f64>, EvalTape)> {
        self.h.forward(NetInput::Features(x))
    }

    pub fn energy(&self, x: &[f64], y: &[f64]) -> Result<(f64, EnergyTape)> {
        if y.len() != self.space.encoding_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.space.encoding_dim(),
                got: y.len(),
            });
        }
        let (theta, net) = self.logits(x)?;
        let value = self.coupling.phi(&theta, y)?;
        Ok((
            value,
            EnergyTape {
                net,
                theta,
                y: y.to_vec(),
            },
        ))
    }

    /// `scale · ∂g(x, y)/∂w`.
    pub fn grad_energy(&self, tape: &EnergyTape, scale: f64) -> Result<ParamVector> {
        let mut cot = vec![0.0; tape.theta.len()];
        self.coupling.add_phi_grad(&tape.theta, &tape.y, scale, &mut cot)?;
        self.h.backward(&tape.net, &cot)
    }

    /// Backpropagate a logit cotangent into the parameters of `h`.
    pub fn backward_logits(&self, tape: &EvalTape, theta_cotangent: &[f64]) -> Result<ParamVector> {
        self.h.backward(tape, theta_cotangent)
    }
}
