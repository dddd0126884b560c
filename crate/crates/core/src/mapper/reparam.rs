use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::distribution::SpikeSlabParams;
use crate::numerics::{sigmoid, Real, Rng};

/// How the Bernoulli gate is relaxed during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relaxation {
    /// The gate is the continuous Gumbel-sigmoid sample.
    Soft,
    /// Forward uses the thresholded gate, backward the continuous one.
    StraightThrough,
}

impl Relaxation {
    pub fn from_hard(hard: bool) -> Self {
        if hard {
            Relaxation::StraightThrough
        } else {
            Relaxation::Soft
        }
    }
}

/// Noise consumed by one reparameterized draw over `N` warm users.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise<F> {
    pub gumbel_on: Array1<F>,
    pub gumbel_off: Array1<F>,
    pub eps: Array1<F>,
}

impl<F: Real> Noise<F> {
    pub fn draw(n: usize, rng: &mut Rng) -> Self {
        let mut gumbel_on = Array1::zeros(n);
        let mut gumbel_off = Array1::zeros(n);
        let mut eps = Array1::zeros(n);
        for i in 0..n {
            gumbel_on[i] = F::of(rng.gumbel());
            gumbel_off[i] = F::of(rng.gumbel());
            eps[i] = F::of(rng.gaussian());
        }
        Noise {
            gumbel_on,
            gumbel_off,
            eps,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Noise {
            gumbel_on: Array1::zeros(n),
            gumbel_off: Array1::zeros(n),
            eps: Array1::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }
}

/// Everything a reparameterized draw produces, kept for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Reparameterized<F> {
    pub w_tilde: Array1<F>,
    /// Continuous gate sample `s~`.
    pub relaxed: Array1<F>,
    /// Gate value used in the forward product.
    pub gate: Array1<F>,
    /// `mu + eps * sigma`
    pub slab: Array1<F>,
}

/// Deterministic part of the draw: given the noise, compute `w~`.
///
/// The gate is the "on" coordinate of a two-class Gumbel-softmax over
/// `(ln pi, ln(1 - pi))`, which reduces to a sigmoid of the logit gap.
pub fn reparameterize_with<F: Real>(
    dist: &SpikeSlabParams<F>,
    noise: &Noise<F>,
    temperature: f64,
    relaxation: Relaxation,
) -> Reparameterized<F> {
    assert!(temperature > 0.0, "temperature must be positive");
    let tau = F::of(temperature);
    let half = F::of(0.5);
    let n = dist.len();
    let mut out = Reparameterized {
        w_tilde: Array1::zeros(n),
        relaxed: Array1::zeros(n),
        gate: Array1::zeros(n),
        slab: Array1::zeros(n),
    };
    for i in 0..n {
        let a = (dist.logit[i] + noise.gumbel_on[i] - noise.gumbel_off[i]) / tau;
        let s = sigmoid(a);
        let gate = match relaxation {
            Relaxation::Soft => s,
            Relaxation::StraightThrough if s > half => F::one(),
            Relaxation::StraightThrough => F::zero(),
        };
        let slab = dist.mu[i] + noise.eps[i] * dist.sigma[i];
        out.relaxed[i] = s;
        out.gate[i] = gate;
        out.slab[i] = slab;
        out.w_tilde[i] = gate * slab;
    }
    out
}

/// Draws fresh noise and returns `w~`.
pub fn reparameterize<F: Real>(dist: &SpikeSlabParams<F>, temperature: f64, rng: &mut Rng, hard: bool) -> Array1<F> {
    let noise = Noise::draw(dist.len(), rng);
    reparameterize_with(dist, &noise, temperature, Relaxation::from_hard(hard)).w_tilde
}
