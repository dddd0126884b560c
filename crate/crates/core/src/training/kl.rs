use ndarray::ArrayView1;

use crate::numerics::{softplus, Real};

/// `sum_i KL(Bern(pi_i) || Bern(pi0))`.
pub fn kl_bernoulli<F: Real>(pi: ArrayView1<F>, pi0: f64) -> F {
    let (lp0, lq0) = (F::of(pi0.ln()), F::of((-pi0).ln_1p()));
    pi.iter()
        .map(|&p| {
            let q = F::one() - p;
            xlogy(p, p) - p * lp0 + xlogy(q, q) - q * lq0
        })
        .sum()
}

fn xlogy<F: Real>(x: F, y: F) -> F {
    if x == F::zero() {
        F::zero()
    } else {
        x * y.ln()
    }
}

/// Bernoulli KL for one gate given its logit, stable when `pi` saturates.
pub(crate) fn kl_bernoulli_logit<F: Real>(z: F, pi0: f64) -> F {
    let p = crate::numerics::sigmoid(z);
    let q = F::one() - p;
    let (ln_p, ln_q) = (-softplus(-z), -softplus(z));
    p * (ln_p - F::of(pi0.ln())) + q * (ln_q - F::of((-pi0).ln_1p()))
}

/// `d KL / d z` for [`kl_bernoulli_logit`].
pub(crate) fn kl_bernoulli_logit_grad<F: Real>(z: F, pi0: f64) -> F {
    let p = crate::numerics::sigmoid(z);
    let prior_logit = F::of(pi0.ln() - (-pi0).ln_1p());
    p * (F::one() - p) * (z - prior_logit)
}

/// `sum_i KL(N(mu_i, sigma_i^2) || N(0, 1))`.
pub fn kl_gaussian<F: Real>(mu: ArrayView1<F>, sigma: ArrayView1<F>) -> F {
    let half = F::of(0.5);
    mu.iter()
        .zip(sigma.iter())
        .map(|(&m, &s)| half * (s * s + m * m - F::one() - (s * s).ln()))
        .sum()
}
