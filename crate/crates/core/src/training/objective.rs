use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::config::{LossSpec, MseKind};
use super::kl::{kl_bernoulli_logit, kl_bernoulli_logit_grad, kl_gaussian};
use crate::error::{Error, Result};
use crate::mapper::{
    distribution_backward, distribution_forward, encode, encode_backward, map_embedding, masked_softmax_or_fallback,
    reparameterize_with, GeneratorParams, GeneratorShape, MaskMode, Noise, ParamGradients, Variational, WarmContext,
};
use crate::numerics::{Objective, Real, Rng};

/// One training example: a warm user's first items and their own embedding.
#[derive(Clone, Debug)]
pub struct UserExample<F> {
    /// `K x d` initial item embeddings.
    pub items: Array2<F>,
    pub target: Array1<F>,
    /// Row of this user in the warm table, masked out of its own mixture.
    pub self_index: Option<usize>,
    pub noise: Noise<F>,
}

/// Batch-averaged loss terms and (optionally) their gradients.
#[derive(Clone, Debug)]
pub struct VibLoss<F> {
    pub total: f64,
    pub mse: f64,
    pub kl: f64,
    pub l1: f64,
    pub mean_pi: f64,
    pub mean_support: f64,
    /// Examples whose mixture support came out empty.
    pub fallbacks: usize,
    pub grads: Option<ParamGradients<F>>,
}

struct UserTerms {
    mse: f64,
    kl: f64,
    l1: f64,
    mean_pi: f64,
    support: usize,
    fallback: bool,
}

fn user_pass<F: Real>(
    params: &GeneratorParams<F>,
    ctx: &WarmContext<F>,
    ex: &UserExample<F>,
    spec: &LossSpec,
    scale: F,
    grad: Option<(&mut GeneratorParams<F>, &mut [Array2<F>; 3])>,
) -> Result<UserTerms> {
    let n = ctx.len();
    let (h, enc_cache) = encode(ex.items.view(), &params.attn, &params.shape);
    let (dist, dist_cache) = distribution_forward(h.view(), ctx, params);
    let spike = spec.variational == Variational::SpikeSlab;
    let rep = reparameterize_with(&dist, &ex.noise, spec.temperature, spec.relaxation);
    let w_tilde = if spike { rep.w_tilde.clone() } else { rep.slab.clone() };
    let mode = MaskMode::Train {
        self_index: ex.self_index,
    };
    let (weights, fallback) = masked_softmax_or_fallback(w_tilde.view(), mode, dist.pi.view())?;
    let phi_hat = map_embedding(&weights, ctx.phi.view())?;
    let resid = &phi_hat - &ex.target;
    let norm = resid.dot(&resid).sqrt();
    let mse = match spec.mse {
        MseKind::Norm => norm,
        MseKind::Squared => norm * norm,
    };
    let mut kl = kl_gaussian(dist.mu.view(), dist.sigma.view());
    if spike {
        kl += dist
            .logit
            .iter()
            .map(|&z| kl_bernoulli_logit(z, spec.prior_pi0))
            .sum::<F>();
    }
    let l1 = F::of(spec.l1) * w_tilde.iter().map(|w| w.abs()).sum::<F>();
    let terms = UserTerms {
        mse: mse.as_f64(),
        kl: kl.as_f64(),
        l1: l1.as_f64(),
        mean_pi: dist.pi.sum().as_f64() / n as f64,
        support: weights.support_size(),
        fallback,
    };
    let Some((grad, dproj)) = grad else {
        return Ok(terms);
    };

    let d_phi = match spec.mse {
        MseKind::Norm if norm > F::zero() => resid.mapv(|r| scale * r / norm),
        MseKind::Norm => Array1::zeros(resid.len()),
        MseKind::Squared => resid.mapv(|r| scale * (r + r)),
    };
    let mut d_wt = Array1::<F>::zeros(n);
    if !fallback {
        let dw: Vec<F> = weights.support().iter().map(|&i| ctx.phi.row(i).dot(&d_phi)).collect();
        let inner: F = weights.weights().iter().zip(&dw).map(|(&w, &g)| w * g).sum();
        for ((&i, &w), &g) in weights.support().iter().zip(weights.weights()).zip(&dw) {
            d_wt[i] = w * (g - inner);
        }
    }
    if spec.l1 > 0.0 {
        let c = scale * F::of(spec.l1);
        for (g, &w) in d_wt.iter_mut().zip(w_tilde.iter()) {
            if w != F::zero() {
                *g += c * w.signum();
            }
        }
    }

    let tau = F::of(spec.temperature);
    let beta = scale * F::of(spec.beta);
    let mut d_logit = Array1::<F>::zeros(n);
    let mut d_mu = Array1::<F>::zeros(n);
    let mut d_sigma = Array1::<F>::zeros(n);
    for i in 0..n {
        let d_slab = if spike { d_wt[i] * rep.gate[i] } else { d_wt[i] };
        if spike {
            let s = rep.relaxed[i];
            d_logit[i] = d_wt[i] * rep.slab[i] * s * (F::one() - s) / tau
                + beta * kl_bernoulli_logit_grad(dist.logit[i], spec.prior_pi0);
        }
        let sigma = dist.sigma[i];
        d_mu[i] = d_slab + beta * dist.mu[i];
        d_sigma[i] = d_slab * ex.noise.eps[i] + beta * (sigma - F::one() / sigma);
    }
    let dh = distribution_backward(&dist_cache, h.view(), &d_logit, &d_mu, &d_sigma, params, grad, dproj);
    encode_backward(&enc_cache, &dh, &params.attn, &params.shape, &mut grad.attn);
    Ok(terms)
}

/// Batch loss `mean(mse) + beta * mean(kl) + mean(l1)` over `batch`.
///
/// The warm-side projections are computed once for the whole batch. With
/// `with_grad` the returned gradients are exact for the noise stored in
/// each example (straight-through gates excepted).
pub fn vib_loss<F: Real>(
    params: &GeneratorParams<F>,
    warm: ArrayView2<F>,
    batch: &[UserExample<F>],
    spec: &LossSpec,
    with_grad: bool,
) -> Result<VibLoss<F>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if warm.nrows() == 0 {
        return Err(Error::InvalidArgument("empty warm table".into()));
    }
    let ctx = WarmContext::new(warm.to_owned(), params);
    let scale = F::one() / F::of(batch.len() as f64);
    let mut grads = with_grad.then(|| params.zeros_like());
    let mut dproj = [0, 1, 2].map(|_| Array2::<F>::zeros((warm.nrows(), params.shape.hidden)));
    let mut sums = [0.0f64; 5];
    let mut fallbacks = 0;
    for ex in batch {
        if ex.noise.len() != warm.nrows() {
            return Err(Error::Shape(format!(
                "noise for {} rows, warm table has {}",
                ex.noise.len(),
                warm.nrows()
            )));
        }
        let g = grads.as_mut().map(|g| (g, &mut dproj));
        let t = user_pass(params, &ctx, ex, spec, scale, g)?;
        sums[0] += t.mse;
        sums[1] += t.kl;
        sums[2] += t.l1;
        sums[3] += t.mean_pi;
        sums[4] += t.support as f64;
        fallbacks += usize::from(t.fallback);
    }
    if let Some(g) = grads.as_mut() {
        ctx.finish_backward(&dproj, g);
    }
    let b = batch.len() as f64;
    let (mse, kl, l1) = (sums[0] / b, sums[1] / b, sums[2] / b);
    let total = mse + spec.beta * kl + l1;
    if !total.is_finite() {
        return Err(Error::non_finite("training loss"));
    }
    Ok(VibLoss {
        total,
        mse,
        kl,
        l1,
        mean_pi: sums[3] / b,
        mean_support: sums[4] / b,
        fallbacks,
        grads,
    })
}

/// The batch loss with frozen data and noise, as a function of the parameters.
#[derive(Clone, Debug)]
pub struct VibObjective {
    pub warm: Array2<f64>,
    pub batch: Vec<UserExample<f64>>,
    pub spec: LossSpec,
}

impl VibObjective {
    /// Random instance: `n_warm` warm users who are also the training batch,
    /// `k` initial items each. Warm and item embeddings are drawn from
    /// centered normals with standard deviations `warm_scale` and `item_scale`.
    pub fn random(
        shape: GeneratorShape,
        n_warm: usize,
        k: usize,
        (warm_scale, item_scale): (f64, f64),
        spec: LossSpec,
        rng: &mut Rng,
    ) -> Self {
        let d = shape.dim;
        let warm = Array2::from_shape_simple_fn((n_warm, d), || rng.gaussian() * warm_scale);
        let batch = (0..n_warm)
            .map(|u| UserExample {
                items: Array2::from_shape_simple_fn((k, d), || rng.gaussian() * item_scale),
                target: warm.row(u).to_owned(),
                self_index: Some(u),
                noise: Noise::draw(n_warm, rng),
            })
            .collect();
        VibObjective { warm, batch, spec }
    }
}

impl Objective<GeneratorParams<f64>> for VibObjective {
    fn loss(&self, params: &GeneratorParams<f64>) -> Result<f64> {
        Ok(vib_loss(params, self.warm.view(), &self.batch, &self.spec, false)?.total)
    }

    fn loss_and_grad(&self, params: &GeneratorParams<f64>) -> Result<(f64, GeneratorParams<f64>)> {
        let out = vib_loss(params, self.warm.view(), &self.batch, &self.spec, true)?;
        Ok((out.total, out.grads.expect("requested gradients")))
    }
}

/// Distance between a prediction and its target under `kind`.
pub fn reconstruction_error<F: Real>(pred: ArrayView1<F>, target: ArrayView1<F>, kind: MseKind) -> F {
    let sq: F = pred.iter().zip(target.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    match kind {
        MseKind::Norm => sq.sqrt(),
        MseKind::Squared => sq,
    }
}
