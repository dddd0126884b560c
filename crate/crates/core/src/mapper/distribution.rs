use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{GeneratorParams, HeadLayer};
use crate::error::{Error, Result};
use crate::numerics::{count_ops, sigmoid, softplus, Real};

/// Floor added to the softplus so `sigma` stays strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Per-warm-user spike-and-slab parameters.
///
/// `logit` is the pre-sigmoid value of `pi`; keeping it avoids `ln(1 - pi)`
/// blowing up when `pi` rounds to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeSlabParams<F> {
    pub pi: Array1<F>,
    pub mu: Array1<F>,
    pub sigma: Array1<F>,
    pub logit: Array1<F>,
}

impl<F: Real> SpikeSlabParams<F> {
    /// Builds from probabilities; `pi` must lie in `[0, 1]`.
    pub fn new(pi: Array1<F>, mu: Array1<F>, sigma: Array1<F>) -> Result<Self> {
        if pi.len() != mu.len() || pi.len() != sigma.len() {
            return Err(Error::Shape(format!(
                "pi/mu/sigma lengths {}/{}/{} differ",
                pi.len(),
                mu.len(),
                sigma.len()
            )));
        }
        if pi.iter().any(|p| !(*p >= F::zero() && *p <= F::one())) {
            return Err(Error::InvalidArgument("pi outside [0, 1]".into()));
        }
        if sigma.iter().any(|s| !(*s > F::zero()) || !s.is_finite()) {
            return Err(Error::InvalidArgument("sigma must be positive and finite".into()));
        }
        let logit = pi.mapv(|p| p.ln() - (-p).ln_1p());
        Ok(SpikeSlabParams { pi, mu, sigma, logit })
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.pi.iter().all(|p| p.is_finite())
            && self.mu.iter().all(|m| m.is_finite())
            && self.sigma.iter().all(|s| s.is_finite() && *s > F::zero());
        if ok {
            Ok(())
        } else {
            Err(Error::non_finite("generator output"))
        }
    }
}

/// Warm embeddings in play plus their share of each first-stage layer.
///
/// `proj[t] = phi W_t[d..] + b_t` does not depend on the cold user, so a
/// batch computes it once and every user only adds `h W_t[..d]`.
#[derive(Clone, Debug)]
pub(crate) struct WarmContext<F> {
    pub phi: Array2<F>,
    pub proj: [Array2<F>; 3],
}

fn heads<F>(p: &GeneratorParams<F>) -> [&HeadLayer<F>; 3] {
    [&p.head_pi, &p.head_mu, &p.head_sigma]
}

fn heads_mut<F>(p: &mut GeneratorParams<F>) -> [&mut HeadLayer<F>; 3] {
    [&mut p.head_pi, &mut p.head_mu, &mut p.head_sigma]
}

impl<F: Real> WarmContext<F> {
    pub fn new(phi: Array2<F>, params: &GeneratorParams<F>) -> Self {
        let d = params.shape.dim;
        let n = phi.nrows();
        let proj = heads(params).map(|hl| phi.dot(&hl.warm_part(d)) + &hl.b);
        count_ops(3 * (2 * n * d * params.shape.hidden + n * params.shape.hidden) as u64);
        WarmContext { phi, proj }
    }

    pub fn len(&self) -> usize {
        self.phi.nrows()
    }

    /// Folds accumulated `dL/dproj` into the warm-side weights and biases.
    pub fn finish_backward(&self, dproj: &[Array2<F>; 3], grad: &mut GeneratorParams<F>) {
        let d = grad.shape.dim;
        for (hl, dp) in heads_mut(grad).into_iter().zip(dproj) {
            let gw = self.phi.t().dot(dp);
            let mut warm = hl.w.slice_mut(s![d.., ..]);
            warm += &gw;
            hl.b += &dp.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct DistCache<F> {
    /// Post-ReLU activations of the three first-stage heads.
    act: [Array2<F>; 3],
    z_sigma: Array1<F>,
}

fn column<F: Real>(m: Array2<F>) -> Array1<F> {
    m.index_axis_move(Axis(1), 0)
}

pub(crate) fn distribution_forward<F: Real>(
    h: ArrayView1<F>,
    warm: &WarmContext<F>,
    params: &GeneratorParams<F>,
) -> (SpikeSlabParams<F>, DistCache<F>) {
    let d = params.shape.dim;
    let hid = params.shape.hidden;
    let n = warm.len();
    let act: [Array2<F>; 3] = [0, 1, 2].map(|t| {
        let hl = heads(params)[t];
        let q = h.dot(&hl.user_part(d));
        let mut z = warm.proj[t].clone();
        z += &q.insert_axis(Axis(0));
        z.mapv_inplace(|v| v.max(F::zero()));
        z
    });
    count_ops(3 * (2 * d * hid + 2 * n * hid) as u64);

    let [o_pi, o_mu, o_sigma] = &act;
    let logit = column(o_pi.dot(&params.out_pi_w)) + params.out_pi_b[[0, 0]];
    let mu = column(o_pi.dot(&params.out_mu_w.slice(s![..hid, ..])) + o_mu.dot(&params.out_mu_w.slice(s![hid.., ..])))
        + params.out_mu_b[[0, 0]];
    let z_sigma = column(
        o_pi.dot(&params.out_sigma_w.slice(s![..hid, ..])) + o_sigma.dot(&params.out_sigma_w.slice(s![hid.., ..])),
    ) + params.out_sigma_b[[0, 0]];
    count_ops((10 * n * hid + 8 * n) as u64);

    let pi = logit.mapv(sigmoid);
    let floor = F::of(SIGMA_FLOOR);
    let sigma = z_sigma.mapv(|z| softplus(z) + floor);
    (SpikeSlabParams { pi, mu, sigma, logit }, DistCache { act, z_sigma })
}

/// Backward through the generator given `dL/dlogit`, `dL/dmu`, `dL/dsigma`.
///
/// Warm-side gradients land in `dproj` (see [`WarmContext::finish_backward`]);
/// returns `dL/dh`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn distribution_backward<F: Real>(
    cache: &DistCache<F>,
    h: ArrayView1<F>,
    d_logit: &Array1<F>,
    d_mu: &Array1<F>,
    d_sigma: &Array1<F>,
    params: &GeneratorParams<F>,
    grad: &mut GeneratorParams<F>,
    dproj: &mut [Array2<F>; 3],
) -> Array1<F> {
    let d = params.shape.dim;
    let hid = params.shape.hidden;
    let n = d_mu.len();
    let d_zs: Array1<F> = d_sigma
        .iter()
        .zip(cache.z_sigma.iter())
        .map(|(&g, &z)| g * sigmoid(z))
        .collect();
    let [o_pi, o_mu, o_sigma] = &cache.act;

    let col = |v: &Array1<F>| v.view().insert_axis(Axis(1)).to_owned();
    let (c_pi, c_mu, c_s) = (col(d_logit), col(d_mu), col(&d_zs));
    grad.out_pi_w += &o_pi.t().dot(&c_pi);
    grad.out_pi_b[[0, 0]] += d_logit.sum();
    {
        let mut w = grad.out_mu_w.slice_mut(s![..hid, ..]);
        w += &o_pi.t().dot(&c_mu);
        let mut w = grad.out_mu_w.slice_mut(s![hid.., ..]);
        w += &o_mu.t().dot(&c_mu);
        grad.out_mu_b[[0, 0]] += d_mu.sum();
        let mut w = grad.out_sigma_w.slice_mut(s![..hid, ..]);
        w += &o_pi.t().dot(&c_s);
        let mut w = grad.out_sigma_w.slice_mut(s![hid.., ..]);
        w += &o_sigma.t().dot(&c_s);
        grad.out_sigma_b[[0, 0]] += d_zs.sum();
    }

    // dL/do for each head: N x 3 upstream times 3 x d' read-out rows.
    let mut up = Array2::zeros((n, 3));
    up.column_mut(0).assign(d_logit);
    up.column_mut(1).assign(d_mu);
    up.column_mut(2).assign(&d_zs);
    let mut w_pi = Array2::zeros((3, hid));
    w_pi.row_mut(0).assign(&params.out_pi_w.column(0));
    w_pi.row_mut(1).assign(&params.out_mu_w.slice(s![..hid, 0]));
    w_pi.row_mut(2).assign(&params.out_sigma_w.slice(s![..hid, 0]));
    let d_o = [
        up.dot(&w_pi),
        c_mu.dot(&params.out_mu_w.slice(s![hid.., ..]).t()),
        c_s.dot(&params.out_sigma_w.slice(s![hid.., ..]).t()),
    ];

    let mut dh = Array1::zeros(d);
    let heads = heads(params);
    let grad_heads = heads_mut(grad);
    for (t, (mut dz, ghl)) in d_o.into_iter().zip(grad_heads).enumerate() {
        ndarray::Zip::from(&mut dz).and(&cache.act[t]).for_each(|g, &o| {
            if o <= F::zero() {
                *g = F::zero();
            }
        });
        dproj[t] += &dz;
        let dq = dz.sum_axis(Axis(0));
        let mut wu = ghl.w.slice_mut(s![..d, ..]);
        wu += &h.insert_axis(Axis(1)).dot(&dq.view().insert_axis(Axis(0)));
        dh += &heads[t].user_part(d).dot(&dq);
    }
    dh
}

/// Spike-and-slab parameters for every row of `warm` given encoded `h`.
pub fn generate_distribution<F: Real>(
    h: ArrayView1<F>,
    warm: ArrayView2<F>,
    params: &GeneratorParams<F>,
) -> Result<SpikeSlabParams<F>> {
    if h.len() != params.shape.dim || warm.ncols() != params.shape.dim {
        return Err(Error::Shape(format!(
            "h has {} and warm rows {} entries, generator expects {}",
            h.len(),
            warm.ncols(),
            params.shape.dim
        )));
    }
    if warm.nrows() == 0 {
        return Err(Error::InvalidArgument("empty warm subset".into()));
    }
    let ctx = WarmContext::new(warm.to_owned(), params);
    let (dist, _) = distribution_forward(h, &ctx, params);
    dist.check()?;
    Ok(dist)
}
