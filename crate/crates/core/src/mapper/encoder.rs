use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{Attention, GeneratorShape};
use crate::datastore::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::{count_ops, softmax_rows, Real};

/// Pooled representation of a user's initial interactions.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<F> {
    pub h: Array1<F>,
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct EncoderCache<F> {
    x: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Row-stochastic attention matrix per head.
    attn: Vec<Array2<F>>,
    mixed: Array2<F>,
}

fn affine<F: Real>(x: &ArrayView2<F>, w: &Array2<F>, b: &Array2<F>) -> Array2<F> {
    count_ops(2 * (x.nrows() * w.nrows() * w.ncols()) as u64);
    x.dot(w) + b
}

/// One multi-head self-attention layer followed by mean pooling over rows.
pub(crate) fn encode<F: Real>(
    x: ArrayView2<F>,
    attn: &Attention<F>,
    shape: &GeneratorShape,
) -> (Array1<F>, EncoderCache<F>) {
    let rows = x.nrows();
    let dh = shape.head_width();
    let scale = F::one() / F::of(dh as f64).sqrt();
    let q = affine(&x, &attn.wq, &attn.bq);
    let k = affine(&x, &attn.wk, &attn.bk);
    let v = affine(&x, &attn.wv, &attn.bv);
    let mut mixed = Array2::zeros((rows, shape.attn_width));
    let mut heads = Vec::with_capacity(shape.heads);
    for hd in 0..shape.heads {
        let cols = s![.., hd * dh..(hd + 1) * dh];
        let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut a);
        mixed.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        heads.push(a);
    }
    // scores, softmax and mixing
    count_ops((4 * rows * rows * shape.attn_width + 3 * rows * rows * shape.heads) as u64);
    let y = affine(&mixed.view(), &attn.wo, &attn.bo);
    count_ops((rows * shape.dim) as u64);
    let h = y.sum_axis(Axis(0)) / F::of(rows as f64);
    let cache = EncoderCache {
        x: x.to_owned(),
        q,
        k,
        v,
        attn: heads,
        mixed,
    };
    (h, cache)
}

/// Accumulates parameter gradients for `dh = dL/dh` into `grad`.
pub(crate) fn encode_backward<F: Real>(
    cache: &EncoderCache<F>,
    dh: &Array1<F>,
    attn: &Attention<F>,
    shape: &GeneratorShape,
    grad: &mut Attention<F>,
) {
    let rows = cache.x.nrows();
    let dh_row = dh.view().insert_axis(Axis(0));
    let dy = Array2::from_shape_fn((rows, shape.dim), |(_, j)| dh[j] / F::of(rows as f64));
    grad.wo += &cache.mixed.t().dot(&dy);
    grad.bo += &dh_row;
    let dmixed = dy.dot(&attn.wo.t());

    let dhw = shape.head_width();
    let scale = F::one() / F::of(dhw as f64).sqrt();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for (hd, a) in cache.attn.iter().enumerate() {
        let cols = s![.., hd * dhw..(hd + 1) * dhw];
        let dout = dmixed.slice(cols);
        let da = dout.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&dout));
        let mut ds = da;
        for (mut drow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
            let inner: F = drow.iter().zip(arow.iter()).map(|(&g, &p)| g * p).sum();
            for (g, &p) in drow.iter_mut().zip(arow.iter()) {
                *g = p * (*g - inner) * scale;
            }
        }
        dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
    }
    let xt = cache.x.t();
    grad.wq += &xt.dot(&dq);
    grad.bq += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
    grad.wk += &xt.dot(&dk);
    grad.bk += &dk.sum_axis(Axis(0)).insert_axis(Axis(0));
    grad.wv += &xt.dot(&dv);
    grad.bv += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));
}

/// Looks up the initial items and encodes them.
pub fn encode_interactions<F: Real>(
    initial_items: &[u64],
    item_table: &EmbeddingTable,
    params: &super::GeneratorParams<F>,
) -> Result<EncoderOutput<F>> {
    if initial_items.is_empty() {
        return Err(Error::InvalidArgument("no initial interactions to encode".into()));
    }
    if item_table.dim() != params.shape.dim {
        return Err(Error::Shape(format!(
            "item dim {} does not match generator dim {}",
            item_table.dim(),
            params.shape.dim
        )));
    }
    let x = item_table.gather(initial_items)?.mapv(|v| F::of(v as f64));
    let (h, _) = encode(x.view(), &params.attn, &params.shape);
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::non_finite("encoder"));
    }
    Ok(EncoderOutput { h })
}
