use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::distribution::{distribution_forward, WarmContext};
use super::encoder::encode;
use super::inference::{inference_weights, InferenceMode, Variational};
use super::params::{GeneratorParams, GeneratorShape};
use super::weights::{map_embedding, masked_softmax_or_fallback, MaskMode};
use crate::error::{Error, Result};
use crate::numerics::{measure_ops, Rng};

/// Arithmetic operation counts of one inference forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    /// Self-attention encoder.
    pub encoder: u64,
    /// Distribution generator over all warm rows.
    pub generator: u64,
    /// Masked softmax and weighted sum.
    pub mapping: u64,
    pub total: u64,
}

/// Counts operations for `k` interactions, `n` warm rows, width `d`, head width `hidden`.
pub fn mapping_cost_probe(k: usize, n: usize, d: usize, hidden: usize) -> Result<CostReport> {
    if k == 0 || n == 0 || d == 0 || hidden == 0 {
        return Err(Error::InvalidArgument("probe sizes must be at least 1".into()));
    }
    let heads = if d.is_multiple_of(4) { 4 } else { 1 };
    let shape = GeneratorShape {
        dim: d,
        heads,
        attn_width: d,
        hidden,
    };
    let mut rng = Rng::new(0x5eed);
    let params = GeneratorParams::<f64>::init(shape, &mut rng);
    let x = Array2::from_shape_simple_fn((k, d), || rng.gaussian());
    let warm = Array2::from_shape_simple_fn((n, d), || rng.gaussian());

    let (h, encoder) = measure_ops(|| encode(x.view(), &params.attn, &shape).0);
    let (dist, generator) = measure_ops(|| {
        let ctx = WarmContext::new(warm.clone(), &params);
        distribution_forward(h.view(), &ctx, &params).0
    });
    let (res, mapping) = measure_ops(|| -> Result<()> {
        let wt = inference_weights(&dist, Variational::SpikeSlab, InferenceMode::Deterministic, &mut rng);
        let (w, _) = masked_softmax_or_fallback(wt.view(), MaskMode::Infer, dist.pi.view())?;
        map_embedding(&w, warm.view())?;
        Ok(())
    });
    res?;
    Ok(CostReport {
        encoder,
        generator,
        mapping,
        total: encoder + generator + mapping,
    })
}
