use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{count_ops, Real};

/// Which masking condition the softmax applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Drops the training user's own row, if it is among the warm rows.
    Train {
        self_index: Option<usize>,
    },
    Infer,
}

impl MaskMode {
    fn excluded(&self) -> Option<usize> {
        match *self {
            MaskMode::Train { self_index } => self_index,
            MaskMode::Infer => None,
        }
    }
}

/// Sparse convex weights over `n` warm rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MapperWeights<F> {
    n: usize,
    support: Vec<usize>,
    weights: Vec<F>,
}

impl<F: Real> MapperWeights<F> {
    /// All mass on row `index`.
    pub fn single(n: usize, index: usize) -> Self {
        assert!(index < n);
        MapperWeights {
            n,
            support: vec![index],
            weights: vec![F::one()],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Ascending row indices with nonzero weight.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn support_size(&self) -> usize {
        self.support.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, F)> + '_ {
        self.support.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn get(&self, index: usize) -> F {
        match self.support.binary_search(&index) {
            Ok(pos) => self.weights[pos],
            Err(_) => F::zero(),
        }
    }

    pub fn dense(&self) -> Array1<F> {
        let mut out = Array1::zeros(self.n);
        for (i, w) in self.iter() {
            out[i] = w;
        }
        out
    }

    /// Largest weights first, ties by index.
    pub fn top(&self, count: usize) -> Vec<(usize, F)> {
        let mut all: Vec<_> = self.iter().collect();
        all.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        all.truncate(count);
        all
    }
}

/// Softmax of `w~` restricted to its nonzero entries (minus the masked row).
///
/// Returns `None` when nothing survives the mask.
pub fn masked_softmax<F: Real>(w_tilde: ArrayView1<F>, mode: MaskMode) -> Option<MapperWeights<F>> {
    let excluded = mode.excluded();
    let support: Vec<usize> = (0..w_tilde.len())
        .filter(|&i| w_tilde[i] != F::zero() && Some(i) != excluded)
        .collect();
    if support.is_empty() {
        return None;
    }
    let max = support.iter().map(|&i| w_tilde[i]).fold(F::neg_infinity(), F::max);
    let mut weights: Vec<F> = support.iter().map(|&i| (w_tilde[i] - max).exp()).collect();
    let total: F = weights.iter().copied().sum();
    for w in &mut weights {
        *w /= total;
    }
    count_ops(3 * w_tilde.len() as u64);
    Some(MapperWeights {
        n: w_tilde.len(),
        support,
        weights,
    })
}

/// [`masked_softmax`] with the empty-support repair: all mass on the
/// highest-probability row that the mask allows. The flag reports a repair.
pub fn masked_softmax_or_fallback<F: Real>(
    w_tilde: ArrayView1<F>,
    mode: MaskMode,
    pi: ArrayView1<F>,
) -> Result<(MapperWeights<F>, bool)> {
    if let Some(w) = masked_softmax(w_tilde, mode) {
        return Ok((w, false));
    }
    let excluded = mode.excluded();
    let best = (0..pi.len())
        .filter(|&i| Some(i) != excluded)
        .fold(None, |best: Option<usize>, i| match best {
            Some(b) if pi[b] >= pi[i] => Some(b),
            _ => Some(i),
        })
        .ok_or_else(|| Error::InvalidArgument("no warm row left after masking".into()))?;
    log::debug!("empty support, falling back to warm row {best}");
    Ok((MapperWeights::single(w_tilde.len(), best), true))
}

/// Convex combination of warm rows.
pub fn map_embedding<F: Real>(weights: &MapperWeights<F>, warm: ArrayView2<F>) -> Result<Array1<F>> {
    if weights.len() != warm.nrows() {
        return Err(Error::Shape(format!(
            "weights over {} rows, warm table has {}",
            weights.len(),
            warm.nrows()
        )));
    }
    let mut out = Array1::zeros(warm.ncols());
    for (i, w) in weights.iter() {
        out.scaled_add(w, &warm.row(i));
    }
    count_ops((2 * weights.support_size() * warm.ncols()) as u64);
    Ok(out)
}
