use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::datastore::NamedBlock;
use crate::error::{Error, Result};
use crate::numerics::{ParamBlocks, Real, Rng};

/// Sizes that fix every parameter block of the generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorShape {
    /// Embedding width `d` of the base model.
    pub dim: usize,
    pub heads: usize,
    /// Total width of the attention projections (split across heads).
    pub attn_width: usize,
    /// Output width `d'` of each first-stage head network.
    pub hidden: usize,
}

impl GeneratorShape {
    pub fn new(dim: usize) -> Self {
        GeneratorShape {
            dim,
            heads: 4,
            attn_width: 64,
            hidden: 128,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.attn_width == 0 || self.hidden == 0 {
            return Err(Error::Shape(format!("zero-sized generator {self:?}")));
        }
        if !self.attn_width.is_multiple_of(self.heads) {
            return Err(Error::Shape(format!(
                "attention width {} not divisible by {} heads",
                self.attn_width, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.attn_width / self.heads
    }
}

impl Default for GeneratorShape {
    fn default() -> Self {
        GeneratorShape::new(64)
    }
}

/// Single-head projections of the interaction encoder. Rows are inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<F> {
    pub wq: Array2<F>,
    pub bq: Array2<F>,
    pub wk: Array2<F>,
    pub bk: Array2<F>,
    pub wv: Array2<F>,
    pub bv: Array2<F>,
    pub wo: Array2<F>,
    pub bo: Array2<F>,
}

/// First-stage head network: `relu([h, phi] W + b)`, `W` is `2d x d'`.
///
/// Rows `0..d` of `w` act on the encoded interactions, rows `d..2d` on the
/// warm-user embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadLayer<F> {
    pub w: Array2<F>,
    pub b: Array2<F>,
}

impl<F: Real> HeadLayer<F> {
    pub fn user_part(&self, dim: usize) -> ArrayView2<'_, F> {
        self.w.slice(s![..dim, ..])
    }

    pub fn warm_part(&self, dim: usize) -> ArrayView2<'_, F> {
        self.w.slice(s![dim.., ..])
    }
}

/// All trainable generator parameters.
///
/// The `pi` branch output is shared with the `mu` and `sigma` read-outs:
/// `out_mu` and `out_sigma` read `[o_pi, o_mu]` and `[o_pi, o_sigma]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<F> {
    pub shape: GeneratorShape,
    pub attn: Attention<F>,
    pub head_pi: HeadLayer<F>,
    pub head_mu: HeadLayer<F>,
    pub head_sigma: HeadLayer<F>,
    /// `d' x 1`
    pub out_pi_w: Array2<F>,
    pub out_pi_b: Array2<F>,
    /// `2d' x 1`
    pub out_mu_w: Array2<F>,
    pub out_mu_b: Array2<F>,
    /// `2d' x 1`
    pub out_sigma_w: Array2<F>,
    pub out_sigma_b: Array2<F>,
}

/// Gradients share the parameter layout.
pub type ParamGradients<F> = GeneratorParams<F>;

pub const BLOCK_NAMES: [&str; 20] = [
    "attn.wq",
    "attn.bq",
    "attn.wk",
    "attn.bk",
    "attn.wv",
    "attn.bv",
    "attn.wo",
    "attn.bo",
    "mlp1_pi.w",
    "mlp1_pi.b",
    "mlp1_mu.w",
    "mlp1_mu.b",
    "mlp1_sigma.w",
    "mlp1_sigma.b",
    "mlp2_pi.w",
    "mlp2_pi.b",
    "mlp2_mu.w",
    "mlp2_mu.b",
    "mlp2_sigma.w",
    "mlp2_sigma.b",
];

const SHAPE_BLOCK: &str = "shape";

impl<F: Real> GeneratorParams<F> {
    fn from_fn(shape: GeneratorShape, mut f: impl FnMut(&str, (usize, usize)) -> Array2<F>) -> Self {
        let GeneratorShape {
            dim: d,
            attn_width: a,
            hidden: h,
            ..
        } = shape;
        GeneratorParams {
            shape,
            attn: Attention {
                wq: f("attn.wq", (d, a)),
                bq: f("attn.bq", (1, a)),
                wk: f("attn.wk", (d, a)),
                bk: f("attn.bk", (1, a)),
                wv: f("attn.wv", (d, a)),
                bv: f("attn.bv", (1, a)),
                wo: f("attn.wo", (a, d)),
                bo: f("attn.bo", (1, d)),
            },
            head_pi: HeadLayer {
                w: f("mlp1_pi.w", (2 * d, h)),
                b: f("mlp1_pi.b", (1, h)),
            },
            head_mu: HeadLayer {
                w: f("mlp1_mu.w", (2 * d, h)),
                b: f("mlp1_mu.b", (1, h)),
            },
            head_sigma: HeadLayer {
                w: f("mlp1_sigma.w", (2 * d, h)),
                b: f("mlp1_sigma.b", (1, h)),
            },
            out_pi_w: f("mlp2_pi.w", (h, 1)),
            out_pi_b: f("mlp2_pi.b", (1, 1)),
            out_mu_w: f("mlp2_mu.w", (2 * h, 1)),
            out_mu_b: f("mlp2_mu.b", (1, 1)),
            out_sigma_w: f("mlp2_sigma.w", (2 * h, 1)),
            out_sigma_b: f("mlp2_sigma.b", (1, 1)),
        }
    }

    pub fn zeros(shape: GeneratorShape) -> Self {
        Self::from_fn(shape, |_, s| Array2::zeros(s))
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(shape: GeneratorShape, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |name, (rows, cols)| {
            if name.ends_with(".b") || name.starts_with("attn.b") {
                Array2::zeros((rows, cols))
            } else {
                let bound = 1.0 / (rows as f64).sqrt();
                Array2::from_shape_simple_fn((rows, cols), || F::of((2.0 * rng.uniform_open() - 1.0) * bound))
            }
        })
    }

    /// Every entry drawn from `N(0, std^2)`.
    pub fn random_normal(shape: GeneratorShape, std: f64, rng: &mut Rng) -> Self {
        Self::from_fn(shape, |_, s| {
            Array2::from_shape_simple_fn(s, || F::of(rng.gaussian() * std))
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape)
    }

    pub fn named_blocks(&self) -> Vec<(&'static str, &Array2<F>)> {
        BLOCK_NAMES.iter().copied().zip(self.blocks()).collect()
    }

    pub fn cast<G: Real>(&self) -> GeneratorParams<G> {
        let src = self.blocks();
        let mut i = 0;
        GeneratorParams::<G>::from_fn(self.shape, |_, _| {
            let out = src[i].mapv(|v| G::of(v.as_f64()));
            i += 1;
            out
        })
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn add_scaled(&mut self, other: &Self, alpha: F) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.scaled_add(alpha, b);
        }
    }

    /// Checkpoint blocks: a `shape` block followed by every parameter block.
    pub fn to_checkpoint(&self) -> Vec<NamedBlock> {
        let s = self.shape;
        let mut out = vec![(
            SHAPE_BLOCK.to_string(),
            Array2::from_shape_vec(
                (1, 4),
                vec![s.dim as f32, s.heads as f32, s.attn_width as f32, s.hidden as f32],
            )
            .expect("1x4"),
        )];
        out.extend(
            self.named_blocks()
                .into_iter()
                .map(|(n, b)| (n.to_string(), b.mapv(|v| v.as_f64() as f32))),
        );
        out
    }

    pub fn from_checkpoint(blocks: &[NamedBlock]) -> Result<Self> {
        let find = |name: &str| {
            blocks
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, b)| b)
                .ok_or_else(|| Error::Shape(format!("checkpoint lacks block {name}")))
        };
        let sb = find(SHAPE_BLOCK)?;
        if sb.dim() != (1, 4) {
            return Err(Error::Shape("shape block must be 1x4".into()));
        }
        let shape = GeneratorShape {
            dim: sb[[0, 0]] as usize,
            heads: sb[[0, 1]] as usize,
            attn_width: sb[[0, 2]] as usize,
            hidden: sb[[0, 3]] as usize,
        };
        shape.check()?;
        let mut err = None;
        let params = Self::from_fn(shape, |name, dims| match find(name) {
            Ok(b) if b.dim() == dims => b.mapv(|v| F::of(v as f64)),
            Ok(b) => {
                err.get_or_insert(Error::Shape(format!(
                    "block {name} is {:?}, expected {dims:?}",
                    b.dim()
                )));
                Array2::zeros(dims)
            }
            Err(e) => {
                err.get_or_insert(e);
                Array2::zeros(dims)
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(params),
        }
    }
}

impl<F> ParamBlocks<F> for GeneratorParams<F> {
    fn blocks(&self) -> Vec<&Array2<F>> {
        let a = &self.attn;
        vec![
            &a.wq,
            &a.bq,
            &a.wk,
            &a.bk,
            &a.wv,
            &a.bv,
            &a.wo,
            &a.bo,
            &self.head_pi.w,
            &self.head_pi.b,
            &self.head_mu.w,
            &self.head_mu.b,
            &self.head_sigma.w,
            &self.head_sigma.b,
            &self.out_pi_w,
            &self.out_pi_b,
            &self.out_mu_w,
            &self.out_mu_b,
            &self.out_sigma_w,
            &self.out_sigma_b,
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Array2<F>> {
        let a = &mut self.attn;
        vec![
            &mut a.wq,
            &mut a.bq,
            &mut a.wk,
            &mut a.bk,
            &mut a.wv,
            &mut a.bv,
            &mut a.wo,
            &mut a.bo,
            &mut self.head_pi.w,
            &mut self.head_pi.b,
            &mut self.head_mu.w,
            &mut self.head_mu.b,
            &mut self.head_sigma.w,
            &mut self.head_sigma.b,
            &mut self.out_pi_w,
            &mut self.out_pi_b,
            &mut self.out_mu_w,
            &mut self.out_mu_b,
            &mut self.out_sigma_w,
            &mut self.out_sigma_b,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let p = GeneratorParams::<f32>::zeros(GeneratorShape::default());
        assert_eq!(p.attn.wq.dim(), (64, 64));
        assert_eq!(p.head_pi.w.dim(), (128, 128));
        assert_eq!(p.out_pi_w.dim(), (128, 1));
        assert_eq!(p.out_mu_w.dim(), (256, 1));
        assert_eq!(p.out_sigma_w.dim(), (256, 1));
        assert_eq!(p.blocks().len(), BLOCK_NAMES.len());
    }

    #[test]
    fn checkpoint_round_trip() {
        let shape = GeneratorShape {
            dim: 4,
            heads: 2,
            attn_width: 6,
            hidden: 5,
        };
        let p = GeneratorParams::<f32>::init(shape, &mut Rng::new(2));
        let blocks = p.to_checkpoint();
        assert_eq!(blocks[0].0, "shape");
        let back = GeneratorParams::<f32>::from_checkpoint(&blocks).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn checkpoint_shape_mismatch_is_reported() {
        let p = GeneratorParams::<f32>::zeros(GeneratorShape::new(8));
        let mut blocks = p.to_checkpoint();
        blocks[3].1 = Array2::zeros((1, 1));
        let err = GeneratorParams::<f32>::from_checkpoint(&blocks).unwrap_err();
        assert!(err.to_string().contains(&blocks[3].0), "{err}");
    }

    #[test]
    fn heads_must_divide_width() {
        let shape = GeneratorShape {
            attn_width: 10,
            heads: 4,
            ..GeneratorShape::new(8)
        };
        assert!(shape.check().is_err());
    }
}
