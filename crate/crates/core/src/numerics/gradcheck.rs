use ndarray::Array2;

use crate::error::{Error, Result};
use crate::numerics::Real;

/// A fixed, ordered set of parameter blocks.
pub trait ParamBlocks<F> {
    fn blocks(&self) -> Vec<&Array2<F>>;

    fn blocks_mut(&mut self) -> Vec<&mut Array2<F>>;

    fn num_scalars(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }
}

impl<F> ParamBlocks<F> for Vec<Array2<F>> {
    fn blocks(&self) -> Vec<&Array2<F>> {
        self.iter().collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut Array2<F>> {
        self.iter_mut().collect()
    }
}

/// A scalar loss over parameters `P` with an analytic gradient of the same shape.
///
/// Any randomness must be fixed inside the objective before it is evaluated,
/// so that `loss` is a deterministic function of the parameters.
pub trait Objective<P> {
    fn loss(&self, params: &P) -> Result<f64>;

    fn loss_and_grad(&self, params: &P) -> Result<(f64, P)>;
}

/// Loss and gradient, rejecting non-finite results.
pub fn differentiate<F, P, O>(objective: &O, params: &P) -> Result<(f64, P)>
where
    F: Real,
    P: ParamBlocks<F>,
    O: Objective<P>,
{
    let (loss, grads) = objective.loss_and_grad(params)?;
    if !loss.is_finite() {
        return Err(Error::non_finite("loss"));
    }
    for (i, block) in grads.blocks().into_iter().enumerate() {
        if !block.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite(format!("gradient block {i}")));
        }
    }
    Ok((loss, grads))
}

/// Maximum relative error of the analytic gradient against central differences.
///
/// For every scalar parameter `p`, compares the analytic derivative `a` with
/// `(f(p + h) - f(p - h)) / 2h` and returns `max |a - fd| / max(1e-8, |a|)`.
pub fn grad_check<P, O>(objective: &O, params: &P, h: f64) -> Result<f64>
where
    P: ParamBlocks<f64> + Clone,
    O: Objective<P>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let (_, grads) = objective.loss_and_grad(params)?;
    let analytic: Vec<f64> = grads
        .blocks()
        .into_iter()
        .flat_map(|b| b.iter().copied().collect::<Vec<_>>())
        .collect();

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let mut flat = 0usize;
    let n_blocks = probe.blocks().len();
    for b in 0..n_blocks {
        let len = probe.blocks()[b].len();
        for j in 0..len {
            let original = {
                let mut blocks = probe.blocks_mut();
                let cell = blocks[b].as_slice_memory_order_mut().expect("contiguous block");
                let v = cell[j];
                cell[j] = v + h;
                v
            };
            let plus = objective.loss(&probe)?;
            {
                let mut blocks = probe.blocks_mut();
                blocks[b].as_slice_memory_order_mut().expect("contiguous block")[j] = original - h;
            }
            let minus = objective.loss(&probe)?;
            {
                let mut blocks = probe.blocks_mut();
                blocks[b].as_slice_memory_order_mut().expect("contiguous block")[j] = original;
            }
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[flat];
            let rel = (a - fd).abs() / a.abs().max(1e-8);
            if rel > worst {
                worst = rel;
            }
            flat += 1;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct Quadratic;

    impl Objective<Vec<Array2<f64>>> for Quadratic {
        fn loss(&self, p: &Vec<Array2<f64>>) -> Result<f64> {
            Ok(p.iter().map(|b| b.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / 2.0)
        }

        fn loss_and_grad(&self, p: &Vec<Array2<f64>>) -> Result<(f64, Vec<Array2<f64>>)> {
            Ok((self.loss(p)?, p.clone()))
        }
    }

    struct Linear(Vec<Array2<f64>>);

    impl Objective<Vec<Array2<f64>>> for Linear {
        fn loss(&self, p: &Vec<Array2<f64>>) -> Result<f64> {
            Ok(p.iter().zip(&self.0).map(|(a, c)| (a * c).sum()).sum::<f64>())
        }

        fn loss_and_grad(&self, p: &Vec<Array2<f64>>) -> Result<(f64, Vec<Array2<f64>>)> {
            Ok((self.loss(p)?, self.0.clone()))
        }
    }

    struct Exploding;

    impl Objective<Vec<Array2<f64>>> for Exploding {
        fn loss(&self, _: &Vec<Array2<f64>>) -> Result<f64> {
            Ok(f64::NAN)
        }

        fn loss_and_grad(&self, p: &Vec<Array2<f64>>) -> Result<(f64, Vec<Array2<f64>>)> {
            Ok((f64::NAN, p.clone()))
        }
    }

    #[test]
    fn quadratic_probe_gradient_is_identity() {
        let p = vec![array![[1.5, -2.0], [0.25, 4.0]], array![[-3.0]]];
        let (loss, g) = differentiate::<f64, _, _>(&Quadratic, &p).unwrap();
        assert_eq!(g, p);
        assert!((loss - (2.25 + 4.0 + 0.0625 + 16.0 + 9.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn linear_probe_is_exact_under_central_differences() {
        let c = vec![array![[0.5, -0.25, 1.0]], array![[0.75], [-0.5]]];
        let p = vec![array![[0.1, 0.2, -0.3]], array![[-0.1], [0.05]]];
        let err = grad_check(&Linear(c), &p, 1e-5).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let p = vec![array![[1.0]]];
        assert!(grad_check(&Quadratic, &p, 0.0).is_err());
        assert!(grad_check(&Quadratic, &p, -1e-5).is_err());
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let p = vec![array![[1.0]]];
        let err = differentiate::<f64, _, _>(&Exploding, &p).unwrap_err();
        assert!(err.to_string().contains("loss"));
    }
}
