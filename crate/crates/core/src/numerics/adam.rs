use ndarray::{Array2, Zip};

use super::Real;

/// Adam with decoupled weight decay over a list of parameter blocks.
///
/// One step with learning rate `lr`, decay `wd` and gradient `g` does
///
/// ```text
/// p <- p * (1 - lr * wd)
/// m <- b1 m + (1 - b1) g
/// v <- b2 v + (1 - b2) g^2
/// p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
///
/// so a zero gradient shrinks every parameter by exactly `1 - lr * wd`.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Array2<F>>,
    second: Vec<Array2<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(shapes: &[(usize, usize)], lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            second: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Array2<F>], &[Array2<F>]) {
        (&self.first, &self.second)
    }

    pub fn step(&mut self, params: Vec<&mut Array2<F>>, grads: Vec<&Array2<F>>) {
        assert_eq!(params.len(), self.first.len(), "block count mismatch");
        assert_eq!(grads.len(), self.first.len(), "block count mismatch");
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::of(self.beta1);
        let b2 = F::of(self.beta2);
        let one = F::one();
        let bias1 = F::of(1.0 - self.beta1.powi(t));
        let bias2 = F::of(1.0 - self.beta2.powi(t));
        let lr = F::of(self.lr);
        let eps = F::of(self.eps);
        let decay = F::of(1.0 - self.lr * self.weight_decay);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            assert_eq!(p.dim(), g.dim(), "gradient shape mismatch");
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *p *= decay;
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_applies_pure_decay() {
        let mut p = array![[1.0f64, -2.0], [0.5, 0.0]];
        let start = p.clone();
        let g = Array2::zeros((2, 2));
        let mut opt = Adam::new(&[(2, 2)], 0.01, 1e-5);
        opt.step(vec![&mut p], vec![&g]);
        let expected = start.mapv(|v| v * (1.0 - 0.01 * 1e-5));
        assert_eq!(p, expected);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction the first update is lr * sign(g)
        let mut p = array![[0.0f64, 0.0]];
        let g = array![[3.0, -0.2]];
        let mut opt = Adam::new(&[(1, 2)], 0.1, 0.0);
        opt.step(vec![&mut p], vec![&g]);
        assert!((p[[0, 0]] + 0.1).abs() < 1e-7);
        assert!((p[[0, 1]] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = array![[5.0f64, -3.0]];
        let mut opt = Adam::new(&[(1, 2)], 0.1, 0.0);
        for _ in 0..2000 {
            let g = p.clone();
            opt.step(vec![&mut p], vec![&g]);
        }
        assert!(p.iter().all(|v| v.abs() < 1e-2), "{p}");
    }
}
