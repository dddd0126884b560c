//! Analytic generator gradients against central differences.
//!
//! A plain max-relative-error check over many random draws is dominated by
//! two effects unrelated to correctness: ReLU kinks inside the difference
//! stencil, and coordinates whose true gradient is below the resolution of
//! `(f(p+h) - f(p-h)) / 2h` in f64. The checker here classifies those
//! explicitly and bounds how often they may occur.

use vmrec::mapper::{GeneratorParams, GeneratorShape, Relaxation, Variational};
use vmrec::numerics::{grad_check, Objective, ParamBlocks, Rng};
use vmrec::training::{LossSpec, MseKind, VibObjective};

const H: f64 = 1e-5;

#[derive(Default, Debug)]
struct Tally {
    coords: usize,
    agree: usize,
    below_resolution: usize,
    kinks: usize,
    worst_unexplained: f64,
}

fn loss_at(obj: &VibObjective, p: &GeneratorParams<f64>, b: usize, j: usize, delta: f64) -> f64 {
    let mut q = p.clone();
    q.blocks_mut()[b].as_slice_mut().unwrap()[j] += delta;
    obj.loss(&q).unwrap()
}

fn tally(obj: &VibObjective, p: &GeneratorParams<f64>, t: &mut Tally) {
    let (loss, grads) = obj.loss_and_grad(p).unwrap();
    let resolution = 8.0 * f64::EPSILON * loss.abs().max(1.0) / H;
    for b in 0..p.blocks().len() {
        for j in 0..p.blocks()[b].len() {
            t.coords += 1;
            let a = grads.blocks()[b].as_slice().unwrap()[j];
            let fd = (loss_at(obj, p, b, j, H) - loss_at(obj, p, b, j, -H)) / (2.0 * H);
            let err = (a - fd).abs();
            if err <= 1e-4 * a.abs().max(1e-8) {
                t.agree += 1;
            } else if err <= resolution {
                t.below_resolution += 1;
            } else {
                // A kink between p-h and p+h makes the two one-sided slopes disagree.
                let left = (loss - loss_at(obj, p, b, j, -H)) / H;
                let right = (loss_at(obj, p, b, j, H) - loss) / H;
                let near = (a - left).abs().min((a - right).abs());
                if (left - right).abs() > 100.0 * resolution && near <= 1e-3 * a.abs().max(1e-6) + 4.0 * resolution {
                    t.kinks += 1;
                } else {
                    t.worst_unexplained = t.worst_unexplained.max(err / a.abs().max(1e-8));
                }
            }
        }
    }
}

fn run(spec: LossSpec, scales: (f64, f64), draws: u64) -> Tally {
    let shape = GeneratorShape {
        dim: 8,
        heads: 2,
        attn_width: 8,
        hidden: 8,
    };
    let mut t = Tally::default();
    for draw in 0..draws {
        let mut rng = Rng::new(1000 + draw);
        let obj = VibObjective::random(shape, 5, 2, scales, spec, &mut rng);
        let p = GeneratorParams::<f64>::random_normal(shape, 0.1, &mut rng);
        tally(&obj, &p, &mut t);
    }
    t
}

fn assert_sound(t: &Tally) {
    assert_eq!(t.worst_unexplained, 0.0, "{t:?}");
    assert!(t.agree as f64 >= 0.995 * t.coords as f64, "{t:?}");
    assert!(t.kinks as f64 <= 1e-3 * t.coords as f64, "{t:?}");
}

fn soft(variational: Variational, mse: MseKind, beta: f64, l1: f64) -> LossSpec {
    LossSpec {
        variational,
        relaxation: Relaxation::Soft,
        beta,
        l1,
        mse,
        ..LossSpec::default()
    }
}

#[test]
fn spike_slab_norm_loss_gradients() {
    assert_sound(&run(
        soft(Variational::SpikeSlab, MseKind::Norm, 1e-10, 0.0),
        (1.0, 3.0),
        25,
    ));
}

#[test]
fn spike_slab_with_visible_kl_gradients() {
    assert_sound(&run(
        soft(Variational::SpikeSlab, MseKind::Squared, 0.05, 0.0),
        (1.0, 3.0),
        25,
    ));
}

#[test]
fn gaussian_l1_gradients() {
    assert_sound(&run(
        soft(Variational::Gaussian, MseKind::Norm, 0.05, 0.01),
        (1.0, 3.0),
        25,
    ));
}

#[test]
fn well_conditioned_instance_passes_plain_check() {
    // Larger item embeddings keep attention gradients well above f64 noise.
    let shape = GeneratorShape {
        dim: 8,
        heads: 2,
        attn_width: 8,
        hidden: 8,
    };
    let spec = soft(Variational::SpikeSlab, MseKind::Norm, 1e-10, 0.0);
    let mut rng = Rng::new(3);
    let obj = VibObjective::random(shape, 5, 2, (1.0, 10.0), spec, &mut rng);
    let p = GeneratorParams::<f64>::random_normal(shape, 0.1, &mut rng);
    let err = grad_check(&obj, &p, H).unwrap();
    assert!(err < 1e-4, "{err}");
}
