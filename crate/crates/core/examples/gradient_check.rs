//! Finite-difference check of hand-written gradients: a dense layer's
//! parameters and the contrastive loss with respect to its anchor.
//!
//! cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raga_ncd::ncd::contrastive_loss_grad;
use raga_ncd::numkit::{grad_check, Activation, Dense, Mode, Parameterized, Tensor2};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let layer = Dense::init(5, 3, Activation::Linear, 0.0, &mut rng)?;
    let x = Tensor2::from_vec(4, 5, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();

    // loss = sum(w * layer(x))
    let err = grad_check(
        |p| {
            let mut l = layer.clone();
            l.set_flat_params(p).unwrap();
            let (out, cache) = l.forward_cached(&x, Mode::Eval).unwrap();
            let loss = out.data().iter().zip(&w).map(|(a, b)| a * b).sum();
            let mut grads = vec![0.0; l.param_count()];
            l.backward(&cache, &Tensor2::from_vec(4, 3, w.clone()).unwrap(), &mut grads);
            (loss, grads)
        },
        &layer.flat_params(),
        1e-6,
    )?;
    println!("dense layer: {} parameters, max relative error {err:.2e}", layer.param_count());

    let mut row = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let anchor = row(6);
    let positives = vec![row(6), row(6)];
    let negatives = vec![row(6), row(6), row(6)];
    let err = grad_check(
        |z| {
            let g = contrastive_loss_grad(z, &positives, &negatives, 0.5).unwrap();
            (g.loss, g.anchor)
        },
        &anchor,
        1e-6,
    )?;
    println!("contrastive loss wrt anchor: max relative error {err:.2e}");
    Ok(())
}
