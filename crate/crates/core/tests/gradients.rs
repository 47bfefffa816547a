//! Finite-difference check of the hand-written backward pass.

use mhgraph::microformer::{init_model, ModelConfig, MicroformerModel};
use mhgraph::numerics::RngStream;
use rand::Rng;

const H: f64 = 1e-5;
/// Denominator floor so coordinates with near-zero gradient are compared absolutely.
const FLOOR: f64 = 1e-6;

fn tiny(dropout: f64) -> ModelConfig {
    ModelConfig {
        layers: 2,
        d_model: 8,
        mlp_hidden: 16,
        heads: 2,
        vocab: 11,
        seq_len: 6,
        dropout,
        seed: 21,
    }
}

fn batch() -> Vec<(Vec<u16>, Vec<u16>)> {
    let mut rng = RngStream::new(77, 0);
    (0..3)
        .map(|_| {
            let x: Vec<u16> = (0..6).map(|_| rng.random_range(0..11)).collect();
            let mut y = x.clone();
            y.rotate_right(1);
            (x, y)
        })
        .collect()
}

fn max_rel_error(model: &MicroformerModel<f64>, with_dropout: bool) -> f64 {
    let data = batch();
    let refs: Vec<(&[u16], &[u16])> = data.iter().map(|(x, y)| (&x[..], &y[..])).collect();
    let streams = |b: usize| RngStream::derive(5, &[b as u64]);
    let dropout: Option<&(dyn Fn(usize) -> RngStream + Sync)> = if with_dropout { Some(&streams) } else { None };
    let (_, grads, _) = model.loss_and_grads(&refs, dropout).unwrap();

    let mut pick = RngStream::new(9, 9);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = pick.random_range(0..model.parameter_count());
        let mut plus = model.clone();
        plus.params_mut()[k] += H;
        let mut minus = model.clone();
        minus.params_mut()[k] -= H;
        let lp = plus.loss_and_grads(&refs, dropout).unwrap().0;
        let lm = minus.loss_and_grads(&refs, dropout).unwrap().0;
        let numeric = (lp - lm) / (2.0 * H);
        let analytic = grads[k];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn finite_differences_agree_without_dropout() {
    let model = init_model::<f64>(&tiny(0.0)).unwrap();
    let err = max_rel_error(&model, false);
    eprintln!("max relative error {err:e}");
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn finite_differences_agree_with_fixed_dropout_masks() {
    let model = init_model::<f64>(&tiny(0.1)).unwrap();
    let err = max_rel_error(&model, true);
    eprintln!("max relative error {err:e}");
    assert!(err < 1e-4, "max relative error {err:e}");
}
