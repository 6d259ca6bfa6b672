//! Compares analytic gradients of the two-path loss against five-point finite
//! differences on a tiny f64 model.
//!
//! ```bash
//! cargo run -p simtrans --example gradient_check -- [seed]
//! ```

use simtrans::model::{ModelConfig, ScorerModel};
use simtrans::oracle::{Gamma, OracleConfig};
use simtrans::training::{two_path_loss, two_path_loss_and_gradients};
use simtrans::transition::Vocab;

fn main() {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0);
    let vocab = Vocab::with_words(["a", "b", "c", "d"]).unwrap();
    let cfg = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, ffn_width: 16, max_positions: 32, seed, ..ModelConfig::default() };
    let model = ScorerModel::<f64>::new(cfg, vocab.clone()).unwrap();
    let x = vocab.encode("a b c d b").unwrap();
    let y = vocab.encode("b c a d </s>").unwrap();
    let band = OracleConfig::new(1, 3, Gamma::ONE).unwrap();

    let report = two_path_loss_and_gradients(&model, &x, &y, &band, true).unwrap();
    let grads = report.grads.unwrap();
    println!("loss {:.6} over {} parameters", report.loss, model.num_params());

    let h = 1e-4;
    let mut probe = model.clone();
    let mut worst = (0.0f64, 0usize);
    for (i, &analytic) in grads.iter().enumerate() {
        let p0 = model.params()[i];
        let mut at = |delta: f64| {
            probe.params_mut()[i] = p0 + delta;
            two_path_loss(&probe, &x, &y, &band).unwrap()
        };
        let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
        probe.params_mut()[i] = p0;
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-4);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    println!("max relative error {:.3e} at parameter {}", worst.0, worst.1);
}
