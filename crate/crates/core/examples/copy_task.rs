//! Trains an adaptive model on the copy task and reports accuracy and latency.
//!
//! ```bash
//! cargo run --release -p simtrans --example copy_task -- [steps] [d_model] [seed] [softmax 0|1] [negative_term 0|1] [lr x 1e-5]
//! ```

use std::time::Instant;

use simtrans::data::{generate_splits, CorpusSpec, SplitSizes};
use simtrans::decoding::{evaluate, DecodeConfig};
use simtrans::model::{ModelConfig, ScorerModel, Scoring};
use simtrans::oracle::{Gamma, OracleConfig};
use simtrans::training::{train, AdamConfig, TrainConfig};

fn arg(i: usize, default: u64) -> u64 {
    std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default)
}

fn main() {
    let steps = arg(1, 1500) as usize;
    let d_model = arg(2, 32) as usize;
    let seed = arg(3, 0);
    let scoring = if arg(4, 1) == 1 { Scoring::Softmax } else { Scoring::Sigmoid };
    let negative_term = arg(5, 0) == 1;
    let lr = arg(6, 50) as f64 * 1e-5;

    let spec = CorpusSpec { seed, ..CorpusSpec::default() };
    let splits = generate_splits(&spec, SplitSizes { train: 2000, dev: 100, test: 200 }).unwrap();
    let band = OracleConfig::new(1, 5, Gamma::ONE).unwrap();

    let model_cfg = ModelConfig { d_model, ffn_width: 2 * d_model, scoring, seed, ..ModelConfig::default() };
    let model = ScorerModel::<f32>::new(model_cfg, splits.train.vocab.clone()).unwrap();
    let train_cfg = TrainConfig { oracle: band, max_steps: steps, negative_term, seed, ..TrainConfig::default() };
    let train_cfg = TrainConfig { optimizer: AdamConfig { lr, ..AdamConfig::default() }, ..train_cfg };

    let start = Instant::now();
    let model = train(model, &splits.train, &train_cfg, None, |r| {
        if r.step % 100 == 0 {
            println!("step {:5}  loss {:8.4}  |g| {:7.4}  {:6.1}s", r.step, r.loss, r.grad_norm, r.wall_ms as f64 / 1000.0);
        }
    })
    .unwrap();
    println!("trained {} params in {:.1}s", model.num_params(), start.elapsed().as_secs_f64());

    let eval = evaluate(&model, &splits.test.pairs, &DecodeConfig { oracle: band, ..DecodeConfig::default() }).unwrap();
    println!(
        "test: token accuracy {:.4}  AL {:.3}  AP {:.3}  CW {:.3}  BLEU {:.2}  truncated {}",
        eval.token_accuracy, eval.al, eval.ap, eval.cw, eval.bleu, eval.truncated
    );
}
