//! Trains the ablation variants briefly on the copy task and prints one CSV
//! row per variant.
//!
//! ```bash
//! cargo run -p simtrans --example ablations -- [steps]
//! ```

use simtrans::data::{generate_splits, CorpusSpec, SplitSizes};
use simtrans::decoding::{evaluate, DecodeConfig};
use simtrans::metrics::CSV_HEADER;
use simtrans::model::{ModelConfig, ScorerModel, Scoring};
use simtrans::oracle::{Gamma, OracleConfig};
use simtrans::training::{train, TrainConfig};

fn main() {
    let steps = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    let splits = generate_splits(&CorpusSpec::default(), SplitSizes { train: 2000, dev: 100, test: 200 }).unwrap();
    let band = OracleConfig::new(1, 5, Gamma::ONE).unwrap();
    let base = ModelConfig { d_model: 32, ffn_width: 64, ..ModelConfig::default() };
    let variants = [
        ("baseline", base.clone()),
        ("keep_delay_in_attention", ModelConfig { keep_delay_in_attention: true, ..base.clone() }),
        ("no_count_embedding", ModelConfig { use_count_embedding: false, ..base.clone() }),
        ("softmax_scoring", ModelConfig { scoring: Scoring::Softmax, ..base.clone() }),
    ];

    println!("variant,{CSV_HEADER}");
    for (name, cfg) in variants {
        let model = ScorerModel::<f32>::new(cfg, splits.train.vocab.clone()).unwrap();
        let model = train(model, &splits.train, &TrainConfig { oracle: band, max_steps: steps, ..TrainConfig::default() }, None, |_| {}).unwrap();
        let r = evaluate(&model, &splits.dev.pairs, &DecodeConfig { oracle: band, ..DecodeConfig::default() }).unwrap().row(0.0);
        println!("{name},{},{:.4},{:.4},{:.4},{:.4}", r.t, r.al, r.ap, r.cw, r.bleu);
    }
}
