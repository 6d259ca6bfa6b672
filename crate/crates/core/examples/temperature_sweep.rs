//! Trains a small copy model, then sweeps the decoding temperature and prints
//! the latency/quality trade-off as CSV.
//!
//! ```bash
//! cargo run -p simtrans --example temperature_sweep -- [steps]
//! ```

use simtrans::data::{generate_splits, CorpusSpec, SplitSizes};
use simtrans::decoding::{sweep, DecodeConfig};
use simtrans::metrics::rows_to_csv;
use simtrans::model::{ModelConfig, ScorerModel, Scoring};
use simtrans::oracle::{Gamma, OracleConfig};
use simtrans::training::{train, TrainConfig};

fn main() {
    let steps = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(800);
    let splits = generate_splits(&CorpusSpec::default(), SplitSizes { train: 2000, dev: 100, test: 200 }).unwrap();
    let band = OracleConfig::new(1, 5, Gamma::ONE).unwrap();

    let cfg = ModelConfig { d_model: 32, ffn_width: 64, scoring: Scoring::Softmax, ..ModelConfig::default() };
    let model = ScorerModel::<f32>::new(cfg, splits.train.vocab.clone()).unwrap();
    let model = train(model, &splits.train, &TrainConfig { oracle: band, max_steps: steps, ..TrainConfig::default() }, None, |_| {}).unwrap();

    let temps = [-4.0, -2.0, -0.5, 0.0, 2.0, 4.5, 9.0];
    let rows = sweep(&model, &splits.test.pairs, &temps, &DecodeConfig { oracle: band, ..DecodeConfig::default() }).unwrap();
    print!("{}", rows_to_csv(&rows));
}
