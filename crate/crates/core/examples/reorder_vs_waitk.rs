//! On the reorder task the second target word depends on a source token that
//! arrives late. An adaptive policy learns to wait for it; wait-1 cannot.
//! The adaptive decoding temperature is chosen on dev so that its AL stays
//! at least one word below the wait-7 schedule.
//!
//! ```bash
//! cargo run -p simtrans --example reorder_vs_waitk -- [steps] [seed]
//! ```

use simtrans::data::{generate_splits, CorpusSpec, SplitSizes, TaskKind};
use simtrans::decoding::{evaluate, temperature_for_latency, CorpusEval, DecodeConfig};
use simtrans::metrics::position_accuracy;
use simtrans::model::{ModelConfig, ScorerModel, Scoring};
use simtrans::oracle::{Gamma, OracleConfig, Policy};
use simtrans::training::{train, TrainConfig};

fn arg(i: usize, default: u64) -> u64 {
    std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default)
}

fn main() {
    let (steps, seed) = (arg(1, 1500) as usize, arg(2, 11));
    let spec = CorpusSpec { task: TaskKind::Reorder, min_len: 4, max_len: 8, seed, ..CorpusSpec::default() };
    let splits = generate_splits(&spec, SplitSizes { train: 2000, dev: 400, test: 200 }).unwrap();
    let band = OracleConfig::new(1, 7, Gamma::ONE).unwrap();
    let model_cfg = ModelConfig { d_model: 32, ffn_width: 64, scoring: Scoring::Softmax, seed, ..ModelConfig::default() };

    let fit = |mode| {
        let model = ScorerModel::<f32>::new(model_cfg.clone(), splits.train.vocab.clone()).unwrap();
        train(model, &splits.train, &TrainConfig { oracle: band, mode, max_steps: steps, seed, ..TrainConfig::default() }, None, |_| {}).unwrap()
    };
    let adaptive = fit(Policy::Adaptive);
    let wait1 = fit(Policy::WaitK(1));

    let test = &splits.test.pairs;
    let refs: Vec<Vec<usize>> = test.iter().map(|p| p.target_words().to_vec()).collect();
    let dc = DecodeConfig { oracle: band, ..DecodeConfig::default() };
    let report = |name: &str, e: &CorpusEval| {
        let hyps: Vec<Vec<usize>> = e.traces.iter().map(|t| t.words.clone()).collect();
        println!(
            "{name:<22} payload acc {:.3}  token acc {:.3}  AL {:.3}  BLEU {:.2}",
            position_accuracy(&hyps, &refs, 1),
            e.token_accuracy,
            e.al,
            e.bleu
        );
    };
    let dev = &splits.dev.pairs;
    let budget = evaluate(&adaptive, dev, &DecodeConfig { mode: Policy::WaitK(7), ..dc }).unwrap().al - 1.25;
    let coarse: Vec<f64> = (-60..=0).map(|i| i as f64 * 0.25).collect();
    let t = temperature_for_latency(&adaptive, dev, &coarse, budget, &dc).unwrap().map_or(0.0, |r| r.t);
    let fine: Vec<f64> = (0..25).map(|i| t + i as f64 * 0.01).collect();
    let t = temperature_for_latency(&adaptive, dev, &fine, budget, &dc).unwrap().map_or(t, |r| r.t);
    println!("dev AL budget {budget:.3} -> t = {t:.2}");
    report("adaptive, t = 0", &evaluate(&adaptive, test, &dc).unwrap());
    report("adaptive, calibrated t", &evaluate(&adaptive, test, &DecodeConfig { temperature: t, ..dc }).unwrap());
    report("wait-1", &evaluate(&wait1, test, &DecodeConfig { mode: Policy::WaitK(1), ..dc }).unwrap());
    report("adaptive model, wait-7", &evaluate(&adaptive, test, &DecodeConfig { mode: Policy::WaitK(7), ..dc }).unwrap());
}
