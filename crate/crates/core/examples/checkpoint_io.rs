//! Saves a model, loads it back and checks the scores are bit-identical.
//!
//! ```bash
//! cargo run -p simtrans --example checkpoint_io
//! ```

use simtrans::model::{load_checkpoint, save_checkpoint, AnyModel, ModelConfig, ScorerModel};
use simtrans::transition::{ActionSequence, Vocab};

fn main() {
    let vocab = Vocab::with_words(["a", "b", "c"]).unwrap();
    let cfg = ModelConfig { d_model: 16, ffn_width: 32, seed: 3, ..ModelConfig::default() };
    let model = ScorerModel::<f32>::new(cfg, vocab.clone()).unwrap();

    let dir = std::env::temp_dir().join(format!("simtrans-checkpoint-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.bin");
    save_checkpoint(&model, &serde_json::json!({ "note": "example" }), &path).unwrap();
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path).unwrap().len());

    let (loaded, meta) = load_checkpoint(&path).unwrap();
    let AnyModel::F32(loaded) = loaded else { panic!("expected an f32 checkpoint") };
    println!("metadata {meta}");

    let source = vocab.encode("a b c").unwrap();
    let history = ActionSequence::parse("<eps> <eps> b", &vocab).unwrap();
    let before = model.score_actions(&model.encode(&source).unwrap(), &history).unwrap();
    let after = loaded.score_actions(&loaded.encode(&source).unwrap(), &history).unwrap();
    println!("params equal: {}", model.params() == loaded.params());
    println!("scores equal: {}", before.scores == after.scores);
    std::fs::remove_dir_all(&dir).unwrap();
}
