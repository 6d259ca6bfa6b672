//! Latency and quality metrics on hand-built schedules.
//!
//! ```bash
//! cargo run -p simtrans --example latency_metrics
//! ```

use simtrans::metrics::{corpus_bleu, latency};
use simtrans::oracle::{reads_before_words, waitk_path};

fn main() {
    let n = 10;
    let target: Vec<usize> = vec![0; n];
    println!("schedule      AL      AP      CW");
    for k in [1, 2, 3, 5, n] {
        let g = reads_before_words(&waitk_path(n, &target, k));
        let r = latency(&g, n).unwrap();
        let name = if k == n { "full".to_string() } else { format!("wait-{k}") };
        println!("{name:<10} {:6.3}  {:6.3}  {:>6}", r.al, r.ap, if r.cw_defined { format!("{:.3}", r.cw) } else { "-".into() });
    }

    let refs: Vec<Vec<&str>> = vec!["a b c d e f".split(' ').collect(), "the cat sat on the mat".split(' ').collect()];
    let hyps: Vec<Vec<&str>> = vec!["a b c d e f".split(' ').collect(), "the cat sat on a mat".split(' ').collect()];
    println!("\nBLEU identical  {:.4}", corpus_bleu(&refs, &refs).unwrap().bleu);
    let b = corpus_bleu(&hyps, &refs).unwrap();
    println!("BLEU one error  {:.4}  precisions {:?}  bp {:.4}", b.bleu, b.precisions, b.brevity_penalty);
}
