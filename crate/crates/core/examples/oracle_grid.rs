//! Walks the two extreme oracle paths for one sentence pair and draws them on
//! the read/write grid.
//!
//! ```bash
//! cargo run -p simtrans --example oracle_grid -- [src_len] [tgt_len] [alpha] [beta]
//! ```

use simtrans::cli::render_walk;
use simtrans::oracle::{cumulative_write_lag, enumerate_oracle_paths, extreme_path, Gamma, OracleConfig, PathSide};
use simtrans::transition::Vocab;

fn arg(i: usize, default: i64) -> i64 {
    std::env::args().nth(i).and_then(|a| a.parse().ok()).unwrap_or(default)
}

fn main() {
    let (n, m) = (arg(1, 6) as usize, arg(2, 5) as usize);
    let cfg = OracleConfig::new(arg(3, 1), arg(4, 3), Gamma::ratio(n as i64, m as i64)).unwrap();
    let vocab = Vocab::with_words((0..m).map(|i| format!("y{i}"))).unwrap();
    let mut target: Vec<usize> = (2..2 + m).collect();
    target.push(vocab.eos_id());

    println!("|x| = {n}, |y| = {m}, alpha = {}, beta = {}, gamma = {}\n", cfg.alpha, cfg.beta, cfg.gamma);
    for side in [PathSide::Aggressive, PathSide::Conservative] {
        let path = extreme_path(n, &target, &cfg, side);
        println!("{side:?} path, cumulative write lag {:.3}", cumulative_write_lag(&path, cfg.gamma));
        println!("{}", render_walk(&vocab, &path, cfg.gamma, n, target.len()));
    }
    let all = enumerate_oracle_paths(n, &target, &cfg, 100_000);
    println!("{} oracle paths in the band{}", all.paths.len(), if all.truncated { " (truncated)" } else { "" });
}
