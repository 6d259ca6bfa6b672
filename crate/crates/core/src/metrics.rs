//! Latency metrics over per-word read counts and corpus BLEU.
//!
//! `g[j]` is the number of source words consumed when target word `j + 1`
//! was written. End-of-sequence markers are never part of `g`.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("trace has no emitted words")]
    NoWords,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus size mismatch: {hyps} hypotheses vs {refs} references")]
    SizeMismatch { hyps: usize, refs: usize },
    #[error("line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Average lagging together with whether the cutoff word was found.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lagging {
    pub al: f64,
    /// No word was written after the full source had been read; the average
    /// then runs over every emitted word.
    pub cutoff_missing: bool,
}

/// `AL = 1/tau * sum_{j<=tau} (g(j) - (j-1)/r)` with `r = |emitted| / |x|`
/// and `tau` the first word written after the whole source was read.
pub fn average_lagging(g: &[usize], source_len: usize) -> Result<Lagging, MetricError> {
    if g.is_empty() || source_len == 0 {
        return Err(MetricError::NoWords);
    }
    let rate = g.len() as f64 / source_len as f64;
    let (tau, cutoff_missing) = match g.iter().position(|&r| r >= source_len) {
        Some(i) => (i + 1, false),
        None => (g.len(), true),
    };
    let sum: f64 = g[..tau].iter().enumerate().map(|(j, &r)| r as f64 - j as f64 / rate).sum();
    Ok(Lagging { al: sum / tau as f64, cutoff_missing })
}

/// `AP = sum_j g(j) / (|x| * |emitted|)`.
pub fn average_proportion(g: &[usize], source_len: usize) -> Result<f64, MetricError> {
    if g.is_empty() || source_len == 0 {
        return Err(MetricError::NoWords);
    }
    let total: usize = g.iter().sum();
    Ok(total as f64 / (source_len * g.len()) as f64)
}

/// Consecutive wait: mean reads per non-empty gap before a write.
/// Returns `None` when the trace never reads.
pub fn consecutive_wait(g: &[usize]) -> Option<f64> {
    let mut prev = 0;
    let (mut reads, mut gaps) = (0usize, 0usize);
    for &r in g {
        if r > prev {
            reads += r - prev;
            gaps += 1;
        }
        prev = r;
    }
    (gaps > 0).then(|| reads as f64 / gaps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyReport {
    pub al: f64,
    pub ap: f64,
    /// `0.0` when undefined; see `cw_defined`.
    pub cw: f64,
    pub cw_defined: bool,
    pub al_cutoff_missing: bool,
}

pub fn latency(g: &[usize], source_len: usize) -> Result<LatencyReport, MetricError> {
    let lag = average_lagging(g, source_len)?;
    let ap = average_proportion(g, source_len)?;
    let cw = consecutive_wait(g);
    Ok(LatencyReport {
        al: lag.al,
        ap,
        cw: cw.unwrap_or(0.0),
        cw_defined: cw.is_some(),
        al_cutoff_missing: lag.cutoff_missing,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    pub bleu: f64,
    /// Unsmoothed modified precisions for n = 1..4.
    pub precisions: [f64; 4],
    /// Precisions actually combined (add-one smoothed for n >= 2).
    pub smoothed: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: Eq + std::hash::Hash + Clone>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level 4-gram BLEU with one reference per sentence; precisions for
/// n >= 2 use add-one smoothing.
pub fn corpus_bleu<T: Eq + std::hash::Hash + Clone>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
) -> Result<BleuReport, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::SizeMismatch { hyps: hypotheses.len(), refs: references.len() });
    }
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (g, c) in &hc {
                matches[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; 4];
    let mut smoothed = [0.0; 4];
    for i in 0..4 {
        precisions[i] = if totals[i] == 0 { 0.0 } else { matches[i] as f64 / totals[i] as f64 };
        smoothed[i] = if i == 0 {
            precisions[0]
        } else {
            (matches[i] + 1) as f64 / (totals[i] + 1) as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let bleu = if smoothed[0] == 0.0 {
        0.0
    } else {
        let log_mean = smoothed.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport { bleu, precisions, smoothed, brevity_penalty, hyp_len, ref_len })
}

/// Fraction of reference tokens reproduced at the same position.
pub fn token_accuracy<T: PartialEq>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (h, r) in hypotheses.iter().zip(references) {
        total += r.len();
        hit += h.iter().zip(r).filter(|(a, b)| a == b).count();
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// Fraction of sentences whose token at `position` matches the reference.
pub fn position_accuracy<T: PartialEq>(hypotheses: &[Vec<T>], references: &[Vec<T>], position: usize) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (h, r) in hypotheses.iter().zip(references) {
        if let Some(want) = r.get(position) {
            total += 1;
            hit += usize::from(h.get(position) == Some(want));
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

/// One point of a latency/quality sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub t: f64,
    pub al: f64,
    pub ap: f64,
    pub cw: f64,
    pub bleu: f64,
}

pub const CSV_HEADER: &str = "t,AL,AP,CW,BLEU";

/// Renders rows with four decimals; formatting does not depend on locale.
pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{:.4},{:.4},{:.4},{:.4},{:.4}", r.t, r.al, r.ap, r.cw, r.bleu).unwrap();
    }
    out
}

pub fn rows_from_csv(text: &str) -> Result<Vec<SweepRow>, MetricError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(MetricError::Csv { line: 1, msg: format!("expected header {CSV_HEADER}") }),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| MetricError::Csv { line: i + 1, msg: e.to_string() })?;
        if vals.len() != 5 {
            return Err(MetricError::Csv { line: i + 1, msg: format!("expected 5 fields, got {}", vals.len()) });
        }
        rows.push(SweepRow { t: vals[0], al: vals[1], ap: vals[2], cw: vals[3], bleu: vals[4] });
    }
    Ok(rows)
}
