//! Corpus BLEU, unigram entropy and distinct-n.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::Hash;

use crate::config::fmt_f64;
use crate::error::{Error, Result};

fn ngram_counts<T: Hash + Eq>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for gram in seq.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and hypothesis n-gram total, summed over the corpus.
pub fn modified_precision_counts<T: Hash + Eq>(hypotheses: &[Vec<T>], references: &[Vec<T>], n: usize) -> (usize, usize) {
    let mut matched = 0;
    let mut total = 0;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        let ref_counts = ngram_counts(reference, n);
        for (gram, count) in ngram_counts(hyp, n) {
            matched += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            total += count;
        }
    }
    (matched, total)
}

/// `exp(min(0, 1 - r/c))` for total reference length `r` and hypothesis length `c`.
pub fn brevity_penalty(ref_len: usize, hyp_len: usize) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    (1.0 - ref_len as f64 / hyp_len as f64).min(0.0).exp()
}

/// Corpus BLEU with one reference per hypothesis: geometric mean of the
/// clipped precisions of orders `1..=max_n`, times the brevity penalty.
/// Any order without matches gives 0.
pub fn corpus_bleu<T: Hash + Eq>(hypotheses: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::input("BLEU over an empty corpus"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::input(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if !(1..=4).contains(&max_n) {
        return Err(Error::input(format!("BLEU order must be in 1..=4, got {max_n}")));
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (matched, total) = modified_precision_counts(hypotheses, references, n);
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let hyp_len = hypotheses.iter().map(Vec::len).sum();
    let ref_len = references.iter().map(Vec::len).sum();
    Ok(brevity_penalty(ref_len, hyp_len) * (log_sum / max_n as f64).exp())
}

/// Unigram entropy in nats over every token of every sequence.
pub fn entropy<T: Hash + Eq>(sequences: &[Vec<T>]) -> Result<f64> {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    let mut total = 0usize;
    for tok in sequences.iter().flatten() {
        *counts.entry(tok).or_insert(0) += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::input("entropy of an empty token pool"));
    }
    let n = total as f64;
    let mut counts: Vec<usize> = counts.into_values().collect();
    counts.sort_unstable();
    Ok(counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Entropy of each source's own sample pool, averaged over sources.
/// Sources whose samples are all empty are skipped.
pub fn per_source_entropy<T: Hash + Eq>(groups: &[Vec<Vec<T>>]) -> Result<f64> {
    let values: Vec<f64> = groups
        .iter()
        .filter(|g| g.iter().any(|s| !s.is_empty()))
        .map(|g| entropy(g))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::input("entropy of an empty token pool"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Unique n-grams divided by total n-grams over the whole set.
pub fn distinct_n<T: Hash + Eq>(sequences: &[Vec<T>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::input("distinct-n needs n >= 1"));
    }
    let mut unique: HashSet<&[T]> = HashSet::new();
    let mut total = 0usize;
    for seq in sequences {
        if seq.len() >= n {
            for gram in seq.windows(n) {
                unique.insert(gram);
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::input(format!("no {n}-grams in the generation set")));
    }
    Ok(unique.len() as f64 / total as f64)
}

/// Quality and diversity numbers for one generation set. Diversity fields
/// are absent for MAP output.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub bleu: [f64; 4],
    pub diversity: Option<Diversity>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diversity {
    pub entropy_corpus: f64,
    pub entropy_per_source_avg: f64,
    pub dist1: f64,
    pub dist2: f64,
}

impl Diversity {
    /// Diversity of per-source sample groups.
    pub fn of_samples<T: Hash + Eq + Clone>(groups: &[Vec<Vec<T>>]) -> Result<Self> {
        let pool: Vec<Vec<T>> = groups.iter().flatten().cloned().collect();
        Ok(Diversity {
            entropy_corpus: entropy(&pool)?,
            entropy_per_source_avg: per_source_entropy(groups)?,
            dist1: distinct_n(&pool, 1)?,
            dist2: distinct_n(&pool, 2).unwrap_or(0.0),
        })
    }
}

impl MetricsReport {
    /// Report for `groups[s]` (one or more hypotheses for source `s`)
    /// against `references[s]`. With several hypotheses per source, BLEU is
    /// computed per sample index and averaged; diversity is included when
    /// `sampled` is set.
    pub fn evaluate<T: Hash + Eq + Clone>(groups: &[Vec<Vec<T>>], references: &[Vec<T>], sampled: bool) -> Result<Self> {
        if groups.len() != references.len() {
            return Err(Error::input(format!(
                "{} generation blocks but {} references",
                groups.len(),
                references.len()
            )));
        }
        let per_source = groups.first().map_or(0, Vec::len);
        if per_source == 0 || groups.iter().any(|g| g.len() != per_source) {
            return Err(Error::input("every source needs the same non-zero number of generations"));
        }
        let mut bleu = [0.0; 4];
        for k in 0..per_source {
            let hyps: Vec<Vec<T>> = groups.iter().map(|g| g[k].clone()).collect();
            for (n, b) in bleu.iter_mut().enumerate() {
                *b += corpus_bleu(&hyps, references, n + 1)? / per_source as f64;
            }
        }
        let diversity = if sampled { Some(Diversity::of_samples(groups)?) } else { None };
        Ok(MetricsReport { bleu, diversity })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, b) in self.bleu.iter().enumerate() {
            writeln!(f, "bleu{} = {}", n + 1, fmt_f64(*b))?;
        }
        if let Some(d) = &self.diversity {
            writeln!(f, "entropy_corpus = {}", fmt_f64(d.entropy_corpus))?;
            writeln!(f, "entropy_per_source_avg = {}", fmt_f64(d.entropy_per_source_avg))?;
            writeln!(f, "dist1 = {}", fmt_f64(d.dist1))?;
            writeln!(f, "dist2 = {}", fmt_f64(d.dist2))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn clipped_unigram_precision() {
        let hyp = vec![words("the the the the the the the")];
        let reference = vec![words("the cat is on the mat")];
        assert_eq!(modified_precision_counts(&hyp, &reference, 1), (2, 7));
        let bleu1 = corpus_bleu(&hyp, &reference, 1).unwrap();
        assert!((bleu1 - 2.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_match_and_brevity() {
        let a = vec![words("a b c d"), words("e f g h")];
        assert_eq!(corpus_bleu(&a, &a, 4).unwrap(), 1.0);
        let short = vec![words("a b")];
        let reference = vec![words("a b c d")];
        let b = corpus_bleu(&short, &reference, 2).unwrap();
        assert!((b - (-1.0f64).exp()).abs() < 1e-12);
        assert!(corpus_bleu::<String>(&[], &[], 4).is_err());
    }

    #[test]
    fn entropy_cases() {
        let pool = vec![words("a a b")];
        let expected = -(2.0f64 / 3.0) * (2.0f64 / 3.0).ln() - (1.0f64 / 3.0) * (1.0f64 / 3.0).ln();
        assert!((entropy(&pool).unwrap() - expected).abs() < 1e-12);
        assert_eq!(entropy(&[words("x x x")]).unwrap(), 0.0);
        assert!((entropy(&[words("a b c d")]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(entropy::<String>(&[vec![]]).is_err());
    }

    #[test]
    fn distinct_cases() {
        let s = vec![words("a a b")];
        assert!((distinct_n(&s, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(distinct_n(&s, 2).unwrap(), 1.0);
        let same = vec![words("x"), words("x"), words("x")];
        assert!((distinct_n(&same, 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(distinct_n(&same, 2).is_err());
    }

    #[test]
    fn report_layout() {
        let groups = vec![vec![words("a b c"), words("a b d")]];
        let refs = vec![words("a b c")];
        let text = MetricsReport::evaluate(&groups, &refs, true).unwrap().to_string();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(
            keys,
            ["bleu1", "bleu2", "bleu3", "bleu4", "entropy_corpus", "entropy_per_source_avg", "dist1", "dist2"]
        );
        let map = MetricsReport::evaluate(&[vec![words("a b c")]], &refs, false).unwrap();
        assert_eq!(map.to_string().lines().count(), 4);
        assert_eq!(map.bleu[2], 1.0);
        assert_eq!(map.bleu[3], 0.0);
    }
}
