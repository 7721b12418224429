//! Tokenization, vocabularies, parallel corpora and synthetic tasks.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::noise::rng_from;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

/// Whitespace tokenization with lowercasing.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Rank tokens by frequency (ties lexicographic) and keep the top
    /// `max_size - 4`; specials take ids 0..4.
    pub fn build<S: AsRef<str>>(sequences: &[Vec<S>], max_size: usize) -> Result<Self> {
        if max_size <= NUM_SPECIAL {
            return Err(Error::contract(format!(
                "vocabulary max size must exceed {NUM_SPECIAL}, got {max_size}"
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for tok in seq {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        for special in SPECIAL_TOKENS {
            counts.remove(special);
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - NUM_SPECIAL);
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()))
    }

    /// Build from non-special tokens in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut all: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::input(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[NUM_SPECIAL..]
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn encode(&self, line: &str) -> Vec<usize> {
        self.encode_tokens(&tokenize(line))
    }

    /// Drops special ids.
    pub fn decode_tokens(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter()
            .filter(|&&i| i >= NUM_SPECIAL)
            .filter_map(|&i| self.token(i))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        self.decode_tokens(ids).join(" ")
    }
}

/// A source/target pair of raw tokens.
pub type TextPair = (Vec<String>, Vec<String>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    File(String),
    Synthetic(SyntheticTaskSpec),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
    pub provenance: Provenance,
}

impl ParallelCorpus {
    pub fn from_text(
        pairs: &[TextPair],
        src_vocab: &Vocabulary,
        tgt_vocab: &Vocabulary,
        provenance: Provenance,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(pairs.len());
        for (i, (s, t)) in pairs.iter().enumerate() {
            if s.is_empty() || t.is_empty() {
                return Err(Error::input(format!("pair {i} has an empty side")));
            }
            out.push((src_vocab.encode_tokens(s), tgt_vocab.encode_tokens(t)));
        }
        Ok(ParallelCorpus {
            pairs: out,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Parse `source<TAB>target` lines. CRLF endings are accepted.
pub fn parse_tsv(text: &str) -> Result<Vec<TextPair>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let (src, tgt) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: line_no,
            message: "missing TAB separator".into(),
        })?;
        let (src, tgt) = (tokenize(src), tokenize(tgt));
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty source or target".into(),
            });
        }
        pairs.push((src, tgt));
    }
    Ok(pairs)
}

pub fn read_tsv(path: &Path) -> Result<Vec<TextPair>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text)
}

pub fn load_tsv(path: &Path, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Result<ParallelCorpus> {
    let pairs = read_tsv(path)?;
    ParallelCorpus::from_text(
        &pairs,
        src_vocab,
        tgt_vocab,
        Provenance::File(path.display().to_string()),
    )
}

pub fn format_tsv(pairs: &[TextPair]) -> String {
    let mut out = String::new();
    for (s, t) in pairs {
        out.push_str(&s.join(" "));
        out.push('\t');
        out.push_str(&t.join(" "));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Reverse,
    OneToMany,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Reverse => "reverse",
            Task::OneToMany => "one-to-many",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reverse" => Ok(Task::Reverse),
            "one-to-many" => Ok(Task::OneToMany),
            other => Err(Error::input(format!(
                "unknown task `{other}` (expected reverse or one-to-many)"
            ))),
        }
    }
}

/// Deterministic rewrites of a source used as the valid targets of the
/// one-to-many task, in template order.
pub const TEMPLATE_NAMES: [&str; 5] = ["reverse", "sorted", "first-half-repeated", "copy", "rotate-left"];

pub fn apply_template(template: usize, src: &[String]) -> Vec<String> {
    match template {
        0 => src.iter().rev().cloned().collect(),
        1 => {
            let mut v = src.to_vec();
            v.sort();
            v
        }
        2 => {
            let half = &src[..src.len().div_ceil(2)];
            half.iter().chain(half).cloned().collect()
        }
        3 => src.to_vec(),
        4 => src.iter().cycle().skip(1).take(src.len()).cloned().collect(),
        _ => panic!("template index {template} out of range"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticTaskSpec {
    pub task: Task,
    /// Number of content token types (specials excluded).
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub pairs: usize,
    /// Valid targets per source for the one-to-many task.
    pub templates_per_source: usize,
    /// Size of the source pool the one-to-many pairs are drawn from; each
    /// source then recurs with different templates. 0 draws a fresh source per pair.
    pub unique_sources: usize,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn reverse(vocab_size: usize, min_len: usize, max_len: usize, pairs: usize, seed: u64) -> Self {
        SyntheticTaskSpec {
            task: Task::Reverse,
            vocab_size,
            min_len,
            max_len,
            pairs,
            templates_per_source: 1,
            unique_sources: 0,
            seed,
        }
    }

    pub fn one_to_many(
        vocab_size: usize,
        min_len: usize,
        max_len: usize,
        pairs: usize,
        templates_per_source: usize,
        seed: u64,
    ) -> Self {
        SyntheticTaskSpec {
            task: Task::OneToMany,
            vocab_size,
            min_len,
            max_len,
            pairs,
            templates_per_source,
            unique_sources: pairs / 5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.min_len == 0 || self.min_len > self.max_len || self.pairs == 0 {
            return Err(Error::input(format!("invalid synthetic spec {self:?}")));
        }
        if self.task == Task::OneToMany
            && !(2..=TEMPLATE_NAMES.len()).contains(&self.templates_per_source)
        {
            return Err(Error::input(format!(
                "one-to-many needs 2..={} templates per source, got {}",
                TEMPLATE_NAMES.len(),
                self.templates_per_source
            )));
        }
        Ok(())
    }

    pub fn token_name(&self, i: usize) -> String {
        let width = (self.vocab_size.saturating_sub(1)).to_string().len();
        format!("w{i:0width$}")
    }

    fn random_source(&self, rng: &mut impl Rng) -> Vec<String> {
        let len = rng.random_range(self.min_len..=self.max_len);
        (0..len)
            .map(|_| self.token_name(rng.random_range(0..self.vocab_size)))
            .collect()
    }

    /// Targets a source admits under this task.
    pub fn valid_targets(&self, src: &[String]) -> Vec<Vec<String>> {
        match self.task {
            Task::Reverse => vec![apply_template(0, src)],
            Task::OneToMany => (0..self.templates_per_source)
                .map(|t| apply_template(t, src))
                .collect(),
        }
    }

    fn target_for(&self, src: &[String], rng: &mut impl Rng) -> Vec<String> {
        match self.task {
            Task::Reverse => apply_template(0, src),
            Task::OneToMany => apply_template(rng.random_range(0..self.templates_per_source), src),
        }
    }

    pub fn generate(&self) -> Result<Vec<TextPair>> {
        Ok(self.generate_split(0)?.0)
    }

    /// Training pairs plus `heldout` pairs whose sources never occur in training.
    pub fn generate_split(&self, heldout: usize) -> Result<(Vec<TextPair>, Vec<TextPair>)> {
        self.validate()?;
        let mut rng = rng_from(self.seed);
        let pooled = self.task == Task::OneToMany && self.unique_sources > 0;
        let mut seen: HashSet<Vec<String>> = HashSet::new();
        let mut train = Vec::with_capacity(self.pairs);
        if pooled {
            let mut pool = Vec::with_capacity(self.unique_sources);
            let mut attempts = 0;
            while pool.len() < self.unique_sources {
                let s = self.random_source(&mut rng);
                attempts += 1;
                if seen.insert(s.clone()) {
                    pool.push(s);
                } else if attempts > 100 * self.unique_sources {
                    return Err(Error::input("source space too small for requested pool"));
                }
            }
            for _ in 0..self.pairs {
                let src = pool.choose(&mut rng).expect("non-empty pool").clone();
                let tgt = self.target_for(&src, &mut rng);
                train.push((src, tgt));
            }
        } else {
            for _ in 0..self.pairs {
                let src = self.random_source(&mut rng);
                seen.insert(src.clone());
                let tgt = self.target_for(&src, &mut rng);
                train.push((src, tgt));
            }
        }
        let mut held = Vec::with_capacity(heldout);
        let mut attempts = 0;
        while held.len() < heldout {
            let src = self.random_source(&mut rng);
            attempts += 1;
            if attempts > 1000 * heldout.max(1) {
                return Err(Error::input("source space too small for held-out split"));
            }
            if !seen.insert(src.clone()) {
                continue;
            }
            let tgt = self.target_for(&src, &mut rng);
            held.push((src, tgt));
        }
        Ok((train, held))
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.kv_pairs() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    fn kv_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("task", self.task.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("min_len", self.min_len.to_string()),
            ("max_len", self.max_len.to_string()),
            ("pairs", self.pairs.to_string()),
            ("templates_per_source", self.templates_per_source.to_string()),
            ("unique_sources", self.unique_sources.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::input(format!("synthetic spec missing `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::input(format!("synthetic spec `{k}` is not an integer")))
        };
        let spec = SyntheticTaskSpec {
            task: get("task")?.parse()?,
            vocab_size: num("vocab_size")?,
            min_len: num("min_len")?,
            max_len: num("max_len")?,
            pairs: num("pairs")?,
            templates_per_source: num("templates_per_source")?,
            unique_sources: num("unique_sources")?,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::input("synthetic spec `seed` is not an integer"))?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn frequency_order() {
        let v = Vocabulary::build(&[toks("a b a")], 10).unwrap();
        assert_eq!((v.id("a"), v.id("b")), (4, 5));
    }

    #[test]
    fn lexicographic_ties() {
        let v = Vocabulary::build(&[toks("b a")], 10).unwrap();
        assert_eq!((v.id("a"), v.id("b")), (4, 5));
    }

    #[test]
    fn overflow_maps_to_unk() {
        let v = Vocabulary::build(&[toks("c b a a")], 5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.encode("b c"), vec![UNK, UNK]);
        assert!(Vocabulary::build(&[toks("a")], 4).is_err());
    }

    #[test]
    fn encode_lowercases_and_decode_drops_specials() {
        let v = Vocabulary::build(&[toks("a b")], 10).unwrap();
        assert_eq!(v.encode("A b"), vec![v.id("a"), v.id("b")]);
        assert_eq!(v.encode("zzz"), vec![UNK]);
        assert_eq!(v.decode(&[SOS, v.id("b"), UNK, v.id("a"), EOS]), "b a");
        assert_eq!(v.decode(&v.encode("b a b")), "b a b");
    }

    #[test]
    fn tsv_parsing() {
        let pairs = parse_tsv("a b\tc d\r\ne\tf\n").unwrap();
        assert_eq!(pairs[0], (toks("a b"), toks("c d")));
        assert_eq!(pairs[1], (toks("e"), toks("f")));
        match parse_tsv("a b\tc\nno tab here\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_tsv("a\t \n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_tsv("\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn templates() {
        let s = toks("w2 w0 w1");
        assert_eq!(apply_template(0, &s), toks("w1 w0 w2"));
        assert_eq!(apply_template(1, &s), toks("w0 w1 w2"));
        assert_eq!(apply_template(2, &s), toks("w2 w0 w2 w0"));
        assert_eq!(apply_template(3, &s), s);
        assert_eq!(apply_template(4, &s), toks("w0 w1 w2"));
    }

    #[test]
    fn reverse_task_targets_are_reversed() {
        let spec = SyntheticTaskSpec::reverse(30, 4, 10, 200, 1);
        for (s, t) in spec.generate().unwrap() {
            assert!((4..=10).contains(&s.len()));
            let mut r = s.clone();
            r.reverse();
            assert_eq!(r, t);
        }
    }

    #[test]
    fn one_to_many_targets_come_from_templates() {
        let spec = SyntheticTaskSpec::one_to_many(20, 4, 8, 600, 3, 2);
        let pairs = spec.generate().unwrap();
        let mut by_source: HashMap<Vec<String>, HashSet<Vec<String>>> = HashMap::new();
        for (s, t) in &pairs {
            assert!(spec.valid_targets(s).contains(t));
            by_source.entry(s.clone()).or_default().insert(t.clone());
        }
        assert!(by_source.values().all(|ts| ts.len() <= 3));
        assert!(by_source.values().any(|ts| ts.len() == 3));
    }

    #[test]
    fn heldout_sources_are_unseen() {
        let spec = SyntheticTaskSpec::one_to_many(20, 4, 8, 300, 3, 5);
        let (train, held) = spec.generate_split(50).unwrap();
        let seen: HashSet<_> = train.iter().map(|p| p.0.clone()).collect();
        assert_eq!(held.len(), 50);
        assert!(held.iter().all(|p| !seen.contains(&p.0)));
    }

    #[test]
    fn spec_kv_round_trip() {
        let spec = SyntheticTaskSpec::one_to_many(25, 3, 9, 1000, 4, 42);
        assert_eq!(SyntheticTaskSpec::from_kv(&spec.to_kv()).unwrap(), spec);
        assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
    }
}
