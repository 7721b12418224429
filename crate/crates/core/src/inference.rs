//! Greedy decoding with latent variables fixed at their means (MAP) or sampled.
//!
//! Sampling only perturbs the latent variables; token choice is always the
//! argmax, with ties going to the smallest id. Each sample owns a noise
//! stream seeded by its subseed, so a sample's output depends only on the
//! model, the source and the subseed.

use crate::autodiff::Graph;
use crate::data::{EOS, PAD, SOS};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, NoiseSource, PerRowNoise};
use crate::seq2seq::{AttentionDraw, Batch, Model};

/// Rows decoded together on one graph.
const DECODE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Overrides the model's length limit when set.
    pub max_len: Option<usize>,
    /// When false a zero attention vector is fed to the decoder.
    pub attention_enabled: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            max_len: None,
            attention_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Map,
    Sample { n: usize, seed: u64 },
}

/// One decoded sequence. `subseed` is `None` for MAP output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub subseed: Option<u64>,
    pub tokens: Vec<usize>,
}

impl Generation {
    /// Tokens with a trailing EOS removed.
    pub fn content(&self) -> &[usize] {
        strip_eos(&self.tokens)
    }
}

pub fn strip_eos(tokens: &[usize]) -> &[usize] {
    match tokens.last() {
        Some(&EOS) => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// Subseeds for `n` samples drawn under `seed`, in draw order.
pub fn sample_subseeds(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|k| derive_seed(seed, k)).collect()
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

enum Draw<'n> {
    Map,
    Noise(&'n mut dyn NoiseSource),
}

fn decode_rows(model: &Model, sources: &[Vec<usize>], mut draw: Draw<'_>, opts: DecodeOptions) -> Result<Vec<Vec<usize>>> {
    let v = model.variant();
    let rows = sources.len();
    let mut g = Graph::new();
    let enc = model.encode(&mut g, sources)?;
    let z = if v.is_variational() {
        let q = model.recognize_latent(&mut g, &enc)?;
        Some(match &mut draw {
            Draw::Map => q.mean,
            Draw::Noise(noise) => {
                let eps = g.constant(noise.draw(rows, model.config.latent_dim));
                q.sample(&mut g, eps)?
            }
        })
    } else {
        None
    };
    let mut state = model.init_decoder(&mut g, z, &enc)?;
    let limits: Vec<usize> = sources
        .iter()
        .map(|s| opts.max_len.unwrap_or_else(|| model.config.decode_len_for(s.len())))
        .collect();
    let longest = limits.iter().copied().max().unwrap_or(0);
    let mut out = vec![Vec::new(); rows];
    let mut done: Vec<bool> = limits.iter().map(|&l| l == 0).collect();
    let mut prev = vec![SOS; rows];
    for _ in 0..longest {
        if done.iter().all(|&d| d) {
            break;
        }
        let attn_draw = match &mut draw {
            Draw::Noise(noise) if v.has_variational_attention() => AttentionDraw::Sample(&mut **noise),
            _ => AttentionDraw::Mean,
        };
        let attn = model.attention_input(&mut g, &state, &enc, None, attn_draw, opts.attention_enabled, false)?;
        let emb = model.embed_target(&mut g, &prev)?;
        let (logits, next) = model.decoder_step(&mut g, state, emb, attn.map(|a| a.vector))?;
        state = next;
        let values = g.value(logits);
        for r in 0..rows {
            let tok = argmax(values.row(r));
            prev[r] = tok;
            if !done[r] {
                out[r].push(tok);
                done[r] = tok == EOS || out[r].len() >= limits[r];
            }
        }
    }
    Ok(out)
}

fn chunked<F>(sources: &[Vec<usize>], mut f: F) -> Result<Vec<Vec<usize>>>
where
    F: FnMut(&[Vec<usize>], usize) -> Result<Vec<Vec<usize>>>,
{
    let mut out = Vec::with_capacity(sources.len());
    for (k, chunk) in sources.chunks(DECODE_CHUNK).enumerate() {
        out.extend(f(chunk, k * DECODE_CHUNK)?);
    }
    Ok(out)
}

/// Greedy decoding with `z` and every attention vector at their posterior means.
pub fn decode_map(model: &Model, source: &[usize]) -> Result<Vec<usize>> {
    let mut out = decode_map_batch(model, &[source.to_vec()], DecodeOptions::default())?;
    Ok(out.pop().expect("one row"))
}

pub fn decode_map_batch(model: &Model, sources: &[Vec<usize>], opts: DecodeOptions) -> Result<Vec<Vec<usize>>> {
    chunked(sources, |chunk, _| decode_rows(model, chunk, Draw::Map, opts))
}

/// Sampling-path decoding driven by an explicit noise source, for any
/// variant. With zero noise it reduces to MAP decoding.
pub fn decode_with_noise(
    model: &Model,
    sources: &[Vec<usize>],
    noise: &mut dyn NoiseSource,
    opts: DecodeOptions,
) -> Result<Vec<Vec<usize>>> {
    decode_rows(model, sources, Draw::Noise(noise), opts)
}

fn require_latent(model: &Model) -> Result<()> {
    if !model.variant().is_variational() {
        return Err(Error::contract(format!(
            "{} has no latent variables to sample",
            model.variant()
        )));
    }
    Ok(())
}

/// `n` samples for one source, in draw order.
pub fn decode_sample(model: &Model, source: &[usize], n: usize, seed: u64) -> Result<Vec<Generation>> {
    let mut out = decode_samples_batch(model, &[source.to_vec()], n, seed, DecodeOptions::default())?;
    Ok(out.pop().expect("one source"))
}

/// `n` samples for each source. Every source uses the same subseeds.
pub fn decode_samples_batch(
    model: &Model,
    sources: &[Vec<usize>],
    n: usize,
    seed: u64,
    opts: DecodeOptions,
) -> Result<Vec<Vec<Generation>>> {
    require_latent(model)?;
    if n == 0 {
        return Err(Error::input("sample count must be at least 1"));
    }
    let subseeds = sample_subseeds(seed, n);
    let rows: Vec<(usize, usize)> = (0..sources.len()).flat_map(|s| (0..n).map(move |k| (s, k))).collect();
    let expanded: Vec<Vec<usize>> = rows.iter().map(|&(s, _)| sources[s].clone()).collect();
    let decoded = chunked(&expanded, |chunk, offset| {
        let seeds: Vec<u64> = (offset..offset + chunk.len()).map(|i| subseeds[rows[i].1]).collect();
        decode_with_noise(model, chunk, &mut PerRowNoise::new(&seeds), opts)
    })?;
    let mut out: Vec<Vec<Generation>> = vec![Vec::with_capacity(n); sources.len()];
    for (&(s, k), tokens) in rows.iter().zip(decoded) {
        out[s].push(Generation {
            subseed: Some(subseeds[k]),
            tokens,
        });
    }
    Ok(out)
}

/// Run a decode request.
pub fn decode(model: &Model, source: &[usize], mode: DecodeMode) -> Result<Vec<Generation>> {
    match mode {
        DecodeMode::Map => Ok(vec![Generation {
            subseed: None,
            tokens: decode_map(model, source)?,
        }]),
        DecodeMode::Sample { n, seed } => decode_sample(model, source, n, seed),
    }
}

/// Fraction of next-token predictions (including the final EOS) that match
/// the reference under teacher forcing, with latent variables at their means.
pub fn teacher_forced_accuracy(model: &Model, pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::input("no pairs to score"));
    }
    let v = model.variant();
    let (mut hits, mut total) = (0usize, 0usize);
    for chunk in pairs.chunks(DECODE_CHUNK) {
        let batch = Batch::from_pairs(chunk);
        let mut g = Graph::new();
        let enc = model.encode(&mut g, &batch.sources)?;
        let z = if v.is_variational() {
            Some(model.recognize_latent(&mut g, &enc)?.mean)
        } else {
            None
        };
        let mut state = model.init_decoder(&mut g, z, &enc)?;
        let steps = batch.targets.iter().map(Vec::len).max().unwrap_or(0);
        for j in 0..steps {
            let attn = model.attention_input(&mut g, &state, &enc, None, AttentionDraw::Mean, true, false)?;
            let prev: Vec<usize> = batch.inputs.iter().map(|s| s.get(j).copied().unwrap_or(PAD)).collect();
            let emb = model.embed_target(&mut g, &prev)?;
            let (logits, next) = model.decoder_step(&mut g, state, emb, attn.map(|a| a.vector))?;
            state = next;
            let values = g.value(logits);
            for (r, tgt) in batch.targets.iter().enumerate() {
                if let Some(&t) = tgt.get(j) {
                    total += 1;
                    hits += usize::from(argmax(values.row(r)) == t);
                }
            }
        }
    }
    Ok(hits as f64 / total as f64)
}
