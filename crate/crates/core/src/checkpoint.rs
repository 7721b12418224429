//! Checkpoint files: a plain-text manifest followed by raw little-endian
//! `f64` parameter values.
//!
//! ```text
//! varattn-checkpoint 1
//! model.variant = ved-vattn-hbar
//! ...
//! train.lr = 0.005
//! ...
//! step = 1200
//! src_vocab = w00 w01 ...
//! tgt_vocab = w00 w01 ...
//! param = src_embed 34x32
//! ...
//! payload
//! <raw bytes, parameters in manifest order>
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::config::{ModelConfig, TrainConfig};
use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::seq2seq::Model;
use crate::tensor::Tensor;

const MAGIC: &str = "varattn-checkpoint 1";
const PAYLOAD: &str = "payload";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub step: u64,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

impl Checkpoint {
    pub fn manifest(&self) -> String {
        let mut out = format!("{MAGIC}\n");
        for (k, v) in self.model.config.to_kv() {
            out.push_str(&format!("model.{k} = {v}\n"));
        }
        for (k, v) in self.train.to_kv() {
            out.push_str(&format!("train.{k} = {v}\n"));
        }
        out.push_str(&format!("step = {}\n", self.step));
        out.push_str(&format!("src_vocab = {}\n", self.src_vocab.content_tokens().join(" ")));
        out.push_str(&format!("tgt_vocab = {}\n", self.tgt_vocab.content_tokens().join(" ")));
        for p in self.model.params.iter() {
            let s = p.value().shape();
            out.push_str(&format!("param = {} {}x{}\n", p.name(), s[0], s[1]));
        }
        out.push_str(PAYLOAD);
        out.push('\n');
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = self.manifest().into_bytes();
        for p in self.model.params.iter() {
            for v in p.value().data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut offset = 0;
        let mut lines = Vec::new();
        loop {
            let rest = &bytes[offset..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| parse_err(lines.len() + 1, "manifest ends before the payload marker"))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| parse_err(lines.len() + 1, "manifest is not UTF-8"))?
                .trim_end_matches('\r')
                .to_string();
            offset += end + 1;
            if line == PAYLOAD {
                break;
            }
            lines.push(line);
        }
        if lines.first().map(String::as_str) != Some(MAGIC) {
            return Err(parse_err(1, format!("expected `{MAGIC}`")));
        }

        let mut model_kv = BTreeMap::new();
        let mut train_kv = BTreeMap::new();
        let mut other = BTreeMap::new();
        let mut layout: Vec<(String, usize, usize)> = Vec::new();
        for (i, line) in lines.iter().enumerate().skip(1) {
            let lineno = i + 1;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(lineno, format!("expected `key = value`, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim().to_string());
            if k == "param" {
                let (name, shape) = v
                    .split_once(' ')
                    .ok_or_else(|| parse_err(lineno, "parameter entry needs a name and a shape"))?;
                let (r, c) = shape
                    .split_once('x')
                    .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)))
                    .ok_or_else(|| parse_err(lineno, format!("bad parameter shape {shape:?}")))?;
                layout.push((name.to_string(), r, c));
            } else if let Some(k) = k.strip_prefix("model.") {
                model_kv.insert(k.to_string(), v);
            } else if let Some(k) = k.strip_prefix("train.") {
                train_kv.insert(k.to_string(), v);
            } else {
                other.insert(k.to_string(), v);
            }
        }
        let config = ModelConfig::from_kv(&model_kv)?;
        let train = TrainConfig::from_kv(&train_kv)?;
        let get = |k: &str| other.get(k).ok_or_else(|| Error::input(format!("checkpoint missing `{k}`")));
        let step = get("step")?
            .parse()
            .map_err(|_| Error::input("checkpoint `step` is not an integer"))?;
        let vocab = |k: &str| -> Result<Vocabulary> {
            Vocabulary::from_tokens(get(k)?.split_whitespace().map(String::from))
        };
        let src_vocab = vocab("src_vocab")?;
        let tgt_vocab = vocab("tgt_vocab")?;

        let payload = &bytes[offset..];
        let expected: usize = layout.iter().map(|(_, r, c)| r * c * 8).sum();
        if payload.len() != expected {
            return Err(Error::input(format!(
                "checkpoint payload has {} bytes, manifest lists {expected}",
                payload.len()
            )));
        }
        let mut params = ParamSet::new();
        let mut chunks = payload.chunks_exact(8);
        for (name, r, c) in layout {
            let data = chunks
                .by_ref()
                .take(r * c)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            params.add(name, Tensor::matrix(r, c, data)?)?;
        }
        let model = Model::from_parts(config, params)?;
        if src_vocab.len() != model.config.src_vocab || tgt_vocab.len() != model.config.tgt_vocab {
            return Err(Error::input("checkpoint vocabularies do not match the model configuration"));
        }
        Ok(Checkpoint {
            model,
            train,
            src_vocab,
            tgt_vocab,
            step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
