//! Self-describing model files.
//!
//! Layout: the magic line `FBGEN1`, one line of JSON header (role, model
//! config, vocabulary, token conventions), then the parameters as
//! little-endian `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::codec::Codec;
use super::seq2seq::{SeqModel, SeqModelConfig};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::storyline::TokenConventions;

pub const MAGIC: &str = "FBGEN1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Storyline,
    Story,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    role: ModelRole,
    config: SeqModelConfig,
    n_params: usize,
    vocab_hash: String,
    keep_first_k: usize,
    use_prompts: bool,
    conventions: TokenConventions,
    vocab: Vocabulary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: ModelRole,
    pub model: SeqModel,
    pub codec: Codec,
}

pub fn save_checkpoint(
    path: &Path,
    role: ModelRole,
    model: &SeqModel,
    codec: &Codec,
) -> Result<()> {
    let header = Header {
        role,
        config: model.config().clone(),
        n_params: model.n_params(),
        vocab_hash: codec.vocab.fingerprint(),
        keep_first_k: codec.keep_first_k,
        use_prompts: codec.use_prompts,
        conventions: codec.conv.clone(),
        vocab: codec.vocab.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for p in model.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(bad(format!("missing {MAGIC} magic")));
    }
    line.clear();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
    if header.vocab.fingerprint() != header.vocab_hash {
        return Err(bad("vocabulary hash does not match its tokens".into()));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != header.n_params * 8 {
        return Err(bad(format!("expected {} parameters", header.n_params)));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let model = SeqModel::from_params(header.config, header.vocab.len(), params)?;
    Ok(Checkpoint {
        role: header.role,
        model,
        codec: Codec {
            vocab: header.vocab,
            conv: header.conventions,
            keep_first_k: header.keep_first_k,
            use_prompts: header.use_prompts,
        },
    })
}
