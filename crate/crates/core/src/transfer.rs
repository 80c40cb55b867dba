//! Alphabets, checkpoint files and output-layer reinitialisation for
//! cross-lingual transfer.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "ASRZ"  u32 version
//! u32 metadata length, metadata bytes (UTF-8 key=value lines)
//! repeated until EOF:
//!   u16 name length, name bytes, u8 rank, rank × u64 dims, binary32 payload (row-major)
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::features::FeatureConfig;
use crate::model::{glorot_fill, Dense, ModelDims, ModelParams, N_LAYERS};
use crate::numerics::{Matrix, Rng};

pub const MAGIC: &[u8; 4] = b"ASRZ";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlphabetError {
    #[error("alphabet is empty")]
    Empty,
    #[error("duplicate character {0:?} in alphabet")]
    Duplicate(char),
    #[error("line {line}: expected exactly one character, got {text:?}")]
    BadLine { line: usize, text: String },
}

/// Ordered character set; the CTC blank takes index `len()`.
#[derive(Clone, PartialEq, Eq)]
pub struct Alphabet {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl fmt::Debug for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Alphabet({:?})", self.chars.iter().collect::<String>())
    }
}

impl Alphabet {
    pub fn new(chars: Vec<char>) -> Result<Self, AlphabetError> {
        if chars.is_empty() {
            return Err(AlphabetError::Empty);
        }
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(AlphabetError::Duplicate(c));
            }
        }
        Ok(Alphabet { chars, index })
    }

    /// Parses the one-character-per-line file form; `#` lines and empty lines are skipped.
    pub fn parse(text: &str) -> Result<Self, AlphabetError> {
        let mut chars = Vec::new();
        for (i, line) in text.split('\n').enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => {
                    return Err(AlphabetError::BadLine {
                        line: i + 1,
                        text: line.to_string(),
                    })
                }
            }
        }
        Alphabet::new(chars)
    }

    pub fn to_file_string(&self) -> String {
        self.chars.iter().map(|c| format!("{c}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn blank(&self) -> usize {
        self.chars.len()
    }

    /// Output width of a model over this alphabet.
    pub fn n_labels(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    /// Label indices of `text`, or the first character not in the alphabet.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, char> {
        text.chars().map(|c| self.index_of(c).ok_or(c)).collect()
    }

    pub fn decode(&self, labels: &[usize]) -> String {
        labels.iter().map(|&l| self.chars[l]).collect()
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

/// Everything stored next to the tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub dims: ModelDims,
    pub alphabet: Alphabet,
    pub features: FeatureConfig,
    pub epoch: u32,
    pub val_loss: f64,
}

fn meta_to_text(meta: &CheckpointMeta) -> String {
    let f = &meta.features;
    let codes: Vec<String> = meta
        .alphabet
        .chars()
        .iter()
        .map(|&c| (c as u32).to_string())
        .collect();
    let mut s = String::new();
    for (k, v) in [
        ("input_width", meta.dims.input_width.to_string()),
        ("hidden", meta.dims.hidden.to_string()),
        ("n_labels", meta.dims.n_labels.to_string()),
        ("relu_cap", meta.dims.relu_cap.to_string()),
        ("alphabet", codes.join(",")),
        ("window_ms", f.window_ms.to_string()),
        ("hop_ms", f.hop_ms.to_string()),
        ("n_mel_filters", f.n_mel_filters.to_string()),
        ("n_cepstra", f.n_cepstra.to_string()),
        ("preemphasis", f.preemphasis.to_string()),
        ("context_radius", f.context_radius.to_string()),
        ("epoch", meta.epoch.to_string()),
        ("val_loss", meta.val_loss.to_string()),
    ] {
        s.push_str(k);
        s.push('=');
        s.push_str(&v);
        s.push('\n');
    }
    s
}

fn meta_from_text(text: &str) -> Result<CheckpointMeta, CheckpointError> {
    let bad = |m: String| CheckpointError::Malformed(m);
    let mut kv = BTreeMap::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("metadata line {line:?}")))?;
        kv.insert(k, v);
    }
    fn get<T: std::str::FromStr>(
        kv: &BTreeMap<&str, &str>,
        key: &str,
    ) -> Result<T, CheckpointError> {
        kv.get(key)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing metadata key {key}")))?
            .parse()
            .map_err(|_| CheckpointError::Malformed(format!("bad value for {key}")))
    }
    let chars = kv
        .get("alphabet")
        .ok_or_else(|| bad("missing metadata key alphabet".into()))?
        .split(',')
        .map(|code| code.parse::<u32>().ok().and_then(char::from_u32))
        .collect::<Option<Vec<char>>>()
        .ok_or_else(|| bad("bad alphabet code point".into()))?;
    let alphabet = Alphabet::new(chars).map_err(|e| bad(e.to_string()))?;
    let dims = ModelDims {
        input_width: get(&kv, "input_width")?,
        hidden: get(&kv, "hidden")?,
        n_labels: get(&kv, "n_labels")?,
        relu_cap: get(&kv, "relu_cap")?,
    };
    if dims.n_labels != alphabet.n_labels() {
        return Err(CheckpointError::ShapeMismatch(format!(
            "n_labels {} but alphabet has {} characters",
            dims.n_labels,
            alphabet.len()
        )));
    }
    let features = FeatureConfig {
        window_ms: get(&kv, "window_ms")?,
        hop_ms: get(&kv, "hop_ms")?,
        n_mel_filters: get(&kv, "n_mel_filters")?,
        n_cepstra: get(&kv, "n_cepstra")?,
        preemphasis: get(&kv, "preemphasis")?,
        context_radius: get(&kv, "context_radius")?,
    };
    Ok(CheckpointMeta {
        dims,
        alphabet,
        features,
        epoch: get(&kv, "epoch")?,
        val_loss: get(&kv, "val_loss")?,
    })
}

fn tensor_names(layer: usize) -> [String; 2] {
    [format!("layer{layer}.weight"), format!("layer{layer}.bias")]
}

/// Serialises to bytes; values are rounded to binary32.
pub fn encode_checkpoint(
    params: &ModelParams,
    meta: &CheckpointMeta,
) -> Result<Vec<u8>, CheckpointError> {
    params
        .check_shapes()
        .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
    if params.dims != meta.dims {
        return Err(CheckpointError::ShapeMismatch(
            "metadata dims differ from parameters".into(),
        ));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let text = meta_to_text(meta);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for l in 1..=N_LAYERS {
        let d = params.layer(l);
        let [wn, bn] = tensor_names(l);
        let w_dims = [d.w.rows() as u64, d.w.cols() as u64];
        for (name, shape, values) in [(wn, &w_dims[..], d.w.data()), (bn, &w_dims[1..], &d.b[..])] {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for &s in shape {
                out.extend_from_slice(&s.to_le_bytes());
            }
            for &v in values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, CheckpointMeta), CheckpointError> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let meta_len = r.u32()? as usize;
    let meta_text = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| CheckpointError::Malformed("metadata is not UTF-8".into()))?;
    let meta = meta_from_text(meta_text)?;

    let mut tensors: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    while !r.done() {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name} too large")))?;
        let payload = r.take(
            count
                .checked_mul(4)
                .ok_or_else(|| CheckpointError::Malformed("overflow".into()))?,
        )?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if tensors.insert(name.clone(), (shape, values)).is_some() {
            return Err(CheckpointError::Malformed(format!(
                "duplicate tensor {name}"
            )));
        }
    }

    let dims = meta.dims;
    dims.validate()
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let mut layers = Vec::with_capacity(N_LAYERS);
    for l in 1..=N_LAYERS {
        let (rows, cols) = dims.weight_shape(l);
        let [wn, bn] = tensor_names(l);
        let (ws, wv) = tensors
            .remove(&wn)
            .ok_or_else(|| CheckpointError::ShapeMismatch(format!("missing tensor {wn}")))?;
        let (bs, bv) = tensors
            .remove(&bn)
            .ok_or_else(|| CheckpointError::ShapeMismatch(format!("missing tensor {bn}")))?;
        if ws != [rows, cols] || bs != [cols] {
            return Err(CheckpointError::ShapeMismatch(format!(
                "layer {l}: stored {ws:?}/{bs:?}, expected [{rows}, {cols}]/[{cols}]"
            )));
        }
        let w = Matrix::from_vec(rows, cols, wv)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        layers.push(Dense { w, b: bv });
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(CheckpointError::Malformed(format!(
            "unexpected tensor {extra}"
        )));
    }
    Ok((ModelParams { dims, layers }, meta))
}

pub fn save_checkpoint(
    params: &ModelParams,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), CheckpointError> {
    let bytes = encode_checkpoint(params, meta)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta), CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

/// Rounds every value to binary32, the precision checkpoints hold.
pub fn round_to_f32(params: &ModelParams) -> ModelParams {
    let mut p = params.clone();
    for d in &mut p.layers {
        d.w.data_mut()
            .iter_mut()
            .chain(d.b.iter_mut())
            .for_each(|v| *v = *v as f32 as f64);
    }
    p
}

/// Keeps layers 1–5 and replaces layer 6 with a fresh Glorot-initialised
/// projection onto `new_alphabet` (zero bias). Always reinitialises.
pub fn remap_output_layer(
    params: &ModelParams,
    new_alphabet: &Alphabet,
    rng: &mut Rng,
) -> ModelParams {
    let mut dims = params.dims;
    dims.n_labels = new_alphabet.n_labels();
    let mut out = ModelParams {
        dims,
        layers: params.layers.clone(),
    };
    let (rows, cols) = dims.weight_shape(6);
    let mut w = Matrix::zeros(rows, cols);
    glorot_fill(&mut w, rng);
    *out.layer_mut(6) = Dense {
        w,
        b: vec![0.0; cols],
    };
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn latin() -> Alphabet {
        let mut chars: Vec<char> = "abcdefghijklmnopqrstuvwxyz".chars().collect();
        chars.extend([' ', '\'']);
        Alphabet::new(chars).unwrap()
    }

    fn meta_for(params: &ModelParams, alphabet: Alphabet) -> CheckpointMeta {
        CheckpointMeta {
            dims: params.dims,
            alphabet,
            features: FeatureConfig::default(),
            epoch: 7,
            val_loss: 1.25,
        }
    }

    #[test]
    fn alphabet_file_form() {
        let a = Alphabet::parse("# letters\na\n \nb\n").unwrap();
        assert_eq!(a.chars(), &['a', ' ', 'b']);
        assert_eq!(a.blank(), 3);
        assert_eq!(Alphabet::parse(&a.to_file_string()).unwrap(), a);
        assert_eq!(
            Alphabet::parse("a\na\n"),
            Err(AlphabetError::Duplicate('a'))
        );
        assert_eq!(Alphabet::parse("# nothing\n"), Err(AlphabetError::Empty));
        assert!(matches!(
            Alphabet::parse("ab\n"),
            Err(AlphabetError::BadLine { line: 1, .. })
        ));
        assert_eq!(a.encode("ab a"), Ok(vec![0, 2, 1, 0]));
        assert_eq!(a.encode("abc"), Err('c'));
        assert_eq!(a.decode(&[2, 1, 0]), "b a");
    }

    #[test]
    fn roundtrip_is_bit_exact_at_binary32() {
        let a = latin();
        let p = init_params(ModelDims::new(13, 8, a.n_labels()), &mut Rng::new(1)).unwrap();
        let meta = meta_for(&p, a);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &meta, &path).unwrap();
        let (q, m) = load_checkpoint(&path).unwrap();
        assert_eq!(m, meta);
        assert_eq!(q, round_to_f32(&p));
        // and a second trip is exact
        save_checkpoint(&q, &m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().0, q);
    }

    #[test]
    fn header_errors() {
        let a = latin();
        let p = init_params(ModelDims::new(3, 2, a.n_labels()), &mut Rng::new(1)).unwrap();
        let bytes = encode_checkpoint(&p, &meta_for(&p, a)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(CheckpointError::BadMagic)
        ));
        let mut v99 = bytes.clone();
        v99[4..8].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&v99),
            Err(CheckpointError::UnsupportedVersion(99))
        ));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Malformed(_))
        ));
        assert!(matches!(
            decode_checkpoint(b"ASR"),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn shape_mismatch_detected() {
        let a = latin();
        let p = init_params(ModelDims::new(3, 2, a.n_labels()), &mut Rng::new(1)).unwrap();
        let mut meta = meta_for(&p, a);
        let bytes = encode_checkpoint(&p, &meta).unwrap();
        // Rewrite the metadata to claim a wider input.
        meta.dims.input_width = 4;
        let text = meta_to_text(&meta);
        let old_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut forged = bytes[..8].to_vec();
        forged.extend_from_slice(&(text.len() as u32).to_le_bytes());
        forged.extend_from_slice(text.as_bytes());
        forged.extend_from_slice(&bytes[12 + old_len..]);
        assert!(matches!(
            decode_checkpoint(&forged),
            Err(CheckpointError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn remap_changes_only_the_output_layer() {
        let source = latin();
        let p = init_params(ModelDims::new(13, 8, source.n_labels()), &mut Rng::new(1)).unwrap();
        assert_eq!(p.dims.n_labels, 29);
        let mut chars = source.chars().to_vec();
        chars.extend(['ä', 'ö', 'ü']);
        chars.push('ß');
        let target = Alphabet::new(chars).unwrap();
        let q = remap_output_layer(&p, &target, &mut Rng::new(5));
        assert_eq!(q.layer(6).w.shape(), (8, 33));
        assert!(q.layer(6).b.iter().all(|&b| b == 0.0));
        for l in 1..=5 {
            assert_eq!(q.layer(l), p.layer(l));
        }
        q.check_shapes().unwrap();
        // same alphabet: still fresh weights, seed-deterministic
        let r1 = remap_output_layer(&p, &source, &mut Rng::new(9));
        let r2 = remap_output_layer(&p, &source, &mut Rng::new(9));
        assert_ne!(r1.layer(6), p.layer(6));
        assert_eq!(r1, r2);
    }
}
