//! `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::decoder::DecodeParams;
use crate::features::FeatureConfig;
use crate::model::DEFAULT_HIDDEN;
use crate::numerics::DEFAULT_RELU_CAP;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
    pub test_manifest: Option<PathBuf>,
    pub alphabet: PathBuf,
    pub out_dir: PathBuf,
    /// Pre-built ARPA model for evaluation.
    pub lm: Option<PathBuf>,
    /// Corpus for building an LM when `lm` is absent; falls back to the training transcripts.
    pub lm_corpus: Option<PathBuf>,
    pub lm_order: usize,
    pub seed: u64,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub relu_cap: f64,
    /// Keep only this many best checkpoints; 0 keeps all.
    pub keep_best: usize,
    /// Stop early once the epoch's mean training loss drops below this.
    pub stop_below: Option<f64>,
    pub features: FeatureConfig,
    pub decode: DecodeParams,
    pub lowercase: bool,
}

impl TrainConfig {
    pub fn new(
        train_manifest: PathBuf,
        val_manifest: PathBuf,
        alphabet: PathBuf,
        out_dir: PathBuf,
    ) -> Self {
        TrainConfig {
            train_manifest,
            val_manifest,
            test_manifest: None,
            alphabet,
            out_dir,
            lm: None,
            lm_corpus: None,
            lm_order: 3,
            seed: 1,
            epochs: 30,
            batch_size: crate::data::DEFAULT_BATCH_SIZE,
            learning_rate: 0.0005,
            dropout: 0.4,
            hidden: DEFAULT_HIDDEN,
            relu_cap: DEFAULT_RELU_CAP,
            keep_best: 0,
            stop_below: None,
            features: FeatureConfig::default(),
            decode: DecodeParams::default(),
            lowercase: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or_else(|| Path::new(".")))
    }

    /// Relative paths resolve against `base`. Lines starting with `#` are comments.
    pub fn parse(text: &str, base: &Path) -> Result<Self, HarnessError> {
        let mut kv: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::Config {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let k = k.trim().to_string();
            if kv.iter().any(|(_, seen, _)| *seen == k) {
                return Err(HarnessError::Config {
                    line: i + 1,
                    msg: format!("duplicate key {k:?}"),
                });
            }
            kv.push((i + 1, k, v.trim().to_string()));
        }
        let take = |key: &str| {
            kv.iter()
                .find(|(_, k, _)| k == key)
                .map(|(l, _, v)| (*l, v.as_str()))
        };
        let path = |key: &str| take(key).map(|(_, v)| resolve(base, v));
        let required = |key: &str| {
            path(key).ok_or_else(|| HarnessError::Config {
                line: 0,
                msg: format!("missing required key {key:?}"),
            })
        };
        let mut c = TrainConfig::new(
            required("train_manifest")?,
            required("val_manifest")?,
            required("alphabet")?,
            required("out_dir")?,
        );
        c.test_manifest = path("test_manifest");
        c.lm = path("lm");
        c.lm_corpus = path("lm_corpus");

        for (line, key, value) in &kv {
            let bad = |what: &str| HarnessError::Config {
                line: *line,
                msg: format!("{key}: expected {what}, got {value:?}"),
            };
            macro_rules! num {
                ($t:ty) => {
                    value.parse::<$t>().map_err(|_| bad(stringify!($t)))?
                };
            }
            match key.as_str() {
                "train_manifest" | "val_manifest" | "test_manifest" | "alphabet" | "out_dir"
                | "lm" | "lm_corpus" => {}
                "lm_order" => c.lm_order = num!(usize),
                "seed" => c.seed = num!(u64),
                "epochs" => c.epochs = num!(u32),
                "batch_size" => c.batch_size = num!(usize),
                "learning_rate" => c.learning_rate = num!(f64),
                "dropout" => c.dropout = num!(f64),
                "hidden" => c.hidden = num!(usize),
                "relu_cap" => c.relu_cap = num!(f64),
                "keep_best" => c.keep_best = num!(usize),
                "stop_below" => c.stop_below = Some(num!(f64)),
                "window_ms" => c.features.window_ms = num!(u32),
                "hop_ms" => c.features.hop_ms = num!(u32),
                "n_mel_filters" => c.features.n_mel_filters = num!(usize),
                "n_cepstra" => c.features.n_cepstra = num!(usize),
                "preemphasis" => c.features.preemphasis = num!(f64),
                "context_radius" => c.features.context_radius = num!(usize),
                "alpha" => c.decode.alpha = num!(f64),
                "beta" => c.decode.beta = num!(f64),
                "beam_width" => c.decode.beam_width = num!(usize),
                "lowercase" => c.lowercase = num!(bool),
                _ => {
                    return Err(HarnessError::Config {
                        line: *line,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| {
            Err(HarnessError::Config {
                line: 0,
                msg: msg.to_string(),
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if let Err(e) = self.decode.validate() {
            return bad(&e.to_string());
        }
        self.features.validate().map_err(|e| HarnessError::Config {
            line: 0,
            msg: e.to_string(),
        })
    }

    /// Round-trippable text form with absolute paths.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("train_manifest", self.train_manifest.display().to_string());
        put("val_manifest", self.val_manifest.display().to_string());
        if let Some(p) = &self.test_manifest {
            put("test_manifest", p.display().to_string());
        }
        put("alphabet", self.alphabet.display().to_string());
        put("out_dir", self.out_dir.display().to_string());
        if let Some(p) = &self.lm {
            put("lm", p.display().to_string());
        }
        if let Some(p) = &self.lm_corpus {
            put("lm_corpus", p.display().to_string());
        }
        put("lm_order", self.lm_order.to_string());
        put("seed", self.seed.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("dropout", self.dropout.to_string());
        put("hidden", self.hidden.to_string());
        put("relu_cap", self.relu_cap.to_string());
        put("keep_best", self.keep_best.to_string());
        if let Some(x) = self.stop_below {
            put("stop_below", x.to_string());
        }
        let f = &self.features;
        put("window_ms", f.window_ms.to_string());
        put("hop_ms", f.hop_ms.to_string());
        put("n_mel_filters", f.n_mel_filters.to_string());
        put("n_cepstra", f.n_cepstra.to_string());
        put("preemphasis", f.preemphasis.to_string());
        put("context_radius", f.context_radius.to_string());
        put("alpha", self.decode.alpha.to_string());
        put("beta", self.decode.beta.to_string());
        put("beam_width", self.decode.beam_width.to_string());
        put("lowercase", self.lowercase.to_string());
        s
    }
}

fn resolve(base: &Path, v: &str) -> PathBuf {
    let p = Path::new(v);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
