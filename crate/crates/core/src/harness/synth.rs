//! Seeded synthetic "languages" for end-to-end runs without real speech.
//!
//! Each character is rendered as a short two-tone burst (a fixed pair of
//! mel-spaced frequencies) separated by near-silent gaps, with per-utterance
//! pitch and loudness jitter and Gaussian noise. The target language reuses the
//! source inventory and adds `ä`, `ö`, `ü`, so its output layer is larger.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{write_manifest, write_wav};
use crate::features::{hz_to_mel, mel_to_hz, AudioClip, SAMPLE_RATE};
use crate::numerics::Rng;
use crate::transfer::Alphabet;

use super::HarnessError;

pub const SOURCE_LETTERS: &str = "abdeghiklmnorstu";
pub const EXTRA_LETTERS: &str = "äöü";
const N_TONES: usize = 8;
const CHAR_MS: f64 = 80.0;
const GAP_MS: f64 = 40.0;
const EDGE_MS: f64 = 60.0;
const NOISE_STD: f64 = 0.005;

/// Every character the generator can render, in signature order.
fn inventory() -> Vec<char> {
    std::iter::once(' ')
        .chain(SOURCE_LETTERS.chars())
        .chain(EXTRA_LETTERS.chars())
        .collect()
}

fn tone_bank() -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(300.0), hz_to_mel(3400.0));
    (0..N_TONES)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_TONES - 1) as f64))
        .collect()
}

/// The frequency pair for `c`, or `None` if it cannot be rendered.
pub fn signature(c: char) -> Option<(f64, f64)> {
    let k = inventory().iter().position(|&x| x == c)?;
    let bank = tone_bank();
    let pairs: Vec<(usize, usize)> = (0..N_TONES)
        .flat_map(|i| (i + 1..N_TONES).map(move |j| (i, j)))
        .collect();
    let (i, j) = pairs[k];
    Some((bank[i], bank[j]))
}

fn ms(x: f64) -> usize {
    (x * SAMPLE_RATE as f64 / 1000.0).round() as usize
}

/// Renders `text`; panics on characters outside the inventory.
pub fn render(text: &str, rng: &mut Rng) -> AudioClip {
    let pitch = rng.uniform(0.96, 1.04);
    let amp = rng.uniform(0.25, 0.5);
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; ms(EDGE_MS)];
    for c in text.chars() {
        let (f1, f2) = signature(c).unwrap_or_else(|| panic!("cannot render {c:?}"));
        let n = ms(CHAR_MS + rng.uniform(-10.0, 10.0));
        let ramp = ms(10.0);
        let (p1, p2) = (
            rng.uniform(0.0, std::f64::consts::TAU),
            rng.uniform(0.0, std::f64::consts::TAU),
        );
        for i in 0..n {
            let t = i as f64 / sr;
            let edge = i.min(n - 1 - i);
            let env = if edge < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / ramp as f64).cos()
            } else {
                1.0
            };
            let w = std::f64::consts::TAU * pitch * t;
            out.push(amp * env * 0.5 * ((w * f1 + p1).sin() + (w * f2 + p2).sin()));
        }
        out.extend(std::iter::repeat_n(
            0.0,
            ms(GAP_MS + rng.uniform(-10.0, 10.0)),
        ));
    }
    out.extend(std::iter::repeat_n(0.0, ms(EDGE_MS)));
    for s in &mut out {
        *s += NOISE_STD * rng.normal();
    }
    AudioClip::new(out, SAMPLE_RATE)
}

/// A toy language: an alphabet and a closed lexicon.
#[derive(Debug, Clone)]
pub struct Language {
    pub name: String,
    pub alphabet: Alphabet,
    pub lexicon: Vec<String>,
}

impl Language {
    /// Alphabet: space plus the source letters.
    pub fn source(seed: u64) -> Self {
        let letters: Vec<char> = SOURCE_LETTERS.chars().collect();
        Self::build("source", &letters, &[], Rng::derive(seed, &[0x50, 0]))
    }

    /// Source inventory plus umlauts, which show up in most words.
    pub fn target(seed: u64) -> Self {
        let letters: Vec<char> = SOURCE_LETTERS.chars().collect();
        let extra: Vec<char> = EXTRA_LETTERS.chars().collect();
        Self::build("target", &letters, &extra, Rng::derive(seed, &[0x50, 1]))
    }

    fn build(name: &str, letters: &[char], extra: &[char], mut rng: Rng) -> Self {
        let chars: Vec<char> = std::iter::once(' ')
            .chain(letters.iter().copied())
            .chain(extra.iter().copied())
            .collect();
        let alphabet = Alphabet::new(chars).expect("distinct characters");
        let mut lexicon: Vec<String> = Vec::new();
        while lexicon.len() < 40 {
            let len = 2 + rng.below(4);
            let word: String = (0..len)
                .map(|_| {
                    if !extra.is_empty() && rng.next_f64() < 0.25 {
                        extra[rng.below(extra.len())]
                    } else {
                        letters[rng.below(letters.len())]
                    }
                })
                .collect();
            if !lexicon.contains(&word) {
                lexicon.push(word);
            }
        }
        Language {
            name: name.to_string(),
            alphabet,
            lexicon,
        }
    }

    /// One to three lexicon words joined by single spaces.
    pub fn sentence(&self, rng: &mut Rng) -> String {
        let n = 1 + rng.below(3);
        (0..n)
            .map(|_| self.lexicon[rng.below(self.lexicon.len())].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Files written for one language.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPaths {
    pub dir: PathBuf,
    pub alphabet: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    pub lm_corpus: PathBuf,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::io(path, e)
}

/// Renders `texts` into `dir/wav` and writes a manifest at `manifest`.
pub fn write_utterances(
    dir: &Path,
    manifest: &Path,
    prefix: &str,
    texts: &[String],
    seed: u64,
) -> Result<(), HarnessError> {
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(io(&wav_dir))?;
    let mut rows = Vec::with_capacity(texts.len());
    for (i, text) in texts.iter().enumerate() {
        let name = format!("{prefix}_{i:05}.wav");
        let clip = render(text, &mut Rng::derive(seed, &[0xA0D, i as u64]));
        write_wav(&wav_dir.join(&name), &clip)?;
        rows.push((format!("wav/{name}"), text.clone()));
    }
    write_manifest(manifest, &rows)?;
    Ok(())
}

/// `n` utterances split 80/10/10 into train/dev/test, plus a 400-sentence LM corpus.
pub fn write_language(
    dir: &Path,
    lang: &Language,
    n: usize,
    seed: u64,
) -> Result<CorpusPaths, HarnessError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let paths = CorpusPaths {
        dir: dir.to_path_buf(),
        alphabet: dir.join("alphabet.txt"),
        train: dir.join("train.csv"),
        dev: dir.join("dev.csv"),
        test: dir.join("test.csv"),
        lm_corpus: dir.join("lm_corpus.txt"),
    };
    fs::write(&paths.alphabet, lang.alphabet.to_file_string()).map_err(io(&paths.alphabet))?;
    let mut rng = Rng::derive(seed, &[0x7E, 0]);
    let texts: Vec<String> = (0..n).map(|_| lang.sentence(&mut rng)).collect();
    let n_train = n * 8 / 10;
    let n_dev = (n - n_train) / 2;
    let splits = [
        ("train", &paths.train, &texts[..n_train]),
        ("dev", &paths.dev, &texts[n_train..n_train + n_dev]),
        ("test", &paths.test, &texts[n_train + n_dev..]),
    ];
    for (k, (name, manifest, part)) in splits.into_iter().enumerate() {
        write_utterances(
            dir,
            manifest,
            name,
            part,
            Rng::derive(seed, &[0x5E, k as u64]).next_u64(),
        )?;
    }
    let mut lm_rng = Rng::derive(seed, &[0x7E, 1]);
    let corpus: String = (0..400)
        .map(|_| lang.sentence(&mut lm_rng) + "\n")
        .collect();
    fs::write(&paths.lm_corpus, corpus).map_err(io(&paths.lm_corpus))?;
    Ok(paths)
}

/// Both languages plus ready-to-use configs `source.conf` and `target.conf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub source: CorpusPaths,
    pub target: CorpusPaths,
    pub source_config: PathBuf,
    pub target_config: PathBuf,
}

/// Utterance counts per language and training lengths for the emitted configs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSize {
    pub source_utterances: usize,
    pub target_utterances: usize,
    pub source_epochs: u32,
    pub target_epochs: u32,
    pub hidden: usize,
}

impl Default for ScenarioSize {
    fn default() -> Self {
        ScenarioSize {
            source_utterances: 300,
            target_utterances: 80,
            source_epochs: 25,
            target_epochs: 15,
            hidden: 64,
        }
    }
}

/// Shared toy settings: small cepstral front-end and narrow context.
pub fn toy_settings(size: &ScenarioSize, seed: u64) -> String {
    format!(
        "seed = {seed}\nhidden = {}\nbatch_size = 8\nlearning_rate = 0.002\ndropout = 0.1\n\
         n_cepstra = 13\ncontext_radius = 2\nlm_order = 3\nbeam_width = 16\nalpha = 0.5\nbeta = 1.0\n",
        size.hidden
    )
}

pub fn generate(out_dir: &Path, seed: u64, size: ScenarioSize) -> Result<Scenario, HarnessError> {
    let source = write_language(
        &out_dir.join("source"),
        &Language::source(seed),
        size.source_utterances,
        Rng::derive(seed, &[1]).next_u64(),
    )?;
    let target = write_language(
        &out_dir.join("target"),
        &Language::target(seed),
        size.target_utterances,
        Rng::derive(seed, &[2]).next_u64(),
    )?;
    let conf = |lang: &str, epochs: u32| {
        format!(
            "train_manifest = {lang}/train.csv\nval_manifest = {lang}/dev.csv\ntest_manifest = {lang}/test.csv\n\
             alphabet = {lang}/alphabet.txt\nlm_corpus = {lang}/lm_corpus.txt\nout_dir = runs/{lang}\nepochs = {epochs}\n{}",
            toy_settings(&size, seed)
        )
    };
    let source_config = out_dir.join("source.conf");
    let target_config = out_dir.join("target.conf");
    fs::write(&source_config, conf("source", size.source_epochs)).map_err(io(&source_config))?;
    fs::write(&target_config, conf("target", size.target_epochs)).map_err(io(&target_config))?;
    Ok(Scenario {
        source,
        target,
        source_config,
        target_config,
    })
}

/// Four short target-language utterances with a config that trains and
/// validates on the same set, without dropout, for up to 300 epochs and stops
/// once the mean training loss is below 0.1. Returns the config path.
pub fn write_overfit_set(dir: &Path, seed: u64) -> Result<PathBuf, HarnessError> {
    let lang = Language::target(seed);
    fs::create_dir_all(dir).map_err(io(dir))?;
    let alphabet = dir.join("alphabet.txt");
    fs::write(&alphabet, lang.alphabet.to_file_string()).map_err(io(&alphabet))?;
    let mut rng = Rng::derive(seed, &[0x0F, 0]);
    let texts: Vec<String> = (0..4).map(|_| lang.sentence(&mut rng)).collect();
    write_utterances(dir, &dir.join("train.csv"), "overfit", &texts, seed)?;
    let config = dir.join("overfit.conf");
    let text = format!(
        "train_manifest = train.csv\nval_manifest = train.csv\nalphabet = alphabet.txt\nout_dir = run\n\
         seed = {seed}\nhidden = 64\nepochs = 300\nstop_below = 0.1\nbatch_size = 4\nlearning_rate = 0.002\n\
         dropout = 0\nkeep_best = 1\nn_cepstra = 13\ncontext_radius = 2\n"
    );
    fs::write(&config, text).map_err(io(&config))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{featurize, FeatureConfig};

    #[test]
    fn signatures_are_distinct() {
        let sigs: Vec<_> = inventory().iter().map(|&c| signature(c).unwrap()).collect();
        for (i, a) in sigs.iter().enumerate() {
            for b in &sigs[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert!(signature('z').is_none());
    }

    #[test]
    fn languages_differ_by_umlauts() {
        let s = Language::source(3);
        let t = Language::target(3);
        assert_eq!(t.alphabet.len(), s.alphabet.len() + 3);
        assert!(s.lexicon.iter().all(|w| s.alphabet.encode(w).is_ok()));
        assert!(t
            .lexicon
            .iter()
            .any(|w| w.chars().any(|c| EXTRA_LETTERS.contains(c))));
    }

    #[test]
    fn rendering_is_seeded_and_long_enough_for_ctc() {
        let a = render("abba gut", &mut Rng::new(1));
        let b = render("abba gut", &mut Rng::new(1));
        assert_eq!(a, b);
        let cfg = FeatureConfig {
            n_cepstra: 13,
            context_radius: 2,
            ..FeatureConfig::default()
        };
        let frames = featurize(&a, &cfg).unwrap().frames();
        // 8 labels, one repeat
        assert!(frames >= 9 * 3, "{frames} frames");
    }

    #[test]
    fn generated_layout() {
        let dir = tempfile::tempdir().unwrap();
        let size = ScenarioSize {
            source_utterances: 10,
            target_utterances: 10,
            ..ScenarioSize::default()
        };
        let sc = generate(dir.path(), 4, size).unwrap();
        let alphabet = Alphabet::parse(&fs::read_to_string(&sc.target.alphabet).unwrap()).unwrap();
        let train = crate::data::parse_manifest(&sc.target.train, &alphabet).unwrap();
        let dev = crate::data::parse_manifest(&sc.target.dev, &alphabet).unwrap();
        let test = crate::data::parse_manifest(&sc.target.test, &alphabet).unwrap();
        assert_eq!(
            (train.rows.len(), dev.rows.len(), test.rows.len()),
            (8, 1, 1)
        );
        let conf = super::super::TrainConfig::load(&sc.target_config).unwrap();
        assert_eq!(conf.train_manifest, sc.target.train);
    }
}
