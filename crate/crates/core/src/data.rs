//! WAV and manifest ingestion, featurised datasets, and duration-bucketed batches.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::features::{featurize, AudioClip, FeatureConfig, FeatureError, SAMPLE_RATE};
use crate::numerics::{Matrix, Rng};
use crate::par;
use crate::transfer::Alphabet;

pub const DEFAULT_BATCH_SIZE: usize = 24;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: malformed CSV: {msg}")]
    MalformedCsv { path: PathBuf, msg: String },
    #[error("row {row}: audio file {path} does not exist")]
    MissingAudioFile { row: u64, path: PathBuf },
    #[error("row {row}: character {ch:?} is not in the alphabet")]
    InvalidTranscriptChar { row: u64, ch: char },
    #[error("{path}: unsupported WAV format: {issue}")]
    UnsupportedFormat { path: PathBuf, issue: FormatIssue },
    #[error("{path}: malformed RIFF/WAVE: {msg}")]
    MalformedRiff { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Features { path: PathBuf, source: FeatureError },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Which WAV property is unsupported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatIssue {
    SampleRate(u32),
    Channels(u16),
    BitDepth(u16),
    Encoding,
}

impl std::fmt::Display for FormatIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormatIssue::SampleRate(r) => write!(f, "sample rate {r} Hz (need 16000)"),
            FormatIssue::Channels(c) => write!(f, "{c} channels (need mono)"),
            FormatIssue::BitDepth(b) => write!(f, "{b}-bit samples (need 16-bit)"),
            FormatIssue::Encoding => write!(f, "floating-point encoding (need integer PCM)"),
        }
    }
}

/// 16 kHz mono 16-bit PCM only; samples scaled by 1/32768.
pub fn load_wav(path: &Path) -> Result<AudioClip, DataError> {
    let malformed = |e: hound::Error| match e {
        hound::Error::IoError(source) if source.kind() == std::io::ErrorKind::NotFound => {
            DataError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
        other => DataError::MalformedRiff {
            path: path.to_path_buf(),
            msg: other.to_string(),
        },
    };
    let mut reader = hound::WavReader::open(path).map_err(malformed)?;
    let spec = reader.spec();
    let unsupported = |issue| DataError::UnsupportedFormat {
        path: path.to_path_buf(),
        issue,
    };
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(unsupported(FormatIssue::Encoding));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(unsupported(FormatIssue::SampleRate(spec.sample_rate)));
    }
    if spec.channels != 1 {
        return Err(unsupported(FormatIssue::Channels(spec.channels)));
    }
    if spec.bits_per_sample != 16 {
        return Err(unsupported(FormatIssue::BitDepth(spec.bits_per_sample)));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(malformed)?;
    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes 16 kHz mono 16-bit PCM, clamping to the representable range.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), DataError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io = |e: hound::Error| DataError::MalformedRiff {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(io)?;
    for &s in &clip.samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            .map_err(io)?;
    }
    w.finalize().map_err(io)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// Resolved audio path.
    pub audio: PathBuf,
    pub transcript: String,
    /// Line number in the CSV file (header is line 1).
    pub line: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub source: PathBuf,
    pub rows: Vec<ManifestRow>,
}

/// RFC 4180 CSV with header `path,transcript`. Relative audio paths resolve
/// against the manifest's directory.
pub fn parse_manifest(path: &Path, alphabet: &Alphabet) -> Result<Manifest, DataError> {
    let malformed = |msg: String| DataError::MalformedCsv {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DataError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => malformed(format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "path" || &headers[1] != "transcript" {
        return Err(malformed(format!(
            "expected header \"path,transcript\", found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let rel = Path::new(&record[0]);
        let audio = if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            base.join(rel)
        };
        let transcript = record[1].to_string();
        if let Err(ch) = alphabet.encode(&transcript) {
            return Err(DataError::InvalidTranscriptChar { row: line, ch });
        }
        if !audio.is_file() {
            return Err(DataError::MissingAudioFile {
                row: line,
                path: audio,
            });
        }
        rows.push(ManifestRow {
            audio,
            transcript,
            line,
        });
    }
    Ok(Manifest {
        source: path.to_path_buf(),
        rows,
    })
}

/// Writes a manifest CSV; audio paths are written as given.
pub fn write_manifest(path: &Path, rows: &[(String, String)]) -> Result<(), DataError> {
    let io = |e: csv::Error| DataError::MalformedCsv {
        path: path.to_path_buf(),
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["path", "transcript"]).map_err(io)?;
    for (p, t) in rows {
        w.write_record([p, t]).map_err(io)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One featurised utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: usize,
    pub transcript: String,
    pub labels: Vec<usize>,
    /// Stacked features, `T × F`.
    pub features: Matrix,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    /// Loads and featurises every row (in parallel when enabled).
    pub fn from_manifest(
        manifest: &Manifest,
        cfg: &FeatureConfig,
        alphabet: &Alphabet,
    ) -> Result<Self, DataError> {
        let indexed: Vec<(usize, &ManifestRow)> = manifest.rows.iter().enumerate().collect();
        let utterances = par::map(&indexed, |&(id, row)| -> Result<Utterance, DataError> {
            let clip = load_wav(&row.audio)?;
            let n_samples = clip.samples.len();
            let features = featurize(&clip, cfg)
                .map_err(|source| DataError::Features {
                    path: row.audio.clone(),
                    source,
                })?
                .data;
            let labels = alphabet
                .encode(&row.transcript)
                .map_err(|ch| DataError::InvalidTranscriptChar { row: row.line, ch })?;
            Ok(Utterance {
                id,
                transcript: row.transcript.clone(),
                labels,
                features,
                n_samples,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset { utterances })
    }

    pub fn from_utterances(utterances: Vec<Utterance>) -> Self {
        Dataset { utterances }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}

/// Zero-padded features for a group of utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Dataset indices of the members.
    pub members: Vec<usize>,
    /// Each `max_T × F`, zero rows past the true length.
    pub features: Vec<Matrix>,
    pub lengths: Vec<usize>,
    pub targets: Vec<Vec<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }
}

/// Groups of dataset indices: duration-sorted (stable), cut into contiguous
/// buckets of `batch_size`, bucket order shuffled by `(seed, epoch)`.
pub fn batch_plan(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| dataset.utterances[i].n_samples);
    let mut buckets: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Rng::derive(seed, &[0xBA7C, epoch]).shuffle(&mut buckets);
    buckets
}

pub fn pad_batch(dataset: &Dataset, members: &[usize]) -> Batch {
    let lengths: Vec<usize> = members
        .iter()
        .map(|&i| dataset.utterances[i].features.rows())
        .collect();
    let max_t = lengths.iter().copied().max().unwrap_or(0);
    let features = members
        .iter()
        .map(|&i| {
            let f = &dataset.utterances[i].features;
            let mut padded = Matrix::zeros(max_t, f.cols());
            padded.data_mut()[..f.data().len()].copy_from_slice(f.data());
            padded
        })
        .collect();
    Batch {
        members: members.to_vec(),
        features,
        lengths,
        targets: members
            .iter()
            .map(|&i| dataset.utterances[i].labels.clone())
            .collect(),
    }
}

pub fn make_batches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Vec<Batch> {
    batch_plan(dataset, batch_size, seed, epoch)
        .iter()
        .map(|m| pad_batch(dataset, m))
        .collect()
}
