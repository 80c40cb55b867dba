//! Levenshtein distance and corpus-pooled word/character error rates.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{refs} references but {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },
    #[error("reference {0} is empty after normalisation")]
    EmptyReference(usize),
}

/// Text normalisation applied to both sides before scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Normalize {
    pub lowercase: bool,
}

impl Normalize {
    /// Trim and collapse runs of whitespace to a single space.
    pub fn apply(&self, s: &str) -> String {
        let joined = s.split_whitespace().collect::<Vec<_>>().join(" ");
        if self.lowercase {
            joined.to_lowercase()
        } else {
            joined
        }
    }
}

/// Unit-cost edit distance over the full DP table.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub wer: f64,
    pub cer: f64,
    pub n_utterances: usize,
    /// `(word distance, char distance)` per utterance.
    pub distances: Vec<(usize, usize)>,
    pub ref_words: usize,
    pub ref_chars: usize,
}

pub fn evaluate_texts<R: AsRef<str>, H: AsRef<str>>(
    refs: &[R],
    hyps: &[H],
    norm: Normalize,
) -> Result<EvalReport, EvalError> {
    if refs.len() != hyps.len() {
        return Err(EvalError::LengthMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    let mut distances = Vec::with_capacity(refs.len());
    let (mut wd, mut cd, mut rw, mut rc) = (0, 0, 0, 0);
    for (i, (r, h)) in refs.iter().zip(hyps).enumerate() {
        let r = norm.apply(r.as_ref());
        let h = norm.apply(h.as_ref());
        if r.is_empty() {
            return Err(EvalError::EmptyReference(i));
        }
        let rws: Vec<&str> = r.split(' ').collect();
        let hws: Vec<&str> = if h.is_empty() {
            vec![]
        } else {
            h.split(' ').collect()
        };
        let rcs: Vec<char> = r.chars().collect();
        let hcs: Vec<char> = h.chars().collect();
        let d = (edit_distance(&rws, &hws), edit_distance(&rcs, &hcs));
        wd += d.0;
        cd += d.1;
        rw += rws.len();
        rc += rcs.len();
        distances.push(d);
    }
    Ok(EvalReport {
        wer: wd as f64 / rw.max(1) as f64,
        cer: cd as f64 / rc.max(1) as f64,
        n_utterances: refs.len(),
        distances,
        ref_words: rw,
        ref_chars: rc,
    })
}

pub fn wer<R: AsRef<str>, H: AsRef<str>>(refs: &[R], hyps: &[H]) -> Result<f64, EvalError> {
    evaluate_texts(refs, hyps, Normalize::default()).map(|r| r.wer)
}

pub fn cer<R: AsRef<str>, H: AsRef<str>>(refs: &[R], hyps: &[H]) -> Result<f64, EvalError> {
    evaluate_texts(refs, hyps, Normalize::default()).map(|r| r.cer)
}
