//! Connectionist Temporal Classification: the collapse map, the log-space α/β
//! loss with its exact gradient, and an enumeration oracle.
//!
//! The blank is always the last column of the `T × C` input.

use thiserror::Error;

use crate::numerics::{log_add, Matrix};

/// Label indices, blank excluded.
pub type Labeling = Vec<usize>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtcError {
    #[error("target of length {target_len} needs at least {needed} frames, got {frames}")]
    TargetInfeasible {
        target_len: usize,
        needed: usize,
        frames: usize,
    },
    #[error("target label {label} is not below the blank index {blank}")]
    AlphabetMismatch { label: usize, blank: usize },
    #[error("{0} paths is too many to enumerate")]
    TooLargeToEnumerate(f64),
}

pub const MAX_ENUMERATED_PATHS: f64 = 1e6;

/// Merge adjacent repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Labeling {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Frames needed to emit `target`: one per label plus a blank between each equal pair.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcResult {
    /// Negative natural-log likelihood of the target.
    pub loss: f64,
    /// d loss / d logprobs.
    pub dlogprobs: Matrix,
}

fn check_target(t_len: usize, blank: usize, target: &[usize]) -> Result<(), CtcError> {
    if let Some(&label) = target.iter().find(|&&l| l >= blank) {
        return Err(CtcError::AlphabetMismatch { label, blank });
    }
    let needed = min_frames(target).max(1);
    if t_len < needed {
        return Err(CtcError::TargetInfeasible {
            target_len: target.len(),
            needed,
            frames: t_len,
        });
    }
    Ok(())
}

/// CTC loss and gradient over `logprobs` (`T × C`, blank = `C − 1`).
pub fn ctc_forward_backward(logprobs: &Matrix, target: &[usize]) -> Result<CtcResult, CtcError> {
    let (t_len, c) = logprobs.shape();
    let blank = c - 1;
    check_target(t_len, blank, target)?;
    let neg_inf = f64::NEG_INFINITY;

    let s_len = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..s_len)
        .map(|s| if s % 2 == 0 { blank } else { target[s / 2] })
        .collect();
    // Skip transition s−2 → s allowed for a label that differs from the label two back.
    let can_skip: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2])
        .collect();

    let mut alpha = vec![neg_inf; t_len * s_len];
    alpha[0] = logprobs[(0, blank)];
    if s_len > 1 {
        alpha[1] = logprobs[(0, ext[1])];
    }
    for t in 1..t_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if can_skip[s] {
                a = log_add(a, prev[s - 2]);
            }
            cur[s] = a + logprobs[(t, ext[s])];
        }
    }

    let mut beta = vec![neg_inf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = logprobs[(t_len - 1, blank)];
    if s_len > 1 {
        beta[last + s_len - 2] = logprobs[(t_len - 1, ext[s_len - 2])];
    }
    for t in (0..t_len - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        for s in 0..s_len {
            let mut b = next[s];
            if s + 1 < s_len {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_len && can_skip[s + 2] {
                b = log_add(b, next[s + 2]);
            }
            cur[s] = b + logprobs[(t, ext[s])];
        }
    }

    let mut log_likelihood = alpha[last + s_len - 1];
    if s_len > 1 {
        log_likelihood = log_add(log_likelihood, alpha[last + s_len - 2]);
    }
    if !log_likelihood.is_finite() {
        return Err(CtcError::TargetInfeasible {
            target_len: target.len(),
            needed: min_frames(target),
            frames: t_len,
        });
    }

    // Occupancy γ_t(k) = Σ_{s: ext[s]=k} α_t(s)β_t(s) / (y_t(k)·P); d loss / d log y_t(k) = −γ_t(k).
    let mut dlogprobs = Matrix::zeros(t_len, c);
    let mut occ = vec![neg_inf; c];
    for t in 0..t_len {
        occ.fill(neg_inf);
        for s in 0..s_len {
            let k = ext[s];
            occ[k] = log_add(occ[k], alpha[t * s_len + s] + beta[t * s_len + s]);
        }
        for k in 0..c {
            if occ[k] > neg_inf {
                dlogprobs[(t, k)] = -(occ[k] - logprobs[(t, k)] - log_likelihood).exp();
            }
        }
    }
    Ok(CtcResult {
        loss: -log_likelihood,
        dlogprobs,
    })
}

/// CTC loss by summing the probability of every one of the `Cᵀ` paths that
/// collapses to `target`. `probs` are plain probabilities.
pub fn ctc_oracle(probs: &Matrix, target: &[usize]) -> Result<f64, CtcError> {
    let (t_len, c) = probs.shape();
    let blank = c - 1;
    if let Some(&label) = target.iter().find(|&&l| l >= blank) {
        return Err(CtcError::AlphabetMismatch { label, blank });
    }
    let n_paths = (c as f64).powi(t_len as i32);
    if n_paths > MAX_ENUMERATED_PATHS {
        return Err(CtcError::TooLargeToEnumerate(n_paths));
    }
    let mut path = vec![0usize; t_len];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank) == target {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &k)| probs[(t, k)])
                .product::<f64>();
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == t_len {
                return if total > 0.0 {
                    Ok(-total.ln())
                } else {
                    Err(CtcError::TargetInfeasible {
                        target_len: target.len(),
                        needed: min_frames(target),
                        frames: t_len,
                    })
                };
            }
            path[pos] += 1;
            if path[pos] < c {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}
