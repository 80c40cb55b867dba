//! MFCC front end: preemphasis, Hamming window, power spectrum, mel filterbank,
//! log compression, orthonormal DCT-II, then context stacking.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::numerics::Matrix;

pub const SAMPLE_RATE: u32 = 16_000;
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("clip has {samples} samples, shorter than one {window}-sample window")]
    ClipTooShort { samples: usize, window: usize },
    #[error("sample rate {0} Hz, expected 16000")]
    WrongSampleRate(u32),
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
}

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub window_ms: u32,
    pub hop_ms: u32,
    pub n_mel_filters: usize,
    pub n_cepstra: usize,
    pub preemphasis: f64,
    pub context_radius: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window_ms: 32,
            hop_ms: 20,
            n_mel_filters: 26,
            n_cepstra: 26,
            preemphasis: 0.97,
            context_radius: 9,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidConfig(m.to_string()));
        if self.hop_ms == 0 || self.window_ms < self.hop_ms {
            return bad("need window_ms >= hop_ms > 0");
        }
        if self.n_cepstra == 0 || self.n_cepstra > self.n_mel_filters {
            return bad("need 0 < n_cepstra <= n_mel_filters");
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return bad("preemphasis must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_ms * SAMPLE_RATE / 1000) as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * SAMPLE_RATE / 1000) as usize
    }

    /// Width of a frame after context stacking.
    pub fn stacked_width(&self) -> usize {
        self.n_cepstra * (2 * self.context_radius + 1)
    }

    /// Number of frames `mfcc` produces for `n_samples` of audio.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        let w = self.window_samples();
        if n_samples < w {
            0
        } else {
            (n_samples - w) / self.hop_samples() + 1
        }
    }
}

/// `T × F` feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Matrix,
}

impl FeatureMatrix {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn width(&self) -> usize {
        self.data.cols()
    }
}

/// `y[0] = x[0]`, `y[t] = x[t] − k·x[t−1]`.
pub fn preemphasize(clip: &AudioClip, k: f64) -> AudioClip {
    assert!(
        (0.0..1.0).contains(&k),
        "preemphasis coefficient must be in [0, 1)"
    );
    let x = &clip.samples;
    let mut y = Vec::with_capacity(x.len());
    if let Some(&first) = x.first() {
        y.push(first);
    }
    y.extend(x.windows(2).map(|w| w[1] - k * w[0]));
    AudioClip::new(y, clip.sample_rate)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over `0..=nfft/2` bins, spanning 0 Hz to Nyquist.
/// Row `m` holds the weights of filter `m`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    pub centers_hz: Vec<f64>,
    pub weights: Matrix,
}

impl MelFilterbank {
    pub fn new(n_filters: usize, nfft: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|i| mel_to_hz(top * i as f64 / (n_filters + 1) as f64))
            .collect();
        let n_bins = nfft / 2 + 1;
        let mut weights = Matrix::zeros(n_filters, n_bins);
        for m in 0..n_filters {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * sample_rate as f64 / nfft as f64;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[(m, k)] = w;
            }
        }
        MelFilterbank {
            centers_hz: edges[1..=n_filters].to_vec(),
            weights,
        }
    }
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Per-frame log mel energies (`T × n_mel_filters`), the stage before the DCT.
pub fn log_mel_energies(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Matrix, FeatureError> {
    cfg.validate()?;
    if clip.sample_rate != SAMPLE_RATE {
        return Err(FeatureError::WrongSampleRate(clip.sample_rate));
    }
    let window = cfg.window_samples();
    let hop = cfg.hop_samples();
    let n = clip.samples.len();
    if n < window {
        return Err(FeatureError::ClipTooShort { samples: n, window });
    }
    let frames = (n - window) / hop + 1;
    let nfft = window.next_power_of_two();
    let emphasized = preemphasize(clip, cfg.preemphasis);
    let win = hamming(window);
    let bank = MelFilterbank::new(cfg.n_mel_filters, nfft, clip.sample_rate);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);

    let mut out = Matrix::zeros(frames, cfg.n_mel_filters);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut power = vec![0.0; nfft / 2 + 1];
    for t in 0..frames {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = if i < window {
                emphasized.samples[start + i] * win[i]
            } else {
                0.0
            };
            *slot = Complex::new(x, 0.0);
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr() / nfft as f64;
        }
        for (m, e) in out.row_mut(t).iter_mut().enumerate() {
            let energy: f64 = bank
                .weights
                .row(m)
                .iter()
                .zip(&power)
                .map(|(w, p)| w * p)
                .sum();
            *e = energy.max(LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Orthonormal DCT-II of each row, keeping the first `keep` coefficients.
pub fn dct2_rows(x: &Matrix, keep: usize) -> Matrix {
    let n = x.cols();
    assert!(keep <= n);
    let mut basis = Matrix::zeros(keep, n);
    for k in 0..keep {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            basis[(k, i)] = scale * (PI * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos();
        }
    }
    crate::numerics::matmul_nt(x, &basis)
}

/// MFCC frames before context stacking (width `n_cepstra`).
pub fn mfcc(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    let log_mel = log_mel_energies(clip, cfg)?;
    Ok(FeatureMatrix {
        data: dct2_rows(&log_mel, cfg.n_cepstra),
    })
}

/// Concatenates frames `t−radius ..= t+radius` into row `t`, zero-filled past the edges.
pub fn stack_context(feats: &FeatureMatrix, radius: usize) -> FeatureMatrix {
    let t_len = feats.frames();
    let w = feats.width();
    let span = 2 * radius + 1;
    let mut out = Matrix::zeros(t_len, w * span);
    for t in 0..t_len {
        let row = out.row_mut(t);
        for s in 0..span {
            let src = t as isize + s as isize - radius as isize;
            if src >= 0 && (src as usize) < t_len {
                row[s * w..(s + 1) * w].copy_from_slice(feats.data.row(src as usize));
            }
        }
    }
    FeatureMatrix { data: out }
}

/// Full featurization: `mfcc` followed by `stack_context`.
pub fn featurize(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    Ok(stack_context(&mfcc(clip, cfg)?, cfg.context_radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sine(freq: f64, secs: f64) -> AudioClip {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        AudioClip::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
                .collect(),
            SAMPLE_RATE,
        )
    }

    #[test]
    fn preemphasis_examples() {
        let c = AudioClip::new(vec![1.0, 1.0, 1.0], SAMPLE_RATE);
        let y = preemphasize(&c, 0.97).samples;
        assert_eq!(y[0], 1.0);
        assert!((y[1] - 0.03).abs() < 1e-15 && (y[2] - 0.03).abs() < 1e-15);
        assert_eq!(preemphasize(&c, 0.0), c);
        let alt = AudioClip::new(vec![1.0, -1.0, 1.0, -1.0], SAMPLE_RATE);
        let y = preemphasize(&alt, 0.97).samples;
        let want = [1.0, -1.97, 1.97, -1.97];
        assert!(y.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn one_second_gives_49_frames() {
        let f = mfcc(&sine(300.0, 1.0), &FeatureConfig::default()).unwrap();
        assert_eq!((f.frames(), f.width()), (49, 26));
    }

    #[test]
    fn silence_frames_are_identical_and_floored() {
        let clip = AudioClip::new(vec![0.0; 4000], SAMPLE_RATE);
        let cfg = FeatureConfig::default();
        let lm = log_mel_energies(&clip, &cfg).unwrap();
        assert!(lm.data().iter().all(|&v| v == LOG_FLOOR.ln()));
        let f = mfcc(&clip, &cfg).unwrap();
        assert!(f.data.iter_rows().all(|r| r == f.data.row(0)));
    }

    #[test]
    fn errors() {
        let cfg = FeatureConfig::default();
        let short = AudioClip::new(vec![0.0; 100], SAMPLE_RATE);
        assert_eq!(
            mfcc(&short, &cfg),
            Err(FeatureError::ClipTooShort {
                samples: 100,
                window: 512
            })
        );
        let wrong = AudioClip::new(vec![0.0; 1000], 8000);
        assert_eq!(mfcc(&wrong, &cfg), Err(FeatureError::WrongSampleRate(8000)));
        let bad = FeatureConfig {
            n_cepstra: 30,
            ..cfg
        };
        assert!(matches!(
            mfcc(&sine(100.0, 0.1), &bad),
            Err(FeatureError::InvalidConfig(_))
        ));
    }

    #[test]
    fn fft_power_matches_naive_dft() {
        // Independent route: direct O(N²) DFT of a windowed, zero-padded frame,
        // pushed through the filterbank by hand.
        let clip = sine(440.0, 0.05);
        let cfg = FeatureConfig::default();
        let got = log_mel_energies(&clip, &cfg).unwrap();
        let x = preemphasize(&clip, cfg.preemphasis).samples;
        let nfft = 512;
        let bank = MelFilterbank::new(26, nfft, SAMPLE_RATE);
        let framed: Vec<f64> = (0..nfft)
            .map(|i| x[i] * (0.54 - 0.46 * (2.0 * PI * i as f64 / 511.0).cos()))
            .collect();
        for m in 0..26 {
            let mut e = 0.0;
            for k in 0..=nfft / 2 {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in framed.iter().enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / nfft as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                e += bank.weights[(m, k)] * (re * re + im * im) / nfft as f64;
            }
            assert!(
                (e.max(LOG_FLOOR).ln() - got[(0, m)]).abs() < 1e-8,
                "filter {m}"
            );
        }
    }

    #[test]
    fn pure_tone_peaks_in_nearest_filter() {
        let cfg = FeatureConfig::default();
        let lm = log_mel_energies(&sine(440.0, 0.2), &cfg).unwrap();
        // Filter centres recomputed from the mel formula.
        let top = 2595.0 * (1.0f64 + 8000.0 / 700.0).log10();
        let nearest = (1..=26)
            .map(|i| 700.0 * (10f64.powf(top * i as f64 / 27.0 / 2595.0) - 1.0))
            .enumerate()
            .min_by(|a, b| (a.1 - 440.0).abs().total_cmp(&(b.1 - 440.0).abs()))
            .unwrap()
            .0;
        for t in 0..lm.rows() {
            let argmax = (0..26)
                .max_by(|&a, &b| lm[(t, a)].total_cmp(&lm[(t, b)]))
                .unwrap();
            assert_eq!(argmax, nearest, "frame {t}");
        }
    }

    #[test]
    fn deterministic_output() {
        let mut rng = Rng::new(9);
        let clip = AudioClip::new(
            (0..8000).map(|_| rng.uniform(-0.5, 0.5)).collect(),
            SAMPLE_RATE,
        );
        let cfg = FeatureConfig::default();
        let a = mfcc(&clip, &cfg).unwrap();
        let b = mfcc(&clip, &cfg).unwrap();
        let bits = |m: &FeatureMatrix| {
            m.data
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn amplitude_scaling_only_moves_c0() {
        let mut rng = Rng::new(10);
        let clip = AudioClip::new(
            (0..6000).map(|_| rng.uniform(-0.3, 0.3)).collect(),
            SAMPLE_RATE,
        );
        let cfg = FeatureConfig::default();
        let base = mfcc(&clip, &cfg).unwrap();
        for alpha in [0.1, 2.5] {
            let scaled = AudioClip::new(
                clip.samples.iter().map(|v| v * alpha).collect(),
                SAMPLE_RATE,
            );
            let f = mfcc(&scaled, &cfg).unwrap();
            let shift = 2.0 * f64::ln(alpha) * (26f64).sqrt();
            for t in 0..f.frames() {
                assert!((f.data[(t, 0)] - base.data[(t, 0)] - shift).abs() < 1e-8);
                for k in 1..26 {
                    assert!((f.data[(t, k)] - base.data[(t, k)]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn stack_context_shapes_and_edges() {
        let f = FeatureMatrix {
            data: Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(),
        };
        assert_eq!(stack_context(&f, 0), f);
        assert_eq!(
            stack_context(&f, 1).data.row(0),
            &[0.0, 0.0, 1.0, 2.0, 0.0, 0.0]
        );
        let big = FeatureMatrix {
            data: Matrix::zeros(49, 26),
        };
        assert_eq!(stack_context(&big, 9).data.shape(), (49, 494));
    }

    #[test]
    fn stacked_rows_carry_neighbours() {
        let data = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = stack_context(&FeatureMatrix { data }, 1);
        assert_eq!(s.data.row(0), &[0.0, 1.0, 2.0]);
        assert_eq!(s.data.row(2), &[2.0, 3.0, 4.0]);
        assert_eq!(s.data.row(3), &[3.0, 4.0, 0.0]);
    }
}
