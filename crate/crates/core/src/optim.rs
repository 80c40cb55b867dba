//! Adam with whole-layer freeze masks.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{Gradients, ModelDims, ModelParams, N_LAYERS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown freeze plan {0:?} (expected reference or 0-4 frozen layers)")]
    UnknownPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(dims: ModelDims) -> Self {
        AdamState {
            m: ModelParams::zeros(dims),
            v: ModelParams::zeros(dims),
            t: 0,
        }
    }
}

/// The six training regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FreezePlan {
    /// Random initialisation, nothing frozen.
    Reference,
    F0,
    F1,
    F2,
    F3,
    /// Layers 1–3 and 5; the LSTM stays trainable.
    F4,
}

impl FreezePlan {
    pub const ALL: [FreezePlan; 6] = [
        FreezePlan::Reference,
        FreezePlan::F0,
        FreezePlan::F1,
        FreezePlan::F2,
        FreezePlan::F3,
        FreezePlan::F4,
    ];

    pub fn from_frozen_count(n: u32) -> Result<Self, OptimError> {
        match n {
            0 => Ok(FreezePlan::F0),
            1 => Ok(FreezePlan::F1),
            2 => Ok(FreezePlan::F2),
            3 => Ok(FreezePlan::F3),
            4 => Ok(FreezePlan::F4),
            _ => Err(OptimError::UnknownPlan(n.to_string())),
        }
    }

    /// 1-based indices of the frozen layers.
    pub fn frozen_layers(self) -> &'static [usize] {
        match self {
            FreezePlan::Reference | FreezePlan::F0 => &[],
            FreezePlan::F1 => &[1],
            FreezePlan::F2 => &[1, 2],
            FreezePlan::F3 => &[1, 2, 3],
            FreezePlan::F4 => &[1, 2, 3, 5],
        }
    }

    /// Whether the regime starts from a source-language checkpoint.
    pub fn uses_pretrained(self) -> bool {
        self != FreezePlan::Reference
    }

    /// Row label in results tables.
    pub fn method_name(self) -> &'static str {
        match self {
            FreezePlan::Reference => "Reference",
            FreezePlan::F0 => "0 Frozen Layers",
            FreezePlan::F1 => "1 Frozen Layer",
            FreezePlan::F2 => "2 Frozen Layers",
            FreezePlan::F3 => "3 Frozen Layers",
            FreezePlan::F4 => "4 Frozen Layers",
        }
    }

    /// Short identifier used for directory names.
    pub fn slug(self) -> &'static str {
        match self {
            FreezePlan::Reference => "reference",
            FreezePlan::F0 => "frozen0",
            FreezePlan::F1 => "frozen1",
            FreezePlan::F2 => "frozen2",
            FreezePlan::F3 => "frozen3",
            FreezePlan::F4 => "frozen4",
        }
    }
}

impl fmt::Display for FreezePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.method_name())
    }
}

impl FromStr for FreezePlan {
    type Err = OptimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("reference") {
            return Ok(FreezePlan::Reference);
        }
        if let Some(p) = FreezePlan::ALL
            .iter()
            .find(|p| p.slug() == s || p.method_name() == s)
        {
            return Ok(*p);
        }
        s.parse::<u32>()
            .map_err(|_| OptimError::UnknownPlan(s.to_string()))
            .and_then(FreezePlan::from_frozen_count)
    }
}

/// Per-layer trainable flags; index 0 is layer 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreezeMask {
    trainable: [bool; N_LAYERS],
}

impl FreezeMask {
    pub fn all_trainable() -> Self {
        FreezeMask {
            trainable: [true; N_LAYERS],
        }
    }

    pub fn is_trainable(&self, layer: usize) -> bool {
        self.trainable[layer - 1]
    }

    pub fn frozen_layers(&self) -> Vec<usize> {
        (1..=N_LAYERS).filter(|&l| !self.is_trainable(l)).collect()
    }

    pub fn trainable_param_count(&self, dims: &ModelDims) -> usize {
        (1..=N_LAYERS)
            .filter(|&l| self.is_trainable(l))
            .map(|l| dims.layer_param_count(l))
            .sum()
    }
}

pub fn build_freeze_mask(plan: FreezePlan) -> FreezeMask {
    let mut mask = FreezeMask::all_trainable();
    for &l in plan.frozen_layers() {
        mask.trainable[l - 1] = false;
    }
    mask
}

/// One Adam step with bias correction. Frozen layers keep their parameters and
/// moments untouched; the step counter is shared.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    hyper: &AdamHyper,
    mask: &FreezeMask,
) -> Result<(), OptimError> {
    for (name, other) in [
        ("gradients", grads),
        ("first moment", &state.m),
        ("second moment", &state.v),
    ] {
        if other.dims != params.dims {
            return Err(OptimError::DimensionMismatch(format!(
                "{name} dims differ from parameters"
            )));
        }
    }
    params
        .check_shapes()
        .map_err(|e| OptimError::DimensionMismatch(e.to_string()))?;
    grads
        .check_shapes()
        .map_err(|e| OptimError::DimensionMismatch(e.to_string()))?;

    state.t = state.t.saturating_add(1);
    let t = state.t as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    let update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..theta.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    };
    for l in 0..N_LAYERS {
        if !mask.trainable[l] {
            continue;
        }
        let (p, g) = (&mut params.layers[l], &grads.layers[l]);
        let (m, v) = (&mut state.m.layers[l], &mut state.v.layers[l]);
        update(p.w.data_mut(), g.w.data(), m.w.data_mut(), v.w.data_mut());
        update(&mut p.b, &g.b, &mut m.b, &mut v.b);
    }
    Ok(())
}
