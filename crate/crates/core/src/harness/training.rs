//! Per-utterance gradients, batch reduction and validation loss.

use crate::ctc::ctc_forward_backward;
use crate::data::{Batch, Dataset};
use crate::model::{backward, forward, infer, DropoutSpec, Gradients, Mode, ModelParams};
use crate::numerics::{Matrix, Rng};
use crate::par::{self, Exec};

use super::HarnessError;

/// Mean CTC loss over the batch and the matching mean gradient.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub losses: Vec<f64>,
    pub grads: Gradients,
}

/// Loss and gradient for one zero-padded utterance. The network runs over all
/// padded frames; only the first `len` rows enter the loss, so padded rows get a
/// zero upstream gradient.
pub fn utterance_gradient(
    params: &ModelParams,
    padded: &Matrix,
    len: usize,
    target: &[usize],
    dropout: DropoutSpec,
    rng: &mut Rng,
) -> Result<(f64, Gradients), HarnessError> {
    let (logprobs, cache) = forward(params, padded, dropout, Mode::Train, rng)?;
    let ctc = ctc_forward_backward(&logprobs.slice_rows(0, len), target)?;
    let mut d = Matrix::zeros(logprobs.rows(), logprobs.cols());
    d.data_mut()[..ctc.dlogprobs.data().len()].copy_from_slice(ctc.dlogprobs.data());
    let grads = backward(&cache, params, &d)?;
    Ok((ctc.loss, grads))
}

/// Dropout stream for one batch member, independent of scheduling.
pub fn dropout_rng(seed: u64, epoch: u64, batch: u64, member: u64) -> Rng {
    Rng::derive(seed, &[0xD80, epoch, batch, member])
}

/// Members run concurrently under `Exec::Parallel`; the reduction is always in
/// member order, so the result does not depend on `exec`.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradient(
    params: &ModelParams,
    batch: &Batch,
    dropout: DropoutSpec,
    seed: u64,
    epoch: u64,
    batch_index: u64,
    exec: Exec,
) -> Result<BatchGradient, HarnessError> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let results = par::map_with(exec, &idx, |&i| {
        let mut rng = dropout_rng(seed, epoch, batch_index, i as u64);
        utterance_gradient(
            params,
            &batch.features[i],
            batch.lengths[i],
            &batch.targets[i],
            dropout,
            &mut rng,
        )
    });
    let mut grads = ModelParams::zeros(params.dims);
    let mut losses = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        let (loss, g) = r.map_err(|e| match e {
            HarnessError::Ctc(source) => HarnessError::NonFiniteLoss {
                epoch,
                batch: batch_index,
                utterances: vec![batch.members[i]],
                detail: source.to_string(),
            },
            other => other,
        })?;
        losses.push(loss);
        grads.add_assign(&g);
    }
    let bad: Vec<usize> = losses
        .iter()
        .zip(&batch.members)
        .filter(|(l, _)| !l.is_finite())
        .map(|(_, &m)| m)
        .collect();
    if !bad.is_empty() || !grads.is_finite() {
        return Err(HarnessError::NonFiniteLoss {
            epoch,
            batch: batch_index,
            utterances: if bad.is_empty() {
                batch.members.clone()
            } else {
                bad
            },
            detail: "loss or gradient is not finite".into(),
        });
    }
    let n = losses.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok(BatchGradient {
        loss: losses.iter().sum::<f64>() / n,
        losses,
        grads,
    })
}

/// Mean per-utterance CTC loss with dropout off.
pub fn validation_loss(
    params: &ModelParams,
    data: &Dataset,
    exec: Exec,
) -> Result<f64, HarnessError> {
    if data.is_empty() {
        return Err(HarnessError::EmptyDataset("validation".into()));
    }
    let losses = par::map_with(exec, &data.utterances, |u| -> Result<f64, HarnessError> {
        let lp = infer(params, &u.features)?;
        Ok(ctc_forward_backward(&lp, &u.labels)?.loss)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len() as f64)
}
