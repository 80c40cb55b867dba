//! Training runs, evaluation, and the six-regime transfer experiment.

mod config;
pub mod synth;
pub mod training;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::TrainConfig;

use crate::ctc::CtcError;
use crate::data::{make_batches, parse_manifest, DataError, Dataset};
use crate::decoder::{beam_decode, DecodeError, DecodeParams};
use crate::eval::{evaluate_texts, EvalError, EvalReport, Normalize};
use crate::lm::{read_arpa, train_ngram, write_arpa, LmError, NGramLM, DEFAULT_DISCOUNT};
use crate::model::{infer, init_params, DropoutSpec, ModelDims, ModelError, ModelParams};
use crate::numerics::Rng;
use crate::optim::{adam_step, build_freeze_mask, AdamHyper, AdamState, FreezePlan, OptimError};
use crate::par::{self, Exec};
use crate::transfer::{
    load_checkpoint, remap_output_layer, save_checkpoint, Alphabet, AlphabetError, CheckpointError,
    CheckpointMeta,
};
use training::{batch_gradient, validation_loss};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("alphabet: {0}")]
    Alphabet(#[from] AlphabetError),
    #[error("language model: {0}")]
    Lm(#[from] LmError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(
        "non-finite loss in epoch {epoch}, batch {batch}, utterances {utterances:?}: {detail}"
    )]
    NonFiniteLoss {
        epoch: u64,
        batch: u64,
        utterances: Vec<usize>,
        detail: String,
    },
    #[error("{0} needs an initial checkpoint")]
    MissingInit(FreezePlan),
    #[error("{0} trains from scratch and takes no initial checkpoint")]
    UnexpectedInit(FreezePlan),
    #[error("alphabet mismatch: {0}")]
    AlphabetMismatch(String),
    #[error("{0} set is empty")]
    EmptyDataset(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub records: Vec<EpochRecord>,
}

impl LearningCurve {
    pub const HEADER: &'static str = "epoch,train_loss,val_loss";

    /// Full-precision CSV.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
        }
        s
    }

    /// Lowest validation loss; the earliest epoch wins ties.
    pub fn best(&self) -> Option<EpochRecord> {
        self.records
            .iter()
            .copied()
            .fold(None, |best, r| match best {
                Some(b) if b.val_loss <= r.val_loss => Some(b),
                _ => Some(r),
            })
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub plan: FreezePlan,
    pub run_dir: PathBuf,
    pub curve: LearningCurve,
    pub best_epoch: u32,
    pub best_checkpoint: PathBuf,
    pub trainable_params: usize,
    pub total_params: usize,
}

pub fn checkpoint_name(epoch: u32) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

pub fn read_alphabet(path: &Path) -> Result<Alphabet> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(Alphabet::parse(&text)?)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

/// Trains under `plan`, writing everything into `config.out_dir`:
/// `config.txt`, `epoch_NNN.ckpt`, `curve.csv`, `best_epoch.txt` and `best.ckpt`.
///
/// Fine-tuning plans start from `init` with a freshly initialised output layer
/// for the configured alphabet; the checkpoint's feature settings and widths
/// take precedence over the config.
pub fn train(config: &TrainConfig, init: Option<&Path>, plan: FreezePlan) -> Result<RunSummary> {
    config.validate()?;
    let mut cfg = config.clone();
    let alphabet = read_alphabet(&cfg.alphabet)?;
    let mut params = match (plan.uses_pretrained(), init) {
        (true, None) => return Err(HarnessError::MissingInit(plan)),
        (false, Some(_)) => return Err(HarnessError::UnexpectedInit(plan)),
        (true, Some(path)) => {
            let (p, meta) = load_checkpoint(path)?;
            if meta.features != cfg.features || meta.dims.hidden != cfg.hidden {
                log::warn!(
                    "{plan}: using feature settings and width from {}",
                    path.display()
                );
            }
            cfg.features = meta.features.clone();
            cfg.hidden = meta.dims.hidden;
            cfg.relu_cap = meta.dims.relu_cap;
            remap_output_layer(&p, &alphabet, &mut Rng::derive(cfg.seed, &[0x4E3]))
        }
        (false, None) => {
            let mut dims = ModelDims::new(
                cfg.features.stacked_width(),
                cfg.hidden,
                alphabet.n_labels(),
            );
            dims.relu_cap = cfg.relu_cap;
            init_params(dims, &mut Rng::derive(cfg.seed, &[0x1417]))?
        }
    };
    let dims = params.dims;
    let run_dir = cfg.out_dir.clone();
    fs::create_dir_all(&run_dir).map_err(|e| HarnessError::io(&run_dir, e))?;
    write(&run_dir.join("config.txt"), cfg.to_config_string())?;

    let load = |path: &Path, name: &str| -> Result<Dataset> {
        let ds =
            Dataset::from_manifest(&parse_manifest(path, &alphabet)?, &cfg.features, &alphabet)?;
        if ds.is_empty() {
            return Err(HarnessError::EmptyDataset(name.into()));
        }
        Ok(ds)
    };
    let train_set = load(&cfg.train_manifest, "training")?;
    let val_set = load(&cfg.val_manifest, "validation")?;

    let mask = build_freeze_mask(plan);
    let trainable = mask.trainable_param_count(&dims);
    log::info!(
        "{}: {trainable} of {} parameters trainable",
        plan.method_name(),
        dims.total_param_count()
    );
    let hyper = AdamHyper {
        lr: cfg.learning_rate,
        ..AdamHyper::default()
    };
    let mut state = AdamState::new(dims);
    let dropout = DropoutSpec { rate: cfg.dropout };
    let mut curve = LearningCurve::default();

    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for (bi, batch) in make_batches(&train_set, cfg.batch_size, cfg.seed, epoch as u64)
            .iter()
            .enumerate()
        {
            let bg = batch_gradient(
                &params,
                batch,
                dropout,
                cfg.seed,
                epoch as u64,
                bi as u64,
                Exec::Parallel,
            )?;
            total += bg.losses.iter().sum::<f64>();
            adam_step(&mut params, &bg.grads, &mut state, &hyper, &mask)?;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_loss: validation_loss(&params, &val_set, Exec::Parallel)?,
        };
        log::info!(
            "{} epoch {epoch}: train {:.4} val {:.4}",
            plan.slug(),
            rec.train_loss,
            rec.val_loss
        );
        curve.records.push(rec);
        let meta = CheckpointMeta {
            dims,
            alphabet: alphabet.clone(),
            features: cfg.features.clone(),
            epoch,
            val_loss: rec.val_loss,
        };
        save_checkpoint(&params, &meta, &run_dir.join(checkpoint_name(epoch)))?;
        write(&run_dir.join("curve.csv"), curve.to_csv())?;
        if cfg.keep_best > 0 {
            prune_checkpoints(&run_dir, &curve, cfg.keep_best)?;
        }
        if cfg.stop_below.is_some_and(|x| rec.train_loss < x) {
            break;
        }
    }

    let best = curve.best().expect("at least one epoch");
    let best_checkpoint = run_dir.join("best.ckpt");
    let src = run_dir.join(checkpoint_name(best.epoch));
    fs::copy(&src, &best_checkpoint).map_err(|e| HarnessError::io(&src, e))?;
    write(&run_dir.join("best_epoch.txt"), format!("{}\n", best.epoch))?;
    Ok(RunSummary {
        plan,
        run_dir,
        curve,
        best_epoch: best.epoch,
        best_checkpoint,
        trainable_params: trainable,
        total_params: dims.total_param_count(),
    })
}

/// Removes epoch checkpoints outside the `k` lowest validation losses.
fn prune_checkpoints(dir: &Path, curve: &LearningCurve, k: usize) -> Result<()> {
    let mut ranked = curve.records.clone();
    ranked.sort_by(|a, b| {
        a.val_loss
            .total_cmp(&b.val_loss)
            .then(a.epoch.cmp(&b.epoch))
    });
    for r in ranked.iter().skip(k) {
        let p = dir.join(checkpoint_name(r.epoch));
        if p.exists() {
            fs::remove_file(&p).map_err(|e| HarnessError::io(&p, e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub decode: DecodeParams,
    pub normalize: Normalize,
    /// If set, the checkpoint must carry exactly this alphabet.
    pub expected_alphabet: Option<Alphabet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub references: Vec<String>,
    pub hypotheses: Vec<String>,
}

/// Beam-decodes every utterance in `manifest` with the checkpoint's own
/// front-end settings and scores the transcripts.
pub fn evaluate(
    checkpoint: &Path,
    manifest: &Path,
    lm: Option<&NGramLM>,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    let (params, meta) = load_checkpoint(checkpoint)?;
    if let Some(want) = &opts.expected_alphabet {
        if *want != meta.alphabet {
            return Err(HarnessError::AlphabetMismatch(format!(
                "checkpoint has {:?}, expected {:?}",
                meta.alphabet.chars().iter().collect::<String>(),
                want.chars().iter().collect::<String>()
            )));
        }
    }
    let rows = parse_manifest(manifest, &meta.alphabet).map_err(|e| match e {
        DataError::InvalidTranscriptChar { row, ch } => HarnessError::AlphabetMismatch(format!(
            "{} row {row}: {ch:?} is not in the checkpoint alphabet",
            manifest.display()
        )),
        other => other.into(),
    })?;
    let data = Dataset::from_manifest(&rows, &meta.features, &meta.alphabet)?;
    let hypotheses = decode_dataset(&params, &data, lm, &opts.decode, &meta.alphabet)?;
    let references: Vec<String> = data
        .utterances
        .iter()
        .map(|u| u.transcript.clone())
        .collect();
    let report = evaluate_texts(&references, &hypotheses, opts.normalize)?;
    Ok(Evaluation {
        report,
        references,
        hypotheses,
    })
}

pub fn decode_dataset(
    params: &ModelParams,
    data: &Dataset,
    lm: Option<&NGramLM>,
    p: &DecodeParams,
    alphabet: &Alphabet,
) -> Result<Vec<String>> {
    par::map(&data.utterances, |u| -> Result<String> {
        Ok(beam_decode(&infer(params, &u.features)?, lm, p, alphabet)?)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub wer: f64,
    pub cer: f64,
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from("method,wer,cer\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.4},{:.4}", r.method, r.wer, r.cer);
    }
    s
}

pub fn write_hypotheses(path: &Path, ev: &Evaluation) -> Result<()> {
    let err = |e: csv::Error| HarnessError::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["reference", "hypothesis"]).map_err(err)?;
    for (r, h) in ev.references.iter().zip(&ev.hypotheses) {
        w.write_record([r, h]).map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// The configured ARPA file, or a model trained on `lm_corpus` (falling back to
/// the training transcripts) and saved as `out_dir/lm.arpa`.
pub fn build_lm(config: &TrainConfig, alphabet: &Alphabet) -> Result<NGramLM> {
    if let Some(p) = &config.lm {
        return Ok(read_arpa(p)?);
    }
    let corpus = match &config.lm_corpus {
        Some(p) => fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?,
        None => parse_manifest(&config.train_manifest, alphabet)?
            .rows
            .iter()
            .map(|r| format!("{}\n", r.transcript))
            .collect(),
    };
    let lm = train_ngram(&corpus, config.lm_order, DEFAULT_DISCOUNT, Some(alphabet))?;
    fs::create_dir_all(&config.out_dir).map_err(|e| HarnessError::io(&config.out_dir, e))?;
    write_arpa(&lm, &config.out_dir.join("lm.arpa"))?;
    Ok(lm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub runs: Vec<RunSummary>,
    pub results: Vec<ResultRow>,
}

/// Trains and evaluates all six regimes on the same data and seeds. Writes
/// `results.csv`, `trainable_params.csv`, `curves/<slug>.csv`, and one run
/// directory per regime under `config.out_dir`.
pub fn run_suite(config: &TrainConfig, source_checkpoint: &Path) -> Result<SuiteReport> {
    let alphabet = read_alphabet(&config.alphabet)?;
    let (_, source_meta) = load_checkpoint(source_checkpoint)?;
    if source_meta.alphabet == alphabet {
        log::warn!("source checkpoint already uses the target alphabet");
    }
    let out = &config.out_dir;
    let curves_dir = out.join("curves");
    fs::create_dir_all(&curves_dir).map_err(|e| HarnessError::io(&curves_dir, e))?;
    let lm = build_lm(config, &alphabet)?;
    let test_manifest = config
        .test_manifest
        .clone()
        .unwrap_or_else(|| config.val_manifest.clone());
    let opts = EvalOptions {
        decode: config.decode,
        normalize: Normalize {
            lowercase: config.lowercase,
        },
        expected_alphabet: Some(alphabet.clone()),
    };

    let mut runs = Vec::new();
    let mut results = Vec::new();
    let mut counts = String::from("method,trainable_params,total_params\n");
    for plan in FreezePlan::ALL {
        let mut cfg = config.clone();
        cfg.out_dir = out.join(plan.slug());
        let init = plan.uses_pretrained().then_some(source_checkpoint);
        let run = train(&cfg, init, plan)?;
        let ev = evaluate(&run.best_checkpoint, &test_manifest, Some(&lm), &opts)?;
        write_hypotheses(&run.run_dir.join("test_hypotheses.csv"), &ev)?;
        write(
            &curves_dir.join(format!("{}.csv", plan.slug())),
            run.curve.to_csv(),
        )?;
        let _ = writeln!(
            counts,
            "{},{},{}",
            plan.method_name(),
            run.trainable_params,
            run.total_params
        );
        log::info!(
            "{}: WER {:.4} CER {:.4}",
            plan.method_name(),
            ev.report.wer,
            ev.report.cer
        );
        results.push(ResultRow {
            method: plan.method_name().to_string(),
            wer: ev.report.wer,
            cer: ev.report.cer,
        });
        runs.push(run);
    }
    write(&out.join("results.csv"), results_csv(&results))?;
    write(&out.join("trainable_params.csv"), counts)?;
    Ok(SuiteReport { runs, results })
}
