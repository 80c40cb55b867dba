use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use asrz_core::data::load_wav;
use asrz_core::decoder::{beam_decode, greedy_decode, DecodeParams};
use asrz_core::eval::Normalize;
use asrz_core::features::featurize;
use asrz_core::harness::{self, synth, EvalOptions, ResultRow, TrainConfig};
use asrz_core::lm::{read_arpa, train_ngram, write_arpa, DEFAULT_DISCOUNT};
use asrz_core::model::infer;
use asrz_core::optim::FreezePlan;
use asrz_core::par;
use asrz_core::transfer::load_checkpoint;

#[derive(Parser)]
#[command(
    name = "asrz",
    version,
    about = "CTC speech recognition with layer-freezing transfer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fine-tune a checkpoint with the first N layers frozen (0..=4; 4 also freezes layer 5).
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u32).range(0..=4))]
        freeze: u32,
    },
    /// Decode a manifest and report WER/CER.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// ARPA character LM; omit for acoustic-only beam search.
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long, default_value_t = DecodeParams::default().alpha)]
        alpha: f64,
        #[arg(long, default_value_t = DecodeParams::default().beta)]
        beta: f64,
        #[arg(long, default_value_t = DecodeParams::default().beam_width)]
        beam_width: usize,
        #[arg(long)]
        lowercase: bool,
        /// Write `method,wer,cer` here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        method: String,
        /// Write per-utterance reference/hypothesis pairs here.
        #[arg(long)]
        hypotheses: Option<PathBuf>,
    },
    /// Transcribe one WAV file; greedy unless an LM is given.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long, default_value_t = DecodeParams::default().alpha)]
        alpha: f64,
        #[arg(long, default_value_t = DecodeParams::default().beta)]
        beta: f64,
        #[arg(long, default_value_t = DecodeParams::default().beam_width)]
        beam_width: usize,
    },
    /// Build a character n-gram LM in ARPA format.
    LmTrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
        discount: f64,
        /// Restrict to this alphabet and give unseen characters mass.
        #[arg(long)]
        alphabet: Option<PathBuf>,
    },
    /// Train and evaluate all six regimes against one source checkpoint.
    Suite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        source_checkpoint: PathBuf,
    },
    /// Write a synthetic source/target corpus pair with ready-made configs.
    SynthData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        source_utterances: Option<usize>,
        #[arg(long)]
        target_utterances: Option<usize>,
    },
}

fn decode_params(alpha: f64, beta: f64, beam_width: usize) -> Result<DecodeParams> {
    let p = DecodeParams {
        alpha,
        beta,
        beam_width,
    };
    p.validate()?;
    Ok(p)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    par::configure_threads_from_env();
    match Cli::parse().command {
        Command::Train { config } => {
            let cfg = TrainConfig::load(&config)?;
            let run = harness::train(&cfg, None, FreezePlan::Reference)?;
            println!(
                "best epoch {} -> {}",
                run.best_epoch,
                run.best_checkpoint.display()
            );
        }
        Command::Finetune {
            config,
            init,
            freeze,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let plan = FreezePlan::from_frozen_count(freeze)?;
            let run = harness::train(&cfg, Some(&init), plan)?;
            println!(
                "{}: best epoch {} -> {}",
                plan.method_name(),
                run.best_epoch,
                run.best_checkpoint.display()
            );
        }
        Command::Eval {
            checkpoint,
            manifest,
            lm,
            alpha,
            beta,
            beam_width,
            lowercase,
            out,
            method,
            hypotheses,
        } => {
            let lm = lm
                .map(|p| read_arpa(&p).with_context(|| format!("reading {}", p.display())))
                .transpose()?;
            let opts = EvalOptions {
                decode: decode_params(alpha, beta, beam_width)?,
                normalize: Normalize { lowercase },
                expected_alphabet: None,
            };
            let ev = harness::evaluate(&checkpoint, &manifest, lm.as_ref(), &opts)?;
            let csv = harness::results_csv(&[ResultRow {
                method,
                wer: ev.report.wer,
                cer: ev.report.cer,
            }]);
            if let Some(p) = out {
                fs::write(&p, &csv).with_context(|| format!("writing {}", p.display()))?;
            }
            if let Some(p) = hypotheses {
                harness::write_hypotheses(&p, &ev)?;
            }
            print!("{csv}");
        }
        Command::Decode {
            checkpoint,
            wav,
            lm,
            alpha,
            beta,
            beam_width,
        } => {
            let (params, meta) = load_checkpoint(&checkpoint)?;
            let clip = load_wav(&wav)?;
            let logprobs = infer(&params, &featurize(&clip, &meta.features)?.data)?;
            let text = match lm {
                Some(p) => {
                    let lm = read_arpa(&p)?;
                    beam_decode(
                        &logprobs,
                        Some(&lm),
                        &decode_params(alpha, beta, beam_width)?,
                        &meta.alphabet,
                    )?
                }
                None => greedy_decode(&logprobs, &meta.alphabet)?,
            };
            println!("{text}");
        }
        Command::LmTrain {
            corpus,
            order,
            out,
            discount,
            alphabet,
        } => {
            let text = fs::read_to_string(&corpus)
                .with_context(|| format!("reading {}", corpus.display()))?;
            let alphabet = alphabet.map(|p| harness::read_alphabet(&p)).transpose()?;
            let lm = train_ngram(&text, order, discount, alphabet.as_ref())?;
            write_arpa(&lm, &out)?;
            let counts: Vec<String> = (1..=order)
                .map(|k| format!("{k}-grams: {}", lm.ngram_count(k)))
                .collect();
            println!("{}", counts.join(", "));
        }
        Command::Suite {
            config,
            source_checkpoint,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let report = harness::run_suite(&cfg, &source_checkpoint)?;
            print!("{}", harness::results_csv(&report.results));
        }
        Command::SynthData {
            out_dir,
            seed,
            source_utterances,
            target_utterances,
        } => {
            let mut size = synth::ScenarioSize::default();
            size.source_utterances = source_utterances.unwrap_or(size.source_utterances);
            size.target_utterances = target_utterances.unwrap_or(size.target_utterances);
            let sc = synth::generate(&out_dir, seed, size)?;
            println!(
                "{}\n{}",
                sc.source_config.display(),
                sc.target_config.display()
            );
        }
    }
    Ok(())
}
