//! Pretraining and fine-tuning loops.
//!
//! All randomness is derived from the run seed and (epoch, batch, sample)
//! indices, so a run resumed from a mid-training checkpoint replays the exact
//! trajectory of an uninterrupted one.

use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamHyper, AdamState};
use super::checkpoint::{BestRecord, Checkpoint, CheckpointMeta, EpochLog, Phase};
use super::config::TrainConfig;
use super::data::{prepare_set, require_nonempty, LabeledSet};
use super::loss::class_weights;
use crate::dsp::TokenSequence;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::metrics::{balanced_accuracy, ConfusionMatrix, MetricsReport};
use crate::model::{
    argmax, forward_pretext, forward_stage, init_params, loss_and_gradients, reset_heads, Batch,
    GradOptions, Mode, ModelConfig, ModelParams, StageExample,
};
use crate::mp3::{make_pretext_batch, pretext_hits, pretext_loss};
use crate::parallel::{self, Execution};
use crate::records::{SleepStage, SubjectSet};
use crate::seed::{self, tag};

/// Training sequences scored for the per-epoch pretext accuracy line.
pub const PRETEXT_PROBE: usize = 256;

/// Read-only view of a run in progress, handed to the epoch observer.
pub struct Snapshot<'a> {
    model: &'a ModelConfig,
    params: &'a ModelParams<f32>,
    optimizer: &'a AdamState<f32>,
    meta: CheckpointMeta,
    best_params: Option<&'a ModelParams<f32>>,
}

impl Snapshot<'_> {
    /// A resumable checkpoint of the current state.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: *self.model,
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
            meta: self.meta.clone(),
            best_params: self.best_params.cloned(),
        }
    }
}

/// Called after every training epoch.
pub type Observer<'a> = dyn FnMut(&EpochLog, &Snapshot<'_>) -> Result<()> + 'a;

/// Observer that ignores progress.
pub fn quiet(_: &EpochLog, _: &Snapshot<'_>) -> Result<()> {
    Ok(())
}

fn hyper(cfg: &TrainConfig, lr: f64) -> AdamHyper {
    AdamHyper {
        learning_rate: lr,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    }
}

fn epoch_order(n: usize, run_seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(run_seed, &[tag::EPOCH_ORDER, epoch as u64]));
    order
}

fn check_tokens(tokens: &[TokenSequence], cfg: &ModelConfig) -> Result<()> {
    if let Some(t) = tokens
        .iter()
        .find(|t| t.n_tokens() != cfg.n_tokens || t.patch_len() != cfg.patch_len)
    {
        return Err(Error::validation(format!(
            "token grid {}×{} does not match the model ({}×{})",
            t.n_tokens(),
            t.patch_len(),
            cfg.n_tokens,
            cfg.patch_len
        )));
    }
    Ok(())
}

fn check_resume(
    ckpt: &Checkpoint,
    phase: Phase,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<()> {
    if ckpt.meta.phase != phase {
        return Err(Error::validation(format!(
            "cannot resume {phase:?} from a {:?} checkpoint",
            ckpt.meta.phase
        )));
    }
    if &ckpt.model != model || ckpt.meta.train.as_ref() != Some(train) {
        return Err(Error::validation(
            "resume checkpoint was written with a different model or training configuration",
        ));
    }
    Ok(())
}

fn same_shapes(a: &ModelParams<f32>, cfg: &ModelConfig) -> bool {
    a.tensor_infos() == ModelParams::<f32>::zeros(cfg).tensor_infos()
}

/// Held-out pretext loss and top-1 position accuracy over hidden tokens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretextEval {
    pub loss: f64,
    pub accuracy: f64,
    pub n_scored: usize,
}

/// Scores every sequence once, with pretext batches drawn from `seed`.
pub fn evaluate_pretext(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    tokens: &[TokenSequence],
    keep_ratio: f64,
    mask_ratio: f64,
    seed: u64,
    exec: Execution,
) -> Result<PretextEval> {
    let idx: Vec<usize> = (0..tokens.len()).collect();
    let per = parallel::map(exec, &idx, |&i| -> Result<(f64, usize, usize)> {
        let b = make_pretext_batch(
            &tokens[i],
            keep_ratio,
            mask_ratio,
            seed::derive(seed, &[tag::EVAL_PRETEXT, i as u64]),
        )?;
        let logits: Mat<f32> = forward_pretext(
            params,
            cfg,
            &b.shuffled_patches,
            &b.positional_input(),
            &b.key_mask,
            Mode::Eval,
        )?;
        let (hits, total) = pretext_hits(&logits, &b)?;
        Ok((pretext_loss(&logits, &b)? as f64, hits, total))
    });
    let (mut loss, mut hits, mut total) = (0.0, 0, 0);
    for r in per {
        let (l, h, t) = r?;
        loss += l;
        hits += h;
        total += t;
    }
    if total == 0 {
        return Err(Error::validation("pretext evaluation scored no tokens"));
    }
    Ok(PretextEval {
        loss: loss / tokens.len() as f64,
        accuracy: hits as f64 / total as f64,
        n_scored: total,
    })
}

/// MP3 pretraining over unlabeled token sequences.
pub fn pretrain_tokens(
    tokens: &[TokenSequence],
    model: &ModelConfig,
    train: &TrainConfig,
    resume: Option<Checkpoint>,
    observer: &mut Observer<'_>,
) -> Result<Checkpoint> {
    model.validate()?;
    train.validate()?;
    if tokens.is_empty() {
        return Err(Error::validation("pretraining corpus holds no epochs"));
    }
    check_tokens(tokens, model)?;
    let seed = train.seed;
    let (mut params, mut state, start, mut history) = match resume {
        Some(c) => {
            check_resume(&c, Phase::Pretrain, model, train)?;
            if c.meta.complete {
                return Ok(c);
            }
            let state = c
                .optimizer
                .ok_or_else(|| Error::validation("resume checkpoint carries no optimizer state"))?;
            (c.params, state, c.meta.epoch, c.meta.history)
        }
        None => {
            let p = init_params::<f32>(model, seed);
            let s = AdamState::new(&p);
            (p, s, 0, Vec::new())
        }
    };
    let h = hyper(train, train.learning_rate);
    let n = tokens.len();
    let probe: Vec<TokenSequence> = if n <= PRETEXT_PROBE {
        tokens.to_vec()
    } else {
        (0..PRETEXT_PROBE)
            .map(|k| tokens[k * n / PRETEXT_PROBE].clone())
            .collect()
    };
    let run_seed = seed::derive(seed, &[tag::PRETEXT]);

    for epoch in start..train.n_epochs {
        let order = epoch_order(n, run_seed, epoch);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(train.batch_size).enumerate() {
            let batches = parallel::map(train.execution, chunk, |&i| {
                make_pretext_batch(
                    &tokens[i],
                    train.keep_ratio,
                    train.mask_ratio,
                    seed::derive(run_seed, &[epoch as u64, i as u64]),
                )
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let opts = GradOptions {
                dropout_seed: Some(seed::derive(
                    run_seed,
                    &[tag::DROPOUT, epoch as u64, b as u64],
                )),
                execution: train.execution,
            };
            let (loss, grad) =
                loss_and_gradients(&params, model, &Batch::Pretext(&batches), &opts)?;
            adam_step(&mut params, &grad, &mut state, &h)?;
            loss_sum += loss as f64 * chunk.len() as f64;
        }
        let probe_eval = evaluate_pretext(
            &params,
            model,
            &probe,
            train.keep_ratio,
            train.mask_ratio,
            seed,
            train.execution,
        )?;
        let log = EpochLog {
            phase: Phase::Pretrain,
            run: 0,
            learning_rate: train.learning_rate,
            epoch: epoch + 1,
            loss: loss_sum / n as f64,
            pretext_acc: Some(probe_eval.accuracy),
            val_bal_acc: None,
        };
        history.push(log.clone());
        let snap = Snapshot {
            model,
            params: &params,
            optimizer: &state,
            meta: CheckpointMeta {
                phase: Phase::Pretrain,
                seed,
                train: Some(train.clone()),
                run: 0,
                epoch: epoch + 1,
                complete: epoch + 1 == train.n_epochs,
                history: history.clone(),
                best: None,
            },
            best_params: None,
        };
        observer(&log, &snap)?;
    }
    Ok(Checkpoint {
        model: *model,
        params,
        optimizer: Some(state),
        meta: CheckpointMeta {
            phase: Phase::Pretrain,
            seed,
            train: Some(train.clone()),
            run: 0,
            epoch: train.n_epochs,
            complete: true,
            history,
            best: None,
        },
        best_params: None,
    })
}

/// MP3 pretraining on every epoch of `corpus`; labels are ignored.
pub fn pretrain(
    corpus: &SubjectSet,
    model: &ModelConfig,
    train: &TrainConfig,
    resume: Option<Checkpoint>,
    observer: &mut Observer<'_>,
) -> Result<Checkpoint> {
    model.validate()?;
    let data = prepare_set(corpus, model, train.execution)?;
    pretrain_tokens(&data.tokens, model, train, resume, observer)
}

pub fn predict_stages(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    tokens: &[TokenSequence],
    exec: Execution,
) -> Result<Vec<SleepStage>> {
    parallel::map(exec, tokens, |t| {
        let logits = forward_stage(params, cfg, t, Mode::Eval)?;
        Ok(SleepStage::ALL[argmax(&logits)])
    })
    .into_iter()
    .collect()
}

pub fn confusion_on(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    set: &LabeledSet,
    exec: Execution,
) -> Result<ConfusionMatrix> {
    let preds = predict_stages(params, cfg, &set.tokens, exec)?;
    crate::metrics::confusion(&preds, &set.labels)
}

pub fn evaluate_stage(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    set: &LabeledSet,
    exec: Execution,
) -> Result<MetricsReport> {
    MetricsReport::from_confusion(&confusion_on(params, cfg, set, exec)?)
}

/// Where fine-tuning starts from.
#[derive(Clone, Copy, Debug)]
pub enum Start<'a> {
    /// Fresh initialization: the supervised baseline.
    Scratch,
    /// Encoder weights from pretraining; both heads are re-initialized.
    Pretrained(&'a ModelParams<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOutcome {
    /// Best validation checkpoint over all learning rates and epochs.
    pub best: Checkpoint,
    pub history: Vec<EpochLog>,
}

fn initial_params(start: Start<'_>, model: &ModelConfig, seed: u64) -> ModelParams<f32> {
    match start {
        Start::Scratch => init_params(model, seed),
        Start::Pretrained(p) => {
            let mut p = p.clone();
            reset_heads(&mut p, seed);
            p
        }
    }
}

/// Supervised training, one run per learning rate, keeping the epoch with
/// the highest validation balanced accuracy (earliest wins ties).
pub fn finetune_examples(
    start: Start<'_>,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    model: &ModelConfig,
    train: &TrainConfig,
    resume: Option<Checkpoint>,
    observer: &mut Observer<'_>,
) -> Result<FinetuneOutcome> {
    model.validate()?;
    train.validate()?;
    require_nonempty(train_set, "training")?;
    require_nonempty(val_set, "validation")?;
    check_tokens(&train_set.tokens, model)?;
    check_tokens(&val_set.tokens, model)?;
    if train.n_epochs == 0 {
        return Err(Error::validation("fine-tuning needs at least one epoch"));
    }
    if let Start::Pretrained(p) = start {
        if !same_shapes(p, model) {
            return Err(Error::validation(
                "pretrained parameters do not match the model configuration",
            ));
        }
    }
    let weights = class_weights(&train_set.label_counts())?;
    let seed = train.seed;

    let mut history = Vec::new();
    let mut best: Option<BestRecord> = None;
    let mut best_params: Option<ModelParams<f32>> = None;
    let mut carried: Option<(usize, usize, ModelParams<f32>, AdamState<f32>)> = None;
    if let Some(c) = resume {
        check_resume(&c, Phase::Finetune, model, train)?;
        if c.meta.complete {
            return Ok(FinetuneOutcome {
                history: c.meta.history.clone(),
                best: c,
            });
        }
        history = c.meta.history;
        best = c.meta.best;
        best_params = c.best_params;
        let state = c
            .optimizer
            .ok_or_else(|| Error::validation("resume checkpoint carries no optimizer state"))?;
        carried = Some((c.meta.run, c.meta.epoch, c.params, state));
    }
    let first_run = carried.as_ref().map_or(0, |c| c.0);

    for (run, &lr) in train.lr_grid.iter().enumerate().skip(first_run) {
        let run_seed = seed::derive(seed, &[tag::FINETUNE, run as u64]);
        let (start_epoch, mut params, mut state) = match carried.take() {
            Some((r, e, p, s)) if r == run => (e, p, s),
            _ => {
                let p = initial_params(start, model, seed);
                let s = AdamState::new(&p);
                (0, p, s)
            }
        };
        let h = hyper(train, lr);
        let n = train_set.len();
        for epoch in start_epoch..train.n_epochs {
            let order = epoch_order(n, run_seed, epoch);
            let mut loss_sum = 0.0;
            for (b, chunk) in order.chunks(train.batch_size).enumerate() {
                let examples: Vec<StageExample<'_>> = chunk
                    .iter()
                    .map(|&i| StageExample {
                        tokens: &train_set.tokens[i],
                        label: train_set.labels[i],
                    })
                    .collect();
                let opts = GradOptions {
                    dropout_seed: Some(seed::derive(
                        run_seed,
                        &[tag::DROPOUT, epoch as u64, b as u64],
                    )),
                    execution: train.execution,
                };
                let batch = Batch::Stage {
                    examples: &examples,
                    class_weights: weights,
                };
                let (loss, grad) = loss_and_gradients(&params, model, &batch, &opts)?;
                adam_step(&mut params, &grad, &mut state, &h)?;
                loss_sum += loss as f64 * chunk.len() as f64;
            }
            let score =
                balanced_accuracy(&confusion_on(&params, model, val_set, train.execution)?)?;
            if best.is_none_or(|b| score > b.score) {
                best = Some(BestRecord {
                    run,
                    epoch: epoch + 1,
                    learning_rate: lr,
                    score,
                });
                best_params = Some(params.clone());
            }
            let log = EpochLog {
                phase: Phase::Finetune,
                run,
                learning_rate: lr,
                epoch: epoch + 1,
                loss: loss_sum / n as f64,
                pretext_acc: None,
                val_bal_acc: Some(score),
            };
            history.push(log.clone());
            let snap = Snapshot {
                model,
                params: &params,
                optimizer: &state,
                meta: CheckpointMeta {
                    phase: Phase::Finetune,
                    seed,
                    train: Some(train.clone()),
                    run,
                    epoch: epoch + 1,
                    complete: false,
                    history: history.clone(),
                    best,
                },
                best_params: best_params.as_ref(),
            };
            observer(&log, &snap)?;
        }
    }
    let best_rec = best.expect("at least one epoch ran");
    let best = Checkpoint {
        model: *model,
        params: best_params.expect("best parameters recorded"),
        optimizer: None,
        meta: CheckpointMeta {
            phase: Phase::Finetune,
            seed,
            train: Some(train.clone()),
            run: best_rec.run,
            epoch: best_rec.epoch,
            complete: true,
            history: history.clone(),
            best: Some(best_rec),
        },
        best_params: None,
    };
    Ok(FinetuneOutcome { best, history })
}

/// Fine-tuning on subject sets; train and validation must not share subjects.
pub fn finetune(
    start: Start<'_>,
    train_subjects: &SubjectSet,
    val_subjects: &SubjectSet,
    model: &ModelConfig,
    train: &TrainConfig,
    resume: Option<Checkpoint>,
    observer: &mut Observer<'_>,
) -> Result<FinetuneOutcome> {
    if !train_subjects.is_disjoint(val_subjects) {
        return Err(Error::validation(
            "training and validation sets share subjects",
        ));
    }
    model.validate()?;
    let tr = prepare_set(train_subjects, model, train.execution)?;
    let va = prepare_set(val_subjects, model, train.execution)?;
    finetune_examples(start, &tr, &va, model, train, resume, observer)
}
