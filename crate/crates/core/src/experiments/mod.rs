//! Label-fraction and pretraining-scale sweeps.

mod report;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::ModelConfig;
use crate::parallel::Execution;
use crate::records::{subsample_subjects, SubjectSet};
use crate::seed::{self, tag};
use crate::trainer::{
    evaluate_stage, finetune_examples, load_checkpoint, prepare_set, pretrain_tokens, quiet,
    save_checkpoint, Checkpoint, LabeledSet, Phase, Start, TrainConfig,
};

pub use report::{
    emit_report, format_cell, read_report_json, reported_bal_acc, summarize, ReportFormat,
    ReportRow, SummaryRow, SweepManifest, REPORT_COLUMNS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Scratch,
    PretrainFinetune,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Scratch => "scratch",
            Method::PretrainFinetune => "pretrain_finetune",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    LabelEfficiency,
    PretrainScaling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub label_fractions: Vec<f64>,
    pub methods: Vec<Method>,
    pub pretrain_multipliers: Vec<usize>,
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            label_fractions: vec![0.01, 0.10, 1.00],
            methods: vec![Method::Scratch, Method::PretrainFinetune],
            pretrain_multipliers: vec![1, 10, 100],
            seeds: vec![0, 1, 2],
            model: ModelConfig::default(),
            pretrain: TrainConfig::pretrain_default(),
            finetune: TrainConfig::finetune_default(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.label_fractions.is_empty() || self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::validation(
                "sweep needs at least one fraction, method and seed",
            ));
        }
        if let Some(f) = self
            .label_fractions
            .iter()
            .find(|&&f| !(f > 0.0 && f <= 1.0))
        {
            return Err(Error::validation(format!(
                "label fraction {f} outside (0, 1]"
            )));
        }
        if self.pretrain_multipliers.contains(&0) {
            return Err(Error::validation(
                "pretraining multipliers must be at least 1",
            ));
        }
        self.model.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()
    }
}

/// Subject-disjoint train / validation / test sets.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: SubjectSet,
    pub val: SubjectSet,
    pub test: SubjectSet,
}

impl Splits {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() || self.val.is_empty() || self.test.is_empty() {
            return Err(Error::validation("every split needs at least one subject"));
        }
        if !(self.train.is_disjoint(&self.val)
            && self.train.is_disjoint(&self.test)
            && self.val.is_disjoint(&self.test))
        {
            return Err(Error::validation("splits share subjects"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
    pub pretrain_subjects: Vec<String>,
    pub checkpoint: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub fraction: f64,
    /// Pretraining set size relative to the supervised set; 0 for scratch.
    pub multiplier: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub provenance: Provenance,
}

impl SweepRow {
    fn key(&self) -> (Method, u64, usize, u64) {
        (
            self.method,
            self.fraction.to_bits(),
            self.multiplier,
            self.seed,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub experiment: Experiment,
    pub test_subjects: Vec<String>,
    pub rows: Vec<SweepRow>,
}

/// Tokenized epochs per subject, computed once per sweep.
struct Prepared {
    by_subject: BTreeMap<String, LabeledSet>,
}

impl Prepared {
    fn new(sets: &[&SubjectSet], cfg: &ModelConfig, exec: Execution) -> Result<Self> {
        let mut by_subject = BTreeMap::new();
        for set in sets {
            for id in set.ids() {
                let one = set.select(&[id])?;
                by_subject.insert(id.clone(), prepare_set(&one, cfg, exec)?);
            }
        }
        Ok(Prepared { by_subject })
    }

    fn gather(&self, ids: &[String]) -> LabeledSet {
        let mut out = LabeledSet::default();
        for id in ids {
            let s = &self.by_subject[id];
            out.tokens.extend(s.tokens.iter().cloned());
            out.labels.extend(s.labels.iter().copied());
        }
        out
    }
}

/// Supervised subjects for one (fraction, seed): identical for every method
/// and multiplier.
fn supervised_subjects(
    data: &Splits,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>)> {
    let tr = subsample_subjects(&data.train, fraction, seed)?;
    let va = subsample_subjects(&data.val, fraction, seed)?;
    Ok((tr.ids().to_vec(), va.ids().to_vec()))
}

/// Nested pretraining pools: the supervised subjects followed by extra
/// training subjects in a fixed random order, so smaller multipliers are
/// prefixes of larger ones.
pub fn pretraining_pool(
    train: &SubjectSet,
    supervised: &[String],
    multiplier: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<String>> {
    let need = multiplier * supervised.len();
    if need > train.len() {
        return Err(Error::validation(format!(
            "multiplier {multiplier} needs {need} training subjects for pretraining but only {} exist (short by {})",
            train.len(),
            need - train.len()
        )));
    }
    let mut extra: Vec<String> = train
        .ids()
        .iter()
        .filter(|id| !supervised.contains(id))
        .cloned()
        .collect();
    extra.shuffle(&mut seed::rng(seed, &[tag::POOL, fraction.to_bits()]));
    let mut pool = supervised.to_vec();
    pool.extend(extra.into_iter().take(need - supervised.len()));
    pool.sort();
    Ok(pool)
}

fn artifact_name(method: Method, fraction: f64, multiplier: usize, seed: u64) -> String {
    format!("{}_f{fraction}_m{multiplier}_s{seed}.ckpt", method.name())
}

struct Cell<'a> {
    method: Method,
    fraction: f64,
    multiplier: usize,
    seed: u64,
    train_ids: &'a [String],
    val_ids: &'a [String],
    pool: Vec<String>,
}

fn run_cell(
    spec: &SweepSpec,
    prepared: &Prepared,
    test: &LabeledSet,
    cell: Cell<'_>,
    artifacts: Option<&Path>,
) -> Result<SweepRow> {
    let started = Instant::now();
    let name = artifact_name(cell.method, cell.fraction, cell.multiplier, cell.seed);
    let fine_cfg = TrainConfig {
        seed: cell.seed,
        ..spec.finetune.clone()
    };
    if let Some(dir) = artifacts {
        if let Some(done) = finished_artifact(&dir.join(&name), &spec.model, &fine_cfg) {
            let metrics = evaluate_stage(&done.params, &spec.model, test, fine_cfg.execution)?;
            return Ok(row_for(cell, metrics, Some(name), started));
        }
    }
    let train_set = prepared.gather(cell.train_ids);
    let val_set = prepared.gather(cell.val_ids);
    let pre_cfg = TrainConfig {
        seed: cell.seed,
        ..spec.pretrain.clone()
    };
    let pretrained = match cell.method {
        Method::Scratch => None,
        Method::PretrainFinetune => {
            let pool = prepared.gather(&cell.pool);
            Some(pretrain_tokens(
                &pool.tokens,
                &spec.model,
                &pre_cfg,
                None,
                &mut quiet,
            )?)
        }
    };
    let start = match &pretrained {
        Some(c) => Start::Pretrained(&c.params),
        None => Start::Scratch,
    };
    let outcome = finetune_examples(
        start,
        &train_set,
        &val_set,
        &spec.model,
        &fine_cfg,
        None,
        &mut quiet,
    )?;
    let metrics = evaluate_stage(&outcome.best.params, &spec.model, test, fine_cfg.execution)?;
    let checkpoint = match artifacts {
        Some(dir) => {
            save_checkpoint(dir.join(&name), &outcome.best)?;
            Some(name)
        }
        None => None,
    };
    Ok(row_for(cell, metrics, checkpoint, started))
}

/// A completed fine-tuning checkpoint left by an earlier run of the same cell.
fn finished_artifact(path: &Path, model: &ModelConfig, train: &TrainConfig) -> Option<Checkpoint> {
    let c = load_checkpoint(path).ok()?;
    let ok = c.meta.complete
        && c.meta.phase == Phase::Finetune
        && c.model == *model
        && c.meta.train.as_ref() == Some(train);
    ok.then_some(c)
}

fn row_for(
    cell: Cell<'_>,
    metrics: MetricsReport,
    checkpoint: Option<String>,
    started: Instant,
) -> SweepRow {
    SweepRow {
        method: cell.method,
        fraction: cell.fraction,
        multiplier: cell.multiplier,
        seed: cell.seed,
        metrics,
        provenance: Provenance {
            train_subjects: cell.train_ids.to_vec(),
            val_subjects: cell.val_ids.to_vec(),
            pretrain_subjects: cell.pool,
            checkpoint,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    }
}

fn finish(experiment: Experiment, data: &Splits, mut rows: Vec<SweepRow>) -> SweepResult {
    rows.sort_by_key(|r| r.key());
    SweepResult {
        experiment,
        test_subjects: data.test.ids().to_vec(),
        rows,
    }
}

/// Scratch versus pretrain-then-finetune at each labelled fraction.
///
/// With an artifact directory, each cell's best checkpoint is saved there and
/// a finished checkpoint from an earlier run is evaluated instead of retrained.
///
/// Training and validation subjects are both subsampled at the fraction; the
/// pretrained arm pretrains on the subsampled training subjects without labels.
/// Every model is scored on the full test split.
pub fn run_label_efficiency(
    spec: &SweepSpec,
    data: &Splits,
    artifacts: Option<&Path>,
    progress: &mut dyn FnMut(&SweepRow),
) -> Result<SweepResult> {
    spec.validate()?;
    data.validate()?;
    let exec = spec.finetune.execution;
    let prepared = Prepared::new(&[&data.train, &data.val], &spec.model, exec)?;
    let test = prepare_set(&data.test, &spec.model, exec)?;
    let mut rows = Vec::new();
    for &fraction in &spec.label_fractions {
        for &seed in &spec.seeds {
            let (train_ids, val_ids) = supervised_subjects(data, fraction, seed)?;
            for &method in &spec.methods {
                let (multiplier, pool) = match method {
                    Method::Scratch => (0, Vec::new()),
                    Method::PretrainFinetune => (1, train_ids.clone()),
                };
                let cell = Cell {
                    method,
                    fraction,
                    multiplier,
                    seed,
                    train_ids: &train_ids,
                    val_ids: &val_ids,
                    pool,
                };
                let row = run_cell(spec, &prepared, &test, cell, artifacts)?;
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(finish(Experiment::LabelEfficiency, data, rows))
}

/// Pretrain-then-finetune with pretraining pools `multiplier` times the size
/// of the supervised subset, drawn from the training split.
pub fn run_pretrain_scaling(
    spec: &SweepSpec,
    data: &Splits,
    artifacts: Option<&Path>,
    progress: &mut dyn FnMut(&SweepRow),
) -> Result<SweepResult> {
    spec.validate()?;
    data.validate()?;
    if spec.pretrain_multipliers.is_empty() {
        return Err(Error::validation(
            "pretraining-scale sweep needs at least one multiplier",
        ));
    }
    let exec = spec.finetune.execution;
    // fail on shortfalls before any training starts
    for &fraction in &spec.label_fractions {
        for &seed in &spec.seeds {
            let (train_ids, _) = supervised_subjects(data, fraction, seed)?;
            for &m in &spec.pretrain_multipliers {
                pretraining_pool(&data.train, &train_ids, m, fraction, seed)?;
            }
        }
    }
    let prepared = Prepared::new(&[&data.train, &data.val], &spec.model, exec)?;
    let test = prepare_set(&data.test, &spec.model, exec)?;
    let mut rows = Vec::new();
    for &fraction in &spec.label_fractions {
        for &seed in &spec.seeds {
            let (train_ids, val_ids) = supervised_subjects(data, fraction, seed)?;
            for &multiplier in &spec.pretrain_multipliers {
                let pool = pretraining_pool(&data.train, &train_ids, multiplier, fraction, seed)?;
                let cell = Cell {
                    method: Method::PretrainFinetune,
                    fraction,
                    multiplier,
                    seed,
                    train_ids: &train_ids,
                    val_ids: &val_ids,
                    pool,
                };
                let row = run_cell(spec, &prepared, &test, cell, artifacts)?;
                progress(&row);
                rows.push(row);
            }
        }
    }
    Ok(finish(Experiment::PretrainScaling, data, rows))
}

/// Mean balanced accuracy over the rows matching `method`, `fraction` and `multiplier`.
pub fn mean_balanced_accuracy(
    result: &SweepResult,
    method: Method,
    fraction: f64,
    multiplier: usize,
) -> Option<f64> {
    let v: Vec<f64> = result
        .rows
        .iter()
        .filter(|r| r.method == method && r.fraction == fraction && r.multiplier == multiplier)
        .map(|r| r.metrics.balanced_accuracy)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::records::EpochRecord;

    fn subjects(n: usize) -> SubjectSet {
        let mut s = SubjectSet::new();
        for i in 0..n {
            s.insert(format!("T{i:03}"), Vec::<EpochRecord>::new())
                .unwrap();
        }
        s
    }

    #[test]
    fn pools_are_nested_supersets() {
        let train = subjects(66);
        let sup = vec!["T005".to_string()];
        let p1 = pretraining_pool(&train, &sup, 1, 0.01, 3).unwrap();
        let p10 = pretraining_pool(&train, &sup, 10, 0.01, 3).unwrap();
        let p60 = pretraining_pool(&train, &sup, 60, 0.01, 3).unwrap();
        assert_eq!(p1, sup);
        assert_eq!(p10.len(), 10);
        assert!(p10.iter().all(|id| p60.contains(id)));
        assert!(p10.contains(&sup[0]));
        let err = pretraining_pool(&train, &sup, 100, 0.01, 3).unwrap_err();
        assert!(err.to_string().contains("short by 34"), "{err}");
    }

    #[test]
    fn spec_validation() {
        SweepSpec::default().validate().unwrap();
        let bad = SweepSpec {
            label_fractions: vec![0.0],
            ..SweepSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = SweepSpec {
            pretrain_multipliers: vec![0],
            ..SweepSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
