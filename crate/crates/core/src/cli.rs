//! Command-line front end.
//!
//! Every command prints NDJSON to stdout: one line per training epoch (or
//! sweep cell) and a final `summary` line. Errors go to stderr and set the
//! exit code: 1 I/O or format, 2 validation, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgMatches, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::experiments::{
    emit_report, run_label_efficiency, run_pretrain_scaling, summarize, ReportFormat, Splits,
    SweepManifest, SweepResult, SweepRow, SweepSpec,
};
use crate::metrics::MetricsReport;
use crate::parallel::Execution;
use crate::records::{
    read_esr, split_subjectwise, synthesize_corpus, write_esr, SleepStage, SplitSpec,
    DEFAULT_STAGE_PROPORTIONS,
};
use crate::trainer::{
    confusion_on, finetune, load_checkpoint, prepare_set, pretrain, save_checkpoint, Checkpoint,
    EpochLog, Phase, Snapshot, Start,
};

#[derive(Parser, Debug)]
#[command(
    name = "mp3-sleep",
    version,
    about = "Sleep staging with shuffled-patch position pretraining"
)]
pub struct Cli {
    /// Run every stage on the calling thread (results are identical either way).
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic labelled corpus as an ESR file.
    Synth {
        #[arg(long, default_value_t = 20)]
        subjects: usize,
        #[arg(long, default_value_t = 200)]
        epochs_per_subject: usize,
        /// Stage mix W,NR1,NR2,NR3,R.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_STAGE_PROPORTIONS)]
        proportions: Vec<f64>,
        /// Sampling rate in Hz (100 or 200).
        #[arg(long, default_value_t = 100.0)]
        rate: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split an ESR file subject-wise into train.esr, val.esr and test.esr.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        /// Train,val,test shares [default: 657:219:117 of the reference cohort].
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Position-prediction pretraining on every epoch of an ESR file (labels ignored).
    Pretrain {
        #[arg(long)]
        train: PathBuf,
        /// Run-config JSON; omitted keys keep their defaults (listed below).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the pretraining seed of the config [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_ckpt: PathBuf,
    },
    /// Supervised fine-tuning; without --init-ckpt this is the scratch baseline.
    Finetune {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// Run-config JSON; omitted keys keep their defaults (listed below).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pretraining checkpoint to start from.
        #[arg(long)]
        init_ckpt: Option<PathBuf>,
        /// Overrides the fine-tuning seed of the config [default: 0].
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_ckpt: PathBuf,
    },
    /// Score a checkpoint's stage head on an ESR file.
    Evaluate {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out_json: PathBuf,
    },
    /// Run a sweep over train.esr, val.esr and test.esr in --data-dir.
    Sweep {
        #[arg(long)]
        data_dir: PathBuf,
        /// Run-config JSON; omitted keys keep their defaults (listed below).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ExperimentArg::LabelEfficiency)]
        experiment: ExperimentArg,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    LabelEfficiency,
    PretrainScaling,
}

impl ExperimentArg {
    fn stem(self) -> &'static str {
        match self {
            ExperimentArg::LabelEfficiency => "label_efficiency",
            ExperimentArg::PretrainScaling => "pretrain_scaling",
        }
    }
}

/// Config-file keys with their default values, one top-level key per line.
pub fn config_defaults_help() -> String {
    let v = serde_json::to_value(SweepSpec::default()).expect("spec serializes");
    let mut out = String::from(
        "Run-config keys and defaults (JSON; omitted keys keep these values, unknown keys are rejected;\n\
         `pretrain.learning_rate` drives pretraining, `finetune.lr_grid` drives fine-tuning):\n",
    );
    if let Value::Object(map) = v {
        for (k, v) in map {
            out.push_str(&format!("  {k}: {v}\n"));
        }
    }
    out
}

/// Clap command with the config defaults appended to the help of the
/// commands that read a run-config file.
pub fn command() -> clap::Command {
    let text = config_defaults_help();
    let mut cmd = Cli::command();
    for name in ["pretrain", "finetune", "sweep"] {
        cmd = cmd.mut_subcommand(name, |c| c.after_help(text.clone()));
    }
    cmd
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Reads a run-config file layered over the defaults. Unknown keys anywhere
/// in the document are validation errors.
pub fn load_run_config(path: Option<&Path>) -> Result<SweepSpec> {
    let mut v = serde_json::to_value(SweepSpec::default()).expect("spec serializes");
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let user: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        if !user.is_object() {
            return Err(Error::validation(format!(
                "{}: run config must be a JSON object",
                p.display()
            )));
        }
        merge(&mut v, user);
    }
    let spec: SweepSpec =
        serde_json::from_value(v).map_err(|e| Error::validation(format!("run config: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

fn emit(v: &Value) {
    println!("{v}");
}

fn epoch_line(log: &EpochLog) -> Value {
    let mut v = serde_json::to_value(log).expect("log serializes");
    v["event"] = json!("epoch");
    v
}

fn state_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".state");
    PathBuf::from(s)
}

fn save_atomic(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    save_checkpoint(&tmp, ckpt)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Progress checkpoint left by an interrupted run, if any.
fn resume_state(out: &Path) -> Result<Option<Checkpoint>> {
    let p = state_path(out);
    if !p.exists() {
        return Ok(None);
    }
    let c = load_checkpoint(&p)?;
    emit(
        &json!({"event": "resume", "state": p.display().to_string(), "run": c.meta.run, "epoch": c.meta.epoch}),
    );
    Ok(Some(c))
}

fn finish_state(out: &Path) -> Result<()> {
    let p = state_path(out);
    if p.exists() {
        std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn exec_of(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn apply_exec(spec: &mut SweepSpec, exec: Execution) {
    spec.pretrain.execution = exec;
    spec.finetune.execution = exec;
}

fn cmd_synth(
    subjects: usize,
    epochs: usize,
    proportions: &[f64],
    rate: f32,
    seed: u64,
    out: &Path,
) -> Result<Value> {
    let mix: [f64; 5] = proportions
        .try_into()
        .map_err(|_| Error::validation("--proportions needs five values"))?;
    let corpus = synthesize_corpus(subjects, epochs, mix, rate, seed)?;
    write_esr(out, &corpus)?;
    let counts = corpus.label_counts();
    let total: u64 = counts.iter().sum();
    let dist: serde_json::Map<String, Value> = SleepStage::ALL
        .iter()
        .map(|s| {
            (
                s.name().to_string(),
                json!(counts[s.index()] as f64 / total as f64),
            )
        })
        .collect();
    Ok(json!({
        "subjects": corpus.len(),
        "epochs": total,
        "label_counts": counts,
        "label_distribution": dist,
        "out": out.display().to_string(),
    }))
}

fn cmd_split(input: &Path, fractions: Option<&[f64]>, seed: u64, out_dir: &Path) -> Result<Value> {
    let spec = match fractions {
        Some(&[a, b, c]) => SplitSpec::new(a, b, c, seed)?,
        Some(_) => return Err(Error::validation("--fractions needs three values")),
        None => SplitSpec::reference(seed),
    };
    let corpus = read_esr(input)?;
    let (tr, va, te) = split_subjectwise(&corpus, &spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut counts = serde_json::Map::new();
    for (name, set) in [("train", &tr), ("val", &va), ("test", &te)] {
        write_esr(out_dir.join(format!("{name}.esr")), set)?;
        counts.insert(name.into(), json!(set.len()));
    }
    Ok(json!({ "subjects": counts, "out_dir": out_dir.display().to_string() }))
}

fn progress_writer(out: &Path) -> impl FnMut(&EpochLog, &Snapshot<'_>) -> Result<()> + '_ {
    move |log, snap| {
        emit(&epoch_line(log));
        save_atomic(&state_path(out), &snap.checkpoint())
    }
}

fn cmd_pretrain(
    train: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    exec: Execution,
) -> Result<Value> {
    let mut spec = load_run_config(config)?;
    apply_exec(&mut spec, exec);
    if let Some(s) = seed {
        spec.pretrain.seed = s;
    }
    let corpus = read_esr(train)?;
    let resume = resume_state(out)?;
    let ckpt = pretrain(
        &corpus,
        &spec.model,
        &spec.pretrain,
        resume,
        &mut progress_writer(out),
    )?;
    save_checkpoint(out, &ckpt)?;
    finish_state(out)?;
    let last = ckpt.meta.history.last();
    Ok(json!({
        "out_ckpt": out.display().to_string(),
        "epochs": ckpt.meta.epoch,
        "final_loss": last.map(|l| l.loss),
        "final_pretext_acc": last.and_then(|l| l.pretext_acc),
    }))
}

fn cmd_finetune(
    train: &Path,
    val: &Path,
    config: Option<&Path>,
    init: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    exec: Execution,
) -> Result<Value> {
    let mut spec = load_run_config(config)?;
    apply_exec(&mut spec, exec);
    if let Some(s) = seed {
        spec.finetune.seed = s;
    }
    let init_ckpt = init.map(load_checkpoint).transpose()?;
    if let Some(c) = &init_ckpt {
        if c.model != spec.model {
            return Err(Error::validation(
                "--init-ckpt was trained with a different model configuration than --config",
            ));
        }
    }
    let start = match &init_ckpt {
        Some(c) => Start::Pretrained(&c.params),
        None => Start::Scratch,
    };
    let tr = read_esr(train)?;
    let va = read_esr(val)?;
    let resume = resume_state(out)?;
    let outcome = finetune(
        start,
        &tr,
        &va,
        &spec.model,
        &spec.finetune,
        resume,
        &mut progress_writer(out),
    )?;
    save_checkpoint(out, &outcome.best)?;
    finish_state(out)?;
    Ok(json!({
        "out_ckpt": out.display().to_string(),
        "start": if init_ckpt.is_some() { "pretrained" } else { "scratch" },
        "best": outcome.best.meta.best,
    }))
}

#[derive(Serialize)]
struct EvaluationFile {
    ckpt_phase: Phase,
    n_epochs: u64,
    metrics: MetricsReport,
    confusion: [[u64; 5]; 5],
}

fn cmd_evaluate(test: &Path, ckpt_path: &Path, out_json: &Path, exec: Execution) -> Result<Value> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let data = prepare_set(&read_esr(test)?, &ckpt.model, exec)?;
    let cm = confusion_on(&ckpt.params, &ckpt.model, &data, exec)?;
    let file = EvaluationFile {
        ckpt_phase: ckpt.meta.phase,
        n_epochs: cm.total(),
        metrics: MetricsReport::from_confusion(&cm)?,
        confusion: cm.counts,
    };
    let text = serde_json::to_string_pretty(&file).expect("report serializes") + "\n";
    std::fs::write(out_json, text).map_err(|e| Error::io(out_json, e))?;
    Ok(json!({ "out_json": out_json.display().to_string(), "metrics": file.metrics }))
}

fn cmd_sweep(
    data_dir: &Path,
    spec_path: Option<&Path>,
    out_dir: &Path,
    experiment: ExperimentArg,
    exec: Execution,
) -> Result<Value> {
    let mut spec = load_run_config(spec_path)?;
    let data = Splits {
        train: read_esr(data_dir.join("train.esr"))?,
        val: read_esr(data_dir.join("val.esr"))?,
        test: read_esr(data_dir.join("test.esr"))?,
    };
    data.validate()?;
    let ckpt_dir = out_dir.join("checkpoints").join(experiment.stem());
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    // checkpoints in out_dir are reused on a rerun, so the spec must not change underneath them
    let guard = out_dir.join(format!("{}_spec.json", experiment.stem()));
    let spec_text = serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n";
    let has_artifacts = std::fs::read_dir(&ckpt_dir)
        .map_err(|e| Error::io(&ckpt_dir, e))?
        .next()
        .is_some();
    if guard.exists() && has_artifacts {
        let old = std::fs::read_to_string(&guard).map_err(|e| Error::io(&guard, e))?;
        if old != spec_text {
            return Err(Error::validation(format!(
                "{} holds results of a different sweep spec; use a fresh --out-dir",
                out_dir.display()
            )));
        }
    } else {
        std::fs::write(&guard, &spec_text).map_err(|e| Error::io(&guard, e))?;
    }
    apply_exec(&mut spec, exec);
    let mut progress = |r: &SweepRow| {
        emit(&json!({
            "event": "cell",
            "method": r.method,
            "fraction": r.fraction,
            "multiplier": r.multiplier,
            "seed": r.seed,
            "bal_acc": r.metrics.balanced_accuracy,
        }))
    };
    let result: SweepResult = match experiment {
        ExperimentArg::LabelEfficiency => {
            run_label_efficiency(&spec, &data, Some(&ckpt_dir), &mut progress)?
        }
        ExperimentArg::PretrainScaling => {
            run_pretrain_scaling(&spec, &data, Some(&ckpt_dir), &mut progress)?
        }
    };
    let stem = experiment.stem();
    emit_report(
        &result,
        out_dir.join(format!("{stem}.csv")),
        ReportFormat::Csv,
    )?;
    emit_report(
        &result,
        out_dir.join(format!("{stem}.json")),
        ReportFormat::Json,
    )?;
    let summary = summarize(&result);
    let manifest = SweepManifest {
        artifacts: result
            .rows
            .iter()
            .filter_map(|r| {
                r.provenance
                    .checkpoint
                    .as_ref()
                    .map(|c| format!("checkpoints/{}/{c}", experiment.stem()))
            })
            .collect(),
        spec,
        summary: summary.clone(),
        result,
    };
    let path = out_dir.join(format!("{stem}_manifest.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let means: Vec<Value> = summary
        .iter()
        .map(|s| {
            json!({
                "method": s.method,
                "fraction": s.fraction,
                "multiplier": s.multiplier,
                "n_seeds": s.n_seeds,
                "bal_acc_mean": s.mean.balanced_accuracy,
                "bal_acc_sd": s.sd.balanced_accuracy,
            })
        })
        .collect();
    Ok(
        json!({ "out_dir": out_dir.display().to_string(), "rows": manifest.result.rows.len(), "summary": means }),
    )
}

fn dispatch(cli: &Cli) -> Result<(&'static str, Value)> {
    let exec = exec_of(cli.sequential);
    Ok(match &cli.command {
        Command::Synth {
            subjects,
            epochs_per_subject,
            proportions,
            rate,
            seed,
            out,
        } => (
            "synth",
            cmd_synth(
                *subjects,
                *epochs_per_subject,
                proportions,
                *rate,
                *seed,
                out,
            )?,
        ),
        Command::Split {
            input,
            fractions,
            seed,
            out_dir,
        } => (
            "split",
            cmd_split(input, fractions.as_deref(), *seed, out_dir)?,
        ),
        Command::Pretrain {
            train,
            config,
            seed,
            out_ckpt,
        } => (
            "pretrain",
            cmd_pretrain(train, config.as_deref(), *seed, out_ckpt, exec)?,
        ),
        Command::Finetune {
            train,
            val,
            config,
            init_ckpt,
            seed,
            out_ckpt,
        } => (
            "finetune",
            cmd_finetune(
                train,
                val,
                config.as_deref(),
                init_ckpt.as_deref(),
                *seed,
                out_ckpt,
                exec,
            )?,
        ),
        Command::Evaluate {
            test,
            ckpt,
            out_json,
        } => ("evaluate", cmd_evaluate(test, ckpt, out_json, exec)?),
        Command::Sweep {
            data_dir,
            spec,
            out_dir,
            experiment,
        } => (
            "sweep",
            cmd_sweep(data_dir, spec.as_deref(), out_dir, *experiment, exec)?,
        ),
    })
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let started = Instant::now();
    match dispatch(cli) {
        Ok((name, mut summary)) => {
            summary["event"] = json!("summary");
            summary["command"] = json!(name);
            summary["elapsed_s"] = json!(started.elapsed().as_secs_f64());
            emit(&summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `std::env::args` (usage errors exit with code 2) and runs.
pub fn main() -> i32 {
    let matches: ArgMatches = command().get_matches();
    match Cli::from_arg_matches(&matches) {
        Ok(cli) => run(&cli),
        Err(e) => e.exit(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_keeps_defaults_and_rejects_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(
            &p,
            r#"{"model": {"d_model": 64, "n_heads": 4, "d_ff": 128, "depth": 2}, "seeds": [7]}"#,
        )
        .unwrap();
        let spec = load_run_config(Some(&p)).unwrap();
        assert_eq!(spec.model.d_model, 64);
        assert_eq!(spec.model.n_tokens, 101);
        assert_eq!(spec.seeds, vec![7]);
        assert_eq!(spec.pretrain.batch_size, 512);

        std::fs::write(&p, r#"{"model": {"width": 64}}"#).unwrap();
        assert_eq!(load_run_config(Some(&p)).unwrap_err().exit_code(), 2);
        std::fs::write(&p, r#"{"finetune": {"lr": 0.1}}"#).unwrap();
        assert_eq!(load_run_config(Some(&p)).unwrap_err().exit_code(), 2);
        std::fs::write(&p, r#"{"extra": 1}"#).unwrap();
        assert_eq!(load_run_config(Some(&p)).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn help_lists_config_defaults() {
        let mut cmd = command();
        let help = cmd
            .find_subcommand_mut("pretrain")
            .unwrap()
            .render_long_help()
            .to_string();
        assert!(help.contains("\"batch_size\":512"), "{help}");
        assert!(help.contains("\"d_model\":512"));
        assert!(help.contains("\"n_epochs\":200"));
        let help = cmd
            .find_subcommand_mut("synth")
            .unwrap()
            .render_long_help()
            .to_string();
        assert!(help.contains("0.18"));
        assert!(help.contains("[default: 200]"));
    }
}
