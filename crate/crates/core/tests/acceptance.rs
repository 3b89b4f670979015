//! Acceptance criteria, one pass/fail line each.
//!
//! `cargo test --test acceptance` runs all ten; pass criterion numbers
//! (`cargo test --test acceptance -- 1 5 10`) to run a subset.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mp3_sleep::dsp::{resample_fourier, tokenize, TokenSequence};
use mp3_sleep::experiments::{
    mean_balanced_accuracy, run_label_efficiency, run_pretrain_scaling, Method, Splits, SweepSpec,
};
use mp3_sleep::metrics::{accuracy, balanced_accuracy, cohens_kappa, f1_scores, ConfusionMatrix};
use mp3_sleep::model::{
    count_parameters, encode, init_params, loss_and_gradients, Batch, GradOptions, KeyMask, Mode,
    ModelConfig, ModelParams, PositionalInput, StageExample,
};
use mp3_sleep::mp3::make_pretext_batch;
use mp3_sleep::parallel::Execution;
use mp3_sleep::records::{
    encode_esr, read_esr, split_subjectwise, synthesize_corpus, write_esr, SleepStage, SplitSpec,
    DEFAULT_STAGE_PROPORTIONS,
};
use mp3_sleep::trainer::{
    confusion_on, evaluate_pretext, finetune_examples, prepare_set, pretrain_tokens, quiet,
    EpochLog, Snapshot, Start, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (
        e <= limit,
        format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()),
    )
}

// ---------------------------------------------------------------- 1

fn tiny() -> ModelConfig {
    ModelConfig {
        patch_len: 5,
        n_tokens: 9,
        d_model: 16,
        depth: 2,
        n_heads: 2,
        d_ff: 32,
        dropout: 0.0,
        n_positions: 9,
        n_classes: 5,
    }
}

fn random_tokens(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> TokenSequence {
    let data = (0..cfg.n_tokens * cfg.patch_len)
        .map(|_| rng.random_range(-2.0f32..2.0))
        .collect();
    TokenSequence::from_rows(cfg.n_tokens, cfg.patch_len, data).unwrap()
}

/// Largest per-group error: relative to the group's gradient scale, or
/// absolute for groups whose exact gradient is zero.
fn worst_fd_error(batch: &Batch<'_>, cfg: &ModelConfig, seed: u64) -> (f64, String) {
    let mut params = init_params::<f64>(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let opts = GradOptions {
        dropout_seed: None,
        execution: Execution::Sequential,
    };
    let (_, grad) = loss_and_gradients(&params, cfg, batch, &opts).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grad
        .tensors()
        .into_iter()
        .map(|(n, _, v)| (n, v.to_vec()))
        .collect();
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    for (t, (name, g)) in analytic.iter().enumerate() {
        let (mut diff, mut scale) = (0f64, 0f64);
        for (j, &gj) in g.iter().enumerate() {
            let orig = params.tensors_mut()[t][j];
            params.tensors_mut()[t][j] = orig + h;
            let (lp, _) = loss_and_gradients(&params, cfg, batch, &opts).unwrap();
            params.tensors_mut()[t][j] = orig - h;
            let (lm, _) = loss_and_gradients(&params, cfg, batch, &opts).unwrap();
            params.tensors_mut()[t][j] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            diff = diff.max((numeric - gj).abs());
            scale = scale.max(numeric.abs()).max(gj.abs());
        }
        let err = if scale < 1e-8 { diff } else { diff / scale };
        if err > worst.0 {
            worst = (err, name.clone());
        }
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let tokens: Vec<_> = (0..3).map(|_| random_tokens(&cfg, &mut rng)).collect();
    let examples: Vec<_> = tokens
        .iter()
        .zip([SleepStage::W, SleepStage::NR3, SleepStage::R])
        .map(|(t, label)| StageExample { tokens: t, label })
        .collect();
    let stage = worst_fd_error(
        &Batch::Stage {
            examples: &examples,
            class_weights: [1.3, 0.7, 0.4, 1.9, 1.0],
        },
        &cfg,
        1,
    );
    let batches: Vec<_> = (0..2)
        .map(|i| make_pretext_batch(&random_tokens(&cfg, &mut rng), 0.5, 0.3, 40 + i).unwrap())
        .collect();
    let pretext = worst_fd_error(&Batch::Pretext(&batches), &cfg, 2);
    let (fast, time) = within(t, Duration::from_secs(120));
    outcome(
        stage.0 < 1e-5 && pretext.0 < 1e-5 && fast,
        format!(
            "worst stage {:.1e} ({}), worst pretext {:.1e} ({}); {time}",
            stage.0, stage.1, pretext.0, pretext.1
        ),
    )
}

// ---------------------------------------------------------------- 2

fn parameter_count() -> Outcome {
    let cfg = ModelConfig::default();
    let n = count_parameters(&cfg);
    let params = ModelParams::<f32>::zeros(&cfg);
    let mut groups: Vec<(String, usize)> = Vec::new();
    for info in params.tensor_infos() {
        let key = if info.name.starts_with("layers.") {
            "encoder layers".to_string()
        } else {
            info.name.split('.').next().unwrap().to_string()
        };
        let size: usize = info.shape.iter().product();
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1 += size,
            None => groups.push((key, size)),
        }
    }
    let rel = (n as f64 - 18_986_661.0).abs() / 18_986_661.0;
    let parts: Vec<String> = groups.iter().map(|(k, v)| format!("{k} {v}")).collect();
    outcome(
        rel < 0.005 && params.n_scalars() == n,
        format!(
            "{n} ({:.4}% off 18,986,661): {}",
            rel * 100.0,
            parts.join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 3

fn permutation_equivariance() -> Outcome {
    let t = Instant::now();
    let cfg = ModelConfig::small();
    let none = PositionalInput::none(cfg.n_tokens);
    let all = KeyMask::all(cfg.n_tokens);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0f32;
    for trial in 0..100 {
        let params = init_params::<f32>(&cfg, trial);
        let tokens = random_tokens(&cfg, &mut rng);
        let mut perm: Vec<usize> = (0..cfg.n_tokens).collect();
        perm.shuffle(&mut rng);
        let out = encode(&params, &cfg, &tokens, &none, &all, Mode::Eval).unwrap();
        let out_p = encode(
            &params,
            &cfg,
            &tokens.permuted(&perm),
            &none,
            &all,
            Mode::Eval,
        )
        .unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for (a, b) in out_p.row(i).iter().zip(out.row(src)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let (fast, time) = within(t, Duration::from_secs(60));
    outcome(
        worst < 1e-4 && fast,
        format!("max abs diff {worst:.2e} over 100 trials; {time}"),
    )
}

// ---------------------------------------------------------------- 4

fn pretext_construction() -> Outcome {
    let t = Instant::now();
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let tokens = random_tokens(&cfg, &mut rng);
    let mut bad = 0;
    for seed in 0..10_000u64 {
        let b = make_pretext_batch(&tokens, 0.5, 0.0, seed).unwrap();
        let mut seen = vec![false; cfg.n_tokens];
        for &p in &b.position_labels {
            if p < seen.len() {
                seen[p] = true;
            }
        }
        let is_perm = b.position_labels.len() == cfg.n_tokens && seen.iter().all(|&s| s);
        let visible = b.pe_visibility.0.iter().filter(|&&v| v).count();
        let keys = b.key_mask.0.iter().all(|&k| k);
        let rows_match = b
            .position_labels
            .iter()
            .enumerate()
            .all(|(i, &p)| b.shuffled_patches.patch(i) == tokens.patch(p));
        if !(is_perm && visible == 51 && keys && rows_match) {
            bad += 1;
        }
    }
    let (fast, time) = within(t, Duration::from_secs(60));
    outcome(
        bad == 0 && fast,
        format!("{bad} of 10000 batches violate the contract; {time}"),
    )
}

// ---------------------------------------------------------------- 5

/// Metrics recomputed from the expanded (label, prediction) list.
fn brute_force(cm: &ConfusionMatrix) -> [f64; 9] {
    let mut pairs = Vec::new();
    for (l, row) in cm.counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((l, p), c as usize));
        }
    }
    let n = pairs.len() as f64;
    let count = |f: &dyn Fn(&(usize, usize)) -> bool| pairs.iter().filter(|x| f(x)).count() as f64;
    let acc = count(&|&(l, p)| l == p) / n;
    let mut recalls = Vec::new();
    let mut f1 = [0.0; 5];
    let mut pe = 0.0;
    for (c, f1_c) in f1.iter_mut().enumerate() {
        let tp = count(&|&(l, p)| l == c && p == c);
        let true_c = count(&|&(l, _)| l == c);
        let pred_c = count(&|&(_, p)| p == c);
        if true_c > 0.0 {
            recalls.push(tp / true_c);
        }
        let prec = if pred_c > 0.0 { tp / pred_c } else { 0.0 };
        let rec = if true_c > 0.0 { tp / true_c } else { 0.0 };
        *f1_c = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        pe += (true_c / n) * (pred_c / n);
    }
    let bal = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let kappa = if pe >= 1.0 {
        0.0
    } else {
        (acc - pe) / (1.0 - pe)
    };
    let mf1 = f1.iter().sum::<f64>() / 5.0;
    [bal, acc, kappa, mf1, f1[0], f1[1], f1[2], f1[3], f1[4]]
}

fn embed(block: &[&[u64]]) -> ConfusionMatrix {
    let mut counts = [[0u64; 5]; 5];
    for (i, row) in block.iter().enumerate() {
        counts[i][..row.len()].copy_from_slice(row);
    }
    ConfusionMatrix::from_counts(counts)
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let mut counts = [[0u64; 5]; 5];
        for row in counts.iter_mut() {
            let empty = rng.random_bool(0.1);
            for v in row.iter_mut() {
                *v = if empty { 0 } else { rng.random_range(0..40) };
            }
        }
        counts[0][0] += 1;
        let cm = ConfusionMatrix::from_counts(counts);
        let (f1, mf1) = f1_scores(&cm);
        let ours = [
            balanced_accuracy(&cm).unwrap(),
            accuracy(&cm).unwrap(),
            cohens_kappa(&cm).unwrap(),
            mf1,
            f1[0],
            f1[1],
            f1[2],
            f1[3],
            f1[4],
        ];
        for (a, b) in ours.iter().zip(brute_force(&cm)) {
            worst = worst.max((a - b).abs());
        }
    }
    let bal = balanced_accuracy(&embed(&[&[9, 1], &[4, 6]])).unwrap();
    let kappa = cohens_kappa(&embed(&[&[20, 5], &[10, 15]])).unwrap();
    let (f1, _) = f1_scores(&embed(&[&[8, 2], &[3, 7]]));
    let (p, r) = (8.0 / 11.0, 8.0 / 10.0);
    let hand = bal == 0.75
        && kappa == (0.7 - 0.5) / (1.0 - 0.5)
        && (kappa - 0.4).abs() < 1e-15
        && f1[0] == 2.0 * p * r / (p + r)
        && format!("{:.3}", f1[0]) == "0.762";
    outcome(
        worst < 1e-12 && hand,
        format!(
            "max deviation {worst:.1e} over 1000 matrices; bal {bal}, kappa {kappa}, F1 {:.6}",
            f1[0]
        ),
    )
}

// ---------------------------------------------------------------- 6

fn overfit() -> Outcome {
    let t = Instant::now();
    let model = ModelConfig {
        d_model: 64,
        depth: 1,
        n_heads: 2,
        d_ff: 128,
        ..ModelConfig::default()
    };
    let corpus = synthesize_corpus(4, 16, DEFAULT_STAGE_PROPORTIONS, 100.0, 1).unwrap();
    let data = prepare_set(&corpus, &model, Execution::Parallel).unwrap();
    let train = TrainConfig {
        batch_size: 8,
        n_epochs: 200,
        lr_grid: vec![1e-4],
        ..TrainConfig::finetune_default()
    };
    let mut last: Option<ModelParams<f32>> = None;
    let mut keep_last = |log: &EpochLog, snap: &Snapshot<'_>| {
        if log.epoch == 200 {
            last = Some(snap.checkpoint().params);
        }
        Ok(())
    };
    finetune_examples(
        Start::Scratch,
        &data,
        &data,
        &model,
        &train,
        None,
        &mut keep_last,
    )
    .unwrap();
    let params = last.expect("final epoch observed");
    let cm = confusion_on(&params, &model, &data, Execution::Parallel).unwrap();
    let bal = balanced_accuracy(&cm).unwrap();
    let (fast, time) = within(t, Duration::from_secs(600));
    outcome(
        bal >= 0.99 && fast,
        format!(
            "final-epoch train balanced accuracy {bal:.4} on {} epochs; {time}",
            data.len()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn pretext_learnability() -> Outcome {
    let t = Instant::now();
    let model = ModelConfig::small();
    let corpus = synthesize_corpus(20, 200, DEFAULT_STAGE_PROPORTIONS, 100.0, 7).unwrap();
    let ids = corpus.ids().to_vec();
    let train = prepare_set(
        &corpus.select(&ids[..16]).unwrap(),
        &model,
        Execution::Parallel,
    )
    .unwrap();
    let held = prepare_set(
        &corpus.select(&ids[16..]).unwrap(),
        &model,
        Execution::Parallel,
    )
    .unwrap();
    let cfg = TrainConfig {
        batch_size: 32,
        n_epochs: 50,
        ..TrainConfig::pretrain_default()
    };
    let ckpt = pretrain_tokens(&train.tokens, &model, &cfg, None, &mut quiet).unwrap();
    let eval = evaluate_pretext(
        &ckpt.params,
        &model,
        &held.tokens,
        0.5,
        0.0,
        77,
        Execution::Parallel,
    )
    .unwrap();
    let (fast, time) = within(t, Duration::from_secs(1800));
    outcome(
        eval.accuracy >= 0.10 && fast,
        format!(
            "held-out position accuracy {:.4} ({} hidden tokens, chance 0.0099); {time}",
            eval.accuracy, eval.n_scored
        ),
    )
}

// ---------------------------------------------------------------- 8, 9

fn desk_splits() -> Splits {
    let corpus = synthesize_corpus(100, 40, DEFAULT_STAGE_PROPORTIONS, 100.0, 0).unwrap();
    let (train, val, test) = split_subjectwise(&corpus, &SplitSpec::reference(0)).unwrap();
    Splits { train, val, test }
}

fn desk_spec(fraction: f64, multipliers: Vec<usize>) -> SweepSpec {
    SweepSpec {
        label_fractions: vec![fraction],
        methods: vec![Method::Scratch, Method::PretrainFinetune],
        pretrain_multipliers: multipliers,
        seeds: vec![0, 1, 2],
        model: ModelConfig::small(),
        pretrain: TrainConfig {
            batch_size: 32,
            n_epochs: 50,
            ..TrainConfig::pretrain_default()
        },
        finetune: TrainConfig {
            batch_size: 32,
            n_epochs: 30,
            lr_grid: vec![1e-4],
            ..TrainConfig::finetune_default()
        },
    }
}

fn label_efficiency() -> Outcome {
    let t = Instant::now();
    let data = desk_splits();
    let result = run_label_efficiency(&desk_spec(0.1, vec![1]), &data, None, &mut |_| {}).unwrap();
    let scratch = mean_balanced_accuracy(&result, Method::Scratch, 0.1, 0).unwrap();
    let pt = mean_balanced_accuracy(&result, Method::PretrainFinetune, 0.1, 1).unwrap();
    let (fast, time) = within(t, Duration::from_secs(7200));
    outcome(
        pt - scratch >= 0.02 && fast,
        format!(
            "10% labels, 3 seeds: pretrained {pt:.4} vs scratch {scratch:.4}, gap {:+.4}; {time}",
            pt - scratch
        ),
    )
}

fn pretrain_scale() -> Outcome {
    let t = Instant::now();
    let data = desk_splits();
    let result =
        run_pretrain_scaling(&desk_spec(0.01, vec![1, 10]), &data, None, &mut |_| {}).unwrap();
    let one = mean_balanced_accuracy(&result, Method::PretrainFinetune, 0.01, 1).unwrap();
    let ten = mean_balanced_accuracy(&result, Method::PretrainFinetune, 0.01, 10).unwrap();
    let (_, time) = within(t, Duration::from_secs(7200));
    outcome(
        ten >= one,
        format!("1% labels, 3 seeds: 10x {ten:.4} vs 1x {one:.4}; {time}"),
    )
}

// ---------------------------------------------------------------- 10

fn sha(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_mp3-sleep"))
        .args(args)
        .current_dir(dir)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

const CLI_CONFIG: &str = r#"{
  "model": { "d_model": 16, "depth": 1, "n_heads": 2, "d_ff": 32 },
  "pretrain": { "batch_size": 16, "n_epochs": 2 },
  "finetune": { "batch_size": 16, "n_epochs": 3, "lr_grid": [0.001, 0.0001] },
  "label_fractions": [0.5, 1.0],
  "seeds": [0, 1]
}"#;

/// synth → split → pretrain → finetune → evaluate → sweep in `dir`;
/// returns the hashes of every checkpoint and metrics file.
fn pipeline(dir: &Path) -> Option<Vec<(String, String)>> {
    std::fs::write(dir.join("cfg.json"), CLI_CONFIG).unwrap();
    let steps: [&[&str]; 6] = [
        &[
            "synth",
            "--subjects",
            "8",
            "--epochs-per-subject",
            "12",
            "--seed",
            "5",
            "--out",
            "all.esr",
        ],
        &[
            "split",
            "--in",
            "all.esr",
            "--fractions",
            "0.5,0.25,0.25",
            "--seed",
            "5",
            "--out-dir",
            "d",
        ],
        &[
            "pretrain",
            "--train",
            "d/train.esr",
            "--config",
            "cfg.json",
            "--seed",
            "3",
            "--out-ckpt",
            "pt.ckpt",
        ],
        &[
            "finetune",
            "--train",
            "d/train.esr",
            "--val",
            "d/val.esr",
            "--config",
            "cfg.json",
            "--init-ckpt",
            "pt.ckpt",
            "--seed",
            "3",
            "--out-ckpt",
            "ft.ckpt",
        ],
        &[
            "evaluate",
            "--test",
            "d/test.esr",
            "--ckpt",
            "ft.ckpt",
            "--out-json",
            "metrics.json",
        ],
        &[
            "sweep",
            "--data-dir",
            "d",
            "--spec",
            "cfg.json",
            "--out-dir",
            "sweep",
        ],
    ];
    for s in steps {
        if !cli(dir, s) {
            return None;
        }
    }
    let files = [
        "all.esr",
        "pt.ckpt",
        "ft.ckpt",
        "metrics.json",
        "sweep/label_efficiency.json",
        "sweep/label_efficiency.csv",
        "sweep/checkpoints/label_efficiency/pretrain_finetune_f0.5_m1_s1.ckpt",
    ];
    Some(
        files
            .iter()
            .map(|f| (f.to_string(), sha(&dir.join(f))))
            .collect(),
    )
}

fn pipeline_exactness() -> Outcome {
    let mut notes = Vec::new();

    let corpus = synthesize_corpus(3, 5, DEFAULT_STAGE_PROPORTIONS, 200.0, 10).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.esr");
    write_esr(&path, &corpus).unwrap();
    let back = read_esr(&path).unwrap();
    let esr_ok = back == corpus && encode_esr(&back).unwrap() == std::fs::read(&path).unwrap();
    notes.push(format!(
        "esr roundtrip {}",
        if esr_ok { "exact" } else { "differs" }
    ));

    let sine = |rate: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / rate).sin())
            .collect()
    };
    let down = resample_fourier(&sine(200.0, 6000), 200.0, 100.0).unwrap();
    let resample_err = down
        .iter()
        .zip(sine(100.0, 3000))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    notes.push(format!("resample max err {resample_err:.1e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut tok_ok = true;
    for patch in [10, 30, 50, 100] {
        let signal: Vec<f32> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = tokenize(&signal, patch).unwrap();
        tok_ok &= t.flatten(3000) == signal && t.n_tokens() * t.patch_len() == 3000 + patch;
    }
    notes.push(format!(
        "tokenize/flatten {}",
        if tok_ok { "identity" } else { "broken" }
    ));

    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let det = match (pipeline(a.path()), pipeline(b.path())) {
        (Some(x), Some(y)) => {
            let same = x == y;
            notes.push(format!(
                "{} artifacts {}",
                x.len(),
                if same { "byte-identical" } else { "differ" }
            ));
            same
        }
        _ => {
            notes.push("cli pipeline failed".into());
            false
        }
    };
    outcome(
        esr_ok && resample_err < 1e-5 && tok_ok && det,
        notes.join("; "),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("parameter count", parameter_count),
        ("permutation equivariance", permutation_equivariance),
        ("pretext construction", pretext_construction),
        ("metrics oracle", metrics_oracle),
        ("overfit", overfit),
        ("pretext learnability", pretext_learnability),
        ("label-efficiency direction", label_efficiency),
        ("pretraining-scale direction", pretrain_scale),
        ("pipeline exactness", pipeline_exactness),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let o = run();
        println!(
            "{} [{n:>2}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
