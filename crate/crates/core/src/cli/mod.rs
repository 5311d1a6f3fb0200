//! Command implementations behind the binary: `train`, `eval`, and `ablate`.
//! Argument parsing lives in the binary; everything here takes plain values
//! so the commands stay callable from tests and other front ends.

pub mod checkpoint;
pub mod config;
pub mod svg;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::{dataset_seed, load_idx, make_blobs, Dataset};
use crate::error::CarpError;
use crate::eval::{cluster_metrics, embed, kmeans, knn_accuracy_loo, EmbeddingBank};
use crate::model::ModelParams;
use crate::numerics::Rng;
use crate::partition::PartitionStrategy;
use crate::trainer::{train, DatasetSpec, RunConfig, StepMetrics, TrainOutput};

/// Evaluation protocol for `eval`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalMode {
    Knn,
    Cluster,
}

/// Which checkpointed branch to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Branch {
    Student,
    Teacher,
}

impl Branch {
    fn as_str(self) -> &'static str {
        match self {
            Branch::Student => "student",
            Branch::Teacher => "teacher",
        }
    }
}

/// Ablation grids. Each suite varies one axis of the base config and runs
/// every cell over several seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    #[value(name = "block_size")]
    BlockSize,
    #[value(name = "partition_strategy")]
    PartitionStrategy,
    #[value(name = "ema")]
    Ema,
    #[value(name = "prototypes")]
    Prototypes,
    #[value(name = "batch_size")]
    BatchSize,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::BlockSize => "block_size",
            Suite::PartitionStrategy => "partition_strategy",
            Suite::Ema => "ema",
            Suite::Prototypes => "prototypes",
            Suite::BatchSize => "batch_size",
        }
    }
}

/// Build the dataset a config describes. Blob generation draws from a
/// dedicated stream so it never overlaps the training stream.
pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset, CarpError> {
    match &cfg.dataset {
        DatasetSpec::Blobs(spec) => Ok(make_blobs(spec, &mut Rng::new(dataset_seed(cfg.seed)))),
        DatasetSpec::Idx { images, labels } => {
            if images.is_empty() || labels.is_empty() {
                return Err(CarpError::Config(
                    "dataset=idx requires idx_images and idx_labels paths".into(),
                ));
            }
            load_idx(Path::new(images), Path::new(labels))
        }
    }
}

/// `train --config PATH --out DIR`: writes metrics.jsonl, student.ckpt,
/// teacher.ckpt, and resolved-config.txt (plus eval.jsonl when the config
/// asks for periodic evaluation).
pub fn cmd_train(config_path: &Path, out_dir: &Path) -> Result<(), CarpError> {
    let cfg = config::load_config(config_path)?;
    cfg.validate()?;
    let dataset = build_dataset(&cfg)?;
    run_training(&cfg, &dataset, out_dir)?;
    Ok(())
}

/// The reusable body of `cmd_train`, also driven directly by tests.
pub fn run_training(
    cfg: &RunConfig,
    dataset: &Dataset,
    out_dir: &Path,
) -> Result<TrainOutput, CarpError> {
    fs::create_dir_all(out_dir)?;
    let mut metrics_file = BufWriter::new(File::create(out_dir.join("metrics.jsonl"))?);
    let mut metrics_err: Option<std::io::Error> = None;
    let on_step = |m: &StepMetrics| {
        if metrics_err.is_some() {
            return;
        }
        let line = serde_json::to_string(m).expect("step metrics always serialize");
        if let Err(e) = writeln!(metrics_file, "{line}") {
            metrics_err = Some(e);
        }
    };

    let mut eval_file = if cfg.eval_every > 0 {
        Some(BufWriter::new(File::create(out_dir.join("eval.jsonl"))?))
    } else {
        None
    };
    let mut eval_err: Option<CarpError> = None;
    let samples = &dataset.samples;
    let labels = &dataset.labels;
    let on_epoch = |epoch: usize, student: &ModelParams, teacher: &ModelParams| {
        if eval_err.is_some() {
            return;
        }
        let Some(file) = eval_file.as_mut() else { return };
        let result = (|| -> Result<(), CarpError> {
            let s_acc = loo_accuracy(student, samples, labels)?;
            let t_acc = loo_accuracy(teacher, samples, labels)?;
            let line = serde_json::json!({
                "epoch": epoch,
                "student_knn": s_acc,
                "teacher_knn": t_acc,
            });
            writeln!(file, "{line}")?;
            Ok(())
        })();
        if let Err(e) = result {
            eval_err = Some(e);
        }
    };

    let out = train(cfg, samples, on_step, on_epoch)?;

    metrics_file.flush()?;
    if let Some(e) = metrics_err {
        return Err(e.into());
    }
    if let Some(mut f) = eval_file {
        f.flush()?;
    }
    if let Some(e) = eval_err {
        return Err(e);
    }

    checkpoint::save_model(&out_dir.join("student.ckpt"), &out.student)?;
    checkpoint::save_model(&out_dir.join("teacher.ckpt"), &out.teacher)?;
    fs::write(out_dir.join("resolved-config.txt"), config::render_config(cfg))?;
    Ok(out)
}

/// Leave-one-out k-NN accuracy of a model's embeddings at the reporting
/// defaults (k = 20 capped by bank size, tau = 0.07).
fn loo_accuracy(params: &ModelParams, samples: &crate::numerics::Matrix, labels: &[usize]) -> Result<f64, CarpError> {
    let bank = EmbeddingBank::new(embed(params, samples), labels.to_vec())?;
    let k = 20.min(bank.len().saturating_sub(1)).max(1);
    knn_accuracy_loo(&bank, k, 0.07)
}

pub struct EvalOptions {
    /// Checkpoint file, or a training output directory holding
    /// student.ckpt / teacher.ckpt.
    pub ckpt: PathBuf,
    pub mode: EvalMode,
    pub branch: Branch,
    pub k: usize,
    pub tau: f64,
    /// k for the clustering protocol; defaults to the dataset's class count.
    pub clusters: Option<usize>,
    /// Run config describing the dataset (defaults apply when absent).
    pub config: Option<PathBuf>,
    /// Seed for the k-means redos.
    pub seed: u64,
}

/// `eval`: embed the configured dataset with a checkpointed model and print
/// one JSON report line to stdout.
pub fn cmd_eval(opts: &EvalOptions) -> Result<(), CarpError> {
    let cfg = match &opts.config {
        Some(path) => config::load_config(path)?,
        None => RunConfig::default(),
    };
    let dataset = build_dataset(&cfg)?;
    let ckpt_path = if opts.ckpt.is_dir() {
        opts.ckpt.join(format!("{}.ckpt", opts.branch.as_str()))
    } else {
        opts.ckpt.clone()
    };
    let params = checkpoint::load_model(&ckpt_path)?;
    if params.input_dim() != dataset.samples.cols() {
        return Err(CarpError::Config(format!(
            "checkpoint expects {}-dimensional inputs but the dataset has {}",
            params.input_dim(),
            dataset.samples.cols()
        )));
    }
    let features = embed(&params, &dataset.samples);
    let report = match opts.mode {
        EvalMode::Knn => {
            let bank = EmbeddingBank::new(features, dataset.labels.clone())?;
            let accuracy = knn_accuracy_loo(&bank, opts.k, opts.tau)?;
            serde_json::json!({
                "mode": "knn",
                "branch": opts.branch.as_str(),
                "k": opts.k,
                "tau": opts.tau,
                "accuracy": accuracy,
            })
        }
        EvalMode::Cluster => {
            let k = opts.clusters.unwrap_or(dataset.num_classes);
            let assignments = kmeans(&features, k, 100, 20, &mut Rng::new(opts.seed))?;
            let m = cluster_metrics(&assignments, &dataset.labels)?;
            serde_json::json!({
                "mode": "cluster",
                "branch": opts.branch.as_str(),
                "clusters": k,
                "nmi": m.nmi,
                "ami": m.ami,
                "ari": m.ari,
            })
        }
    };
    println!("{report}");
    Ok(())
}

/// The cells of one ablation suite: (label, config) pairs derived from the
/// base config.
pub fn suite_cells(suite: Suite, base: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut cells = Vec::new();
    match suite {
        Suite::BlockSize => {
            let k = base.prototypes;
            let mut seen = Vec::new();
            for candidate in [k, k / 2, k / 8, k / 32] {
                if candidate > 0 && k % candidate == 0 && !seen.contains(&candidate) {
                    seen.push(candidate);
                    let mut cfg = base.clone();
                    cfg.block_size = candidate;
                    cells.push((candidate.to_string(), cfg));
                }
            }
        }
        Suite::PartitionStrategy => {
            for (label, strategy) in
                [("random", PartitionStrategy::Random), ("constant", PartitionStrategy::Constant)]
            {
                let mut cfg = base.clone();
                cfg.partition = strategy;
                cells.push((label.to_string(), cfg));
            }
        }
        Suite::Ema => {
            for (label, flag) in [("teacher", true), ("no-teacher", false)] {
                let mut cfg = base.clone();
                cfg.use_teacher = flag;
                cells.push((label.to_string(), cfg));
            }
        }
        Suite::Prototypes => {
            for k in [4usize, 16, 64] {
                let blocks = 8.min(k / 2).max(1);
                let mut cfg = base.clone();
                cfg.prototypes = k;
                cfg.block_size = k / blocks;
                cells.push((k.to_string(), cfg));
            }
        }
        Suite::BatchSize => {
            for n in [32usize, 64, 128, 256] {
                let mut cfg = base.clone();
                cfg.batch_size = n;
                cells.push((n.to_string(), cfg));
            }
        }
    }
    cells
}

/// `ablate`: run one suite's grid, write `{suite}.csv` (schema:
/// suite,cell,seed,status,knn_accuracy,max_assignment_fraction) and
/// `{suite}.svg` (per-cell medians). Failed cells are recorded and the
/// remaining cells still run; any failure makes the command fail after
/// the sweep completes.
pub fn cmd_ablate(
    suite: Suite,
    out_dir: &Path,
    seeds: usize,
    epochs: Option<usize>,
    config_path: Option<&Path>,
) -> Result<(), CarpError> {
    if seeds == 0 {
        return Err(CarpError::Config("ablation needs at least one seed".into()));
    }
    let mut base = match config_path {
        Some(path) => config::load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(e) = epochs {
        base.epochs = e;
    }
    fs::create_dir_all(out_dir)?;

    let cells = suite_cells(suite, &base);
    let mut csv = String::from("suite,cell,seed,status,knn_accuracy,max_assignment_fraction\n");
    let mut acc_medians = Vec::with_capacity(cells.len());
    let mut frac_medians = Vec::with_capacity(cells.len());
    let mut failures = 0usize;
    let total = cells.len() * seeds;

    for (label, cell_cfg) in &cells {
        let mut accs = Vec::new();
        let mut fracs = Vec::new();
        for seed in 0..seeds {
            let mut cfg = cell_cfg.clone();
            cfg.seed = seed as u64;
            match ablate_cell(&cfg) {
                Ok((acc, frac)) => {
                    csv.push_str(&format!(
                        "{},{},{},ok,{},{}\n",
                        suite.name(),
                        label,
                        seed,
                        acc,
                        frac
                    ));
                    accs.push(acc);
                    fracs.push(frac);
                }
                Err(e) => {
                    eprintln!("cell {label} seed {seed} failed: {e}");
                    csv.push_str(&format!("{},{},{},failed,,\n", suite.name(), label, seed));
                    failures += 1;
                }
            }
        }
        acc_medians.push(median(&mut accs));
        frac_medians.push(median(&mut fracs));
    }

    fs::write(out_dir.join(format!("{}.csv", suite.name())), &csv)?;
    let categories: Vec<String> = cells.iter().map(|(label, _)| label.clone()).collect();
    let chart = svg::line_chart(
        &format!("{} ablation (median over {} seeds)", suite.name(), seeds),
        "value",
        &categories,
        &[
            svg::Series { name: "median k-NN accuracy".into(), values: acc_medians },
            svg::Series { name: "median max assignment fraction".into(), values: frac_medians },
        ],
    );
    fs::write(out_dir.join(format!("{}.svg", suite.name())), chart)?;

    if failures > 0 {
        return Err(CarpError::AblationFailures(format!("{failures} of {total} runs failed")));
    }
    Ok(())
}

/// One grid cell: train, then measure teacher-branch leave-one-out k-NN
/// accuracy and the final step's max assignment fraction. The teacher branch
/// is the reported model; it equals the student when the teacher is disabled.
fn ablate_cell(cfg: &RunConfig) -> Result<(f64, f64), CarpError> {
    cfg.validate()?;
    let dataset = build_dataset(cfg)?;
    let mut last_frac = f64::NAN;
    let out = train(cfg, &dataset.samples, |m| last_frac = m.max_assignment_fraction, |_, _, _| {})?;
    let acc = loo_accuracy(&out.teacher, &dataset.samples, &dataset.labels)?;
    Ok((acc, last_frac))
}

/// Median of the collected values; `None` when every run failed. Even
/// lengths average the middle pair.
fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        Some(values[mid])
    } else {
        Some(0.5 * (values[mid - 1] + values[mid]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BlobSpec;

    fn tiny_base() -> RunConfig {
        RunConfig {
            epochs: 2,
            batch_size: 8,
            prototypes: 8,
            block_size: 2,
            encoder_dims: vec![8],
            projector_dims: vec![4],
            dataset: DatasetSpec::Blobs(BlobSpec { classes: 2, per_class: 8, dim: 6, spread: 0.1 }),
            ..RunConfig::default()
        }
    }

    #[test]
    fn median_handles_both_parities() {
        assert_eq!(median(&mut vec![]), None);
        assert_eq!(median(&mut vec![3.0]), Some(3.0));
        assert_eq!(median(&mut vec![3.0, 1.0]), Some(2.0));
        assert_eq!(median(&mut vec![5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(median(&mut vec![4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn block_size_suite_covers_the_divisor_ladder() {
        let base = RunConfig::default(); // K = 64
        let cells = suite_cells(Suite::BlockSize, &base);
        let labels: Vec<&str> = cells.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["64", "32", "8", "2"]);
        for (_, cfg) in &cells {
            assert_eq!(cfg.prototypes % cfg.block_size, 0);
        }
    }

    #[test]
    fn block_size_suite_dedupes_small_prototype_counts() {
        let mut base = RunConfig::default();
        base.prototypes = 4;
        base.block_size = 2;
        let cells = suite_cells(Suite::BlockSize, &base);
        let labels: Vec<&str> = cells.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["4", "2"], "4/8 and 4/32 round to zero and drop out");
    }

    #[test]
    fn prototypes_suite_rescales_blocks_with_k() {
        let cells = suite_cells(Suite::Prototypes, &RunConfig::default());
        let shapes: Vec<(usize, usize)> =
            cells.iter().map(|(_, c)| (c.prototypes, c.block_size)).collect();
        assert_eq!(shapes, [(4, 2), (16, 2), (64, 8)]);
    }

    #[test]
    fn ema_suite_toggles_the_teacher() {
        let cells = suite_cells(Suite::Ema, &RunConfig::default());
        assert_eq!(cells.len(), 2);
        assert!(cells[0].1.use_teacher && !cells[1].1.use_teacher);
    }

    #[test]
    fn idx_dataset_requires_both_paths() {
        let mut cfg = RunConfig::default();
        cfg.dataset = DatasetSpec::Idx { images: String::new(), labels: "x".into() };
        let err = build_dataset(&cfg).unwrap_err().to_string();
        assert!(err.contains("idx_images"), "error should name the missing key: {err}");
    }

    #[test]
    fn run_training_writes_the_artifact_set() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_base();
        cfg.eval_every = 1;
        let dataset = build_dataset(&cfg).unwrap();
        run_training(&cfg, &dataset, dir.path()).unwrap();
        for name in ["metrics.jsonl", "eval.jsonl", "student.ckpt", "teacher.ckpt", "resolved-config.txt"]
        {
            assert!(dir.path().join(name).exists(), "{name} should exist");
        }
        let metrics = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        assert_eq!(metrics.lines().count(), 4, "2 epochs x 2 steps of 16 samples at batch 8");
        let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
        assert_eq!(first["step"], 0);
        assert!(first["loss"]["total"].is_f64());
        let evals = fs::read_to_string(dir.path().join("eval.jsonl")).unwrap();
        assert_eq!(evals.lines().count(), 2, "one eval line per epoch at cadence 1");
        let resolved = fs::read_to_string(dir.path().join("resolved-config.txt")).unwrap();
        assert_eq!(config::parse_config(&resolved).unwrap(), cfg, "resolved config re-parses");
    }

    #[test]
    fn ablate_writes_csv_and_svg_and_succeeds_on_a_tiny_grid() {
        let dir = tempfile::tempdir().unwrap();
        let base = tiny_base();
        let config_path = dir.path().join("base.txt");
        fs::write(&config_path, config::render_config(&base)).unwrap();
        cmd_ablate(Suite::Ema, dir.path(), 1, Some(1), Some(&config_path)).unwrap();
        let csv = fs::read_to_string(dir.path().join("ema.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "suite,cell,seed,status,knn_accuracy,max_assignment_fraction"
        );
        assert_eq!(csv.lines().count(), 3, "header plus one row per cell/seed");
        assert!(csv.contains("ema,teacher,0,ok,"));
        assert!(csv.contains("ema,no-teacher,0,ok,"));
        assert!(dir.path().join("ema.svg").exists());
    }
}
