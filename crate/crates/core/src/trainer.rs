//! The training loop: two views per sample, student and EMA teacher forward
//! passes, the partitioned (or global baseline) objective, manual backward,
//! SGD with momentum and decoupled weight decay, cosine schedules for both
//! the learning rate and the EMA momentum, and per-step collapse monitoring.
//!
//! Determinism contract: one PRNG owned by the loop, with a fixed draw order
//! per epoch (shuffle) and per step (views, then partition). Batches are
//! always processed as `shards` fixed micro-batches whose gradients are
//! reduced in shard order, so `parallel` only changes who computes each
//! shard, never the result.

use std::thread;

use serde::Serialize;

use crate::data::ViewConfig;
use crate::ema::{ema_update, CosineSchedule, EmaSchedule};
use crate::error::CarpError;
use crate::loss::{carp_loss, global_loss, LossBreakdown, StudentGrads};
use crate::model::{backward, forward, init_model, ForwardTrace, Gradients, ModelDims, ModelParams};
use crate::numerics::{argmax, sample_without_replacement, softmax_rows, Matrix, Rng};
use crate::partition::{
    gather_block_probs, make_partition, BlockProbs, Partition, PartitionSpec, PartitionStrategy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Per-block consistency + per-block KL-to-uniform (weight 1).
    Partitioned,
    /// Single softmax over all K with entropy weight lambda_e; collapses when
    /// lambda_e is too small. Kept as the contrast case.
    Global,
}

/// Where the samples come from; the trainer itself never sees this, it is
/// resolved by the caller into a sample matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Blobs(crate::data::BlobSpec),
    Idx { images: String, labels: String },
}

/// Complete description of one run. Every field has a default, so an empty
/// config file is a valid run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// K, the number of prototypes.
    pub prototypes: usize,
    /// N_B, prototypes per partition block; must divide K.
    pub block_size: usize,
    pub partition: PartitionStrategy,
    pub objective: Objective,
    /// Entropy weight for the Global objective (held constant over the run).
    pub lambda_e: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub eta_start: f64,
    pub eta_end: f64,
    /// false = siamese: targets are the student's own assignments, detached,
    /// and no EMA runs (equivalent to eta = 0).
    pub use_teacher: bool,
    pub encoder_dims: Vec<usize>,
    pub projector_dims: Vec<usize>,
    pub dataset: DatasetSpec,
    pub noise_sigma: f64,
    pub mask_fraction: f64,
    /// Epoch period of the caller's evaluation hook; 0 disables it.
    pub eval_every: usize,
    /// Fixed micro-batch count per step (part of the numeric result).
    pub shards: usize,
    /// Evaluate shards on threads; never changes the result.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            epochs: 300,
            batch_size: 128,
            prototypes: 64,
            block_size: 8,
            partition: PartitionStrategy::Random,
            objective: Objective::Partitioned,
            lambda_e: 0.01,
            lr_start: 0.6,
            lr_end: 0.006,
            momentum: 0.9,
            weight_decay: 1e-6,
            eta_start: 0.99,
            eta_end: 1.0,
            use_teacher: true,
            encoder_dims: vec![64, 64],
            projector_dims: vec![32, 16],
            dataset: DatasetSpec::Blobs(crate::data::BlobSpec {
                classes: 8,
                per_class: 128,
                dim: 16,
                spread: 0.1,
            }),
            noise_sigma: 0.1,
            mask_fraction: 0.25,
            eval_every: 0,
            shards: 1,
            parallel: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CarpError> {
        PartitionSpec::new(self.prototypes, self.block_size, self.partition)?;
        if self.epochs == 0 {
            return Err(CarpError::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(CarpError::Config("batch_size must be positive".into()));
        }
        if self.projector_dims.is_empty() {
            return Err(CarpError::Config("projector needs at least one layer".into()));
        }
        if self.encoder_dims.iter().chain(&self.projector_dims).any(|&w| w == 0) {
            return Err(CarpError::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CarpError::Config(format!("momentum {} outside [0,1)", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(CarpError::Config("weight_decay must be nonnegative".into()));
        }
        if self.lambda_e < 0.0 {
            return Err(CarpError::Config("lambda_e must be nonnegative".into()));
        }
        if !self.lr_start.is_finite() || !self.lr_end.is_finite() {
            return Err(CarpError::Config("learning rates must be finite".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(CarpError::Config("noise_sigma must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(CarpError::Config(format!(
                "mask_fraction {} outside [0,1]",
                self.mask_fraction
            )));
        }
        if self.shards == 0 {
            return Err(CarpError::Config("shards must be positive".into()));
        }
        EmaSchedule::new(self.eta_start, self.eta_end, 1)?;
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Largest fraction of the step's assignments landing on one prototype;
    /// >= 1/K by pigeonhole, approaches 1 under collapse.
    pub max_assignment_fraction: f64,
    /// Natural-log entropy of the assignment histogram over all K prototypes;
    /// <= ln K, approaches 0 under collapse.
    pub prototype_usage_entropy: f64,
    pub lr: f64,
    pub eta: f64,
}

pub struct TrainOutput {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub steps_run: usize,
}

/// Assignment histogram summary: (max fraction, entropy in nats).
pub fn collapse_stats(assignments: &[usize], k: usize) -> (f64, f64) {
    assert!(k > 0, "collapse_stats: no prototypes");
    assert!(!assignments.is_empty(), "collapse_stats: no assignments");
    let mut counts = vec![0usize; k];
    for &a in assignments {
        assert!(a < k, "collapse_stats: assignment {a} out of range {k}");
        counts[a] += 1;
    }
    let total = assignments.len() as f64;
    let max_fraction = counts.iter().copied().max().unwrap() as f64 / total;
    let mut entropy = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / total;
            entropy -= p * p.ln();
        }
    }
    (max_fraction, entropy)
}

/// SGD with momentum and decoupled weight decay:
/// v <- m*v + g; p <- p - lr*v - lr*wd*p. The decay never enters the
/// momentum buffer, so wd = 0 is exactly plain SGD with momentum.
pub struct SgdMomentum {
    momentum: f64,
    velocity: Gradients,
}

impl SgdMomentum {
    pub fn new(params: &ModelParams, momentum: f64) -> Self {
        SgdMomentum { momentum, velocity: Gradients::zeros_like(params) }
    }

    pub fn apply(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64, weight_decay: f64) {
        let g_slices = grads.grad_slices();
        let mut v_slices = self.velocity.grad_slices_mut();
        let mut p_slices = params.param_slices_mut();
        assert_eq!(g_slices.len(), p_slices.len(), "gradient tree does not match parameters");
        for ((p, g), v) in p_slices.iter_mut().zip(&g_slices).zip(v_slices.iter_mut()) {
            for ((pv, &gv), vv) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv = *pv - lr * *vv - lr * weight_decay * *pv;
            }
        }
    }
}

/// Run the full loop over the sample matrix. `on_step` sees every step's
/// metrics in order; `on_epoch` fires every `eval_every` epochs (and on the
/// final epoch) with the current student and teacher, and must not disturb
/// training state. Labels never enter here.
pub fn train(
    cfg: &RunConfig,
    samples: &Matrix,
    mut on_step: impl FnMut(&StepMetrics),
    mut on_epoch: impl FnMut(usize, &ModelParams, &ModelParams),
) -> Result<TrainOutput, CarpError> {
    cfg.validate()?;
    let m = samples.rows();
    if m == 0 {
        return Err(CarpError::Config("no samples to train on".into()));
    }

    let dims = ModelDims {
        input: samples.cols(),
        encoder: cfg.encoder_dims.clone(),
        projector: cfg.projector_dims.clone(),
        prototypes: cfg.prototypes,
    };
    let mut rng = Rng::new(cfg.seed);
    let mut student = init_model(&dims, &mut rng);
    let mut teacher = student.clone();
    let mut optimizer = SgdMomentum::new(&student, cfg.momentum);

    let steps_per_epoch = m.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let lr_schedule = CosineSchedule::new(cfg.lr_start, cfg.lr_end, total_steps);
    let ema_schedule = EmaSchedule::new(cfg.eta_start, cfg.eta_end, total_steps)?;
    let pspec = PartitionSpec::new(cfg.prototypes, cfg.block_size, cfg.partition)?;
    let view_cfg = ViewConfig { noise_sigma: cfg.noise_sigma, mask_fraction: cfg.mask_fraction };

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = sample_without_replacement(&mut rng, m, m);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = samples.gather_rows(chunk);
            let (x1, x2) = make_views_for_step(&batch, &view_cfg, &mut rng);
            let partition = make_partition(&pspec, &mut rng);

            let ranges = shard_ranges(batch.rows(), cfg.shards);
            let traces = forward_shards(&student, &x1, &x2, &ranges, cfg.parallel);
            let logits1 = Matrix::vcat(&traces.iter().map(|t| t.0.logits.clone()).collect::<Vec<_>>());
            let logits2 = Matrix::vcat(&traces.iter().map(|t| t.1.logits.clone()).collect::<Vec<_>>());

            // Teacher targets: EMA branch when enabled, otherwise the
            // student's own logits, used as constants either way.
            let (teacher_logits1, teacher_logits2) = if cfg.use_teacher {
                (forward(&teacher, &x1).logits, forward(&teacher, &x2).logits)
            } else {
                (logits1.clone(), logits2.clone())
            };

            let (breakdown, grads, monitor) = step_loss(
                cfg,
                &partition,
                &logits1,
                &logits2,
                &teacher_logits1,
                &teacher_logits2,
            );

            let lr = lr_schedule.value(step);
            let eta = if cfg.use_teacher { ema_schedule.eta(step) } else { 0.0 };
            let metrics = StepMetrics {
                step,
                epoch,
                loss: breakdown,
                max_assignment_fraction: monitor.0,
                prototype_usage_entropy: monitor.1,
                lr,
                eta,
            };
            if !metrics.loss.total.is_finite() {
                return Err(CarpError::NonFiniteLoss { step, metrics: Box::new(metrics) });
            }

            let total_grads = backward_shards(&student, &traces, &grads, &ranges, cfg.parallel);
            optimizer.apply(&mut student, &total_grads, lr, cfg.weight_decay);
            if cfg.use_teacher {
                ema_update(&mut teacher, &student, eta);
            }
            on_step(&metrics);
            step += 1;
        }
        if cfg.eval_every > 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs) {
            let teacher_view = if cfg.use_teacher { &teacher } else { &student };
            on_epoch(epoch + 1, &student, teacher_view);
        }
    }

    if !cfg.use_teacher {
        teacher = student.clone();
    }
    Ok(TrainOutput { student, teacher, steps_run: step })
}

/// `train` with the metrics collected into a vector.
pub fn train_collect(
    cfg: &RunConfig,
    samples: &Matrix,
) -> Result<(TrainOutput, Vec<StepMetrics>), CarpError> {
    let mut log = Vec::new();
    let out = train(cfg, samples, |m| log.push(m.clone()), |_, _, _| {})?;
    Ok((out, log))
}

fn make_views_for_step(batch: &Matrix, cfg: &ViewConfig, rng: &mut Rng) -> (Matrix, Matrix) {
    crate::data::make_views(batch, cfg, rng)
}

/// Loss dispatch plus the collapse monitor for this step's student logits.
fn step_loss(
    cfg: &RunConfig,
    partition: &Partition,
    logits1: &Matrix,
    logits2: &Matrix,
    teacher_logits1: &Matrix,
    teacher_logits2: &Matrix,
) -> (LossBreakdown, StudentGrads, (f64, f64)) {
    match cfg.objective {
        Objective::Partitioned => {
            let s1 = gather_block_probs(logits1, partition);
            let s2 = gather_block_probs(logits2, partition);
            let t1 = gather_block_probs(teacher_logits1, partition);
            let t2 = gather_block_probs(teacher_logits2, partition);
            let assignments = block_assignments(&s1, &s2, partition);
            let monitor = collapse_stats(&assignments, cfg.prototypes);
            let (breakdown, grads) = carp_loss(&s1, &s2, &t1, &t2, partition);
            (breakdown, grads, monitor)
        }
        Objective::Global => {
            let s1 = softmax_rows(logits1);
            let s2 = softmax_rows(logits2);
            let t1 = softmax_rows(teacher_logits1);
            let t2 = softmax_rows(teacher_logits2);
            let assignments = full_assignments(logits1, logits2);
            let monitor = collapse_stats(&assignments, cfg.prototypes);
            let (breakdown, grads) = global_loss(&s1, &s2, &t1, &t2, cfg.lambda_e);
            (breakdown, grads, monitor)
        }
    }
}

/// Block-local argmaxes mapped back to prototype ids, over both views.
fn block_assignments(s1: &BlockProbs, s2: &BlockProbs, partition: &Partition) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * s1.num_blocks() * s1.batch());
    for probs in [s1, s2] {
        for j in 0..probs.num_blocks() {
            let ids = partition.block(j);
            for i in 0..probs.batch() {
                out.push(ids[argmax(probs.row(j, i))]);
            }
        }
    }
    out
}

/// Full-width argmaxes over both views (Global objective monitor).
fn full_assignments(logits1: &Matrix, logits2: &Matrix) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * logits1.rows());
    for logits in [logits1, logits2] {
        for i in 0..logits.rows() {
            out.push(argmax(logits.row(i)));
        }
    }
    out
}

/// Split n rows into `shards` contiguous ranges (fewer if n < shards); sizes
/// differ by at most one. This split is part of the numeric result.
fn shard_ranges(n: usize, shards: usize) -> Vec<(usize, usize)> {
    let s = shards.min(n).max(1);
    let base = n / s;
    let rem = n % s;
    let mut out = Vec::with_capacity(s);
    let mut start = 0;
    for i in 0..s {
        let len = base + usize::from(i < rem);
        out.push((start, start + len));
        start += len;
    }
    out
}

fn forward_shards(
    student: &ModelParams,
    x1: &Matrix,
    x2: &Matrix,
    ranges: &[(usize, usize)],
    parallel: bool,
) -> Vec<(ForwardTrace, ForwardTrace)> {
    let job = |&(a, b): &(usize, usize)| {
        let s1 = x1.row_range(a, b);
        let s2 = x2.row_range(a, b);
        (forward(student, &s1), forward(student, &s2))
    };
    if parallel && ranges.len() > 1 {
        thread::scope(|scope| {
            let handles: Vec<_> = ranges.iter().map(|r| scope.spawn(move || job(r))).collect();
            handles.into_iter().map(|h| h.join().expect("forward shard panicked")).collect()
        })
    } else {
        ranges.iter().map(job).collect()
    }
}

fn backward_shards(
    student: &ModelParams,
    traces: &[(ForwardTrace, ForwardTrace)],
    grads: &StudentGrads,
    ranges: &[(usize, usize)],
    parallel: bool,
) -> Gradients {
    let job = |i: usize| {
        let (a, b) = ranges[i];
        let d1 = grads.view1.row_range(a, b);
        let d2 = grads.view2.row_range(a, b);
        let mut g = backward(student, &traces[i].0, &d1);
        g.add_assign(&backward(student, &traces[i].1, &d2));
        g
    };
    let per_shard: Vec<Gradients> = if parallel && ranges.len() > 1 {
        thread::scope(|scope| {
            let handles: Vec<_> = (0..ranges.len()).map(|i| scope.spawn(move || job(i))).collect();
            handles.into_iter().map(|h| h.join().expect("backward shard panicked")).collect()
        })
    } else {
        (0..ranges.len()).map(job).collect()
    };
    // Reduce in shard index order: the fixed reduction order that makes the
    // parallel and serial paths bit-identical.
    let mut total = Gradients::zeros_like(student);
    for g in &per_shard {
        total.add_assign(g);
    }
    total
}
