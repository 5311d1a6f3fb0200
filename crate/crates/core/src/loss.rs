//! The training objective. Two student views and two teacher views are
//! assigned to prototypes; the loss rewards cross-view agreement (student on
//! view 1 vs teacher on view 2, and vice versa) and pushes the batch-average
//! assignment toward uniform. The partitioned form applies both terms
//! independently inside each prototype block; the global form is the
//! single-softmax baseline whose entropy term is weighted by lambda_e and
//! which is the one that collapses when that weight is small.
//!
//! Teachers are constants here: gradients flow only to the student views, and
//! both gradient matrices (one per student view) come back in logit space.

use crate::numerics::{dot, Matrix};
use crate::partition::{BlockProbs, Partition};
use serde::Serialize;

/// Inner products below this are clamped before the log; the gradient is
/// zero in the clamped region, matching the flat finite-difference slope.
pub const INNER_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LossBreakdown {
    /// Mean of -log <student view a, teacher view b> over both view pairings.
    pub consistency: f64,
    /// Partitioned form: mean per-block KL(batch average || uniform), always
    /// >= 0. Global form: -lambda_e * H(batch average), <= 0.
    pub entropy_term: f64,
    /// consistency + entropy_term.
    pub total: f64,
    /// Unweighted KL(p̄_j || uniform) per block (one entry for the global form).
    pub per_block_kl: Vec<f64>,
}

/// Gradient of the total w.r.t. the student logits of each view, [N x K].
#[derive(Debug, Clone)]
pub struct StudentGrads {
    pub view1: Matrix,
    pub view2: Matrix,
}

/// -log of the clamped inner product between two probability rows. A NaN
/// inner product (blown-up upstream activations) propagates instead of being
/// swallowed by the clamp, so the trainer's non-finite abort can see it.
pub fn consistency(a: &[f64], b: &[f64]) -> f64 {
    let ip = dot(a, b);
    if ip.is_nan() {
        return f64::NAN;
    }
    -ip.max(INNER_EPS).ln()
}

/// KL(p || uniform) = log(len) + sum p log p, with 0 log 0 = 0. Clamped at
/// zero so rounding near the uniform point cannot produce a negative KL.
pub fn kl_to_uniform(p: &[f64]) -> f64 {
    assert!(!p.is_empty(), "kl_to_uniform: empty distribution");
    let mut s = 0.0;
    for &v in p {
        if v > 0.0 {
            s += v * v.ln();
        }
    }
    ((p.len() as f64).ln() + s).max(0.0)
}

/// Per-block mean probability row over every row of both tensors, [NP x NB].
/// The two operands are accumulated separately and combined with one final
/// add, so the result is bitwise symmetric in (s, t).
pub fn batch_average(s: &BlockProbs, t: &BlockProbs) -> Matrix {
    assert!(s.same_shape(t), "batch_average: shape mismatch");
    let sum = |x: &BlockProbs| -> Matrix {
        let mut acc = Matrix::zeros(x.num_blocks(), x.block_size());
        for j in 0..x.num_blocks() {
            for i in 0..x.batch() {
                let row = x.row(j, i);
                for (a, &v) in acc.row_mut(j).iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        acc
    };
    let mut avg = sum(s).add(&sum(t));
    avg.scale_mut(1.0 / (2 * s.batch()) as f64);
    avg
}

/// Partitioned objective with unit entropy weight (the published form).
pub fn carp_loss(
    s1: &BlockProbs,
    s2: &BlockProbs,
    t1: &BlockProbs,
    t2: &BlockProbs,
    partition: &Partition,
) -> (LossBreakdown, StudentGrads) {
    carp_loss_weighted(s1, s2, t1, t2, partition, 1.0)
}

/// Partitioned objective with an explicit weight on the per-block KL term.
/// With a single block and weight lambda_e this matches `global_loss` up to
/// the constant lambda_e * log K (KL-to-uniform vs negative entropy).
pub fn carp_loss_weighted(
    s1: &BlockProbs,
    s2: &BlockProbs,
    t1: &BlockProbs,
    t2: &BlockProbs,
    partition: &Partition,
    entropy_weight: f64,
) -> (LossBreakdown, StudentGrads) {
    assert!(
        s1.same_shape(s2) && s1.same_shape(t1) && s1.same_shape(t2),
        "carp_loss: view tensors disagree in shape"
    );
    assert_eq!(s1.num_blocks(), partition.num_blocks(), "carp_loss: partition block count mismatch");
    assert_eq!(s1.block_size(), partition.block_size(), "carp_loss: partition block size mismatch");

    let np = s1.num_blocks();
    let n = s1.batch();
    let nb = s1.block_size();
    let k = partition.k();
    let pair_norm = (n * np) as f64;

    // Consistency: two means over (block, sample), one per view pairing.
    // Keeping them as two separately normalized sums makes the breakdown
    // bitwise symmetric under the view swap (s1,t2) <-> (s2,t1).
    let mut c12 = 0.0;
    let mut c21 = 0.0;
    for j in 0..np {
        for i in 0..n {
            c12 += consistency(s1.row(j, i), t2.row(j, i));
            c21 += consistency(s2.row(j, i), t1.row(j, i));
        }
    }
    let consistency_term = c12 / pair_norm + c21 / pair_norm;

    // Batch average over all four tensors, accumulated as per-tensor partial
    // sums combined pairwise: ((S1+S2) + (T1+T2)) / 4N. IEEE addition is
    // commutative, so swapping the views cannot change a bit.
    let partial = |x: &BlockProbs| -> Matrix {
        let mut acc = Matrix::zeros(np, nb);
        for j in 0..np {
            for i in 0..n {
                for (a, &v) in acc.row_mut(j).iter_mut().zip(x.row(j, i)) {
                    *a += v;
                }
            }
        }
        acc
    };
    let mut pbar = partial(s1).add(&partial(s2)).add(&partial(t1).add(&partial(t2)));
    pbar.scale_mut(1.0 / (4 * n) as f64);

    let per_block_kl: Vec<f64> = (0..np).map(|j| kl_to_uniform(pbar.row(j))).collect();
    let kl_mean = per_block_kl.iter().sum::<f64>() / np as f64;
    let entropy_term = entropy_weight * kl_mean;
    let total = consistency_term + entropy_term;

    // Gradients for both student views, through the per-block softmax and
    // scattered back to full logit width. Teacher rows are constants.
    let ent_norm = entropy_weight / (np * 4 * n) as f64;
    let mut grads = StudentGrads { view1: Matrix::zeros(n, k), view2: Matrix::zeros(n, k) };
    let mut g = vec![0.0; nb];
    for (student, teacher, out) in [
        (s1, t2, &mut grads.view1),
        (s2, t1, &mut grads.view2),
    ] {
        for j in 0..np {
            let ids = partition.block(j);
            let pbar_row = pbar.row(j);
            for i in 0..n {
                let s_row = student.row(j, i);
                let t_row = teacher.row(j, i);
                let ip = dot(s_row, t_row);
                for c in 0..nb {
                    let cons = if ip > INNER_EPS { -t_row[c] / (ip * pair_norm) } else { 0.0 };
                    let ent = if pbar_row[c] > 0.0 { ent_norm * (pbar_row[c].ln() + 1.0) } else { 0.0 };
                    g[c] = cons + ent;
                }
                // Softmax Jacobian from probabilities alone.
                let inner = dot(&g, s_row);
                let out_row = out.row_mut(i);
                for c in 0..nb {
                    out_row[ids[c]] = s_row[c] * (g[c] - inner);
                }
            }
        }
    }

    (LossBreakdown { consistency: consistency_term, entropy_term, total, per_block_kl }, grads)
}

/// Single-softmax baseline over all K prototypes: cross-view consistency
/// minus lambda_e times the entropy of the batch-average assignment. Inputs
/// are full-width probability rows; gradients come back in logit space.
pub fn global_loss(
    s1: &Matrix,
    s2: &Matrix,
    t1: &Matrix,
    t2: &Matrix,
    lambda_e: f64,
) -> (LossBreakdown, StudentGrads) {
    let n = s1.rows();
    let k = s1.cols();
    for m in [s2, t1, t2] {
        assert_eq!((m.rows(), m.cols()), (n, k), "global_loss: shape mismatch");
    }
    assert!(n > 0 && k > 0, "global_loss: empty input");

    let mut c12 = 0.0;
    let mut c21 = 0.0;
    for i in 0..n {
        c12 += consistency(s1.row(i), t2.row(i));
        c21 += consistency(s2.row(i), t1.row(i));
    }
    let nf = n as f64;
    let consistency_term = c12 / nf + c21 / nf;

    let partial = |x: &Matrix| -> Vec<f64> {
        let mut acc = vec![0.0; k];
        for i in 0..x.rows() {
            for (a, &v) in acc.iter_mut().zip(x.row(i)) {
                *a += v;
            }
        }
        acc
    };
    let p1 = partial(s1);
    let p2 = partial(s2);
    let q1 = partial(t1);
    let q2 = partial(t2);
    let scale = 1.0 / (4 * n) as f64;
    let pbar: Vec<f64> = (0..k)
        .map(|c| ((p1[c] + p2[c]) + (q1[c] + q2[c])) * scale)
        .collect();

    let mut neg_entropy = 0.0; // sum p log p <= 0
    for &v in &pbar {
        if v > 0.0 {
            neg_entropy += v * v.ln();
        }
    }
    let entropy_term = lambda_e * neg_entropy; // == -lambda_e * H(pbar)
    let total = consistency_term + entropy_term;
    let per_block_kl = vec![((k as f64).ln() + neg_entropy).max(0.0)];

    let ent_norm = lambda_e / (4 * n) as f64;
    let mut grads = StudentGrads { view1: Matrix::zeros(n, k), view2: Matrix::zeros(n, k) };
    let mut g = vec![0.0; k];
    for (student, teacher, out) in [
        (s1, t2, &mut grads.view1),
        (s2, t1, &mut grads.view2),
    ] {
        for i in 0..n {
            let s_row = student.row(i);
            let t_row = teacher.row(i);
            let ip = dot(s_row, t_row);
            for c in 0..k {
                let cons = if ip > INNER_EPS { -t_row[c] / (ip * nf) } else { 0.0 };
                let ent = if pbar[c] > 0.0 { ent_norm * (pbar[c].ln() + 1.0) } else { 0.0 };
                g[c] = cons + ent;
            }
            let inner = dot(&g, s_row);
            let out_row = out.row_mut(i);
            for c in 0..k {
                out_row[c] = s_row[c] * (g[c] - inner);
            }
        }
    }

    (LossBreakdown { consistency: consistency_term, entropy_term, total, per_block_kl }, grads)
}
