//! Frozen-feature evaluation: weighted k-NN classification over an
//! embedding bank, spherical k-means, and clustering agreement metrics
//! (NMI / AMI / ARI). Labels enter the pipeline here and only here.

use serde::Serialize;

use crate::error::CarpError;
use crate::model::{forward, ModelParams};
use crate::numerics::{argmax, dot, Matrix, Rng};

/// Embed a sample matrix with a frozen model and l2-normalize the rows,
/// which makes dot products cosine similarities downstream.
pub fn embed(params: &ModelParams, samples: &Matrix) -> Matrix {
    forward(params, samples).embeddings.normalized_rows()
}

/// Labeled, row-normalized feature store for nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct EmbeddingBank {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl EmbeddingBank {
    /// Rows are l2-normalized on the way in (all-zero rows stay zero).
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self, CarpError> {
        if features.rows() != labels.len() {
            return Err(CarpError::Config(format!(
                "bank has {} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(CarpError::Config("bank must hold at least one sample".into()));
        }
        let num_classes = labels.iter().copied().max().unwrap() + 1;
        Ok(EmbeddingBank { features: features.normalized_rows(), labels, num_classes })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Class scores for one query: the top-k bank rows by cosine similarity each
/// vote exp(sim/tau) for their label. Neighbor ties break toward the lower
/// bank index; the predicted class is `predicted_class(&scores)`.
pub fn knn_predict(
    bank: &EmbeddingBank,
    query: &[f64],
    k: usize,
    tau: f64,
) -> Result<Vec<f64>, CarpError> {
    check_knn_args(bank.len(), k, tau)?;
    assert_eq!(query.len(), bank.features.cols(), "query width does not match the bank");
    let sims: Vec<f64> = (0..bank.len()).map(|i| dot(bank.features.row(i), query)).collect();
    Ok(vote(bank, &sims, k, tau))
}

/// Leave-one-out accuracy of `knn_predict` over the bank itself: each row is
/// scored against all the others. The protocol used for training-time
/// monitoring and the ablation tables.
pub fn knn_accuracy_loo(bank: &EmbeddingBank, k: usize, tau: f64) -> Result<f64, CarpError> {
    if bank.len() < 2 {
        return Err(CarpError::Config("leave-one-out needs at least two samples".into()));
    }
    check_knn_args(bank.len() - 1, k, tau)?;
    let mut hits = 0usize;
    for q in 0..bank.len() {
        let query = bank.features.row(q);
        let mut sims: Vec<f64> =
            (0..bank.len()).map(|i| dot(bank.features.row(i), query)).collect();
        sims[q] = f64::NEG_INFINITY;
        let scores = vote(bank, &sims, k, tau);
        if predicted_class(&scores) == bank.labels[q] {
            hits += 1;
        }
    }
    Ok(hits as f64 / bank.len() as f64)
}

/// The classification rule: largest score, ties to the smallest class index.
pub fn predicted_class(scores: &[f64]) -> usize {
    argmax(scores)
}

fn check_knn_args(available: usize, k: usize, tau: f64) -> Result<(), CarpError> {
    if k == 0 {
        return Err(CarpError::Config("k-NN needs k >= 1".into()));
    }
    if k > available {
        return Err(CarpError::Config(format!(
            "k-NN asked for {k} neighbors but only {available} are available"
        )));
    }
    if !(tau > 0.0) {
        return Err(CarpError::Config(format!("k-NN temperature {tau} must be positive")));
    }
    Ok(())
}

fn vote(bank: &EmbeddingBank, sims: &[f64], k: usize, tau: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&i, &j| sims[j].total_cmp(&sims[i]).then(i.cmp(&j)));
    let mut scores = vec![0.0; bank.num_classes];
    for &i in order.iter().take(k) {
        scores[bank.labels[i]] += (sims[i] / tau).exp();
    }
    scores
}

/// Spherical k-means: rows and centroids live on the unit sphere, points go
/// to the centroid of largest cosine, and the objective is the summed cosine
/// of each point to its centroid. `redos` independent k-means++ seedings are
/// run for `iters` Lloyd iterations each and the best objective wins (ties
/// to the earlier redo). Empty clusters are reseeded to the point farthest
/// from its current centroid.
pub fn kmeans(
    features: &Matrix,
    k: usize,
    iters: usize,
    redos: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>, CarpError> {
    let m = features.rows();
    if k == 0 || k > m {
        return Err(CarpError::Config(format!("k-means needs 1 <= k <= {m}, got {k}")));
    }
    if iters == 0 || redos == 0 {
        return Err(CarpError::Config("k-means needs at least one iteration and one redo".into()));
    }
    let points = features.normalized_rows();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..redos {
        let centroids = plus_plus_seed(&points, k, rng);
        let (assignments, objective, _) = lloyd(&points, centroids, iters);
        let better = match &best {
            None => true,
            Some((obj, _)) => objective > *obj,
        };
        if better {
            best = Some((objective, assignments));
        }
    }
    Ok(best.unwrap().1)
}

/// k-means++ over cosine geometry: seed weights are the squared chord
/// distances 2 - 2*sim to the nearest already-chosen centroid.
fn plus_plus_seed(points: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let m = points.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.next_below(m as u64) as usize);
    let mut best_sim: Vec<f64> =
        (0..m).map(|i| dot(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let weights: Vec<f64> = best_sim.iter().map(|&s| (2.0 - 2.0 * s).max(0.0)).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.next_f64() * total;
            let mut idx = m - 1;
            for (i, &w) in weights.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            // Every point coincides with a centroid; any pick is equivalent.
            rng.next_below(m as u64) as usize
        };
        chosen.push(pick);
        for i in 0..m {
            let s = dot(points.row(i), points.row(pick));
            if s > best_sim[i] {
                best_sim[i] = s;
            }
        }
    }
    let mut centroids = Matrix::zeros(k, points.cols());
    for (c, &p) in chosen.iter().enumerate() {
        centroids.row_mut(c).copy_from_slice(points.row(p));
    }
    centroids
}

/// Lloyd iterations; returns (assignments, final objective, objective after
/// each assignment step). The objective is measured right after assignment,
/// which is the quantity Lloyd provably never decreases.
fn lloyd(points: &Matrix, mut centroids: Matrix, iters: usize) -> (Vec<usize>, f64, Vec<f64>) {
    let m = points.rows();
    let k = centroids.rows();
    let mut assignments = vec![0usize; m];
    let mut objective = 0.0;
    let mut trace = Vec::with_capacity(iters);
    let mut assigned_sim = vec![0.0f64; m];
    for it in 0..iters {
        // Assign: best cosine, ties to the lower centroid index.
        let mut changed = false;
        objective = 0.0;
        for i in 0..m {
            let sims: Vec<f64> = (0..k).map(|c| dot(points.row(i), centroids.row(c))).collect();
            let a = argmax(&sims);
            if assignments[i] != a {
                changed = true;
            }
            assignments[i] = a;
            assigned_sim[i] = sims[a];
            objective += sims[a];
        }
        trace.push(objective);
        if it > 0 && !changed {
            break;
        }
        // Update: normalized mean of each cluster; a degenerate zero mean
        // keeps the previous centroid. Empty clusters steal the point
        // currently worst-served by its centroid.
        let mut sums = Matrix::zeros(k, points.cols());
        let mut counts = vec![0usize; k];
        for i in 0..m {
            counts[assignments[i]] += 1;
            let row = sums.row_mut(assignments[i]);
            for (s, &v) in row.iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let mut worst = 0;
                for i in 1..m {
                    if assigned_sim[i] < assigned_sim[worst] {
                        worst = i;
                    }
                }
                centroids.row_mut(c).copy_from_slice(points.row(worst));
                // Keep a second empty cluster from stealing the same point.
                assigned_sim[worst] = f64::INFINITY;
                continue;
            }
            let norm = dot(sums.row(c), sums.row(c)).sqrt();
            if norm > 0.0 {
                let target = centroids.row_mut(c);
                for (t, &s) in target.iter_mut().zip(sums.row(c)) {
                    *t = s / norm;
                }
            }
        }
    }
    (assignments, objective, trace)
}

/// Agreement between two labelings of the same points.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ClusterMetrics {
    /// Mutual information normalized by the arithmetic mean of the entropies.
    pub nmi: f64,
    /// Mutual information adjusted for chance under the permutation model.
    pub ami: f64,
    /// Rand index adjusted for chance (pair-counting form).
    pub ari: f64,
}

/// NMI / AMI / ARI from the contingency table of two labelings. Two trivial
/// (single-cluster) partitions agree perfectly by convention: all three
/// metrics are 1. Natural logs throughout.
pub fn cluster_metrics(pred: &[usize], truth: &[usize]) -> Result<ClusterMetrics, CarpError> {
    if pred.len() != truth.len() {
        return Err(CarpError::Config(format!(
            "labelings disagree in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(CarpError::Config("labelings must be nonempty".into()));
    }
    let n = pred.len();
    let nf = n as f64;
    let r = pred.iter().copied().max().unwrap() + 1;
    let s = truth.iter().copied().max().unwrap() + 1;
    let mut table = vec![vec![0usize; s]; r];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    let a: Vec<usize> = table.iter().map(|row| row.iter().sum()).collect();
    let b: Vec<usize> = (0..s).map(|j| table.iter().map(|row| row[j]).sum()).collect();

    let entropy = |counts: &[usize]| -> f64 {
        let mut h = 0.0;
        for &c in counts {
            if c > 0 {
                let p = c as f64 / nf;
                h -= p * p.ln();
            }
        }
        h
    };
    let h_pred = entropy(&a);
    let h_truth = entropy(&b);

    let mut mi = 0.0;
    for i in 0..r {
        for j in 0..s {
            let nij = table[i][j];
            if nij > 0 {
                let p = nij as f64 / nf;
                mi += p * ((nij as f64 * nf) / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    let mi = mi.max(0.0); // rounding can leave a tiny negative residue at independence

    if h_pred == 0.0 && h_truth == 0.0 {
        return Ok(ClusterMetrics { nmi: 1.0, ami: 1.0, ari: 1.0 });
    }

    let mean_h = 0.5 * (h_pred + h_truth);
    let nmi = mi / mean_h;

    let emi = expected_mi(&a, &b, n);
    let mut denom = mean_h - emi;
    // Keep the ratio finite when the normalizer vanishes, preserving its sign.
    if denom.abs() < 1e-15 {
        denom = if denom < 0.0 { -1e-15 } else { 1e-15 };
    }
    let ami = (mi - emi) / denom;

    let pairs = |x: usize| -> f64 { (x * x.saturating_sub(1)) as f64 / 2.0 };
    let sum_ij: f64 = table.iter().flatten().map(|&v| pairs(v)).sum();
    let sum_a: f64 = a.iter().map(|&v| pairs(v)).sum();
    let sum_b: f64 = b.iter().map(|&v| pairs(v)).sum();
    let expected = sum_a * sum_b / pairs(n);
    let max_index = 0.5 * (sum_a + sum_b);
    let ari = if max_index == expected { 1.0 } else { (sum_ij - expected) / (max_index - expected) };

    Ok(ClusterMetrics { nmi, ami, ari })
}

/// Expected mutual information of two labelings with the given marginals
/// under the permutation (hypergeometric) model: for every cell, sum the MI
/// contribution of each feasible count weighted by its probability.
fn expected_mi(a: &[usize], b: &[usize], n: usize) -> f64 {
    let nf = n as f64;
    // ln_fact[i] = ln(i!)
    let mut ln_fact = vec![0.0f64; n + 1];
    for i in 1..=n {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let mut emi = 0.0;
    for &ai in a {
        for &bj in b {
            let lo = 1.max((ai + bj).saturating_sub(n));
            let hi = ai.min(bj);
            for nij in lo..=hi {
                // nij >= ai + bj - n keeps the last factorial index nonnegative.
                let p_ln = ln_fact[ai] + ln_fact[bj] + ln_fact[n - ai] + ln_fact[n - bj]
                    - ln_fact[n]
                    - ln_fact[nij]
                    - ln_fact[ai - nij]
                    - ln_fact[bj - nij]
                    - ln_fact[n + nij - ai - bj];
                let term = (nij as f64 / nf) * ((nij as f64 * nf) / (ai as f64 * bj as f64)).ln();
                emi += term * p_ln.exp();
            }
        }
    }
    emi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::data::BlobSpec;

    fn unit_bank(rows: Vec<Vec<f64>>, labels: Vec<usize>) -> EmbeddingBank {
        EmbeddingBank::new(Matrix::from_rows(&rows), labels).unwrap()
    }

    #[test]
    fn bank_normalizes_and_counts_classes() {
        let bank = unit_bank(vec![vec![3.0, 4.0], vec![0.0, 2.0]], vec![0, 2]);
        let r0 = bank.features().row(0);
        assert!((dot(r0, r0) - 1.0).abs() < 1e-12, "rows come out unit length");
        assert_eq!(bank.num_classes(), 3, "classes span 0..=max label");
        assert!(EmbeddingBank::new(Matrix::zeros(2, 2), vec![0]).is_err(), "length mismatch");
    }

    #[test]
    fn single_neighbor_votes_its_label() {
        let bank = unit_bank(vec![vec![1.0, 0.0]], vec![0]);
        let scores = knn_predict(&bank, &[0.0, 1.0], 1, 0.07).unwrap();
        assert_eq!(predicted_class(&scores), 0);
        assert_eq!(scores.len(), 1);
        assert!((scores[0] - (0.0f64 / 0.07).exp()).abs() < 1e-12, "orthogonal query scores exp(0)");
    }

    #[test]
    fn exact_match_scores_exp_of_inverse_tau() {
        let bank = unit_bank(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 0]);
        let scores = knn_predict(&bank, &[1.0, 0.0], 1, 0.07).unwrap();
        assert_eq!(predicted_class(&scores), 1, "the identical row's label wins");
        assert_eq!(scores[1], (1.0f64 / 0.07).exp(), "unit self-similarity scores exp(1/tau)");
        assert_eq!(scores[0], 0.0, "the other class got no votes at k=1");
    }

    #[test]
    fn knn_argument_contract() {
        let bank = unit_bank(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]);
        assert!(knn_predict(&bank, &[1.0, 0.0], 3, 0.07).is_err(), "k beyond bank size");
        assert!(knn_predict(&bank, &[1.0, 0.0], 0, 0.07).is_err(), "k = 0");
        assert!(knn_predict(&bank, &[1.0, 0.0], 1, 0.0).is_err(), "tau must be positive");
        assert!(knn_predict(&bank, &[1.0, 0.0], 1, -1.0).is_err());
    }

    /// Brute force reference: score every class by summing exp(sim/tau) over
    /// the k best rows, selecting them by repeated scans instead of a sort.
    fn brute_scores(bank: &EmbeddingBank, query: &[f64], k: usize, tau: f64) -> Vec<f64> {
        let sims: Vec<f64> =
            (0..bank.len()).map(|i| dot(bank.features().row(i), query)).collect();
        let mut taken = vec![false; sims.len()];
        let mut scores = vec![0.0; bank.num_classes()];
        for _ in 0..k {
            let mut best: Option<usize> = None;
            for i in 0..sims.len() {
                if taken[i] {
                    continue;
                }
                if best.map_or(true, |b| sims[i] > sims[b]) {
                    best = Some(i);
                }
            }
            let b = best.unwrap();
            taken[b] = true;
            scores[bank.labels()[b]] += (sims[b] / tau).exp();
        }
        scores
    }

    #[test]
    fn matches_brute_force_scorer() {
        let mut rng = Rng::new(11);
        for _ in 0..10 {
            let m = 10 + rng.next_below(21) as usize;
            let rows: Vec<Vec<f64>> =
                (0..m).map(|_| (0..5).map(|_| 2.0 * rng.next_f64() - 1.0).collect()).collect();
            let labels: Vec<usize> = (0..m).map(|_| rng.next_below(3) as usize).collect();
            let bank = unit_bank(rows, labels);
            let raw: Vec<f64> = (0..5).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
            let norm = dot(&raw, &raw).sqrt();
            let query: Vec<f64> = raw.iter().map(|v| v / norm).collect();
            let k = 1 + rng.next_below(5) as usize;
            let scores = knn_predict(&bank, &query, k, 0.07).unwrap();
            let reference = brute_scores(&bank, &query, k, 0.07);
            for (s, r) in scores.iter().zip(&reference) {
                assert!((s - r).abs() < 1e-12, "scores diverge from brute force: {s} vs {r}");
            }
            assert_eq!(predicted_class(&scores), predicted_class(&reference));
        }
    }

    #[test]
    fn huge_tau_degenerates_to_majority_vote() {
        let mut rng = Rng::new(13);
        let rows: Vec<Vec<f64>> =
            (0..20).map(|_| (0..4).map(|_| rng.next_normal()).collect()).collect();
        let labels: Vec<usize> = (0..20).map(|_| rng.next_below(3) as usize).collect();
        let bank = unit_bank(rows.clone(), labels.clone());
        let query = {
            let raw: Vec<f64> = (0..4).map(|_| rng.next_normal()).collect();
            let norm = dot(&raw, &raw).sqrt();
            raw.iter().map(|v| v / norm).collect::<Vec<f64>>()
        };
        let k = 7;
        let scores = knn_predict(&bank, &query, k, 1e6).unwrap();
        // Each vote is exp(sim/1e6) = 1 + O(1e-6): scores count neighbors.
        let total: f64 = scores.iter().sum();
        assert!((total - k as f64).abs() < 1e-4, "votes should sum to k, got {total}");
        for &s in &scores {
            assert!((s - s.round()).abs() < 1e-4, "each class score is an integer head count");
        }
    }

    #[test]
    fn loo_accuracy_on_separated_blobs_is_high() {
        let ds = make_blobs(
            &BlobSpec { classes: 4, per_class: 16, dim: 8, spread: 0.05 },
            &mut Rng::new(3),
        );
        let bank = EmbeddingBank::new(ds.samples.clone(), ds.labels.clone()).unwrap();
        let acc = knn_accuracy_loo(&bank, 5, 0.07).unwrap();
        assert!(acc > 0.95, "well-separated blobs classify near-perfectly, got {acc}");
    }

    #[test]
    fn kmeans_groups_separable_pairs() {
        let rows = vec![
            vec![1.0, 0.0, 0.01],
            vec![1.0, 0.0, -0.01],
            vec![-1.0, 0.02, 0.0],
            vec![-1.0, -0.02, 0.0],
        ];
        let assignments =
            kmeans(&Matrix::from_rows(&rows), 2, 100, 20, &mut Rng::new(5)).unwrap();
        assert_eq!(assignments[0], assignments[1], "the first pair shares a cluster");
        assert_eq!(assignments[2], assignments[3], "the second pair shares a cluster");
        assert_ne!(assignments[0], assignments[2], "the pairs are separated");
    }

    #[test]
    fn kmeans_with_k_equal_points_isolates_everyone() {
        let mut rng = Rng::new(7);
        let rows: Vec<Vec<f64>> =
            (0..6).map(|_| (0..4).map(|_| rng.next_normal()).collect()).collect();
        let assignments = kmeans(&Matrix::from_rows(&rows), 6, 50, 5, &mut rng).unwrap();
        let mut seen = assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 6, "k = M puts every point in its own cluster");
    }

    #[test]
    fn kmeans_recovers_generated_clusters() {
        let ds = make_blobs(
            &BlobSpec { classes: 4, per_class: 20, dim: 8, spread: 0.05 },
            &mut Rng::new(9),
        );
        let assignments = kmeans(&ds.samples, 4, 100, 20, &mut Rng::new(10)).unwrap();
        let metrics = cluster_metrics(&assignments, &ds.labels).unwrap();
        assert!(metrics.ari > 0.99, "tight blobs should be recovered, ARI = {}", metrics.ari);
    }

    #[test]
    fn kmeans_argument_contract() {
        let rows = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut rng = Rng::new(0);
        assert!(kmeans(&rows, 3, 10, 1, &mut rng).is_err(), "k beyond point count");
        assert!(kmeans(&rows, 0, 10, 1, &mut rng).is_err());
        assert!(kmeans(&rows, 1, 0, 1, &mut rng).is_err());
        assert!(kmeans(&rows, 1, 10, 0, &mut rng).is_err());
    }

    #[test]
    fn lloyd_objective_never_decreases_within_a_run() {
        let mut rng = Rng::new(21);
        for _ in 0..5 {
            let rows: Vec<Vec<f64>> =
                (0..30).map(|_| (0..6).map(|_| rng.next_normal()).collect()).collect();
            let points = Matrix::from_rows(&rows).normalized_rows();
            let centroids = plus_plus_seed(&points, 4, &mut rng);
            let (_, _, trace) = lloyd(&points, centroids, 40);
            for w in trace.windows(2) {
                assert!(
                    w[1] >= w[0] - 1e-9,
                    "objective dropped across an iteration: {} -> {}",
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn empty_clusters_are_reseeded() {
        // Three tight groups but every initial centroid sits in the first
        // one, so two clusters start empty and must steal points.
        let rows = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.999, 0.001, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.001, 0.999, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.001, 0.999],
        ];
        let points = Matrix::from_rows(&rows).normalized_rows();
        let mut centroids = Matrix::zeros(3, 3);
        for c in 0..3 {
            centroids.row_mut(c).copy_from_slice(points.row(0));
        }
        let (assignments, _, _) = lloyd(&points, centroids, 50);
        let mut counts = [0usize; 3];
        for &a in &assignments {
            counts[a] += 1;
        }
        assert!(counts.iter().all(|&c| c == 2), "each group claims a cluster: {counts:?}");
        assert_eq!(assignments[0], assignments[1]);
        assert_eq!(assignments[2], assignments[3]);
        assert_eq!(assignments[4], assignments[5]);
    }

    #[test]
    fn perfect_agreement_scores_one_everywhere() {
        let m = cluster_metrics(&[0, 1, 2, 0, 1, 2], &[2, 0, 1, 2, 0, 1]).unwrap();
        assert!((m.nmi - 1.0).abs() < 1e-12, "relabeled identity has NMI 1, got {}", m.nmi);
        assert!((m.ami - 1.0).abs() < 1e-9, "relabeled identity has AMI 1, got {}", m.ami);
        assert!((m.ari - 1.0).abs() < 1e-12, "relabeled identity has ARI 1, got {}", m.ari);
    }

    #[test]
    fn constant_prediction_scores_zero() {
        let m = cluster_metrics(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(m.nmi, 0.0, "one trivial side gives zero mutual information");
        assert_eq!(m.ari, 0.0, "constant prediction is chance level");
        assert!(m.ami.abs() < 1e-12, "AMI of a trivial side is zero, got {}", m.ami);
    }

    #[test]
    fn two_trivial_partitions_agree_by_convention() {
        let m = cluster_metrics(&[0, 0, 0], &[0, 0, 0]).unwrap();
        assert_eq!((m.nmi, m.ami, m.ari), (1.0, 1.0, 1.0));
    }

    #[test]
    fn crossed_pairs_hand_ari() {
        // Contingency table all-ones: no same-pair survives, ARI = -0.5.
        let m = cluster_metrics(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((m.ari - (-0.5)).abs() < 1e-12, "hand-computed ARI is -0.5, got {}", m.ari);
        assert_eq!(m.nmi, 0.0, "independent marginals carry no information");
    }

    #[test]
    fn metrics_ignore_label_permutations() {
        let mut rng = Rng::new(17);
        for _ in 0..10 {
            let n = 8 + rng.next_below(12) as usize;
            let pred: Vec<usize> = (0..n).map(|_| rng.next_below(4) as usize).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.next_below(3) as usize).collect();
            let base = cluster_metrics(&pred, &truth).unwrap();
            // Swap labels 0 and 3 (4 stays distinct from every original id).
            let renamed: Vec<usize> =
                pred.iter().map(|&p| match p {
                    0 => 3,
                    3 => 0,
                    other => other,
                })
                .collect();
            let same = cluster_metrics(&renamed, &truth).unwrap();
            assert!((base.nmi - same.nmi).abs() < 1e-12, "NMI changed under relabeling");
            assert!((base.ami - same.ami).abs() < 1e-9, "AMI changed under relabeling");
            assert!((base.ari - same.ari).abs() < 1e-12, "ARI changed under relabeling");
        }
    }

    #[test]
    fn metric_ranges_hold_on_random_labelings() {
        let mut rng = Rng::new(19);
        for _ in 0..20 {
            let n = 5 + rng.next_below(20) as usize;
            let pred: Vec<usize> = (0..n).map(|_| rng.next_below(4) as usize).collect();
            let truth: Vec<usize> = (0..n).map(|_| rng.next_below(4) as usize).collect();
            let m = cluster_metrics(&pred, &truth).unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&m.nmi), "NMI out of range: {}", m.nmi);
            assert!(m.ami <= 1.0 + 1e-9, "AMI above one: {}", m.ami);
            assert!(m.ari <= 1.0 + 1e-12, "ARI above one: {}", m.ari);
        }
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(cluster_metrics(&[0, 1], &[0]).is_err());
        assert!(cluster_metrics(&[], &[]).is_err());
    }
}
