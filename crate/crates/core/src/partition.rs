//! Random partitions of the prototype set. Each training step splits the K
//! prototype columns into equal blocks; the assignment softmax then runs
//! independently inside every block, which is what lets small batches carry a
//! learning signal even when K is large.

use crate::error::CarpError;
use crate::numerics::{sample_without_replacement, softmax_in_place, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionStrategy {
    /// Fresh uniform permutation of prototype ids every draw.
    Random,
    /// Identity order every draw: block j holds ids [j*B, (j+1)*B).
    Constant,
}

/// Validated description of how to split K prototypes into blocks of size B.
#[derive(Debug, Clone, Copy)]
pub struct PartitionSpec {
    k: usize,
    block_size: usize,
    strategy: PartitionStrategy,
}

impl PartitionSpec {
    pub fn new(k: usize, block_size: usize, strategy: PartitionStrategy) -> Result<Self, CarpError> {
        if k == 0 {
            return Err(CarpError::Config("prototype count must be positive".into()));
        }
        if block_size == 0 {
            return Err(CarpError::Config("block_size must be positive".into()));
        }
        if block_size > k {
            return Err(CarpError::Config(format!(
                "block_size {block_size} exceeds prototype count {k}"
            )));
        }
        if k % block_size != 0 {
            return Err(CarpError::Config(format!(
                "block_size {block_size} does not divide prototype count {k}"
            )));
        }
        Ok(PartitionSpec { k, block_size, strategy })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.k / self.block_size
    }

    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }
}

/// One concrete draw: `blocks[j]` lists the prototype ids in block j. The
/// blocks are disjoint, equally sized, and together cover 0..k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    k: usize,
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_size(&self) -> usize {
        self.blocks[0].len()
    }

    pub fn block(&self, j: usize) -> &[usize] {
        &self.blocks[j]
    }
}

/// Draw a partition. The Constant strategy never touches the RNG, so it can
/// share a stream with Random draws without shifting it.
pub fn make_partition(spec: &PartitionSpec, rng: &mut Rng) -> Partition {
    let ids: Vec<usize> = match spec.strategy {
        PartitionStrategy::Random => sample_without_replacement(rng, spec.k, spec.k),
        PartitionStrategy::Constant => (0..spec.k).collect(),
    };
    let blocks = ids.chunks(spec.block_size).map(|c| c.to_vec()).collect();
    Partition { k: spec.k, blocks }
}

/// Per-block assignment probabilities: a [num_blocks x batch x block_size]
/// tensor whose rows are softmaxes over the logits gathered for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockProbs {
    num_blocks: usize,
    batch: usize,
    block_size: usize,
    data: Vec<f64>,
}

impl BlockProbs {
    pub fn zeros(num_blocks: usize, batch: usize, block_size: usize) -> Self {
        BlockProbs { num_blocks, batch, block_size, data: vec![0.0; num_blocks * batch * block_size] }
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn row(&self, block: usize, i: usize) -> &[f64] {
        assert!(block < self.num_blocks && i < self.batch, "BlockProbs::row out of range");
        let start = (block * self.batch + i) * self.block_size;
        &self.data[start..start + self.block_size]
    }

    pub fn row_mut(&mut self, block: usize, i: usize) -> &mut [f64] {
        assert!(block < self.num_blocks && i < self.batch, "BlockProbs::row_mut out of range");
        let start = (block * self.batch + i) * self.block_size;
        &mut self.data[start..start + self.block_size]
    }

    pub fn same_shape(&self, other: &BlockProbs) -> bool {
        self.num_blocks == other.num_blocks
            && self.batch == other.batch
            && self.block_size == other.block_size
    }
}

/// Gather each block's logit columns and softmax within the block, per sample.
/// Every prototype column belongs to exactly one block, so the result is a
/// complete re-encoding of the logit matrix.
pub fn gather_block_probs(logits: &Matrix, partition: &Partition) -> BlockProbs {
    assert_eq!(
        logits.cols(),
        partition.k(),
        "gather_block_probs: logit width {} vs partition over {}",
        logits.cols(),
        partition.k()
    );
    let nb = partition.block_size();
    let np = partition.num_blocks();
    let n = logits.rows();
    let mut out = BlockProbs::zeros(np, n, nb);
    for j in 0..np {
        let ids = partition.block(j);
        for i in 0..n {
            let src = logits.row(i);
            let row = out.row_mut(j, i);
            for (c, &id) in ids.iter().enumerate() {
                row[c] = src[id];
            }
            softmax_in_place(row);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, b: usize, s: PartitionStrategy) -> PartitionSpec {
        PartitionSpec::new(k, b, s).unwrap()
    }

    #[test]
    fn blocks_cover_disjointly() {
        let mut rng = Rng::new(42);
        for &(k, b) in &[(6usize, 3usize), (8, 4), (8, 2), (12, 4), (4, 4)] {
            let sp = spec(k, b, PartitionStrategy::Random);
            for _ in 0..50 {
                let p = make_partition(&sp, &mut rng);
                assert_eq!(p.num_blocks(), k / b);
                let mut seen = vec![false; k];
                for j in 0..p.num_blocks() {
                    assert_eq!(p.block(j).len(), b, "unequal block size");
                    for &id in p.block(j) {
                        assert!(id < k);
                        assert!(!seen[id], "prototype {id} appears in two blocks");
                        seen[id] = true;
                    }
                }
                assert!(seen.iter().all(|&s| s), "partition does not cover all prototypes");
            }
        }
    }

    #[test]
    fn single_block_is_identity_set() {
        let mut rng = Rng::new(0);
        let p = make_partition(&spec(4, 4, PartitionStrategy::Random), &mut rng);
        assert_eq!(p.num_blocks(), 1);
        let mut ids = p.block(0).to_vec();
        ids.sort_unstable();
        assert_eq!(ids, vec![0, 1, 2, 3], "a single block must hold every prototype");
    }

    #[test]
    fn constant_strategy_is_stable_and_ignores_rng() {
        let sp = spec(8, 4, PartitionStrategy::Constant);
        let mut rng = Rng::new(123);
        let before = rng.clone().next_u64();
        let p1 = make_partition(&sp, &mut rng);
        let p2 = make_partition(&sp, &mut rng);
        assert_eq!(p1, p2, "constant partition must be identical across draws");
        assert_eq!(p1.block(0), &[0, 1, 2, 3]);
        assert_eq!(p1.block(1), &[4, 5, 6, 7]);
        assert_eq!(rng.next_u64(), before, "constant draws must not consume the RNG");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(PartitionSpec::new(8, 3, PartitionStrategy::Random).is_err(), "3 does not divide 8");
        assert!(PartitionSpec::new(4, 8, PartitionStrategy::Random).is_err(), "block larger than k");
        assert!(PartitionSpec::new(0, 1, PartitionStrategy::Random).is_err());
        assert!(PartitionSpec::new(8, 0, PartitionStrategy::Random).is_err());
    }

    #[test]
    fn co_block_probability_matches_combinatorics() {
        // With K=8, B=4, ids 0 and 1 land in the same block with probability
        // 3/7: given 0's slot, 3 of the remaining 7 slots share its block.
        let sp = spec(8, 4, PartitionStrategy::Random);
        let mut rng = Rng::new(7);
        let draws = 10_000;
        let mut together = 0;
        for _ in 0..draws {
            let p = make_partition(&sp, &mut rng);
            for j in 0..p.num_blocks() {
                let has0 = p.block(j).contains(&0);
                let has1 = p.block(j).contains(&1);
                if has0 && has1 {
                    together += 1;
                }
            }
        }
        let freq = together as f64 / draws as f64;
        assert!((freq - 3.0 / 7.0).abs() < 0.02, "co-block frequency {freq}, expected {}", 3.0 / 7.0);
    }

    #[test]
    fn gather_forced_example() {
        // Two samples, K=4, constant blocks {0,1} and {2,3}.
        // Sample 0: logits [ln 3, 0, 1, 1] -> block 0 gives [0.75, 0.25],
        // block 1 gives [0.5, 0.5].
        let logits = Matrix::from_rows(&[
            vec![3.0f64.ln(), 0.0, 1.0, 1.0],
            vec![0.0, 0.0, 0.0, 0.0],
        ]);
        let mut rng = Rng::new(0);
        let p = make_partition(&spec(4, 2, PartitionStrategy::Constant), &mut rng);
        let probs = gather_block_probs(&logits, &p);
        assert!((probs.row(0, 0)[0] - 0.75).abs() < 1e-12);
        assert!((probs.row(0, 0)[1] - 0.25).abs() < 1e-12);
        assert!((probs.row(1, 0)[0] - 0.5).abs() < 1e-12);
        assert!((probs.row(1, 0)[1] - 0.5).abs() < 1e-12);
        for j in 0..2 {
            for &v in probs.row(j, 1) {
                assert!((v - 0.5).abs() < 1e-12, "uniform logits must gather to uniform blocks");
            }
        }
    }

    #[test]
    fn gather_matches_naive_oracle_on_random_draws() {
        let mut rng = Rng::new(99);
        for _ in 0..20 {
            let n = 1 + rng.next_below(5) as usize;
            let (k, b) = [(6, 2), (6, 3), (8, 4), (12, 3)][rng.next_below(4) as usize];
            let logits = crate::numerics::random_matrix(&mut rng, n, k);
            let p = make_partition(&spec(k, b, PartitionStrategy::Random), &mut rng);
            let probs = gather_block_probs(&logits, &p);
            for j in 0..p.num_blocks() {
                for i in 0..n {
                    // Oracle: exponentiate gathered logits directly and normalize.
                    let gathered: Vec<f64> = p.block(j).iter().map(|&id| logits.get(i, id)).collect();
                    let z: f64 = gathered.iter().map(|v| v.exp()).sum();
                    let row = probs.row(j, i);
                    let sum: f64 = row.iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12, "block row must sum to 1");
                    for (c, &g) in gathered.iter().enumerate() {
                        assert!((row[c] - g.exp() / z).abs() < 1e-12, "gathered softmax mismatch");
                    }
                }
            }
        }
    }

    #[test]
    #[should_panic(expected = "gather_block_probs")]
    fn gather_width_mismatch_panics() {
        let logits = Matrix::zeros(2, 6);
        let mut rng = Rng::new(0);
        let p = make_partition(&spec(8, 4, PartitionStrategy::Random), &mut rng);
        let _ = gather_block_probs(&logits, &p);
    }
}
