use super::{DatasetError, EmbeddingDataset, LabelRef, Result};
use crate::rng::{seeded, stream, Rng};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

/// Row indices of one mini-batch plus the permutation that pairs each
/// embedding with a shuffled partner for the marginal term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexBatch {
    pub rows: Vec<usize>,
    /// Marginal pair `k` is `(rows[k], rows[perm[k]])`. Fixed points are allowed.
    pub perm: Vec<usize>,
}

impl IndexBatch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Epoch-wise shuffled mini-batch indices over `n` rows.
///
/// A trailing remnant shorter than `batch_size / 2` is dropped; a longer
/// one is emitted as a short batch.
#[derive(Debug, Clone)]
pub struct PairSampler {
    n: usize,
    batch_size: usize,
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
}

impl PairSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        Self::with_rng(n, batch_size, seeded(seed, stream::CRITIC_BATCHES))
    }

    pub fn with_rng(n: usize, batch_size: usize, rng: Rng) -> Result<Self> {
        if batch_size == 0 {
            return Err(DatasetError::Config("batch size must be positive".into()));
        }
        if batch_size > n {
            return Err(DatasetError::Config(format!(
                "batch size {batch_size} exceeds dataset size {n}"
            )));
        }
        Ok(Self {
            n,
            batch_size,
            rng,
            order: Vec::new(),
            cursor: usize::MAX,
            epoch: 0,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches_per_epoch(&self) -> usize {
        let full = self.n / self.batch_size;
        let rem = self.n % self.batch_size;
        full + usize::from(rem > 0 && 2 * rem >= self.batch_size)
    }

    /// Number of epochs started so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn epoch_exhausted(&self) -> bool {
        if self.cursor >= self.n {
            return true;
        }
        let rem = self.n - self.cursor;
        rem < self.batch_size && 2 * rem < self.batch_size
    }

    pub fn next_batch(&mut self) -> IndexBatch {
        if self.epoch_exhausted() {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let end = (self.cursor + self.batch_size).min(self.n);
        let rows = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let mut perm: Vec<usize> = (0..rows.len()).collect();
        perm.shuffle(&mut self.rng);
        IndexBatch { rows, perm }
    }

    /// The remaining batches of the current epoch, starting a new epoch if
    /// the current one is exhausted.
    pub fn epoch_batches(&mut self) -> Vec<IndexBatch> {
        let mut out = vec![self.next_batch()];
        while !self.epoch_exhausted() {
            out.push(self.next_batch());
        }
        out
    }
}

/// What an embedding is paired with inside a critic.
#[derive(Debug, Clone, Copy)]
pub enum Partner<'a> {
    /// Binary labels, fed one-hot (width 2).
    Labels(&'a [u8]),
    /// Raw embedding rows (used by the information-preservation term).
    Raw(ArrayView2<'a, f64>),
}

impl Partner<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Partner::Labels(_) => 2,
            Partner::Raw(x) => x.ncols(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Partner::Labels(l) => l.len(),
            Partner::Raw(x) => x.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, rows: &[usize]) -> Array2<f64> {
        match self {
            Partner::Labels(labels) => {
                let mut out = Array2::zeros((rows.len(), 2));
                for (k, &r) in rows.iter().enumerate() {
                    out[[k, labels[r] as usize]] = 1.0;
                }
                out
            }
            Partner::Raw(x) => x.select(Axis(0), rows),
        }
    }

    /// True when the batch rows hold a single label class (marginal and
    /// joint then coincide and the term carries no signal).
    pub fn single_class(&self, rows: &[usize]) -> bool {
        match self {
            Partner::Labels(labels) => {
                let first = labels[rows[0]];
                rows.iter().all(|&r| labels[r] == first)
            }
            Partner::Raw(_) => false,
        }
    }
}

/// Joint pairs `(e_k, y_k)` and marginal pairs `(e_k, y_{π(k)})` for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub rows: Vec<usize>,
    pub perm: Vec<usize>,
    /// `B × d` embeddings, shared by the joint and marginal pairs.
    pub embed: Array2<f64>,
    pub partner: Array2<f64>,
    pub partner_shuffled: Array2<f64>,
}

impl PairBatch {
    /// `embed` must already hold the embeddings of `index.rows`, in order.
    pub fn from_embed(embed: Array2<f64>, partner: &Partner<'_>, index: &IndexBatch) -> Self {
        assert_eq!(embed.nrows(), index.len(), "embedding rows must match the batch");
        let partner_rows = partner.gather(&index.rows);
        let partner_shuffled = partner_rows.select(Axis(0), &index.perm);
        Self {
            rows: index.rows.clone(),
            perm: index.perm.clone(),
            embed,
            partner: partner_rows,
            partner_shuffled,
        }
    }

    pub fn gather(encoded: ArrayView2<f64>, partner: &Partner<'_>, index: &IndexBatch) -> Self {
        Self::from_embed(encoded.select(Axis(0), &index.rows), partner, index)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn concat(&self, partner: &Array2<f64>) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[self.embed.view(), partner.view()])
            .expect("row counts agree by construction")
    }

    /// Critic inputs `[e | y]` for the joint pairs.
    pub fn joint_input(&self) -> Array2<f64> {
        self.concat(&self.partner)
    }

    /// Critic inputs `[e | y_π]` for the marginal pairs.
    pub fn marginal_input(&self) -> Array2<f64> {
        self.concat(&self.partner_shuffled)
    }
}

/// Infinite stream of pair batches over an encoded matrix and one label column.
pub struct PairStream<'a> {
    encoded: ArrayView2<'a, f64>,
    partner: Partner<'a>,
    sampler: PairSampler,
}

impl PairStream<'_> {
    pub fn batches_per_epoch(&self) -> usize {
        self.sampler.batches_per_epoch()
    }

    pub fn epoch(&self) -> usize {
        self.sampler.epoch()
    }
}

impl Iterator for PairStream<'_> {
    type Item = PairBatch;

    fn next(&mut self) -> Option<PairBatch> {
        let index = self.sampler.next_batch();
        Some(PairBatch::gather(self.encoded, &self.partner, &index))
    }
}

pub fn make_batches<'a>(
    dataset: &'a EmbeddingDataset,
    encoded: ArrayView2<'a, f64>,
    label: LabelRef,
    batch_size: usize,
    seed: u64,
) -> Result<PairStream<'a>> {
    if encoded.nrows() != dataset.n() {
        return Err(DatasetError::Config(format!(
            "encoded matrix has {} rows, dataset has {}",
            encoded.nrows(),
            dataset.n()
        )));
    }
    let column = dataset.label(label)?;
    Ok(PairStream {
        encoded,
        partner: Partner::Labels(&column.values),
        sampler: PairSampler::new(dataset.n(), batch_size, seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn four_rows_two_per_batch() {
        let mut s = PairSampler::new(4, 2, 0).unwrap();
        assert_eq!(s.batches_per_epoch(), 2);
        let batches = s.epoch_batches();
        assert_eq!(batches.len(), 2);
        let all: BTreeSet<usize> = batches.iter().flat_map(|b| b.rows.clone()).collect();
        assert_eq!(all, (0..4).collect());
    }

    #[test]
    fn remnant_rule() {
        let mut s = PairSampler::new(10_000, 1024, 3).unwrap();
        assert_eq!(s.batches_per_epoch(), 10);
        let batches = s.epoch_batches();
        assert_eq!(batches.len(), 10);
        assert_eq!(batches.last().unwrap().len(), 784);
        let rows: BTreeSet<usize> = batches.iter().flat_map(|b| b.rows.clone()).collect();
        assert_eq!(rows.len(), 10_000);

        // 1000 = 2·384 + 232 (kept, ≥ 192); 1000 = 2·450 + 100 (dropped, < 225)
        let s = PairSampler::new(1000, 384, 0).unwrap();
        assert_eq!(s.batches_per_epoch(), 3);
        let s = PairSampler::new(1000, 450, 0).unwrap();
        assert_eq!(s.batches_per_epoch(), 2);
    }

    #[test]
    fn dropped_remnant_starts_next_epoch() {
        let mut s = PairSampler::new(9, 4, 1).unwrap();
        assert_eq!(s.batches_per_epoch(), 2);
        s.next_batch();
        s.next_batch();
        assert_eq!(s.epoch(), 1);
        s.next_batch();
        assert_eq!(s.epoch(), 2);
    }

    #[test]
    fn batch_larger_than_dataset() {
        assert!(matches!(PairSampler::new(3, 4, 0), Err(DatasetError::Config(_))));
    }

    #[test]
    fn seeded_streams_repeat() {
        let mut a = PairSampler::new(50, 8, 9).unwrap();
        let mut b = PairSampler::new(50, 8, 9).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }

    #[test]
    fn one_hot_partner_and_shuffle() {
        let labels = [0u8, 1, 1, 0];
        let partner = Partner::Labels(&labels);
        let index = IndexBatch {
            rows: vec![3, 1, 2],
            perm: vec![2, 0, 1],
        };
        let enc = Array2::from_shape_fn((4, 1), |(i, _)| i as f64);
        let b = PairBatch::gather(enc.view(), &partner, &index);
        assert_eq!(b.embed.column(0).to_vec(), vec![3.0, 1.0, 2.0]);
        assert_eq!(b.partner.row(0).to_vec(), vec![1.0, 0.0]);
        assert_eq!(b.partner_shuffled.row(0), b.partner.row(2));
        assert_eq!(b.joint_input().ncols(), 3);
        assert!(!partner.single_class(&[0, 1]));
        assert!(partner.single_class(&[1, 2]));
    }
}
