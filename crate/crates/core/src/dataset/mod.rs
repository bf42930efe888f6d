//! Embedding datasets: the in-memory model, the EMBD file format,
//! pair batching for critic training, and synthetic generators with
//! known mutual information.

mod batch;
mod embd;
mod synth;

pub use batch::{make_batches, IndexBatch, PairBatch, PairSampler, PairStream, Partner};
pub use embd::{load_embd, read_embd, save_embd, write_embd, EMBD_HEADER_LEN, EMBD_MAGIC, EMBD_VERSION};
pub use synth::{
    binary_channel_mi, gaussian_mi, synth_gaussian_pair, synth_planted, GaussianPair, SyntheticKind,
    SyntheticRecipe,
};

use ndarray::Array2;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad magic {found:?} at byte {offset}")]
    BadMagic { offset: usize, found: [u8; 4] },
    #[error("unsupported version {found} at byte {offset}")]
    Version { offset: usize, found: u32 },
    #[error("truncated payload at byte {offset}: need {needed} bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{extra} unexpected trailing bytes at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("label byte {value} at byte {offset} is not 0 or 1")]
    LabelByte { offset: usize, value: u8 },
    #[error("label name at byte {offset} is not valid UTF-8")]
    LabelName { offset: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelColumn {
    pub name: String,
    pub values: Vec<u8>,
}

impl LabelColumn {
    pub fn new(name: impl Into<String>, values: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    pub fn positives(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Which label column of a dataset a term refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelRef {
    Task(usize),
    Sensitive(usize),
}

/// Raw embeddings `X` with their binary task and sensitive labels.
///
/// Immutable once constructed; every constructor path validates that
/// labels are binary, cover both classes and have one entry per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    x: Array2<f32>,
    task_labels: Vec<LabelColumn>,
    sens_labels: Vec<LabelColumn>,
    pub provenance: String,
}

impl EmbeddingDataset {
    pub fn new(
        x: Array2<f32>,
        task_labels: Vec<LabelColumn>,
        sens_labels: Vec<LabelColumn>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || x.ncols() == 0 {
            return Err(DatasetError::Invalid(format!("empty matrix {}x{}", n, x.ncols())));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::Invalid(format!(
                "non-finite entry at row {} column {}",
                pos / x.ncols(),
                pos % x.ncols()
            )));
        }
        for col in task_labels.iter().chain(&sens_labels) {
            if col.values.len() != n {
                return Err(DatasetError::Invalid(format!(
                    "label column '{}' has {} entries for {} rows",
                    col.name,
                    col.values.len(),
                    n
                )));
            }
            if let Some(v) = col.values.iter().find(|&&v| v > 1) {
                return Err(DatasetError::Invalid(format!(
                    "label column '{}' contains non-binary value {}",
                    col.name, v
                )));
            }
            let pos = col.positives();
            if pos == 0 || pos == n {
                return Err(DatasetError::Invalid(format!(
                    "label column '{}' contains a single class",
                    col.name
                )));
            }
        }
        Ok(Self {
            x,
            task_labels,
            sens_labels,
            provenance: provenance.into(),
        })
    }

    pub fn x(&self) -> &Array2<f32> {
        &self.x
    }

    pub fn x_f64(&self) -> Array2<f64> {
        self.x.mapv(f64::from)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn task_labels(&self) -> &[LabelColumn] {
        &self.task_labels
    }

    pub fn sens_labels(&self) -> &[LabelColumn] {
        &self.sens_labels
    }

    pub fn label(&self, which: LabelRef) -> Result<&LabelColumn> {
        let found = match which {
            LabelRef::Task(i) => self.task_labels.get(i),
            LabelRef::Sensitive(i) => self.sens_labels.get(i),
        };
        found.ok_or_else(|| DatasetError::Config(format!("no label column {which:?}")))
    }

    /// Same labels, different embedding matrix (e.g. an encoded or noised copy).
    pub fn with_x(&self, x: Array2<f32>, provenance: impl Into<String>) -> Result<Self> {
        if x.nrows() != self.n() {
            return Err(DatasetError::Invalid(format!(
                "replacement matrix has {} rows, dataset has {}",
                x.nrows(),
                self.n()
            )));
        }
        Self::new(x, self.task_labels.clone(), self.sens_labels.clone(), provenance)
    }
}

/// Plug-in mutual information of two binary columns, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteMi {
    pub nats: f64,
    /// Set when either column holds a single class; `nats` is then 0.
    pub degenerate: bool,
}

/// Exact plug-in MI from the empirical 2×2 contingency table.
pub fn discrete_mi_bruteforce(a: &[u8], b: &[u8]) -> Result<DiscreteMi> {
    if a.is_empty() {
        return Err(DatasetError::Config("discrete MI of empty columns".into()));
    }
    if a.len() != b.len() {
        return Err(DatasetError::Config(format!(
            "column lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut table = [[0usize; 2]; 2];
    for (&x, &y) in a.iter().zip(b) {
        if x > 1 || y > 1 {
            return Err(DatasetError::Config(format!("non-binary pair ({x}, {y})")));
        }
        table[x as usize][y as usize] += 1;
    }
    let n = a.len() as f64;
    let pa = [
        (table[0][0] + table[0][1]) as f64 / n,
        (table[1][0] + table[1][1]) as f64 / n,
    ];
    let pb = [
        (table[0][0] + table[1][0]) as f64 / n,
        (table[0][1] + table[1][1]) as f64 / n,
    ];
    if pa.contains(&0.0) || pb.contains(&0.0) {
        return Ok(DiscreteMi {
            nats: 0.0,
            degenerate: true,
        });
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            if count > 0 {
                let p = count as f64 / n;
                mi += p * (p / (pa[i] * pb[j])).ln();
            }
        }
    }
    Ok(DiscreteMi {
        nats: mi.max(0.0),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(name: &str, v: &[u8]) -> LabelColumn {
        LabelColumn::new(name, v.to_vec())
    }

    #[test]
    fn rejects_single_class_and_bad_lengths() {
        let x = Array2::<f32>::zeros((4, 2));
        assert!(EmbeddingDataset::new(x.clone(), vec![col("t", &[1, 1, 1, 1])], vec![], "").is_err());
        assert!(EmbeddingDataset::new(x.clone(), vec![col("t", &[0, 1, 1])], vec![], "").is_err());
        assert!(EmbeddingDataset::new(x.clone(), vec![col("t", &[0, 1, 2, 1])], vec![], "").is_err());
        assert!(EmbeddingDataset::new(x, vec![col("t", &[0, 1, 0, 1])], vec![], "").is_ok());
    }

    #[test]
    fn rejects_non_finite() {
        let mut x = Array2::<f32>::zeros((2, 2));
        x[[1, 0]] = f32::NAN;
        let err = EmbeddingDataset::new(x, vec![], vec![], "").unwrap_err();
        assert!(err.to_string().contains("row 1 column 0"));
    }

    #[test]
    fn identical_columns_give_ln2() {
        let mi = discrete_mi_bruteforce(&[0, 1, 0, 1], &[0, 1, 0, 1]).unwrap();
        assert!((mi.nats - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn product_table_gives_zero() {
        let mi = discrete_mi_bruteforce(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!(mi.nats.abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_table() {
        // p(0,0)=1/4, p(0,1)=1/4, p(1,1)=1/2; marginals a=(1/2,1/2), b=(1/4,3/4)
        let expected = 0.25 * (0.25f64 / (0.5 * 0.25)).ln()
            + 0.25 * (0.25f64 / (0.5 * 0.75)).ln()
            + 0.5 * (0.5f64 / (0.5 * 0.75)).ln();
        let mi = discrete_mi_bruteforce(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert!((mi.nats - expected).abs() < 1e-12);
        assert!((mi.nats - 0.2158).abs() < 1e-4);
    }

    #[test]
    fn single_class_flags_degenerate() {
        let mi = discrete_mi_bruteforce(&[1, 1, 1], &[0, 1, 0]).unwrap();
        assert_eq!(mi, DiscreteMi { nats: 0.0, degenerate: true });
        assert!(discrete_mi_bruteforce(&[], &[]).is_err());
    }
}
