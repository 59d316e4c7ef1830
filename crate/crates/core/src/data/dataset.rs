use std::path::Path;

use rand::seq::SliceRandom;

use super::rng::stream;
use crate::error::{Error, Result};
use crate::snapshot::Snapshot;
use crate::tensor::Tensor;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Label rows are distributions over classes.
    Classification,
    /// One real target per sample.
    Regression,
}

/// Samples as an `n x d` feature matrix in `[0, 1]` and an `n x c` label
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Tensor,
    task: Task,
    source: String,
    seed: u64,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Tensor, task: Task, source: impl Into<String>, seed: u64) -> Result<Self> {
        let (n, _) = features.dims2().ok_or_else(|| Error::Format("features must be a matrix".into()))?;
        let (m, c) = labels.dims2().ok_or_else(|| Error::Format("labels must be a matrix".into()))?;
        if n != m {
            return Err(Error::Format(format!("{n} feature rows but {m} label rows")));
        }
        if let Some(x) = features.data().iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Format(format!("feature value {x} outside [0, 1]")));
        }
        match task {
            Task::Classification => {
                for i in 0..n {
                    let row = labels.row(i);
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|&y| y < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
                        return Err(Error::Format(format!("label row {i} is not a distribution")));
                    }
                }
            }
            Task::Regression => {
                if c != 1 || !labels.all_finite() {
                    return Err(Error::Format("regression targets must be one finite column".into()));
                }
            }
        }
        Ok(Dataset { features, labels, task, source: source.into(), seed })
    }

    /// Builds a classification set from integer class labels.
    pub fn from_classes(
        features: Tensor,
        classes: &[usize],
        num_classes: usize,
        source: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        let labels = one_hot(classes, num_classes)?;
        Self::new(features, labels, Task::Classification, source, seed)
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn label_dim(&self) -> usize {
        self.labels.shape()[1]
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Argmax class of sample `i` (first maximum on ties).
    pub fn class_of(&self, i: usize) -> usize {
        argmax(self.labels.row(i))
    }

    /// Rows `[features | labels]` as one `n x (d + c)` matrix.
    pub fn joined(&self) -> Tensor {
        let (n, d, c) = (self.len(), self.feature_dim(), self.label_dim());
        let mut out = Vec::with_capacity(n * (d + c));
        for i in 0..n {
            out.extend_from_slice(self.features.row(i));
            out.extend_from_slice(self.labels.row(i));
        }
        Tensor::new(vec![n, d + c], out).expect("shape matches")
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let (d, c) = (self.feature_dim(), self.label_dim());
        let mut f = Vec::with_capacity(indices.len() * d);
        let mut l = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::config(format!("sample index {i} out of range")));
            }
            f.extend_from_slice(self.features.row(i));
            l.extend_from_slice(self.labels.row(i));
        }
        Ok(Dataset {
            features: Tensor::new(vec![indices.len(), d], f)?,
            labels: Tensor::new(vec![indices.len(), c], l)?,
            task: self.task,
            source: self.source.clone(),
            seed: self.seed,
        })
    }

    /// Replaces the first rows with `rows`, given as `[features | labels]`.
    pub fn with_leading_rows(&self, rows: &Tensor) -> Result<Self> {
        let (d, c) = (self.feature_dim(), self.label_dim());
        let (m, w) = rows.dims2().ok_or_else(|| Error::shape("with_leading_rows", "expects a matrix"))?;
        if w != d + c || m > self.len() {
            return Err(Error::shape("with_leading_rows", format!("[{m}, {w}] into {}x{}", self.len(), d + c)));
        }
        let mut f = self.features.clone();
        let mut l = self.labels.clone();
        for i in 0..m {
            let r = rows.row(i);
            f.data_mut()[i * d..(i + 1) * d].copy_from_slice(&r[..d]);
            l.data_mut()[i * c..(i + 1) * c].copy_from_slice(&r[d..]);
        }
        Self::new(f, l, self.task, format!("{}+modified", self.source), self.seed)
    }

    pub fn to_snapshot(&self) -> Snapshot {
        let mut s = Snapshot {
            t: 0,
            tensors: vec![("features".into(), self.features.clone()), ("labels".into(), self.labels.clone())],
            ..Default::default()
        };
        s.meta.insert("source".into(), self.source.clone());
        s.meta.insert("seed".into(), self.seed.to_string());
        let task = match self.task {
            Task::Classification => "classification",
            Task::Regression => "regression",
        };
        s.meta.insert("task".into(), task.into());
        s
    }

    pub fn from_snapshot(s: &Snapshot) -> Result<Self> {
        let get = |k: &str| s.get(k).cloned().ok_or_else(|| Error::Format(format!("missing tensor {k}")));
        let task = match s.meta.get("task").map(String::as_str) {
            Some("classification") => Task::Classification,
            Some("regression") => Task::Regression,
            other => return Err(Error::Format(format!("unknown task {other:?}"))),
        };
        let seed =
            s.meta.get("seed").and_then(|v| v.parse().ok()).ok_or_else(|| Error::Format("missing seed".into()))?;
        let source = s.meta.get("source").cloned().unwrap_or_default();
        Self::new(get("features")?, get("labels")?, task, source, seed)
    }

    /// Writes the dataset; returns the file's sha256.
    pub fn save(&self, path: &Path) -> Result<String> {
        self.to_snapshot().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_snapshot(&Snapshot::read(path)?)
    }
}

pub(crate) fn one_hot(classes: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut l = vec![0.0; classes.len() * num_classes];
    for (i, &k) in classes.iter().enumerate() {
        if k >= num_classes {
            return Err(Error::Format(format!("class {k} out of range {num_classes}")));
        }
        l[i * num_classes + k] = 1.0;
    }
    Tensor::new(vec![classes.len(), num_classes], l)
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = j;
        }
    }
    best
}

/// Index sets of a random partition. Sizes are `floor(f * n)`; the
/// remainder goes to the first part.
pub fn split_indices(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() {
        return Err(Error::config("split needs at least one fraction"));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::config(format!("split fraction {f} outside [0, 1]")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions sum to {total}, not 1")));
    }
    let mut sizes: Vec<usize> = fractions.iter().map(|f| (f * n as f64).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    sizes[0] += n.saturating_sub(assigned);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, "split"));
    let mut out = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for s in sizes {
        out.push(perm[at..at + s].to_vec());
        at += s;
    }
    Ok(out)
}

pub fn split(ds: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    split_indices(ds.len(), fractions, seed)?.iter().map(|ix| ds.subset(ix)).collect()
}
