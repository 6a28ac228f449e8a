use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Labelled samples of a common input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub provenance: String,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    /// Non-fatal issues noticed while loading (e.g. trailing bytes in an IDX file).
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        num_classes: usize,
        inputs: Vec<Tensor>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Data(format!(
                "label {l} of sample {i} is outside [0, {num_classes})"
            )));
        }
        if let Some(i) = inputs
            .iter()
            .position(|x| x.shape() != input_shape.as_slice())
        {
            return Err(Error::dimension(
                format!("sample {i}"),
                format!("{input_shape:?}"),
                format!("{:?}", inputs[i].shape()),
            ));
        }
        if let Some(i) = inputs.iter().position(|x| !x.all_finite()) {
            return Err(Error::Data(format!(
                "sample {i} contains non-finite values"
            )));
        }
        Ok(Dataset {
            name: name.into(),
            provenance: String::new(),
            input_shape,
            num_classes,
            inputs,
            labels,
            warnings: Vec::new(),
        })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, usize)> + '_ {
        self.inputs.iter().zip(self.labels.iter().copied())
    }

    pub(crate) fn ensure_nonempty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Data(format!(
                "{what}: dataset `{}` is empty",
                self.name
            )));
        }
        Ok(())
    }

    /// The samples at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            provenance: self.provenance.clone(),
            input_shape: self.input_shape.clone(),
            num_classes: self.num_classes,
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            warnings: self.warnings.clone(),
        }
    }

    /// Seeded random subset of `n` samples in their original order; the whole set if `n >= len`.
    pub fn subsample(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = index::sample(&mut rng, self.len(), n).into_vec();
        picked.sort_unstable();
        self.select(&picked)
    }

    /// Splits off the first `n` samples.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }
}
