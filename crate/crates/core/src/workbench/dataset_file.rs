//! JSON dataset files: flat inputs plus labels and shape metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub format_version: u32,
    pub name: String,
    #[serde(default)]
    pub provenance: String,
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl DatasetFile {
    pub fn from_dataset(data: &Dataset, meta: serde_json::Value) -> Self {
        DatasetFile {
            format_version: DATASET_FORMAT_VERSION,
            name: data.name.clone(),
            provenance: data.provenance.clone(),
            input_shape: data.input_shape.clone(),
            num_classes: data.num_classes,
            inputs: data.inputs.iter().map(|x| x.data().to_vec()).collect(),
            labels: data.labels.clone(),
            meta,
        }
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        if self.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format_version {}, expected {DATASET_FORMAT_VERSION}",
                self.format_version
            )));
        }
        let inputs = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                Tensor::new(self.input_shape.clone(), x.clone())
                    .map_err(|e| Error::Format(format!("sample {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset::new(
            self.name.clone(),
            self.input_shape.clone(),
            self.num_classes,
            inputs,
            self.labels.clone(),
        )?
        .with_provenance(self.provenance.clone()))
    }
}

pub fn save_dataset(data: &Dataset, meta: serde_json::Value, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&DatasetFile::from_dataset(data, meta))
        .map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DatasetFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("malformed dataset file: {e}")))?;
    file.to_dataset()
}
