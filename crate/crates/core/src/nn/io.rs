use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerSpec, Params};
use crate::nn::model::{Domain, EpochRecord, ModelMeta, TensorModel};

#[derive(Serialize, Deserialize)]
struct ModelBody {
    name: String,
    domain: Domain,
    input_shape: Vec<usize>,
    class_count: usize,
    layers: Vec<LayerSpec>,
    history: Vec<EpochRecord>,
}

impl TensorModel {
    /// Serialize to the TLNS v1 model format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = ModelBody {
            name: self.meta.name.clone(),
            domain: self.meta.domain,
            input_shape: self.input_shape().to_vec(),
            class_count: self.class_count(),
            layers: self.layers().iter().map(|l| l.spec).collect(),
            history: self.meta.history.clone(),
        };
        let names: Vec<(String, String)> = (0..self.layers().len())
            .map(|i| (format!("layer{i}.weight"), format!("layer{i}.bias")))
            .collect();
        let mut tensors = Vec::new();
        for (layer, (wn, bn)) in self.layers().iter().zip(&names) {
            if let Some(p) = &layer.params {
                tensors.push((wn.as_str(), &p.weight));
                tensors.push((bn.as_str(), &p.bias));
            }
        }
        container::encode("model", &body, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut decoded = container::decode::<ModelBody>(bytes, "model")?;
        let specs = std::mem::take(&mut decoded.body.layers);
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let params = if spec.is_parameterized() {
                Some(Params {
                    weight: decoded.take(&format!("layer{i}.weight"))?,
                    bias: decoded.take(&format!("layer{i}.bias"))?,
                })
            } else {
                None
            };
            layers.push(Layer { spec, params });
        }
        if !decoded.tensors.is_empty() {
            return Err(Error::Format(format!(
                "unexpected tensor `{}` in model file",
                decoded.tensors[0].0
            )));
        }
        let body = decoded.body;
        TensorModel::from_parts(
            ModelMeta {
                name: body.name,
                domain: body.domain,
                history: body.history,
            },
            body.input_shape,
            body.class_count,
            layers,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
