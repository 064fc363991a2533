//! Checkpoint directories: one safetensors file per parameter group plus the
//! model config, tokenizer and template config needed to rebuild a model.
//!
//! ```text
//! <dir>/model.json          dtype + ModelConfig
//! <dir>/encoder.safetensors
//! <dir>/adaptor.safetensors
//! <dir>/llm.safetensors
//! <dir>/tokenizer.json
//! <dir>/template.toml
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::error::CheckpointError;
use crate::model::{ModelConfig, SpeechLm};
use crate::params::ParamGroup;
use crate::tokens::{TemplateConfig, Tokenizer};
use crate::{Float, Mat, Scalar};

pub const MODEL_FILE: &str = "model.json";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const TEMPLATE_FILE: &str = "template.toml";

fn group_file(group: ParamGroup) -> String {
    format!("{}.safetensors", group.name())
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    dtype: String,
    config: ModelConfig,
}

/// Everything needed to run or resume a model.
pub struct Bundle<F: Float> {
    pub model: SpeechLm<F>,
    pub tokenizer: Tokenizer,
    pub template: TemplateConfig,
}

impl<F: Float> Bundle<F> {
    pub fn save(&self, dir: &Path) -> Result<(), CheckpointError> {
        save(&self.model, &self.tokenizer, &self.template, dir)
    }

    pub fn load(dir: &Path) -> Result<Self, CheckpointError> {
        restore(dir)
    }
}

fn dtype_tag(d: Dtype) -> Option<&'static str> {
    match d {
        Dtype::F32 => Some("F32"),
        Dtype::F64 => Some("F64"),
        _ => None,
    }
}

fn dtype_of<F: Float>() -> Dtype {
    if F::DTYPE == "F32" {
        Dtype::F32
    } else {
        Dtype::F64
    }
}

fn format_err(e: impl std::fmt::Display) -> CheckpointError {
    CheckpointError::Format(e.to_string())
}

/// Writes `model`, `tokenizer` and `template` under `dir`, creating it.
pub fn save<F: Float>(
    model: &SpeechLm<F>,
    tokenizer: &Tokenizer,
    template: &TemplateConfig,
    dir: &Path,
) -> Result<(), CheckpointError> {
    if tokenizer.vocab_size() != model.vocab_size() {
        return Err(CheckpointError::Incompatible(format!(
            "tokenizer has {} ids, model vocabulary is {}",
            tokenizer.vocab_size(),
            model.vocab_size()
        )));
    }
    fs::create_dir_all(dir)?;
    let header = ModelFile { dtype: F::DTYPE.to_string(), config: model.config().clone() };
    fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&header).map_err(format_err)?)?;
    for group in ParamGroup::ALL {
        let params = model.group_params(group);
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = params
            .iter()
            .map(|(name, m)| {
                let mut buf = Vec::with_capacity(m.len() * F::BYTES);
                for &v in m.iter() {
                    v.write_le(&mut buf);
                }
                (name.clone(), vec![m.nrows(), m.ncols()], buf)
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(name, shape, buf)| {
                TensorView::new(dtype_of::<F>(), shape.clone(), buf)
                    .map(|v| (name.clone(), v))
                    .map_err(format_err)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let blob = safetensors::serialize(views, &None).map_err(format_err)?;
        fs::write(dir.join(group_file(group)), blob)?;
    }
    tokenizer.save(&dir.join(TOKENIZER_FILE))?;
    fs::write(dir.join(TEMPLATE_FILE), template.to_toml())?;
    Ok(())
}

/// Reads the model config stored in a checkpoint.
pub fn read_config(dir: &Path) -> Result<ModelConfig, CheckpointError> {
    let path = dir.join(MODEL_FILE);
    if !path.is_file() {
        return Err(CheckpointError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no checkpoint at {}", dir.display()),
        )));
    }
    let header: ModelFile = serde_json::from_str(&fs::read_to_string(path)?).map_err(format_err)?;
    Ok(header.config)
}

/// Rebuilds the full bundle from `dir`. Tensors stored at another precision
/// are converted.
pub fn restore<F: Float>(dir: &Path) -> Result<Bundle<F>, CheckpointError> {
    let config = read_config(dir)?;
    let mut model = SpeechLm::new(config).map_err(|e| CheckpointError::Incompatible(e.to_string()))?;
    load_groups(&mut model, dir, &ParamGroup::ALL)?;
    let tokenizer = Tokenizer::load(&dir.join(TOKENIZER_FILE))?;
    if tokenizer.vocab_size() != model.vocab_size() {
        return Err(CheckpointError::Incompatible(format!(
            "tokenizer has {} ids, model vocabulary is {}",
            tokenizer.vocab_size(),
            model.vocab_size()
        )));
    }
    let template =
        TemplateConfig::from_toml_str(&fs::read_to_string(dir.join(TEMPLATE_FILE))?).map_err(format_err)?;
    Ok(Bundle { model, tokenizer, template })
}

/// Overwrites the parameters of `groups` in an existing model with the
/// tensors in `dir`. Every name and shape must match the model exactly;
/// on error the model is left untouched.
pub fn load_groups<F: Float>(
    model: &mut SpeechLm<F>,
    dir: &Path,
    groups: &[ParamGroup],
) -> Result<(), CheckpointError> {
    let mut loaded: HashMap<String, Mat<F>> = HashMap::new();
    for &group in groups {
        let path = dir.join(group_file(group));
        let bytes = fs::read(&path)?;
        let st = SafeTensors::deserialize(&bytes).map_err(format_err)?;
        let expected = model.group_params(group);
        if st.len() != expected.len() {
            return Err(CheckpointError::Incompatible(format!(
                "{} holds {} tensors, model expects {}",
                path.display(),
                st.len(),
                expected.len()
            )));
        }
        for (name, want) in expected {
            let view = st
                .tensor(&name)
                .map_err(|_| CheckpointError::Incompatible(format!("missing tensor {name}")))?;
            let shape = view.shape();
            if shape != [want.nrows(), want.ncols()] {
                return Err(CheckpointError::Incompatible(format!(
                    "{name}: stored shape {shape:?}, model expects [{}, {}]",
                    want.nrows(),
                    want.ncols()
                )));
            }
            loaded.insert(name, decode::<F>(&view, (shape[0], shape[1]))?);
        }
    }
    for (name, param) in model.params_mut() {
        if let Some(m) = loaded.remove(&name) {
            *param = m;
        }
    }
    Ok(())
}

fn decode<F: Float>(view: &TensorView<'_>, shape: (usize, usize)) -> Result<Mat<F>, CheckpointError> {
    let data = view.data();
    let values: Vec<F> = match dtype_tag(view.dtype()) {
        Some("F32") => data.chunks_exact(4).map(|c| F::lit(f32::read_le(c) as f64)).collect(),
        Some("F64") => data.chunks_exact(8).map(|c| F::lit(f64::read_le(c))).collect(),
        _ => return Err(format_err(format!("unsupported dtype {:?}", view.dtype()))),
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(format_err("non-finite parameter value"));
    }
    Mat::from_shape_vec(shape, values).map_err(format_err)
}

/// Checks that every tensor in `dir` agrees with the stored config, without
/// keeping the model. Returns the number of parameters.
pub fn verify(dir: &Path) -> Result<usize, CheckpointError> {
    let bundle = restore::<f32>(dir)?;
    Ok(bundle.model.num_params())
}
