//! Model persistence as a versioned JSON document.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HmbError, Result};
use crate::training::ActivityModel;

pub const MODEL_FORMAT: &str = "hmb-activity-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize)]
struct EnvelopeOut<'a> {
    format: &'a str,
    version: u32,
    model: &'a ActivityModel,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    model: ActivityModel,
}

pub fn model_to_string(model: &ActivityModel) -> String {
    serde_json::to_string(&EnvelopeOut {
        format: MODEL_FORMAT,
        version: MODEL_VERSION,
        model,
    })
    .expect("model serializes")
}

pub fn model_from_str(s: &str) -> Result<ActivityModel> {
    let header: Header = serde_json::from_str(s).map_err(|e| HmbError::CorruptModel(e.to_string()))?;
    if header.format != MODEL_FORMAT {
        return Err(HmbError::CorruptModel(format!("unexpected format tag {:?}", header.format)));
    }
    if header.version != MODEL_VERSION {
        return Err(HmbError::ModelVersion {
            found: header.version,
            expected: MODEL_VERSION,
        });
    }
    let env: EnvelopeIn = serde_json::from_str(s).map_err(|e| HmbError::CorruptModel(e.to_string()))?;
    Ok(env.model)
}

pub fn save_model(model: &ActivityModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_string(model)).map_err(|e| HmbError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ActivityModel> {
    let path = path.as_ref();
    let s = fs::read_to_string(path).map_err(|e| HmbError::io(path, e))?;
    model_from_str(&s)
}
