//! JSON model file.
//!
//! ```text
//! { format_version: 1,
//!   arch: { input_len, input_channels, block_channels[4], kernel_size, num_classes },
//!   params: { "<tensor>": { shape: [...], values: [...] }, ... },
//!   bn_running: { "block{b}.bn.running_mean" | "block{b}.bn.running_var": { shape, values } },
//!   train_meta: { seed, epochs_run, best_val_acc } }
//! ```
//!
//! Floats are written with the shortest decimal that parses back to the same
//! bits, so a saved model reproduces its outputs exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::TrainError;
use crate::nn::{Architecture, BatchNormLayer, CnnModel, ConvBlock, ConvLayer, DenseLayer};
use crate::trajectory::write_atomic;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_val_acc: f64,
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u64,
    arch: Architecture,
    params: BTreeMap<String, TensorRecord>,
    bn_running: BTreeMap<String, TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_meta: Option<TrainMeta>,
}

fn record(shape: Vec<usize>, values: &[f64]) -> TensorRecord {
    TensorRecord {
        shape,
        values: values.to_vec(),
    }
}

pub fn model_to_json(model: &CnnModel, meta: Option<&TrainMeta>) -> String {
    let params = model
        .param_infos()
        .into_iter()
        .zip(model.params())
        .map(|(info, values)| (info.name, record(info.shape, values)))
        .collect();
    let mut bn_running = BTreeMap::new();
    for (b, block) in model.blocks().iter().enumerate() {
        let ch = block.bn.channels();
        bn_running.insert(
            format!("block{}.bn.running_mean", b + 1),
            record(vec![ch], &block.bn.running_mean),
        );
        bn_running.insert(
            format!("block{}.bn.running_var", b + 1),
            record(vec![ch], &block.bn.running_var),
        );
    }
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        arch: *model.arch(),
        params,
        bn_running,
        train_meta: meta.cloned(),
    };
    serde_json::to_string(&file).expect("model serializes")
}

pub fn save_model(model: &CnnModel, path: &Path, meta: Option<&TrainMeta>) -> Result<(), TrainError> {
    write_atomic(path, model_to_json(model, meta).as_bytes()).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<CnnModel, TrainError> {
    load_model_with_meta(path).map(|(m, _)| m)
}

pub fn load_model_with_meta(path: &Path) -> Result<(CnnModel, Option<TrainMeta>), TrainError> {
    let text = fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    model_from_json(&text)
}

fn take(
    map: &mut BTreeMap<String, TensorRecord>,
    name: &str,
    shape: &[usize],
) -> Result<Vec<f64>, TrainError> {
    let rec = map
        .remove(name)
        .ok_or_else(|| TrainError::CorruptModelFile(format!("missing tensor `{name}`")))?;
    let want: usize = shape.iter().product();
    if rec.shape != shape || rec.values.len() != want {
        return Err(TrainError::CorruptModelFile(format!(
            "tensor `{name}` has shape {:?} with {} values, expected shape {shape:?} ({want} values)",
            rec.shape,
            rec.values.len()
        )));
    }
    Ok(rec.values)
}

pub(crate) fn model_from_json(text: &str) -> Result<(CnnModel, Option<TrainMeta>), TrainError> {
    let raw: Value = serde_json::from_str(text)
        .map_err(|e| TrainError::CorruptModelFile(format!("not JSON: {e}")))?;
    match raw.get("format_version") {
        Some(v) if v.as_u64() == Some(FORMAT_VERSION) => {}
        other => {
            return Err(TrainError::SchemaVersionMismatch {
                found: other.map_or_else(|| "none".into(), Value::to_string),
            })
        }
    }
    let mut file: ModelFile = serde_json::from_value(raw)
        .map_err(|e| TrainError::CorruptModelFile(e.to_string()))?;
    let arch = file.arch;
    arch.validate()
        .map_err(|e| TrainError::CorruptModelFile(e.to_string()))?;
    let k = arch.kernel_size;
    let mut blocks = Vec::new();
    let mut cin = arch.input_channels;
    for (b, &cout) in arch.block_channels.iter().enumerate() {
        let name = |s: &str| format!("block{}.{s}", b + 1);
        let params = &mut file.params;
        let conv = |params: &mut BTreeMap<String, TensorRecord>, tag: &str, i: usize| {
            let weight = take(params, &name(&format!("{tag}.kernel")), &[k, i, cout])?;
            let bias = take(params, &name(&format!("{tag}.bias")), &[cout])?;
            ConvLayer::from_parts(k, i, cout, weight, bias).map_err(TrainError::from)
        };
        let conv1 = conv(params, "conv1", cin)?;
        let conv2 = conv(params, "conv2", cout)?;
        let mut bn = BatchNormLayer::new(cout);
        bn.gamma = take(params, &name("bn.gamma"), &[cout])?;
        bn.beta = take(params, &name("bn.beta"), &[cout])?;
        bn.running_mean = take(&mut file.bn_running, &name("bn.running_mean"), &[cout])?;
        bn.running_var = take(&mut file.bn_running, &name("bn.running_var"), &[cout])?;
        if bn.running_var.iter().any(|&v| v < 0.0) {
            return Err(TrainError::CorruptModelFile(format!(
                "tensor `{}` has negative entries",
                name("bn.running_var")
            )));
        }
        blocks.push(ConvBlock { conv1, conv2, bn });
        cin = cout;
    }
    let weight = take(&mut file.params, "head.weight", &[cin, arch.num_classes])?;
    let bias = take(&mut file.params, "head.bias", &[arch.num_classes])?;
    let head = DenseLayer::from_parts(cin, arch.num_classes, weight, bias)?;
    if let Some(extra) = file.params.keys().chain(file.bn_running.keys()).next() {
        return Err(TrainError::CorruptModelFile(format!("unexpected tensor `{extra}`")));
    }
    let model = CnnModel::from_parts(arch, blocks, head)
        .map_err(|e| TrainError::CorruptModelFile(e.to_string()))?;
    Ok((model, file.train_meta))
}
