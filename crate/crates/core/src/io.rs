//! On-disk formats: JSON-lines datasets, JSON checkpoints, key=value training
//! configs and mask files. Every write goes through a temporary file in the
//! target directory followed by a rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::masking::MaskSpec;
use crate::model::{Discriminator, Generator, ModelConfig, Parameterized};
use crate::scheduler::Mode;
use crate::sequence::{Mask, Sequence};
use crate::simulator::BilliardsConfig;
use crate::training::{Normalization, Objective, TrainConfig, TrainedModel};
use crate::Rng;

pub const CHECKPOINT_FORMAT: &str = "naomi-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: String,
    #[serde(rename = "T")]
    pub len: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulator: Option<BilliardsConfig>,
    /// Free-form provenance, e.g. the imputation method.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub info: BTreeMap<String, Value>,
}

impl DatasetMeta {
    pub fn new(len: usize, dim: usize) -> Self {
        DatasetMeta {
            kind: "meta".into(),
            len,
            dim,
            normalization: None,
            simulator: None,
            info: BTreeMap::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    pub values: Sequence,
    pub mask: Option<Mask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub meta: DatasetMeta,
    pub records: Vec<Record>,
}

impl DatasetFile {
    pub fn new(meta: DatasetMeta) -> Self {
        DatasetFile {
            meta,
            records: Vec::new(),
        }
    }

    /// Wraps sequences with ids `0, 1, ...`.
    pub fn from_sequences(meta: DatasetMeta, sequences: Vec<Sequence>) -> Result<Self> {
        let mut file = DatasetFile::new(meta);
        for (i, s) in sequences.into_iter().enumerate() {
            file.push(Record {
                id: i.to_string(),
                values: s,
                mask: None,
            })?;
        }
        Ok(file)
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        let (len, dim) = (self.meta.len, self.meta.dim);
        if record.values.len() != len || record.values.dim() != dim {
            return Err(Error::Data(format!(
                "record {:?} is {}x{}, file declares {len}x{dim}",
                record.id,
                record.values.len(),
                record.values.dim()
            )));
        }
        if let Some(m) = &record.mask {
            if m.len() != len {
                return Err(Error::Data(format!(
                    "record {:?} has a mask of length {}, expected {len}",
                    record.id,
                    m.len()
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn sequences(&self) -> Vec<Sequence> {
        self.records.iter().map(|r| r.values.clone()).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.meta)?;
        out.push('\n');
        for r in &self.records {
            if !r.values.is_finite() {
                return Err(Error::Numerical(format!("record {:?} holds non-finite values", r.id)));
            }
            let line = RecordLine {
                id: r.id.clone(),
                values: r.values.to_rows(),
                mask: r.mask.as_ref().map(|m| m.bits().iter().map(|&b| u8::from(b)).collect()),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines
            .next()
            .ok_or_else(|| Error::Data("dataset file is empty".into()))?;
        let meta: DatasetMeta = serde_json::from_str(head)
            .map_err(|e| Error::Data(format!("line 1: bad metadata: {e}")))?;
        if meta.kind != "meta" {
            return Err(Error::Data(format!(
                "line 1: expected kind \"meta\", found {:?}",
                meta.kind
            )));
        }
        let mut file = DatasetFile::new(meta);
        for (n, line) in lines {
            let rec: RecordLine = serde_json::from_str(line)
                .map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
            let values = Sequence::from_rows(&rec.values)
                .map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
            let mask = match rec.mask {
                None => None,
                Some(bits) => {
                    if bits.iter().any(|&b| b > 1) {
                        return Err(Error::Data(format!("line {}: mask entries must be 0 or 1", n + 1)));
                    }
                    Some(Mask::new(bits.iter().map(|&b| b == 1).collect()))
                }
            };
            file.push(Record {
                id: rec.id,
                values,
                mask,
            })
            .map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
        }
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }
}

/// Serialized model: hyperparameters plus every tensor by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub hyperparameters: ModelConfig,
    pub normalization: Normalization,
    pub generator: BTreeMap<String, Tensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator: Option<BTreeMap<String, Tensor>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainConfig>,
}

fn tensors(model: &dyn Parameterized) -> BTreeMap<String, Tensor> {
    model.named_tensors().into_iter().collect()
}

fn load_into(model: &mut dyn Parameterized, section: &str, saved: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut result = Ok(());
    let mut seen = 0;
    model.visit_mut("", &mut |name, tensor| {
        if result.is_err() {
            return;
        }
        match saved.get(&name) {
            None => result = Err(Error::Data(format!("{section} tensor {name} missing from checkpoint"))),
            Some(t) => {
                let declared: usize = t.shape().iter().product();
                if t.shape() != tensor.shape() || declared != t.data().len() {
                    result = Err(Error::Data(format!(
                        "{section} tensor {name}: expected shape {:?}, found {:?} with {} values",
                        tensor.shape(),
                        t.shape(),
                        t.data().len()
                    )));
                } else {
                    tensor.data_mut().copy_from_slice(t.data());
                    seen += 1;
                }
            }
        }
    });
    result?;
    if seen != saved.len() {
        let known: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        let extra: Vec<&String> = saved.keys().filter(|k| !known.contains(k)).collect();
        return Err(Error::Data(format!("unexpected {section} tensors in checkpoint: {extra:?}")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel, training: Option<&TrainConfig>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            hyperparameters: model.generator.config.clone(),
            normalization: model.normalization.clone(),
            generator: tensors(&model.generator),
            discriminator: model.discriminator.as_ref().map(|d| tensors(d)),
            training: training.cloned(),
        }
    }

    pub fn to_model(&self) -> Result<TrainedModel> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let config = self.hyperparameters.clone();
        if self.normalization.dim() != config.dim {
            return Err(Error::Data("normalization does not match model dimension".into()));
        }
        // placeholder weights, all overwritten below
        let mut generator = Generator::new(config.clone(), &mut Rng::seed_from_u64(0))?;
        load_into(&mut generator, "generator", &self.generator)?;
        let discriminator = match &self.discriminator {
            None => None,
            Some(saved) => {
                let mut d = Discriminator::zeros(config.dim, config.discriminator_hidden);
                load_into(&mut d, "discriminator", saved)?;
                Some(d)
            }
        };
        Ok(TrainedModel {
            generator,
            discriminator,
            normalization: self.normalization.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let all_finite = self
            .generator
            .values()
            .chain(self.discriminator.iter().flat_map(|d| d.values()))
            .all(|t| t.data().iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::Numerical("checkpoint holds non-finite parameters".into()));
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("bad checkpoint: {e}")))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }
}

/// Keys accepted in a training config file.
pub const CONFIG_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate_generator",
    "learning_rate_discriminator",
    "beta1",
    "beta2",
    "epsilon",
    "objective",
    "mask_spec",
    "keep_first",
    "keep_last",
    "seed",
    "resolutions",
    "hidden_size",
    "decoder_hidden",
    "discriminator_hidden",
];

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

/// Sets one named field of `config`.
pub fn apply_setting(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "epochs" => config.epochs = parse_value(key, value)?,
        "batch_size" => config.batch_size = parse_value(key, value)?,
        "learning_rate_generator" => config.learning_rate_generator = parse_value(key, value)?,
        "learning_rate_discriminator" => {
            config.learning_rate_discriminator = parse_value(key, value)?
        }
        "beta1" => config.beta1 = parse_value(key, value)?,
        "beta2" => config.beta2 = parse_value(key, value)?,
        "epsilon" => config.epsilon = parse_value(key, value)?,
        "objective" => config.objective = value.parse::<Objective>()?,
        "mask_spec" => {
            let spec: MaskSpec = value.parse()?;
            config.mask_spec = MaskSpec {
                keep_first: config.mask_spec.keep_first,
                keep_last: config.mask_spec.keep_last,
                ..spec
            };
        }
        "keep_first" => config.mask_spec.keep_first = parse_value(key, value)?,
        "keep_last" => config.mask_spec.keep_last = parse_value(key, value)?,
        "seed" => config.seed = parse_value(key, value)?,
        "resolutions" => {
            config.resolutions = if value == "auto" {
                None
            } else {
                Some(parse_value(key, value)?)
            }
        }
        "hidden_size" => config.hidden_size = parse_value(key, value)?,
        "decoder_hidden" => config.decoder_hidden = parse_value(key, value)?,
        "discriminator_hidden" => config.discriminator_hidden = parse_value(key, value)?,
        _ => {
            return Err(Error::Config(format!(
                "unknown config key {key:?}; valid keys: {}",
                CONFIG_KEYS.join(", ")
            )))
        }
    }
    Ok(())
}

/// Applies every line of a config file on top of `base`.
pub fn parse_train_config(text: &str, base: TrainConfig) -> Result<TrainConfig> {
    let mut config = base;
    for (k, v) in parse_key_values(text)? {
        apply_setting(&mut config, &k, &v)?;
    }
    Ok(config)
}

/// One `0`/`1` string per line.
pub fn parse_masks(text: &str) -> Result<Vec<Mask>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::parse)
        .collect()
}

pub fn read_masks(path: impl AsRef<Path>) -> Result<Vec<Mask>> {
    parse_masks(&read_text(path)?)
}

pub fn write_masks(path: impl AsRef<Path>, masks: &[Mask]) -> Result<()> {
    let text: String = masks.iter().map(|m| format!("{m}\n")).collect();
    write_atomic(path, text.as_bytes())
}

/// Scheduler mode recorded by a checkpoint's training config, if any.
pub fn checkpoint_mode(checkpoint: &Checkpoint) -> Mode {
    checkpoint
        .training
        .as_ref()
        .map_or(Mode::Standard, TrainConfig::mode)
}
