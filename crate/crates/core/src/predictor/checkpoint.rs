//! Versioned little-endian checkpoint file.
//!
//! ```text
//! magic "DSUMCKPT" | version u32 | config_len u32 | config text (key=value lines)
//! tensor_count u32
//! per tensor: name_len u16 | name | ndim u8 | dims u32 × ndim | data f64 × prod(dims)
//! has_optimizer u8
//! if set: step u64 | base_lr, weight_decay, beta1, beta2, epsilon f64
//!         first moments then second moments, f64, tensor order, no prefixes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{OptimizerState, Predictor, PredictorConfig, PredictorParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSUMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub predictor: Predictor,
    pub optimizer: Option<OptimizerState>,
}

fn config_text(config: &PredictorConfig) -> String {
    config
        .to_pairs()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

impl Checkpoint {
    pub fn new(predictor: Predictor, optimizer: Option<OptimizerState>) -> Self {
        Self { predictor, optimizer }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let text = config_text(&self.predictor.config);
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());

        let tensors = self.predictor.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in &tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for dim in &t.shape {
                out.extend_from_slice(&(*dim as u32).to_le_bytes());
            }
            for v in t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }

        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                out.extend_from_slice(&opt.step.to_le_bytes());
                for v in [opt.base_lr, opt.weight_decay, opt.beta1, opt.beta2, opt.epsilon] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for moments in [&opt.first_moment, &opt.second_moment] {
                    for tensor in moments {
                        for v in tensor {
                            out.extend_from_slice(&v.to_le_bytes());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint { message, .. } => Error::Checkpoint {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Loads and additionally requires the embedded config to equal `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &PredictorConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        let found = ckpt.predictor.config.to_pairs();
        for ((key, want), (_, got)) in expected.to_pairs().into_iter().zip(found) {
            if want != got {
                return Err(Error::ConfigMismatch {
                    key: key.to_string(),
                    expected: want,
                    found: got,
                });
            }
        }
        Ok(ckpt)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!(
                "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let text_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(text_len)?).map_err(|_| corrupt("config block is not UTF-8"))?;
        let mut pairs = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| corrupt(format!("malformed config line `{line}`")))?;
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        let config = PredictorConfig::from_pairs(&pairs)?;

        let mut params = PredictorParams::zeros(&config);
        let count = r.u32()? as usize;
        let expected_count = params.tensors().len();
        if count != expected_count {
            return Err(corrupt(format!(
                "file has {count} tensors, config implies {expected_count}"
            )));
        }
        let expected_shapes: Vec<(String, Vec<usize>)> =
            params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        for (view, (want_name, want_shape)) in params.tensors_mut().into_iter().zip(expected_shapes) {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            if name != want_name {
                return Err(corrupt(format!("expected tensor {want_name}, found {name}")));
            }
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != want_shape {
                return Err(corrupt(format!(
                    "tensor {name} has shape {shape:?}, config implies {want_shape:?}"
                )));
            }
            for slot in view.data.iter_mut() {
                *slot = r.f64()?;
            }
        }
        if !params.is_finite() {
            return Err(corrupt("parameters contain non-finite values"));
        }

        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let base_lr = r.f64()?;
                let weight_decay = r.f64()?;
                let sizes: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
                let mut opt = OptimizerState::with_sizes(&sizes, base_lr, weight_decay);
                opt.step = step;
                opt.beta1 = r.f64()?;
                opt.beta2 = r.f64()?;
                opt.epsilon = r.f64()?;
                for moments in [&mut opt.first_moment, &mut opt.second_moment] {
                    for tensor in moments.iter_mut() {
                        for slot in tensor.iter_mut() {
                            *slot = r.f64()?;
                        }
                    }
                }
                Some(opt)
            }
            other => return Err(corrupt(format!("invalid optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            predictor: Predictor::from_parts(config, params)?,
            optimizer,
        })
    }
}

fn corrupt(message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: Default::default(),
        message: message.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("truncated file"))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
}
