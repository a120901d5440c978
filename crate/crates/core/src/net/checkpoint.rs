//! Self-describing checkpoint container.
//!
//! Byte layout:
//!
//! ```text
//! offset  size  content
//! 0       8     magic "MIXDIFF1"
//! 8       8     header length H, u64 little-endian
//! 16      H     UTF-8 JSON header (see `CheckpointHeader`)
//! 16+H    8·P   raw parameters, f64 little-endian, in `tensors` order
//! ...     8·P   EMA parameters, same layout, present iff `has_ema`
//! ```
//!
//! `P` is `param_count` from the header. Trailing bytes are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::SdeParams;

use super::mlp::{MlpScoreModel, ModelSpec};

pub const MAGIC: &[u8; 8] = b"MIXDIFF1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub k: usize,
    pub n: usize,
    pub model: ModelSpec,
    pub sde: SdeParams,
    pub ema_decay: f64,
    pub train_seed: u64,
    pub train_steps: u64,
    /// Audio rate the model is meant for, if any.
    pub sample_rate: Option<u32>,
    pub param_count: usize,
    pub has_ema: bool,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpScoreModel,
    pub ema: Option<Vec<f64>>,
    pub ema_decay: f64,
    pub train_seed: u64,
    pub train_steps: u64,
    pub sample_rate: Option<u32>,
}

impl Checkpoint {
    pub fn new(model: MlpScoreModel) -> Self {
        Self {
            model,
            ema: None,
            ema_decay: 0.0,
            train_seed: 0,
            train_steps: 0,
            sample_rate: None,
        }
    }

    /// The model to sample with: EMA weights when present.
    pub fn score_model(&self) -> MlpScoreModel {
        let mut m = self.model.clone();
        if let Some(ema) = &self.ema {
            m.params_mut().copy_from_slice(ema);
        }
        m
    }

    pub fn header(&self) -> CheckpointHeader {
        let spec = &self.model.spec;
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            k: spec.k,
            n: spec.n,
            model: spec.clone(),
            sde: self.model.sde,
            ema_decay: self.ema_decay,
            train_seed: self.train_seed,
            train_steps: self.train_steps,
            sample_rate: self.sample_rate,
            param_count: self.model.param_count(),
            has_ema: self.ema.is_some(),
            tensors: spec
                .tensor_layout()
                .into_iter()
                .map(|(name, shape)| TensorInfo { name, shape })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if let Some(ema) = &self.ema {
            if ema.len() != self.model.param_count() {
                return Err(Error::Checkpoint("EMA buffer length differs from parameter count".into()));
            }
        }
        let header = serde_json::to_vec(&self.header())?;
        let mut out = Vec::with_capacity(16 + header.len() + 16 * self.model.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let tail = self.ema.iter().flatten();
        for v in self.model.params().iter().chain(tail) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(16))
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file size"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                header.format_version
            )));
        }
        if header.model.k != header.k || header.model.n != header.n || header.sde.k != header.k || header.sde.n != header.n {
            return Err(bad("inconsistent K / N in header"));
        }
        if header.model.param_count() != header.param_count {
            return Err(bad("parameter count does not match the layer spec"));
        }
        header.sde.validate()?;
        let copies = if header.has_ema { 2 } else { 1 };
        let payload = &bytes[header_end..];
        if payload.len() != copies * 8 * header.param_count {
            return Err(Error::Checkpoint(format!(
                "expected {} payload bytes, found {}",
                copies * 8 * header.param_count,
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let params: Vec<f64> = values.by_ref().take(header.param_count).collect();
        let ema = header.has_ema.then(|| values.collect());
        Ok(Self {
            model: MlpScoreModel::from_params(header.model, header.sde, params)?,
            ema,
            ema_decay: header.ema_decay,
            train_seed: header.train_seed,
            train_steps: header.train_steps,
            sample_rate: header.sample_rate,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn checkpoint(hidden: Vec<usize>, seed: u64, with_ema: bool) -> Checkpoint {
        let p = SdeParams::new(2, 3);
        let m = MlpScoreModel::new(ModelSpec::new(2, 3, hidden), p, seed).unwrap();
        let ema = with_ema.then(|| m.params().iter().map(|v| v * 0.5 - 1e-300).collect());
        Checkpoint {
            model: m,
            ema,
            ema_decay: 0.999,
            train_seed: seed,
            train_steps: 42,
            sample_rate: Some(8000),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for with_ema in [false, true] {
            let ck = checkpoint(vec![5, 4], 3, with_ema);
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(back.model.params()), bits(ck.model.params()));
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = checkpoint(vec![3], 1, true).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
        let mut huge = bytes;
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(Checkpoint::from_bytes(&huge).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = checkpoint(vec![4, 4], 9, true);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert_eq!(ck.score_model().params(), ck.ema.as_deref().unwrap());
    }

    proptest! {
        #[test]
        fn arbitrary_parameter_values_survive(values in proptest::collection::vec(any::<f64>(), 41)) {
            let p = SdeParams::new(2, 3);
            let mut spec = ModelSpec::new(2, 3, vec![]);
            spec.linear_skip = false;
            let count = spec.param_count();
            let params: Vec<f64> = values.iter().cycle().take(count).copied().collect();
            let ck = Checkpoint::new(MlpScoreModel::from_params(spec, p, params.clone()).unwrap());
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.model.params()), bits(&params));
        }
    }
}
