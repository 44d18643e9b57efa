//! Self-describing binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            4 bytes  "FQMK"
//! version          u32      currently 1
//! arch             u32 len + utf-8 layout descriptor
//! side             u32
//! num_classes      u32
//! fingerprint      u32 len + utf-8 (hash of the training configuration)
//! rng state        u64 seed, u64 stream, u128 word position
//! tensor count     u32      always the 8 parameter tensors, fixed order
//! per tensor       u32 name len + name, u32 ndim + u32 dims…, f32 data
//! adam flag        u8       0 = absent, 1 = present
//! if present       u64 step, then first-moment tensors, then second-moment
//! ```
//!
//! Serialization is byte-deterministic: equal checkpoints produce equal
//! files. Loading validates magic, version, tensor names, and shapes.

use std::io::{Cursor, Read};
use std::path::Path;

use super::model::{
    argmax, image_to_input, Net, NetShape, NetTensors, ShapeError, CONV1_OUT, CONV2_OUT, HIDDEN,
    KERNEL, TENSOR_NAMES,
};
use super::optim::AdamState;
use crate::data::ImageU8;
use crate::nn::loss::softmax;
use crate::oracle::{OracleError, PredictionOracle};

const MAGIC: &[u8; 4] = b"FQMK";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(String),
    #[error("tensor `{name}`: expected {expected:?}, found {found:?}")]
    TensorShape { name: String, expected: Vec<u32>, found: Vec<u32> },
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// A trained model at rest: parameters, optimizer state, and enough
/// metadata to reproduce or resume the run that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub side: usize,
    pub num_classes: usize,
    pub config_fingerprint: String,
    pub rng_state: (u64, u64, u128),
    pub params: NetTensors<f32>,
    pub adam: Option<AdamState<f32>>,
}

fn expected_dims(shape: &NetShape) -> [Vec<u32>; 8] {
    [
        vec![KERNEL as u32, KERNEL as u32, 3, CONV1_OUT as u32],
        vec![CONV1_OUT as u32],
        vec![KERNEL as u32, KERNEL as u32, CONV1_OUT as u32, CONV2_OUT as u32],
        vec![CONV2_OUT as u32],
        vec![shape.flat() as u32, HIDDEN as u32],
        vec![HIDDEN as u32],
        vec![HIDDEN as u32, shape.num_classes as u32],
        vec![shape.num_classes as u32],
    ]
}

impl Checkpoint {
    pub fn shape(&self) -> Result<NetShape, ShapeError> {
        NetShape::new(self.side, self.num_classes)
    }

    pub fn net(&self) -> Result<Net<f32>, ShapeError> {
        Ok(Net { shape: self.shape()?, params: self.params.clone() })
    }

    pub fn oracle(&self) -> Result<NetOracle, ShapeError> {
        Ok(NetOracle { net: self.net()? })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_str(&mut out, &self.arch);
        put_u32(&mut out, self.side as u32);
        put_u32(&mut out, self.num_classes as u32);
        put_str(&mut out, &self.config_fingerprint);
        out.extend_from_slice(&self.rng_state.0.to_le_bytes());
        out.extend_from_slice(&self.rng_state.1.to_le_bytes());
        out.extend_from_slice(&self.rng_state.2.to_le_bytes());
        let shape = NetShape { side: self.side, num_classes: self.num_classes };
        put_tensors(&mut out, &self.params, &shape);
        match &self.adam {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                out.extend_from_slice(&state.step.to_le_bytes());
                put_tensors(&mut out, &state.m, &shape);
                put_tensors(&mut out, &state.v, &shape);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::BadVersion(version));
        }
        let arch = get_str(&mut r)?;
        let side = get_u32(&mut r)? as usize;
        let num_classes = get_u32(&mut r)? as usize;
        let config_fingerprint = get_str(&mut r)?;
        let shape = NetShape::new(side, num_classes)?;
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let seed = u64::from_le_bytes(buf8);
        r.read_exact(&mut buf8)?;
        let stream = u64::from_le_bytes(buf8);
        let mut buf16 = [0u8; 16];
        r.read_exact(&mut buf16)?;
        let word_pos = u128::from_le_bytes(buf16);
        let params = get_tensors(&mut r, &shape)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let adam = match flag[0] {
            0 => None,
            1 => {
                r.read_exact(&mut buf8)?;
                let step = u64::from_le_bytes(buf8);
                let m = get_tensors(&mut r, &shape)?;
                let v = get_tensors(&mut r, &shape)?;
                Some(AdamState { step, m, v })
            }
            other => return Err(CheckpointError::Corrupt(format!("adam flag {other}"))),
        };
        if r.position() != bytes.len() as u64 {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() as u64 - r.position()
            )));
        }
        Ok(Self { arch, side, num_classes, config_fingerprint, rng_state: (seed, stream, word_pos), params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensors(out: &mut Vec<u8>, tensors: &NetTensors<f32>, shape: &NetShape) {
    put_u32(out, 8);
    let dims = expected_dims(shape);
    for ((name, field), dim) in TENSOR_NAMES.iter().zip(tensors.fields()).zip(dims) {
        put_str(out, name);
        put_u32(out, dim.len() as u32);
        for d in &dim {
            put_u32(out, *d);
        }
        for v in field.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn get_u32(r: &mut Cursor<&[u8]>) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn get_str(r: &mut Cursor<&[u8]>) -> Result<String, CheckpointError> {
    let len = get_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(CheckpointError::Corrupt(format!("string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Corrupt("non-utf8 string".into()))
}

fn get_tensors(r: &mut Cursor<&[u8]>, shape: &NetShape) -> Result<NetTensors<f32>, CheckpointError> {
    let count = get_u32(r)?;
    if count != 8 {
        return Err(CheckpointError::Corrupt(format!("tensor count {count}, expected 8")));
    }
    let mut tensors = NetTensors::<f32>::zeros(shape);
    let dims = expected_dims(shape);
    for ((name, field), expected) in TENSOR_NAMES.iter().zip(tensors.fields_mut()).zip(dims) {
        let found_name = get_str(r)?;
        if found_name != *name {
            return Err(CheckpointError::Corrupt(format!(
                "tensor `{found_name}` where `{name}` was expected"
            )));
        }
        let ndim = get_u32(r)? as usize;
        if ndim > 8 {
            return Err(CheckpointError::Corrupt(format!("tensor `{name}` rank {ndim}")));
        }
        let mut found = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            found.push(get_u32(r)?);
        }
        if found != expected {
            return Err(CheckpointError::TensorShape { name: name.to_string(), expected, found });
        }
        let mut buf = [0u8; 4];
        for v in field.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f32::from_le_bytes(buf);
        }
    }
    Ok(tensors)
}

/// In-process oracle over a checkpointed network. Queries at a different
/// resolution are bilinearly resized to the model's input side.
pub struct NetOracle {
    net: Net<f32>,
}

impl NetOracle {
    pub fn logits(&self, image: &ImageU8) -> Vec<f32> {
        let side = self.net.shape.side;
        let input = if image.height() == side && image.width() == side {
            image_to_input::<f32>(image)
        } else {
            image_to_input::<f32>(&image.resize_bilinear(side, side))
        };
        self.net.logits(&input)
    }
}

impl PredictionOracle for NetOracle {
    fn num_classes(&self) -> usize {
        self.net.shape.num_classes
    }

    fn predict(&self, image: &ImageU8) -> Result<usize, OracleError> {
        Ok(argmax(&self.logits(image)))
    }

    fn predict_soft(&self, image: &ImageU8) -> Result<Vec<f32>, OracleError> {
        Ok(softmax(&self.logits(image)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn sample_checkpoint() -> Checkpoint {
        let shape = NetShape::new(16, 3).unwrap();
        let mut rng = SeededRng::new(40);
        let net = Net::<f32>::init(shape, &mut rng);
        let mut adam = AdamState::new(&shape);
        adam.step = 17;
        adam.m.fc1_b[0] = 0.25;
        Checkpoint {
            arch: shape.arch_id(),
            side: 16,
            num_classes: 3,
            config_fingerprint: "cafe".into(),
            rng_state: (40, 7, 12345),
            params: net.params,
            adam: Some(adam),
        }
    }

    #[test]
    fn byte_roundtrip_is_exact_and_deterministic() {
        let ckpt = sample_checkpoint();
        let bytes = ckpt.to_bytes();
        assert_eq!(bytes, ckpt.to_bytes());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn adamless_checkpoint_roundtrip() {
        let mut ckpt = sample_checkpoint();
        ckpt.adam = None;
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert!(back.adam.is_none());
        assert_eq!(back, ckpt);
    }

    #[test]
    fn rejects_damage() {
        let ckpt = sample_checkpoint();
        let good = ckpt.to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(CheckpointError::BadMagic)));

        let mut bad_version = good.clone();
        bad_version[4] = 99;
        assert!(matches!(Checkpoint::from_bytes(&bad_version), Err(CheckpointError::BadVersion(99))));

        let truncated = &good[..good.len() - 5];
        assert!(Checkpoint::from_bytes(truncated).is_err());

        let mut trailing = good.clone();
        trailing.extend_from_slice(b"junk");
        assert!(matches!(Checkpoint::from_bytes(&trailing), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn rejects_shape_lies() {
        let ckpt = sample_checkpoint();
        let mut bytes = ckpt.to_bytes();
        // the `side` field sits right after magic, version, and the arch string
        let side_at = 4 + 4 + 4 + ckpt.arch.len();
        bytes[side_at..side_at + 4].copy_from_slice(&32u32.to_le_bytes());
        // now the declared fc1 dims won't match the recomputed shape
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::TensorShape { .. }) | Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn oracle_predicts_and_resizes() {
        let ckpt = sample_checkpoint();
        let oracle = ckpt.oracle().unwrap();
        assert_eq!(oracle.num_classes(), 3);
        let img = ImageU8::filled(16, 16, [120, 30, 200]);
        let label = oracle.predict(&img).unwrap();
        assert!(label < 3);
        let soft = oracle.predict_soft(&img).unwrap();
        assert_eq!(soft.len(), 3);
        let total: f32 = soft.iter().sum();
        assert!((total - 1.0).abs() < 1e-5);
        assert_eq!(argmax(&soft), label);
        // a larger query goes through the resize path and still answers
        let big = ImageU8::filled(32, 32, [120, 30, 200]);
        assert_eq!(oracle.predict(&big).unwrap(), label);
    }
}
