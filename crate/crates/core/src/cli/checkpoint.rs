//! Binary tensor container used for model checkpoints and embedding banks.
//!
//! Layout, all integers little-endian:
//!   magic  b"CARP"
//!   version u16          (currently 1)
//!   tensor_count u32
//!   per tensor:
//!     name_len u16, name UTF-8
//!     rank u8, dims rank x u32
//!     dtype u8              (0 = f32, 1 = f64)
//!     payload               (product(dims) elements, little-endian)
//!
//! The writer always emits f64, so save/load round-trips are bitwise; the
//! reader also accepts f32 payloads and widens them.

use std::fs;
use std::path::Path;

use crate::error::CarpError;
use crate::eval::EmbeddingBank;
use crate::model::{LinearLayer, ModelParams};
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"CARP";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: &str, dims: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "tensor {name}: dims do not match payload length"
        );
        NamedTensor { name: name.to_string(), dims, data }
    }

    fn from_matrix(name: &str, m: &Matrix) -> Self {
        NamedTensor::new(name, vec![m.rows(), m.cols()], m.data().to_vec())
    }

    fn to_matrix(&self) -> Result<Matrix, CarpError> {
        if self.dims.len() != 2 {
            return Err(CarpError::Checkpoint(format!(
                "tensor {} has rank {}, expected a matrix",
                self.name,
                self.dims.len()
            )));
        }
        Ok(Matrix::from_vec(self.dims[0], self.dims[1], self.data.clone()))
    }
}

pub fn write_tensors(path: &Path, tensors: &[NamedTensor]) -> Result<(), CarpError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(tensors.len()).unwrap().to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        out.extend_from_slice(&u16::try_from(name.len()).unwrap().to_le_bytes());
        out.extend_from_slice(name);
        out.push(u8::try_from(t.dims.len()).unwrap());
        for &d in &t.dims {
            out.extend_from_slice(&u32::try_from(d).unwrap().to_le_bytes());
        }
        out.push(1); // dtype f64
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<Vec<NamedTensor>, CarpError> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CarpError::Checkpoint(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(CarpError::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name_bytes = r.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| CarpError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")? as usize);
        }
        let count: usize = dims.iter().product();
        let dtype = r.take(1, "dtype")?[0];
        let data = match dtype {
            0 => {
                let raw = r.take(4 * count, &format!("payload of {name}"))?;
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect()
            }
            1 => {
                let raw = r.take(8 * count, &format!("payload of {name}"))?;
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
            }
            other => {
                return Err(CarpError::Checkpoint(format!(
                    "tensor {name} has unknown dtype code {other}"
                )))
            }
        };
        tensors.push(NamedTensor { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(CarpError::Checkpoint(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CarpError> {
        if self.pos + n > self.bytes.len() {
            return Err(CarpError::Checkpoint(format!("file truncated reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, CarpError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, CarpError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Model tensor names: `encoder.N.weight` / `encoder.N.bias` with N counting
/// from 0, the same for `projector`, and `prototypes`.
pub fn save_model(path: &Path, params: &ModelParams) -> Result<(), CarpError> {
    let mut tensors = Vec::new();
    for (group, layers) in [("encoder", &params.encoder), ("projector", &params.projector)] {
        for (i, layer) in layers.iter().enumerate() {
            tensors.push(NamedTensor::from_matrix(&format!("{group}.{i}.weight"), &layer.weight));
            tensors.push(NamedTensor::new(
                &format!("{group}.{i}.bias"),
                vec![layer.bias.len()],
                layer.bias.clone(),
            ));
        }
    }
    tensors.push(NamedTensor::from_matrix("prototypes", &params.prototypes));
    write_tensors(path, &tensors)
}

pub fn load_model(path: &Path) -> Result<ModelParams, CarpError> {
    let tensors = read_tensors(path)?;
    let find = |name: &str| tensors.iter().find(|t| t.name == name);
    let layer_stack = |group: &str| -> Result<Vec<LinearLayer>, CarpError> {
        let mut layers = Vec::new();
        for i in 0.. {
            let (Some(w), Some(b)) =
                (find(&format!("{group}.{i}.weight")), find(&format!("{group}.{i}.bias")))
            else {
                // A weight without its bias (or vice versa) is a broken file.
                if find(&format!("{group}.{i}.weight")).is_some()
                    || find(&format!("{group}.{i}.bias")).is_some()
                {
                    return Err(CarpError::Checkpoint(format!(
                        "layer {group}.{i} is missing its weight or bias"
                    )));
                }
                break;
            };
            let weight = w.to_matrix()?;
            if b.dims.len() != 1 || b.dims[0] != weight.cols() {
                return Err(CarpError::Checkpoint(format!(
                    "tensor {group}.{i}.bias has shape {:?}, expected [{}]",
                    b.dims,
                    weight.cols()
                )));
            }
            layers.push(LinearLayer { weight, bias: b.data.clone() });
        }
        Ok(layers)
    };
    let encoder = layer_stack("encoder")?;
    let projector = layer_stack("projector")?;
    if projector.is_empty() {
        return Err(CarpError::Checkpoint("missing tensor projector.0.weight".into()));
    }
    let prototypes = find("prototypes")
        .ok_or_else(|| CarpError::Checkpoint("missing tensor prototypes".into()))?
        .to_matrix()?;
    // Widths must chain input -> ... -> embedding, and prototypes live in
    // the embedding space.
    let chain: Vec<&LinearLayer> = encoder.iter().chain(&projector).collect();
    for pair in chain.windows(2) {
        if pair[0].out_dim() != pair[1].in_dim() {
            return Err(CarpError::Checkpoint(format!(
                "layer widths do not chain: {} feeds {}",
                pair[0].out_dim(),
                pair[1].in_dim()
            )));
        }
    }
    if prototypes.cols() != chain.last().unwrap().out_dim() {
        return Err(CarpError::Checkpoint(format!(
            "prototypes have width {} but the embedding is {}-dimensional",
            prototypes.cols(),
            chain.last().unwrap().out_dim()
        )));
    }
    Ok(ModelParams { encoder, projector, prototypes })
}

/// Banks reuse the container with tensors `features` [M x d], `labels` [M]
/// (stored as f64 and exact up to 2^53), and `num_classes` [1].
pub fn save_bank(path: &Path, bank: &EmbeddingBank) -> Result<(), CarpError> {
    let labels: Vec<f64> = bank.labels().iter().map(|&l| l as f64).collect();
    let tensors = vec![
        NamedTensor::from_matrix("features", bank.features()),
        NamedTensor::new("labels", vec![labels.len()], labels),
        NamedTensor::new("num_classes", vec![1], vec![bank.num_classes() as f64]),
    ];
    write_tensors(path, &tensors)
}

pub fn load_bank(path: &Path) -> Result<EmbeddingBank, CarpError> {
    let tensors = read_tensors(path)?;
    let find = |name: &str| {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CarpError::Checkpoint(format!("missing tensor {name}")))
    };
    let features = find("features")?.to_matrix()?;
    let label_tensor = find("labels")?;
    let labels: Vec<usize> = label_tensor.data.iter().map(|&v| v as usize).collect();
    EmbeddingBank::new(features, labels)
}
