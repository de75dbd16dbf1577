//! Binary container of named `f64` arrays.
//!
//! Layout: the 8-byte magic `DSSLCKP1`, the header length as a little-endian
//! `u64`, a UTF-8 JSON header, then every array's data as little-endian
//! `f64` in header order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Activation, Combine, Encoder, Mlp, ModelDims, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DSSLCKP1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("array `{0}` missing from checkpoint")]
    Missing(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    Kind { expected: String, found: String },
    #[error("array `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dssl,
    Gae,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Dssl => "dssl",
            ModelKind::Gae => "gae",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub k: usize,
    pub combine: Combine,
    pub projector_activation: Activation,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub arrays: Vec<ArrayInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub arrays: Vec<Tensor>,
}

/// SHA-256 of the compact JSON form of `config`, hex encoded.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("configs serialize");
    hex::encode(Sha256::digest(json))
}

fn named(prefix: &str, mlp: &Mlp) -> Vec<(String, Tensor)> {
    ["w1", "b1", "w2", "b2"]
        .iter()
        .zip([&mlp.w1, &mlp.b1, &mlp.w2, &mlp.b2])
        .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
        .collect()
}

fn encoder_named(prefix: &str, e: &Encoder) -> Vec<(String, Tensor)> {
    vec![(format!("{prefix}.w1"), e.w1.clone()), (format!("{prefix}.w2"), e.w2.clone())]
}

impl Checkpoint {
    fn build<C: Serialize>(
        kind: ModelKind,
        dims: ModelDims,
        combine: Combine,
        projector_activation: Activation,
        config: &C,
        arrays: Vec<(String, Tensor)>,
    ) -> Self {
        let (info, arrays): (Vec<_>, Vec<_>) = arrays
            .into_iter()
            .map(|(name, t)| {
                (
                    ArrayInfo {
                        name,
                        shape: t.shape().to_vec(),
                    },
                    t,
                )
            })
            .unzip();
        Self {
            header: CheckpointHeader {
                kind,
                dims,
                k: dims.k,
                combine,
                projector_activation,
                config: serde_json::to_value(config).expect("configs serialize"),
                config_hash: config_hash(config),
                arrays: info,
            },
            arrays,
        }
    }

    pub fn from_dssl<C: Serialize>(params: &ModelParams, config: &C) -> Self {
        let mut arrays = encoder_named("online", &params.online);
        arrays.extend(encoder_named("target", &params.target));
        arrays.extend(named("projector", &params.projector));
        arrays.extend(named("head", &params.head));
        arrays.push(("prototypes".into(), params.prototypes.clone()));
        Self::build(
            ModelKind::Dssl,
            params.dims,
            params.combine,
            params.projector.activation,
            config,
            arrays,
        )
    }

    /// GAE checkpoints carry only the encoder; `dims.k` is zero.
    pub fn from_gae<C: Serialize>(encoder: &Encoder, config: &C) -> Self {
        let dims = ModelDims {
            input: encoder.w1.rows(),
            hidden: encoder.w1.cols(),
            output: encoder.w2.cols(),
            k: 0,
            projector_hidden: 0,
            head_hidden: 0,
        };
        Self::build(
            ModelKind::Gae,
            dims,
            Combine::default(),
            Activation::default(),
            config,
            encoder_named("online", encoder),
        )
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.header
            .arrays
            .iter()
            .position(|a| a.name == name)
            .map(|i| &self.arrays[i])
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))
    }

    fn take(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self.get(name)?;
        if t.shape() != shape {
            return Err(CheckpointError::Shape {
                name: name.into(),
                expected: shape.to_vec(),
                found: t.shape().to_vec(),
            });
        }
        Ok(t.clone())
    }

    /// The encoder used for evaluation: the online network of either kind.
    pub fn encoder(&self) -> Result<Encoder> {
        let d = self.header.dims;
        Ok(Encoder {
            w1: self.take("online.w1", &[d.input, d.hidden])?,
            w2: self.take("online.w2", &[d.hidden, d.output])?,
        })
    }

    fn mlp(&self, prefix: &str, input: usize, hidden: usize, output: usize, activation: Activation) -> Result<Mlp> {
        Ok(Mlp {
            w1: self.take(&format!("{prefix}.w1"), &[input, hidden])?,
            b1: self.take(&format!("{prefix}.b1"), &[1, hidden])?,
            w2: self.take(&format!("{prefix}.w2"), &[hidden, output])?,
            b2: self.take(&format!("{prefix}.b2"), &[1, output])?,
            activation,
        })
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        if self.header.kind != ModelKind::Dssl {
            return Err(CheckpointError::Kind {
                expected: ModelKind::Dssl.to_string(),
                found: self.header.kind.to_string(),
            });
        }
        let d = self.header.dims;
        let head_in = match self.header.combine {
            Combine::Concat => 2 * d.output,
            Combine::Product => d.output,
        };
        Ok(ModelParams {
            dims: d,
            combine: self.header.combine,
            online: self.encoder()?,
            target: Encoder {
                w1: self.take("target.w1", &[d.input, d.hidden])?,
                w2: self.take("target.w2", &[d.hidden, d.output])?,
            },
            projector: self.mlp("projector", d.k, d.projector_hidden, d.output, self.header.projector_activation)?,
            head: self.mlp("head", head_in, d.head_hidden, d.k, Activation::Relu)?,
            prototypes: self.take("prototypes", &[d.k, d.output])?,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header).map_err(|e| CheckpointError::Header(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::new();
        for t in &self.arrays {
            buf.clear();
            buf.extend(t.data().iter().flat_map(|x| x.to_le_bytes()));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::Magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|e| CheckpointError::Header(e.to_string()))?;
        if len > 1 << 30 {
            return Err(CheckpointError::Header(format!("header length {len} is implausible")));
        }
        let mut header = vec![0u8; len];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for info in &header.arrays {
            let n: usize = info.shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            arrays.push(Tensor::from_parts(info.shape.clone(), data));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(CheckpointError::Header("trailing bytes after the last array".into()));
        }
        Ok(Self { header, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(io::BufReader::new(fs::File::open(path)?))
    }
}
