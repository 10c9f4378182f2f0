//! Binary checkpoint container.
//!
//! ```text
//! offset   size  field
//! 0        8     magic b"DSPPCKPT"
//! 8        4     format version, u32 little-endian (currently 1)
//! 12       4     header length H, u32 little-endian
//! 16       H     UTF-8 JSON header
//! 16 + H   ...   payload: for each header section, `len` f64 little-endian values
//! ```
//!
//! The header is `{"metadata": <object>, "sections": [{"name", "spec", "len"}, ...]}`
//! where `spec` is the network spec for network sections and `null` for plain
//! vectors (optimizer moments and the like). Payload blocks appear in section order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{MlpModel, MlpSpec};
use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 8] = b"DSPPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub spec: Option<MlpSpec>,
    pub values: Vec<f64>,
}

impl Section {
    pub fn network<T: Scalar>(name: &str, model: &MlpModel<T>) -> Self {
        Self {
            name: name.to_owned(),
            spec: Some(*model.spec()),
            values: model.params().iter().map(|p| p.as_f64()).collect(),
        }
    }

    pub fn vector<T: Scalar>(name: &str, values: &[T]) -> Self {
        Self {
            name: name.to_owned(),
            spec: None,
            values: values.iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn to_network<T: Scalar>(&self) -> Result<MlpModel<T>> {
        let spec = self
            .spec
            .ok_or_else(|| Error::Checkpoint(format!("section `{}` has no network spec", self.name)))?;
        MlpModel::from_params(spec, self.values.iter().map(|&v| T::lit(v)).collect())
    }

    pub fn to_vector<T: Scalar>(&self) -> Vec<T> {
        self.values.iter().map(|&v| T::lit(v)).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct SectionHeader {
    name: String,
    spec: Option<MlpSpec>,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    sections: Vec<SectionHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            metadata,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Section> {
        self.section(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section `{name}`")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header {
            metadata: self.metadata.clone(),
            sections: self
                .sections
                .iter()
                .map(|s| SectionHeader {
                    name: s.name.clone(),
                    spec: s.spec,
                    len: s.values.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let len = u32::try_from(json.len())
            .map_err(|_| Error::Checkpoint("header too large".into()))?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&json)?;
        for s in &self.sections {
            for v in &s.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        r.read_exact(&mut word)?;
        let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut json)?;
        let header: Header =
            serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let mut sections = Vec::with_capacity(header.sections.len());
        let mut buf = [0u8; 8];
        for sh in header.sections {
            if let Some(spec) = sh.spec {
                if spec.param_count() != sh.len {
                    return Err(Error::Checkpoint(format!(
                        "section `{}` holds {} values but its spec needs {}",
                        sh.name,
                        sh.len,
                        spec.param_count()
                    )));
                }
            }
            let mut values = Vec::with_capacity(sh.len);
            for _ in 0..sh.len {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
            sections.push(Section {
                name: sh.name,
                spec: sh.spec,
                values,
            });
        }
        Ok(Self {
            metadata: header.metadata,
            sections,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
