//! Self-describing file container for checkpoints and processed datasets.
//!
//! A container is a JSON document holding a `kind` tag, a format version,
//! free-form metadata and a list of named `f64` arrays. Array payloads are
//! base64 of little-endian bytes, so values round-trip bit for bit. A
//! SHA-256 digest over the body guards against truncation and edits.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredArray {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct Body {
    kind: String,
    version: u32,
    meta: serde_json::Value,
    arrays: Vec<StoredArray>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    sha256: String,
    body: Body,
}

/// In-memory contents of a container file.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub arrays: Vec<(String, Tensor)>,
}

fn digest(body: &Body) -> Result<String> {
    let bytes = serde_json::to_vec(body).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Container {
            kind: kind.into(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.arrays.push((name.into(), value));
    }

    pub fn array(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("container has no array named {name:?}")))
    }

    /// Looks up `name` and checks its shape.
    pub fn array_with_shape(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.array(name)?;
        if t.shape() != shape {
            return Err(Error::Dimension(format!(
                "array {name:?} has shape {:?}, expected {:?}",
                t.shape(),
                shape
            )));
        }
        Ok(t)
    }

    pub fn encode(&self) -> Result<String> {
        let body = Body {
            kind: self.kind.clone(),
            version: FORMAT_VERSION,
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, t)| StoredArray {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    data: B64.encode(t.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()),
                })
                .collect(),
        };
        let env = Envelope {
            sha256: digest(&body)?,
            body,
        };
        serde_json::to_string(&env).map_err(|e| Error::Format(e.to_string()))
    }

    /// Parses and fully validates a container; `expected_kind` must match.
    pub fn decode(text: &str, expected_kind: &str) -> Result<Self> {
        let env: Envelope =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("malformed container: {e}")))?;
        if digest(&env.body)? != env.sha256 {
            return Err(Error::Format("container digest mismatch (file corrupted?)".into()));
        }
        let body = env.body;
        if body.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {} (expected {FORMAT_VERSION})",
                body.version
            )));
        }
        if body.kind != expected_kind {
            return Err(Error::Format(format!(
                "container holds a {:?}, expected a {expected_kind:?}",
                body.kind
            )));
        }
        let mut arrays = Vec::with_capacity(body.arrays.len());
        for a in body.arrays {
            let bytes = B64
                .decode(a.data.as_bytes())
                .map_err(|e| Error::Format(format!("array {:?}: {e}", a.name)))?;
            if bytes.len() % 8 != 0 {
                return Err(Error::Format(format!("array {:?}: truncated payload", a.name)));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(a.shape, data)
                .map_err(|e| Error::Format(format!("array {:?}: {e}", a.name)))?;
            if arrays.iter().any(|(n, _): &(String, Tensor)| n == &a.name) {
                return Err(Error::Format(format!("duplicate array {:?}", a.name)));
            }
            arrays.push((a.name, t));
        }
        Ok(Container {
            kind: body.kind,
            meta: body.meta,
            arrays,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, expected_kind: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Container::decode(&text, expected_kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new("test", serde_json::json!({"n": 3}));
        c.push("a", Tensor::matrix(2, 2, vec![0.1, -0.0, 1e-300, 7.5]).unwrap());
        c.push("s", Tensor::scalar(std::f64::consts::PI).unwrap());
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Container::decode(&c.encode().unwrap(), "test").unwrap();
        for ((n1, t1), (n2, t2)) in c.arrays.iter().zip(&back.arrays) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        assert_eq!(back.meta, c.meta);
    }

    #[test]
    fn metadata_floats_round_trip() {
        let vals: Vec<f64> = (1..200).map(|i| 39.9 + (i as f64 * 0.618_033_988_7).sin() * 0.3).collect();
        let c = Container::new("test", serde_json::json!({ "v": vals }));
        let back = Container::decode(&c.encode().unwrap(), "test").unwrap();
        assert_eq!(back.meta, c.meta);
    }

    #[test]
    fn corruption_is_rejected() {
        let text = sample().encode().unwrap();
        let tampered = text.replacen("\"n\":3", "\"n\":4", 1);
        assert_ne!(text, tampered);
        assert!(matches!(Container::decode(&tampered, "test"), Err(Error::Format(_))));
        assert!(matches!(Container::decode(&text[..text.len() / 2], "test"), Err(Error::Format(_))));
        assert!(matches!(Container::decode(&text, "other"), Err(Error::Format(_))));
    }

    #[test]
    fn shape_lookup_names_array() {
        let c = sample();
        let msg = c.array_with_shape("a", &[3, 3]).unwrap_err().to_string();
        assert!(msg.contains("\"a\""), "{msg}");
    }
}
