//! Model weight containers, the MWS file format, dataset manifests and
//! architecture matching.
//!
//! An MWS file is laid out as
//!
//! ```text
//! bytes 0..4       b"MWS1"
//! bytes 4..12      header length H, u64 little-endian
//! bytes 12..12+H   UTF-8 JSON header
//! bytes 12+H..     tensor data, f32 little-endian, row-major
//! ```
//!
//! The header is
//! `{"tensors":[{"name":..,"dtype":"f32","shape":[..],"offset":..,"nbytes":..}],"metadata":{..}}`
//! with offsets relative to the start of the data region. Offsets must be
//! ascending and contiguous; the writer never pads.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MWS1";
const PREFIX_LEN: u64 = 12;

/// Metadata key holding the architecture identifier.
pub const ARCH_KEY: &str = "architecture";

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let expected = shape.iter().product::<usize>();
        if shape.iter().any(|&d| d == 0) || data.len() != expected {
            return Err(Error::ShapeMismatch {
                name,
                len: data.len(),
                shape,
                expected,
            });
        }
        Ok(Self { name, shape, data })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite {
                name: self.name.clone(),
                index,
            }),
            None => Ok(()),
        }
    }
}

/// All parameter tensors of one model, in serialization order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelWeights {
    tensors: Vec<WeightTensor>,
    metadata: BTreeMap<String, String>,
}

impl ModelWeights {
    pub fn new(tensors: Vec<WeightTensor>, metadata: BTreeMap<String, String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(tensors.len());
        for t in &tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(Error::DuplicateTensor(t.name.clone()));
            }
        }
        Ok(Self { tensors, metadata })
    }

    pub fn tensors(&self) -> &[WeightTensor] {
        &self.tensors
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn architecture(&self) -> Option<&str> {
        self.metadata.get(ARCH_KEY).map(String::as_str)
    }

    pub fn tensor(&self, name: &str) -> Option<&WeightTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Looks up `spec.name` and checks that its shape matches.
    pub fn expect_tensor(&self, spec: &TensorSpec) -> Result<&WeightTensor> {
        let t = self
            .tensor(&spec.name)
            .ok_or_else(|| Error::MissingTensor(spec.name.clone()))?;
        if t.shape != spec.shape {
            return Err(Error::TensorShape {
                name: spec.name.clone(),
                expected: spec.shape.clone(),
                found: t.shape.clone(),
            });
        }
        Ok(t)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(WeightTensor::len).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<HeaderEntry>,
    metadata: BTreeMap<String, String>,
}

/// Encodes a model into the canonical MWS byte layout.
pub fn encode_model(model: &ModelWeights) -> Vec<u8> {
    let mut offset = 0u64;
    let entries = model
        .tensors
        .iter()
        .map(|t| {
            let nbytes = 4 * t.data.len() as u64;
            let e = HeaderEntry {
                name: t.name.clone(),
                dtype: "f32".into(),
                shape: t.shape.clone(),
                offset,
                nbytes,
            };
            offset += nbytes;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        tensors: entries,
        metadata: model.metadata.clone(),
    })
    .expect("header serialization cannot fail");

    let mut out = Vec::with_capacity(PREFIX_LEN as usize + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in &model.tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes MWS bytes, validating layout and finiteness.
pub fn decode_model(bytes: &[u8]) -> Result<ModelWeights> {
    let found = bytes.len() as u64;
    if found < PREFIX_LEN {
        if found >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(Error::Truncated {
            needed: PREFIX_LEN,
            found,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let data_start = PREFIX_LEN
        .checked_add(header_len)
        .ok_or_else(|| Error::MalformedHeader("header length overflows".into()))?;
    if found < data_start {
        return Err(Error::Truncated {
            needed: data_start,
            found,
        });
    }
    let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN as usize..data_start as usize])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;

    let data = &bytes[data_start as usize..];
    let mut expected_offset = 0u64;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        if entry.dtype != "f32" {
            return Err(Error::MalformedHeader(format!(
                "tensor `{}` has unsupported dtype `{}`",
                entry.name, entry.dtype
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::DataLayout {
                name: entry.name,
                expected: expected_offset,
                found: entry.offset,
            });
        }
        let count: usize = entry.shape.iter().product();
        if entry.nbytes != 4 * count as u64 {
            return Err(Error::MalformedHeader(format!(
                "tensor `{}` declares {} bytes for shape {:?}",
                entry.name, entry.nbytes, entry.shape
            )));
        }
        let end = entry.offset + entry.nbytes;
        if end > data.len() as u64 {
            return Err(Error::Truncated {
                needed: data_start + end,
                found,
            });
        }
        let values = data[entry.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = WeightTensor::new(entry.name, entry.shape, values)?;
        t.check_finite()?;
        tensors.push(t);
        expected_offset = end;
    }
    if expected_offset != data.len() as u64 {
        return Err(Error::TrailingBytes(data.len() as u64 - expected_offset));
    }
    ModelWeights::new(tensors, header.metadata)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

pub fn write_model(path: impl AsRef<Path>, model: &ModelWeights) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

/// One row of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub architecture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Manifest {
    pub models: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct RawEntry {
    id: String,
    path: String,
    architecture: String,
    #[serde(default)]
    label: Option<i64>,
}

#[derive(Deserialize)]
struct RawManifest {
    models: Vec<RawEntry>,
}

impl Manifest {
    pub fn new(models: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { models };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.models.len());
        for e in &self.models {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate model id `{}`", e.id)));
            }
            if let Some(l) = e.label {
                if l > 1 {
                    return Err(Error::InvalidLabel(l as i64));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawManifest = serde_json::from_str(text)?;
        let models = raw
            .models
            .into_iter()
            .map(|r| {
                let label = match r.label {
                    None => None,
                    Some(l @ (0 | 1)) => Some(l as u8),
                    Some(l) => return Err(Error::InvalidLabel(l)),
                };
                Ok(ManifestEntry {
                    id: r.id,
                    path: r.path,
                    architecture: r.architecture,
                    label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Manifest::new(models)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Labels of every entry; errors if any entry is unlabeled.
    pub fn labels(&self) -> Result<Vec<u8>> {
        self.models
            .iter()
            .map(|e| {
                e.label
                    .ok_or_else(|| Error::Manifest(format!("model `{}` has no label", e.id)))
            })
            .collect()
    }

    /// Sub-manifest with the given row indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Manifest {
        Manifest {
            models: indices.iter().map(|&i| self.models[i].clone()).collect(),
        }
    }

    /// Loads every model, resolving relative paths against `base_dir`.
    pub fn load_models(&self, base_dir: &Path) -> Result<Vec<ModelWeights>> {
        self.models
            .par_iter()
            .map(|e| read_model(resolve(base_dir, &e.path)))
            .collect()
    }
}

fn resolve(base_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Manifest::from_json(&text)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &Manifest) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    fs::write(path, manifest.to_json()).map_err(|e| Error::io(path, e))
}

/// Directory against which a manifest's relative model paths resolve.
pub fn manifest_dir(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// The (name, shape) pairs shared by every model of a comparison group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArchitectureSignature {
    pub tensors: Vec<TensorSpec>,
}

impl ArchitectureSignature {
    pub fn of(model: &ModelWeights) -> Self {
        Self {
            tensors: model
                .tensors
                .iter()
                .map(|t| TensorSpec {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|s| s.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|s| s.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|s| s.name.as_str())
    }

    /// Keeps only the named tensors, preserving signature order.
    pub fn restrict(&self, names: &[String]) -> Result<Self> {
        for n in names {
            if self.get(n).is_none() {
                return Err(Error::MissingTensor(n.clone()));
            }
        }
        Ok(Self {
            tensors: self
                .tensors
                .iter()
                .filter(|s| names.contains(&s.name))
                .cloned()
                .collect(),
        })
    }

    pub fn check(&self, model: &ModelWeights) -> Result<()> {
        self.tensors.iter().try_for_each(|s| model.expect_tensor(s).map(|_| ()))
    }

    pub fn num_features(&self) -> usize {
        self.tensors.iter().map(TensorSpec::numel).sum()
    }
}

/// Tensors present with an identical shape in every model, in the first
/// model's order. Tensors missing or resized anywhere are dropped.
pub fn common_architecture(models: &[ModelWeights]) -> Result<ArchitectureSignature> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("no models given".into()))?;
    let mut counts: HashMap<(&str, &[usize]), usize> = HashMap::new();
    for m in models {
        for t in &m.tensors {
            *counts.entry((t.name.as_str(), t.shape.as_slice())).or_default() += 1;
        }
    }
    let tensors: Vec<TensorSpec> = first
        .tensors
        .iter()
        .filter(|t| counts[&(t.name.as_str(), t.shape.as_slice())] == models.len())
        .map(|t| TensorSpec {
            name: t.name.clone(),
            shape: t.shape.clone(),
        })
        .collect();
    if tensors.is_empty() {
        return Err(Error::EmptySignature);
    }
    Ok(ArchitectureSignature { tensors })
}

/// Frobenius norm of every tensor, in tensor order.
pub fn frobenius_features(model: &ModelWeights) -> Vec<f64> {
    model
        .tensors
        .iter()
        .map(|t| t.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(name: &str, shape: Vec<usize>, data: Vec<f32>) -> WeightTensor {
        WeightTensor::new(name, shape, data).unwrap()
    }

    fn model(tensors: Vec<WeightTensor>) -> ModelWeights {
        ModelWeights::new(tensors, BTreeMap::new()).unwrap()
    }

    #[test]
    fn single_tensor_round_trip() {
        let m = model(vec![tensor("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])]);
        let back = decode_model(&encode_model(&m)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.tensors()[0].data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_model(&model(vec![]));
        bytes[3] = b'2';
        assert!(matches!(decode_model(&bytes), Err(Error::BadMagic(_))));
    }

    #[test]
    fn empty_model_is_valid() {
        let bytes = encode_model(&model(vec![]));
        let back = decode_model(&bytes).unwrap();
        assert!(back.tensors().is_empty());
    }

    #[test]
    fn data_region_length() {
        let m = model(vec![
            tensor("a", vec![2, 3], vec![0.0; 6]),
            tensor("b", vec![5], vec![1.0; 5]),
        ]);
        let bytes = encode_model(&m);
        let h = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 12 - h, 4 * 11);
    }

    #[test]
    fn truncated_file() {
        let m = model(vec![tensor("a", vec![4], vec![1.0; 4])]);
        let bytes = encode_model(&m);
        let err = decode_model(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
        assert!(matches!(decode_model(&bytes[..7]), Err(Error::Truncated { .. })));
    }

    fn with_header(header: &str, data: &[u8]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn gapped_and_overlapping_regions() {
        let data = [0u8; 16];
        let gap = r#"{"tensors":[{"name":"a","dtype":"f32","shape":[1],"offset":0,"nbytes":4},{"name":"b","dtype":"f32","shape":[1],"offset":8,"nbytes":4}],"metadata":{}}"#;
        assert!(matches!(
            decode_model(&with_header(gap, &data[..12])),
            Err(Error::DataLayout { .. })
        ));
        let overlap = r#"{"tensors":[{"name":"a","dtype":"f32","shape":[2],"offset":0,"nbytes":8},{"name":"b","dtype":"f32","shape":[1],"offset":4,"nbytes":4}],"metadata":{}}"#;
        assert!(matches!(
            decode_model(&with_header(overlap, &data[..12])),
            Err(Error::DataLayout { .. })
        ));
        let trailing = r#"{"tensors":[{"name":"a","dtype":"f32","shape":[1],"offset":0,"nbytes":4}],"metadata":{}}"#;
        assert!(matches!(
            decode_model(&with_header(trailing, &data[..8])),
            Err(Error::TrailingBytes(4))
        ));
    }

    #[test]
    fn malformed_header() {
        assert!(matches!(
            decode_model(&with_header("{not json", &[])),
            Err(Error::MalformedHeader(_))
        ));
        let dtype = r#"{"tensors":[{"name":"a","dtype":"f16","shape":[2],"offset":0,"nbytes":4}],"metadata":{}}"#;
        assert!(matches!(
            decode_model(&with_header(dtype, &[0; 4])),
            Err(Error::MalformedHeader(_))
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let m = model(vec![tensor("a", vec![3], vec![1.0, f32::NAN, 2.0])]);
        let err = decode_model(&encode_model(&m)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
        let m = model(vec![tensor("a", vec![1], vec![f32::INFINITY])]);
        assert!(decode_model(&encode_model(&m)).is_err());
    }

    #[test]
    fn duplicate_tensor_names() {
        let err = ModelWeights::new(
            vec![tensor("a", vec![1], vec![0.0]), tensor("a", vec![1], vec![1.0])],
            BTreeMap::new(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateTensor(_)));
    }

    #[test]
    fn shape_must_match_data() {
        assert!(WeightTensor::new("a", vec![2, 2], vec![0.0; 3]).is_err());
        assert!(WeightTensor::new("a", vec![0], vec![]).is_err());
    }

    #[test]
    fn manifest_parse_and_duplicates() {
        let text = r#"{"models":[{"id":"a","path":"a.mws","architecture":"fc3","label":0},{"id":"b","path":"b.mws","architecture":"fc3","label":1},{"id":"c","path":"c.mws","architecture":"fc3"}]}"#;
        let m = Manifest::from_json(text).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.models[1].label, Some(1));
        assert_eq!(m.models[2].label, None);
        assert!(m.labels().is_err());

        let dup = r#"{"models":[{"id":"a","path":"a","architecture":"x"},{"id":"a","path":"b","architecture":"x"}]}"#;
        assert!(matches!(Manifest::from_json(dup), Err(Error::Manifest(_))));
        let bad = r#"{"models":[{"id":"a","path":"a","architecture":"x","label":2}]}"#;
        assert!(matches!(Manifest::from_json(bad), Err(Error::InvalidLabel(2))));
    }

    #[test]
    fn signature_drops_resized_head() {
        let a = model(vec![
            tensor("fc1.weight", vec![4, 3], vec![0.0; 12]),
            tensor("head.weight", vec![5, 4], vec![0.0; 20]),
        ]);
        let b = model(vec![
            tensor("fc1.weight", vec![4, 3], vec![1.0; 12]),
            tensor("head.weight", vec![7, 4], vec![0.0; 28]),
        ]);
        let sig = common_architecture(&[a.clone(), b]).unwrap();
        assert_eq!(sig.names().collect::<Vec<_>>(), vec!["fc1.weight"]);
        assert_eq!(common_architecture(&[a.clone(), a.clone()]).unwrap(), ArchitectureSignature::of(&a));
    }

    #[test]
    fn signature_empty_intersection() {
        let a = model(vec![tensor("x", vec![1], vec![0.0])]);
        let b = model(vec![tensor("y", vec![1], vec![0.0])]);
        assert!(matches!(common_architecture(&[a, b]), Err(Error::EmptySignature)));
        assert!(common_architecture(&[]).is_err());
    }

    #[test]
    fn frobenius_basic() {
        let m = model(vec![
            tensor("a", vec![2], vec![3.0, 4.0]),
            tensor("z", vec![2, 2], vec![0.0; 4]),
        ]);
        assert_eq!(frobenius_features(&m), vec![5.0, 0.0]);
    }
}
