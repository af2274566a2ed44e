//! Checkpoint archives: a `manifest.json` describing every tensor plus a
//! flat little-endian `weights.bin`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{param_hash, Encoder, ModelConfig, Parameters, Skeleton2Vec, Tensor};
use crate::optim::AdamW;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const CHECKPOINT_VERSION: u32 = 1;

const STUDENT: &str = "student";
const TEACHER: &str = "teacher";
const MOMENT_1: &str = "optim.m";
const MOMENT_2: &str = "optim.v";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into `weights.bin`.
    pub offset: u64,
}

impl TensorEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scalar optimizer state; the moment buffers live in `weights.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub model: ModelConfig,
    pub teacher_hash: String,
    pub optimizer: Option<OptimizerMeta>,
    /// Training configuration, progress and anything else the writer wants
    /// to carry along.
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointManifest {
    pub fn total_bytes(&self) -> u64 {
        self.tensors.iter().map(|t| t.len() as u64 * 4).sum()
    }

    /// Parameter count per top-level group (`student`, `teacher`, `optim`).
    pub fn group_sizes(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for t in &self.tensors {
            let group = t.name.split('.').next().unwrap_or_default();
            match out.iter_mut().find(|(g, _)| g == group) {
                Some((_, n)) => *n += t.len(),
                None => out.push((group.to_string(), t.len())),
            }
        }
        out
    }
}

/// Student, teacher and optional optimizer state of a pretraining run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub student: Skeleton2Vec<f32>,
    pub teacher: Encoder<f32>,
    pub optimizer: Option<AdamW<f32>>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn teacher_hash(&self) -> String {
        param_hash(&self.teacher)
    }

    fn entries(&self) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
        let mut out = Vec::new();
        let mut add = |prefix: &str, tensors: Vec<Tensor<'_, f32>>| {
            for t in tensors {
                out.push((format!("{prefix}.{}", t.name), t.shape, t.data.to_vec()));
            }
        };
        let student = self.student.tensors();
        if let Some(opt) = &self.optimizer {
            if opt.m.len() != student.len() || opt.v.len() != student.len() {
                return Err(Error::TreeMismatch(format!(
                    "optimizer tracks {} tensors, student has {}",
                    opt.m.len(),
                    student.len()
                )));
            }
        }
        let shapes: Vec<_> = student.iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
        add(STUDENT, student);
        add(TEACHER, self.teacher.tensors());
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [(MOMENT_1, &opt.m), (MOMENT_2, &opt.v)] {
                for ((name, shape), data) in shapes.iter().zip(moments) {
                    if data.len() != shape.iter().product::<usize>() {
                        return Err(Error::TreeMismatch(format!("{prefix}.{name} has {} values", data.len())));
                    }
                    out.push((format!("{prefix}.{name}"), shape.clone(), data.clone()));
                }
            }
        }
        Ok(out)
    }

    /// Writes the archive into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<CheckpointManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors = Vec::new();
        let mut bytes = Vec::new();
        for (name, shape, data) in self.entries()? {
            tensors.push(TensorEntry {
                name,
                shape,
                dtype: "f32".into(),
                offset: bytes.len() as u64,
            });
            for x in data {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        let manifest = CheckpointManifest {
            version: CHECKPOINT_VERSION,
            model: self.model.clone(),
            teacher_hash: self.teacher_hash(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerMeta {
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                weight_decay: o.weight_decay,
                t: o.t,
            }),
            metadata: self.metadata.clone(),
            tensors,
        };
        write_atomic(&dir.join(WEIGHTS_FILE), &bytes)?;
        write_atomic(
            &dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )?;
        Ok(manifest)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn load_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load {
        path: PathBuf::from(path),
        reason: reason.into(),
    }
}

/// Reads and sanity-checks `manifest.json` without touching the weights.
pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| load_error(&path, format!("malformed manifest: {e}")))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(load_error(&path, format!("unsupported version {}", manifest.version)));
    }
    manifest.model.validate().map_err(|e| load_error(&path, e.to_string()))?;
    if let Some(t) = manifest.tensors.iter().find(|t| t.dtype != "f32") {
        return Err(load_error(&path, format!("{} has unsupported dtype {}", t.name, t.dtype)));
    }
    Ok(manifest)
}

/// Loads an archive written by [`Checkpoint::save`].
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest = read_manifest(dir)?;
    let weights_path = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&weights_path).map_err(|e| Error::io(&weights_path, e))?;
    if manifest.total_bytes() != bytes.len() as u64 {
        return Err(Error::Shape(format!(
            "{}: manifest declares {} bytes but file has {}",
            weights_path.display(),
            manifest.total_bytes(),
            bytes.len()
        )));
    }
    let mut table: HashMap<&str, &TensorEntry> = HashMap::new();
    for t in &manifest.tensors {
        if table.insert(t.name.as_str(), t).is_some() {
            return Err(load_error(&weights_path, format!("duplicate tensor {}", t.name)));
        }
    }
    let mut used = 0usize;
    let mut fetch = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let entry = table
            .get(name)
            .ok_or_else(|| load_error(&weights_path, format!("missing tensor {name}")))?;
        if entry.shape != shape {
            return Err(Error::Shape(format!(
                "{name}: checkpoint shape {:?}, model expects {shape:?}",
                entry.shape
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.len() * 4;
        if end > bytes.len() {
            return Err(Error::Shape(format!("{name} spans past the end of the weights file")));
        }
        used += 1;
        Ok(bytes[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut student = Skeleton2Vec::<f32>::init(&manifest.model, &mut rng)?;
    let mut teacher = Encoder::<f32>::init(&manifest.model, &mut rng);
    for t in student.tensors_mut() {
        let values = fetch(&format!("{STUDENT}.{}", t.name), &t.shape)?;
        t.data.copy_from_slice(&values);
    }
    for t in teacher.tensors_mut() {
        let values = fetch(&format!("{TEACHER}.{}", t.name), &t.shape)?;
        t.data.copy_from_slice(&values);
    }
    let optimizer = match &manifest.optimizer {
        None => None,
        Some(meta) => {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for t in student.tensors() {
                m.push(fetch(&format!("{MOMENT_1}.{}", t.name), &t.shape)?);
                v.push(fetch(&format!("{MOMENT_2}.{}", t.name), &t.shape)?);
            }
            Some(AdamW {
                beta1: meta.beta1,
                beta2: meta.beta2,
                eps: meta.eps,
                weight_decay: meta.weight_decay,
                t: meta.t,
                m,
                v,
            })
        }
    };
    if used != manifest.tensors.len() {
        return Err(load_error(
            &weights_path,
            format!("{} tensors in the archive are not part of the model", manifest.tensors.len() - used),
        ));
    }
    let ckpt = Checkpoint {
        model: manifest.model,
        student,
        teacher,
        optimizer,
        metadata: manifest.metadata,
    };
    if ckpt.teacher_hash() != manifest.teacher_hash {
        return Err(load_error(&weights_path, "teacher weights do not match the recorded hash"));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Pass;

    fn sample(with_optimizer: bool) -> Checkpoint {
        let model = ModelConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let student = Skeleton2Vec::<f32>::init(&model, &mut rng).unwrap();
        let teacher = Encoder::<f32>::init(&model, &mut rng);
        let mut optimizer = with_optimizer.then(|| AdamW::new(&student, (0.9, 0.95), 0.05));
        if let Some(o) = &mut optimizer {
            o.t = 7;
            o.m[3][1] = 0.25;
            o.v[0][0] = 1e-9;
        }
        Checkpoint {
            model,
            student,
            teacher,
            optimizer,
            metadata: serde_json::json!({"epoch": 3}),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = sample(true);
        let manifest = ckpt.save(dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(read_manifest(dir.path()).unwrap(), manifest);
        let groups = manifest.group_sizes();
        assert_eq!(groups[0], ("student".into(), ckpt.student.num_params()));
        assert_eq!(groups[1], ("teacher".into(), ckpt.teacher.num_params()));
    }

    #[test]
    fn offsets_are_contiguous_in_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = sample(false).save(dir.path()).unwrap();
        let mut next = 0;
        for t in &manifest.tensors {
            assert_eq!(t.offset, next);
            next += t.len() as u64 * 4;
        }
        assert_eq!(fs::metadata(dir.path().join(WEIGHTS_FILE)).unwrap().len(), next);
    }

    #[test]
    fn loaded_teacher_produces_identical_features() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = sample(false);
        ckpt.save(dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        let x = ndarray::Array2::from_shape_fn((ckpt.model.tokens(), ckpt.model.token_inputs()), |(i, j)| {
            ((i * 7 + j) % 11) as f32 * 0.1
        });
        let a = ckpt.teacher.encode_full(x.view(), None, &mut Pass::inference()).unwrap().out;
        let b = back.teacher.encode_full(x.view(), None, &mut Pass::inference()).unwrap().out;
        assert_eq!(a, b);
    }

    #[test]
    fn corrupted_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        sample(false).save(dir.path()).unwrap();
        let path = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Load { .. })));
        bytes.truncate(n - 4);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Shape(_))));
    }

    #[test]
    fn missing_tensor_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = sample(false).save(dir.path()).unwrap();
        let dropped = manifest.tensors.remove(0);
        fs::write(
            dir.path().join(MANIFEST_FILE),
            serde_json::to_string(&manifest).unwrap(),
        )
        .unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("bytes") || err.to_string().contains(&dropped.name));
    }
}
