use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::sequence::{SkeletonSequence, CHANNELS};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.bin";
pub const FORMAT_VERSION: u32 = 1;

/// Which protocol split a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub label: Option<usize>,
    pub subject_id: Option<u32>,
    pub view_id: Option<u32>,
    /// Frame count `T_s` of this record.
    pub length: usize,
    /// Byte offset into `data.bin`.
    pub offset: u64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub name: String,
    pub num_joints: usize,
    pub channels: usize,
    pub class_names: Vec<String>,
    pub records: Vec<SequenceRecord>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn record_bytes(&self, rec: &SequenceRecord) -> u64 {
        (rec.length * self.num_joints * self.channels * 4) as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != CHANNELS {
            return Err(Error::Shape(format!(
                "expected {CHANNELS} channels, manifest declares {}",
                self.channels
            )));
        }
        let mut seen = HashSet::new();
        for rec in &self.records {
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::Config(format!("duplicate record id {:?}", rec.id)));
            }
            if let Some(label) = rec.label {
                if label >= self.num_classes() {
                    return Err(Error::Config(format!(
                        "record {:?} has label {label} but only {} classes",
                        rec.id,
                        self.num_classes()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Manifest plus decoded sequences, in record order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub sequences: Vec<SkeletonSequence>,
}

impl Dataset {
    /// Builds a manifest for `sequences`, assigning offsets in order.
    pub fn from_sequences(
        name: impl Into<String>,
        class_names: Vec<String>,
        entries: Vec<(String, Split, SkeletonSequence)>,
    ) -> Result<Self> {
        let num_joints = entries.first().map_or(0, |(_, _, s)| s.joints());
        let mut offset = 0u64;
        let mut records = Vec::with_capacity(entries.len());
        let mut sequences = Vec::with_capacity(entries.len());
        for (id, split, seq) in entries {
            seq.validate()?;
            if seq.joints() != num_joints {
                return Err(Error::Shape(format!(
                    "record {id:?} has {} joints, expected {num_joints}",
                    seq.joints()
                )));
            }
            records.push(SequenceRecord {
                id,
                label: seq.label,
                subject_id: seq.subject_id,
                view_id: seq.view_id,
                length: seq.len(),
                offset,
                split,
            });
            offset += (seq.frames.len() * 4) as u64;
            sequences.push(seq);
        }
        let manifest = DatasetManifest {
            version: FORMAT_VERSION,
            name: name.into(),
            num_joints,
            channels: CHANNELS,
            class_names,
            records,
        };
        manifest.validate()?;
        Ok(Self {
            manifest,
            sequences,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes()
    }

    pub fn num_joints(&self) -> usize {
        self.manifest.num_joints
    }

    /// Indices of records in `split`, in record order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// A new dataset containing only `indices`, offsets renumbered.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let entries = indices
            .iter()
            .map(|&i| {
                let r = &self.manifest.records[i];
                (r.id.clone(), r.split, self.sequences[i].clone())
            })
            .collect();
        Self::from_sequences(
            self.manifest.name.clone(),
            self.manifest.class_names.clone(),
            entries,
        )
    }

    /// Concatenated little-endian f32 payload in record order.
    pub fn payload(&self) -> Vec<u8> {
        let total: usize = self.sequences.iter().map(|s| s.frames.len() * 4).sum();
        let mut out = Vec::with_capacity(total);
        for seq in &self.sequences {
            // frames are built in standard (frame, joint, channel) order
            for x in seq.frames.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Writes `manifest.json` and `data.bin` into `dir`, creating it.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
        let data_path = dir.join(DATA_FILE);
        fs::write(&data_path, self.payload()).map_err(|e| Error::io(&data_path, e))?;
        Ok(())
    }
}

fn load_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load {
        path: PathBuf::from(path),
        reason: reason.into(),
    }
}

/// Reads a dataset directory written by [`Dataset::save`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| load_error(&manifest_path, format!("malformed manifest: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(load_error(
            &manifest_path,
            format!("unsupported version {}", manifest.version),
        ));
    }
    manifest
        .validate()
        .map_err(|e| load_error(&manifest_path, e.to_string()))?;

    let data_path = dir.join(DATA_FILE);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let declared: u64 = manifest.records.iter().map(|r| manifest.record_bytes(r)).sum();
    if declared != bytes.len() as u64 {
        return Err(Error::Shape(format!(
            "{}: records declare {declared} bytes but payload has {}",
            data_path.display(),
            bytes.len()
        )));
    }

    let (v, c) = (manifest.num_joints, manifest.channels);
    let mut sequences = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let start = rec.offset as usize;
        let end = start + manifest.record_bytes(rec) as usize;
        if end > bytes.len() {
            return Err(Error::Shape(format!(
                "record {:?} spans bytes {start}..{end} past payload end {}",
                rec.id,
                bytes.len()
            )));
        }
        let values: Vec<f32> = bytes[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let frames = Array3::from_shape_vec((rec.length, v, c), values)
            .map_err(|e| Error::Shape(format!("record {:?}: {e}", rec.id)))?;
        let mut seq = SkeletonSequence::new(frames)
            .map_err(|e| load_error(&data_path, format!("record {:?}: {e}", rec.id)))?;
        seq.label = rec.label;
        seq.subject_id = rec.subject_id;
        seq.view_id = rec.view_id;
        sequences.push(seq);
    }
    Ok(Dataset {
        manifest,
        sequences,
    })
}
