//! Trained-weight storage.
//!
//! Layout under a store root:
//!
//! ```text
//! store/
//!   case/weights.bin + meta.json
//!   cockpit/finger+eye+head/weights.bin + meta.json
//!   environment/finger+eye+head/weights.bin + meta.json
//!   ...
//! ```
//!
//! `weights.bin` is a little-endian binary blob: magic, format version, the
//! architecture fingerprint string, then the ordered named parameter
//! tensors with shapes. Loading refuses any fingerprint or layout mismatch.

use crate::error::{AppError, Result};
use deixis_core::event::{ModalitySet, UseCase};
use deixis_core::model::{CaseModel, FusionModel};
use deixis_core::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"DXWT";
const WEIGHTS_FORMAT_VERSION: u32 = 1;

/// Training provenance stored next to the weights.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WeightMeta {
    pub arch_fingerprint: String,
    pub seed: u64,
    pub epochs: usize,
    pub best_val_loss: f64,
    /// SHA-256 of the training dataset file(s).
    pub data_fingerprint: String,
    pub val_subject: String,
}

pub struct WeightStore {
    root: PathBuf,
}

impl WeightStore {
    pub fn new(root: impl Into<PathBuf>) -> WeightStore {
        WeightStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn fusion_dir(&self, use_case: UseCase, modalities: ModalitySet) -> PathBuf {
        self.root
            .join(use_case.as_str())
            .join(modalities.to_string())
    }

    pub fn case_dir(&self) -> PathBuf {
        self.root.join("case")
    }

    pub fn save_fusion(
        &self,
        use_case: UseCase,
        model: &FusionModel,
        meta: &WeightMeta,
    ) -> Result<()> {
        let dir = self.fusion_dir(use_case, model.modalities);
        write_entry(&dir, &model.fingerprint(), &model.export_params(), meta)
    }

    pub fn save_case(&self, model: &CaseModel, meta: &WeightMeta) -> Result<()> {
        write_entry(
            &self.case_dir(),
            &model.fingerprint(),
            &model.export_params(),
            meta,
        )
    }

    /// Loads fusion weights for a use case, reconstructing the architecture
    /// from the stored fingerprint.
    pub fn load_fusion(
        &self,
        use_case: UseCase,
        modalities: ModalitySet,
    ) -> Result<(FusionModel, WeightMeta)> {
        let dir = self.fusion_dir(use_case, modalities);
        let (fingerprint, params, meta) = read_entry(&dir)?;
        let width = parse_field(&fingerprint, "width").ok_or_else(|| {
            AppError::Store(format!("fingerprint {fingerprint:?} carries no width"))
        })?;
        let mut model =
            FusionModel::new(modalities, width, 0).map_err(|e| AppError::Store(e.to_string()))?;
        if model.fingerprint() != fingerprint {
            return Err(AppError::Store(format!(
                "fingerprint mismatch: stored {fingerprint:?}, expected {:?}",
                model.fingerprint()
            )));
        }
        model
            .import_params(&params)
            .map_err(|e| AppError::Store(e.to_string()))?;
        Ok((model, meta))
    }

    pub fn load_case(&self) -> Result<(CaseModel, WeightMeta)> {
        let dir = self.case_dir();
        let (fingerprint, params, meta) = read_entry(&dir)?;
        let width = parse_field(&fingerprint, "width").ok_or_else(|| {
            AppError::Store(format!("fingerprint {fingerprint:?} carries no width"))
        })?;
        let mut model = CaseModel::new(width, 0).map_err(|e| AppError::Store(e.to_string()))?;
        if model.fingerprint() != fingerprint {
            return Err(AppError::Store(format!(
                "fingerprint mismatch: stored {fingerprint:?}, expected {:?}",
                model.fingerprint()
            )));
        }
        model
            .import_params(&params)
            .map_err(|e| AppError::Store(e.to_string()))?;
        Ok((model, meta))
    }
}

/// Extracts a `key=value` usize field from a fingerprint string.
fn parse_field(fingerprint: &str, key: &str) -> Option<usize> {
    fingerprint
        .split(';')
        .find_map(|part| part.strip_prefix(&format!("{key}=")))
        .and_then(|v| v.parse().ok())
}

fn write_entry(
    dir: &Path,
    fingerprint: &str,
    params: &[(String, Tensor)],
    meta: &WeightMeta,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let bin_path = dir.join("weights.bin");
    let file = std::fs::File::create(&bin_path).map_err(|e| AppError::io(&bin_path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| AppError::io(&bin_path, e);
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&WEIGHTS_FORMAT_VERSION.to_le_bytes())
        .map_err(io_err)?;
    write_string(&mut w, fingerprint).map_err(io_err)?;
    w.write_all(&(params.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for (name, tensor) in params {
        write_string(&mut w, name).map_err(io_err)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
        }
        for v in tensor.values() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;

    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(meta).expect("meta serializes");
    std::fs::write(&meta_path, json + "\n").map_err(|e| AppError::io(&meta_path, e))
}

#[allow(clippy::type_complexity)]
fn read_entry(dir: &Path) -> Result<(String, Vec<(String, Tensor)>, WeightMeta)> {
    let bin_path = dir.join("weights.bin");
    let file = std::fs::File::open(&bin_path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            AppError::Store(format!("no weights at {}", bin_path.display()))
        } else {
            AppError::io(&bin_path, e)
        }
    })?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| AppError::io(&bin_path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(AppError::Store(format!(
            "{} is not a weights file (bad magic)",
            bin_path.display()
        )));
    }
    let version = read_u32(&mut r).map_err(io_err)?;
    if version != WEIGHTS_FORMAT_VERSION {
        return Err(AppError::Store(format!(
            "unsupported weights format version {version}"
        )));
    }
    let fingerprint = read_string(&mut r).map_err(io_err)?;
    let count = read_u32(&mut r).map_err(io_err)? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(&mut r).map_err(io_err)?;
        let rank = read_u32(&mut r).map_err(io_err)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r).map_err(io_err)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut values = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf).map_err(io_err)?;
            values.push(f64::from_le_bytes(buf));
        }
        params.push((name, Tensor::from_values(&shape, values)));
    }

    let meta_path = dir.join("meta.json");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| AppError::io(&meta_path, e))?;
    let meta: WeightMeta =
        serde_json::from_str(&meta_text).map_err(|e| AppError::parse_json(&meta_path, &e))?;
    if meta.arch_fingerprint != fingerprint {
        return Err(AppError::Store(format!(
            "meta fingerprint {:?} disagrees with weights fingerprint {fingerprint:?}",
            meta.arch_fingerprint
        )));
    }
    Ok((fingerprint, params, meta))
}

fn write_string(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_string(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// SHA-256 of a file's bytes, hex-encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use deixis_core::event::Modality;

    fn meta(fingerprint: &str) -> WeightMeta {
        WeightMeta {
            arch_fingerprint: fingerprint.to_string(),
            seed: 7,
            epochs: 5,
            best_val_loss: 0.25,
            data_fingerprint: "abc".into(),
            val_subject: "s02".into(),
        }
    }

    #[test]
    fn fusion_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = WeightStore::new(dir.path());
        let model = FusionModel::new(ModalitySet::FULL, 6, 42).unwrap();
        store
            .save_fusion(UseCase::Cockpit, &model, &meta(&model.fingerprint()))
            .unwrap();
        let (loaded, loaded_meta) = store
            .load_fusion(UseCase::Cockpit, ModalitySet::FULL)
            .unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded_meta.seed, 7);
    }

    #[test]
    fn case_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = WeightStore::new(dir.path());
        let model = CaseModel::new(8, 1).unwrap();
        store
            .save_case(&model, &meta(&model.fingerprint()))
            .unwrap();
        let (loaded, _) = store.load_case().unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn missing_entry_is_store_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = WeightStore::new(dir.path());
        let err = store
            .load_fusion(UseCase::Environment, ModalitySet::FULL)
            .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn tampered_fingerprint_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store = WeightStore::new(dir.path());
        let model = FusionModel::new(ModalitySet::single(Modality::Eye), 6, 0).unwrap();
        store
            .save_fusion(UseCase::Cockpit, &model, &meta(&model.fingerprint()))
            .unwrap();
        // Rewrite the meta with a different fingerprint.
        let dir_path = store.fusion_dir(UseCase::Cockpit, ModalitySet::single(Modality::Eye));
        let mut m = meta(&model.fingerprint());
        m.arch_fingerprint = "fusion/v1;modalities=eye;width=999;frames=36".into();
        std::fs::write(
            dir_path.join("meta.json"),
            serde_json::to_string(&m).unwrap(),
        )
        .unwrap();
        let err = store
            .load_fusion(UseCase::Cockpit, ModalitySet::single(Modality::Eye))
            .unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("fingerprint"), "{err}");
    }

    #[test]
    fn wrong_modalities_do_not_load() {
        let dir = tempfile::tempdir().unwrap();
        let store = WeightStore::new(dir.path());
        let model = FusionModel::new(ModalitySet::FULL, 6, 0).unwrap();
        store
            .save_fusion(UseCase::Cockpit, &model, &meta(&model.fingerprint()))
            .unwrap();
        // A different modality set resolves to a different directory.
        assert!(store
            .load_fusion(UseCase::Cockpit, ModalitySet::single(Modality::Eye))
            .is_err());
    }
}
