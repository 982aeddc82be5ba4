use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{decode_tensor, encode_tensor, EmbedError, Tensor};
use crate::model::ViewKind;

const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EmbeddingKey {
    pub patient_id: String,
    pub exam_id: String,
    pub view: ViewKind,
}

impl EmbeddingKey {
    pub fn new(patient_id: impl Into<String>, exam_id: impl Into<String>, view: ViewKind) -> Self {
        Self { patient_id: patient_id.into(), exam_id: exam_id.into(), view }
    }

    fn file_name(&self) -> String {
        let digest = Sha256::digest(self.to_string().as_bytes());
        format!("{}.emb", hex::encode(&digest[..16]))
    }
}

impl fmt::Display for EmbeddingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.patient_id, self.exam_id, self.view)
    }
}

/// Directory of `EMB1` tensors keyed by `(patient, exam, view)`, with a
/// sidecar `index.json` mapping key to file name.
///
/// File names are a hash of the key, so readers never need the index.
/// Every file is written to a temporary name and renamed into place.
#[derive(Debug)]
pub struct EmbeddingStore {
    root: PathBuf,
    index: Mutex<BTreeMap<String, String>>,
}

impl EmbeddingStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let index_path = root.join(INDEX_FILE);
        let index =
            if index_path.exists() { serde_json::from_slice(&fs::read(&index_path)?)? } else { BTreeMap::new() };
        Ok(Self { root, index: Mutex::new(index) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&self, key: &EmbeddingKey, tensor: &Tensor) -> Result<(), EmbedError> {
        if tensor.data.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        let name = key.file_name();
        atomic_write(&self.root.join(&name), &encode_tensor(tensor))?;
        let mut index = self.index.lock().expect("index lock");
        if index.insert(key.to_string(), name).is_none() {
            let text = serde_json::to_vec_pretty(&*index)?;
            atomic_write(&self.root.join(INDEX_FILE), &text)?;
        }
        Ok(())
    }

    pub fn read(&self, key: &EmbeddingKey) -> Result<Tensor, EmbedError> {
        let path = self.root.join(key.file_name());
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(EmbedError::MissingKey(key.to_string())),
            Err(e) => return Err(e.into()),
        };
        decode_tensor(&bytes)
    }

    pub fn contains(&self, key: &EmbeddingKey) -> bool {
        self.root.join(key.file_name()).exists()
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Write `bytes` to `path` via a sibling temporary file and rename.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_data()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
