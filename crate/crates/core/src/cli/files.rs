//! On-disk formats shared by the subcommands.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::detect::{BBox, Detection};
use crate::model::{BoxAnnotation, Malignancy};

/// Provenance block written into every result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub tool: String,
    pub version: String,
    pub task: String,
    pub seed: Option<u64>,
    /// Every option after applying flags, config file and defaults.
    pub config: BTreeMap<String, serde_json::Value>,
    /// Seconds since the Unix epoch; omitted under `--deterministic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub run: RunInfo,
    pub result: T,
}

/// Accepts either a bare payload or one wrapped in an [`Artifact`].
#[derive(Deserialize)]
#[serde(untagged)]
enum MaybeWrapped<T> {
    Wrapped { result: T },
    Bare(T),
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_payload<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    Ok(match read_json::<MaybeWrapped<T>>(path)? {
        MaybeWrapped::Wrapped { result } => result,
        MaybeWrapped::Bare(t) => t,
    })
}

/// One row of a per-case predictions file, as consumed by `stats`.
///
/// Classification tasks fill `prediction`/`reference`; ranking tasks fill
/// `score`/`label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePrediction {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
}

/// A box in an annotation or detection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub volume_id: String,
    pub slice_index: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default)]
    pub malignancy: Option<Malignancy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl BoxRecord {
    pub fn from_annotation(a: &BoxAnnotation) -> Self {
        Self {
            volume_id: a.volume.volume_id(),
            slice_index: a.slice_index,
            x: a.x,
            y: a.y,
            w: a.w,
            h: a.h,
            malignancy: a.malignancy,
            score: None,
        }
    }

    pub fn from_detection(volume_id: &str, d: &Detection) -> Self {
        Self {
            volume_id: volume_id.to_string(),
            slice_index: d.slice_index,
            x: d.bbox.x,
            y: d.bbox.y,
            w: d.bbox.w,
            h: d.bbox.h,
            malignancy: None,
            score: Some(d.score),
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.w, self.h)
    }
}

pub fn group_boxes(records: &[BoxRecord]) -> BTreeMap<String, Vec<BBox>> {
    let mut out: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    for r in records {
        out.entry(r.volume_id.clone()).or_default().push(r.bbox());
    }
    out
}

pub fn group_detections(records: &[BoxRecord]) -> Result<BTreeMap<String, Vec<Detection>>, CliError> {
    let mut out: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for r in records {
        let score = r.score.ok_or_else(|| CliError::Data(format!("prediction on {} has no score", r.volume_id)))?;
        out.entry(r.volume_id.clone()).or_default().push(Detection {
            bbox: r.bbox(),
            score,
            slice_index: r.slice_index,
        });
    }
    Ok(out)
}
