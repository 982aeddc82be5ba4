//! Canonical data model shared by every other module.
//!
//! All geometry lives in the resized 518×518 frame. Annotations drawn on raw
//! pixels are rescaled at ingest with the same transform applied to the
//! image (see [`BoxAnnotation::rescale_from`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Side length of the prepared image frame.
pub const FRAME: usize = 518;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViewKind {
    #[serde(rename = "LCC")]
    Lcc,
    #[serde(rename = "RCC")]
    Rcc,
    #[serde(rename = "LMLO")]
    Lmlo,
    #[serde(rename = "RMLO")]
    Rmlo,
}

impl ViewKind {
    /// Fixed concatenation order used for study features.
    pub const ALL: [ViewKind; 4] = [ViewKind::Lcc, ViewKind::Rcc, ViewKind::Lmlo, ViewKind::Rmlo];

    pub fn code(self) -> &'static str {
        match self {
            ViewKind::Lcc => "LCC",
            ViewKind::Rcc => "RCC",
            ViewKind::Lmlo => "LMLO",
            ViewKind::Rmlo => "RMLO",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for ViewKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LCC" => Ok(ViewKind::Lcc),
            "RCC" => Ok(ViewKind::Rcc),
            "LMLO" => Ok(ViewKind::Lmlo),
            "RMLO" => Ok(ViewKind::Rmlo),
            other => Err(format!("unknown view {other:?}")),
        }
    }
}

/// BI-RADS breast density, ordered A < B < C < D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DensityCategory {
    A,
    B,
    C,
    D,
}

/// Two-way collapse of [`DensityCategory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DenseGroup {
    NonDense,
    Dense,
}

impl DensityCategory {
    pub const ALL: [DensityCategory; 4] =
        [DensityCategory::A, DensityCategory::B, DensityCategory::C, DensityCategory::D];

    pub fn rank(self) -> usize {
        self as usize
    }

    pub fn from_rank(rank: usize) -> Option<Self> {
        Self::ALL.get(rank).copied()
    }

    pub fn collapse(self) -> DenseGroup {
        match self {
            DensityCategory::A | DensityCategory::B => DenseGroup::NonDense,
            DensityCategory::C | DensityCategory::D => DenseGroup::Dense,
        }
    }
}

impl fmt::Display for DensityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VolumeRef {
    pub patient_id: String,
    pub exam_id: String,
    pub view: ViewKind,
    pub n_slices: u32,
    /// ISO-8601 calendar date.
    pub acquisition_date: String,
}

impl VolumeRef {
    /// DICOMweb study identifier. Exams map one-to-one onto studies.
    pub fn study_uid(&self) -> &str {
        &self.exam_id
    }

    /// DICOMweb series identifier: one series per view.
    pub fn series_uid(&self) -> String {
        format!("{}.{}", self.exam_id, self.view.code())
    }

    /// Stable string key used for file names and predictions.
    pub fn volume_id(&self) -> String {
        format!("{}_{}_{}", self.patient_id, self.exam_id, self.view.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demographics {
    pub age_years: f64,
    pub race: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exam {
    pub exam_id: String,
    pub patient_id: String,
    pub views: BTreeMap<ViewKind, VolumeRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<Demographics>,
    /// A complete screening exam carries all four views.
    #[serde(default = "default_true")]
    pub complete: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionClass {
    Lesion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Malignancy {
    Benign,
    Cancer,
}

/// A lesion box on one slice, in the 518×518 frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub volume: VolumeRef,
    pub slice_index: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class: LesionClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malignancy: Option<Malignancy>,
}

impl BoxAnnotation {
    /// Map a box drawn on a `raw_h × raw_w` image into the 518 frame.
    pub fn rescale_from(mut self, raw_h: usize, raw_w: usize) -> Self {
        let sx = FRAME as f64 / raw_w as f64;
        let sy = FRAME as f64 / raw_h as f64;
        self.x *= sx;
        self.w *= sx;
        self.y *= sy;
        self.h *= sy;
        self
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Outcome data for the risk task, before label/mask construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub event: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_year: Option<u32>,
    pub followup_years: f64,
}

/// One dataset manifest: exams, labels, outcomes and annotations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub exams: Vec<Exam>,
    #[serde(default)]
    pub density_labels: BTreeMap<String, DensityCategory>,
    #[serde(default)]
    pub outcomes: BTreeMap<String, Outcome>,
    #[serde(default)]
    pub splits: BTreeMap<String, Split>,
    #[serde(default)]
    pub annotations: Vec<BoxAnnotation>,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }

    pub fn exam(&self, exam_id: &str) -> Option<&Exam> {
        self.exams.iter().find(|e| e.exam_id == exam_id)
    }

    pub fn exams_in(&self, split: Split) -> impl Iterator<Item = &Exam> {
        self.exams.iter().filter(move |e| self.splits.get(&e.exam_id) == Some(&split))
    }

    /// Every violation across exams, annotations and volume uniqueness.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for exam in &self.exams {
            out.extend(validate_exam(exam));
            for v in exam.views.values() {
                let key = (v.patient_id.clone(), v.exam_id.clone(), v.view);
                if !seen.insert(key) {
                    out.push(Violation::DuplicateVolume(v.volume_id()));
                }
            }
        }
        for ann in &self.annotations {
            out.extend(validate_annotation(ann));
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    MissingView(ViewKind),
    /// The map key disagrees with the volume's own view field.
    ViewKeyMismatch(ViewKind),
    /// A volume names a different exam or patient than its parent.
    ForeignVolume(String),
    EmptyVolume(String),
    DuplicateVolume(String),
    DegenerateBox,
    BoxOutOfFrame,
    SliceOutOfRange,
}

pub fn validate_exam(exam: &Exam) -> Vec<Violation> {
    let mut out = Vec::new();
    if exam.complete {
        for v in ViewKind::ALL {
            if !exam.views.contains_key(&v) {
                out.push(Violation::MissingView(v));
            }
        }
    }
    for (key, vol) in &exam.views {
        if *key != vol.view {
            out.push(Violation::ViewKeyMismatch(*key));
        }
        if vol.exam_id != exam.exam_id || vol.patient_id != exam.patient_id {
            out.push(Violation::ForeignVolume(vol.volume_id()));
        }
        if vol.n_slices == 0 {
            out.push(Violation::EmptyVolume(vol.volume_id()));
        }
    }
    out
}

pub fn validate_annotation(ann: &BoxAnnotation) -> Vec<Violation> {
    let mut out = Vec::new();
    let finite = [ann.x, ann.y, ann.w, ann.h].iter().all(|v| v.is_finite());
    if !finite || ann.w <= 0.0 || ann.h <= 0.0 {
        out.push(Violation::DegenerateBox);
    }
    let frame = FRAME as f64;
    if !finite || ann.x < 0.0 || ann.y < 0.0 || ann.x + ann.w > frame || ann.y + ann.h > frame {
        out.push(Violation::BoxOutOfFrame);
    }
    if ann.slice_index >= ann.volume.n_slices {
        out.push(Violation::SliceOutOfRange);
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn volume(patient: &str, exam: &str, view: ViewKind) -> VolumeRef {
        VolumeRef {
            patient_id: patient.into(),
            exam_id: exam.into(),
            view,
            n_slices: 10,
            acquisition_date: "2020-01-02".into(),
        }
    }

    pub fn full_exam(patient: &str, exam: &str) -> Exam {
        Exam {
            exam_id: exam.into(),
            patient_id: patient.into(),
            views: ViewKind::ALL.iter().map(|&v| (v, volume(patient, exam, v))).collect(),
            demographics: None,
            complete: true,
        }
    }

    #[test]
    fn well_formed_exam_has_no_violations() {
        assert!(validate_exam(&full_exam("p", "e")).is_empty());
    }

    #[test]
    fn missing_view_is_reported() {
        let mut exam = full_exam("p", "e");
        exam.views.remove(&ViewKind::Rmlo);
        assert_eq!(validate_exam(&exam), vec![Violation::MissingView(ViewKind::Rmlo)]);
        exam.complete = false;
        assert!(validate_exam(&exam).is_empty());
    }

    #[test]
    fn degenerate_box() {
        let ann = BoxAnnotation {
            volume: volume("p", "e", ViewKind::Lcc),
            slice_index: 2,
            x: 10.0,
            y: 10.0,
            w: 0.0,
            h: 5.0,
            class: LesionClass::Lesion,
            malignancy: None,
        };
        assert_eq!(validate_annotation(&ann), vec![Violation::DegenerateBox]);
        let out = BoxAnnotation { w: 600.0, slice_index: 10, ..ann };
        assert_eq!(validate_annotation(&out), vec![Violation::BoxOutOfFrame, Violation::SliceOutOfRange]);
    }

    #[test]
    fn duplicate_volumes_flagged_by_dataset() {
        let ds = Dataset { exams: vec![full_exam("p", "e"), full_exam("p", "e")], ..Default::default() };
        assert_eq!(ds.validate().len(), 4);
    }

    #[test]
    fn view_serializes_as_code() {
        assert_eq!(serde_json::to_string(&ViewKind::Lmlo).unwrap(), "\"LMLO\"");
        let e = full_exam("p1", "e1");
        let j = serde_json::to_value(&e).unwrap();
        assert!(j["views"]["RCC"]["acquisition_date"].is_string());
    }

    #[test]
    fn rescale_maps_to_frame() {
        let ann = BoxAnnotation {
            volume: volume("p", "e", ViewKind::Lcc),
            slice_index: 0,
            x: 1036.0,
            y: 0.0,
            w: 100.0,
            h: 200.0,
            class: LesionClass::Lesion,
            malignancy: Some(Malignancy::Cancer),
        }
        .rescale_from(2072, 2072);
        assert_eq!((ann.x, ann.y, ann.w, ann.h), (259.0, 0.0, 25.0, 50.0));
    }

    fn arb_view() -> impl Strategy<Value = ViewKind> {
        prop::sample::select(ViewKind::ALL.to_vec())
    }

    fn arb_density() -> impl Strategy<Value = DensityCategory> {
        prop::sample::select(DensityCategory::ALL.to_vec())
    }

    fn arb_volume() -> impl Strategy<Value = VolumeRef> {
        ("[a-z0-9]{1,8}", "[a-z0-9]{1,8}", arb_view(), 1u32..200, 1990i32..2030, 1u32..13, 1u32..29).prop_map(
            |(p, e, view, n, y, m, d)| VolumeRef {
                patient_id: p,
                exam_id: e,
                view,
                n_slices: n,
                acquisition_date: format!("{y:04}-{m:02}-{d:02}"),
            },
        )
    }

    fn arb_annotation() -> impl Strategy<Value = BoxAnnotation> {
        (arb_volume(), 0u32..100, 0.0..400.0f64, 0.0..400.0f64, 1.0..100.0f64, 1.0..100.0f64, any::<Option<bool>>())
            .prop_map(|(volume, s, x, y, w, h, m)| BoxAnnotation {
                volume,
                slice_index: s,
                x,
                y,
                w,
                h,
                class: LesionClass::Lesion,
                malignancy: m.map(|c| if c { Malignancy::Cancer } else { Malignancy::Benign }),
            })
    }

    fn arb_exam() -> impl Strategy<Value = Exam> {
        (
            "[a-z0-9]{1,8}",
            "[a-z0-9]{1,8}",
            prop::collection::vec(arb_volume(), 0..4),
            prop::option::of((18.0..95.0f64, "[A-Za-z ]{0,10}")),
            any::<bool>(),
        )
            .prop_map(|(e, p, vols, demo, complete)| Exam {
                exam_id: e,
                patient_id: p,
                views: vols.into_iter().map(|v| (v.view, v)).collect(),
                demographics: demo.map(|(age_years, race)| Demographics { age_years, race }),
                complete,
            })
    }

    proptest! {
        #[test]
        fn exam_round_trips(exam in arb_exam()) {
            let text = serde_json::to_string(&exam).unwrap();
            prop_assert_eq!(serde_json::from_str::<Exam>(&text).unwrap(), exam);
        }

        #[test]
        fn annotation_and_density_round_trip(ann in arb_annotation(), d in arb_density()) {
            let text = serde_json::to_string(&ann).unwrap();
            prop_assert_eq!(serde_json::from_str::<BoxAnnotation>(&text).unwrap(), ann);
            let text = serde_json::to_string(&d).unwrap();
            prop_assert_eq!(serde_json::from_str::<DensityCategory>(&text).unwrap(), d);
        }

        #[test]
        fn collapse_is_monotone(a in arb_density(), b in arb_density()) {
            if a.rank() <= b.rank() {
                prop_assert!(a.collapse() <= b.collapse());
            }
        }
    }

    #[test]
    fn collapse_is_surjective() {
        let image: BTreeSet<_> = DensityCategory::ALL.iter().map(|d| d.collapse()).collect();
        assert_eq!(image.len(), 2);
    }
}
