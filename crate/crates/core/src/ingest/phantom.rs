//! Synthetic tomosynthesis phantoms and cohorts.
//!
//! A phantom is a stack of slices with a smooth parenchymal texture whose
//! coverage grows with the planted density rank, pixel noise, and bright
//! Gaussian blobs at the planted lesion boxes. A cohort is a manifest of
//! four-view exams with density labels, survival outcomes drawn from a
//! per-exam hazard profile, demographics, splits and optional lesion boxes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{encode_slice, RawImage};
use crate::model::{
    BoxAnnotation, Dataset, Demographics, DensityCategory, Exam, LesionClass, Malignancy, Outcome, Split, ViewKind,
    VolumeRef, FRAME,
};
use crate::rng::{derive_seed, Xoshiro256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub slice_index: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default)]
    pub malignancy: Option<Malignancy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub volume: VolumeRef,
    /// Number of random lesions when `lesions` is empty.
    pub lesion_count: usize,
    /// Explicit lesion boxes; take precedence over `lesion_count`.
    #[serde(default)]
    pub lesions: Vec<LesionSpec>,
    pub density_rank: usize,
    pub hazard_profile: [f64; 5],
    pub lesion_amplitude: f64,
    pub noise: f64,
}

impl PhantomSpec {
    pub fn new(volume: VolumeRef) -> Self {
        Self {
            volume,
            lesion_count: 0,
            lesions: Vec::new(),
            density_rank: 0,
            hazard_profile: [0.0; 5],
            lesion_amplitude: 1.0,
            noise: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub volume: VolumeRef,
    pub side: usize,
    /// `n_slices × side × side`.
    pub pixels: Vec<f32>,
    pub lesions: Vec<BoxAnnotation>,
    pub density_rank: usize,
    pub hazard_profile: [f64; 5],
}

impl Phantom {
    pub fn n_slices(&self) -> usize {
        self.volume.n_slices as usize
    }

    pub fn slice(&self, k: usize) -> RawImage {
        let n = self.side * self.side;
        RawImage::new(self.side, self.side, self.pixels[k * n..(k + 1) * n].iter().map(|&p| p as f64).collect())
    }

    /// One `RAW1` instance per slice, quantised to 12 bits over `[0, 2]`.
    pub fn instances(&self) -> Vec<Vec<u8>> {
        let n = self.side * self.side;
        (0..self.n_slices())
            .map(|k| {
                let q: Vec<u16> = self.pixels[k * n..(k + 1) * n]
                    .iter()
                    .map(|&p| ((p as f64).clamp(0.0, 2.0) / 2.0 * 4095.0).round() as u16)
                    .collect();
                encode_slice(self.side, self.side, &q)
            })
            .collect()
    }

    /// The volume as concatenated instances.
    pub fn to_raw_bytes(&self) -> Vec<u8> {
        self.instances().concat()
    }
}

/// Add `amp·exp(−((x−cx)²/2σx² + (y−cy)²/2σy²))` within ±3σ.
fn splat(img: &mut [f32], side: usize, cx: f64, cy: f64, sx: f64, sy: f64, amp: f64) {
    let y0 = (cy - 3.0 * sy).floor().max(0.0) as usize;
    let y1 = ((cy + 3.0 * sy).ceil() as usize).min(side - 1);
    let x0 = (cx - 3.0 * sx).floor().max(0.0) as usize;
    let x1 = ((cx + 3.0 * sx).ceil() as usize).min(side - 1);
    for y in y0..=y1 {
        let dy = (y as f64 + 0.5 - cy) / sy;
        for x in x0..=x1 {
            let dx = (x as f64 + 0.5 - cx) / sx;
            img[y * side + x] += (amp * (-0.5 * (dx * dx + dy * dy)).exp()) as f32;
        }
    }
}

fn random_lesion(rng: &mut Xoshiro256, n_slices: u32) -> LesionSpec {
    let w = rng.uniform(20.0, 60.0).round();
    let h = rng.uniform(20.0, 60.0).round();
    let x = rng.uniform(20.0, FRAME as f64 - 20.0 - w).round();
    let y = rng.uniform(20.0, FRAME as f64 - 20.0 - h).round();
    let slice_index =
        if n_slices >= 3 { 1 + rng.below(n_slices as u64 - 2) as u32 } else { rng.below(n_slices as u64) as u32 };
    let malignancy = Some(if rng.bernoulli(0.5) { Malignancy::Cancer } else { Malignancy::Benign });
    LesionSpec { slice_index, x, y, w, h, malignancy }
}

pub fn generate_phantom(seed: u64, spec: &PhantomSpec) -> Phantom {
    let side = FRAME;
    let n_slices = spec.volume.n_slices.max(1) as usize;
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let lesions: Vec<LesionSpec> = if spec.lesions.is_empty() {
        (0..spec.lesion_count).map(|_| random_lesion(&mut rng, n_slices as u32)).collect()
    } else {
        spec.lesions.clone()
    };

    let mut texture = vec![0.0f32; side * side];
    let bumps = 5 + 20 * spec.density_rank.min(3);
    for _ in 0..bumps {
        let (cx, cy) = (rng.uniform(0.0, side as f64), rng.uniform(0.0, side as f64));
        let s = rng.uniform(10.0, 25.0);
        splat(&mut texture, side, cx, cy, s, s, 0.35);
    }

    let n = side * side;
    let mut pixels = vec![0.0f32; n_slices * n];
    for k in 0..n_slices {
        let gain = rng.uniform(0.8, 1.0);
        let plane = &mut pixels[k * n..(k + 1) * n];
        for (p, t) in plane.iter_mut().zip(&texture) {
            *p = (0.1 + gain * *t as f64 + spec.noise * rng.normal()) as f32;
        }
        for l in &lesions {
            let d = (k as i64 - l.slice_index as i64).unsigned_abs();
            if d <= 1 {
                let amp = spec.lesion_amplitude * if d == 0 { 1.0 } else { 0.5 };
                splat(plane, side, l.x + l.w / 2.0, l.y + l.h / 2.0, l.w / 4.0, l.h / 4.0, amp);
            }
        }
        for p in plane.iter_mut() {
            *p = p.max(0.0);
        }
    }

    let lesions = lesions
        .into_iter()
        .map(|l| BoxAnnotation {
            volume: spec.volume.clone(),
            slice_index: l.slice_index,
            x: l.x,
            y: l.y,
            w: l.w,
            h: l.h,
            class: LesionClass::Lesion,
            malignancy: l.malignancy,
        })
        .collect();
    Phantom {
        volume: spec.volume.clone(),
        side,
        pixels,
        lesions,
        density_rank: spec.density_rank,
        hazard_profile: spec.hazard_profile,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_exams: usize,
    pub n_slices: u32,
    /// Fractions assigned to train and validation; the rest is test.
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Yearly hazard at zero latent risk.
    pub base_hazard: f64,
    /// Log-hazard ratio per unit of latent risk.
    pub risk_coef: f64,
    /// Probability that an event-free exam is censored before five years.
    pub censor_rate: f64,
    /// Probability that a volume carries one planted lesion.
    pub lesion_rate: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_exams: 200,
            n_slices: 4,
            train_fraction: 0.7,
            val_fraction: 0.1,
            base_hazard: 0.03,
            risk_coef: 1.0,
            censor_rate: 0.2,
            lesion_rate: 0.0,
        }
    }
}

const RACES: [(&str, f64); 5] = [("White", 0.6), ("Black", 0.12), ("Asian", 0.1), ("Hispanic", 0.1), ("Other", 0.08)];

/// A synthetic manifest plus the hazard profile planted for each exam.
pub fn generate_cohort(seed: u64, spec: &CohortSpec) -> (Dataset, BTreeMap<String, [f64; 5]>) {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let mut ds = Dataset::default();
    let mut hazards = BTreeMap::new();
    for i in 0..spec.n_exams {
        let patient_id = format!("P{i:05}");
        let exam_id = format!("E{i:05}");
        let year = 2012 + rng.below(12);
        let date = format!("{year}-{:02}-{:02}", 1 + rng.below(12), 1 + rng.below(28));
        let views = ViewKind::ALL
            .iter()
            .map(|&view| {
                let v = VolumeRef {
                    patient_id: patient_id.clone(),
                    exam_id: exam_id.clone(),
                    view,
                    n_slices: spec.n_slices,
                    acquisition_date: date.clone(),
                };
                (view, v)
            })
            .collect::<BTreeMap<_, _>>();
        let age_years = rng.uniform(40.0, 85.0).floor();
        let mut pick = rng.next_f64();
        let race = RACES
            .iter()
            .find(|(_, w)| {
                pick -= w;
                pick < 0.0
            })
            .map_or("Other", |(r, _)| r)
            .to_string();

        let density = DensityCategory::from_rank(i % 4).unwrap();
        let latent = rng.normal();
        let h = spec.base_hazard * (spec.risk_coef * latent).exp();
        let profile = [h; 5];
        let mut event_year = None;
        for (k, hk) in profile.iter().enumerate() {
            if rng.bernoulli(1.0 - (-hk).exp()) {
                event_year = Some(k as u32 + 1);
                break;
            }
        }
        let outcome = match event_year {
            Some(k) => Outcome { event: true, event_year: Some(k), followup_years: rng.uniform(k as f64, 10.0) },
            None if rng.bernoulli(spec.censor_rate) => {
                Outcome { event: false, event_year: None, followup_years: rng.uniform(0.0, 5.0) }
            }
            None => Outcome { event: false, event_year: None, followup_years: rng.uniform(5.0, 10.0) },
        };
        let u = rng.next_f64();
        let split = if u < spec.train_fraction {
            Split::Train
        } else if u < spec.train_fraction + spec.val_fraction {
            Split::Val
        } else {
            Split::Test
        };
        for v in views.values() {
            if rng.bernoulli(spec.lesion_rate) {
                let l = random_lesion(&mut rng, spec.n_slices);
                ds.annotations.push(BoxAnnotation {
                    volume: v.clone(),
                    slice_index: l.slice_index,
                    x: l.x,
                    y: l.y,
                    w: l.w,
                    h: l.h,
                    class: LesionClass::Lesion,
                    malignancy: l.malignancy,
                });
            }
        }
        ds.density_labels.insert(exam_id.clone(), density);
        ds.outcomes.insert(exam_id.clone(), outcome);
        ds.splits.insert(exam_id.clone(), split);
        hazards.insert(exam_id.clone(), profile);
        ds.exams.push(Exam {
            exam_id,
            patient_id,
            views,
            demographics: Some(Demographics { age_years, race }),
            complete: true,
        });
    }
    (ds, hazards)
}

/// Render the phantom for one manifest volume, planting exactly the
/// manifest's annotations for it.
pub fn phantom_for_volume(seed: u64, dataset: &Dataset, volume: &VolumeRef) -> Phantom {
    let mut spec = PhantomSpec::new(volume.clone());
    spec.density_rank = dataset.density_labels.get(&volume.exam_id).map_or(0, |d| d.rank());
    spec.lesions = dataset
        .annotations
        .iter()
        .filter(|a| a.volume == *volume)
        .map(|a| LesionSpec { slice_index: a.slice_index, x: a.x, y: a.y, w: a.w, h: a.h, malignancy: a.malignancy })
        .collect();
    let vseed = derive_seed(seed, crate::rng::fnv1a(volume.volume_id().as_bytes()));
    let mut p = generate_phantom(vseed, &spec);
    if spec.lesions.is_empty() {
        p.lesions.clear();
    }
    p
}
