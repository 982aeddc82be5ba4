//! Stand-in for the frozen backbone: class-conditional Gaussian tokens.
//!
//! Each view's patch tokens are drawn around
//! `density_separation·μ[rank] + risk_separation·u·[event] + exam offset`
//! with isotropic token noise. `μ[0..4]` and `u` are seeded unit vectors,
//! and the exam offset (std `exam_noise` per coordinate) is shared by all
//! tokens of one view so it survives aggregation. A separation of zero
//! makes the labels invisible in the features.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbedError, EmbeddingKey, EmbeddingStore, Tensor};
use crate::model::{Dataset, ViewKind};
use crate::rng::{derive_seed, Xoshiro256};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub dim: usize,
    pub grid_side: usize,
    pub n_slices: usize,
    pub density_separation: f64,
    pub risk_separation: f64,
    pub exam_noise: f64,
    pub token_noise: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            grid_side: 4,
            n_slices: 2,
            density_separation: 4.0,
            risk_separation: 4.0,
            exam_noise: 0.5,
            token_noise: 1.0,
        }
    }
}

fn unit_vector(rng: &mut Xoshiro256, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.into_iter().map(|x| x / norm).collect()
}

fn key_seed(seed: u64, key: &EmbeddingKey) -> u64 {
    let digest = Sha256::digest(key.to_string().as_bytes());
    derive_seed(seed, u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

/// The mean direction for each density rank plus the risk direction.
pub fn signal_directions(seed: u64, dim: usize) -> ([Vec<f64>; 4], Vec<f64>) {
    let mut rng = Xoshiro256::seed_from_u64(derive_seed(seed, 0xD1));
    let classes = std::array::from_fn(|_| unit_vector(&mut rng, dim));
    let risk = unit_vector(&mut rng, dim);
    (classes, risk)
}

/// Generate `[n_slices, 1 + grid², dim]` token tensors for every view of
/// every exam in `dataset` and write them to `store`.
pub fn synthetic_embedding_provider(
    seed: u64,
    dataset: &Dataset,
    spec: &SignalSpec,
    store: &EmbeddingStore,
) -> Result<usize, EmbedError> {
    let (classes, risk_dir) = signal_directions(seed, spec.dim);
    let patches = spec.grid_side * spec.grid_side;
    let mut written = 0;
    for exam in &dataset.exams {
        let rank = dataset.density_labels.get(&exam.exam_id).map(|d| d.rank());
        let event = dataset.outcomes.get(&exam.exam_id).is_some_and(|o| o.event);
        let mut center = vec![0.0; spec.dim];
        if let Some(r) = rank {
            for (c, m) in center.iter_mut().zip(&classes[r]) {
                *c += spec.density_separation * m;
            }
        }
        if event {
            for (c, u) in center.iter_mut().zip(&risk_dir) {
                *c += spec.risk_separation * u;
            }
        }
        for view in ViewKind::ALL.iter().filter(|v| exam.views.contains_key(v)) {
            let key = EmbeddingKey::new(&exam.patient_id, &exam.exam_id, *view);
            let mut rng = Xoshiro256::seed_from_u64(key_seed(seed, &key));
            let offset: Vec<f64> = center.iter().map(|c| c + spec.exam_noise * rng.normal()).collect();
            let tokens = spec.n_slices * (1 + patches);
            let mut data = Vec::with_capacity(tokens * spec.dim);
            for _ in 0..tokens {
                data.extend(offset.iter().map(|o| (o + spec.token_noise * rng.normal()) as f32));
            }
            store.write(&key, &Tensor::new(vec![spec.n_slices, 1 + patches, spec.dim], data)?)?;
            written += 1;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{aggregate_view, AggregationMode, TokenGrid};
    use crate::model::tests::full_exam;
    use crate::model::DensityCategory;

    fn dataset(n: usize) -> Dataset {
        let mut ds = Dataset::default();
        for i in 0..n {
            let exam = full_exam(&format!("p{i}"), &format!("e{i}"));
            ds.density_labels.insert(exam.exam_id.clone(), DensityCategory::from_rank(i % 4).unwrap());
            ds.exams.push(exam);
        }
        ds
    }

    #[test]
    fn same_seed_same_bytes() {
        let ds = dataset(3);
        let spec = SignalSpec::default();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synthetic_embedding_provider(5, &ds, &spec, &EmbeddingStore::open(a.path()).unwrap()).unwrap();
        synthetic_embedding_provider(5, &ds, &spec, &EmbeddingStore::open(b.path()).unwrap()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 13);
        for n in names {
            assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
        }
    }

    #[test]
    fn large_separation_is_linearly_separable() {
        // With separation far above noise, projecting onto each class
        // direction classifies every exam: a separating hyperplane exists.
        let ds = dataset(40);
        let spec = SignalSpec { density_separation: 20.0, exam_noise: 0.3, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let store = EmbeddingStore::open(dir.path()).unwrap();
        synthetic_embedding_provider(9, &ds, &spec, &store).unwrap();
        let (classes, _) = signal_directions(9, spec.dim);
        for exam in &ds.exams {
            let key = EmbeddingKey::new(&exam.patient_id, &exam.exam_id, ViewKind::Lcc);
            let grids = TokenGrid::unstack(&store.read(&key).unwrap()).unwrap();
            let f = aggregate_view(&grids, AggregationMode::PatchMean).unwrap();
            let scores: Vec<f64> = classes.iter().map(|m| m.iter().zip(&f).map(|(a, b)| a * b).sum()).collect();
            let pred = crate::train::LinearHead::argmax(&scores);
            assert_eq!(pred, ds.density_labels[&exam.exam_id].rank());
        }
    }
}
