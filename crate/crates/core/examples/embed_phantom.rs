//! Render one phantom volume, embed each slice and aggregate it every way.

use std::collections::BTreeMap;

use tomo::embeddings::pixel::PatchEmbedder;
use tomo::embeddings::{aggregate_view, assemble_study, AggregationMode};
use tomo::ingest::{generate_cohort, phantom_for_volume, prepare_slice, CohortSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 3;
    let (ds, _) =
        generate_cohort(seed, &CohortSpec { n_exams: 1, n_slices: 4, lesion_rate: 1.0, ..Default::default() });
    let exam = &ds.exams[0];
    let embedder = PatchEmbedder::new(16, seed);

    for mode in AggregationMode::ALL {
        let mut views = BTreeMap::new();
        for (&view, volume) in &exam.views {
            let phantom = phantom_for_volume(seed, &ds, volume);
            let grids = (0..phantom.n_slices())
                .map(|k| prepare_slice(&phantom.slice(k)).map(|s| embedder.embed(&s)))
                .collect::<Result<Vec<_>, _>>()?;
            views.insert(view, aggregate_view(&grids, mode)?);
        }
        let study = assemble_study(&views)?;
        let norm = study.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("{mode:?}: study vector of {} values, L2 norm {norm:.3}", study.dim());
    }
    Ok(())
}
