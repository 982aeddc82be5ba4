//! Linear density probe on synthetic embeddings, with a label-fraction sweep.

use tomo::density::{evaluate_density, load_density_split, train_density, DensityConfig};
use tomo::embeddings::{synthetic_embedding_provider, EmbeddingStore, SignalSpec};
use tomo::ingest::{generate_cohort, CohortSpec};
use tomo::model::Split;
use tomo::stats::BootstrapConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ds, _) = generate_cohort(1, &CohortSpec { n_exams: 1000, n_slices: 2, ..Default::default() });
    let dir = tempfile::tempdir()?;
    let store = EmbeddingStore::open(dir.path())?;
    synthetic_embedding_provider(1, &ds, &SignalSpec::default(), &store)?;

    let base = DensityConfig::default();
    let train = load_density_split(&store, &ds, Split::Train, base.mode)?;
    let val = load_density_split(&store, &ds, Split::Val, base.mode)?;
    let test = load_density_split(&store, &ds, Split::Test, base.mode)?;
    println!("{} train / {} val / {} test exams", train.len(), val.len(), test.len());

    let boot = BootstrapConfig { repetitions: 500, ..Default::default() };
    for fraction in [0.05, 0.25, 1.0] {
        let run = train_density(&train, &val, &DensityConfig { fraction, ..base.clone() })?;
        let eval = evaluate_density(&run, &test, &boot)?;
        println!(
            "fraction {:>4.0}%: accuracy {:.3} [{:.3}, {:.3}], dense/non-dense {:.3}, best epoch {}",
            fraction * 100.0,
            eval.accuracy.point,
            eval.accuracy.lo,
            eval.accuracy.hi,
            eval.binary_accuracy,
            run.best_epoch
        );
    }
    Ok(())
}
