//! Discrete-time risk head: train, score per year, break down by density.

use tomo::embeddings::{synthetic_embedding_provider, EmbeddingStore, SignalSpec};
use tomo::ingest::{generate_cohort, CohortSpec};
use tomo::model::Split;
use tomo::risk::{eval_risk, load_risk_split, subgroup_risk, train_risk, RiskConfig};
use tomo::stats::BootstrapConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = CohortSpec { n_exams: 3000, n_slices: 2, base_hazard: 0.08, ..Default::default() };
    let (ds, _) = generate_cohort(2, &spec);
    let dir = tempfile::tempdir()?;
    let store = EmbeddingStore::open(dir.path())?;
    synthetic_embedding_provider(2, &ds, &SignalSpec { dim: 16, grid_side: 2, ..Default::default() }, &store)?;

    let cfg = RiskConfig::default();
    let (train, _) = load_risk_split(&store, &ds, Split::Train, cfg.mode)?;
    let (val, _) = load_risk_split(&store, &ds, Split::Val, cfg.mode)?;
    let (test, skipped) = load_risk_split(&store, &ds, Split::Test, cfg.mode)?;
    let run = train_risk(&train, &val, &cfg)?;
    println!("checkpoints: best AUROC at epoch {}, best loss at epoch {}", run.by_auroc_epoch, run.by_loss_epoch);

    let boot = BootstrapConfig { repetitions: 300, ..Default::default() };
    let eval = eval_risk(&run.by_auroc, &test, &boot)?;
    for y in &eval.years {
        match &y.auroc {
            Some(a) => println!(
                "year {}: AUROC {:.3} [{:.3}, {:.3}] ({} of {} positive)",
                y.year, a.point, a.lo, a.hi, y.positives, y.n
            ),
            None => println!("year {}: undefined ({} of {} positive)", y.year, y.positives, y.n),
        }
    }
    println!("{} test exams skipped for missing follow-up", skipped);

    for g in subgroup_risk(&run.by_auroc, &test, 5, &boot)? {
        let m =
            g.eval.as_ref().and_then(|e| e.macro_auroc.as_ref()).map_or("n/a".into(), |i| format!("{:.3}", i.point));
        let flag = if g.flagged { " (few events)" } else { "" };
        println!("density {:?}: n={} events={} macro AUROC {m}{flag}", g.group, g.n, g.events);
    }
    Ok(())
}
