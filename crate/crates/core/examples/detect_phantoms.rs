//! Train the detection head on synthetic phantoms and report FROC.

use std::time::Instant;

use tomo::detect::{
    evaluate_volumes, phantom_volumes, train_detect_head, DetectConfig, PhantomSetSpec, SliceExample, FP_POINTS_1_TO_4,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let t = Instant::now();
    let spec = PhantomSetSpec::default();
    let train_vols = phantom_volumes(1, 40, &spec)?;
    let val = phantom_volumes(2, 12, &spec)?;
    let test = phantom_volumes(3, 20, &spec)?;
    eprintln!("phantoms ready in {:.1?}", t.elapsed());
    let train: Vec<SliceExample> = train_vols.iter().flat_map(|v| v.annotated_slices()).collect();
    let run = train_detect_head(&train, &val, &DetectConfig::default())?;
    for h in &run.history {
        eprintln!("epoch {:>2} loss {:.4} val {:?}", h.epoch, h.train_loss, h.val_average_sensitivity);
    }
    let froc = evaluate_volumes(&run.model, &test, &FP_POINTS_1_TO_4)?;
    println!("{}", froc.to_csv());
    println!(
        "average sensitivity {:.3} (best epoch {}) in {:.1?}",
        froc.average_sensitivity,
        run.best_epoch,
        t.elapsed()
    );
    Ok(())
}
