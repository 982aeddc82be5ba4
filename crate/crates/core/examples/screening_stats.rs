//! Paired comparisons and multiplicity control on simulated reader scores.

use tomo::stats::{
    auroc, benjamini_hochberg, bootstrap_ci, delong_test, mcnemar_test, BootstrapConfig, PairedOutcomes,
};
use tomo::Xoshiro256;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = Xoshiro256::seed_from_u64(4);
    let labels: Vec<bool> = (0..400).map(|_| rng.bernoulli(0.3)).collect();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &l in &labels {
        let shared = rng.normal();
        a.push(if l { 1.2 } else { 0.0 } + shared + 0.5 * rng.normal());
        b.push(if l { 0.9 } else { 0.0 } + shared + 0.5 * rng.normal());
    }

    let d = delong_test(&a, &b, &labels)?;
    println!("AUROC a={:.3} b={:.3}, DeLong z={:.2} p={:.4}", d.auc_a, d.auc_b, d.z, d.p);

    let boot = BootstrapConfig { repetitions: 1000, seed: 4, ..Default::default() };
    let ci = bootstrap_ci(
        labels.len(),
        |idx| {
            let s: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            auroc(&s, &l).unwrap_or(f64::NAN)
        },
        &boot,
    )?;
    println!("AUROC a bootstrap 95% CI [{:.3}, {:.3}]", ci.lo, ci.hi);

    let paired = PairedOutcomes {
        ids: (0..labels.len()).map(|i| i.to_string()).collect(),
        correct_a: labels.iter().zip(&a).map(|(&l, &s)| (s > 0.6) == l).collect(),
        correct_b: labels.iter().zip(&b).map(|(&l, &s)| (s > 0.45) == l).collect(),
    };
    let (only_a, only_b) = paired.discordant();
    let p_mcnemar = mcnemar_test(&paired);
    println!("McNemar: {only_a} right only under a, {only_b} only under b, p={p_mcnemar:.4}");

    let bh = benjamini_hochberg(&[d.p, p_mcnemar, 0.04, 0.3], 0.05);
    println!(
        "BH adjusted {:?}, reject {:?}",
        bh.adjusted.iter().map(|p| format!("{p:.4}")).collect::<Vec<_>>(),
        bh.reject
    );
    Ok(())
}
