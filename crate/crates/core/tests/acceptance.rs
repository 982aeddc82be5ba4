//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line. Oracles are written here from first principles and do
//! not call the code under test.
//!
//! Run with `cargo test --release --test acceptance -- --test-threads 1`
//! to see the report lines in order.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use tomo::density::{evaluate_density, load_density_split, train_density, DensityConfig};
use tomo::detect::{
    aggregate_volume, assign_anchors, detection_loss, evaluate_volumes, focal_loss, froc, generate_anchors, is_hit,
    match_radius, nms, phantom_volumes, smooth_l1, train_detect_head, AnchorLabel, AnchorTarget, AssignConfig, BBox,
    DetectConfig, Detection, FocalConfig, PhantomSetSpec, PyramidSpec, SliceExample, FP_POINTS_1_TO_4,
};
use tomo::embeddings::{
    aggregate_view, assemble_study, synthetic_embedding_provider, AggregationMode, EmbeddingStore, SignalSpec,
    TokenGrid,
};
use tomo::ingest::stub::StubPacs;
use tomo::ingest::{
    cache_key, generate_cohort, parse_density_report, prepare_slice, CacheConfig, CohortSpec, DicomWebClient,
    IngestError, RawImage, RemoteSource, VolumeCache, VolumeSource,
};
use tomo::model::{Dataset, DensityCategory, Split, ViewKind, VolumeRef};
use tomo::risk::{eval_risk, hazards_to_risk, load_risk_split, masked_bce, train_risk, RiskConfig};
use tomo::stats::{auroc, benjamini_hochberg, bootstrap_ci, delong_test, mcnemar_counts, BootstrapConfig};
use tomo::train::softmax_ce;
use tomo::Xoshiro256;

fn report(id: u32, name: &str, ok: bool, elapsed: Duration, limit: Option<Duration>, detail: String) {
    let in_time = limit.is_none_or(|l| elapsed < l);
    let verdict = if ok && in_time { "PASS" } else { "FAIL" };
    let limit = limit.map_or(String::new(), |l| format!(" / limit {}s", l.as_secs()));
    // Written to the stdout handle directly so the line survives output capture.
    let line = format!("[{verdict}] criterion {id}: {name}: {detail} ({:.1}s{limit})\n", elapsed.as_secs_f64());
    let _ = std::io::Write::write_all(&mut std::io::stdout().lock(), line.as_bytes());
    assert!(ok, "criterion {id} failed: {detail}");
    assert!(in_time, "criterion {id} exceeded its runtime limit");
}

// ---------------------------------------------------------------- oracles

/// Two-pass mean and population standard deviation per column.
fn two_pass(rows: &[&[f32]], dim: usize, with_std: bool) -> Vec<f64> {
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j] as f64).sum::<f64>() / n).collect();
    let mut out = mean.clone();
    if with_std {
        out.extend((0..dim).map(|j| (rows.iter().map(|r| (r[j] as f64 - mean[j]).powi(2)).sum::<f64>() / n).sqrt()));
    }
    out
}

fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-4;
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error, with the reference magnitude floored at 1e-3 so
/// components whose true value is ~0 are judged on absolute error.
fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / n.abs().max(1e-3)).fold(0.0, f64::max)
}

fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn oracle_assign(anchors: &[BBox], gts: &[BBox], pos: f64, neg: f64) -> Vec<AnchorLabel> {
    let m: Vec<Vec<f64>> = anchors.iter().map(|a| gts.iter().map(|g| oracle_iou(a, g)).collect()).collect();
    let mut labels: Vec<AnchorLabel> = m
        .iter()
        .map(|row| {
            let Some(best) = row.iter().cloned().fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
            else {
                return AnchorLabel::Negative;
            };
            if best >= pos {
                AnchorLabel::Positive(row.iter().position(|&v| v == best).unwrap())
            } else if best < neg {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignore
            }
        })
        .collect();
    for g in 0..gts.len() {
        let best = m.iter().map(|r| r[g]).fold(f64::NEG_INFINITY, f64::max);
        if best > 0.0 {
            let a = m.iter().position(|r| r[g] == best).unwrap();
            labels[a] = AnchorLabel::Positive(g);
        }
    }
    labels
}

fn oracle_rank(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    let key = |d: &Detection| (d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h, d.slice_index);
    b.score.partial_cmp(&a.score).unwrap().then_with(|| key(a).partial_cmp(&key(b)).unwrap())
}

/// A box survives iff no better-ranked survivor overlaps it by more than
/// `thr`; evaluated over the rank order.
fn oracle_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| oracle_rank(&dets[i], &dets[j]));
    let mut alive = vec![true; dets.len()];
    for (r, &i) in order.iter().enumerate() {
        if !alive[i] {
            continue;
        }
        for &j in &order[r + 1..] {
            if oracle_iou(&dets[i].bbox, &dets[j].bbox) > thr {
                alive[j] = false;
            }
        }
    }
    order.into_iter().filter(|&i| alive[i]).map(|i| dets[i]).collect()
}

fn centre(b: &BBox) -> (f64, f64) {
    (b.x + b.w / 2.0, b.y + b.h / 2.0)
}

/// Brute-force FROC: re-match every volume at every distinct threshold.
fn oracle_froc(
    gt: &BTreeMap<String, Vec<BBox>>,
    preds: &BTreeMap<String, Vec<Detection>>,
    fp_points: &[f64],
) -> (Vec<(f64, f64)>, Vec<f64>) {
    let volumes: BTreeSet<&String> = gt.keys().chain(preds.keys()).collect();
    let lesions: usize = gt.values().map(Vec::len).sum();
    let mut thresholds: Vec<f64> = preds.values().flatten().map(|d| d.score).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut curve = vec![(0.0, 0.0)];
    for &t in &thresholds {
        let (mut tp, mut fp) = (0usize, 0usize);
        for v in &volumes {
            let mut kept: Vec<Detection> =
                preds.get(*v).into_iter().flatten().filter(|d| d.score >= t).copied().collect();
            kept.sort_by(oracle_rank);
            let lesions_here = gt.get(*v).cloned().unwrap_or_default();
            let mut claimed = vec![false; lesions_here.len()];
            for d in &kept {
                let (px, py) = centre(&d.bbox);
                let mut best: Option<(f64, usize)> = None;
                for (g, b) in lesions_here.iter().enumerate() {
                    let (gx, gy) = centre(b);
                    let dist = ((px - gx).powi(2) + (py - gy).powi(2)).sqrt();
                    let radius = ((b.w * b.w + b.h * b.h).sqrt() / 2.0).max(20.0);
                    if !claimed[g] && dist <= radius && best.is_none_or(|(bd, _)| dist < bd) {
                        best = Some((dist, g));
                    }
                }
                match best {
                    Some((_, g)) => {
                        claimed[g] = true;
                        tp += 1;
                    }
                    None => fp += 1,
                }
            }
        }
        curve.push((fp as f64 / volumes.len() as f64, tp as f64 / lesions as f64));
    }
    let sens =
        fp_points.iter().map(|&f| curve.iter().filter(|(m, _)| *m <= f).map(|(_, s)| *s).fold(0.0, f64::max)).collect();
    (curve, sens)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties half.
fn oracle_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Least-recently-used simulation over key indices.
fn oracle_lru(capacity: u64, sizes: &[u64], accesses: &[usize]) -> Vec<usize> {
    let mut resident: Vec<usize> = Vec::new(); // least recent first
    for &k in accesses {
        if let Some(p) = resident.iter().position(|&r| r == k) {
            resident.remove(p);
            resident.push(k);
            continue;
        }
        while resident.iter().map(|&r| sizes[r]).sum::<u64>() + sizes[k] > capacity {
            resident.remove(0);
        }
        resident.push(k);
    }
    resident
}

/// Half-pixel-centre bilinear sample of `img` for output pixel `(oy, ox)`.
fn oracle_bilinear(img: &RawImage, out: usize, oy: usize, ox: usize) -> f64 {
    let coord = |o: usize, len: usize| {
        let s = ((o as f64 + 0.5) * len as f64 / out as f64 - 0.5).max(0.0).min((len - 1) as f64);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(len - 1), s - i0 as f64)
    };
    let (y0, y1, fy) = coord(oy, img.height);
    let (x0, x1, fx) = coord(ox, img.width);
    let p = |y: usize, x: usize| img.pixels[y * img.width + x];
    (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1))
}

// --------------------------------------------------------------- criteria

#[test]
fn criterion_1_aggregation_oracle() {
    let t = Instant::now();
    let mut rng = Xoshiro256::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut dims_ok = true;
    for case in 0..500 {
        let mode = AggregationMode::ALL[case % 4];
        let n_slices = 1 + rng.index(6);
        // One in fifty instances uses the full 37×37 grid.
        let patches = if case % 50 == 0 { 37 * 37 } else { 1 + rng.index(40) };
        let scale = rng.uniform(0.1, 100.0);
        let grids: Vec<TokenGrid> = (0..n_slices)
            .map(|_| {
                let cls = (0..768).map(|_| (scale * rng.normal() + 3.0) as f32).collect();
                let p = (0..768 * patches).map(|_| (scale * rng.normal() - 1.0) as f32).collect();
                TokenGrid::new(cls, p).unwrap()
            })
            .collect();
        let rows: Vec<&[f32]> = match mode {
            AggregationMode::ClsMean | AggregationMode::ClsMeanStd => grids.iter().map(|g| &g.cls[..]).collect(),
            _ => grids.iter().flat_map(|g| g.patches.chunks_exact(768)).collect(),
        };
        let expect = two_pass(&rows, 768, mode.with_std());
        let got = aggregate_view(&grids, mode).unwrap();
        dims_ok &= got.len() == if mode.with_std() { 1536 } else { 768 };
        for (g, e) in got.iter().zip(&expect) {
            worst = worst.max((g - e).abs() / e.abs().max(1e-12));
        }
        if case % 25 == 0 {
            let views: BTreeMap<ViewKind, Vec<f64>> = ViewKind::ALL
                .iter()
                .enumerate()
                .map(|(i, &v)| (v, got.iter().map(|x| x + i as f64).collect()))
                .collect();
            let study = assemble_study(&views).unwrap();
            let expect_study: Vec<f64> = [ViewKind::Lcc, ViewKind::Rcc, ViewKind::Lmlo, ViewKind::Rmlo]
                .iter()
                .flat_map(|v| views[v].clone())
                .collect();
            dims_ok &= study.0 == expect_study;
            dims_ok &= study.dim() == if mode.with_std() { 6144 } else { 3072 };
        }
    }
    report(
        1,
        "aggregation oracle",
        worst <= 1e-6 && dims_ok,
        t.elapsed(),
        Some(Duration::from_secs(30)),
        format!("max relative error {worst:.2e} over 500 instances, dims {{768,1536}}/{{3072,6144}} ok={dims_ok}"),
    );
}

#[test]
fn criterion_2_gradient_suite() {
    let t = Instant::now();
    let mut rng = Xoshiro256::seed_from_u64(2);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    for _ in 0..100 {
        // softmax cross-entropy
        let k = 2 + rng.index(6);
        let z: Vec<f64> = (0..k).map(|_| 3.0 * rng.normal()).collect();
        let target = rng.index(k);
        let (_, g) = softmax_ce(&z, target);
        note("softmax-ce", max_rel(&g, &central_diff(&|x| softmax_ce(x, target).0, &z)));

        // masked BCE through softplus, cumulative sum and 1 − exp(−·)
        let z: Vec<f64> = (0..5).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let labels: [bool; 5] = std::array::from_fn(|_| rng.bernoulli(0.5));
        let mut mask: [bool; 5] = std::array::from_fn(|_| rng.bernoulli(0.7));
        mask[rng.index(5)] = true;
        let (_, g) = masked_bce(&z, &labels, &mask).unwrap();
        note("masked-bce", max_rel(&g, &central_diff(&|x| masked_bce(x, &labels, &mask).unwrap().0, &z)));

        // focal loss with label smoothing
        let cfg = FocalConfig {
            alpha: rng.uniform(0.1, 0.9),
            gamma: rng.uniform(0.0, 3.0),
            smoothing: rng.uniform(0.0, 0.2),
        };
        let logit = 4.0 * rng.normal();
        let positive = rng.bernoulli(0.5);
        let (_, g) = focal_loss(logit, positive, &cfg);
        note("focal", max_rel(&[g], &central_diff(&|x| focal_loss(x[0], positive, &cfg).0, &[logit])));

        // smooth-L1, away from the kinks at |d| = β
        let beta = rng.uniform(0.2, 2.0);
        let target: [f64; 4] = std::array::from_fn(|_| rng.normal());
        let pred: [f64; 4] = std::array::from_fn(|i| loop {
            let p = target[i] + 2.0 * rng.normal();
            if ((p - target[i]).abs() - beta).abs() > 1e-2 {
                break p;
            }
        });
        let (_, g) = smooth_l1(&pred, &target, beta);
        let f = |x: &[f64]| smooth_l1(&[x[0], x[1], x[2], x[3]], &target, beta).0;
        note("smooth-l1", max_rel(&g, &central_diff(&f, &pred)));

        // combined detection loss over logits and deltas
        let n = 3 + rng.index(8);
        let targets: Vec<AnchorTarget> = (0..n)
            .map(|i| {
                if i == 0 || rng.bernoulli(0.3) {
                    AnchorTarget::Positive(std::array::from_fn(|_| rng.normal()))
                } else {
                    AnchorTarget::Negative
                }
            })
            .collect();
        let mut x: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
        for t in &targets {
            for k in 0..4 {
                let tk = if let AnchorTarget::Positive(v) = t { v[k] } else { 0.0 };
                x.push(loop {
                    let p = tk + 2.0 * rng.normal();
                    if ((p - tk).abs() - beta).abs() > 1e-2 {
                        break p;
                    }
                });
            }
        }
        let lambda = rng.uniform(0.5, 2.0);
        let eval = |x: &[f64]| {
            let deltas: Vec<[f64; 4]> = (0..n).map(|i| std::array::from_fn(|k| x[n + 4 * i + k])).collect();
            detection_loss(&x[..n], &deltas, &targets, &cfg, beta, lambda)
        };
        let out = eval(&x);
        let mut g = out.grad_logits.clone();
        g.extend(out.grad_deltas.iter().flatten());
        note("detection", max_rel(&g, &central_diff(&|x| eval(x).total, &x)));
    }
    let overall = worst.values().cloned().fold(0.0, f64::max);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    report(2, "gradient suite", overall <= 1e-5, t.elapsed(), Some(Duration::from_secs(60)), detail);
}

#[test]
fn criterion_3_risk_monotonicity() {
    let t = Instant::now();
    let mut rng = Xoshiro256::seed_from_u64(3);
    let mut violations = 0;
    let mut flip_changes = 0;
    for i in 0..10_000 {
        let spread = [0.5, 3.0, 30.0][i % 3];
        let z: Vec<f64> = (0..5).map(|_| spread * rng.normal()).collect();
        let r = hazards_to_risk(&z).0;
        if r.windows(2).any(|w| w[1] < w[0]) || r.iter().any(|v| !(0.0..=1.0).contains(v)) {
            violations += 1;
        }
        let labels: [bool; 5] = std::array::from_fn(|_| rng.bernoulli(0.5));
        let mut mask: [bool; 5] = std::array::from_fn(|_| rng.bernoulli(0.6));
        mask[rng.index(5)] = true;
        let mut flipped = labels;
        for k in 0..5 {
            if !mask[k] {
                flipped[k] = !flipped[k];
            }
        }
        let a = masked_bce(&z, &labels, &mask).unwrap().0;
        let b = masked_bce(&z, &flipped, &mask).unwrap().0;
        if a - b != 0.0 {
            flip_changes += 1;
        }
    }
    report(
        3,
        "risk monotonicity",
        violations == 0 && flip_changes == 0,
        t.elapsed(),
        None,
        format!("{violations} non-monotone curves in 10000; {flip_changes} loss changes from masked flips"),
    );
}

fn density_cohort(seed: u64) -> Dataset {
    let (mut ds, _) = generate_cohort(seed, &CohortSpec { n_exams: 1000, n_slices: 2, ..Default::default() });
    for (i, e) in ds.exams.iter().enumerate() {
        ds.splits.insert(e.exam_id.clone(), if i < 800 { Split::Train } else { Split::Test });
    }
    ds
}

fn density_accuracy(ds: &Dataset, store: &EmbeddingStore, cfg: &DensityConfig) -> f64 {
    let train = load_density_split(store, ds, Split::Train, cfg.mode).unwrap();
    let test = load_density_split(store, ds, Split::Test, cfg.mode).unwrap();
    assert_eq!((train.len(), test.len()), (800, 200));
    let run = train_density(&train, &[], cfg).unwrap();
    let boot = BootstrapConfig { repetitions: 200, ..Default::default() };
    evaluate_density(&run, &test, &boot).unwrap().accuracy.point
}

#[test]
fn criterion_4_density_end_to_end() {
    let t = Instant::now();
    let ds = density_cohort(4);
    let dir = tempfile::tempdir().unwrap();
    let separable = EmbeddingStore::open(dir.path().join("separable")).unwrap();
    synthetic_embedding_provider(4, &ds, &SignalSpec::default(), &separable).unwrap();
    let null = EmbeddingStore::open(dir.path().join("null")).unwrap();
    let null_spec = SignalSpec { density_separation: 0.0, risk_separation: 0.0, ..Default::default() };
    synthetic_embedding_provider(4, &ds, &null_spec, &null).unwrap();

    let cfg = DensityConfig { seed: 4, ..Default::default() };
    let acc = density_accuracy(&ds, &separable, &cfg);
    let acc_null = density_accuracy(&ds, &null, &cfg);

    let mut means = Vec::new();
    for fraction in [0.05, 0.25, 1.0] {
        let accs: Vec<f64> = (0..5)
            .map(|s| {
                density_accuracy(&ds, &separable, &DensityConfig { fraction, fraction_seed: s, seed: s, ..cfg.clone() })
            })
            .collect();
        means.push(accs.iter().sum::<f64>() / 5.0);
    }
    let monotone = means.windows(2).all(|w| w[1] >= w[0] - 0.02);
    report(
        4,
        "density end-to-end",
        acc >= 0.95 && (0.20..=0.30).contains(&acc_null) && monotone,
        t.elapsed(),
        Some(Duration::from_secs(300)),
        format!(
            "accuracy {acc:.3}; separation 0 → {acc_null:.3}; mean accuracy at 5/25/100% = {:.3}/{:.3}/{:.3}",
            means[0], means[1], means[2]
        ),
    );
}

#[test]
fn criterion_5_risk_end_to_end() {
    let t = Instant::now();
    let spec = CohortSpec { n_exams: 5000, n_slices: 2, base_hazard: 0.08, ..Default::default() };
    let (ds, _) = generate_cohort(5, &spec);
    let dir = tempfile::tempdir().unwrap();
    let store = EmbeddingStore::open(dir.path()).unwrap();
    let signal = SignalSpec { dim: 16, grid_side: 2, density_separation: 0.0, ..Default::default() };
    synthetic_embedding_provider(5, &ds, &signal, &store).unwrap();
    let cfg = RiskConfig { seed: 5, ..Default::default() };
    let boot = BootstrapConfig { repetitions: 200, seed: 5, ..Default::default() };

    let run_once = |ds: &Dataset| {
        let (train, _) = load_risk_split(&store, ds, Split::Train, cfg.mode).unwrap();
        let (val, _) = load_risk_split(&store, ds, Split::Val, cfg.mode).unwrap();
        let (test, _) = load_risk_split(&store, ds, Split::Test, cfg.mode).unwrap();
        let run = train_risk(&train, &val, &cfg).unwrap();
        eval_risk(&run.by_auroc, &test, &boot).unwrap()
    };
    let planted = run_once(&ds);
    let year5 = planted.years[4].auroc.as_ref().map_or(f64::NAN, |i| i.point);

    // Shuffle outcomes across exams so the features no longer carry them.
    let mut permuted = ds.clone();
    let ids: Vec<String> = ds.exams.iter().map(|e| e.exam_id.clone()).collect();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    Xoshiro256::seed_from_u64(55).shuffle(&mut order);
    for (i, &j) in order.iter().enumerate() {
        permuted.outcomes.insert(ids[i].clone(), ds.outcomes[&ids[j]].clone());
    }
    let null = run_once(&permuted);
    let macro_null = null.macro_auroc.as_ref().map_or(f64::NAN, |i| i.point);
    report(
        5,
        "risk end-to-end",
        year5 >= 0.9 && (0.45..=0.55).contains(&macro_null),
        t.elapsed(),
        Some(Duration::from_secs(300)),
        format!(
            "year-5 AUROC {year5:.3} ({} positives); permuted-label macro AUROC {macro_null:.3} over {} years",
            planted.years[4].positives, null.years_in_macro
        ),
    );
}

fn random_box(rng: &mut Xoshiro256, span: u64) -> BBox {
    BBox::new(rng.below(span) as f64, rng.below(span) as f64, 1.0 + rng.below(24) as f64, 1.0 + rng.below(24) as f64)
}

#[test]
fn criterion_6_detection_machinery() {
    let t = Instant::now();
    let spec = PyramidSpec::default();
    let expected_total: usize = [74usize, 37, 18, 9].iter().map(|s| s * s * 9).sum();
    let total = generate_anchors(&spec).boxes.len();

    let mut rng = Xoshiro256::seed_from_u64(6);
    let mut mismatches = BTreeMap::from([("assign", 0), ("nms", 0), ("aggregate", 0), ("froc", 0)]);
    for scene in 0..1000 {
        // assignment
        let anchors: Vec<BBox> = (0..20 + rng.index(30)).map(|_| random_box(&mut rng, 48)).collect();
        let gts: Vec<BBox> = (0..rng.index(5)).map(|_| random_box(&mut rng, 48)).collect();
        let cfg = AssignConfig { pos_iou: 0.5, neg_iou: 0.4, neg_ratio: None };
        if assign_anchors(&anchors, &gts, &cfg, scene) != oracle_assign(&anchors, &gts, 0.5, 0.4) {
            *mismatches.get_mut("assign").unwrap() += 1;
        }
        // suppression within one slice and pooled over slices
        let thr = [0.1, 0.3, 0.5][scene as usize % 3];
        let make = |rng: &mut Xoshiro256, slice: u32| Detection {
            bbox: random_box(rng, 40),
            score: rng.below(6) as f64 / 5.0,
            slice_index: slice,
        };
        let dets: Vec<Detection> = (0..rng.index(25)).map(|_| make(&mut rng, 0)).collect();
        if nms(&dets, thr) != oracle_nms(&dets, thr) {
            *mismatches.get_mut("nms").unwrap() += 1;
        }
        let per_slice: Vec<Vec<Detection>> =
            (0..1 + rng.index(4)).map(|s| (0..rng.index(10)).map(|_| make(&mut rng, s as u32)).collect()).collect();
        let pooled: Vec<Detection> = per_slice.iter().flatten().copied().collect();
        if aggregate_volume(&per_slice, thr) != oracle_nms(&pooled, thr) {
            *mismatches.get_mut("aggregate").unwrap() += 1;
        }
        // FROC on continuous coordinates with tied scores
        let mut gt = BTreeMap::new();
        let mut preds = BTreeMap::new();
        let n_vol = 1 + rng.index(4);
        for v in 0..n_vol {
            let lesions: Vec<BBox> = (0..rng.index(3))
                .map(|_| {
                    BBox::new(
                        rng.uniform(0.0, 200.0),
                        rng.uniform(0.0, 200.0),
                        rng.uniform(5.0, 60.0),
                        rng.uniform(5.0, 60.0),
                    )
                })
                .collect();
            let mut p: Vec<Detection> = Vec::new();
            for l in &lesions {
                if rng.bernoulli(0.7) {
                    let (cx, cy) = centre(l);
                    p.push(Detection {
                        bbox: BBox::from_center(cx + rng.normal() * 15.0, cy + rng.normal() * 15.0, 20.0, 20.0),
                        score: rng.below(5) as f64 / 4.0,
                        slice_index: 0,
                    });
                }
            }
            for _ in 0..rng.index(4) {
                p.push(Detection {
                    bbox: BBox::new(rng.uniform(0.0, 200.0), rng.uniform(0.0, 200.0), 20.0, 20.0),
                    score: rng.below(5) as f64 / 4.0,
                    slice_index: 0,
                });
            }
            if !lesions.is_empty() || rng.bernoulli(0.5) {
                gt.insert(format!("v{v}"), lesions);
            }
            if !p.is_empty() {
                preds.insert(format!("v{v}"), p);
            }
        }
        if gt.values().map(Vec::len).sum::<usize>() > 0 {
            let fp = [0.5, 1.0, 2.0, 4.0];
            let got = froc(&gt, &preds, &fp).unwrap();
            let (curve, sens) = oracle_froc(&gt, &preds, &fp);
            let got_curve: Vec<(f64, f64)> = got.curve.iter().map(|p| (p.mean_fp, p.sensitivity)).collect();
            if got.sensitivities != sens || got_curve != curve {
                *mismatches.get_mut("froc").unwrap() += 1;
            }
        }
    }

    // The worked radius example: box (100,100,40,30) has diagonal 50.
    let lesion = BBox::new(100.0, 100.0, 40.0, 30.0);
    let at = |dx: f64| BBox::from_center(120.0 + dx, 115.0, 10.0, 10.0);
    let radius_ok = match_radius(&lesion) == 25.0 && is_hit(&at(25.0), &lesion) && !is_hit(&at(25.01), &lesion);

    // Phantom training at desk scale.
    let set = PhantomSetSpec::default();
    let train_vols = phantom_volumes(1, 40, &set).unwrap();
    let val_vols = phantom_volumes(2, 12, &set).unwrap();
    let test_vols = phantom_volumes(3, 40, &set).unwrap();
    let train: Vec<SliceExample> = train_vols.iter().flat_map(|v| v.annotated_slices()).collect();
    let run = train_detect_head(&train, &val_vols, &DetectConfig { seed: 6, ..Default::default() }).unwrap();
    let result = evaluate_volumes(&run.model, &test_vols, &FP_POINTS_1_TO_4).unwrap();

    let oracle_ok = mismatches.values().all(|&m| m == 0);
    report(
        6,
        "detection machinery",
        total == 65_250 && total == expected_total && oracle_ok && radius_ok && result.average_sensitivity >= 0.8,
        t.elapsed(),
        Some(Duration::from_secs(600)),
        format!(
            "anchors {total}; oracle mismatches {mismatches:?} over 1000 scenes; radius rule ok={radius_ok}; \
             phantom average sensitivity (1-4 FP) {:.3}, at 4 FP {:.3}",
            result.average_sensitivity, result.sensitivities[3]
        ),
    );
}

#[test]
fn criterion_7_statistics() {
    let t = Instant::now();
    let mut rng = Xoshiro256::seed_from_u64(7);
    let mut auroc_worst = 0.0f64;
    for _ in 0..1000 {
        let n = 2 + rng.index(199);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let levels = 1 + rng.below(20);
        let scores: Vec<f64> = labels.iter().map(|&l| (rng.below(levels) as f64) + if l { 0.7 } else { 0.0 }).collect();
        auroc_worst = auroc_worst.max((auroc(&scores, &labels).unwrap() - oracle_auroc(&scores, &labels)).abs());
    }
    let mcnemar = mcnemar_counts(5, 1);
    let bh = benjamini_hochberg(&[0.01, 0.02, 0.04], 0.05).adjusted;
    let bh_ok = bh.iter().zip([0.03, 0.03, 0.04]).all(|(a, b)| (a - b).abs() < 1e-12);

    // DeLong under the null: two correlated scorers with equal AUC.
    let mut rejections = 0;
    for _ in 0..1000 {
        let labels: Vec<bool> = (0..200).map(|i| i < 100).collect();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for &l in &labels {
            let shared = rng.normal();
            let mu = if l { 1.0 } else { 0.0 };
            a.push(mu + 0.7 * shared + 0.7 * rng.normal());
            b.push(mu + 0.7 * shared + 0.7 * rng.normal());
        }
        if delong_test(&a, &b, &labels).unwrap().p < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / 1000.0;

    // A continuous statistic, so distinct seeds give distinct intervals.
    let values: Vec<f64> = (0..300).map(|_| rng.normal()).collect();
    let metric = |idx: &[usize]| idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64;
    let cfg = BootstrapConfig { repetitions: 1000, seed: 77, ..Default::default() };
    let first = bootstrap_ci(values.len(), metric, &cfg).unwrap();
    let second = bootstrap_ci(values.len(), metric, &cfg).unwrap();
    // Replicate r draws from seed + r, so the comparison seed must not share replicates.
    let other = bootstrap_ci(values.len(), metric, &BootstrapConfig { seed: 77 + 1000, ..cfg.clone() }).unwrap();
    let boot_ok = first == second && first != other;

    report(
        7,
        "statistics",
        auroc_worst < 1e-12 && (mcnemar - 0.21875).abs() < 1e-12 && bh_ok && (0.03..=0.07).contains(&rate) && boot_ok,
        t.elapsed(),
        Some(Duration::from_secs(300)),
        format!(
            "AUROC vs all-pairs max diff {auroc_worst:.1e}; McNemar(5,1) p={mcnemar}; BH {bh:?}; \
             DeLong null rejection rate {rate:.3}; bootstrap deterministic={boot_ok}"
        ),
    );
}

struct SizedSource(BTreeMap<String, u64>);

impl VolumeSource for SizedSource {
    fn fetch_volume(&self, volume: &VolumeRef) -> Result<Vec<u8>, IngestError> {
        Ok(vec![7u8; self.0[&volume.volume_id()] as usize])
    }
}

fn volume(i: usize) -> VolumeRef {
    VolumeRef {
        patient_id: format!("P{i}"),
        exam_id: format!("S{i}"),
        view: ViewKind::ALL[i % 4],
        n_slices: 1,
        acquisition_date: "2020-01-01".into(),
    }
}

#[test]
fn criterion_8_ingest() {
    let t = Instant::now();
    let mut rng = Xoshiro256::seed_from_u64(8);
    let root = tempfile::tempdir().unwrap();
    let pool: Vec<VolumeRef> = (0..8).map(volume).collect();
    let keys: Vec<String> = pool.iter().map(cache_key).collect();
    let mut lru_mismatch = 0;
    for seq in 0..10_000 {
        let sizes: Vec<u64> = (0..pool.len()).map(|_| 1 + rng.below(8)).collect();
        let capacity = 8 + rng.below(16);
        let accesses: Vec<usize> = (0..1 + rng.index(12)).map(|_| rng.index(pool.len())).collect();
        let source = SizedSource(pool.iter().zip(&sizes).map(|(v, &s)| (v.volume_id(), s)).collect());
        let cache = VolumeCache::open(CacheConfig {
            capacity_bytes: capacity,
            root_dir: root.path().join(seq.to_string()),
            prefetch_depth: 1,
        })
        .unwrap();
        for &a in &accesses {
            cache.get_or_fetch(&source, &pool[a]).unwrap();
        }
        let expect: Vec<String> =
            oracle_lru(capacity, &sizes, &accesses).into_iter().map(|k| keys[k].clone()).collect();
        if cache.resident() != expect {
            lru_mismatch += 1;
        }
        std::fs::remove_dir_all(root.path().join(seq.to_string())).unwrap();
    }

    // Allow-list enforcement, observed from the server side.
    let pacs = StubPacs::start("secret").unwrap();
    let vols: Vec<VolumeRef> = (0..6).map(volume).collect();
    for v in &vols {
        pacs.add_volume(v, vec![vec![1, 2, 3]]);
    }
    let allowed: BTreeSet<String> = vols.iter().step_by(2).map(|v| v.study_uid().to_string()).collect();
    let client = DicomWebClient::new(RemoteSource {
        base_url: pacs.base_url().to_string(),
        auth_token: "secret".into(),
        allowed_study_ids: Some(allowed.clone()),
    });
    let mut policy_ok = true;
    for v in &vols {
        let r = client.fetch_volume(v);
        policy_ok &= if allowed.contains(v.study_uid()) { r.is_ok() } else { matches!(r, Err(IngestError::Policy(_))) };
    }
    let log = pacs.requests();
    let leaked = log
        .iter()
        .filter(|r| vols.iter().any(|v| !allowed.contains(v.study_uid()) && r.path.contains(v.study_uid())))
        .count();
    policy_ok &= leaked == 0 && !log.is_empty();

    // Slice preparation against the direct bilinear formula.
    let mut bilinear_worst = 0.0f64;
    let mut scale_worst = 0.0f64;
    for (h, w) in [(1036, 1036), (300, 700), (37, 518), (518, 518), (2, 2)] {
        let raw = RawImage::new(h, w, (0..h * w).map(|_| rng.uniform(0.0, 4095.0)).collect());
        let prepared = prepare_slice(&raw).unwrap();
        let resized: Vec<f64> = (0..518 * 518).map(|i| oracle_bilinear(&raw, 518, i / 518, i % 518)).collect();
        let lo = resized.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = resized.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (p, r) in prepared.pixels().iter().zip(&resized) {
            bilinear_worst = bilinear_worst.max((p - (r - lo) / (hi - lo)).abs());
        }
        for scale in [0.5, 3.0, 1234.5] {
            let again =
                prepare_slice(&RawImage::new(518, 518, prepared.pixels().iter().map(|p| p * scale).collect())).unwrap();
            for (a, b) in again.pixels().iter().zip(prepared.pixels()) {
                scale_worst = scale_worst.max((a - b).abs());
            }
        }
    }

    let phrases = [
        ("The breasts are almost entirely fatty.", DensityCategory::A),
        ("There are scattered areas of fibroglandular density.", DensityCategory::B),
        ("The breasts are heterogeneously dense, which may obscure small masses.", DensityCategory::C),
        ("The breasts are extremely dense, which lowers sensitivity.", DensityCategory::D),
    ];
    let phrases_ok = phrases.iter().all(|(text, cat)| parse_density_report(text).ok() == Some(*cat));
    let conflict_ok = matches!(
        parse_density_report("Heterogeneously dense. Addendum: extremely dense."),
        Err(IngestError::Ambiguous(_))
    );

    report(
        8,
        "ingest",
        lru_mismatch == 0 && policy_ok && bilinear_worst <= 1e-6 && scale_worst == 0.0 && phrases_ok && conflict_ok,
        t.elapsed(),
        None,
        format!(
            "LRU mismatches {lru_mismatch}/10000; {} requests, {leaked} to disallowed studies; bilinear max error \
             {bilinear_worst:.1e}; rescale max change {scale_worst:.1e}; phrases ok={phrases_ok}; conflict flagged={conflict_ok}",
            log.len()
        ),
    );
}

fn tomo(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_tomo")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "tomo {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let steps: [&[&str]; 6] = [
        &["--deterministic", "phantom", "--seed", "9", "--out", "data", "--n-exams", "160"],
        &[
            "--deterministic",
            "embed",
            "--source",
            "synthetic",
            "--manifest",
            "data/manifest.json",
            "--store",
            "store",
            "--seed",
            "9",
        ],
        &[
            "--deterministic",
            "density",
            "train",
            "--store",
            "store",
            "--manifest",
            "data/manifest.json",
            "--seed",
            "9",
            "--out",
            "density.json",
        ],
        &[
            "--deterministic",
            "density",
            "eval",
            "--run",
            "density.json",
            "--split",
            "test",
            "--preds-out",
            "density_preds.json",
        ],
        &[
            "--deterministic",
            "risk",
            "train",
            "--store",
            "store",
            "--records",
            "data/records.json",
            "--seed",
            "9",
            "--out",
            "risk.json",
        ],
        &["--deterministic", "risk", "eval", "--head", "risk.json", "--split", "test", "--by-density"],
    ];
    for s in steps {
        tomo(dir, s);
    }
    let mut out = BTreeMap::new();
    for sub in [".", "data", "store"] {
        for entry in std::fs::read_dir(dir.join(sub)).unwrap() {
            let p = entry.unwrap().path();
            if p.extension().is_some_and(|e| e == "json") {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_9_determinism() {
    let t = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    let ok = first.len() >= 8 && first.keys().eq(second.keys()) && differing.is_empty();
    report(
        9,
        "determinism",
        ok,
        t.elapsed(),
        None,
        format!("{} result files compared, {} differ {differing:?}", first.len(), differing.len()),
    );
}
