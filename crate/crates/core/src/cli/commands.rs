use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::files::{group_boxes, group_detections, read_json, read_payload, Artifact, BoxRecord, CasePrediction};
use super::{data, CliError, Ctx, CACHE_DIR_ENV};
use super::{
    CompareArgs, DensityEvalArgs, DensityTrainArgs, DetectEvalArgs, DetectPredictArgs, DetectTrainArgs, EmbedArgs,
    EvalCommon, FetchArgs, PhantomArgs, RiskEvalArgs, RiskTrainArgs, SubgroupArgs,
};
use crate::density::{evaluate_density, load_density_split, train_density, DensityConfig, DensityRun};
use crate::detect::{
    froc, train_detect_head, BBox, DetectConfig, DetectModel, DetectRun, Detector, SliceExample, VolumeExample,
};
use crate::embeddings::pixel::PatchEmbedder;
use crate::embeddings::{
    synthetic_embedding_provider, AggregationMode, EmbeddingKey, EmbeddingStore, SignalSpec, TokenGrid,
};
use crate::ingest::{
    generate_cohort, phantom_for_volume, prepare_slice, CacheConfig, CohortSpec, DicomWebClient, IngestError,
    Prefetcher, RemoteSource, VolumeCache,
};
use crate::model::{Dataset, Demographics, Split, VolumeRef};
use crate::risk::{eval_risk, load_risk_split, subgroup_risk, train_risk, RiskConfig, RiskRun, YEARS};
use crate::stats::{
    delong_test, mcnemar_test, subgroup_table, BootstrapConfig, GroupKey, PairedOutcomes, SubgroupSample,
};

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn open_store(path: &Path) -> Result<EmbeddingStore, CliError> {
    EmbeddingStore::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Phantom slices for `volume`, prepared and embedded.
pub fn render_volume_tokens(
    seed: u64,
    dataset: &Dataset,
    volume: &VolumeRef,
    embedder: &PatchEmbedder,
) -> Result<Vec<TokenGrid>, IngestError> {
    let phantom = phantom_for_volume(seed, dataset, volume);
    (0..phantom.n_slices()).map(|k| Ok(embedder.embed(&prepare_slice(&phantom.slice(k))?))).collect()
}

/// Fall back to a path recorded in the training artifact.
fn inherited(
    ctx: &mut Ctx,
    key: &str,
    flag: Option<PathBuf>,
    run: &super::files::RunInfo,
) -> Result<PathBuf, CliError> {
    let recorded = run.config.get(key).and_then(|v| v.as_str()).map(PathBuf::from);
    ctx.require(key, flag.or(recorded))
}

fn bootstrap_config(ctx: &mut Ctx, common_reps: Option<usize>, seed: Option<u64>) -> Result<BootstrapConfig, CliError> {
    let repetitions = ctx.get("bootstrap", common_reps, 1000)?;
    let seed = ctx.seed(seed)?;
    Ok(BootstrapConfig { repetitions, seed, ..Default::default() })
}

fn default_eval_path(model: &Path, split: &str) -> PathBuf {
    let stem = model.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().to_string());
    model.with_file_name(format!("{stem}.{split}.eval.json"))
}

pub(super) fn phantom(ctx: &mut Ctx, a: PhantomArgs) -> Result<(), CliError> {
    let seed = ctx.seed(a.seed)?;
    let out: PathBuf = ctx.require("out", a.out)?;
    let d = CohortSpec::default();
    let spec = CohortSpec {
        n_exams: ctx.get("n_exams", a.n_exams, d.n_exams)?,
        n_slices: ctx.get("n_slices", a.n_slices, d.n_slices)?,
        lesion_rate: ctx.get("lesion_rate", a.lesion_rate, d.lesion_rate)?,
        censor_rate: ctx.get("censor_rate", a.censor_rate, d.censor_rate)?,
        risk_coef: ctx.get("risk_coef", a.risk_coef, d.risk_coef)?,
        ..d
    };
    if !(0.0..=1.0).contains(&spec.lesion_rate) || !(0.0..=1.0).contains(&spec.censor_rate) {
        return Err(CliError::Usage("rates must lie in [0, 1]".into()));
    }
    let volumes = ctx.get("volumes", a.volumes.then_some(true), false)?;
    let (ds, _) = generate_cohort(seed, &spec);

    ctx.write_bytes(&out.join("manifest.json"), ds.to_json().as_bytes())?;
    let records = Dataset { annotations: Vec::new(), ..ds.clone() };
    ctx.write_bytes(&out.join("records.json"), records.to_json().as_bytes())?;
    let demo: BTreeMap<&str, &Demographics> =
        ds.exams.iter().filter_map(|e| e.demographics.as_ref().map(|d| (e.exam_id.as_str(), d))).collect();
    ctx.write_bytes(&out.join("demo.json"), &serde_json::to_vec_pretty(&demo).map_err(data)?)?;
    let gt: Vec<BoxRecord> = ds.annotations.iter().map(BoxRecord::from_annotation).collect();
    ctx.write_bytes(&out.join("annotations.json"), &serde_json::to_vec_pretty(&gt).map_err(data)?)?;

    if volumes {
        let root = out.join("pacs");
        let all: Vec<&VolumeRef> = ds.exams.iter().flat_map(|e| e.views.values()).collect();
        all.par_iter().try_for_each(|v| -> Result<(), CliError> {
            let dir = root.join(v.study_uid()).join(v.series_uid());
            std::fs::create_dir_all(&dir).map_err(data)?;
            for (i, bytes) in phantom_for_volume(seed, &ds, v).instances().into_iter().enumerate() {
                let path = dir.join(format!("{}.{:04}", v.series_uid(), i + 1));
                crate::embeddings::atomic_write(&path, &bytes).map_err(data)?;
            }
            Ok(())
        })?;
        ctx.produced.push(root);
    }
    ctx.write_artifact(&out.join("cohort.json"), &spec)
}

#[derive(Debug, Serialize)]
struct FetchRow {
    volume_id: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
}

#[derive(Debug, Serialize)]
struct FetchReport {
    volumes: Vec<FetchRow>,
    resident: Vec<String>,
    resident_bytes: u64,
}

pub(super) fn fetch(ctx: &mut Ctx, a: FetchArgs) -> Result<(), CliError> {
    let manifest: PathBuf = ctx.require("manifest", a.manifest)?;
    let env_dir = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from);
    let cache_dir: PathBuf = match ctx.opt("cache_dir", a.cache_dir)? {
        Some(d) => d,
        None => ctx.require("cache_dir", env_dir)?,
    };
    let capacity_bytes: u64 = ctx.require("capacity_bytes", a.capacity_bytes)?;
    let prefetch_depth = ctx.get("prefetch_depth", a.prefetch_depth, 4)?;
    let base_url: String = ctx.require("base_url", a.base_url)?;
    // Kept out of the recorded config.
    let auth_token = match a.token {
        Some(t) => t,
        None => ctx.lookup::<String>("token")?.or_else(|| std::env::var("TOMO_TOKEN").ok()).unwrap_or_default(),
    };
    let allow = if a.allow_study.is_empty() { None } else { Some(a.allow_study) };
    let allow: Option<Vec<String>> = ctx.opt("allow_study", allow)?;
    let out = ctx.get("out", a.out, cache_dir.join("fetch-report.json"))?;

    let ds = load_dataset(&manifest)?;
    let config = CacheConfig { capacity_bytes, root_dir: cache_dir, prefetch_depth };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let cache = Arc::new(VolumeCache::open(config).map_err(data)?);
    let source =
        RemoteSource { base_url, auth_token, allowed_study_ids: allow.map(|v| v.into_iter().collect::<BTreeSet<_>>()) };
    let client = Arc::new(DicomWebClient::new(source));
    let volumes: Vec<VolumeRef> = ds.exams.iter().flat_map(|e| e.views.values().cloned()).collect();
    let mut rows: Vec<FetchRow> = Prefetcher::spawn(cache.clone(), client, volumes)
        .map(|(v, r)| {
            let volume_id = v.volume_id();
            match r {
                Ok(path) => FetchRow { volume_id, status: "ok", path: Some(path), detail: None },
                Err(e @ IngestError::Policy(_)) => {
                    FetchRow { volume_id, status: "denied", path: None, detail: Some(e.to_string()) }
                }
                Err(e) => FetchRow { volume_id, status: "error", path: None, detail: Some(e.to_string()) },
            }
        })
        .collect();
    rows.sort_by(|x, y| x.volume_id.cmp(&y.volume_id));
    let failed = rows.iter().filter(|r| r.status == "error").count();
    let report = FetchReport { volumes: rows, resident: cache.resident(), resident_bytes: cache.total_bytes() };
    ctx.write_artifact(&out, &report)?;
    if failed > 0 {
        return Err(CliError::Data(format!("{failed} volume(s) failed to fetch; see {}", out.display())));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EmbedSummary {
    source: String,
    tensors: usize,
}

pub(super) fn embed(ctx: &mut Ctx, a: EmbedArgs) -> Result<(), CliError> {
    let source: String = ctx.get("source", a.source, "synthetic".into())?;
    let manifest: PathBuf = ctx.require("manifest", a.manifest)?;
    let store_dir: PathBuf = ctx.require("store", a.store)?;
    let seed = ctx.seed(a.seed)?;
    let ds = load_dataset(&manifest)?;
    let store = open_store(&store_dir)?;
    let tensors = match source.as_str() {
        "synthetic" => {
            let d = SignalSpec::default();
            let spec = SignalSpec {
                dim: ctx.get("dim", a.dim, d.dim)?,
                grid_side: ctx.get("grid_side", a.grid_side, d.grid_side)?,
                n_slices: ctx.get("n_slices", a.n_slices, d.n_slices)?,
                density_separation: ctx.get("density_separation", a.density_separation, d.density_separation)?,
                risk_separation: ctx.get("risk_separation", a.risk_separation, d.risk_separation)?,
                exam_noise: ctx.get("exam_noise", a.exam_noise, d.exam_noise)?,
                token_noise: ctx.get("token_noise", a.token_noise, d.token_noise)?,
            };
            if spec.dim == 0 || spec.grid_side == 0 || spec.n_slices == 0 {
                return Err(CliError::Usage("dim, grid-side and n-slices must be positive".into()));
            }
            synthetic_embedding_provider(seed, &ds, &spec, &store).map_err(data)?
        }
        "phantom" => {
            let dim = ctx.get("dim", a.dim, 16)?;
            let embedder = PatchEmbedder::new(dim, seed);
            let all: Vec<&VolumeRef> = ds.exams.iter().flat_map(|e| e.views.values()).collect();
            all.par_iter()
                .map(|v| {
                    let grids = render_volume_tokens(seed, &ds, v, &embedder).map_err(data)?;
                    let t = TokenGrid::stack(&grids).map_err(data)?;
                    store.write(&EmbeddingKey::new(&v.patient_id, &v.exam_id, v.view), &t).map_err(data)
                })
                .collect::<Result<Vec<()>, CliError>>()?
                .len()
        }
        other => return Err(CliError::Usage(format!("unknown embedding source {other:?}"))),
    };
    ctx.write_artifact(&store_dir.join("embed.json"), &EmbedSummary { source, tensors })
}

pub(super) fn density_train(ctx: &mut Ctx, a: DensityTrainArgs) -> Result<(), CliError> {
    let store_dir: PathBuf = ctx.require("store", a.store)?;
    let manifest: PathBuf = ctx.require("manifest", a.manifest)?;
    let d = DensityConfig::default();
    let mode: AggregationMode = ctx.parse("mode", a.mode, "patch-mean-std")?;
    let fraction = ctx.get("fraction", a.fraction, d.fraction)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Usage(format!("--fraction {fraction} must lie in (0, 1]")));
    }
    let cfg = DensityConfig {
        mode,
        fraction,
        fraction_seed: ctx.get("fraction_seed", a.fraction_seed, d.fraction_seed)?,
        seed: ctx.seed(a.seed)?,
        epochs: ctx.get("epochs", a.epochs, d.epochs)?,
        batch_size: ctx.get("batch_size", a.batch_size, d.batch_size)?,
        lr: ctx.get("lr", a.lr, d.lr)?,
        adamw: crate::train::AdamWConfig {
            weight_decay: ctx.get("weight_decay", a.weight_decay, d.adamw.weight_decay)?,
            ..d.adamw
        },
    };
    let out = ctx.get("out", a.out, PathBuf::from("density_run.json"))?;
    let ds = load_dataset(&manifest)?;
    let store = open_store(&store_dir)?;
    let train = load_density_split(&store, &ds, Split::Train, mode).map_err(data)?;
    let val = load_density_split(&store, &ds, Split::Val, mode).map_err(data)?;
    log::info!("density: {} train / {} validation exams", train.len(), val.len());
    let run = train_density(&train, &val, &cfg).map_err(data)?;
    ctx.write_artifact(&out, &run)
}

fn write_preds(ctx: &mut Ctx, path: Option<PathBuf>, preds: &[CasePrediction]) -> Result<(), CliError> {
    if let Some(p) = ctx.opt("preds_out", path)? {
        ctx.write_artifact(&p, &preds)?;
    }
    Ok(())
}

fn eval_split(ctx: &mut Ctx, common: &mut EvalCommon) -> Result<(String, Split), CliError> {
    let name: String = ctx.get("split", common.split.take(), "test".into())?;
    let split = name.parse().map_err(CliError::Usage)?;
    Ok((name, split))
}

pub(super) fn density_eval(ctx: &mut Ctx, mut a: DensityEvalArgs) -> Result<(), CliError> {
    let run_path: PathBuf = ctx.require("run", a.run)?;
    let artifact: Artifact<DensityRun> = read_json(&run_path)?;
    let store_dir = inherited(ctx, "store", a.common.store.take(), &artifact.run)?;
    let manifest = inherited(ctx, "manifest", a.manifest, &artifact.run)?;
    let (split_name, split) = eval_split(ctx, &mut a.common)?;
    let boot = bootstrap_config(ctx, a.common.bootstrap, a.common.seed)?;
    let out = ctx.get("out", a.common.out, default_eval_path(&run_path, &split_name))?;
    let run = artifact.result;
    let ds = load_dataset(&manifest)?;
    let store = open_store(&store_dir)?;
    let test = load_density_split(&store, &ds, split, run.config.mode).map_err(data)?;
    let eval = evaluate_density(&run, &test, &boot).map_err(data)?;
    ctx.write_artifact(&out, &eval)?;
    let preds: Vec<CasePrediction> = test
        .iter()
        .map(|s| CasePrediction {
            id: s.exam_id.clone(),
            prediction: Some(eval.predictions[&s.exam_id].to_string()),
            reference: Some(s.label.to_string()),
            score: None,
            label: None,
        })
        .collect();
    write_preds(ctx, a.common.preds_out, &preds)
}

pub(super) fn risk_train(ctx: &mut Ctx, a: RiskTrainArgs) -> Result<(), CliError> {
    let store_dir: PathBuf = ctx.require("store", a.store)?;
    let records: PathBuf = ctx.require("records", a.records)?;
    let d = RiskConfig::default();
    let cfg = RiskConfig {
        mode: ctx.parse("mode", a.mode, "patch-mean-std")?,
        seed: ctx.seed(a.seed)?,
        epochs: ctx.get("epochs", a.epochs, d.epochs)?,
        batch_size: ctx.get("batch_size", a.batch_size, d.batch_size)?,
        lr: ctx.get("lr", a.lr, d.lr)?,
        adamw: crate::train::AdamWConfig {
            weight_decay: ctx.get("weight_decay", a.weight_decay, d.adamw.weight_decay)?,
            ..d.adamw
        },
    };
    let out = ctx.get("out", a.out, PathBuf::from("risk_head.json"))?;
    let ds = load_dataset(&records)?;
    let store = open_store(&store_dir)?;
    let (train, skipped_train) = load_risk_split(&store, &ds, Split::Train, cfg.mode).map_err(data)?;
    let (val, skipped_val) = load_risk_split(&store, &ds, Split::Val, cfg.mode).map_err(data)?;
    log::info!(
        "risk: {} train / {} validation exams ({} and {} unusable)",
        train.len(),
        val.len(),
        skipped_train,
        skipped_val
    );
    let run = train_risk(&train, &val, &cfg).map_err(data)?;
    ctx.write_artifact(&out, &run)
}

#[derive(Debug, Serialize, Deserialize)]
struct RiskReport {
    split: String,
    checkpoint: String,
    epoch: usize,
    n: usize,
    skipped: usize,
    overall: crate::risk::RiskEval,
    #[serde(skip_serializing_if = "Option::is_none")]
    by_density: Option<Vec<crate::risk::DensityGroupRisk>>,
}

pub(super) fn risk_eval(ctx: &mut Ctx, mut a: RiskEvalArgs) -> Result<(), CliError> {
    let head_path: PathBuf = ctx.require("head", a.head)?;
    let artifact: Artifact<RiskRun> = read_json(&head_path)?;
    let store_dir = inherited(ctx, "store", a.common.store.take(), &artifact.run)?;
    let records = inherited(ctx, "records", a.records, &artifact.run)?;
    let (split_name, split) = eval_split(ctx, &mut a.common)?;
    let checkpoint: String = ctx.get("checkpoint", a.checkpoint, "auroc".into())?;
    let by_density = ctx.get("by_density", a.by_density.then_some(true), false)?;
    let min_events = ctx.get("min_events", a.min_events, 5)?;
    let preds_year = ctx.get("preds_year", a.preds_year, YEARS)?;
    if !(1..=YEARS).contains(&preds_year) {
        return Err(CliError::Usage(format!("--preds-year must lie in 1..={YEARS}")));
    }
    let boot = bootstrap_config(ctx, a.common.bootstrap, a.common.seed)?;
    let out = ctx.get("out", a.common.out, default_eval_path(&head_path, &split_name))?;
    let run = artifact.result;
    let (head, epoch) = match checkpoint.as_str() {
        "auroc" => (&run.by_auroc, run.by_auroc_epoch),
        "loss" => (&run.by_loss, run.by_loss_epoch),
        other => return Err(CliError::Usage(format!("unknown checkpoint {other:?}; use auroc or loss"))),
    };
    let ds = load_dataset(&records)?;
    let store = open_store(&store_dir)?;
    let (samples, skipped) = load_risk_split(&store, &ds, split, run.config.mode).map_err(data)?;
    let overall = eval_risk(head, &samples, &boot).map_err(data)?;
    let groups = if by_density { Some(subgroup_risk(head, &samples, min_events, &boot).map_err(data)?) } else { None };
    let report =
        RiskReport { split: split_name, checkpoint, epoch, n: samples.len(), skipped, overall, by_density: groups };
    ctx.write_artifact(&out, &report)?;
    let k = preds_year - 1;
    let preds = samples
        .iter()
        .filter(|s| s.record.mask[k])
        .map(|s| {
            Ok(CasePrediction {
                id: s.record.exam_id.clone(),
                prediction: None,
                reference: None,
                score: Some(head.predict(&s.features).map_err(data)?.0[k]),
                label: Some(s.record.labels[k]),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    write_preds(ctx, a.common.preds_out, &preds)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetectTrained {
    token_dim: usize,
    embed_seed: u64,
    render_seed: u64,
    run: DetectRun,
}

fn render_examples(
    ds: &Dataset,
    volumes: &[&VolumeRef],
    render_seed: u64,
    embedder: &PatchEmbedder,
) -> Result<Vec<VolumeExample>, CliError> {
    volumes
        .par_iter()
        .map(|v| {
            let grids = render_volume_tokens(render_seed, ds, v, embedder).map_err(data)?;
            let lesions = ds
                .annotations
                .iter()
                .filter(|a| a.volume == **v)
                .map(|a| (a.slice_index, BBox::new(a.x, a.y, a.w, a.h)))
                .collect();
            Ok(VolumeExample {
                volume_id: v.volume_id(),
                slices: grids.into_iter().map(|g| g.patches).collect(),
                lesions,
            })
        })
        .collect()
}

fn split_volumes(ds: &Dataset, split: Split) -> Vec<&VolumeRef> {
    ds.exams_in(split).flat_map(|e| e.views.values()).collect()
}

pub(super) fn detect_train(ctx: &mut Ctx, a: DetectTrainArgs) -> Result<(), CliError> {
    let manifest: PathBuf = ctx.require("manifest", a.manifest)?;
    let d = DetectConfig::default();
    let cfg = DetectConfig {
        seed: ctx.seed(a.seed)?,
        epochs: ctx.get("epochs", a.epochs, d.epochs)?,
        lr: ctx.get("lr", a.lr, d.lr)?,
        cls_box_ratio: ctx.get("cls_box_ratio", a.cls_box_ratio, d.cls_box_ratio)?,
        ..d
    };
    if cfg.cls_box_ratio.is_nan() || cfg.cls_box_ratio <= 0.0 {
        return Err(CliError::Usage("--cls-box-ratio must be positive".into()));
    }
    let render_seed = ctx.get("render_seed", a.render_seed, 0)?;
    let token_dim = ctx.get("token_dim", a.token_dim, 16)?;
    let embed_seed = ctx.get("embed_seed", a.embed_seed, 7)?;
    let out = ctx.get("out", a.out, PathBuf::from("detect_model.json"))?;
    let ds = load_dataset(&manifest)?;
    let embedder = PatchEmbedder::new(token_dim, embed_seed);
    let annotated: BTreeSet<String> = ds.annotations.iter().map(|a| a.volume.volume_id()).collect();
    let train_vols: Vec<&VolumeRef> =
        split_volumes(&ds, Split::Train).into_iter().filter(|v| annotated.contains(&v.volume_id())).collect();
    let train: Vec<SliceExample> =
        render_examples(&ds, &train_vols, render_seed, &embedder)?.iter().flat_map(|v| v.annotated_slices()).collect();
    let mut val = render_examples(&ds, &split_volumes(&ds, Split::Val), render_seed, &embedder)?;
    if val.iter().all(|v| v.lesions.is_empty()) {
        val.clear();
    }
    log::info!("detect: {} annotated slices, {} validation volumes", train.len(), val.len());
    let run = train_detect_head(&train, &val, &cfg).map_err(data)?;
    ctx.write_artifact(&out, &DetectTrained { token_dim, embed_seed, render_seed, run })
}

pub(super) fn detect_predict(ctx: &mut Ctx, a: DetectPredictArgs) -> Result<(), CliError> {
    let model_path: PathBuf = ctx.require("model", a.model)?;
    let artifact: Artifact<DetectTrained> = read_json(&model_path)?;
    let trained = artifact.result;
    let manifest = inherited(ctx, "manifest", a.manifest, &artifact.run)?;
    let split_name: String = ctx.get("split", a.split, "test".into())?;
    let split: Split = split_name.parse().map_err(CliError::Usage)?;
    let render_seed = ctx.get("render_seed", a.render_seed, trained.render_seed)?;
    let out = ctx.get("out", a.out, PathBuf::from("detect_preds.json"))?;
    let gt_out: Option<PathBuf> = ctx.opt("gt_out", a.gt_out)?;
    let ds = load_dataset(&manifest)?;
    let model: &DetectModel = &trained.run.model;
    let detector = Detector::new(model);
    let embedder = PatchEmbedder::new(trained.token_dim, trained.embed_seed);
    let volumes = split_volumes(&ds, split);
    let examples = render_examples(&ds, &volumes, render_seed, &embedder)?;
    let per_volume = examples
        .par_iter()
        .map(|v| {
            let dets = detector.detect_volume(&v.slices).map_err(data)?;
            Ok(dets.iter().map(|d| BoxRecord::from_detection(&v.volume_id, d)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let preds: Vec<BoxRecord> = per_volume.into_iter().flatten().collect();
    ctx.write_artifact(&out, &preds)?;
    if let Some(p) = gt_out {
        let ids: BTreeSet<String> = volumes.iter().map(|v| v.volume_id()).collect();
        let gt: Vec<BoxRecord> = ds
            .annotations
            .iter()
            .filter(|a| ids.contains(&a.volume.volume_id()))
            .map(BoxRecord::from_annotation)
            .collect();
        ctx.write_bytes(&p, &serde_json::to_vec_pretty(&gt).map_err(data)?)?;
    }
    Ok(())
}

fn parse_fp(s: &str) -> Result<Vec<f64>, CliError> {
    let fp = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("--fp {t:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if fp.is_empty() || fp.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(CliError::Usage("--fp needs non-negative rates".into()));
    }
    Ok(fp)
}

pub(super) fn detect_eval(ctx: &mut Ctx, a: DetectEvalArgs) -> Result<(), CliError> {
    let preds_path: PathBuf = ctx.require("preds", a.preds)?;
    let gt_path: PathBuf = ctx.require("gt", a.gt)?;
    let fp_text: String = ctx.get("fp", a.fp, "1,2,3,4".into())?;
    let fp = parse_fp(&fp_text)?;
    let manifest: Option<PathBuf> = ctx.opt("manifest", a.manifest)?;
    let split: Option<String> = ctx.opt("split", a.split)?;
    let out_dir = ctx.get("out_dir", a.out_dir, PathBuf::from("."))?;
    let preds: Vec<BoxRecord> = read_payload(&preds_path)?;
    let gt_records: Vec<BoxRecord> = read_payload(&gt_path)?;
    let mut gt = group_boxes(&gt_records);
    let mut dets = group_detections(&preds)?;
    if let Some(m) = manifest {
        let ds = load_dataset(&m)?;
        let split: Split = split.as_deref().unwrap_or("test").parse().map_err(CliError::Usage)?;
        for v in split_volumes(&ds, split) {
            gt.entry(v.volume_id()).or_default();
            dets.entry(v.volume_id()).or_default();
        }
    }
    let result = froc(&gt, &dets, &fp).map_err(data)?;
    ctx.write_bytes(&out_dir.join("froc_sensitivity.csv"), result.to_csv().as_bytes())?;
    ctx.write_bytes(&out_dir.join("froc_curve.csv"), result.curve_csv().as_bytes())?;
    ctx.write_artifact(&out_dir.join("froc.json"), &result)
}

/// Paired test selected by `stats compare --test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum StatsTest {
    Mcnemar,
    Delong,
}

#[derive(Debug, Serialize)]
struct CompareReport {
    test: StatsTest,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    discordant: Option<(u64, u64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delong: Option<crate::stats::DelongResult>,
    p: f64,
}

fn by_id(preds: Vec<CasePrediction>, path: &Path) -> Result<BTreeMap<String, CasePrediction>, CliError> {
    let mut out = BTreeMap::new();
    for p in preds {
        if out.insert(p.id.clone(), p).is_some() {
            return Err(CliError::Data(format!("{}: duplicate case id", path.display())));
        }
    }
    Ok(out)
}

fn correct(p: &CasePrediction) -> Result<bool, CliError> {
    match (&p.prediction, &p.reference) {
        (Some(a), Some(b)) => Ok(a == b),
        _ => Err(CliError::Data(format!("case {} lacks prediction or reference", p.id))),
    }
}

fn ranked(p: &CasePrediction) -> Result<(f64, bool), CliError> {
    match (p.score, p.label) {
        (Some(s), Some(l)) => Ok((s, l)),
        _ => Err(CliError::Data(format!("case {} lacks score or label", p.id))),
    }
}

pub(super) fn stats_compare(ctx: &mut Ctx, a: CompareArgs) -> Result<(), CliError> {
    let pa: PathBuf = ctx.require("preds_a", a.preds_a)?;
    let pb: PathBuf = ctx.require("preds_b", a.preds_b)?;
    let test_name: String = ctx.require("test", a.test)?;
    let test = match test_name.as_str() {
        "mcnemar" => StatsTest::Mcnemar,
        "delong" => StatsTest::Delong,
        other => return Err(CliError::Usage(format!("unknown test {other:?}; use mcnemar or delong"))),
    };
    let out = ctx.get("out", a.out, PathBuf::from("compare.json"))?;
    let a_map = by_id(read_payload(&pa)?, &pa)?;
    let b_map = by_id(read_payload(&pb)?, &pb)?;
    if !a_map.keys().eq(b_map.keys()) {
        return Err(CliError::Data("prediction files cover different cases".into()));
    }
    let n = a_map.len();
    let report = match test {
        StatsTest::Mcnemar => {
            let ids: Vec<String> = a_map.keys().cloned().collect();
            let ca = a_map.values().map(correct).collect::<Result<Vec<_>, _>>()?;
            let cb = b_map.values().map(correct).collect::<Result<Vec<_>, _>>()?;
            let paired = PairedOutcomes::new(ids, ca, cb).map_err(data)?;
            CompareReport { test, n, discordant: Some(paired.discordant()), delong: None, p: mcnemar_test(&paired) }
        }
        StatsTest::Delong => {
            let (sa, la): (Vec<f64>, Vec<bool>) =
                a_map.values().map(ranked).collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
            let (sb, lb): (Vec<f64>, Vec<bool>) =
                b_map.values().map(ranked).collect::<Result<Vec<_>, _>>()?.into_iter().unzip();
            if la != lb {
                return Err(CliError::Data("prediction files disagree on labels".into()));
            }
            let r = delong_test(&sa, &sb, &la).map_err(data)?;
            CompareReport { test, n, discordant: None, p: r.p, delong: Some(r) }
        }
    };
    ctx.write_artifact(&out, &report)
}

pub(super) fn stats_subgroup(ctx: &mut Ctx, a: SubgroupArgs) -> Result<(), CliError> {
    let preds_path: PathBuf = ctx.require("preds", a.preds)?;
    let demo_path: PathBuf = ctx.require("demo", a.demo)?;
    let mut key: GroupKey = ctx.parse("key", a.key, "race")?;
    let cats = if a.categories.is_empty() { None } else { Some(a.categories) };
    let cats: Option<Vec<String>> = ctx.opt("categories", cats)?;
    if let (GroupKey::Race { categories }, Some(c)) = (&mut key, cats) {
        *categories = c;
    }
    let boot = bootstrap_config(ctx, a.bootstrap, a.seed)?;
    let out = ctx.get("out", a.out, PathBuf::from("subgroup.json"))?;
    let preds: Vec<CasePrediction> = read_payload(&preds_path)?;
    let demo: BTreeMap<String, Demographics> = read_payload(&demo_path)?;
    let samples = preds
        .into_iter()
        .map(|p| match (p.prediction, p.reference) {
            (Some(prediction), Some(reference)) => {
                Ok(SubgroupSample { demographics: demo.get(&p.id).cloned(), id: p.id, prediction, reference })
            }
            _ => Err(CliError::Data(format!("case {} lacks prediction or reference", p.id))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let table = subgroup_table(&samples, &key, &boot).map_err(data)?;
    ctx.write_bytes(&out.with_extension("csv"), table.to_csv().as_bytes())?;
    ctx.write_artifact(&out, &table)
}
