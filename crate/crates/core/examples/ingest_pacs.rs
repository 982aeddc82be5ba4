//! Fetch phantom volumes from a local stub PACS through the bounded cache.

use std::collections::BTreeSet;
use std::sync::Arc;

use tomo::ingest::stub::StubPacs;
use tomo::ingest::{
    decode_volume, generate_cohort, phantom_for_volume, CacheConfig, CohortSpec, DicomWebClient, Prefetcher,
    RemoteSource, VolumeCache,
};
use tomo::model::VolumeRef;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (ds, _) = generate_cohort(5, &CohortSpec { n_exams: 4, n_slices: 3, ..Default::default() });
    let volumes: Vec<VolumeRef> = ds.exams.iter().flat_map(|e| e.views.values().cloned()).collect();

    let pacs = StubPacs::start("demo-token")?;
    let mut largest = 0;
    for v in &volumes {
        let instances = phantom_for_volume(5, &ds, v).instances();
        largest = largest.max(instances.iter().map(Vec::len).sum::<usize>() as u64);
        pacs.add_volume(v, instances);
    }
    // Only the first three studies are in scope for this run.
    let allowed: BTreeSet<String> =
        ds.exams.iter().take(3).map(|e| e.views.values().next().unwrap().study_uid().to_string()).collect();
    let client = Arc::new(DicomWebClient::new(RemoteSource {
        base_url: pacs.base_url().to_string(),
        auth_token: "demo-token".into(),
        allowed_study_ids: Some(allowed),
    }));

    let dir = tempfile::tempdir()?;
    let cache = Arc::new(VolumeCache::open(CacheConfig {
        capacity_bytes: 6 * largest,
        root_dir: dir.path().into(),
        prefetch_depth: 2,
    })?);

    for (v, r) in Prefetcher::spawn(cache.clone(), client, volumes) {
        match r {
            Ok(path) => {
                let slices = decode_volume(&std::fs::read(&path)?)?;
                println!("{}: {} slices of {}x{}", v.volume_id(), slices.len(), slices[0].height, slices[0].width);
            }
            Err(e) => println!("{}: {e}", v.volume_id()),
        }
    }
    println!(
        "{} volumes resident, {} bytes; {} requests served",
        cache.resident().len(),
        cache.total_bytes(),
        pacs.requests().len()
    );
    Ok(())
}
