use std::collections::VecDeque;
use std::path::PathBuf;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::{IngestError, VolumeCache, VolumeSource};
use crate::model::VolumeRef;

/// Background fetcher: up to `prefetch_depth` workers pull volumes through
/// the cache into a bounded queue. Iterating blocks until the next volume
/// is ready and yields them in completion order.
pub struct Prefetcher {
    rx: Receiver<(VolumeRef, Result<PathBuf, IngestError>)>,
    queue: Arc<Mutex<VecDeque<VolumeRef>>>,
    workers: Vec<JoinHandle<()>>,
}

impl Prefetcher {
    pub fn spawn<S>(cache: Arc<VolumeCache>, source: Arc<S>, volumes: Vec<VolumeRef>) -> Self
    where
        S: VolumeSource + 'static,
    {
        let depth = cache.config().prefetch_depth.max(1);
        let (tx, rx) = sync_channel(depth);
        let queue = Arc::new(Mutex::new(VecDeque::from(volumes)));
        let workers = (0..depth)
            .map(|_| {
                let (tx, queue, cache, source) = (tx.clone(), queue.clone(), cache.clone(), source.clone());
                std::thread::spawn(move || loop {
                    let next = queue.lock().expect("queue lock").pop_front();
                    let Some(volume) = next else { break };
                    let result = cache.get_or_fetch(source.as_ref(), &volume);
                    if tx.send((volume, result)).is_err() {
                        break;
                    }
                })
            })
            .collect();
        Self { rx, queue, workers }
    }
}

impl Iterator for Prefetcher {
    type Item = (VolumeRef, Result<PathBuf, IngestError>);

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.recv().ok()
    }
}

impl Drop for Prefetcher {
    fn drop(&mut self) {
        self.queue.lock().expect("queue lock").clear();
        for w in self.workers.drain(..) {
            while !w.is_finished() {
                while self.rx.try_recv().is_ok() {}
                std::thread::yield_now();
            }
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::CacheConfig;
    use crate::model::ViewKind;

    struct Echo;

    impl VolumeSource for Echo {
        fn fetch_volume(&self, v: &VolumeRef) -> Result<Vec<u8>, IngestError> {
            if v.exam_id == "bad" {
                return Err(IngestError::NotFound(v.exam_id.clone()));
            }
            Ok(v.exam_id.as_bytes().to_vec())
        }
    }

    #[test]
    fn delivers_every_volume() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(
            VolumeCache::open(CacheConfig { capacity_bytes: 1 << 20, root_dir: dir.path().into(), prefetch_depth: 3 })
                .unwrap(),
        );
        let vols: Vec<VolumeRef> = ["a", "bb", "bad", "ccc", "dddd"]
            .iter()
            .map(|e| VolumeRef {
                patient_id: "p".into(),
                exam_id: e.to_string(),
                view: ViewKind::Rcc,
                n_slices: 1,
                acquisition_date: "2021-01-01".into(),
            })
            .collect();
        let mut got: Vec<(String, bool)> = Prefetcher::spawn(cache, Arc::new(Echo), vols)
            .map(|(v, r)| {
                if let Ok(p) = &r {
                    assert_eq!(std::fs::read(p).unwrap(), v.exam_id.as_bytes());
                }
                (v.exam_id, r.is_ok())
            })
            .collect();
        got.sort();
        assert_eq!(got.len(), 5);
        assert_eq!(got[1], ("bad".to_string(), false));
    }

    #[test]
    fn dropping_early_does_not_hang() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(
            VolumeCache::open(CacheConfig { capacity_bytes: 1 << 20, root_dir: dir.path().into(), prefetch_depth: 1 })
                .unwrap(),
        );
        let vols: Vec<VolumeRef> = (0..20)
            .map(|i| VolumeRef {
                patient_id: "p".into(),
                exam_id: format!("e{i}"),
                view: ViewKind::Rcc,
                n_slices: 1,
                acquisition_date: "2021-01-01".into(),
            })
            .collect();
        let mut pf = Prefetcher::spawn(cache, Arc::new(Echo), vols);
        assert!(pf.next().is_some());
        drop(pf);
    }
}
