//! An in-process DICOMweb stub archive for tests, examples and demos.
//!
//! Serves the QIDO-RS/WADO-RS subset the client uses from memory (or from
//! a directory), checks the bearer token, can be scripted to fail the next
//! N requests with a given status, and logs every request it receives.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::dicomweb::instance_listing;
use super::IngestError;
use crate::model::VolumeRef;

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub status: u16,
}

type Series = BTreeMap<String, Vec<(String, Vec<u8>)>>;

#[derive(Default)]
struct State {
    /// study → series → ordered instances.
    studies: BTreeMap<String, Series>,
    token: String,
    script: VecDeque<u16>,
    log: Vec<LoggedRequest>,
}

pub struct StubPacs {
    server: Arc<tiny_http::Server>,
    state: Arc<Mutex<State>>,
    handle: Option<JoinHandle<()>>,
    base_url: String,
}

impl StubPacs {
    pub fn start(token: &str) -> Result<Self, IngestError> {
        Self::start_on("127.0.0.1:0", token)
    }

    pub fn start_on(addr: &str, token: &str) -> Result<Self, IngestError> {
        let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| IngestError::Transport(e.to_string()))?);
        let port = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| IngestError::Transport("stub bound to a non-IP socket".into()))?
            .port();
        let state = Arc::new(Mutex::new(State { token: token.to_string(), ..Default::default() }));
        let handle = {
            let (server, state) = (server.clone(), state.clone());
            std::thread::spawn(move || {
                for request in server.incoming_requests() {
                    let path = request.url().to_string();
                    let authorization =
                        request.headers().iter().find(|h| h.field.equiv("Authorization")).map(|h| h.value.to_string());
                    let (status, body, json) = {
                        let mut st = state.lock().unwrap();
                        let r = respond(&mut st, &path, authorization.as_deref());
                        st.log.push(LoggedRequest { path, authorization, status: r.0 });
                        r
                    };
                    let mut resp = tiny_http::Response::from_data(body).with_status_code(status);
                    let ctype = if json { "application/dicom+json" } else { "application/octet-stream" };
                    resp.add_header(tiny_http::Header::from_bytes("Content-Type", ctype).unwrap());
                    let _ = request.respond(resp);
                }
            })
        };
        Ok(Self { server, state, handle: Some(handle), base_url: format!("http://127.0.0.1:{port}") })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Serve `instances` as the series of `volume`.
    pub fn add_volume(&self, volume: &VolumeRef, instances: Vec<Vec<u8>>) {
        let mut st = self.state.lock().unwrap();
        let series = volume.series_uid();
        let items = instances.into_iter().enumerate().map(|(i, b)| (format!("{series}.{}", i + 1), b)).collect();
        st.studies.entry(volume.study_uid().to_string()).or_default().insert(series, items);
    }

    /// Load `dir/<study>/<series>/<instance>` files; instances are served
    /// in file-name order.
    pub fn load_dir(&self, dir: &Path) -> Result<usize, IngestError> {
        let mut count = 0;
        let mut st = self.state.lock().unwrap();
        for study in sorted_entries(dir)? {
            for series in sorted_entries(&study)? {
                let mut items = Vec::new();
                for inst in sorted_entries(&series)? {
                    let name = inst.file_name().unwrap().to_string_lossy().to_string();
                    items.push((name, std::fs::read(&inst)?));
                    count += 1;
                }
                let sname = series.file_name().unwrap().to_string_lossy().to_string();
                let stname = study.file_name().unwrap().to_string_lossy().to_string();
                st.studies.entry(stname).or_default().insert(sname, items);
            }
        }
        Ok(count)
    }

    /// Fail the next requests with these statuses, in order.
    pub fn script_failures(&self, statuses: &[u16]) {
        self.state.lock().unwrap().script.extend(statuses);
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.state.lock().unwrap().log.clone()
    }
}

impl Drop for StubPacs {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>, IngestError> {
    let mut v: Vec<_> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    v.sort();
    Ok(v)
}

fn respond(st: &mut State, path: &str, auth: Option<&str>) -> (u16, Vec<u8>, bool) {
    if auth != Some(&format!("Bearer {}", st.token)) {
        return (401, b"unauthorized".to_vec(), false);
    }
    if let Some(status) = st.script.pop_front() {
        return (status, b"scripted failure".to_vec(), false);
    }
    let parts: Vec<&str> = path.trim_start_matches('/').split('/').collect();
    match parts.as_slice() {
        ["studies", study, "series", series, "instances"] => {
            match st.studies.get(*study).and_then(|s| s.get(*series)) {
                Some(items) => {
                    let uids: Vec<String> = items.iter().map(|(u, _)| u.clone()).collect();
                    (200, serde_json::to_vec(&instance_listing(&uids)).unwrap(), true)
                }
                None => (404, b"no such series".to_vec(), false),
            }
        }
        ["studies", study, "series", series, "instances", iid] => {
            let found = st
                .studies
                .get(*study)
                .and_then(|s| s.get(*series))
                .and_then(|items| items.iter().find(|(u, _)| u == iid));
            match found {
                Some((_, bytes)) => (200, bytes.clone(), false),
                None => (404, b"no such instance".to_vec(), false),
            }
        }
        _ => (404, b"unknown route".to_vec(), false),
    }
}
