//! A small DICOMweb client: QIDO-RS instance listing and WADO-RS instance
//! retrieval, authenticated with a bearer token and gated by a study
//! allow-list before anything leaves the process.

use std::collections::BTreeSet;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::model::VolumeRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSource {
    pub base_url: String,
    pub auth_token: String,
    #[serde(default)]
    pub allowed_study_ids: Option<BTreeSet<String>>,
}

impl RemoteSource {
    pub fn check_policy(&self, study: &str) -> Result<(), IngestError> {
        match &self.allowed_study_ids {
            Some(allowed) if !allowed.contains(study) => Err(IngestError::Policy(study.to_string())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

pub trait Transport: Send + Sync {
    /// Issue `GET url` with `Authorization: Bearer <token>`. Connection
    /// level failures are [`IngestError::Transport`].
    fn get(&self, url: &str, token: &str) -> Result<HttpResponse, IngestError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(timeout)).build();
        Self { agent: ureq::Agent::new_with_config(config) }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl Transport for UreqTransport {
    fn get(&self, url: &str, token: &str) -> Result<HttpResponse, IngestError> {
        let mut resp = self
            .agent
            .get(url)
            .header("Authorization", &format!("Bearer {token}"))
            .call()
            .map_err(|e| IngestError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(|e| IngestError::Transport(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

pub trait Clock: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested sleeps instead of sleeping.
#[derive(Default)]
pub struct FakeClock {
    slept: Mutex<Vec<Duration>>,
}

impl FakeClock {
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().unwrap().clone()
    }
}

impl Clock for FakeClock {
    fn sleep(&self, d: Duration) {
        self.slept.lock().unwrap().push(d);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay: Duration::from_millis(100) }
    }
}

/// Anything that can produce the bytes of one volume.
pub trait VolumeSource: Send + Sync {
    fn fetch_volume(&self, volume: &VolumeRef) -> Result<Vec<u8>, IngestError>;
}

pub struct DicomWebClient<T = UreqTransport, C = SystemClock> {
    pub source: RemoteSource,
    transport: T,
    clock: C,
    retry: RetryPolicy,
}

impl DicomWebClient {
    pub fn new(source: RemoteSource) -> Self {
        Self::with_parts(source, UreqTransport::default(), SystemClock, RetryPolicy::default())
    }
}

impl<T: Transport, C: Clock> DicomWebClient<T, C> {
    pub fn with_parts(source: RemoteSource, transport: T, clock: C, retry: RetryPolicy) -> Self {
        Self { source, transport, clock, retry }
    }

    pub fn clock(&self) -> &C {
        &self.clock
    }

    /// GET with bounded exponential backoff. Only transport failures and
    /// 5xx responses are retried.
    fn get(&self, url: &str) -> Result<Vec<u8>, IngestError> {
        let mut delay = self.retry.base_delay;
        let mut attempt = 1;
        loop {
            let outcome = self.transport.get(url, &self.source.auth_token).and_then(|r| match r.status {
                200..=299 => Ok(r.body),
                401 | 403 => Err(IngestError::Auth(url.to_string())),
                404 => Err(IngestError::NotFound(url.to_string())),
                s if s >= 500 => Err(IngestError::Transport(format!("HTTP {s} from {url}"))),
                s => Err(IngestError::Format(format!("unexpected HTTP {s} from {url}"))),
            });
            match outcome {
                Err(e) if e.is_retriable() && attempt < self.retry.attempts => {
                    log::warn!("attempt {attempt} for {url} failed: {e}; retrying in {delay:?}");
                    self.clock.sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn series_url(&self, volume: &VolumeRef) -> String {
        format!(
            "{}/studies/{}/series/{}/instances",
            self.source.base_url.trim_end_matches('/'),
            volume.study_uid(),
            volume.series_uid()
        )
    }

    /// QIDO-RS: instance UIDs of the volume's series, in instance-number order.
    pub fn list_instances(&self, volume: &VolumeRef) -> Result<Vec<String>, IngestError> {
        self.source.check_policy(volume.study_uid())?;
        let body = self.get(&self.series_url(volume))?;
        parse_instance_listing(&body)
    }
}

impl<T: Transport, C: Clock> VolumeSource for DicomWebClient<T, C> {
    /// All instances of the volume's series, concatenated in instance order.
    fn fetch_volume(&self, volume: &VolumeRef) -> Result<Vec<u8>, IngestError> {
        let instances = self.list_instances(volume)?;
        let base = self.series_url(volume);
        let mut out = Vec::new();
        for iid in instances {
            out.extend(self.get(&format!("{base}/{iid}"))?);
        }
        Ok(out)
    }
}

const SOP_INSTANCE_UID: &str = "00080018";
const INSTANCE_NUMBER: &str = "00200013";

/// Build a QIDO-RS JSON listing (used by the stub server).
pub(crate) fn instance_listing(uids: &[String]) -> serde_json::Value {
    serde_json::Value::Array(
        uids.iter()
            .enumerate()
            .map(|(i, uid)| {
                serde_json::json!({
                    SOP_INSTANCE_UID: {"vr": "UI", "Value": [uid]},
                    INSTANCE_NUMBER: {"vr": "IS", "Value": [i + 1]},
                })
            })
            .collect(),
    )
}

fn parse_instance_listing(body: &[u8]) -> Result<Vec<String>, IngestError> {
    let items: Vec<serde_json::Value> = serde_json::from_slice(body)?;
    let mut out = Vec::with_capacity(items.len());
    for item in &items {
        let uid = item[SOP_INSTANCE_UID]["Value"][0]
            .as_str()
            .ok_or_else(|| IngestError::Format("instance without SOPInstanceUID".into()))?;
        let number = match &item[INSTANCE_NUMBER]["Value"][0] {
            serde_json::Value::Number(n) => n.as_i64(),
            serde_json::Value::String(s) => s.trim().parse().ok(),
            _ => None,
        };
        out.push((number.unwrap_or(i64::MAX), out.len(), uid.to_string()));
    }
    out.sort();
    Ok(out.into_iter().map(|(_, _, uid)| uid).collect())
}
