//! Platform driver for the command line. There is no cloud behind it: each
//! call is checked for a forwarded infrastructure credential and appended to
//! `platform.log` in the store directory, so the record survives between runs.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;

use safehaven_core::blueprint::Blueprint;
use safehaven_core::ids::{EnvironmentId, VolumeId};
use safehaven_core::platform::{CredentialScope, ForwardedCredential, PlatformDriver, PlatformError, ProvisionAck};
use serde_json::json;

pub struct LoggingPlatform {
    log: PathBuf,
    lock: Mutex<()>,
}

impl LoggingPlatform {
    pub fn new(log: PathBuf) -> Self {
        LoggingPlatform { log, lock: Mutex::new(()) }
    }

    fn record(&self, c: &ForwardedCredential, op: &str, target: &str) -> Result<(), PlatformError> {
        if c.scope() != CredentialScope::Infrastructure {
            return Err(PlatformError::ScopeMismatch(c.scope()));
        }
        let _g = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let line = json!({ "operation": op, "target": target, "subject": c.subject(), "credential": c.fingerprint() });
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.log)
            .and_then(|mut f| writeln!(f, "{line}"))
            .map_err(|e| PlatformError::Rejected(format!("platform log: {e}")))
    }
}

impl PlatformDriver for LoggingPlatform {
    fn provision(&self, c: &ForwardedCredential, bp: &Blueprint) -> Result<ProvisionAck, PlatformError> {
        self.record(c, "provision", bp.environment_id.as_str())?;
        Ok(ProvisionAck {
            environment_id: bp.environment_id.clone(),
            blueprint_digest: bp.digest(),
            provisioned_by: c.subject().clone(),
        })
    }

    fn decommission(&self, c: &ForwardedCredential, env: &EnvironmentId) -> Result<(), PlatformError> {
        self.record(c, "decommission", env.as_str())
    }

    fn create_volume(&self, c: &ForwardedCredential, v: &VolumeId) -> Result<(), PlatformError> {
        self.record(c, "create_volume", v.as_str())
    }

    fn delete_volume(&self, c: &ForwardedCredential, v: &VolumeId) -> Result<(), PlatformError> {
        self.record(c, "delete_volume", v.as_str())
    }
}
