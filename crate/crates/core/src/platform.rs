//! Platform drivers.
//!
//! The service holds no credentials of its own. Every call into a platform
//! carries the logged-in user's forwarded credential, and the driver
//! signatures make that impossible to skip.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::blueprint::Blueprint;
use crate::ids::{EnvironmentId, UserId, VolumeId};

/// Infrastructure administration and in-environment administration use
/// separate accounts; a driver only accepts infrastructure scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CredentialScope {
    Infrastructure,
    InEnvironment,
}

/// A user's credential proxied to the platform for the duration of one request.
#[derive(Clone, PartialEq, Eq)]
pub struct ForwardedCredential {
    subject: UserId,
    token: String,
    scope: CredentialScope,
}

impl ForwardedCredential {
    pub fn new(subject: UserId, token: impl Into<String>, scope: CredentialScope) -> Result<Self, PlatformError> {
        let token = token.into();
        if token.trim().is_empty() || subject.as_str().is_empty() {
            return Err(PlatformError::MissingCredential);
        }
        Ok(ForwardedCredential { subject, token, scope })
    }

    pub fn subject(&self) -> &UserId {
        &self.subject
    }

    pub fn scope(&self) -> CredentialScope {
        self.scope
    }

    /// Digest of the token, safe to log.
    pub fn fingerprint(&self) -> String {
        crate::canonical::sha256_hex(self.token.as_bytes())[..16].to_string()
    }

    pub fn expose_token(&self) -> &str {
        &self.token
    }
}

impl fmt::Debug for ForwardedCredential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForwardedCredential")
            .field("subject", &self.subject)
            .field("scope", &self.scope)
            .field("token", &"<redacted>")
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlatformError {
    #[error("no forwarded user credential")]
    MissingCredential,
    #[error("credential scope {0:?} cannot administer infrastructure")]
    ScopeMismatch(CredentialScope),
    #[error("unknown environment {0}")]
    UnknownEnvironment(EnvironmentId),
    #[error("platform rejected request: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisionAck {
    pub environment_id: EnvironmentId,
    pub blueprint_digest: String,
    pub provisioned_by: UserId,
}

pub trait PlatformDriver: Send + Sync {
    fn provision(&self, credential: &ForwardedCredential, blueprint: &Blueprint) -> Result<ProvisionAck, PlatformError>;
    fn decommission(&self, credential: &ForwardedCredential, environment: &EnvironmentId) -> Result<(), PlatformError>;
    fn create_volume(&self, credential: &ForwardedCredential, volume: &VolumeId) -> Result<(), PlatformError>;
    fn delete_volume(&self, credential: &ForwardedCredential, volume: &VolumeId) -> Result<(), PlatformError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invocation {
    pub operation: String,
    pub target: String,
    pub subject: UserId,
    pub scope: CredentialScope,
    pub credential_fingerprint: String,
}

/// In-memory platform. Records every invocation and serialises calls per environment.
#[derive(Default)]
pub struct SimulatedPlatform {
    environments: Mutex<BTreeMap<EnvironmentId, String>>,
    volumes: Mutex<Vec<VolumeId>>,
    deleted_volumes: Mutex<Vec<VolumeId>>,
    invocations: Mutex<Vec<Invocation>>,
    env_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl SimulatedPlatform {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn invocations(&self) -> Vec<Invocation> {
        self.invocations.lock().unwrap().clone()
    }

    /// Independent copy carrying the same environments, volumes and history.
    pub fn fork(&self) -> SimulatedPlatform {
        SimulatedPlatform {
            environments: Mutex::new(self.environments.lock().unwrap().clone()),
            volumes: Mutex::new(self.volumes.lock().unwrap().clone()),
            deleted_volumes: Mutex::new(self.deleted_volumes.lock().unwrap().clone()),
            invocations: Mutex::new(self.invocations.lock().unwrap().clone()),
            env_locks: Mutex::default(),
        }
    }

    pub fn provisioned(&self) -> Vec<EnvironmentId> {
        self.environments.lock().unwrap().keys().cloned().collect()
    }

    pub fn created_volumes(&self) -> Vec<VolumeId> {
        self.volumes.lock().unwrap().clone()
    }

    pub fn deleted_volumes(&self) -> Vec<VolumeId> {
        self.deleted_volumes.lock().unwrap().clone()
    }

    fn lock_for(&self, key: &str) -> Arc<Mutex<()>> {
        self.env_locks.lock().unwrap().entry(key.to_owned()).or_default().clone()
    }

    fn admit(&self, credential: &ForwardedCredential, operation: &str, target: &str) -> Result<(), PlatformError> {
        if credential.scope() != CredentialScope::Infrastructure {
            return Err(PlatformError::ScopeMismatch(credential.scope()));
        }
        self.invocations.lock().unwrap().push(Invocation {
            operation: operation.into(),
            target: target.into(),
            subject: credential.subject().clone(),
            scope: credential.scope(),
            credential_fingerprint: credential.fingerprint(),
        });
        Ok(())
    }
}

impl PlatformDriver for SimulatedPlatform {
    fn provision(&self, credential: &ForwardedCredential, blueprint: &Blueprint) -> Result<ProvisionAck, PlatformError> {
        let id = &blueprint.environment_id;
        let lock = self.lock_for(id.as_str());
        let _guard = lock.lock().unwrap();
        self.admit(credential, "provision", id.as_str())?;
        let digest = blueprint.digest();
        self.environments.lock().unwrap().insert(id.clone(), digest.clone());
        Ok(ProvisionAck {
            environment_id: id.clone(),
            blueprint_digest: digest,
            provisioned_by: credential.subject().clone(),
        })
    }

    fn decommission(&self, credential: &ForwardedCredential, environment: &EnvironmentId) -> Result<(), PlatformError> {
        let lock = self.lock_for(environment.as_str());
        let _guard = lock.lock().unwrap();
        self.admit(credential, "decommission", environment.as_str())?;
        self.environments
            .lock()
            .unwrap()
            .remove(environment)
            .map(|_| ())
            .ok_or_else(|| PlatformError::UnknownEnvironment(environment.clone()))
    }

    fn create_volume(&self, credential: &ForwardedCredential, volume: &VolumeId) -> Result<(), PlatformError> {
        self.admit(credential, "create_volume", volume.as_str())?;
        self.volumes.lock().unwrap().push(volume.clone());
        Ok(())
    }

    fn delete_volume(&self, credential: &ForwardedCredential, volume: &VolumeId) -> Result<(), PlatformError> {
        self.admit(credential, "delete_volume", volume.as_str())?;
        self.deleted_volumes.lock().unwrap().push(volume.clone());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_token_is_not_a_credential() {
        assert_eq!(
            ForwardedCredential::new("usr-1".into(), "  ", CredentialScope::Infrastructure),
            Err(PlatformError::MissingCredential)
        );
    }

    #[test]
    fn in_environment_scope_is_refused() {
        let sim = SimulatedPlatform::new();
        let cred = ForwardedCredential::new("usr-1".into(), "t", CredentialScope::InEnvironment).unwrap();
        assert_eq!(sim.delete_volume(&cred, &"vol-1".into()), Err(PlatformError::ScopeMismatch(CredentialScope::InEnvironment)));
        assert!(sim.invocations().is_empty());
    }

    #[test]
    fn debug_redacts_token() {
        let cred = ForwardedCredential::new("usr-1".into(), "secret-token", CredentialScope::Infrastructure).unwrap();
        assert!(!format!("{cred:?}").contains("secret-token"));
    }
}
