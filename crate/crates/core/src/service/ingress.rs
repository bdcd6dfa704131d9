//! Data deposit through write-only tokens, sealing, and integrity checks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{content_key, Actor, Haven, StoredIntegrityRecord, CONTENT_PREFIX, SCHEDULER_ACTOR};
use crate::domain::*;
use crate::error::{HavenError, Result};
use crate::ids::*;
use crate::ingress::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositReceipt {
    pub volume_id: VolumeId,
    pub files_written: usize,
    pub bytes_written: u64,
}

pub(super) fn check_path(path: &str) -> Result<()> {
    let bad = path.is_empty()
        || path.starts_with('/')
        || path.contains('\0')
        || path.contains('\\')
        || path.split('/').any(|seg| seg.is_empty() || seg == "." || seg == "..");
    if bad {
        return Err(HavenError::Invalid(format!("unacceptable file path {path:?}")));
    }
    Ok(())
}

impl Haven {
    fn token_for_volume(&self, volume: &VolumeId) -> Result<(IngressToken, u64)> {
        self.store
            .list::<IngressToken>()?
            .into_iter()
            .find(|(t, _)| &t.volume_id == volume)
            .ok_or_else(|| HavenError::not_found("ingress_token", volume))
    }

    /// Opens an empty secure data volume and issues its one-time write-only token.
    pub fn begin_ingress(&self, actor: &Actor, wp_id: &WorkPackageId, dataset_id: &DatasetId) -> Result<IssuedToken> {
        let _g = self.exclusive();
        let (wp, _) = self.load::<WorkPackage>(wp_id.as_str())?;
        let (project, _) = self.live_project(&wp.project_id)?;
        if project.project_manager_id != actor.user_id {
            return Err(HavenError::unauthorized(&actor.user_id, "begin ingress"));
        }
        if !wp.dataset_ids.contains(dataset_id) {
            return Err(HavenError::DatasetNotInWorkPackage(dataset_id.clone()));
        }
        if wp.halted || wp.state != WorkPackageState::InitialClassified {
            return Err(HavenError::WrongState { wp: wp.id, state: wp.state, action: "begin ingress".into() });
        }
        let dataset = self.get_dataset(dataset_id)?;
        if dataset.sharing_agreement_doc_ref.is_none() {
            return Err(HavenError::MissingAgreement(dataset_id.clone()));
        }
        if !wp.mount_authorizations.contains(dataset_id) {
            return Err(HavenError::MissingMountAuthorization(dataset_id.clone()));
        }
        let deposits: Vec<Volume> = self
            .list::<Volume>()?
            .into_iter()
            .filter(|v| v.project_id == project.id && v.dataset_id.as_ref() == Some(dataset_id))
            .collect();
        if deposits.iter().any(|v| v.state == VolumeState::Open) {
            return Err(HavenError::IngressAlreadyOpen(dataset_id.clone()));
        }
        if deposits.iter().any(|v| v.state == VolumeState::Sealed) {
            return Err(HavenError::Invalid(format!("dataset {dataset_id} is already deposited")));
        }
        let cred = actor.credential()?;
        let provider = self.get_provider(&dataset.provider_id)?;

        let volume_id = self.next_id(VolumeId::from_sequence)?;
        self.platform.create_volume(cred, &volume_id)?;
        let volume = Volume {
            id: volume_id.clone(),
            project_id: project.id.clone(),
            kind: VolumeKind::SecureData,
            mode: VolumeMode::WriteOnly,
            environment_id: None,
            dataset_id: Some(dataset_id.clone()),
            state: VolumeState::Open,
        };
        self.save(actor.user_id.as_str(), "ingress.open_volume", &volume, 0)?;

        let secret = hex::encode(rand::random::<[u8; 32]>());
        let now = self.now();
        let token = IngressToken {
            token_id: self.next_id(TokenId::from_sequence)?,
            volume_id,
            dataset_id: dataset_id.clone(),
            work_package_id: wp.id.clone(),
            mode: TokenMode::WriteOnly,
            issued_at: now,
            expiry: now + self.config.token_lifetime(),
            one_time: true,
            issued_to: provider.representative_user_id,
            delivered_via: DELIVERY_CHANNEL.into(),
            secret_sha256: crate::canonical::sha256_hex(secret.as_bytes()),
            revoked: false,
            declared_digest: None,
        };
        self.save(actor.user_id.as_str(), "ingress.issue_token", &token, 0)?;
        Ok(IssuedToken { token, secret })
    }

    /// Writes files through a token. An optional client digest is checked against the whole volume.
    pub fn deposit(
        &self,
        token_id: &TokenId,
        secret: &str,
        files: &[(String, Vec<u8>)],
        declared_digest: Option<&str>,
    ) -> Result<DepositReceipt> {
        let _g = self.exclusive();
        let (mut token, tv) = self.load::<IngressToken>(token_id.as_str())?;
        if !token.matches_secret(secret) {
            return Err(HavenError::TokenRejected("secret does not match".into()));
        }
        token.usable_at(self.now()).map_err(|e| HavenError::TokenRejected(e.into()))?;
        let (volume, vv) = self.load::<Volume>(token.volume_id.as_str())?;
        if volume.state != VolumeState::Open {
            return Err(HavenError::VolumeNotOpen(volume.id));
        }
        for (path, _) in files {
            check_path(path)?;
        }
        let backend = self.store.backend();
        let mut bytes = 0u64;
        for (path, content) in files {
            backend.put(&content_key(&volume.id, path), content)?;
            bytes += content.len() as u64;
        }
        let receipt = DepositReceipt { volume_id: volume.id.clone(), files_written: files.len(), bytes_written: bytes };
        let paths: Vec<&str> = files.iter().map(|(p, _)| p.as_str()).collect();
        let vref = crate::store::EntityRef { kind: "volume".into(), id: volume.id.to_string(), version: vv };
        self.append(token.issued_to.as_str(), "ingress.deposit", vref, &(&paths, bytes))?;

        if let Some(claimed) = declared_digest {
            let computed = self.volume_digest(&volume.id)?;
            if !claimed.eq_ignore_ascii_case(&computed) {
                return Err(HavenError::DepositDigestMismatch { claimed: claimed.into(), computed });
            }
            token.declared_digest = Some(computed);
            self.save(token.issued_to.as_str(), "ingress.declare_digest", &token, tv)?;
        }
        Ok(receipt)
    }

    /// Tokens never read.
    pub fn read_with_token(&self, token_id: &TokenId, _secret: &str, _path: &str) -> Result<Vec<u8>> {
        self.load::<IngressToken>(token_id.as_str())?;
        Err(HavenError::TokenWriteOnly)
    }

    /// The representative marks the transfer complete, losing access; verification is scheduled.
    pub fn complete_ingress(&self, actor: &Actor, volume_id: &VolumeId) -> Result<Volume> {
        let _g = self.exclusive();
        let (mut volume, vv) = self.load::<Volume>(volume_id.as_str())?;
        let (mut token, tv) = self.token_for_volume(volume_id)?;
        if token.issued_to != actor.user_id {
            return Err(HavenError::unauthorized(&actor.user_id, "complete this deposit"));
        }
        if volume.state != VolumeState::Open {
            return Err(HavenError::VolumeNotOpen(volume.id));
        }
        volume.state = VolumeState::Sealed;
        volume.mode = VolumeMode::ReadOnly;
        self.save(actor.user_id.as_str(), "ingress.seal", &volume, vv)?;
        token.revoked = true;
        self.save(actor.user_id.as_str(), "ingress.revoke_token", &token, tv)?;

        let dataset = self.get_dataset(&token.dataset_id)?;
        let state = IntegrityState {
            volume_id: volume.id.clone(),
            provider_hash: dataset.provider_hash.or(token.declared_digest),
            latest: None,
            next_due: self.now(),
            history_len: 0,
        };
        let sv = self.find::<IntegrityState>(volume.id.as_str())?.map(|(_, v)| v).unwrap_or(0);
        self.save(actor.user_id.as_str(), "integrity.schedule", &state, sv)?;
        Ok(volume)
    }

    pub fn volume_files(&self, volume: &VolumeId) -> Result<BTreeMap<String, Vec<u8>>> {
        let prefix = format!("{CONTENT_PREFIX}{volume}/");
        Ok(self
            .store
            .backend()
            .scan_prefix(&prefix)?
            .into_iter()
            .map(|(k, v)| (k[prefix.len()..].to_string(), v))
            .collect())
    }

    pub fn volume_digest(&self, volume: &VolumeId) -> Result<String> {
        let files = self.volume_files(volume)?;
        Ok(volume_digest(files.iter().map(|(p, c)| (p.as_str(), c.as_slice()))))
    }

    /// Verifies a sealed volume against the provider's digest.
    pub fn verify_integrity(&self, actor: &Actor, volume_id: &VolumeId, provider_hash: Option<&str>) -> Result<IntegrityRecord> {
        let _g = self.exclusive();
        let volume = self.get_volume(volume_id)?;
        let project = self.get_project(&volume.project_id)?;
        let mut allowed = self.is_programme_manager(&actor.user_id)?
            || project.project_manager_id == actor.user_id
            || project.investigator_id == actor.user_id;
        if let Some(d) = &volume.dataset_id {
            let provider = self.get_provider(&self.get_dataset(d)?.provider_id)?;
            allowed |= provider.representative_user_id == actor.user_id;
        }
        if !allowed {
            return Err(HavenError::unauthorized(&actor.user_id, "verify integrity"));
        }
        self.verify_locked(actor.user_id.as_str(), volume_id, provider_hash)
    }

    fn verify_locked(&self, actor: &str, volume_id: &VolumeId, provider_hash: Option<&str>) -> Result<IntegrityRecord> {
        let volume = self.get_volume(volume_id)?;
        match volume.state {
            VolumeState::Sealed => {}
            VolumeState::Deleted => return Err(HavenError::VolumeDeleted(volume.id)),
            VolumeState::Open => return Err(HavenError::VolumeNotSealed(volume.id)),
        }
        let now = self.now();
        let (mut state, sv) = match self.find::<IntegrityState>(volume_id.as_str())? {
            Some(s) => s,
            None => (
                IntegrityState { volume_id: volume_id.clone(), provider_hash: None, latest: None, next_due: now, history_len: 0 },
                0,
            ),
        };
        if let Some(h) = provider_hash {
            state.provider_hash = Some(h.to_ascii_lowercase());
        }
        let record = IntegrityRecord::evaluate(volume_id.clone(), self.volume_digest(volume_id)?, state.provider_hash.clone(), now);
        state.history_len += 1;
        let stored = StoredIntegrityRecord { id: format!("{volume_id}:{:06}", state.history_len), record: record.clone() };
        let rec = self.save(actor, "integrity.verify", &stored, 0)?;
        state.latest = Some(record.clone());
        state.next_due = now + self.config.reverification_period();
        self.save(actor, "integrity.schedule", &state, sv)?;

        if record.status == IntegrityStatus::Mismatch {
            let project = self.get_project(&volume.project_id)?;
            let event = self.append(actor, "integrity.alert", rec.entity_ref, &record)?;
            self.notifier.notify(&Alert {
                kind: "integrity.mismatch".into(),
                project_id: project.id.clone(),
                recipients: vec![project.programme_manager_id.clone(), project.project_manager_id.clone()],
                subject: format!("volume {volume_id} no longer matches the provider digest"),
                audit_seq: event.seq,
            });
        }
        Ok(record)
    }

    pub fn integrity_state(&self, volume: &VolumeId) -> Result<Option<IntegrityState>> {
        Ok(self.find::<IntegrityState>(volume.as_str())?.map(|(s, _)| s))
    }

    pub fn integrity_history(&self, volume: &VolumeId) -> Result<Vec<IntegrityRecord>> {
        let prefix = format!("{volume}:");
        Ok(self
            .list::<StoredIntegrityRecord>()?
            .into_iter()
            .filter(|r| r.id.starts_with(&prefix))
            .map(|r| r.record)
            .collect())
    }

    /// Re-verifies every sealed volume whose check is due.
    pub fn run_scheduled_verifications(&self) -> Result<Vec<IntegrityRecord>> {
        let _g = self.exclusive();
        let now = self.now();
        let mut out = Vec::new();
        for state in self.list::<IntegrityState>()? {
            if state.next_due > now {
                continue;
            }
            if self.get_volume(&state.volume_id)?.state != VolumeState::Sealed {
                continue;
            }
            out.push(self.verify_locked(SCHEDULER_ACTOR, &state.volume_id, None)?);
        }
        Ok(out)
    }
}
