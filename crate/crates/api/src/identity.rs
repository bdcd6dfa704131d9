//! Authentication is delegated to an identity provider. The bundled one
//! verifies HMAC-signed bearer tokens and is meant for tests and demos.

use base64::engine::general_purpose::URL_SAFE_NO_PAD as B64;
use base64::Engine;
use hmac::{Hmac, KeyInit, Mac};
use safehaven_core::clock::Timestamp;
use safehaven_core::ids::UserId;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceClass {
    Open,
    Managed,
}

/// What the identity provider asserts about a signed-in user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub sub: UserId,
    /// Second factor presented at sign-in.
    pub mfa: bool,
    pub device: DeviceClass,
    /// Unix seconds.
    pub exp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthError {
    Malformed,
    BadSignature,
    Expired,
}

pub trait IdentityProvider: Send + Sync {
    fn authenticate(&self, bearer: &str, now: Timestamp) -> Result<Claims, AuthError>;
}

/// Tokens are `base64url(claims json) "." base64url(hmac-sha256)`.
pub struct SignedTokenIdp {
    key: Vec<u8>,
}

impl SignedTokenIdp {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        SignedTokenIdp { key: key.into() }
    }

    fn mac(&self) -> Hmac<Sha256> {
        Hmac::<Sha256>::new_from_slice(&self.key).expect("hmac takes keys of any length")
    }

    pub fn issue(&self, claims: &Claims) -> String {
        let body = B64.encode(serde_json::to_vec(claims).expect("claims serialize"));
        let mut mac = self.mac();
        mac.update(body.as_bytes());
        format!("{body}.{}", B64.encode(mac.finalize().into_bytes()))
    }
}

impl IdentityProvider for SignedTokenIdp {
    fn authenticate(&self, bearer: &str, now: Timestamp) -> Result<Claims, AuthError> {
        let (body, sig) = bearer.split_once('.').ok_or(AuthError::Malformed)?;
        let sig = B64.decode(sig).map_err(|_| AuthError::Malformed)?;
        let mut mac = self.mac();
        mac.update(body.as_bytes());
        mac.verify_slice(&sig).map_err(|_| AuthError::BadSignature)?;
        let json = B64.decode(body).map_err(|_| AuthError::Malformed)?;
        let claims: Claims = serde_json::from_slice(&json).map_err(|_| AuthError::Malformed)?;
        if claims.exp <= now.timestamp() {
            return Err(AuthError::Expired);
        }
        Ok(claims)
    }
}
