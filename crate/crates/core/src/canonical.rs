//! Canonical JSON: key-sorted, compact, no insignificant whitespace.
//!
//! Every hashed document goes through [`to_vec`], so semantically equal
//! values always produce identical bytes.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// 64 hex zeros, the `prev_hash` of the first audit event.
pub const ZERO_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

pub fn to_value<T: Serialize + ?Sized>(value: &T) -> serde_json::Value {
    // serde_json's default map is a BTreeMap, so conversion sorts object keys.
    serde_json::to_value(value).expect("domain types serialize infallibly")
}

pub fn to_vec<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    serde_json::to_vec(&to_value(value)).expect("json values serialize infallibly")
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_vec(value)).expect("json is utf-8")
}

/// Pretty, still key-sorted. Used for files meant to be read by people.
pub fn to_string_pretty<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string_pretty(&to_value(value)).expect("json values serialize infallibly")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&to_vec(value))
}
