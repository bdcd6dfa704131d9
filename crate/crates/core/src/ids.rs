//! Opaque identifiers.
//!
//! Identifiers are `<prefix>-<sequence>` strings with a zero-padded
//! sequence, so they sort lexicographically in allocation order within a
//! prefix. The sequence is drawn from a single counter per store, which keeps
//! them unique across every entity kind.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub fn new(raw: impl Into<String>) -> Self {
                Self(raw.into())
            }

            pub fn from_sequence(seq: u64) -> Self {
                Self(format!("{}-{:010}", $prefix, seq))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(raw: &str) -> Self {
                Self(raw.to_owned())
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

id_type!(UserId, "usr");
id_type!(ProviderId, "prv");
id_type!(DatasetId, "ds");
id_type!(ProjectId, "prj");
id_type!(WorkPackageId, "wp");
id_type!(EnvironmentId, "env");
id_type!(VolumeId, "vol");
id_type!(TokenId, "tok");
id_type!(RequestId, "req");
id_type!(GrantId, "grt");
id_type!(WindowId, "win");
id_type!(
    /// Identifier of a platform that can host environments (e.g. a cloud subscription).
    PlatformId,
    "plt"
);
