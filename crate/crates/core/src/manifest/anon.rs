use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Label, Manifest};

/// Salt-keyed mapping from source ids to leaderboard pseudonyms
/// (`R01`, `G07`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymizationMap {
    #[serde(with = "hex_bytes")]
    pub salt: Vec<u8>,
    pub entries: BTreeMap<String, String>,
}

impl AnonymizationMap {
    pub fn pseudonym(&self, source_id: &str) -> Option<&str> {
        self.entries.get(source_id).map(String::as_str)
    }

    /// Pseudonym, or the id unchanged when unmapped.
    pub fn apply<'a>(&'a self, source_id: &'a str) -> &'a str {
        self.pseudonym(source_id).unwrap_or(source_id)
    }

    pub fn is_pseudonym(s: &str) -> bool {
        let mut chars = s.chars();
        matches!(chars.next(), Some('R') | Some('G')) && s.len() >= 3 && chars.all(|c| c.is_ascii_digit())
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Pseudonyms are assigned per class by sorting the keyed hash
/// `sha256(salt || 0 || source_id)`; width is at least two digits.
pub fn anonymize_sources(m: &Manifest, salt: &[u8]) -> AnonymizationMap {
    let mut entries = BTreeMap::new();
    for (kind, prefix) in [(Label::Real, 'R'), (Label::Generated, 'G')] {
        let mut keyed: Vec<([u8; 32], &str)> = m
            .sources
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| {
                let mut h = Sha256::new();
                h.update(salt);
                h.update([0u8]);
                h.update(s.source_id.as_bytes());
                (h.finalize().into(), s.source_id.as_str())
            })
            .collect();
        keyed.sort();
        let width = keyed.len().to_string().len().max(2);
        for (i, (_, id)) in keyed.iter().enumerate() {
            entries.insert(id.to_string(), format!("{prefix}{:0width$}", i + 1));
        }
    }
    AnonymizationMap { salt: salt.to_vec(), entries }
}
