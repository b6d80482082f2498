use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use regionstyle::{Image, Mask, MaskPairSet};
use sha2::{Digest, Sha256};

/// A stylized image together with the state hash it was computed from.
#[derive(Debug, Clone)]
pub struct StylizeResult {
    pub state: String,
    pub png: Arc<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct StyleSession {
    pub id: String,
    pub content: Option<Image>,
    pub style: Option<Image>,
    pub pairs: MaskPairSet,
    pub last_result: Option<StylizeResult>,
    pub created: u64,
    pub updated: u64,
}

impl StyleSession {
    pub fn new(id: String) -> Self {
        let now = now();
        Self {
            id,
            content: None,
            style: None,
            pairs: MaskPairSet::new(),
            last_result: None,
            created: now,
            updated: now,
        }
    }

    pub fn touch(&mut self) {
        self.updated = now();
    }

    /// Hash over everything a stylization depends on, hex encoded.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        for img in [&self.content, &self.style] {
            match img {
                Some(img) => {
                    h.update([1u8]);
                    h.update((img.height() as u64).to_le_bytes());
                    h.update((img.width() as u64).to_le_bytes());
                    for v in img.as_slice() {
                        h.update(v.to_le_bytes());
                    }
                }
                None => h.update([0u8]),
            }
        }
        h.update((self.pairs.len() as u64).to_le_bytes());
        for pair in &self.pairs {
            hash_mask(&mut h, &pair.content);
            hash_mask(&mut h, &pair.style);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn hash_mask(h: &mut Sha256, m: &Mask) {
    h.update((m.height() as u64).to_le_bytes());
    h.update((m.width() as u64).to_le_bytes());
    let bytes: Vec<u8> = m.bits().iter().map(|&b| b as u8).collect();
    h.update(bytes);
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
