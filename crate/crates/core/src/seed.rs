//! Stable seed derivation.
//!
//! Per-unit seeds are derived from a root seed and string tags by
//! hashing, so results are independent of scheduling order and stable
//! across platforms and releases (unlike `DefaultHasher`).

use sha2::{Digest, Sha256};

/// Derives a child seed from a root seed and an ordered list of tags.
pub fn derive(root: u64, tags: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for tag in tags {
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
