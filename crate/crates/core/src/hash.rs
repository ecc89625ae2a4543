//! Content identities and derived seeds. All SHA-256 based so they are stable
//! across platforms and releases.

use sha2::{Digest, Sha256};

use crate::geometry::Point3;

pub fn content_digest(bytes: impl IntoIterator<Item = u8>) -> [u8; 32] {
    let mut h = Sha256::new();
    let mut buf = Vec::with_capacity(4096);
    for b in bytes {
        buf.push(b);
        if buf.len() == 4096 {
            h.update(&buf);
            buf.clear();
        }
    }
    h.update(&buf);
    h.finalize().into()
}

pub fn content_id(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let d = content_digest(bytes);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn points_id(points: &[Point3]) -> u64 {
    content_id(points.iter().flatten().flat_map(|c| c.to_le_bytes()))
}

/// Identity that ignores point order.
pub fn unordered_points_id(points: &[Point3]) -> u64 {
    let mut keys: Vec<[u64; 3]> = points.iter().map(|p| p.map(f64::to_bits)).collect();
    keys.sort_unstable();
    content_id(keys.iter().flatten().flat_map(|c| c.to_le_bytes()))
}

/// Seed for one named unit of work, independent of scheduling order.
pub fn derive_seed(master: u64, key: &str) -> u64 {
    content_id(master.to_le_bytes().into_iter().chain(key.bytes()))
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unordered_id_ignores_order() {
        let a = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let b = [[4.0, 5.0, 6.0], [1.0, 2.0, 3.0]];
        assert_eq!(unordered_points_id(&a), unordered_points_id(&b));
        assert_ne!(points_id(&a), points_id(&b));
    }

    #[test]
    fn derived_seeds_differ_by_key() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
        assert_eq!(derive_seed(7, "chair_0001"), derive_seed(7, "chair_0001"));
        assert_eq!(to_hex(&[0, 255, 16]), "00ff10");
    }
}
