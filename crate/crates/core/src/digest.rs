//! Hashing helpers shared by entity keys, asset references and the mock
//! backends.
//!
//! Entity keys use 64-bit FNV-1a with the published offset basis and prime so
//! that keys can be reproduced byte-for-byte from any language. Asset
//! integrity uses SHA-256 over the file contents.

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

pub const FNV64_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV64_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over `bytes`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV64_OFFSET_BASIS;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV64_PRIME);
    }
    hash
}

/// Low 32 bits of [`fnv1a64`] as eight lowercase hex digits.
pub fn fnv1a64_hex8(bytes: &[u8]) -> String {
    format!("{:08x}", fnv1a64(bytes) as u32)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
