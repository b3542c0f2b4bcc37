//! Stable digests: cache keys for LLM requests and file digests for
//! manifests.

use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::Path;

/// Lowercase hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Lowercase hex SHA-256 of a file's contents, streamed.
pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Deterministic cache key over a request's identity.
///
/// The key hashes the canonical serialization
/// `model\n<name>\ntemp\n<t>\ntop_p\n<p>\nmax_tokens\n<m>\nprompt\n<text>`
/// with reals rendered in shortest round-trip decimal form (Rust's `Display`
/// for floats), so keys are stable across platforms and runs.
pub fn cache_key(
    model_name: &str,
    prompt_text: &str,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
) -> String {
    let canonical = format!(
        "model\n{model_name}\ntemp\n{temperature}\ntop_p\n{top_p}\nmax_tokens\n{max_tokens}\nprompt\n{prompt_text}"
    );
    sha256_hex(canonical.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_inputs_same_key() {
        let a = cache_key("m", "hello", 0.0, 1.0, 256);
        let b = cache_key("m", "hello", 0.0, 1.0, 256);
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn one_character_prompt_difference_changes_key() {
        // Both digests computed here, independently of any cached value.
        let a = cache_key("m", "hello", 0.0, 1.0, 256);
        let b = cache_key("m", "hellp", 0.0, 1.0, 256);
        assert_ne!(a, b);
    }

    #[test]
    fn parameters_are_part_of_the_key() {
        let a = cache_key("m", "hello", 0.0, 1.0, 256);
        let b = cache_key("m", "hello", 0.7, 1.0, 256);
        let c = cache_key("other", "hello", 0.0, 1.0, 256);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn key_is_pure_over_many_invocations() {
        let first = cache_key("model-x", "prompt body", 0.25, 0.9, 128);
        for _ in 0..10_000 {
            assert_eq!(cache_key("model-x", "prompt body", 0.25, 0.9, 128), first);
        }
    }

    #[test]
    fn floats_render_shortest_form() {
        // 0.1 must serialize as "0.1", not a long binary expansion.
        assert_eq!(format!("{}", 0.1_f64), "0.1");
        assert_eq!(format!("{}", 1.0_f64), "1");
    }
}
