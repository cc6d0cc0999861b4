//! Hashed character-trigram embeddings.
//!
//! Lowercase, pad with `^`/`$`, hash every character trigram with 64-bit
//! FNV-1a into one of 256 buckets, count, then L2-normalize. Needs no model
//! files and is fully deterministic.

use super::{EmbeddingProvider, EmbeddingVector, ProviderInfo, RetrievalError};

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
pub const TRIGRAM_DIMENSION: usize = 256;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET_BASIS, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramProvider;

impl TrigramProvider {
    /// Raw bucket counts before normalization.
    pub fn counts(text: &str) -> Option<Vec<f64>> {
        if text.trim().is_empty() {
            return None;
        }
        let chars: Vec<char> = std::iter::once('^')
            .chain(text.to_lowercase().chars())
            .chain(std::iter::once('$'))
            .collect();
        let mut counts = vec![0.0; TRIGRAM_DIMENSION];
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut n = 0;
            for c in w {
                n += c.encode_utf8(&mut buf[n..]).len();
            }
            let bucket = (fnv1a64(&buf[..n]) % TRIGRAM_DIMENSION as u64) as usize;
            counts[bucket] += 1.0;
        }
        Some(counts)
    }
}

impl EmbeddingProvider for TrigramProvider {
    fn info(&self) -> ProviderInfo {
        ProviderInfo {
            name: "hashed-char-trigram".into(),
            dimension: TRIGRAM_DIMENSION,
            version: "fnv1a64-cbf29ce484222325-v1".into(),
        }
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        Self::counts(text)
            .and_then(EmbeddingVector::normalized)
            .ok_or_else(|| RetrievalError::Unembeddable(text.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn abc_hits_three_trigram_buckets() {
        let counts = TrigramProvider::counts("abc").unwrap();
        let mut want = vec![0.0; TRIGRAM_DIMENSION];
        for tri in ["^ab", "abc", "bc$"] {
            want[(fnv1a64(tri.as_bytes()) % 256) as usize] += 1.0;
        }
        assert_eq!(counts, want);
        assert!(counts.iter().filter(|&&c| c > 0.0).count() <= 3);
    }

    #[test]
    fn unit_norm_and_determinism() {
        let p = TrigramProvider;
        for s in ["a", "Napoleon <|sep|> Birth_Date", "ÉCOLE normale", "  x "] {
            let v = p.embed(s).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-9);
            assert!((v.cosine(&v) - 1.0).abs() < 1e-9);
            assert_eq!(v, p.embed(s).unwrap());
        }
    }

    #[test]
    fn lowercasing() {
        let p = TrigramProvider;
        assert_eq!(p.embed("ABC").unwrap(), p.embed("abc").unwrap());
    }

    #[test]
    fn blank_is_unembeddable() {
        assert!(TrigramProvider.embed("").is_err());
        assert!(TrigramProvider.embed(" \t\n").is_err());
    }
}
