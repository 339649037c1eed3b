use super::{EmbedError, Embedder, EmbeddingVector};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_from(FNV_OFFSET, bytes)
}

fn fnv1a64_from(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic offline embedder: character trigrams hashed into signed
/// buckets, then l2-normalized.
///
/// Bucket is `hash % dim`; the sign comes from the parity of the hash's
/// population count so it does not alias with the bucket index.
#[derive(Debug, Clone)]
pub struct LocalHashEmbedder {
    dim: usize,
    seed: u64,
}

impl LocalHashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        LocalHashEmbedder { dim, seed }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = text.chars().collect();
        let seeded = fnv1a64_from(FNV_OFFSET, &self.seed.to_le_bytes());
        let mut v = vec![0.0f64; self.dim];
        let mut add = |gram: &[char]| {
            let s: String = gram.iter().collect();
            let h = fnv1a64_from(seeded, s.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h.count_ones().is_multiple_of(2) {
                1.0
            } else {
                -1.0
            };
            v[bucket] += sign;
        };
        if chars.len() < 3 {
            add(&chars);
        } else {
            for w in chars.windows(3) {
                add(w);
            }
        }
        let n = super::norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

impl Embedder for LocalHashEmbedder {
    fn tag(&self) -> String {
        format!("local_hash-d{}-s{}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let tag = self.tag();
        texts
            .iter()
            .map(|t| EmbeddingVector::new(self.embed_one(t), &tag))
            .collect()
    }
}
