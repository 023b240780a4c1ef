use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const EMBED_DIM: usize = 64;

/// Unit-length feature vector for a log entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(pub(crate) [f64; EMBED_DIM]);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|x| x * x).sum())
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        // Both sides are unit length, so the dot product is the cosine.
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn from_slice(values: &[f64]) -> Option<Self> {
        let arr: [f64; EMBED_DIM] = values.try_into().ok()?;
        let e = Embedding(arr);
        (e.0.iter().all(|x| x.is_finite()) && (e.norm() - 1.0).abs() <= 1e-6).then_some(e)
    }
}

impl Serialize for Embedding {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        Embedding::from_slice(&values).ok_or_else(|| serde::de::Error::custom("embedding must be a 64-dim unit vector"))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
}

/// Feature-hashed bag of lowercased words, L2-normalised.
///
/// Each token adds ±1 to one of 64 buckets; the sign comes from the top
/// hash bit. Text without tokens (or whose tokens cancel) falls back to a
/// single bucket chosen by hashing the raw text, so the result is always
/// unit length.
pub fn embed(text: &str) -> Embedding {
    let mut v = [0.0_f64; EMBED_DIM];
    for token in tokens(text) {
        let h = fnv1a64(token.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % EMBED_DIM as u64) as usize] += sign;
    }
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
    if norm == 0.0 {
        let mut fallback = [0.0; EMBED_DIM];
        fallback[(fnv1a64(text.as_bytes()) % EMBED_DIM as u64) as usize] = 1.0;
        return Embedding(fallback);
    }
    for x in &mut v {
        *x /= norm;
    }
    Embedding(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_unit_length() {
        let a = embed("Booked the Lisbon conference hotel");
        assert_eq!(a, embed("Booked the Lisbon conference hotel"));
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert!((a.cosine(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn case_and_punctuation_insensitive() {
        assert_eq!(embed("Hello, World!"), embed("hello world"));
    }

    #[test]
    fn degenerate_inputs_are_still_unit() {
        for t in ["", "!!!", "   "] {
            assert!((embed(t).norm() - 1.0).abs() < 1e-6, "{t:?}");
        }
    }
}
