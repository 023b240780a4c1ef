//! Sovereign memory pod: an authenticated, encrypted container for a
//! profile graph and its interaction logs.
//!
//! File layout (all lengths little-endian):
//!
//! ```text
//! "SMP1" | version u8 | salt_len u8 | salt | nonce_len u8 | nonce
//!        | ciphertext_len u64 | ciphertext | tag[16]
//! ```
//!
//! The key is stretched from the passphrase with Argon2id and the payload
//! is sealed with ChaCha20-Poly1305. Every header byte is bound into the
//! AEAD associated data, so any single-byte change is rejected.

mod embed;
mod session;

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use argon2::{Algorithm, Argon2, Params, Version};
use chacha20poly1305::aead::{AeadInPlace, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce, Tag};
use rand_core::CryptoRngCore;
use serde::{Deserialize, Serialize};
use zeroize::{Zeroize, Zeroizing};

use crate::updl::{self, ProfileGraph, SensitivityOntology, UpdlError};

pub use embed::{embed, Embedding, EMBED_DIM};
pub use session::{ErasureReceipt, PodSession, SessionState, K_HOT};

pub const MAGIC: &[u8; 4] = b"SMP1";
pub const FORMAT_VERSION: u8 = 1;
pub const SALT_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

// Argon2id cost for format version 1.
const KDF_MEMORY_KIB: u32 = 19_456;
const KDF_ITERATIONS: u32 = 2;
const KDF_LANES: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PodError {
    #[error("passphrase must not be empty")]
    EmptyPassphrase,
    #[error("not a memory pod (bad magic)")]
    BadMagic,
    #[error("unsupported pod format version {0}")]
    UnsupportedVersion(u8),
    #[error("malformed pod: {0}")]
    Malformed(&'static str),
    #[error("authentication failed: wrong passphrase or tampered pod")]
    Authentication,
    #[error("pod content is invalid: {0}")]
    Content(String),
    #[error("pod is already mounted")]
    AlreadyMounted,
    #[error("session is closed")]
    SessionClosed,
    #[error("query parameter out of range: {0}")]
    InvalidQuery(&'static str),
    #[error("key derivation failed")]
    Kdf,
}

impl From<UpdlError> for PodError {
    fn from(e: UpdlError) -> Self {
        PodError::Content(e.to_string())
    }
}

/// One unstructured interaction log line with its embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub text: String,
    pub timestamp: u64,
    pub tags: Vec<String>,
    pub embedding: Embedding,
}

impl LogEntry {
    pub fn new(text: impl Into<String>, timestamp: u64, tags: Vec<String>) -> Self {
        let text = text.into();
        let embedding = embed(&text);
        Self {
            text,
            timestamp,
            tags,
            embedding,
        }
    }
}

/// A parsed, still-encrypted pod. Clones share the mount flag, so a pod
/// instance can hold at most one mounted session.
#[derive(Clone, Debug)]
pub struct SealedPod {
    bytes: Vec<u8>,
    layout: Layout,
    mounted: Arc<AtomicBool>,
    mounts: Arc<AtomicU64>,
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    salt: (usize, usize),
    nonce: (usize, usize),
    /// End of the associated data (header through ciphertext length).
    aad_end: usize,
    ciphertext: (usize, usize),
    tag: usize,
}

impl SealedPod {
    /// Validates magic and version before looking at anything else.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, PodError> {
        let layout = parse_layout(&bytes)?;
        Ok(Self {
            bytes,
            layout,
            mounted: Arc::new(AtomicBool::new(false)),
            mounts: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn salt(&self) -> &[u8] {
        &self.bytes[self.layout.salt.0..self.layout.salt.1]
    }

    pub fn is_mounted(&self) -> bool {
        self.mounted.load(Ordering::SeqCst)
    }

    /// Decrypts into a session. Only one session per pod instance may be
    /// mounted at a time.
    pub fn mount(&self, passphrase: &str, ontology: &SensitivityOntology, now: u64) -> Result<PodSession, PodError> {
        if self
            .mounted
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return Err(PodError::AlreadyMounted);
        }
        match self.open(passphrase, ontology) {
            Ok((graph, logs)) => Ok(PodSession::new(
                self.session_id(now),
                graph,
                logs,
                now,
                Arc::clone(&self.mounted),
            )),
            Err(e) => {
                self.mounted.store(false, Ordering::SeqCst);
                Err(e)
            }
        }
    }

    fn open(
        &self,
        passphrase: &str,
        ontology: &SensitivityOntology,
    ) -> Result<(ProfileGraph, Vec<LogEntry>), PodError> {
        let l = &self.layout;
        let key = derive_key(passphrase, self.salt())?;
        let cipher = ChaCha20Poly1305::new(Key::from_slice(key.as_slice()));
        let nonce = Nonce::from_slice(&self.bytes[l.nonce.0..l.nonce.1]);
        let tag = Tag::from_slice(&self.bytes[l.tag..l.tag + TAG_LEN]);
        let mut plaintext = Zeroizing::new(self.bytes[l.ciphertext.0..l.ciphertext.1].to_vec());
        cipher
            .decrypt_in_place_detached(nonce, &self.bytes[..l.aad_end], &mut plaintext, tag)
            .map_err(|_| PodError::Authentication)?;
        decode_payload(&plaintext, ontology)
    }

    fn session_id(&self, now: u64) -> String {
        let n = self.mounts.fetch_add(1, Ordering::Relaxed);
        let mut seed = Vec::with_capacity(SALT_LEN + 16);
        seed.extend_from_slice(self.salt());
        seed.extend_from_slice(&now.to_le_bytes());
        seed.extend_from_slice(&n.to_le_bytes());
        let mut id = crate::digest::sha256_hex(&seed);
        id.truncate(16);
        id
    }
}

fn parse_layout(bytes: &[u8]) -> Result<Layout, PodError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(PodError::BadMagic);
    }
    let mut at = MAGIC.len();
    let version = *bytes.get(at).ok_or(PodError::Malformed("missing version"))?;
    if version != FORMAT_VERSION {
        return Err(PodError::UnsupportedVersion(version));
    }
    at += 1;

    let field = |at: &mut usize, expected: usize, what: &'static str| {
        let len = *bytes.get(*at).ok_or(PodError::Malformed(what))? as usize;
        if len != expected {
            return Err(PodError::Malformed(what));
        }
        let start = *at + 1;
        let end = start + len;
        if end > bytes.len() {
            return Err(PodError::Malformed(what));
        }
        *at = end;
        Ok((start, end))
    };
    let salt = field(&mut at, SALT_LEN, "salt")?;
    let nonce = field(&mut at, NONCE_LEN, "nonce")?;

    let len_bytes: [u8; 8] = bytes
        .get(at..at + 8)
        .ok_or(PodError::Malformed("ciphertext length"))?
        .try_into()
        .expect("slice of len 8");
    let ct_len = u64::from_le_bytes(len_bytes);
    at += 8;
    let aad_end = at;
    let remaining = (bytes.len() - at) as u64;
    if remaining < TAG_LEN as u64 || ct_len != remaining - TAG_LEN as u64 {
        return Err(PodError::Malformed("ciphertext length does not match file size"));
    }
    let ct_end = at + ct_len as usize;
    Ok(Layout {
        salt,
        nonce,
        aad_end,
        ciphertext: (at, ct_end),
        tag: ct_end,
    })
}

fn derive_key(passphrase: &str, salt: &[u8]) -> Result<Zeroizing<[u8; 32]>, PodError> {
    let params = Params::new(KDF_MEMORY_KIB, KDF_ITERATIONS, KDF_LANES, Some(32)).map_err(|_| PodError::Kdf)?;
    let mut key = Zeroizing::new([0u8; 32]);
    Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
        .hash_password_into(passphrase.as_bytes(), salt, key.as_mut())
        .map_err(|_| PodError::Kdf)?;
    Ok(key)
}

fn encode_payload(graph: &ProfileGraph, logs: &[LogEntry]) -> Zeroizing<Vec<u8>> {
    let mut doc = updl::serialize(graph);
    let mut archive = serde_json::to_vec(logs).expect("log entries serialize");
    let mut out = Vec::with_capacity(4 + doc.len() + archive.len());
    out.extend_from_slice(&(doc.len() as u32).to_le_bytes());
    out.extend_from_slice(&doc);
    out.extend_from_slice(&archive);
    doc.zeroize();
    archive.zeroize();
    Zeroizing::new(out)
}

fn decode_payload(plaintext: &[u8], ontology: &SensitivityOntology) -> Result<(ProfileGraph, Vec<LogEntry>), PodError> {
    let len_bytes: [u8; 4] = plaintext
        .get(..4)
        .ok_or(PodError::Content("truncated payload".into()))?
        .try_into()
        .expect("slice of len 4");
    let doc_len = u32::from_le_bytes(len_bytes) as usize;
    let doc = plaintext
        .get(4..4 + doc_len)
        .ok_or(PodError::Content("truncated profile document".into()))?;
    let graph = updl::parse(doc, ontology)?;
    let logs: Vec<LogEntry> =
        serde_json::from_slice(&plaintext[4 + doc_len..]).map_err(|e| PodError::Content(e.to_string()))?;
    Ok((graph, logs))
}

/// Seals `graph` and `logs` under `passphrase` with fresh salt and nonce.
pub fn create_pod(
    graph: &ProfileGraph,
    logs: &[LogEntry],
    passphrase: &str,
    rng: &mut impl CryptoRngCore,
) -> Result<SealedPod, PodError> {
    if passphrase.is_empty() {
        return Err(PodError::EmptyPassphrase);
    }
    let mut salt = [0u8; SALT_LEN];
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut salt);
    rng.fill_bytes(&mut nonce);

    let payload = encode_payload(graph, logs);
    let mut out = Vec::with_capacity(payload.len() + 64);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(SALT_LEN as u8);
    out.extend_from_slice(&salt);
    out.push(NONCE_LEN as u8);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    let aad_end = out.len();

    let key = derive_key(passphrase, &salt)?;
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key.as_slice()));
    let mut buf = payload.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(Nonce::from_slice(&nonce), &out[..aad_end], &mut buf)
        .map_err(|_| PodError::Kdf)?;
    out.extend_from_slice(&buf);
    out.extend_from_slice(tag.as_slice());
    SealedPod::from_bytes(out)
}
