//! Sovereign digital avatar core.
//!
//! Everything in this crate is pure computation over owned values: the
//! profile description language ([`updl`]), the encrypted memory pod
//! ([`pod`]), the dual-factor gatekeeper ([`gatekeeper`]), the
//! agent-to-agent handshake ([`a2a`]), the deterministic simulation harness
//! ([`sim`]) and the interaction metrics ([`metrics`]).
//!
//! The crate is `no_std` and only needs an allocator. Clocks, entropy and
//! file access are supplied by the caller, which keeps every run
//! reproducible from its inputs.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod a2a;
pub mod gatekeeper;
pub mod metrics;
pub mod pod;
pub mod sim;
pub mod updl;

pub(crate) mod digest {
    use alloc::string::String;
    use sha2::{Digest, Sha256};

    pub fn sha256_hex(bytes: &[u8]) -> String {
        hex::encode(Sha256::digest(bytes))
    }

    pub fn sha256(bytes: &[u8]) -> [u8; 32] {
        Sha256::digest(bytes).into()
    }
}
