use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering as CmpOrdering;
use core::sync::atomic::{AtomicBool, Ordering};

use zeroize::Zeroize;

use super::{embed, LogEntry, PodError};
use crate::updl::{NodeId, ProfileGraph, ProfileNode, Value};

/// Number of most-recent log entries preloaded into working memory.
pub const K_HOT: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    Mounted,
    Unmounted,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErasureReceipt {
    pub session_id: String,
    pub cleared_buffers: usize,
    pub cleared_entries: usize,
    pub unmounted_at: u64,
}

/// Transient decrypted view of a pod. Plaintext lives in exactly three
/// stores (graph, log store, working-memory cache); unmounting or dropping
/// the session overwrites and clears all of them.
#[derive(Debug)]
pub struct PodSession {
    session_id: String,
    state: SessionState,
    mounted_at: u64,
    graph: ProfileGraph,
    logs: Vec<LogEntry>,
    cache: Vec<LogEntry>,
    flag: Arc<AtomicBool>,
}

impl PodSession {
    pub(super) fn new(
        session_id: String,
        graph: ProfileGraph,
        logs: Vec<LogEntry>,
        mounted_at: u64,
        flag: Arc<AtomicBool>,
    ) -> Self {
        let mut recent: Vec<&LogEntry> = logs.iter().collect();
        // Stable sort keeps later insertions ahead on equal timestamps after reversal.
        recent.sort_by_key(|e| e.timestamp);
        let cache = recent.into_iter().rev().take(K_HOT).cloned().collect();
        Self {
            session_id,
            state: SessionState::Mounted,
            mounted_at,
            graph,
            logs,
            cache,
            flag,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn mounted_at(&self) -> u64 {
        self.mounted_at
    }

    fn ensure_open(&self) -> Result<(), PodError> {
        match self.state {
            SessionState::Mounted => Ok(()),
            SessionState::Unmounted => Err(PodError::SessionClosed),
        }
    }

    pub fn graph(&self) -> Result<&ProfileGraph, PodError> {
        self.ensure_open()?;
        Ok(&self.graph)
    }

    pub fn logs(&self) -> Result<&[LogEntry], PodError> {
        self.ensure_open()?;
        Ok(&self.logs)
    }

    /// The `K_HOT` most recent entries, newest first.
    pub fn working_memory(&self) -> Result<&[LogEntry], PodError> {
        self.ensure_open()?;
        Ok(&self.cache)
    }

    pub fn node(&self, field_path: &str) -> Result<Option<&ProfileNode>, PodError> {
        self.ensure_open()?;
        Ok(self.graph.node_by_path(field_path))
    }

    /// Values of every node reached from `start_path` by following
    /// `relation_chain` one predicate at a time.
    pub fn query_fact(&self, start_path: &str, relation_chain: &[&str]) -> Result<Vec<Value>, PodError> {
        self.ensure_open()?;
        let start = NodeId::for_path(start_path);
        if self.graph.node(&start).is_none() {
            return Ok(Vec::new());
        }
        let mut frontier: BTreeSet<NodeId> = BTreeSet::new();
        frontier.insert(start);
        for predicate in relation_chain {
            frontier = frontier
                .iter()
                .flat_map(|id| self.graph.objects(id, predicate))
                .cloned()
                .collect();
            if frontier.is_empty() {
                break;
            }
        }
        Ok(frontier
            .iter()
            .filter_map(|id| self.graph.node(id))
            .map(|n| n.value.clone())
            .collect())
    }

    /// Top-`k` log entries by cosine similarity; ties go to newer entries.
    pub fn query_semantic(&self, query_text: &str, k: usize) -> Result<Vec<LogEntry>, PodError> {
        self.ensure_open()?;
        if k == 0 {
            return Err(PodError::InvalidQuery("k must be at least 1"));
        }
        let q = embed(query_text);
        let mut scored: Vec<(f64, &LogEntry)> = self.logs.iter().map(|e| (q.cosine(&e.embedding), e)).collect();
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(CmpOrdering::Equal)
                .then_with(|| b.1.timestamp.cmp(&a.1.timestamp))
        });
        Ok(scored.into_iter().take(k).map(|(_, e)| e.clone()).collect())
    }

    /// Burn-after-reading: wipes all plaintext stores and releases the pod.
    pub fn unmount(&mut self, now: u64) -> Result<ErasureReceipt, PodError> {
        self.ensure_open()?;
        let entries = self.graph.node_count() + self.logs.len() + self.cache.len();
        let buffers = self.wipe();
        self.state = SessionState::Unmounted;
        self.flag.store(false, Ordering::SeqCst);
        Ok(ErasureReceipt {
            session_id: self.session_id.clone(),
            cleared_buffers: buffers,
            cleared_entries: entries,
            unmounted_at: now,
        })
    }

    /// Returns the number of plaintext stores cleared.
    fn wipe(&mut self) -> usize {
        self.graph.wipe();
        for store in [&mut self.logs, &mut self.cache] {
            for entry in store.iter_mut() {
                entry.text.zeroize();
                for tag in &mut entry.tags {
                    tag.zeroize();
                }
                entry.embedding.0.zeroize();
            }
            store.clear();
            store.shrink_to_fit();
        }
        3
    }

    /// True when no plaintext remains in any store.
    pub fn is_wiped(&self) -> bool {
        self.graph.node_count() == 0 && self.graph.edge_count() == 0 && self.logs.is_empty() && self.cache.is_empty()
    }
}

impl Drop for PodSession {
    fn drop(&mut self) {
        if self.state == SessionState::Mounted {
            self.wipe();
            self.flag.store(false, Ordering::SeqCst);
        }
    }
}
