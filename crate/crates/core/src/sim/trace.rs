use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Archetype, Experiment, Paradigm, TaskId};
use crate::a2a::Phase;
use crate::gatekeeper::Zone;
use crate::updl::Granularity;

/// Keystroke-level operators that carry a fixed unit time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operator {
    M,
    K,
    P,
    H,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosedField {
    pub field_path: String,
    pub granularity: Granularity,
}

/// One handshake as seen by the measurement layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandshakeSummary {
    pub handshake_id: String,
    pub counterpart_id: String,
    pub archetype: Option<Archetype>,
    pub legitimate: Option<bool>,
    pub strictness: Option<u8>,
    /// False for the ungoverned baseline.
    pub gatekeeper: bool,
    pub terminal: Phase,
    pub zone: Option<Zone>,
    pub escalated: bool,
    pub requested_fields: Vec<String>,
    pub disclosed: Vec<DisclosedField>,
    pub avatar_tokens: u64,
    pub counterpart_tokens: u64,
    /// Frames in transcript line form; empty for the baseline.
    pub transcript: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceEvent {
    EpisodeStart {
        experiment: Experiment,
        paradigm: Paradigm,
        task: Option<TaskId>,
        run: u32,
        budget: Option<f64>,
    },
    Operator {
        op: Operator,
        count: u32,
    },
    Wait {
        ms: u64,
    },
    Turn,
    Click {
        count: u32,
    },
    TextInput {
        chars: u32,
    },
    /// Tokens of one generation step. `read` counts content the user
    /// consumed outside the model (pages, documents).
    Tokens {
        key: String,
        tokens_in: u64,
        tokens_out: u64,
        read: u64,
        useful: u64,
    },
    Output {
        text: String,
    },
    PodMount {
        session_id: String,
    },
    FactQuery {
        field_path: String,
        found: bool,
    },
    PodUnmount {
        cleared_buffers: usize,
        cleared_entries: usize,
    },
    HandshakeStart {
        handshake_id: String,
        counterpart_id: String,
    },
    Handshake(HandshakeSummary),
    EpisodeEnd {
        success: bool,
    },
}

impl TraceEvent {
    pub fn tokens_exposed(&self) -> u64 {
        match self {
            TraceEvent::Tokens { tokens_out, read, .. } => tokens_out + read,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Virtual time in microseconds.
    pub t: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("record {0}: timestamp goes backwards")]
    NonMonotonic(usize),
    #[error("record {0}: useful tokens exceed exposed tokens")]
    Conservation(usize),
    #[error("record {0}: episode structure broken")]
    Structure(usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, t: u64, event: TraceEvent) {
        self.records.push(TraceRecord { t, event });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn events(&self) -> impl Iterator<Item = &TraceEvent> {
        self.records.iter().map(|r| &r.event)
    }

    pub fn handshakes(&self) -> impl Iterator<Item = &HandshakeSummary> {
        self.events().filter_map(|e| match e {
            TraceEvent::Handshake(h) => Some(h),
            _ => None,
        })
    }

    /// One JSON object per line, keys in declaration order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut trace = Trace::default();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec: TraceRecord = serde_json::from_str(line).map_err(|e| TraceError::Parse {
                line: i + 1,
                reason: alloc::format!("{e}"),
            })?;
            trace.records.push(rec);
        }
        Ok(trace)
    }

    /// Checks monotone timestamps, token conservation and that episodes
    /// neither nest nor dangle.
    pub fn validate(&self) -> Result<(), TraceError> {
        let mut last = 0;
        let mut open = false;
        for (i, r) in self.records.iter().enumerate() {
            if r.t < last {
                return Err(TraceError::NonMonotonic(i));
            }
            last = r.t;
            match &r.event {
                TraceEvent::EpisodeStart { .. } if open => return Err(TraceError::Structure(i)),
                TraceEvent::EpisodeStart { .. } => open = true,
                TraceEvent::EpisodeEnd { .. } if !open => return Err(TraceError::Structure(i)),
                TraceEvent::EpisodeEnd { .. } => open = false,
                e @ TraceEvent::Tokens { useful, .. } if *useful > e.tokens_exposed() => {
                    return Err(TraceError::Conservation(i))
                }
                _ => {}
            }
        }
        if open {
            return Err(TraceError::Structure(self.records.len()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn jsonl_round_trip_and_shape() {
        let mut t = Trace::default();
        t.push(
            0,
            TraceEvent::EpisodeStart {
                experiment: Experiment::Rq1,
                paradigm: Paradigm::SoDA,
                task: Some(TaskId::CodeAudit),
                run: 0,
                budget: Some(20.0),
            },
        );
        t.push(
            5,
            TraceEvent::Operator {
                op: Operator::M,
                count: 2,
            },
        );
        t.push(9, TraceEvent::Turn);
        t.push(
            9,
            TraceEvent::Tokens {
                key: "k".into(),
                tokens_in: 3,
                tokens_out: 4,
                read: 0,
                useful: 2,
            },
        );
        t.push(12, TraceEvent::EpisodeEnd { success: true });
        let text = t.to_jsonl();
        assert!(text.starts_with("{\"t\":0,\"type\":\"episode_start\""));
        assert!(text.contains("{\"t\":9,\"type\":\"turn\"}"));
        assert_eq!(Trace::from_jsonl(&text).unwrap(), t);
        t.validate().unwrap();
    }

    #[test]
    fn validation_catches_broken_traces() {
        let mut t = Trace::default();
        t.push(5, TraceEvent::Turn);
        t.push(4, TraceEvent::Turn);
        assert_eq!(t.validate(), Err(TraceError::NonMonotonic(1)));
        let mut t = Trace::default();
        t.push(
            0,
            TraceEvent::Tokens {
                key: "k".into(),
                tokens_in: 0,
                tokens_out: 1,
                read: 0,
                useful: 2,
            },
        );
        assert_eq!(t.validate(), Err(TraceError::Conservation(0)));
        let mut t = Trace::default();
        t.push(0, TraceEvent::EpisodeEnd { success: true });
        assert_eq!(t.validate(), Err(TraceError::Structure(0)));
        assert!(Trace::from_jsonl("{\"t\":1}\n").is_err());
        assert_eq!(Trace::from_jsonl("").unwrap().records, vec![]);
    }
}
