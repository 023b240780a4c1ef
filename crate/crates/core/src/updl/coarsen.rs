use alloc::string::String;
use alloc::vec::Vec;

use super::{Granularity, ProfileNode, Range, RedactionRule, SensitivityOntology, UpdlError, Value};

pub const PLACEHOLDER: &str = "[REDACTED]";

/// Rewrites `node` to `target` granularity using its class's redaction table.
///
/// Levels 2 and 3 do not depend on the value and bucketing is idempotent,
/// so coarsening in two steps gives the same result as one step.
pub fn coarsen(
    node: &ProfileNode,
    target: Granularity,
    ontology: &SensitivityOntology,
) -> Result<ProfileNode, UpdlError> {
    if target < node.granularity {
        return Err(UpdlError::Monotonicity {
            from: node.granularity.as_u8(),
            to: target.as_u8(),
        });
    }
    if target == node.granularity {
        return Ok(node.clone());
    }
    let entry = ontology
        .entry(&node.ontology_class)
        .ok_or_else(|| UpdlError::UnknownClass(node.ontology_class.clone()))?;
    let value = match entry.rule_for(target) {
        RedactionRule::Identity => node.value.clone(),
        RedactionRule::Bucketize => bucketize(&node.value),
        RedactionRule::CategoryOnly => Value::Text(category_label(&node.ontology_class)),
        RedactionRule::Placeholder => Value::text(PLACEHOLDER),
    };
    Ok(ProfileNode {
        value,
        granularity: target,
        ..node.clone()
    })
}

fn category_label(class: &str) -> String {
    let top = class.split('.').next().unwrap_or(class);
    alloc::format!("category:{top}")
}

fn bucketize(value: &Value) -> Value {
    match value {
        Value::Int(i) => Value::Range(bucket_number(*i as f64)),
        Value::Num(x) => Value::Range(bucket_number(*x)),
        Value::Text(s) => Value::Text(initials(s)),
        Value::List(items) => Value::List(items.iter().map(bucketize).collect()),
        Value::Range(_) | Value::Bool(_) | Value::Ref(_) => value.clone(),
    }
}

/// Order-of-magnitude bucket: `[10^k, 10^(k+1))` for positive values,
/// `[0, 1)` below one, mirrored for negatives.
pub fn bucket_number(x: f64) -> Range {
    let magnitude = if x < 0.0 { -x } else { x };
    if magnitude < 1.0 {
        return if x < 0.0 {
            Range { lo: -1.0, hi: 0.0 }
        } else {
            Range { lo: 0.0, hi: 1.0 }
        };
    }
    let mut lower = 1.0_f64;
    while lower * 10.0 <= magnitude && (lower * 10.0).is_finite() {
        lower *= 10.0;
    }
    let upper = lower * 10.0;
    if x < 0.0 {
        Range { lo: -upper, hi: -lower }
    } else {
        Range { lo: lower, hi: upper }
    }
}

/// "Mira Solberg" becomes "M. S."; already-abbreviated text is unchanged.
pub fn initials(text: &str) -> String {
    let words: Vec<String> = text
        .split_whitespace()
        .filter_map(|w| w.chars().next())
        .map(|c| {
            let mut s = String::new();
            s.push(c);
            s.push('.');
            s
        })
        .collect();
    words.join(" ")
}
