use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Number, Value as Json};

use super::NodeId;

/// Half-open numeric interval produced by bucketing a number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

/// Attribute value carried by a profile node.
///
/// Lists hold scalars only; a list of lists or a list of references is
/// rejected when a graph is built or parsed.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Text(String),
    Int(i64),
    Num(f64),
    Bool(bool),
    Range(Range),
    List(Vec<Value>),
    Ref(NodeId),
}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, Value::List(_) | Value::Ref(_))
    }

    /// Structural check: finite numbers, well-formed ranges, flat lists.
    pub fn check(&self) -> Result<(), &'static str> {
        match self {
            Value::Num(x) if !x.is_finite() => Err("non-finite number"),
            Value::Range(r) if !(r.lo.is_finite() && r.hi.is_finite() && r.lo < r.hi) => Err("malformed range"),
            Value::List(items) => {
                for item in items {
                    if !item.is_scalar() {
                        return Err("lists may only hold scalars");
                    }
                    item.check()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Text(s) => Json::String(s.clone()),
            Value::Int(i) => Json::Number(Number::from(*i)),
            Value::Num(x) => Number::from_f64(*x).map(Json::Number).unwrap_or(Json::Null),
            Value::Bool(b) => Json::Bool(*b),
            Value::Range(r) => {
                let mut m = Map::new();
                let bounds = [r.lo, r.hi]
                    .iter()
                    .map(|b| Number::from_f64(*b).map(Json::Number).unwrap_or(Json::Null))
                    .collect();
                m.insert("@range".into(), Json::Array(bounds));
                Json::Object(m)
            }
            Value::List(items) => {
                let mut m = Map::new();
                m.insert("@list".into(), Json::Array(items.iter().map(Value::to_json).collect()));
                Json::Object(m)
            }
            Value::Ref(id) => {
                let mut m = Map::new();
                m.insert("@id".into(), Json::String(id.as_str().into()));
                Json::Object(m)
            }
        }
    }

    pub fn from_json(json: &Json) -> Result<Value, String> {
        let value = match json {
            Json::String(s) => Value::Text(s.clone()),
            Json::Bool(b) => Value::Bool(*b),
            Json::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Value::Int(i)
                } else if n.is_u64() {
                    return Err("integer out of range".into());
                } else {
                    Value::Num(n.as_f64().ok_or("unrepresentable number")?)
                }
            }
            Json::Object(m) if m.len() == 1 => {
                let (key, inner) = m.iter().next().expect("len checked");
                match key.as_str() {
                    "@range" => {
                        let bounds = inner.as_array().ok_or("@range must be an array")?;
                        if bounds.len() != 2 {
                            return Err("@range needs two bounds".into());
                        }
                        let lo = bounds[0].as_f64().ok_or("range bound must be a number")?;
                        let hi = bounds[1].as_f64().ok_or("range bound must be a number")?;
                        Value::Range(Range { lo, hi })
                    }
                    "@list" => {
                        let items = inner.as_array().ok_or("@list must be an array")?;
                        Value::List(items.iter().map(Value::from_json).collect::<Result<_, _>>()?)
                    }
                    "@id" => {
                        let id = inner.as_str().ok_or("@id must be a string")?;
                        Value::Ref(NodeId::parse(id).ok_or("malformed node id")?)
                    }
                    other => return Err(alloc::format!("unknown value key `{other}`")),
                }
            }
            _ => return Err("unsupported value shape".into()),
        };
        value.check().map_err(ToString::to_string)?;
        Ok(value)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) => f.write_str(s),
            Value::Int(i) => write!(f, "{i}"),
            Value::Num(x) => write!(f, "{x}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Range(r) => write!(f, "[{}, {})", r.lo, r.hi),
            Value::List(items) => {
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                Ok(())
            }
            Value::Ref(id) => f.write_str(id.as_str()),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let json = Json::deserialize(deserializer)?;
        Value::from_json(&json).map_err(serde::de::Error::custom)
    }
}
