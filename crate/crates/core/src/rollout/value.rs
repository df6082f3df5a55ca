use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, MapAccess, SeqAccess, Visitor};
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest magnitude at which every integer is exactly representable as `f64`.
const MAX_SAFE_INTEGER: f64 = 9_007_199_254_740_992.0;

/// A tool-call argument tree.
///
/// Integral numbers are held as [`ArgValue::Int`] so identifiers compare
/// exactly; everything else numeric is a finite [`ArgValue::Float`].
/// Maps are key-ordered, which makes equality insensitive to the order keys
/// appeared in the source document.
#[derive(Debug, Clone, PartialEq)]
pub enum ArgValue {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ArgValue>),
    Map(BTreeMap<String, ArgValue>),
}

impl ArgValue {
    /// Builds a number, preferring the exact integer form when `x` is integral.
    pub fn number(x: f64) -> Self {
        if x.is_finite() && x.fract() == 0.0 && x.abs() <= MAX_SAFE_INTEGER {
            ArgValue::Int(x as i64)
        } else {
            ArgValue::Float(x)
        }
    }

    pub fn map<K: Into<String>>(entries: impl IntoIterator<Item = (K, ArgValue)>) -> Self {
        ArgValue::Map(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn empty_map() -> Self {
        ArgValue::Map(BTreeMap::new())
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, ArgValue>> {
        match self {
            ArgValue::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ArgValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ArgValue::Int(i) => Some(*i as f64),
            ArgValue::Float(x) => Some(*x),
            _ => None,
        }
    }

    /// True when no number anywhere in the tree is NaN or infinite.
    pub fn is_finite(&self) -> bool {
        match self {
            ArgValue::Float(x) => x.is_finite(),
            ArgValue::List(items) => items.iter().all(ArgValue::is_finite),
            ArgValue::Map(m) => m.values().all(ArgValue::is_finite),
            _ => true,
        }
    }

    /// Compact JSON text with keys in sorted order.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite ArgValue always serializes")
    }
}

impl From<&str> for ArgValue {
    fn from(s: &str) -> Self {
        ArgValue::Str(s.to_owned())
    }
}

impl From<String> for ArgValue {
    fn from(s: String) -> Self {
        ArgValue::Str(s)
    }
}

impl From<i64> for ArgValue {
    fn from(i: i64) -> Self {
        ArgValue::Int(i)
    }
}

impl From<bool> for ArgValue {
    fn from(b: bool) -> Self {
        ArgValue::Bool(b)
    }
}

impl FromStr for ArgValue {
    type Err = serde_json::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_str(s)
    }
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match serde_json::to_string(self) {
            Ok(s) => f.write_str(&s),
            Err(_) => write!(f, "{self:?}"),
        }
    }
}

impl Serialize for ArgValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ArgValue::Null => serializer.serialize_unit(),
            ArgValue::Bool(b) => serializer.serialize_bool(*b),
            ArgValue::Int(i) => serializer.serialize_i64(*i),
            ArgValue::Float(x) => {
                if !x.is_finite() {
                    return Err(serde::ser::Error::custom(
                        "non-finite number in argument tree",
                    ));
                }
                serializer.serialize_f64(*x)
            }
            ArgValue::Str(s) => serializer.serialize_str(s),
            ArgValue::List(items) => {
                let mut seq = serializer.serialize_seq(Some(items.len()))?;
                for item in items {
                    seq.serialize_element(item)?;
                }
                seq.end()
            }
            ArgValue::Map(m) => {
                let mut map = serializer.serialize_map(Some(m.len()))?;
                for (k, v) in m {
                    map.serialize_entry(k, v)?;
                }
                map.end()
            }
        }
    }
}

struct ArgValueVisitor;

impl<'de> Visitor<'de> for ArgValueVisitor {
    type Value = ArgValue;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a JSON value")
    }

    fn visit_unit<E>(self) -> Result<ArgValue, E> {
        Ok(ArgValue::Null)
    }

    fn visit_none<E>(self) -> Result<ArgValue, E> {
        Ok(ArgValue::Null)
    }

    fn visit_bool<E>(self, b: bool) -> Result<ArgValue, E> {
        Ok(ArgValue::Bool(b))
    }

    fn visit_i64<E>(self, i: i64) -> Result<ArgValue, E> {
        Ok(ArgValue::Int(i))
    }

    fn visit_u64<E: de::Error>(self, u: u64) -> Result<ArgValue, E> {
        i64::try_from(u)
            .map(ArgValue::Int)
            .map_err(|_| E::custom(format!("integer {u} does not fit in 64-bit signed range")))
    }

    fn visit_f64<E: de::Error>(self, x: f64) -> Result<ArgValue, E> {
        if !x.is_finite() {
            return Err(E::custom("non-finite number"));
        }
        Ok(ArgValue::number(x))
    }

    fn visit_str<E>(self, s: &str) -> Result<ArgValue, E> {
        Ok(ArgValue::Str(s.to_owned()))
    }

    fn visit_string<E>(self, s: String) -> Result<ArgValue, E> {
        Ok(ArgValue::Str(s))
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<ArgValue, A::Error> {
        let mut items = Vec::with_capacity(seq.size_hint().unwrap_or(0));
        while let Some(item) = seq.next_element()? {
            items.push(item);
        }
        Ok(ArgValue::List(items))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<ArgValue, A::Error> {
        let mut map = BTreeMap::new();
        while let Some((key, value)) = access.next_entry::<String, ArgValue>()? {
            if map.contains_key(&key) {
                return Err(de::Error::custom(format!("duplicate map key `{key}`")));
            }
            map.insert(key, value);
        }
        Ok(ArgValue::Map(map))
    }
}

impl<'de> Deserialize<'de> for ArgValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        deserializer.deserialize_any(ArgValueVisitor)
    }
}
