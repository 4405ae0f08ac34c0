//! Serde helpers for bitwidth-keyed tables.
//!
//! TOML tables only have string keys, so `{ "8" = 0.5 }` is read back into a
//! `BTreeMap<u32, f64>` here. JSON objects go through the same path.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;

pub mod bits_map {
    use super::*;

    pub fn serialize<S: Serializer>(map: &BTreeMap<u32, f64>, s: S) -> Result<S::Ok, S::Error> {
        let as_strings: BTreeMap<String, f64> =
            map.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        as_strings.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, f64>, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                k.trim()
                    .parse::<u32>()
                    .map(|bits| (bits, v))
                    .map_err(|_| D::Error::custom(format!("bitwidth key `{k}` is not an integer")))
            })
            .collect()
    }
}
