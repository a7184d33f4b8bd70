//! Structure-aware mutation of model files.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde_json::Value;
use wien_core::codec::{EncodedModel, PREAMBLE_BYTES};
use wien_core::rng::Stream;
use wien_core::{decode, decode_roi};

fn split(bytes: &[u8]) -> (Value, Vec<u8>) {
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let end = PREAMBLE_BYTES + hlen;
    (serde_json::from_slice(&bytes[PREAMBLE_BYTES..end]).unwrap(), bytes[end..].to_vec())
}

fn join(header: &Value, payload: &[u8]) -> Vec<u8> {
    let json = serde_json::to_vec(header).unwrap();
    let mut out = b"WIEN".to_vec();
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    out
}

fn leaves(v: &mut Value) -> Vec<&mut Value> {
    let nested = match &*v {
        Value::Object(_) => true,
        Value::Array(a) => a.iter().any(|x| x.is_object() || x.is_array()),
        _ => false,
    };
    if !nested {
        return vec![v];
    }
    match v {
        Value::Object(m) => m.values_mut().flat_map(leaves).collect(),
        Value::Array(a) => a.iter_mut().flat_map(leaves).collect(),
        _ => unreachable!(),
    }
}

fn replacement(rng: &mut Stream, old: &Value) -> Value {
    let numbers = [
        0.0,
        -1.0,
        1.0,
        2.0,
        3.0,
        7.0,
        65_504.0,
        1e300,
        -1e300,
        4_294_967_296.0,
        0.5,
        f64::EPSILON,
    ];
    match rng.below(6) {
        0 => Value::Null,
        1 => Value::from(numbers[rng.below(numbers.len())]),
        2 => Value::from(rng.next_u64() >> rng.below(64)),
        3 => Value::from(["haar", "db4", "plain", "wien-inr", "f16", "", "minmax", "x"][rng.below(8)]),
        4 => match old {
            Value::Array(a) if !a.is_empty() => {
                let mut a = a.clone();
                if rng.below(2) == 0 {
                    a.pop();
                } else {
                    a.push(a[0].clone());
                }
                Value::Array(a)
            }
            _ => Value::Array(vec![Value::from(rng.below(40) as u64); rng.below(4)]),
        },
        _ => match old.as_f64() {
            Some(x) => Value::from(x + [-1.0, 1.0, 0.25, -0.25][rng.below(4)]),
            None => Value::Bool(true),
        },
    }
}

fn mutate_header(rng: &mut Stream, bytes: &[u8]) -> Vec<u8> {
    let (mut header, mut payload) = split(bytes);
    for _ in 0..1 + rng.below(3) {
        if rng.below(8) == 0 {
            if let Value::Object(m) = &mut header {
                let keys: Vec<String> = m.keys().cloned().collect();
                m.remove(&keys[rng.below(keys.len())]);
            }
            continue;
        }
        let mut slots = leaves(&mut header);
        let k = rng.below(slots.len());
        let old = slots[k].clone();
        *slots[k] = replacement(rng, &old);
    }
    if rng.below(4) == 0 {
        payload.truncate(rng.below(payload.len() + 1));
    }
    join(&header, &payload)
}

fn mutate_bytes(rng: &mut Stream, bytes: &[u8]) -> Vec<u8> {
    let mut b = bytes.to_vec();
    match rng.below(5) {
        0 => b.truncate(rng.below(b.len() + 1)),
        1 => {
            let n = rng.below(64);
            b.extend((0..n).map(|_| rng.next_u64() as u8));
        }
        2 => {
            let at = 6 + rng.below(4);
            b[at] = rng.next_u64() as u8;
        }
        _ => {
            for _ in 0..1 + rng.below(8) {
                let at = rng.below(b.len());
                b[at] ^= 1 << rng.below(8);
            }
        }
    }
    b
}

pub fn exercise(bytes: &[u8]) -> &'static str {
    match EncodedModel::from_bytes(bytes) {
        Err(_) => "rejected",
        Ok(m) => {
            let n: usize = m.header.shape.iter().product();
            if n > 1 << 14 {
                return "loaded";
            }
            let _ = decode(&m);
            let roi: Vec<_> = m.header.shape.iter().map(|&d| d / 3..d.div_ceil(2).max(d / 3 + 1)).collect();
            let _ = decode_roi(&m, &roi);
            "decoded"
        }
    }
}

/// Loads `iterations` mutants of `seeds` (alternating header-aware and
/// byte-level mutations), decoding the small ones. Returns outcome counts,
/// or the first iteration that panicked.
pub fn fuzz_models(seeds: &[Vec<u8>], iterations: usize, seed: u64) -> Result<BTreeMap<&'static str, usize>, String> {
    let mut rng = Stream::new(seed);
    let mut counts = BTreeMap::new();
    for i in 0..iterations {
        let base = &seeds[i % seeds.len()];
        let bytes = if i % 2 == 0 {
            mutate_header(&mut rng, base)
        } else {
            mutate_bytes(&mut rng, base)
        };
        match catch_unwind(AssertUnwindSafe(|| exercise(&bytes))) {
            Ok(kind) => *counts.entry(kind).or_insert(0) += 1,
            Err(_) => return Err(format!("iteration {i} panicked on {} bytes", bytes.len())),
        }
    }
    Ok(counts)
}
