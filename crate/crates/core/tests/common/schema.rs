//! Minimal JSON-schema checker covering the keywords the gateway schema uses.
#![allow(dead_code)]

use serde_json::Value;

pub fn schema() -> Value {
    serde_json::from_str(refseg_core::backends::wire::SCHEMA).expect("schema is valid JSON")
}

fn resolve<'a>(root: &'a Value, s: &'a Value) -> &'a Value {
    match s.get("$ref").and_then(Value::as_str) {
        Some(r) => {
            let name = r.trim_start_matches("#/definitions/");
            resolve(root, &root["definitions"][name])
        }
        None => s,
    }
}

/// Checks `v` against schema node `s`; returns the first violation.
pub fn check(root: &Value, s: &Value, v: &Value, at: &str) -> Result<(), String> {
    let s = resolve(root, s);
    if let Some(alts) = s.get("oneOf").and_then(Value::as_array) {
        let ok = alts.iter().filter(|a| check(root, a, v, at).is_ok()).count();
        return if ok == 1 { Ok(()) } else { Err(format!("{at}: {ok} oneOf branches match")) };
    }
    let fail = |m: &str| Err(format!("{at}: {m} (got {v})"));
    match s.get("type").and_then(Value::as_str) {
        None => {}
        Some("object") => {
            let Some(obj) = v.as_object() else { return fail("expected object") };
            for r in s.get("required").and_then(Value::as_array).into_iter().flatten() {
                if !obj.contains_key(r.as_str().unwrap()) {
                    return fail(&format!("missing {r}"));
                }
            }
            let props = s.get("properties").and_then(Value::as_object);
            for (k, val) in obj {
                match props.and_then(|p| p.get(k)) {
                    Some(ps) => check(root, ps, val, &format!("{at}.{k}"))?,
                    None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                        return fail(&format!("unexpected property {k}"))
                    }
                    None => {}
                }
            }
        }
        Some("array") => {
            let Some(items) = v.as_array() else { return fail("expected array") };
            if let Some(n) = s.get("minItems").and_then(Value::as_u64) {
                if (items.len() as u64) < n {
                    return fail("too few items");
                }
            }
            if let Some(n) = s.get("maxItems").and_then(Value::as_u64) {
                if items.len() as u64 > n {
                    return fail("too many items");
                }
            }
            if let Some(is) = s.get("items") {
                for (i, item) in items.iter().enumerate() {
                    check(root, is, item, &format!("{at}[{i}]"))?;
                }
            }
        }
        Some("string") => {
            let Some(text) = v.as_str() else { return fail("expected string") };
            if let Some(n) = s.get("minLength").and_then(Value::as_u64) {
                if (text.chars().count() as u64) < n {
                    return fail("string too short");
                }
            }
        }
        Some("integer") => {
            if !(v.is_u64() || v.is_i64()) {
                return fail("expected integer");
            }
            if let (Some(m), Some(x)) = (s.get("minimum").and_then(Value::as_f64), v.as_f64()) {
                if x < m {
                    return fail("below minimum");
                }
            }
        }
        Some("number") => {
            let Some(x) = v.as_f64() else { return fail("expected number") };
            let lo = s.get("minimum").and_then(Value::as_f64).unwrap_or(f64::NEG_INFINITY);
            let hi = s.get("maximum").and_then(Value::as_f64).unwrap_or(f64::INFINITY);
            if x < lo || x > hi {
                return fail("out of range");
            }
        }
        Some("boolean") => {
            if !v.is_boolean() {
                return fail("expected boolean");
            }
        }
        Some("null") => {
            if !v.is_null() {
                return fail("expected null");
            }
        }
        Some(other) => return fail(&format!("unsupported type {other}")),
    }
    Ok(())
}

pub fn check_endpoint(root: &Value, path: &str, part: &str, v: &Value) -> Result<(), String> {
    let node = &root["endpoints"][path][part];
    if node.is_null() {
        return Err(format!("no {part} schema for {path}"));
    }
    check(root, node, v, &format!("{path} {part}"))
}
