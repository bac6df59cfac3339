//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

pub fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

pub fn read_json(path: &Path) -> Value {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap()
}

/// Validator for the subset of JSON Schema 2020-12 used by the published
/// schemas. Unknown keywords are an error so nothing is silently skipped.
pub struct Validator {
    docs: BTreeMap<String, Value>,
}

const ANNOTATIONS: &[&str] = &["$schema", "$id", "$defs", "title", "description"];

impl Validator {
    pub fn load() -> Self {
        let mut docs = BTreeMap::new();
        for entry in fs::read_dir(schema_dir()).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                let name = path.file_name().unwrap().to_string_lossy().into_owned();
                docs.insert(name, read_json(&path));
            }
        }
        Self { docs }
    }

    /// All violations of `instance` against the named schema file.
    pub fn validate(&self, schema_file: &str, instance: &Value) -> Vec<String> {
        let root = &self.docs[schema_file];
        let mut errors = Vec::new();
        self.check(schema_file, root, instance, "$", &mut errors);
        errors
    }

    pub fn assert_valid(&self, schema_file: &str, instance: &Value) {
        let errors = self.validate(schema_file, instance);
        assert!(errors.is_empty(), "{schema_file}: {errors:#?}");
    }

    fn resolve(&self, doc: &str, reference: &str) -> (String, &Value) {
        let (file, pointer) = reference.split_once('#').unwrap_or((reference, ""));
        let file = if file.is_empty() {
            doc.to_string()
        } else {
            file.to_string()
        };
        let root = self.docs.get(&file).unwrap_or_else(|| panic!("unknown schema {file}"));
        let target = root.pointer(pointer).unwrap_or_else(|| panic!("bad $ref {reference}"));
        (file, target)
    }

    fn check(&self, doc: &str, schema: &Value, v: &Value, at: &str, errors: &mut Vec<String>) {
        let Value::Object(s) = schema else {
            if schema == &Value::Bool(false) {
                errors.push(format!("{at}: not allowed"));
            }
            return;
        };
        for (key, arg) in s {
            match key.as_str() {
                k if ANNOTATIONS.contains(&k) => {}
                "$ref" => {
                    let (file, target) = self.resolve(doc, arg.as_str().unwrap());
                    self.check(&file, target, v, at, errors);
                }
                "type" => {
                    let allowed: Vec<&str> = match arg {
                        Value::String(t) => vec![t.as_str()],
                        Value::Array(ts) => ts.iter().filter_map(Value::as_str).collect(),
                        _ => panic!("bad type keyword"),
                    };
                    if !allowed.iter().any(|t| type_matches(t, v)) {
                        errors.push(format!("{at}: expected {allowed:?}, got {v}"));
                    }
                }
                "enum" => {
                    if !arg.as_array().unwrap().iter().any(|e| json_eq(e, v)) {
                        errors.push(format!("{at}: {v} not in {arg}"));
                    }
                }
                "const" => {
                    if !json_eq(arg, v) {
                        errors.push(format!("{at}: expected {arg}, got {v}"));
                    }
                }
                "required" => {
                    if let Value::Object(o) = v {
                        for r in arg.as_array().unwrap() {
                            let r = r.as_str().unwrap();
                            if !o.contains_key(r) {
                                errors.push(format!("{at}: missing '{r}'"));
                            }
                        }
                    }
                }
                "properties" => {
                    if let Value::Object(o) = v {
                        for (name, sub) in arg.as_object().unwrap() {
                            if let Some(x) = o.get(name) {
                                self.check(doc, sub, x, &format!("{at}.{name}"), errors);
                            }
                        }
                    }
                }
                "additionalProperties" => {
                    if let Value::Object(o) = v {
                        let known = s.get("properties").and_then(Value::as_object);
                        for (name, x) in o {
                            if known.is_some_and(|k| k.contains_key(name)) {
                                continue;
                            }
                            if arg == &Value::Bool(false) {
                                errors.push(format!("{at}: unexpected '{name}'"));
                            } else {
                                self.check(doc, arg, x, &format!("{at}.{name}"), errors);
                            }
                        }
                    }
                }
                "items" | "prefixItems" => {
                    if let Value::Array(a) = v {
                        let skip = if key == "items" {
                            s.get("prefixItems").and_then(Value::as_array).map_or(0, Vec::len)
                        } else {
                            0
                        };
                        for (i, x) in a.iter().enumerate() {
                            let sub = match arg {
                                Value::Array(prefix) => match prefix.get(i) {
                                    Some(p) => p,
                                    None => continue,
                                },
                                _ if i < skip => continue,
                                other => other,
                            };
                            self.check(doc, sub, x, &format!("{at}[{i}]"), errors);
                        }
                    }
                }
                "minItems" | "maxItems" => {
                    if let Value::Array(a) = v {
                        let n = arg.as_u64().unwrap() as usize;
                        let ok = if key == "minItems" { a.len() >= n } else { a.len() <= n };
                        if !ok {
                            errors.push(format!("{at}: {key} {n}, got {}", a.len()));
                        }
                    }
                }
                "minLength" => {
                    if let Value::String(t) = v {
                        if t.chars().count() < arg.as_u64().unwrap() as usize {
                            errors.push(format!("{at}: shorter than {arg}"));
                        }
                    }
                }
                "minimum" | "maximum" | "exclusiveMinimum" | "exclusiveMaximum" => {
                    if let Some(x) = v.as_f64() {
                        let b = arg.as_f64().unwrap();
                        let ok = match key.as_str() {
                            "minimum" => x >= b,
                            "maximum" => x <= b,
                            "exclusiveMinimum" => x > b,
                            _ => x < b,
                        };
                        if !ok {
                            errors.push(format!("{at}: {x} violates {key} {b}"));
                        }
                    }
                }
                "oneOf" => {
                    let passing = arg
                        .as_array()
                        .unwrap()
                        .iter()
                        .filter(|sub| {
                            let mut e = Vec::new();
                            self.check(doc, sub, v, at, &mut e);
                            e.is_empty()
                        })
                        .count();
                    if passing != 1 {
                        errors.push(format!("{at}: {passing} oneOf branches match"));
                    }
                }
                other => panic!("validator does not support keyword '{other}'"),
            }
        }
    }
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64() || v.as_f64().is_some_and(|x| x.fract() == 0.0),
        other => panic!("unknown type {other}"),
    }
}

/// Equality with numbers compared by value, so `1` equals `1.0`.
fn json_eq(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        _ => a == b,
    }
}
