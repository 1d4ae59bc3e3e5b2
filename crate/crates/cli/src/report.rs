//! Deterministic JSON emission for bound reports: insertion-ordered keys,
//! shortest round-trip float formatting, at most one level of nesting.

use std::fmt::Write as _;

use elfatt_core::BoundReport;

#[derive(Debug, Clone)]
pub enum JsonValue {
    U64(u64),
    F64(f64),
    Bool(bool),
    Str(String),
    Obj(JsonObject),
}

#[derive(Debug, Clone, Default)]
pub struct JsonObject {
    entries: Vec<(String, JsonValue)>,
}

impl JsonObject {
    pub fn new() -> Self {
        JsonObject {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, key: &str, value: JsonValue) -> &mut Self {
        self.entries.push((key.to_string(), value));
        self
    }

    pub fn push_u64(&mut self, key: &str, v: u64) -> &mut Self {
        self.push(key, JsonValue::U64(v))
    }

    pub fn push_f64(&mut self, key: &str, v: f64) -> &mut Self {
        debug_assert!(v.is_finite(), "json numbers must be finite");
        self.push(key, JsonValue::F64(v))
    }

    pub fn push_str(&mut self, key: &str, v: &str) -> &mut Self {
        self.push(key, JsonValue::Str(v.to_string()))
    }

    pub fn to_pretty(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out.push('\n');
        out
    }

    fn write(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth + 1);
        out.push_str("{\n");
        for (i, (key, value)) in self.entries.iter().enumerate() {
            let _ = write!(out, "{pad}\"{}\": ", escape(key));
            match value {
                JsonValue::U64(v) => {
                    let _ = write!(out, "{v}");
                }
                JsonValue::F64(v) => {
                    let _ = write!(out, "{v}");
                }
                JsonValue::Bool(v) => {
                    let _ = write!(out, "{v}");
                }
                JsonValue::Str(s) => {
                    let _ = write!(out, "\"{}\"", escape(s));
                }
                JsonValue::Obj(o) => o.write(out, depth + 1),
            }
            out.push_str(if i + 1 < self.entries.len() {
                ",\n"
            } else {
                "\n"
            });
        }
        let _ = write!(out, "{}}}", "  ".repeat(depth));
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

/// Flatten a bound report into a one-level JSON object.
pub fn report_to_json(report: &BoundReport) -> JsonObject {
    let mut obj = JsonObject::new();
    obj.push_str("op", report.op);
    obj.push_str("norm", report.norm_kind.name());
    if let Some(branch) = report.branch {
        obj.push_str("branch", branch.name());
    }
    obj.push_f64("measured_error", report.measured_error);
    obj.push_f64("bound_value", report.bound_value);
    obj.push_f64("slack", report.slack);
    obj.push("holds", JsonValue::Bool(report.holds()));
    if let Some(note) = &report.note {
        obj.push_str("note", note);
    }
    for (name, value) in &report.component_terms {
        obj.push_f64(name, *value);
    }
    obj
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_parseable_and_ordered() {
        let mut inner = JsonObject::new();
        inner.push_f64("x", 0.5).push_u64("n", 3);
        let mut obj = JsonObject::new();
        obj.push_str("name", "a\"b")
            .push_f64("big", 1e300)
            .push("flag", JsonValue::Bool(true))
            .push("nested", JsonValue::Obj(inner));
        let text = obj.to_pretty();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["name"], "a\"b");
        assert_eq!(parsed["big"], 1e300);
        assert_eq!(parsed["nested"]["x"], 0.5);
        // Key order is insertion order.
        let name_pos = text.find("\"name\"").unwrap();
        let big_pos = text.find("\"big\"").unwrap();
        assert!(name_pos < big_pos);
    }
}
