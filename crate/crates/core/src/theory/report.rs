use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Outcome of one numerical check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    /// FNV-1a of the JSON-encoded inputs, as 16 hex digits.
    pub inputs_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub details: Map<String, Value>,
}

impl VerificationReport {
    /// `passed` is `measured <= tolerance`.
    pub fn new(check: impl Into<String>, measured: f64, tolerance: f64, inputs: &impl Serialize) -> Self {
        Self {
            check: check.into(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            inputs_digest: digest(inputs),
            warning: None,
            details: Map::new(),
        }
    }

    pub fn add_detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.details.insert(key.to_string(), v);
    }
}

pub fn digest(inputs: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(inputs).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}
