//! Report records and serialization helpers shared by the experiments and
//! the command line.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Empirical two-sided constants for an estimate `c ≤ f/g ≤ C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundFit {
    pub bound_id: String,
    pub c: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
    pub worst_ratio: f64,
    pub samples: usize,
}

impl BoundFit {
    /// Fits `[min, max]` of the ratios; `worst_ratio` is `max / min`.
    pub fn from_ratios(bound_id: &str, ratios: &[f64]) -> BoundFit {
        let finite: Vec<f64> = ratios.iter().cloned().filter(|r| r.is_finite()).collect();
        let c = finite.iter().cloned().fold(f64::INFINITY, f64::min);
        let big_c = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let worst_ratio = if c > 0.0 { big_c / c } else { f64::INFINITY };
        BoundFit {
            bound_id: bound_id.to_string(),
            c,
            big_c,
            worst_ratio,
            samples: finite.len(),
        }
    }

    /// One-sided fit `f ≤ C g`: `c` is the smallest ratio seen, `worst_ratio` the largest.
    pub fn upper(bound_id: &str, ratios: &[f64]) -> BoundFit {
        let mut fit = BoundFit::from_ratios(bound_id, ratios);
        fit.worst_ratio = fit.big_c;
        fit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub identity: String,
    pub t: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub check_id: String,
    pub module: String,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub check_id: String,
    pub value_a: f64,
    pub value_b: f64,
    pub tol: f64,
    pub pass: bool,
}

impl OracleCheck {
    pub fn relative(check_id: &str, value_a: f64, value_b: f64, tol: f64) -> OracleCheck {
        let scale = value_a.abs().max(value_b.abs()).max(f64::MIN_POSITIVE);
        OracleCheck {
            check_id: check_id.to_string(),
            value_a,
            value_b,
            tol,
            pass: (value_a - value_b).abs() <= tol * scale,
        }
    }
}

/// Recursively sorts object keys so that equal configurations serialize identically.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn canon(v: &serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                let mut out = serde_json::Map::new();
                for k in keys {
                    out.insert(k.clone(), canon(&map[k]));
                }
                serde_json::Value::Object(out)
            }
            serde_json::Value::Array(items) => serde_json::Value::Array(items.iter().map(canon).collect()),
            other => other.clone(),
        }
    }
    canon(value).to_string()
}

pub fn config_hash(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(canonical_json(value).as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Minimal CSV builder; fields are written with the shortest round-trip float format.
#[derive(Debug, Clone, Default)]
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &[String]) -> Csv {
        let mut c = Csv::default();
        c.buf.push_str(&header.join(","));
        c.buf.push('\n');
        c
    }

    pub fn with_header(header: &str) -> Csv {
        Csv {
            buf: format!("{header}\n"),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

pub fn indexed_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":{"y":2,"x":[1,2]}}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":{"x":[1,2],"y":2},"b":1}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn bound_fit_ratios() {
        let f = BoundFit::from_ratios("x", &[2.0, 1.0, 4.0, f64::NAN]);
        assert_eq!((f.c, f.big_c, f.worst_ratio, f.samples), (1.0, 4.0, 4.0, 3));
        let json = serde_json::to_string(&f).unwrap();
        assert!(json.contains("\"C\":4.0"));
    }

    #[test]
    fn csv_layout() {
        let mut c = Csv::with_header("a,b");
        c.row(&[fmt_f64(1.5), fmt_f64(-2.0)]);
        assert_eq!(c.finish(), "a,b\n1.5,-2\n");
    }
}
