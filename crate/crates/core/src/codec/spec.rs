//! Per-variable compression settings and the conversion of REL/PSNR bounds
//! into the absolute bound the lossy encoder enforces.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMode {
    Abs,
    Rel,
    Psnr,
}

impl BoundMode {
    pub fn name(self) -> &'static str {
        match self {
            BoundMode::Abs => "abs",
            BoundMode::Rel => "rel",
            BoundMode::Psnr => "psnr",
        }
    }
}

/// What to do with one variable's chunks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Compression {
    None,
    Lossless,
    Lossy { mode: BoundMode, value: f64 },
}

impl Compression {
    /// Name used in config files and chunk metadata.
    pub fn compressor_name(&self) -> &'static str {
        match self {
            Compression::None => "NONE",
            Compression::Lossless => "BLOSC",
            Compression::Lossy { .. } => "SZ3",
        }
    }

    pub fn mode(&self) -> Option<BoundMode> {
        match self {
            Compression::Lossy { mode, .. } => Some(*mode),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if let Compression::Lossy { value, .. } = *self {
            if !(value.is_finite() && value > 0.0) {
                return Err(SpecError::new(
                    "value",
                    format!("lossy error bound must be a finite number > 0, got {value}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionSpec {
    pub name: String,
    pub compression: Compression,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct SpecError {
    pub field: String,
    pub message: String,
}

impl SpecError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        SpecError {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Prefixes the field path, e.g. `value` becomes `data[2].value`.
    pub fn within(mut self, parent: &str) -> Self {
        self.field = format!("{parent}.{}", self.field);
        self
    }
}

impl CompressionSpec {
    pub fn new(name: impl Into<String>, compression: Compression) -> Self {
        CompressionSpec {
            name: name.into(),
            compression,
        }
    }

    pub fn abs(name: impl Into<String>, bound: f64) -> Self {
        CompressionSpec::new(name, Compression::Lossy { mode: BoundMode::Abs, value: bound })
    }

    pub fn lossless(name: impl Into<String>) -> Self {
        CompressionSpec::new(name, Compression::Lossless)
    }

    /// Parses one entry of a `"data"` list:
    /// `{"name": "x", "compressor": "SZ3", "mode": "abs", "value": 0.003}`.
    pub fn from_json(value: &Value) -> Result<Self, SpecError> {
        let obj = value
            .as_object()
            .ok_or_else(|| SpecError::new("<entry>", "expected a JSON object"))?;
        let name = match obj.get("name") {
            Some(Value::String(s)) if !s.is_empty() && !s.contains('/') => s.clone(),
            Some(Value::String(s)) => {
                return Err(SpecError::new("name", format!("{s:?} must be non-empty and contain no '/'")))
            }
            Some(_) => return Err(SpecError::new("name", "expected a string")),
            None => return Err(SpecError::new("name", "missing")),
        };
        let compressor = match obj.get("compressor") {
            Some(Value::String(s)) => s.as_str(),
            Some(_) => return Err(SpecError::new("compressor", "expected a string")),
            None => return Err(SpecError::new("compressor", "missing")),
        };
        let compression = match compressor.to_ascii_uppercase().as_str() {
            "NONE" => Compression::None,
            "BLOSC" => Compression::Lossless,
            "SZ3" => {
                let mode = match obj.get("mode") {
                    Some(Value::String(m)) => match m.to_ascii_lowercase().as_str() {
                        "abs" => BoundMode::Abs,
                        "rel" => BoundMode::Rel,
                        "psnr" => BoundMode::Psnr,
                        _ => return Err(SpecError::new("mode", format!("unknown mode {m:?} (abs, rel, psnr)"))),
                    },
                    Some(_) => return Err(SpecError::new("mode", "expected a string")),
                    None => return Err(SpecError::new("mode", "required for SZ3")),
                };
                let value = obj
                    .get("value")
                    .ok_or_else(|| SpecError::new("value", "required for SZ3"))?
                    .as_f64()
                    .ok_or_else(|| SpecError::new("value", "expected a number"))?;
                Compression::Lossy { mode, value }
            }
            other => {
                return Err(SpecError::new(
                    "compressor",
                    format!("unknown compressor {other:?} (expected BLOSC, SZ3 or NONE)"),
                ))
            }
        };
        compression.validate()?;
        Ok(CompressionSpec { name, compression })
    }

    pub fn to_json(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("name".into(), self.name.clone().into());
        obj.insert("compressor".into(), self.compression.compressor_name().into());
        if let Compression::Lossy { mode, value } = self.compression {
            obj.insert("mode".into(), mode.name().into());
            obj.insert("value".into(), value.into());
        }
        Value::Object(obj)
    }
}

impl fmt::Display for CompressionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.compression {
            Compression::Lossy { mode, value } => write!(f, "{}: SZ3 {} {}", self.name, mode.name(), value),
            other => write!(f, "{}: {}", self.name, other.compressor_name()),
        }
    }
}

/// Min and max over the finite values, if any.
pub fn finite_range(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}

/// The absolute bound that a lossy spec implies for `values`.
///
/// * ABS: the value itself.
/// * REL: `value * (max - min)`.
/// * PSNR (dB): `sqrt(3) * (max - min) * 10^(-value / 20)`. A uniform quantizer
///   with step `2ε` has RMS error `ε / sqrt(3)`, so this ε hits the requested
///   PSNR under that model.
///
/// The range is taken over finite values. A result of 0 (constant data, or no
/// finite data) makes the encoder store every element verbatim.
pub fn effective_abs_bound(mode: BoundMode, value: f64, values: impl IntoIterator<Item = f64>) -> f64 {
    match mode {
        BoundMode::Abs => value,
        BoundMode::Rel | BoundMode::Psnr => {
            let range = finite_range(values).map_or(0.0, |(lo, hi)| hi - lo);
            if !range.is_finite() {
                return 0.0;
            }
            match mode {
                BoundMode::Rel => value * range,
                _ => 3f64.sqrt() * range * 10f64.powf(-value / 20.0),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_listing_entries() {
        let id = CompressionSpec::from_json(&json!({"name": "id", "compressor": "BLOSC"})).unwrap();
        assert_eq!(id.compression, Compression::Lossless);
        let x = CompressionSpec::from_json(&json!({
            "name": "x", "compressor": "SZ3", "mode": "abs", "value": 0.003
        }))
        .unwrap();
        assert_eq!(x.compression, Compression::Lossy { mode: BoundMode::Abs, value: 0.003 });
        assert_eq!(CompressionSpec::from_json(&x.to_json()).unwrap(), x);
    }

    #[test]
    fn unknown_compressor_names_field() {
        let err = CompressionSpec::from_json(&json!({"name": "x", "compressor": "ZFP"})).unwrap_err();
        assert_eq!(err.field, "compressor");
        assert!(err.to_string().contains("ZFP"));
    }

    #[test]
    fn zero_bound_rejected() {
        let err = CompressionSpec::from_json(&json!({
            "name": "x", "compressor": "SZ3", "mode": "abs", "value": 0.0
        }))
        .unwrap_err();
        assert_eq!(err.field, "value");
        assert!(CompressionSpec::from_json(&json!({"name": "x", "compressor": "SZ3", "value": 1.0})).is_err());
        assert!(CompressionSpec::from_json(&json!({"name": "a/b", "compressor": "NONE"})).is_err());
    }

    #[test]
    fn abs_bound_is_value() {
        assert_eq!(effective_abs_bound(BoundMode::Abs, 0.003, []), 0.003);
    }

    #[test]
    fn rel_bound_scales_by_range() {
        let data = [0.0, 100.0, 256.0];
        assert_eq!(effective_abs_bound(BoundMode::Rel, 0.01, data), 2.56);
    }

    #[test]
    fn rel_on_constant_is_zero() {
        assert_eq!(effective_abs_bound(BoundMode::Rel, 0.01, [5.0; 10]), 0.0);
        assert_eq!(effective_abs_bound(BoundMode::Psnr, 40.0, [f64::NAN]), 0.0);
    }

    #[test]
    fn psnr_bound() {
        // range 1, 20 dB: sqrt(3) * 0.1
        let eps = effective_abs_bound(BoundMode::Psnr, 20.0, [0.0, 1.0]);
        assert!((eps - 0.173_205_080_756_887_7).abs() < 1e-15);
    }

    #[test]
    fn range_ignores_non_finite() {
        assert_eq!(finite_range([f64::NAN, 1.0, f64::INFINITY, -2.0]), Some((-2.0, 1.0)));
        assert_eq!(finite_range([f64::NAN]), None);
    }
}
