//! JSON run-configuration documents.
//!
//! A document fully determines a run: the field spec, edit parameters,
//! dataset request, and optional sweep/oracle sections. Unknown keys are
//! rejected, the schema is versioned, and all randomness flows from the
//! single seed through the ChaCha12 generator named in the document.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::editor::{EditConfig, SweepAxis};
use crate::field::{Condition, ConditionedFieldSpec, GaussianMixture, MixtureComponent};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
/// The one PRNG the schema admits; reports echo it for reproducibility.
pub const PRNG_NAME: &str = "chacha12";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSection {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub stddev: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub components: Vec<ComponentSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub dim: usize,
    pub conditions: BTreeMap<String, MixtureSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_mixture: Option<MixtureSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub count: usize,
    /// Condition id, or `"null"` for the null condition.
    pub origin: String,
    pub target: String,
}

fn default_substeps_factor() -> usize {
    20
}

fn default_quad_nodes() -> usize {
    512
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    /// Grid sizes to compare the discrete bypass against the oracles.
    pub n_values: Vec<usize>,
    /// Continuous bypass time; snapped to the nearest grid node per N.
    pub bypass_time: f64,
    #[serde(default = "default_substeps_factor")]
    pub substeps_factor: usize,
    #[serde(default = "default_quad_nodes")]
    pub outer_nodes: usize,
    #[serde(default = "default_quad_nodes")]
    pub inner_nodes: usize,
    /// Explicit start point; defaults to a seeded origin-mixture sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

fn default_prng() -> String {
    PRNG_NAME.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigDocument {
    pub schema_version: u32,
    #[serde(default = "default_prng")]
    pub prng: String,
    pub field: FieldSection,
    #[serde(default)]
    pub edit: EditConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepAxis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
}

/// Parses `"null"` or a labeled condition id.
pub fn parse_condition(s: &str) -> Condition {
    if s == "null" {
        Condition::Null
    } else {
        Condition::labeled(s)
    }
}

impl RunConfigDocument {
    /// Loads, applies dotted-path overrides, then schema-validates.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("invalid JSON in {}: {e}", path.display())))?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let doc: RunConfigDocument = serde_json::from_value(value)
            .map_err(|e| Error::Schema(format!("schema violation: {e}")))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.prng != PRNG_NAME {
            return Err(Error::Schema(format!(
                "unsupported prng '{}' (expected '{PRNG_NAME}')",
                self.prng
            )));
        }
        self.edit.validate()?;
        self.build_field_spec().map(|_| ())
    }

    /// Builds the conditioned field spec from the field section.
    pub fn build_field_spec(&self) -> Result<ConditionedFieldSpec<f64>> {
        let build = |m: &MixtureSection| -> Result<GaussianMixture<f64>> {
            let comps = m
                .components
                .iter()
                .map(|c| {
                    if c.mean.len() != self.field.dim {
                        return Err(Error::DimensionMismatch {
                            expected: self.field.dim,
                            got: c.mean.len(),
                        });
                    }
                    Ok(MixtureComponent {
                        weight: c.weight,
                        mean: c.mean.clone(),
                        stddev: c.stddev,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            GaussianMixture::new(comps)
        };
        let mut labeled = BTreeMap::new();
        for (id, m) in &self.field.conditions {
            labeled.insert(id.clone(), build(m)?);
        }
        let null = self.field.null_mixture.as_ref().map(build).transpose()?;
        ConditionedFieldSpec::new(labeled, null)
    }

    pub fn dataset_section(&self) -> Result<&DatasetSection> {
        self.dataset
            .as_ref()
            .ok_or_else(|| Error::Schema("config has no 'dataset' section".into()))
    }

    /// Canonical compact JSON of the effective document, for provenance
    /// echoes in output files.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Sets `value[key-path] = parsed(raw)`, creating intermediate objects.
/// The raw string is parsed as JSON when possible, else taken as a string.
fn apply_override(value: &mut serde_json::Value, key: &str, raw: &str) -> Result<()> {
    let parsed: serde_json::Value =
        serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Schema(format!("invalid override key '{key}'")));
    }
    for part in &parts[..parts.len() - 1] {
        if !cursor.is_object() {
            return Err(Error::Schema(format!(
                "override '{key}' descends through a non-object"
            )));
        }
        cursor = cursor
            .as_object_mut()
            .unwrap()
            .entry(part.to_string())
            .or_insert(serde_json::json!({}));
    }
    match cursor.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), parsed);
            Ok(())
        }
        None => Err(Error::Schema(format!(
            "override '{key}' targets a non-object"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_doc() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "field": {
                "dim": 2,
                "conditions": {
                    "a": {"components": [{"weight": 1.0, "mean": [0.0, 0.0], "stddev": 1.0}]},
                    "b": {"components": [{"weight": 1.0, "mean": [1.0, 1.0], "stddev": 0.5}]}
                }
            },
            "dataset": {"count": 3, "origin": "a", "target": "b"}
        })
    }

    fn write_doc(v: &serde_json::Value) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), serde_json::to_string(v).unwrap()).unwrap();
        f
    }

    #[test]
    fn loads_minimal_document_with_defaults() {
        let f = write_doc(&minimal_doc());
        let doc = RunConfigDocument::load(f.path(), &[]).unwrap();
        assert_eq!(doc.edit.n_steps, 50);
        assert_eq!(doc.edit.combo.notation(), "ee/yx");
        assert_eq!(doc.prng, "chacha12");
        let spec = doc.build_field_spec().unwrap();
        assert_eq!(spec.dim(), 2);
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut v = minimal_doc();
        v["surprise"] = serde_json::json!(1);
        let f = write_doc(&v);
        assert!(matches!(
            RunConfigDocument::load(f.path(), &[]),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn rejects_wrong_schema_version() {
        let mut v = minimal_doc();
        v["schema_version"] = serde_json::json!(2);
        let f = write_doc(&v);
        assert!(RunConfigDocument::load(f.path(), &[]).is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let f = write_doc(&minimal_doc());
        let doc = RunConfigDocument::load(
            f.path(),
            &[
                ("edit.n_steps".to_string(), "20".to_string()),
                ("edit.bypass_index".to_string(), "10".to_string()),
                ("edit.combo".to_string(), "xx/yy".to_string()),
                ("dataset.count".to_string(), "7".to_string()),
            ],
        )
        .unwrap();
        assert_eq!(doc.edit.n_steps, 20);
        assert_eq!(doc.edit.combo.notation(), "xx/yy");
        assert_eq!(doc.dataset.unwrap().count, 7);
    }

    #[test]
    fn override_cannot_create_unknown_key() {
        let f = write_doc(&minimal_doc());
        assert!(RunConfigDocument::load(
            f.path(),
            &[("edit.bogus".to_string(), "1".to_string())]
        )
        .is_err());
    }

    #[test]
    fn sweep_section_parses() {
        let mut v = minimal_doc();
        v["sweep"] = serde_json::json!({"axis": "bypass_index", "values": [10, 20, 30]});
        let f = write_doc(&v);
        let doc = RunConfigDocument::load(f.path(), &[]).unwrap();
        match doc.sweep.unwrap() {
            SweepAxis::BypassIndex(vs) => assert_eq!(vs, vec![10, 20, 30]),
            other => panic!("unexpected axis {other:?}"),
        }
    }

    #[test]
    fn canonical_json_round_trips() {
        let f = write_doc(&minimal_doc());
        let doc = RunConfigDocument::load(f.path(), &[]).unwrap();
        let json = doc.canonical_json();
        let back: RunConfigDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(back.canonical_json(), json);
    }
}
