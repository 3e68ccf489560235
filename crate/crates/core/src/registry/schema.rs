//! GUI widget schemas derived from reflected config fields.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{FieldValue, Reflect, Slider};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WidgetKind {
    IntSlider,
    FloatSlider,
    Checkbox,
    Dropdown,
    ArrayFolder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaField {
    pub name: String,
    pub kind: WidgetKind,
    pub default: Value,
    /// Current value when it differs from the one bounds were derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subfields: Vec<SchemaField>,
}

impl SchemaField {
    fn bare(name: &str, kind: WidgetKind, default: Value) -> Self {
        Self {
            name: name.to_string(),
            kind,
            default,
            value: None,
            min: None,
            max: None,
            step: None,
            options: Vec::new(),
            subfields: Vec::new(),
        }
    }

    fn ranged(mut self, min: f64, max: f64, step: f64) -> Self {
        self.min = Some(min);
        self.max = Some(max);
        self.step = Some(step);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfigSchema {
    pub fields: Vec<SchemaField>,
}

impl ConfigSchema {
    pub fn field(&self, name: &str) -> Option<&SchemaField> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// Schema whose defaults, bounds and values all come from `config`.
pub fn schema_of(config: &dyn Reflect) -> Result<ConfigSchema> {
    build(config, None)
}

/// Schema with bounds derived from `defaults` and values from `current`,
/// so sliders keep their range as values change.
pub fn schema_with_values(defaults: &dyn Reflect, current: &dyn Reflect) -> Result<ConfigSchema> {
    build(defaults, Some(current))
}

fn build(defaults: &dyn Reflect, current: Option<&dyn Reflect>) -> Result<ConfigSchema> {
    let fields = defaults.fields();
    let sliders = defaults.sliders();
    for s in &sliders {
        let target = fields.iter().find(|f| f.name == s.name).ok_or_else(|| {
            Error::InvalidConfig(format!("slider `{}` does not name a field", s.name))
        })?;
        if !matches!(target.value, FieldValue::Int(_) | FieldValue::Float(_)) {
            return Err(Error::InvalidConfig(format!("slider `{}` is on a non-numeric field", s.name)));
        }
        check_range(s.name, s.min, s.max, s.step)?;
    }

    let current_values: Option<Vec<_>> = current.map(|c| c.fields());
    let mut out = Vec::with_capacity(fields.len());
    for spec in &fields {
        let slider = sliders.iter().find(|s| s.name == spec.name);
        let mut field = widget(&spec.name, &spec.value, slider)?;
        if let Some(cur) = &current_values {
            let now = cur.iter().find(|f| f.name == spec.name).ok_or_else(|| {
                Error::InvalidConfig(format!("current config has no field `{}`", spec.name))
            })?;
            field.value = Some(json_of(&now.value));
        }
        out.push(field);
    }
    Ok(ConfigSchema { fields: out })
}

fn json_of(v: &FieldValue) -> Value {
    match v {
        FieldValue::Int(i) => Value::from(*i),
        FieldValue::Float(x) => Value::from(*x),
        FieldValue::Bool(b) => Value::from(*b),
        FieldValue::Choice { value, .. } => Value::from(value.as_str()),
        FieldValue::Array(a) => Value::from(a.values.clone()),
    }
}

fn check_range(name: &str, min: f64, max: f64, step: f64) -> Result<()> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) || min >= max || step <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "`{name}` has an invalid range [{min}, {max}] with step {step}"
        )));
    }
    Ok(())
}

/// `[0, 4d]` for a positive default, mirrored for a negative one, `[0, 1]`
/// for zero.
fn default_range(d: f64) -> (f64, f64) {
    if d > 0.0 {
        (0.0, 4.0 * d)
    } else if d < 0.0 {
        (4.0 * d, 0.0)
    } else {
        (0.0, 1.0)
    }
}

fn widget(name: &str, value: &FieldValue, slider: Option<&Slider>) -> Result<SchemaField> {
    let field = match value {
        FieldValue::Int(d) => {
            let f = SchemaField::bare(name, WidgetKind::IntSlider, Value::from(*d));
            match slider {
                Some(s) => f.ranged(s.min, s.max, s.step),
                None => {
                    let (lo, hi) = default_range(*d as f64);
                    f.ranged(lo, hi, ((hi - lo) / 100.0).floor().max(1.0))
                }
            }
        }
        FieldValue::Float(d) => {
            if !d.is_finite() {
                return Err(Error::InvalidConfig(format!("`{name}` has a non-finite default")));
            }
            let f = SchemaField::bare(name, WidgetKind::FloatSlider, Value::from(*d));
            match slider {
                Some(s) => f.ranged(s.min, s.max, s.step),
                None => {
                    let (lo, hi) = default_range(*d);
                    f.ranged(lo, hi, (hi - lo) / 100.0)
                }
            }
        }
        FieldValue::Bool(b) => SchemaField::bare(name, WidgetKind::Checkbox, Value::from(*b)),
        FieldValue::Choice { value, options } => {
            if !options.contains(value) {
                return Err(Error::InvalidConfig(format!("`{name}` = {value:?} is not one of {options:?}")));
            }
            let mut f = SchemaField::bare(name, WidgetKind::Dropdown, Value::from(value.as_str()));
            f.options = options.clone();
            f
        }
        FieldValue::Array(a) => {
            let n = a.values.len();
            if n == 0 || [a.names.len(), a.mins.len(), a.maxs.len(), a.steps.len()].iter().any(|&m| m != n) {
                return Err(Error::InvalidConfig(format!("array field `{name}` has mismatched metadata")));
            }
            let mut f = SchemaField::bare(name, WidgetKind::ArrayFolder, Value::from(a.values.clone()));
            for i in 0..n {
                check_range(&a.names[i], a.mins[i], a.maxs[i], a.steps[i])?;
                f.subfields.push(
                    SchemaField::bare(&a.names[i], WidgetKind::FloatSlider, Value::from(a.values[i]))
                        .ranged(a.mins[i], a.maxs[i], a.steps[i]),
                );
            }
            f
        }
    };
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ArrayField, DynConfig, FieldSpec};
    use crate::controller::ControllerConfig;
    use crate::optimizers::PredictiveSamplingConfig;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn default_ranges() {
        let s = schema_of(&PredictiveSamplingConfig::default()).unwrap();
        let sigma = s.field("sigma").unwrap();
        assert_eq!(sigma.kind, WidgetKind::FloatSlider);
        assert_eq!((sigma.min, sigma.max), (Some(0.0), Some(0.2)));
        assert!((sigma.step.unwrap() - 0.002).abs() < 1e-15);
        let n = s.field("num_rollouts").unwrap();
        assert_eq!((n.kind, n.min, n.max, n.step), (WidgetKind::IntSlider, Some(0.0), Some(128.0), Some(1.0)));
    }

    #[test]
    fn zero_and_negative_defaults() {
        assert_eq!(default_range(0.0), (0.0, 1.0));
        assert_eq!(default_range(-2.0), (-8.0, 0.0));
    }

    #[test]
    fn dropdown_from_choice() {
        let s = schema_of(&ControllerConfig::default()).unwrap();
        let f = s.field("spline").unwrap();
        assert_eq!(f.kind, WidgetKind::Dropdown);
        assert_eq!(f.options, vec!["zero_order_hold", "linear", "cubic"]);
        assert_eq!(f.default, json!("zero_order_hold"));
    }

    struct BadArray;
    impl Reflect for BadArray {
        fn fields(&self) -> Vec<FieldSpec> {
            vec![FieldSpec::new(
                "a",
                FieldValue::Array(ArrayField {
                    values: vec![1.0, 2.0],
                    names: vec!["x".into()],
                    mins: vec![0.0, 0.0],
                    maxs: vec![1.0, 1.0],
                    steps: vec![0.1, 0.1],
                }),
            )]
        }
    }

    struct BadSlider;
    impl Reflect for BadSlider {
        fn fields(&self) -> Vec<FieldSpec> {
            vec![FieldSpec::boolean("flag", true), FieldSpec::float("x", 1.0)]
        }
        fn sliders(&self) -> Vec<Slider> {
            vec![Slider::new("flag", 0.0, 1.0, 0.1)]
        }
    }

    struct Inverted;
    impl Reflect for Inverted {
        fn fields(&self) -> Vec<FieldSpec> {
            vec![FieldSpec::float("x", 1.0)]
        }
        fn sliders(&self) -> Vec<Slider> {
            vec![Slider::new("x", 2.0, 1.0, 0.1)]
        }
    }

    #[test]
    fn rejects_malformed_metadata() {
        assert!(schema_of(&BadArray).is_err());
        assert!(schema_of(&BadSlider).is_err());
        assert!(schema_of(&Inverted).is_err());
    }

    #[test]
    fn serializes_kebab_kinds() {
        let s = schema_of(&ControllerConfig::default()).unwrap();
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["fields"][0]["kind"], json!("float-slider"));
        assert!(v["fields"][0].get("options").is_none());
    }

    proptest! {
        // Any in-range update keeps the slider bounds where they were.
        #[test]
        fn bounds_stable_under_updates(picks in proptest::collection::vec(0.0..=1.0f64, 3)) {
            let defaults = PredictiveSamplingConfig::default();
            let base = schema_of(&defaults).unwrap();
            let mut cfg: Box<dyn DynConfig> = Box::new(defaults.clone());
            for (field, p) in base.fields.iter().zip(&picks) {
                let (lo, hi, step) = (field.min.unwrap(), field.max.unwrap(), field.step.unwrap());
                let k = ((hi - lo) / step * p).floor();
                let v = lo + k * step;
                let value = if field.kind == WidgetKind::IntSlider { json!(v as i64) } else { json!(v) };
                // Out-of-validation picks (e.g. zero rollouts) are rejected; that is fine.
                let _ = cfg.set_json(&field.name, &value);
            }
            let after = schema_with_values(&defaults, &*cfg).unwrap();
            for (a, b) in base.fields.iter().zip(&after.fields) {
                prop_assert_eq!((a.min, a.max, a.step), (b.min, b.max, b.step));
                prop_assert_eq!(&a.default, &b.default);
            }
        }
    }
}
