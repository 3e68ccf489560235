//! Field reflection for tunable config structs.
//!
//! Config types describe their fields through [`Reflect`]; everything else
//! (GUI schema generation, path-based updates, override application) works
//! on the type-erased [`DynConfig`] view.

use std::any::Any;
use std::fmt::Debug;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// A fixed-size real array shown as a folder of sub-sliders.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayField {
    pub values: Vec<f64>,
    pub names: Vec<String>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub steps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue {
    Int(i64),
    Float(f64),
    Bool(bool),
    /// One of a fixed set of string options.
    Choice { value: String, options: Vec<String> },
    Array(ArrayField),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub name: String,
    pub value: FieldValue,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, value: FieldValue) -> Self {
        Self { name: name.into(), value }
    }

    pub fn int(name: &str, v: impl TryInto<i64>) -> Self {
        Self::new(name, FieldValue::Int(v.try_into().unwrap_or(i64::MAX)))
    }

    pub fn float(name: &str, v: f64) -> Self {
        Self::new(name, FieldValue::Float(v))
    }

    pub fn boolean(name: &str, v: bool) -> Self {
        Self::new(name, FieldValue::Bool(v))
    }

    pub fn choice<S: AsRef<str>>(name: &str, value: &str, options: &[S]) -> Self {
        Self::new(
            name,
            FieldValue::Choice {
                value: value.to_string(),
                options: options.iter().map(|o| o.as_ref().to_string()).collect(),
            },
        )
    }
}

/// Explicit slider bounds for one field, overriding the default range rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slider {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Slider {
    pub const fn new(name: &'static str, min: f64, max: f64, step: f64) -> Self {
        Self { name, min, max, step }
    }
}

pub trait Reflect {
    /// Fields in declaration order.
    fn fields(&self) -> Vec<FieldSpec>;

    fn sliders(&self) -> Vec<Slider> {
        Vec::new()
    }

    /// Checks value invariants after an update.
    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

/// Object-safe view of a config value.
pub trait DynConfig: Reflect + Debug + Send + Sync {
    fn type_name(&self) -> &'static str;
    fn to_json(&self) -> Value;
    /// Sets the field at `path` (`field` or `field.index`), type-checked and
    /// validated. The config is left untouched on error.
    fn set_json(&mut self, path: &str, value: &Value) -> Result<()>;
    /// A config of the same concrete type built from `value`.
    fn from_json(&self, value: &Value) -> Result<Box<dyn DynConfig>>;
    fn clone_box(&self) -> Box<dyn DynConfig>;
    fn as_any(&self) -> &dyn Any;
}

impl<T> DynConfig for T
where
    T: Reflect + Serialize + DeserializeOwned + Clone + Debug + Send + Sync + 'static,
{
    fn type_name(&self) -> &'static str {
        let full = std::any::type_name::<T>();
        full.rsplit("::").next().unwrap_or(full)
    }

    fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config types serialize to JSON objects")
    }

    fn set_json(&mut self, path: &str, value: &Value) -> Result<()> {
        let mut json = self.to_json();
        let slot = field_slot(&mut json, path).ok_or_else(|| Error::UnknownField {
            config: DynConfig::type_name(self).to_string(),
            path: path.to_string(),
        })?;
        *slot = value.clone();
        let updated: T = serde_json::from_value(json)
            .map_err(|e| Error::FieldType { path: path.to_string(), reason: e.to_string() })?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    fn from_json(&self, value: &Value) -> Result<Box<dyn DynConfig>> {
        let cfg: T = serde_json::from_value(value.clone()).map_err(|e| {
            Error::InvalidConfig(format!("{}: {e}", DynConfig::type_name(self)))
        })?;
        cfg.validate()?;
        Ok(Box::new(cfg))
    }

    fn clone_box(&self) -> Box<dyn DynConfig> {
        Box::new(self.clone())
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

impl Clone for Box<dyn DynConfig> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

impl PartialEq for dyn DynConfig {
    fn eq(&self, other: &Self) -> bool {
        self.type_name() == other.type_name() && self.to_json() == other.to_json()
    }
}

/// Recovers a concrete config, converting through JSON when the erased
/// value has a different (but field-compatible) type.
pub fn downcast_config<T>(cfg: &dyn DynConfig) -> Result<T>
where
    T: DeserializeOwned + Reflect + Clone + 'static,
{
    if let Some(c) = cfg.as_any().downcast_ref::<T>() {
        return Ok(c.clone());
    }
    let c: T = serde_json::from_value(cfg.to_json()).map_err(|e| {
        Error::InvalidConfig(format!(
            "{} cannot be used as {}: {e}",
            cfg.type_name(),
            std::any::type_name::<T>()
        ))
    })?;
    c.validate()?;
    Ok(c)
}

fn field_slot<'a>(json: &'a mut Value, path: &str) -> Option<&'a mut Value> {
    let mut parts = path.split('.');
    let head = parts.next()?;
    let mut slot = json.as_object_mut()?.get_mut(head)?;
    for part in parts {
        let idx: usize = part.parse().ok()?;
        slot = slot.as_array_mut()?.get_mut(idx)?;
    }
    Some(slot)
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg()))
    }
}
