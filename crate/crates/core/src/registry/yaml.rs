//! YAML stack configuration.
//!
//! ```yaml
//! task: my_task
//! custom_tasks:
//!   my_task: {task: my.plugins.MyTask, config: my.plugins.MyTaskConfig}
//! custom_optimizers:
//!   my_opt: {optimizer: my.plugins.MyOpt, config: my.plugins.MyOptConfig}
//! controller_config_overrides:
//!   my_task: {horizon: 1.0}
//! optimizer_config_overrides:
//!   cylinder_push: {my_opt: {param: 42}}
//! ```
//!
//! Factory paths are looked up in a [`PluginCatalog`] populated before
//! loading.

use std::collections::HashMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use super::{optimizer_builder, task_builder, ConfigScope, OptimizerBuilder, Registry, TaskBuilder};
use crate::config::{DynConfig, Reflect};
use crate::error::{Error, Result};
use crate::optimizers::{
    Cem, CemConfig, Mppi, MppiConfig, Optimizer, PredictiveSampling, PredictiveSamplingConfig,
};
use crate::tasks::{
    Cartpole, CartpoleConfig, CylinderPush, CylinderPushConfig, DoubleIntegrator, DoubleIntegratorConfig, Task,
};

const TOP_KEYS: &[&str] = &[
    "defaults",
    "task",
    "optimizer",
    "custom_tasks",
    "custom_optimizers",
    "controller_config_overrides",
    "optimizer_config_overrides",
];

/// Factories and config defaults addressable by dotted path from YAML.
#[derive(Clone, Default)]
pub struct PluginCatalog {
    tasks: HashMap<String, TaskBuilder>,
    optimizers: HashMap<String, OptimizerBuilder>,
    configs: HashMap<String, Box<dyn DynConfig>>,
}

impl std::fmt::Debug for PluginCatalog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let keys = |m: Vec<&String>| {
            let mut v: Vec<_> = m.into_iter().cloned().collect();
            v.sort();
            v
        };
        f.debug_struct("PluginCatalog")
            .field("tasks", &keys(self.tasks.keys().collect()))
            .field("optimizers", &keys(self.optimizers.keys().collect()))
            .field("configs", &keys(self.configs.keys().collect()))
            .finish()
    }
}

impl PluginCatalog {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The built-in tasks, optimizers and configs under `smpc.tasks.*` and
    /// `smpc.optimizers.*`.
    pub fn builtin() -> Self {
        let mut c = Self::empty();
        c.add_task("smpc.tasks.Cartpole", Cartpole::default);
        c.add_config("smpc.tasks.CartpoleConfig", CartpoleConfig::default());
        c.add_task("smpc.tasks.CylinderPush", CylinderPush::default);
        c.add_config("smpc.tasks.CylinderPushConfig", CylinderPushConfig::default());
        c.add_task("smpc.tasks.DoubleIntegrator", DoubleIntegrator::default);
        c.add_config("smpc.tasks.DoubleIntegratorConfig", DoubleIntegratorConfig::default());
        c.add_optimizer("smpc.optimizers.PredictiveSampling", PredictiveSampling::new);
        c.add_config("smpc.optimizers.PredictiveSamplingConfig", PredictiveSamplingConfig::default());
        c.add_optimizer("smpc.optimizers.Cem", Cem::new);
        c.add_config("smpc.optimizers.CemConfig", CemConfig::default());
        c.add_optimizer("smpc.optimizers.Mppi", Mppi::new);
        c.add_config("smpc.optimizers.MppiConfig", MppiConfig::default());
        c
    }

    pub fn add_task<T, F>(&mut self, path: &str, factory: F)
    where
        T: Task,
        F: Fn() -> T + Send + Sync + 'static,
    {
        self.tasks.insert(path.to_string(), task_builder(factory));
    }

    pub fn add_optimizer<C, O, F>(&mut self, path: &str, factory: F)
    where
        C: DynConfig + DeserializeOwned + Reflect + Clone + 'static,
        O: Optimizer + 'static,
        F: Fn(C) -> O + Send + Sync + 'static,
    {
        self.optimizers.insert(path.to_string(), optimizer_builder(factory));
    }

    pub fn add_config<C: DynConfig + 'static>(&mut self, path: &str, default: C) {
        self.configs.insert(path.to_string(), Box::new(default));
    }

    fn lookup<'a, V>(map: &'a HashMap<String, V>, what: &'static str, path: &str) -> Result<&'a V> {
        map.get(path).ok_or_else(|| Error::Unknown { kind: what, name: path.to_string() })
    }
}

/// A loaded stack: the configured registry and the initially active pair.
#[derive(Debug, Clone)]
pub struct StackConfig {
    pub registry: Registry,
    pub task: String,
    pub optimizer: String,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self { registry: Registry::builtin(), task: "cartpole".into(), optimizer: "ps".into() }
    }
}

pub fn load_yaml(path: impl AsRef<Path>, catalog: &PluginCatalog, base: Registry) -> Result<StackConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    load_yaml_str(&text, catalog, base)
}

/// Applies the YAML document on top of `base`.
pub fn load_yaml_str(text: &str, catalog: &PluginCatalog, base: Registry) -> Result<StackConfig> {
    let doc: serde_yaml::Value = serde_yaml::from_str(text)?;
    let doc = match doc {
        serde_yaml::Value::Null => Value::Object(Map::new()),
        other => serde_json::to_value(other)
            .map_err(|e| Error::InvalidConfig(format!("YAML is not representable as JSON: {e}")))?,
    };
    let root = doc.as_object().ok_or_else(|| Error::InvalidConfig("top level must be a mapping".into()))?;

    let mut unknown = Vec::new();
    unknown_keys(root, TOP_KEYS, "", &mut unknown);
    for section in ["custom_tasks", "custom_optimizers"] {
        let inner = if section == "custom_tasks" { "task" } else { "optimizer" };
        if let Some(entries) = root.get(section) {
            for (name, entry) in mapping(entries, section)? {
                unknown_keys(mapping(entry, &format!("{section}.{name}"))?, &[inner, "config"], &format!("{section}.{name}."), &mut unknown);
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownKeys(unknown));
    }

    let mut stack = StackConfig { registry: base, ..StackConfig::default() };
    let r = &mut stack.registry;

    if let Some(entries) = root.get("custom_tasks") {
        for (name, entry) in mapping(entries, "custom_tasks")? {
            let (factory, config) = plugin_entry(entry, "task", &format!("custom_tasks.{name}"))?;
            let build = PluginCatalog::lookup(&catalog.tasks, "task factory", factory)?.clone();
            let default = PluginCatalog::lookup(&catalog.configs, "config", config)?.clone();
            r.register_task_dyn(name, default, build)?;
        }
    }
    if let Some(entries) = root.get("custom_optimizers") {
        for (name, entry) in mapping(entries, "custom_optimizers")? {
            let (factory, config) = plugin_entry(entry, "optimizer", &format!("custom_optimizers.{name}"))?;
            let build = PluginCatalog::lookup(&catalog.optimizers, "optimizer factory", factory)?.clone();
            let default = PluginCatalog::lookup(&catalog.configs, "config", config)?.clone();
            r.register_optimizer_dyn(name, default, build)?;
        }
    }
    if let Some(per_task) = root.get("controller_config_overrides") {
        for (task, fields) in mapping(per_task, "controller_config_overrides")? {
            let fields = mapping(fields, &format!("controller_config_overrides.{task}"))?;
            r.set_config_overrides(task, ConfigScope::Controller, fields.iter().map(|(k, v)| (k, v.clone())));
        }
    }
    if let Some(per_task) = root.get("optimizer_config_overrides") {
        for (task, per_opt) in mapping(per_task, "optimizer_config_overrides")? {
            for (opt, fields) in mapping(per_opt, &format!("optimizer_config_overrides.{task}"))? {
                let fields = mapping(fields, &format!("optimizer_config_overrides.{task}.{opt}"))?;
                r.set_config_overrides(
                    task,
                    ConfigScope::Optimizer(opt.clone()),
                    fields.iter().map(|(k, v)| (k, v.clone())),
                );
            }
        }
    }

    if let Some(t) = root.get("task") {
        stack.task = string(t, "task")?.to_string();
    }
    if let Some(o) = root.get("optimizer") {
        stack.optimizer = string(o, "optimizer")?.to_string();
    }
    stack.registry.resolve_config(&stack.task, &stack.optimizer)?;
    stack.registry.validate_overrides()?;
    Ok(stack)
}

fn unknown_keys(map: &Map<String, Value>, allowed: &[&str], prefix: &str, out: &mut Vec<String>) {
    out.extend(map.keys().filter(|k| !allowed.contains(&k.as_str())).map(|k| format!("{prefix}{k}")));
}

fn mapping<'a>(v: &'a Value, at: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::InvalidConfig(format!("`{at}` must be a mapping")))
}

fn string<'a>(v: &'a Value, at: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::InvalidConfig(format!("`{at}` must be a string")))
}

fn plugin_entry<'a>(entry: &'a Value, factory_key: &str, at: &str) -> Result<(&'a str, &'a str)> {
    let m = mapping(entry, at)?;
    let get = |k: &str| {
        m.get(k)
            .ok_or_else(|| Error::InvalidConfig(format!("`{at}` is missing `{k}`")))
            .and_then(|v| string(v, &format!("{at}.{k}")))
    };
    Ok((get(factory_key)?, get("config")?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<StackConfig> {
        load_yaml_str(text, &PluginCatalog::builtin(), Registry::builtin())
    }

    #[test]
    fn only_task_gives_defaults() {
        let s = load("task: cartpole\n").unwrap();
        assert_eq!(s.task, "cartpole");
        assert_eq!(s.optimizer, "ps");
        let a = s.registry.resolve_config("cartpole", "ps").unwrap();
        let b = Registry::builtin().resolve_config("cartpole", "ps").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_document_is_allowed() {
        let s = load("").unwrap();
        assert_eq!(s.task, "cartpole");
    }

    #[test]
    fn defaults_line_is_ignored() {
        assert!(load("defaults:\n  - smpc\ntask: double_integrator\n").is_ok());
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = load(
            "task: cartpole\ncontroler_config_overrides: {}\nextra: 1\n\
             custom_tasks:\n  t:\n    task: smpc.tasks.Cartpole\n    config: smpc.tasks.CartpoleConfig\n    colour: red\n",
        )
        .unwrap_err();
        match err {
            Error::UnknownKeys(keys) => {
                assert_eq!(keys.len(), 3, "{keys:?}");
                assert!(keys.contains(&"controler_config_overrides".to_string()));
                assert!(keys.contains(&"extra".to_string()));
                assert!(keys.contains(&"custom_tasks.t.colour".to_string()));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn bad_plugin_paths_fail() {
        let err = load("custom_tasks:\n  t:\n    task: no.such.Task\n    config: smpc.tasks.CartpoleConfig\n")
            .unwrap_err();
        assert!(err.to_string().contains("no.such.Task"));
    }

    #[test]
    fn unknown_active_task_fails() {
        assert!(load("task: nope\n").is_err());
    }

    #[test]
    fn bad_override_field_fails() {
        let err = load("controller_config_overrides:\n  cartpole:\n    horizn: 1.0\n").unwrap_err();
        assert!(err.to_string().contains("horizn"));
    }

    #[test]
    fn builtin_aliases_register() {
        let s = load(
            "task: pole\ncustom_tasks:\n  pole:\n    task: smpc.tasks.Cartpole\n    config: smpc.tasks.CartpoleConfig\n\
             controller_config_overrides:\n  pole:\n    horizon: 1.5\n    spline: cubic\n",
        )
        .unwrap();
        let (task, _, resolved) = s.registry.build("pole", "mppi").unwrap();
        assert_eq!(task.info().name, "cartpole");
        assert_eq!(resolved.controller.horizon, 1.5);
        assert_eq!(resolved.controller.spline, crate::spline::InterpolationKind::Cubic);
    }
}
