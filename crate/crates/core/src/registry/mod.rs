//! Name → (factory, default config) registries for tasks and optimizers,
//! task-specific config overrides, and resolution of the configs a
//! controller should run with.

mod schema;
mod yaml;

pub use schema::{schema_of, schema_with_values, ConfigSchema, SchemaField, WidgetKind};
pub use yaml::{load_yaml, load_yaml_str, PluginCatalog, StackConfig};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde_json::Value;

use crate::config::{downcast_config, DynConfig, Reflect};
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::optimizers::{
    Cem, CemConfig, Mppi, MppiConfig, Optimizer, PredictiveSampling, PredictiveSamplingConfig,
};
use crate::tasks::{
    AnyTask, Cartpole, CartpoleConfig, Configured, CylinderPush, CylinderPushConfig, DoubleIntegrator,
    DoubleIntegratorConfig, Task,
};

pub type TaskBuilder = Arc<dyn Fn(&dyn DynConfig) -> Result<Box<dyn AnyTask>> + Send + Sync>;
pub type OptimizerBuilder = Arc<dyn Fn(&dyn DynConfig) -> Result<Box<dyn Optimizer>> + Send + Sync>;

/// Which config of a task's stack an override targets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConfigScope {
    Task,
    /// The config of the named optimizer.
    Optimizer(String),
    Controller,
}

impl fmt::Display for ConfigScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Task => f.write_str("task"),
            Self::Optimizer(name) => write!(f, "optimizer `{name}`"),
            Self::Controller => f.write_str("controller"),
        }
    }
}

#[derive(Clone)]
struct Entry<B> {
    default: Box<dyn DynConfig>,
    build: B,
}

/// Task-specific overrides keyed by (task, scope, field path). Setting the
/// same key twice keeps the later value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverrideSet {
    entries: BTreeMap<(String, ConfigScope, String), Value>,
}

impl OverrideSet {
    pub fn insert(&mut self, task: &str, scope: ConfigScope, path: &str, value: Value) {
        self.entries.insert((task.to_string(), scope, path.to_string()), value);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ConfigScope, &str, &Value)> {
        self.entries.iter().map(|((t, s, p), v)| (t.as_str(), s, p.as_str(), v))
    }

    fn for_scope<'a>(&'a self, task: &'a str, scope: &'a ConfigScope) -> impl Iterator<Item = (&'a str, &'a Value)> {
        self.entries
            .iter()
            .filter(move |((t, s, _), _)| t == task && s == scope)
            .map(|((_, _, p), v)| (p.as_str(), v))
    }
}

/// The three configs a controller runs with for one (task, optimizer) pair.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub task: Box<dyn DynConfig>,
    pub optimizer: Box<dyn DynConfig>,
    pub controller: ControllerConfig,
}

impl PartialEq for ResolvedConfig {
    fn eq(&self, other: &Self) -> bool {
        *self.task == *other.task && *self.optimizer == *other.optimizer && self.controller == other.controller
    }
}

#[derive(Clone)]
pub struct Registry {
    tasks: Vec<(String, Entry<TaskBuilder>)>,
    optimizers: Vec<(String, Entry<OptimizerBuilder>)>,
    controller_default: ControllerConfig,
    overrides: OverrideSet,
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("tasks", &self.task_names())
            .field("optimizers", &self.optimizer_names())
            .field("overrides", &self.overrides)
            .finish()
    }
}

impl Registry {
    /// A registry with nothing registered.
    pub fn empty() -> Self {
        Self {
            tasks: Vec::new(),
            optimizers: Vec::new(),
            controller_default: ControllerConfig::default(),
            overrides: OverrideSet::default(),
        }
    }

    /// Built-in tasks (`cartpole`, `cylinder_push`, `double_integrator`)
    /// and optimizers (`ps`, `cem`, `mppi`).
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register_task("cartpole", Cartpole::default, CartpoleConfig::default()).unwrap();
        r.register_task("cylinder_push", CylinderPush::default, CylinderPushConfig::default()).unwrap();
        r.register_task("double_integrator", DoubleIntegrator::default, DoubleIntegratorConfig::default())
            .unwrap();
        r.register_optimizer("ps", PredictiveSampling::new, PredictiveSamplingConfig::default()).unwrap();
        r.register_optimizer("cem", Cem::new, CemConfig::default()).unwrap();
        r.register_optimizer("mppi", Mppi::new, MppiConfig::default()).unwrap();
        // Four zero-order-hold knots over the horizon are too coarse to
        // re-center the cart once the pole is up.
        for opt in ["ps", "cem", "mppi"] {
            r.set_config_overrides("cartpole", ConfigScope::Optimizer(opt.into()), [("num_nodes", 8)]);
        }
        r
    }

    pub fn register_task<T, F>(&mut self, name: &str, factory: F, default: T::Config) -> Result<()>
    where
        T: Task,
        F: Fn() -> T + Send + Sync + 'static,
    {
        self.register_task_dyn(name, Box::new(default), task_builder(factory))
    }

    pub fn register_task_dyn(&mut self, name: &str, default: Box<dyn DynConfig>, build: TaskBuilder) -> Result<()> {
        if self.has_task(name) {
            return Err(Error::Duplicate(name.to_string()));
        }
        default.validate()?;
        self.tasks.push((name.to_string(), Entry { default, build }));
        Ok(())
    }

    pub fn register_optimizer<C, O, F>(&mut self, name: &str, factory: F, default: C) -> Result<()>
    where
        C: DynConfig + DeserializeOwned + Reflect + Clone + 'static,
        O: Optimizer + 'static,
        F: Fn(C) -> O + Send + Sync + 'static,
    {
        self.register_optimizer_dyn(name, Box::new(default), optimizer_builder(factory))
    }

    pub fn register_optimizer_dyn(
        &mut self,
        name: &str,
        default: Box<dyn DynConfig>,
        build: OptimizerBuilder,
    ) -> Result<()> {
        if self.has_optimizer(name) {
            return Err(Error::Duplicate(name.to_string()));
        }
        default.validate()?;
        self.optimizers.push((name.to_string(), Entry { default, build }));
        Ok(())
    }

    /// Stores overrides applied whenever `task` is resolved. Field paths are
    /// checked at resolution time.
    pub fn set_config_overrides<K, V, I>(&mut self, task: &str, scope: ConfigScope, overrides: I)
    where
        K: AsRef<str>,
        V: Into<Value>,
        I: IntoIterator<Item = (K, V)>,
    {
        for (path, value) in overrides {
            self.overrides.insert(task, scope.clone(), path.as_ref(), value.into());
        }
    }

    pub fn overrides(&self) -> &OverrideSet {
        &self.overrides
    }

    pub fn set_controller_default(&mut self, config: ControllerConfig) -> Result<()> {
        config.validate()?;
        self.controller_default = config;
        Ok(())
    }

    pub fn task_names(&self) -> Vec<&str> {
        self.tasks.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn optimizer_names(&self) -> Vec<&str> {
        self.optimizers.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn has_task(&self, name: &str) -> bool {
        self.tasks.iter().any(|(n, _)| n == name)
    }

    pub fn has_optimizer(&self, name: &str) -> bool {
        self.optimizers.iter().any(|(n, _)| n == name)
    }

    fn task_entry(&self, name: &str) -> Result<&Entry<TaskBuilder>> {
        self.tasks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::Unknown { kind: "task", name: name.to_string() })
    }

    fn optimizer_entry(&self, name: &str) -> Result<&Entry<OptimizerBuilder>> {
        self.optimizers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::Unknown { kind: "optimizer", name: name.to_string() })
    }

    /// Registered defaults with `task`'s overrides applied. Does not modify
    /// the registry.
    pub fn resolve_config(&self, task: &str, optimizer: &str) -> Result<ResolvedConfig> {
        let task_cfg = self.resolve_task_config(task)?;
        let mut opt_cfg = self.optimizer_entry(optimizer)?.default.clone();
        let mut controller = self.controller_default.clone();

        apply(&mut *opt_cfg, self.overrides.for_scope(task, &ConfigScope::Optimizer(optimizer.to_string())))?;
        apply(&mut controller, self.overrides.for_scope(task, &ConfigScope::Controller))?;
        Ok(ResolvedConfig { task: task_cfg, optimizer: opt_cfg, controller })
    }

    /// The task's config with its task-scope overrides applied.
    pub fn resolve_task_config(&self, task: &str) -> Result<Box<dyn DynConfig>> {
        let mut cfg = self.task_entry(task)?.default.clone();
        apply(&mut *cfg, self.overrides.for_scope(task, &ConfigScope::Task))?;
        Ok(cfg)
    }

    pub fn build_task(&self, name: &str, config: &dyn DynConfig) -> Result<Box<dyn AnyTask>> {
        (self.task_entry(name)?.build)(config)
    }

    pub fn build_optimizer(&self, name: &str, config: &dyn DynConfig) -> Result<Box<dyn Optimizer>> {
        (self.optimizer_entry(name)?.build)(config)
    }

    /// Resolves configs and builds the task and optimizer they describe.
    pub fn build(&self, task: &str, optimizer: &str) -> Result<(Box<dyn AnyTask>, Box<dyn Optimizer>, ResolvedConfig)> {
        let resolved = self.resolve_config(task, optimizer)?;
        let t = self.build_task(task, &*resolved.task)?;
        let o = self.build_optimizer(optimizer, &*resolved.optimizer)?;
        Ok((t, o, resolved))
    }

    /// Checks that every stored override names a registered task (and
    /// optimizer) and applies cleanly.
    pub fn validate_overrides(&self) -> Result<()> {
        for (task, scope, _, _) in self.overrides.iter() {
            match scope {
                ConfigScope::Optimizer(opt) => {
                    self.resolve_config(task, opt)?;
                }
                _ => {
                    let any_opt = self.optimizers.first().map(|(n, _)| n.as_str());
                    match any_opt {
                        Some(opt) => {
                            self.resolve_config(task, opt)?;
                        }
                        None => {
                            self.task_entry(task)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Schema of a config in `scope`, with slider bounds taken from the
    /// resolved defaults for `task` and values from `current`.
    pub fn schema_for(
        &self,
        task: &str,
        optimizer: &str,
        scope: &ConfigScope,
        current: &dyn DynConfig,
    ) -> Result<ConfigSchema> {
        let resolved = self.resolve_config(task, optimizer)?;
        let defaults: &dyn DynConfig = match scope {
            ConfigScope::Task => &*resolved.task,
            ConfigScope::Optimizer(_) => &*resolved.optimizer,
            ConfigScope::Controller => &resolved.controller,
        };
        schema_with_values(defaults, current)
    }

    /// Dropdowns listing every registered task and optimizer.
    pub fn stack_schema(&self, task: &str, optimizer: &str) -> ConfigSchema {
        let dropdown = |name: &str, value: &str, options: Vec<&str>| SchemaField {
            name: name.to_string(),
            kind: WidgetKind::Dropdown,
            default: Value::from(value),
            value: Some(Value::from(value)),
            min: None,
            max: None,
            step: None,
            options: options.into_iter().map(String::from).collect(),
            subfields: Vec::new(),
        };
        ConfigSchema {
            fields: vec![
                dropdown("task", task, self.task_names()),
                dropdown("optimizer", optimizer, self.optimizer_names()),
            ],
        }
    }
}

fn apply<'a>(cfg: &mut dyn DynConfig, overrides: impl Iterator<Item = (&'a str, &'a Value)>) -> Result<()> {
    for (path, value) in overrides {
        cfg.set_json(path, value)?;
    }
    Ok(())
}

pub(crate) fn task_builder<T, F>(factory: F) -> TaskBuilder
where
    T: Task,
    F: Fn() -> T + Send + Sync + 'static,
{
    Arc::new(move |cfg: &dyn DynConfig| {
        let config: T::Config = downcast_config(cfg)?;
        Ok(Box::new(Configured::new(factory(), config)) as Box<dyn AnyTask>)
    })
}

pub(crate) fn optimizer_builder<C, O, F>(factory: F) -> OptimizerBuilder
where
    C: DynConfig + DeserializeOwned + Reflect + Clone + 'static,
    O: Optimizer + 'static,
    F: Fn(C) -> O + Send + Sync + 'static,
{
    Arc::new(move |cfg: &dyn DynConfig| {
        let config: C = downcast_config(cfg)?;
        Ok(Box::new(factory(config)) as Box<dyn Optimizer>)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn builtin_names() {
        let r = Registry::builtin();
        assert_eq!(r.task_names(), vec!["cartpole", "cylinder_push", "double_integrator"]);
        assert_eq!(r.optimizer_names(), vec!["ps", "cem", "mppi"]);
    }

    #[test]
    fn duplicate_and_unknown_names() {
        let mut r = Registry::builtin();
        let err = r.register_task("cartpole", Cartpole::default, CartpoleConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Duplicate(ref n) if n == "cartpole"));
        let err = r.register_optimizer("ps", PredictiveSampling::new, Default::default()).unwrap_err();
        assert!(matches!(err, Error::Duplicate(_)));
        let err = r.resolve_config("nope", "ps").unwrap_err();
        assert!(err.to_string().contains("nope"));
        let err = r.resolve_config("cartpole", "nope").unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn horizon_overrides_are_per_task() {
        let mut r = Registry::builtin();
        r.set_config_overrides("cartpole", ConfigScope::Controller, [("horizon", 1.0)]);
        r.set_config_overrides("cylinder_push", ConfigScope::Controller, [("horizon", 0.5)]);
        assert_eq!(r.resolve_config("cartpole", "ps").unwrap().controller.horizon, 1.0);
        assert_eq!(r.resolve_config("cylinder_push", "ps").unwrap().controller.horizon, 0.5);
        assert_eq!(r.resolve_config("double_integrator", "ps").unwrap().controller.horizon, 0.75);
    }

    #[test]
    fn last_override_wins() {
        let mut r = Registry::builtin();
        r.set_config_overrides("cartpole", ConfigScope::Controller, [("horizon", 1.0)]);
        r.set_config_overrides("cartpole", ConfigScope::Controller, [("horizon", 2.0)]);
        assert_eq!(r.resolve_config("cartpole", "ps").unwrap().controller.horizon, 2.0);
    }

    #[test]
    fn bad_overrides_surface_at_resolution() {
        let mut r = Registry::builtin();
        r.set_config_overrides("cartpole", ConfigScope::Controller, [("horizn", 1.0)]);
        assert!(matches!(r.resolve_config("cartpole", "ps"), Err(Error::UnknownField { .. })));
        assert!(r.validate_overrides().is_err());

        let mut r = Registry::builtin();
        r.set_config_overrides("cartpole", ConfigScope::Task, [("w_vert", "heavy")]);
        assert!(matches!(r.resolve_config("cartpole", "ps"), Err(Error::FieldType { .. })));
    }

    #[test]
    fn resolution_is_pure_and_builds() {
        let mut r = Registry::builtin();
        r.set_config_overrides("cylinder_push", ConfigScope::Task, [("goal", json!([0.1, 0.2]))]);
        let a = r.resolve_config("cylinder_push", "mppi").unwrap();
        let b = r.resolve_config("cylinder_push", "mppi").unwrap();
        assert_eq!(a, b);
        let (task, opt, _) = r.build("cylinder_push", "mppi").unwrap();
        assert_eq!(task.config().to_json()["goal"], json!([0.1, 0.2]));
        assert_eq!(opt.num_rollouts(), 32);
        assert_eq!(r.resolve_config("cartpole", "cem").unwrap().optimizer.to_json()["num_nodes"], 8);
    }
}
