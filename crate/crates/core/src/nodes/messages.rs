//! JSON messages exchanged between nodes and websocket clients.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::registry::SchemaField;
use crate::spline::{ControlPlan, InterpolationKind};
use crate::Result;

/// Messages that carry a per-topic sequence number.
pub trait Sequenced {
    fn set_seq(&mut self, seq: u64);
}

macro_rules! sequenced {
    ($($t:ty),*) => {$(
        impl Sequenced for $t {
            fn set_seq(&mut self, seq: u64) {
                self.seq = seq;
            }
        }
    )*};
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMsg {
    #[serde(default)]
    pub seq: u64,
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMsg {
    #[serde(default)]
    pub seq: u64,
    pub t_start: f64,
    pub knot_times: Vec<f64>,
    pub knots: Vec<Vec<f64>>,
    pub kind: InterpolationKind,
    pub nu: usize,
}

impl PlanMsg {
    pub fn from_plan(plan: &ControlPlan) -> Self {
        Self {
            seq: 0,
            t_start: plan.t_start(),
            knot_times: plan.knot_times().to_vec(),
            knots: plan.knots().outer_iter().map(|row| row.to_vec()).collect(),
            kind: plan.kind(),
            nu: plan.nu(),
        }
    }

    pub fn to_plan(&self) -> Result<ControlPlan> {
        let flat: Vec<f64> = self.knots.iter().flatten().copied().collect();
        let knots = ndarray::Array2::from_shape_vec((self.knots.len(), self.nu), flat)
            .map_err(|e| crate::Error::Shape(format!("plan knots: {e}")))?;
        ControlPlan::new(knots, self.knot_times.clone(), self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub points: Vec<[f64; 3]>,
    /// `None` when the rollout failed.
    pub reward: Option<f64>,
    pub nominal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracesMsg {
    #[serde(default)]
    pub seq: u64,
    pub traces: Vec<Trace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamScope {
    Task,
    Optimizer,
    Controller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamUpdateMsg {
    #[serde(default)]
    pub seq: u64,
    pub scope: ParamScope,
    pub path: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum CommandMsg {
    SwitchTask { task: String },
    SwitchOptimizer { optimizer: String },
    Reset,
    Pause,
    Resume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsMsg {
    #[serde(default)]
    pub seq: u64,
    pub update_ms_mean: f64,
    pub update_ms_std: f64,
    pub iteration: u64,
    pub task: String,
    pub optimizer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaScope {
    /// Task and optimizer dropdowns.
    Stack,
    Task,
    Optimizer,
    Controller,
}

impl SchemaScope {
    pub const ALL: [SchemaScope; 4] = [Self::Stack, Self::Task, Self::Optimizer, Self::Controller];

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaMsg {
    #[serde(default)]
    pub seq: u64,
    pub scope: SchemaScope,
    pub fields: Vec<SchemaField>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMsg {
    #[serde(default)]
    pub seq: u64,
    pub message: String,
}

impl ErrorMsg {
    pub fn new(message: impl Into<String>) -> Self {
        Self { seq: 0, message: message.into() }
    }
}

sequenced!(StateMsg, PlanMsg, TracesMsg, StatsMsg, SchemaMsg, ErrorMsg, ParamUpdateMsg);

/// Client requests routed to the simulator and controller.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    Param(ParamUpdateMsg),
    Command(CommandMsg),
}

impl Sequenced for Inbound {
    fn set_seq(&mut self, seq: u64) {
        if let Inbound::Param(p) = self {
            p.seq = seq;
        }
    }
}

/// Every frame on the websocket, tagged by `"type"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeMessage {
    State(StateMsg),
    Plan(PlanMsg),
    Traces(TracesMsg),
    Param(ParamUpdateMsg),
    Command(CommandMsg),
    Stats(StatsMsg),
    Schema(SchemaMsg),
    Error(ErrorMsg),
}

impl NodeMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("messages serialize")
    }

    pub fn parse(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn roundtrip(m: NodeMessage) -> Value {
        let v: Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(NodeMessage::parse(&v.to_string()).unwrap(), m);
        v
    }

    #[test]
    fn field_names() {
        let v = roundtrip(NodeMessage::State(StateMsg {
            seq: 3,
            t: 0.5,
            q: vec![1.0],
            v: vec![0.0],
            task: "double_integrator".into(),
        }));
        assert_eq!(v, json!({"type": "state", "seq": 3, "t": 0.5, "q": [1.0], "v": [0.0], "task": "double_integrator"}));

        let plan = ControlPlan::zeros(2, 1, 0.0, 1.0, InterpolationKind::Linear).unwrap();
        let v = roundtrip(NodeMessage::Plan(PlanMsg::from_plan(&plan)));
        assert_eq!(v["type"], "plan");
        assert_eq!(v["kind"], "linear");
        assert_eq!(v["knots"], json!([[0.0], [0.0]]));
        assert_eq!(v["knot_times"], json!([0.0, 1.0]));

        let v = roundtrip(NodeMessage::Stats(StatsMsg {
            seq: 1,
            update_ms_mean: 1.0,
            update_ms_std: 0.1,
            iteration: 9,
            task: "cartpole".into(),
            optimizer: "ps".into(),
        }));
        for k in ["seq", "update_ms_mean", "update_ms_std", "iteration", "task", "optimizer"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }

        let v = roundtrip(NodeMessage::Traces(TracesMsg {
            seq: 2,
            traces: vec![Trace { points: vec![[0.0, 1.0, 2.0]], reward: None, nominal: true }],
        }));
        assert_eq!(v["traces"][0], json!({"points": [[0.0, 1.0, 2.0]], "reward": null, "nominal": true}));
    }

    #[test]
    fn client_frames_parse() {
        let m = NodeMessage::parse(r#"{"type":"command","name":"pause"}"#).unwrap();
        assert_eq!(m, NodeMessage::Command(CommandMsg::Pause));
        let m = NodeMessage::parse(r#"{"type":"command","name":"switch_task","task":"cylinder_push"}"#).unwrap();
        assert_eq!(m, NodeMessage::Command(CommandMsg::SwitchTask { task: "cylinder_push".into() }));
        let m = NodeMessage::parse(r#"{"type":"param","scope":"optimizer","path":"sigma","value":0}"#).unwrap();
        assert!(matches!(m, NodeMessage::Param(ParamUpdateMsg { scope: ParamScope::Optimizer, .. })));
        assert!(NodeMessage::parse(r#"{"type":"command","name":"explode"}"#).is_err());
        assert!(NodeMessage::parse("{not json").is_err());
    }

    #[test]
    fn plan_roundtrip() {
        let plan = ControlPlan::uniform(ndarray::array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], 0.2, 0.6, InterpolationKind::Cubic)
            .unwrap();
        assert_eq!(PlanMsg::from_plan(&plan).to_plan().unwrap(), plan);
    }
}
