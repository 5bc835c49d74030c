//! Logical plan IR for continuous multimodal queries.
//!
//! Plans are immutable values: a DAG of typed operators (benchmark plans are
//! single-input chains) with exactly one `Source` and one `Sink`. All edits go
//! through copy-on-write constructors such as [`Plan::insert_before`].

mod builder;
pub mod schema;
mod serde_io;
mod validate;

pub use builder::{build_query, PlanBuildConfig, QueryId, NO_LABEL};
pub use schema::{schema_at, task_outputs, AttrKind, AttributeSchema};
pub use serde_io::{deserialize_plan, serialize_plan};
pub use validate::{validate_plan, ValidationReport, Violation};

use crate::pixel::{ColorClass, Region};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("unknown query id {0}")]
    UnknownQuery(String),
    #[error("node {0} not found in plan")]
    NoSuchNode(NodeId),
    #[error("unbound attribute {attr} required by inserted node at position before node {before}")]
    UnboundAttribute { attr: String, before: NodeId },
    #[error("plan document malformed: {0}")]
    Malformed(String),
    #[error("unknown operator tag {0}")]
    UnknownOp(String),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
}

pub type NodeId = u32;

/// Extraction tasks an inference model can serve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractTask {
    ObjectDetection,
    ColorRecognition,
    TextExtraction,
    ActionRecognition,
}

impl ExtractTask {
    pub fn all() -> [ExtractTask; 4] {
        [
            ExtractTask::ObjectDetection,
            ExtractTask::ColorRecognition,
            ExtractTask::TextExtraction,
            ExtractTask::ActionRecognition,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExtractTask::ObjectDetection => "object_detection",
            ExtractTask::ColorRecognition => "color_recognition",
            ExtractTask::TextExtraction => "text_extraction",
            ExtractTask::ActionRecognition => "action_recognition",
        }
    }
}

/// Literal values predicates compare against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Literal {
    Label(String),
    Text(String),
    Number(f64),
    Boolean(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

/// Filter predicate tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Comparison { attribute: String, op: CmpOp, value: Literal },
    PrefixMatch { attribute: String, prefix: String },
    And { children: Vec<Predicate> },
    /// Cheap raw-pixel test: fraction of `color_class` pixels >= threshold.
    PixelFractionGe { color_class: ColorClass, threshold: f64 },
}

impl Predicate {
    /// Attribute names referenced anywhere in the tree.
    pub fn referenced_attributes(&self) -> Vec<&str> {
        match self {
            Predicate::Comparison { attribute, .. } => vec![attribute],
            Predicate::PrefixMatch { attribute, .. } => vec![attribute],
            Predicate::And { children } => {
                children.iter().flat_map(|c| c.referenced_attributes()).collect()
            }
            Predicate::PixelFractionGe { .. } => vec![],
        }
    }

    pub fn references_attribute(&self, name: &str) -> bool {
        self.referenced_attributes().contains(&name)
    }
}

/// Crop region parameter: symbolic (resolution-independent) or explicit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CropSpec {
    /// Keep `fraction` of the frame anchored at one edge.
    Symbolic { anchor: CropAnchor, fraction: f64 },
    Rect { region: Region },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropAnchor {
    Bottom,
    Top,
    Left,
    Right,
}

impl CropSpec {
    /// Resolves to pixel coordinates for a `width` x `height` source frame.
    pub fn resolve(&self, width: u32, height: u32) -> Region {
        match *self {
            CropSpec::Rect { region } => region,
            CropSpec::Symbolic { anchor, fraction } => {
                let f = fraction.clamp(0.0, 1.0);
                match anchor {
                    CropAnchor::Bottom => {
                        let keep = ((height as f64) * f).round() as u32;
                        Region::new(height - keep.min(height), height, 0, width)
                    }
                    CropAnchor::Top => {
                        let keep = ((height as f64) * f).round() as u32;
                        Region::new(0, keep.min(height).max(1), 0, width)
                    }
                    CropAnchor::Left => {
                        let keep = ((width as f64) * f).round() as u32;
                        Region::new(0, height, 0, keep.min(width).max(1))
                    }
                    CropAnchor::Right => {
                        let keep = ((width as f64) * f).round() as u32;
                        Region::new(0, height, width - keep.min(width), width)
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowSpec {
    /// Tumbling window sized in simulated milliseconds.
    TumblingMillis { size_ms: u64 },
    /// Tumbling window sized in frames.
    TumblingFrames { size: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateFn {
    Count,
    GroupCountArgmax,
    DistinctCount,
    TopK,
}

/// Operator tag plus its parameter record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "params")]
pub enum Operator {
    Source,
    Extract { task: ExtractTask, model_slot: String },
    Filter { predicate: Predicate },
    Skip { amount: i64, condition: String },
    Crop { region: CropSpec },
    Downscale { factor: u32 },
    Greyscale,
    Window { window: WindowSpec },
    Aggregate { fn_: AggregateFn, group_by: Vec<String>, k: Option<u32> },
    Sink,
}

impl Operator {
    pub fn tag(&self) -> &'static str {
        match self {
            Operator::Source => "Source",
            Operator::Extract { .. } => "Extract",
            Operator::Filter { .. } => "Filter",
            Operator::Skip { .. } => "Skip",
            Operator::Crop { .. } => "Crop",
            Operator::Downscale { .. } => "Downscale",
            Operator::Greyscale => "Greyscale",
            Operator::Window { .. } => "Window",
            Operator::Aggregate { .. } => "Aggregate",
            Operator::Sink => "Sink",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: NodeId,
    #[serde(flatten)]
    pub op: Operator,
    pub inputs: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMetadata {
    pub query_id: String,
    pub description: String,
    pub accuracy_threshold: f64,
    /// Rewrite bookkeeping (safety classes of applied rules); not part of the
    /// query semantics.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rewrite_notes: Vec<String>,
}

impl PlanMetadata {
    pub fn new(query_id: &str, description: &str) -> Self {
        PlanMetadata {
            query_id: query_id.to_string(),
            description: description.to_string(),
            accuracy_threshold: 0.9,
            rewrite_notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub nodes: BTreeMap<NodeId, PlanNode>,
    pub root: NodeId,
    pub metadata: PlanMetadata,
}

impl Plan {
    /// Builds a chain plan from `ops` (first must be Source, last Sink),
    /// assigning dense ids in topological order.
    pub fn chain(metadata: PlanMetadata, ops: Vec<Operator>) -> Plan {
        let mut nodes = BTreeMap::new();
        let mut prev: Option<NodeId> = None;
        let mut root = 0;
        for (i, op) in ops.into_iter().enumerate() {
            let id = i as NodeId;
            let inputs = prev.map(|p| vec![p]).unwrap_or_default();
            nodes.insert(id, PlanNode { id, op, inputs });
            prev = Some(id);
            root = id;
        }
        Plan { nodes, root, metadata }
    }

    pub fn node(&self, id: NodeId) -> Option<&PlanNode> {
        self.nodes.get(&id)
    }

    pub fn source_id(&self) -> Option<NodeId> {
        self.nodes.values().find(|n| matches!(n.op, Operator::Source)).map(|n| n.id)
    }

    /// Nodes in topological order from Source to Sink. Falls back to id order
    /// when the plan is malformed (validation reports the real trouble).
    pub fn topo_order(&self) -> Vec<NodeId> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut visited = std::collections::BTreeSet::new();
        let mut stack = vec![(self.root, false)];
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                order.push(id);
                continue;
            }
            if !visited.insert(id) {
                continue;
            }
            stack.push((id, true));
            if let Some(n) = self.nodes.get(&id) {
                for inp in &n.inputs {
                    stack.push((*inp, false));
                }
            }
        }
        for id in self.nodes.keys() {
            if !visited.contains(id) {
                order.push(*id);
            }
        }
        order
    }

    /// Successor map (edges downstream).
    pub fn consumers(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut map: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for n in self.nodes.values() {
            for inp in &n.inputs {
                map.entry(*inp).or_default().push(n.id);
            }
        }
        map
    }

    fn fresh_id(&self) -> NodeId {
        self.nodes.keys().max().map(|m| m + 1).unwrap_or(0)
    }

    /// Returns a new plan with `op` spliced onto the single input edge of
    /// `before`. The original plan is untouched.
    pub fn insert_before(&self, op: Operator, before: NodeId) -> Result<Plan, PlanError> {
        let target = self.nodes.get(&before).ok_or(PlanError::NoSuchNode(before))?;
        if target.inputs.len() != 1 {
            return Err(PlanError::Malformed(format!(
                "node {before} has {} inputs; can only splice single-input edges",
                target.inputs.len()
            )));
        }
        let upstream = target.inputs[0];
        let mut plan = self.clone();
        let new_id = plan.fresh_id();
        plan.nodes.insert(new_id, PlanNode { id: new_id, op, inputs: vec![upstream] });
        plan.nodes.get_mut(&before).unwrap().inputs = vec![new_id];

        // Schema compatibility at the insertion point.
        if let Some(missing) = schema::first_unbound_attribute(&plan, new_id) {
            return Err(PlanError::UnboundAttribute { attr: missing, before });
        }
        Ok(plan)
    }

    /// Removes a single-input, single-consumer node, reconnecting the edge.
    pub fn remove_node(&self, id: NodeId) -> Result<Plan, PlanError> {
        let node = self.nodes.get(&id).ok_or(PlanError::NoSuchNode(id))?;
        if node.inputs.len() != 1 {
            return Err(PlanError::Malformed(format!("node {id} is not a pass-through node")));
        }
        let upstream = node.inputs[0];
        let mut plan = self.clone();
        plan.nodes.remove(&id);
        for n in plan.nodes.values_mut() {
            for inp in n.inputs.iter_mut() {
                if *inp == id {
                    *inp = upstream;
                }
            }
        }
        Ok(plan)
    }

    pub fn extract_nodes(&self) -> Vec<&PlanNode> {
        self.topo_order()
            .into_iter()
            .filter_map(|id| self.nodes.get(&id))
            .filter(|n| matches!(n.op, Operator::Extract { .. }))
            .collect()
    }

    pub fn first_extract(&self) -> Option<NodeId> {
        self.extract_nodes().first().map(|n| n.id)
    }

    /// All filter predicates in the plan.
    pub fn predicates(&self) -> Vec<&Predicate> {
        self.topo_order()
            .into_iter()
            .filter_map(|id| self.nodes.get(&id))
            .filter_map(|n| match &n.op {
                Operator::Filter { predicate } => Some(predicate),
                _ => None,
            })
            .collect()
    }

    /// Renumbers node ids densely in topological order. Keeps golden files
    /// and diffs deterministic after a series of insertions.
    pub fn renumbered(&self) -> Plan {
        let order = self.topo_order();
        let remap: BTreeMap<NodeId, NodeId> =
            order.iter().enumerate().map(|(i, id)| (*id, i as NodeId)).collect();
        let mut nodes = BTreeMap::new();
        for (old, new) in &remap {
            let n = &self.nodes[old];
            nodes.insert(
                *new,
                PlanNode {
                    id: *new,
                    op: n.op.clone(),
                    inputs: n.inputs.iter().map(|i| remap[i]).collect(),
                },
            );
        }
        Plan { nodes, root: remap[&self.root], metadata: self.metadata.clone() }
    }
}
