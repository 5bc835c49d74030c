//! Attribute schema propagation from Source to Sink.

use super::{AggregateFn, ExtractTask, NodeId, Operator, Plan};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Frame,
    Text,
    Label,
    Number,
    Boolean,
    Bbox,
}

/// Ordered attribute list; names are unique within a schema.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AttributeSchema {
    pub attributes: Vec<(String, AttrKind)>,
}

impl AttributeSchema {
    pub fn with(mut self, name: &str, kind: AttrKind) -> Self {
        if !self.contains(name) {
            self.attributes.push((name.to_string(), kind));
        }
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.attributes.iter().any(|(n, _)| n == name)
    }

    pub fn kind_of(&self, name: &str) -> Option<AttrKind> {
        self.attributes.iter().find(|(n, _)| n == name).map(|(_, k)| *k)
    }
}

/// Attributes produced by an extraction task.
pub fn task_outputs(task: ExtractTask) -> Vec<(&'static str, AttrKind)> {
    match task {
        ExtractTask::ObjectDetection => vec![
            ("car_present", AttrKind::Boolean),
            ("bbox", AttrKind::Bbox),
            ("brand", AttrKind::Label),
        ],
        ExtractTask::ColorRecognition => vec![("color", AttrKind::Label)],
        ExtractTask::TextExtraction => vec![("plate", AttrKind::Text)],
        ExtractTask::ActionRecognition => vec![
            ("player_id", AttrKind::Number),
            ("team", AttrKind::Label),
            ("action", AttrKind::Label),
        ],
    }
}

fn apply_op(schema: &AttributeSchema, op: &Operator) -> AttributeSchema {
    match op {
        Operator::Source => AttributeSchema::default().with("frame", AttrKind::Frame),
        Operator::Extract { task, .. } => {
            let mut s = schema.clone();
            for (name, kind) in task_outputs(*task) {
                s = s.with(name, kind);
            }
            s
        }
        Operator::Aggregate { fn_, group_by, .. } => {
            let mut s = AttributeSchema::default();
            match fn_ {
                AggregateFn::Count => {
                    s = s.with("count", AttrKind::Number);
                }
                AggregateFn::DistinctCount => {
                    s = s.with("distinct_count", AttrKind::Number);
                }
                AggregateFn::GroupCountArgmax | AggregateFn::TopK => {
                    for g in group_by {
                        if let Some(kind) = schema.kind_of(g) {
                            s = s.with(g, kind);
                        }
                    }
                    s = s.with("count", AttrKind::Number);
                }
            }
            s = s.with("window_start_ms", AttrKind::Number);
            s
        }
        // Filter, Skip, Crop, Downscale, Greyscale, Window, Sink pass the
        // schema through unchanged.
        _ => schema.clone(),
    }
}

/// Schema of the rows flowing OUT of node `id`, or None if `id` is unknown.
pub fn schema_at(plan: &Plan, id: NodeId) -> Option<AttributeSchema> {
    let order = plan.topo_order();
    let mut schemas: std::collections::BTreeMap<NodeId, AttributeSchema> = Default::default();
    for nid in order {
        let node = plan.nodes.get(&nid)?;
        let input_schema = node
            .inputs
            .first()
            .and_then(|i| schemas.get(i).cloned())
            .unwrap_or_default();
        schemas.insert(nid, apply_op(&input_schema, &node.op));
    }
    schemas.get(&id).cloned()
}

/// First attribute referenced by `id`'s operator that its input schema does
/// not provide, if any.
pub fn first_unbound_attribute(plan: &Plan, id: NodeId) -> Option<String> {
    let node = plan.nodes.get(&id)?;
    let input_schema = node
        .inputs
        .first()
        .and_then(|i| schema_at(plan, *i))
        .unwrap_or_default();
    let referenced: Vec<String> = match &node.op {
        Operator::Filter { predicate } => {
            predicate.referenced_attributes().iter().map(|s| s.to_string()).collect()
        }
        Operator::Aggregate { group_by, .. } => group_by.clone(),
        _ => vec![],
    };
    referenced.into_iter().find(|a| !input_schema.contains(a))
}
