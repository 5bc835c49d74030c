//! Plan file format: UTF-8 JSON, `version` 1, `metadata`, `nodes` array.

use super::{NodeId, Plan, PlanError, PlanMetadata, PlanNode};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const PLAN_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PlanDocument {
    version: u32,
    metadata: PlanMetadata,
    nodes: Vec<PlanNode>,
}

pub fn serialize_plan(plan: &Plan) -> String {
    let doc = PlanDocument {
        version: PLAN_FORMAT_VERSION,
        metadata: plan.metadata.clone(),
        nodes: plan.topo_order().iter().filter_map(|id| plan.nodes.get(id).cloned()).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("plan serialization is infallible")
}

pub fn deserialize_plan(text: &str) -> Result<Plan, PlanError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| PlanError::Malformed(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| PlanError::Malformed("not an object".into()))?;
    if !obj.contains_key("nodes") {
        return Err(PlanError::Malformed("missing nodes".into()));
    }
    let doc: PlanDocument = serde_json::from_value(value.clone()).map_err(|e| {
        let msg = e.to_string();
        if msg.contains("unknown variant") {
            PlanError::UnknownOp(msg)
        } else {
            PlanError::Malformed(msg)
        }
    })?;
    if doc.version != PLAN_FORMAT_VERSION {
        return Err(PlanError::Malformed(format!("unsupported version {}", doc.version)));
    }
    let mut nodes: BTreeMap<NodeId, PlanNode> = BTreeMap::new();
    for node in doc.nodes {
        if nodes.insert(node.id, node.clone()).is_some() {
            return Err(PlanError::DuplicateNode(node.id));
        }
    }
    let root = nodes
        .values()
        .find(|n| matches!(n.op, super::Operator::Sink))
        .map(|n| n.id)
        .ok_or_else(|| PlanError::Malformed("no sink node".into()))?;
    Ok(Plan { nodes, root, metadata: doc.metadata })
}
