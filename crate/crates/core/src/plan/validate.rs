//! Structural plan validation. Violations are report entries, not failures.

use super::schema::first_unbound_attribute;
use super::{CropSpec, Operator, Plan, Predicate};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: Option<super::NodeId>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, node: Option<super::NodeId>, message: impl Into<String>) {
        self.violations.push(Violation { node, message: message.into() });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_valid() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            match v.node {
                Some(id) => writeln!(f, "node {}: {}", id, v.message)?,
                None => writeln!(f, "plan: {}", v.message)?,
            }
        }
        Ok(())
    }
}

fn check_predicate(pred: &Predicate, report: &mut ValidationReport, node: super::NodeId) {
    match pred {
        Predicate::And { children } => {
            for c in children {
                check_predicate(c, report, node);
            }
        }
        Predicate::PixelFractionGe { threshold, .. } => {
            if !(0.0..=1.0).contains(threshold) {
                report.push(Some(node), format!("pixel fraction threshold {threshold} outside [0,1]"));
            }
        }
        _ => {}
    }
}

pub fn validate_plan(plan: &Plan) -> ValidationReport {
    let mut report = ValidationReport::default();

    let sources = plan.nodes.values().filter(|n| matches!(n.op, Operator::Source)).count();
    let sinks = plan.nodes.values().filter(|n| matches!(n.op, Operator::Sink)).count();
    if sources != 1 {
        report.push(None, format!("expected exactly one Source, found {sources}"));
    }
    if sinks != 1 {
        report.push(None, format!("expected exactly one Sink, found {sinks}"));
    }
    if !plan.nodes.contains_key(&plan.root) {
        report.push(None, format!("root {} missing from node set", plan.root));
    } else if !matches!(plan.nodes[&plan.root].op, Operator::Sink) {
        report.push(Some(plan.root), "root is not a Sink");
    }

    let tau = plan.metadata.accuracy_threshold;
    if !(tau > 0.0 && tau <= 1.0) {
        report.push(None, format!("accuracy threshold {tau} outside (0,1]"));
    }

    // Cycle detection: iterative DFS with colors.
    {
        use std::collections::BTreeMap;
        #[derive(Clone, Copy, PartialEq)]
        enum Color {
            White,
            Grey,
            Black,
        }
        let mut color: BTreeMap<_, _> = plan.nodes.keys().map(|k| (*k, Color::White)).collect();
        let mut cycle = false;
        for &start in plan.nodes.keys() {
            if color[&start] != Color::White {
                continue;
            }
            let mut stack = vec![(start, false)];
            while let Some((id, done)) = stack.pop() {
                if done {
                    color.insert(id, Color::Black);
                    continue;
                }
                match color[&id] {
                    Color::Grey => {
                        cycle = true;
                        continue;
                    }
                    Color::Black => continue,
                    Color::White => {}
                }
                color.insert(id, Color::Grey);
                stack.push((id, true));
                if let Some(n) = plan.nodes.get(&id) {
                    for inp in &n.inputs {
                        if plan.nodes.contains_key(inp) {
                            match color[inp] {
                                Color::White => stack.push((*inp, false)),
                                Color::Grey => cycle = true,
                                Color::Black => {}
                            }
                        }
                    }
                }
            }
        }
        if cycle {
            report.push(None, "cycle detected");
        }
    }

    for node in plan.nodes.values() {
        let expected_inputs = if matches!(node.op, Operator::Source) { 0 } else { 1 };
        if node.inputs.len() != expected_inputs {
            report.push(
                Some(node.id),
                format!("{} expects {} input(s), has {}", node.op.tag(), expected_inputs, node.inputs.len()),
            );
        }
        for inp in &node.inputs {
            if !plan.nodes.contains_key(inp) {
                report.push(Some(node.id), format!("input {inp} missing from node set"));
            }
        }
        match &node.op {
            Operator::Skip { amount, .. } => {
                if *amount < 0 {
                    report.push(Some(node.id), "negative skip amount");
                }
            }
            Operator::Downscale { factor } => {
                if *factor < 1 {
                    report.push(Some(node.id), "downscale factor must be >= 1");
                }
            }
            Operator::Crop { region } => {
                if let CropSpec::Symbolic { fraction, .. } = region {
                    if !(*fraction > 0.0 && *fraction <= 1.0) {
                        report.push(Some(node.id), format!("crop fraction {fraction} outside (0,1]"));
                    }
                }
            }
            Operator::Filter { predicate } => {
                check_predicate(predicate, &mut report, node.id);
                if let Some(attr) = first_unbound_attribute(plan, node.id) {
                    report.push(Some(node.id), format!("unbound attribute {attr}"));
                }
            }
            Operator::Aggregate { fn_, k, .. } => {
                if matches!(fn_, super::AggregateFn::TopK) && k.is_none() {
                    report.push(Some(node.id), "top_k aggregate requires k");
                }
                if let Some(attr) = first_unbound_attribute(plan, node.id) {
                    report.push(Some(node.id), format!("unbound attribute {attr}"));
                }
            }
            _ => {}
        }
    }

    report
}
