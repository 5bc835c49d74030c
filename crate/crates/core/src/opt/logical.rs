//! Logical optimization: relational-style rewrites over multimodal plans.
//!
//! Three rules, applied in a fixed order by [`apply_logical`]:
//! 1. conjunctive filters split into per-conjunct filters placed right after
//!    the extraction producing their attribute (exact);
//! 2. a cheap raw-pixel pre-filter derived from color predicates and pushed
//!    ahead of every extraction, with the exact filter retained downstream
//!    (conservative: it can only pass extra frames, never drop a match);
//! 3. crop commuted ahead of downscale (exact on block-aligned regions,
//!    conservative after outward rounding otherwise).

use crate::datagen::StreamEvent;
use crate::model::Catalog;
use crate::pixel::{color_fraction, ColorClass};
use crate::plan::{
    schema_at, validate_plan, CmpOp, CropSpec, Literal, NodeId, Operator, Plan, Predicate,
};

/// Calibration policy for the cheap pre-filter.
const SAFETY_MARGIN: f64 = 0.5;
const MIN_POSITIVES: usize = 20;
const USELESS_THRESHOLD: f64 = 0.005;

fn conjuncts(predicate: &Predicate) -> Vec<Predicate> {
    match predicate {
        Predicate::And { children } => {
            children.iter().flat_map(conjuncts).collect()
        }
        other => vec![other.clone()],
    }
}

/// The extract node producing every attribute `pred` references, when the
/// references resolve to a single extraction.
fn producing_extract(plan: &Plan, pred: &Predicate) -> Option<NodeId> {
    let attrs = pred.referenced_attributes();
    let mut producer = None;
    for node in plan.extract_nodes() {
        if let Operator::Extract { task, .. } = node.op {
            let outputs = crate::plan::schema::task_outputs(task);
            for attr in &attrs {
                if outputs.iter().any(|(name, _)| name == attr) {
                    producer = match producer {
                        None => Some(node.id),
                        // Later producer wins: the filter must sit after all
                        // extracts it reads from.
                        Some(_) => Some(node.id),
                    };
                }
            }
        }
    }
    producer
}

/// Per-conjunct evaluation cost: the bound latency of the extraction that
/// produces the conjunct's attribute.
fn conjunct_cost(plan: &Plan, catalog: &Catalog, pred: &Predicate) -> f64 {
    let Some(producer) = producing_extract(plan, pred) else {
        return 0.0;
    };
    match &plan.nodes[&producer].op {
        Operator::Extract { task, model_slot } => {
            let model = if model_slot == "auto" {
                catalog.most_accurate(*task).ok()
            } else {
                catalog.get(model_slot)
            };
            model.map(|m| m.latency_ms).unwrap_or(0.0)
        }
        _ => 0.0,
    }
}

/// Splits every conjunctive filter, pushing each conjunct to sit immediately
/// after the extraction producing its attribute. Pure conjunction
/// reordering: exact.
pub fn split_conjunctive_filter(plan: &Plan, catalog: &Catalog) -> Plan {
    let mut current = plan.clone();
    loop {
        let target = current.topo_order().into_iter().find_map(|id| {
            match &current.nodes.get(&id)?.op {
                Operator::Filter { predicate: Predicate::And { .. } } => Some(id),
                _ => None,
            }
        });
        let Some(filter_id) = target else {
            break;
        };
        let Operator::Filter { predicate } = current.nodes[&filter_id].op.clone() else {
            unreachable!()
        };
        let mut parts = conjuncts(&predicate);
        parts.sort_by(|a, b| {
            conjunct_cost(&current, catalog, a)
                .partial_cmp(&conjunct_cost(&current, catalog, b))
                .unwrap_or(std::cmp::Ordering::Equal)
        });

        // Drop the conjunctive filter, then insert each part after its
        // producer (falling back to the original position).
        let original_position_consumer =
            current.consumers().get(&filter_id).and_then(|c| c.first().copied());
        let Ok(mut next) = current.remove_node(filter_id) else {
            break;
        };
        for part in parts {
            let insert_before = producing_extract(&next, &part)
                .and_then(|producer| {
                    next.consumers().get(&producer).and_then(|c| c.first().copied())
                })
                .or(original_position_consumer);
            let Some(before) = insert_before else {
                continue;
            };
            match next.insert_before(Operator::Filter { predicate: part }, before) {
                Ok(updated) => next = updated,
                Err(_) => continue,
            }
        }
        current = next.renumbered();
    }
    current
}

/// Calibrates a raw-pixel pre-filter from a color-equality predicate.
///
/// The threshold is half the smallest color fraction observed on sample
/// frames whose ground truth satisfies the predicate, so the filter cannot
/// drop a true match from the sample. Returns None when positives are
/// scarce or the threshold lands below the usefulness floor.
pub fn derive_cheap_filter(
    predicate: &Predicate,
    sample: &[StreamEvent],
) -> Option<(Predicate, f64)> {
    let color_literal = conjuncts(predicate).into_iter().find_map(|c| match c {
        Predicate::Comparison { attribute, op: CmpOp::Eq, value: Literal::Label(label) }
            if attribute == "color" && label != "none" =>
        {
            Some(label)
        }
        _ => None,
    })?;
    let class = match color_literal.as_str() {
        "red" => ColorClass::Red,
        "blue" => ColorClass::Blue,
        // No pixel classifier for achromatic colors.
        _ => return None,
    };

    let positives: Vec<&StreamEvent> = sample
        .iter()
        .filter(|ev| {
            ev.truth.car_present && ev.truth.color.as_deref() == Some(color_literal.as_str())
        })
        .collect();
    if positives.len() < MIN_POSITIVES {
        return None;
    }
    let min_fraction = positives
        .iter()
        .map(|ev| color_fraction(&ev.frame, class))
        .fold(f64::INFINITY, f64::min);
    let threshold = SAFETY_MARGIN * min_fraction;
    if threshold < USELESS_THRESHOLD {
        return None;
    }
    Some((Predicate::PixelFractionGe { color_class: class, threshold }, threshold))
}

/// First node that consumes pixels (reduction op, pixel filter, or extract);
/// the cheap pre-filter must run before all of them, on raw frames, where
/// its calibration was measured.
fn first_pixel_consumer(plan: &Plan) -> Option<NodeId> {
    plan.topo_order().into_iter().find(|id| {
        matches!(
            plan.nodes[id].op,
            Operator::Crop { .. }
                | Operator::Downscale { .. }
                | Operator::Greyscale
                | Operator::Extract { .. }
                | Operator::Filter {
                    predicate: Predicate::PixelFractionGe { .. }
                }
        )
    })
}

fn has_pixel_filter(plan: &Plan, class: ColorClass) -> bool {
    plan.nodes.values().any(|n| {
        matches!(&n.op, Operator::Filter { predicate: Predicate::PixelFractionGe { color_class, .. } }
            if *color_class == class)
    })
}

/// Commutes adjacent Downscale(b) -> Crop(R) pairs into
/// Crop(R*b) -> Downscale(b). Regions written by a downscaled consumer are
/// block-aligned after scaling, so the rewrite is exact; symbolic fractions
/// commute unchanged.
pub fn rule_crop_before_downscale(plan: &Plan) -> Plan {
    let mut current = plan.clone();
    loop {
        let mut rewrite = None;
        for node in current.nodes.values() {
            if let Operator::Downscale { factor } = node.op {
                if let Some(consumers) = current.consumers().get(&node.id) {
                    for c in consumers {
                        if let Operator::Crop { region } = &current.nodes[c].op {
                            rewrite = Some((node.id, *c, factor, *region));
                            break;
                        }
                    }
                }
            }
            if rewrite.is_some() {
                break;
            }
        }
        let Some((down_id, crop_id, factor, region)) = rewrite else {
            break;
        };
        let scaled = match region {
            CropSpec::Rect { region } => CropSpec::Rect { region: region.scaled(factor) },
            symbolic @ CropSpec::Symbolic { .. } => symbolic,
        };
        let mut next = current.clone();
        next.nodes.get_mut(&down_id).unwrap().op = Operator::Crop { region: scaled };
        next.nodes.get_mut(&crop_id).unwrap().op = Operator::Downscale { factor };
        current = next;
    }
    current
}

/// The logical phase: split conjunctive filters, derive and push down a
/// cheap pre-filter, and commute crop ahead of downscale. Idempotent.
pub fn apply_logical(plan: &Plan, sample: &[StreamEvent], catalog: &Catalog) -> Plan {
    let mut current = split_conjunctive_filter(plan, catalog);

    // Conservative cascade: the cheap filter screens frames ahead of every
    // extraction; the exact attribute filters stay downstream.
    let predicates: Vec<Predicate> = current.predicates().into_iter().cloned().collect();
    for predicate in predicates {
        if let Some((cheap, threshold)) = derive_cheap_filter(&predicate, sample) {
            let class = match &cheap {
                Predicate::PixelFractionGe { color_class, .. } => *color_class,
                _ => unreachable!(),
            };
            if has_pixel_filter(&current, class) {
                continue;
            }
            if let Some(before) = first_pixel_consumer(&current) {
                if let Ok(next) = current.insert_before(Operator::Filter { predicate: cheap }, before)
                {
                    current = next.renumbered();
                    current.metadata.rewrite_notes.push(format!(
                        "cheap_filter(conservative,threshold={threshold:.4})"
                    ));
                }
            }
        }
    }

    let mut result = rule_crop_before_downscale(&current);
    if result != *plan && !result.metadata.rewrite_notes.iter().any(|n| n == "logical") {
        result.metadata.rewrite_notes.push("logical".into());
    }
    debug_assert!(validate_plan(&result).is_valid());
    result.renumbered()
}

/// Sink-schema attribute names of a plan; projections onto the naive plan's
/// set strip optimizer-added auxiliary attributes when comparing outputs.
pub fn query_output_attributes(plan: &Plan) -> Vec<String> {
    schema_at(plan, plan.root)
        .map(|s| s.attributes.into_iter().map(|(n, _)| n).collect())
        .unwrap_or_default()
}
