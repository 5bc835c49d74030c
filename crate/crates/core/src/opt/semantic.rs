//! Semantic optimization: world-knowledge extraction, operator selection
//! from the reduction catalog, plan update, and the empirical validation /
//! refinement loop.

use super::reasoner::Reasoner;
use super::{OptContext, OptError};
use crate::datagen::{SampleSummary, StreamKind};
use crate::exec::{compile_and_run, query_accuracy};
use crate::plan::{
    validate_plan, CropAnchor, CropSpec, ExtractTask, NodeId, Operator, Plan, QueryId,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const REDUCTION_CATALOG: [&str; 4] = ["Skip", "Crop", "Downscale", "Greyscale"];

/// Fixed insertion order after Source (scripted mode).
pub const FIXED_INSERTION_ORDER: [&str; 4] = ["Skip", "Crop", "Downscale", "Greyscale"];

const EPSILON: f64 = 1e-9;
const MAX_REFINEMENTS: usize = 6;
const MIN_VALIDATION_FRAMES: usize = 300;

/// Minimum pixels an object must retain for each extraction task to stay
/// feasible after downscaling.
pub fn resolution_floor(task: ExtractTask) -> f64 {
    match task {
        ExtractTask::ObjectDetection => 1024.0,
        ExtractTask::ColorRecognition => 256.0,
        ExtractTask::TextExtraction => 2048.0,
        ExtractTask::ActionRecognition => 256.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialPrior {
    /// Region where query-relevant objects appear, when one exists.
    pub region: Option<CropSpec>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalPrior {
    pub fps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_max_kmh: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_entry_m: Option<f64>,
    /// Safe skip amount: frames guaranteed object-free after an empty frame.
    pub skip_bound: u32,
    /// Predicate name the skip gate evaluates.
    pub skip_condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relevance {
    pub color_needed: bool,
    pub text_needed: bool,
    /// Per-task minimum pixels-per-object for the plan's extractions.
    pub resolution_floor: BTreeMap<String, f64>,
}

/// Structured world knowledge feeding operator selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facts {
    /// (kind, properties) pairs for the entities the query tracks.
    pub entities: Vec<(String, Vec<String>)>,
    pub spatial_prior: SpatialPrior,
    pub temporal_prior: TemporalPrior,
    pub relevance: Relevance,
    pub empty_fraction: f64,
    /// Mean object footprint in pixels, from the sample.
    pub avg_object_pixels: f64,
}

/// A proposed reduction operator with its precondition verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOp {
    pub operator: Operator,
    pub precondition: String,
    pub rationale: String,
    pub accepted: bool,
}

/// N = floor(fps * d_entry / (v_max / 3.6)).
pub fn compute_skip_amount(fps: f64, v_max_kmh: f64, d_entry_m: f64) -> Result<u32, OptError> {
    if fps <= 0.0 {
        return Err(OptError::NonPositiveInput("fps"));
    }
    if v_max_kmh <= 0.0 {
        return Err(OptError::NonPositiveInput("v_max"));
    }
    if d_entry_m <= 0.0 {
        return Err(OptError::NonPositiveInput("d_entry"));
    }
    Ok((fps * d_entry_m / (v_max_kmh / 3.6)).floor() as u32)
}

/// Phase 1, scripted: derive facts mechanically from the query plan and the
/// stream sample.
pub fn extract_world_knowledge(plan: &Plan, summary: &SampleSummary) -> Result<Facts, OptError> {
    let tasks: Vec<ExtractTask> = plan
        .extract_nodes()
        .iter()
        .map(|n| match n.op {
            Operator::Extract { task, .. } => task,
            _ => unreachable!(),
        })
        .collect();

    let (skip_bound, skip_condition, v_max, d_entry, entities) = match summary.meta.kind {
        StreamKind::Vehicle { v_max_kmh, d_entry_m } => {
            let g = compute_skip_amount(summary.fps, v_max_kmh, d_entry_m)?;
            (
                g,
                "no_car".to_string(),
                Some(v_max_kmh),
                Some(d_entry_m),
                vec![(
                    "car".to_string(),
                    vec!["color".into(), "brand".into(), "plate".into(), "bounded_speed".into()],
                )],
            )
        }
        StreamKind::Action { min_action_frames } => (
            min_action_frames.saturating_sub(1),
            "no_action_change".to_string(),
            None,
            None,
            vec![("player".to_string(), vec!["team".into(), "action_persistence".into()])],
        ),
    };

    // Spatial prior: the bottom third carrying essentially all object mass
    // licenses a conservative bottom-half crop.
    let bottom_mass = summary.bbox_thirds[2];
    let region = if bottom_mass >= 0.99 && summary.bbox_min_row_frac >= 0.5 {
        Some(CropSpec::Symbolic { anchor: CropAnchor::Bottom, fraction: 0.5 })
    } else {
        None
    };

    let color_needed = tasks.contains(&ExtractTask::ColorRecognition)
        || plan.predicates().iter().any(|p| p.references_attribute("color"));
    let text_needed = tasks.contains(&ExtractTask::TextExtraction)
        || plan.predicates().iter().any(|p| p.references_attribute("plate"));

    let mut floors = BTreeMap::new();
    for task in &tasks {
        floors.insert(task.name().to_string(), resolution_floor(*task));
    }

    Ok(Facts {
        entities,
        spatial_prior: SpatialPrior { region, confidence: bottom_mass },
        temporal_prior: TemporalPrior {
            fps: summary.fps,
            v_max_kmh: v_max,
            d_entry_m: d_entry,
            skip_bound,
            skip_condition,
        },
        relevance: Relevance { color_needed, text_needed, resolution_floor: floors },
        empty_fraction: summary.empty_fraction,
        avg_object_pixels: summary.avg_object_pixels,
    })
}

/// Phase 2, scripted: evaluate each reduction operator's precondition over
/// the facts. Rejected candidates are returned with their failing
/// precondition.
pub fn select_operators(facts: &Facts, plan: &Plan, summary: &SampleSummary) -> Vec<CandidateOp> {
    let mut out = Vec::new();

    // Skip: cross-frame reasoning. Objects cannot appear instantaneously,
    // so G frames after an empty observation are safe to drop.
    let g = facts.temporal_prior.skip_bound;
    let per_object = !plan.extract_nodes().is_empty();
    let skip_accepted = g >= 1 && per_object;
    out.push(CandidateOp {
        operator: Operator::Skip {
            amount: g as i64,
            condition: facts.temporal_prior.skip_condition.clone(),
        },
        precondition: if !per_object {
            "extraction targets are per-object".into()
        } else {
            "G >= 1".into()
        },
        rationale: format!(
            "objects need at least {g} frames to enter the scene after an empty observation"
        ),
        accepted: skip_accepted,
    });

    // Crop: intra-frame spatial prior.
    let crop_accepted = facts.spatial_prior.confidence >= 0.99 && facts.spatial_prior.region.is_some();
    out.push(CandidateOp {
        operator: Operator::Crop {
            region: facts.spatial_prior.region.unwrap_or(CropSpec::Symbolic {
                anchor: CropAnchor::Bottom,
                fraction: 0.5,
            }),
        },
        precondition: "spatial_prior confidence >= 0.99".into(),
        rationale: format!(
            "objects occupy a stable region with confidence {:.3}",
            facts.spatial_prior.confidence
        ),
        accepted: crop_accepted,
    });

    // Downscale: largest factor keeping every needed extraction above its
    // resolution floor, and dividing the (possibly cropped) frame evenly.
    let (mut w, mut h) = (summary.width, summary.height);
    if crop_accepted {
        if let Some(region) = &facts.spatial_prior.region {
            let r = region.resolve(summary.width, summary.height);
            w = r.width();
            h = r.height();
        }
    }
    let mut chosen_b = None;
    'factors: for b in [4u32, 2] {
        if w % b != 0 || h % b != 0 {
            continue;
        }
        for floor in facts.relevance.resolution_floor.values() {
            let object_pixels_after = facts.avg_object_pixels / (b * b) as f64;
            if object_pixels_after < *floor {
                continue 'factors;
            }
        }
        chosen_b = Some(b);
        break;
    }
    out.push(CandidateOp {
        operator: Operator::Downscale { factor: chosen_b.unwrap_or(2) },
        precondition: "resolution_floor satisfied for every needed extraction".into(),
        rationale: match chosen_b {
            Some(b) => format!("objects keep >= the per-task pixel floor at factor {b}"),
            None => "any factor would drop a needed extraction below its pixel floor".into(),
        },
        accepted: chosen_b.is_some(),
    });

    // Greyscale: rejected whenever color carries query-relevant signal.
    out.push(CandidateOp {
        operator: Operator::Greyscale,
        precondition: "color_needed = false".into(),
        rationale: if facts.relevance.color_needed {
            "color cues are query-relevant; greyscale would destroy them".into()
        } else {
            "no predicate or extraction consumes color".into()
        },
        accepted: !facts.relevance.color_needed,
    });

    out
}

/// Phase 3: insert accepted candidates. Skip lands right after Source; Crop
/// before the first Extract; Downscale after Crop; Greyscale after
/// Downscale. A skip over the `no_car` condition needs detection evidence,
/// so plans lacking an object detector get one inserted ahead of their first
/// extraction. Candidates whose insertion breaks the schema are dropped with
/// a warning.
pub fn update_plan(
    plan: &Plan,
    candidates: &[CandidateOp],
    order: &[String],
    warnings: &mut Vec<String>,
) -> Plan {
    let mut current = plan.clone();
    let accepted: Vec<&CandidateOp> = candidates.iter().filter(|c| c.accepted).collect();
    if accepted.is_empty() {
        return current;
    }

    let mut ordered: Vec<&CandidateOp> = Vec::new();
    for tag in order {
        if let Some(c) = accepted.iter().find(|c| c.operator.tag() == tag.as_str()) {
            ordered.push(c);
        }
    }
    for c in &accepted {
        if !ordered.iter().any(|o| o.operator.tag() == c.operator.tag()) {
            ordered.push(c);
        }
    }

    for candidate in ordered {
        let target = match candidate.operator {
            Operator::Skip { .. } => current
                .source_id()
                .and_then(|s| current.consumers().get(&s).and_then(|c| c.first().copied())),
            _ => current.first_extract(),
        };
        let Some(target) = target else {
            warnings.push(format!(
                "no insertion point for {}; candidate dropped",
                candidate.operator.tag()
            ));
            continue;
        };
        match current.insert_before(candidate.operator.clone(), target) {
            Ok(next) => {
                let report = validate_plan(&next);
                if report.is_valid() {
                    current = next;
                } else {
                    warnings.push(format!(
                        "{} insertion invalidates plan ({report}); candidate dropped",
                        candidate.operator.tag()
                    ));
                }
            }
            Err(e) => {
                warnings.push(format!(
                    "{} insertion failed ({e}); candidate dropped",
                    candidate.operator.tag()
                ));
            }
        }
    }

    // The no_car condition is evaluated from detection evidence; give plans
    // without a detector one, placed after the reductions.
    let has_skip = current
        .nodes
        .values()
        .any(|n| matches!(&n.op, Operator::Skip { condition, .. } if condition == "no_car"));
    let has_detector = current.nodes.values().any(
        |n| matches!(n.op, Operator::Extract { task: ExtractTask::ObjectDetection, .. }),
    );
    if has_skip && !has_detector {
        if let Some(first_extract) = current.first_extract() {
            match current.insert_before(
                Operator::Extract {
                    task: ExtractTask::ObjectDetection,
                    model_slot: "auto".into(),
                },
                first_extract,
            ) {
                Ok(next) => current = next,
                Err(e) => warnings.push(format!("detector insertion failed ({e})")),
            }
        }
    }

    current.renumbered()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationResult {
    pub naive_accuracy: f64,
    pub optimized_accuracy: f64,
    pub relative_accuracy: f64,
    pub pass: bool,
    /// Set when the naive baseline scored ~zero; the verdict then compares
    /// the optimized plan against ground truth directly.
    pub baseline_degenerate: bool,
}

/// Runs both plans on the identical sample (same seeds pair the mock-model
/// errors) and compares query accuracy.
pub fn empirical_validate(
    naive_plan: &Plan,
    optimized_plan: &Plan,
    ctx: &OptContext,
    tau: f64,
) -> Result<ValidationResult, OptError> {
    if ctx.sample.len() < MIN_VALIDATION_FRAMES {
        return Err(OptError::SampleTooSmall {
            got: ctx.sample.len(),
            need: MIN_VALIDATION_FRAMES,
        });
    }
    let truths: Vec<_> = ctx.sample.iter().map(|e| e.truth.clone()).collect();
    let frames = ctx.sample.len() as u64;

    let mut naive_stream = ctx.replay();
    let (naive_outputs, _) = compile_and_run(
        naive_plan,
        &ctx.catalog,
        &ctx.exec,
        &mut naive_stream,
        frames,
        ctx.stream_seed,
    )?;
    let mut opt_stream = ctx.replay();
    let (opt_outputs, _) = compile_and_run(
        optimized_plan,
        &ctx.catalog,
        &ctx.exec,
        &mut opt_stream,
        frames,
        ctx.stream_seed,
    )?;

    let naive_accuracy =
        query_accuracy(ctx.query_id, naive_plan, &naive_outputs, &truths, ctx.meta.fps);
    let optimized_accuracy =
        query_accuracy(ctx.query_id, optimized_plan, &opt_outputs, &truths, ctx.meta.fps);

    let baseline_degenerate = naive_accuracy <= EPSILON;
    let relative_accuracy = optimized_accuracy / naive_accuracy.max(EPSILON);
    let pass = if baseline_degenerate {
        optimized_accuracy >= tau
    } else {
        relative_accuracy >= tau
    };
    Ok(ValidationResult {
        naive_accuracy,
        optimized_accuracy,
        relative_accuracy,
        pass,
        baseline_degenerate,
    })
}

fn skip_node(plan: &Plan) -> Option<(NodeId, i64)> {
    plan.nodes.values().find_map(|n| match &n.op {
        Operator::Skip { amount, .. } => Some((n.id, *amount)),
        _ => None,
    })
}

fn downscale_node(plan: &Plan) -> Option<(NodeId, u32)> {
    plan.nodes.values().find_map(|n| match n.op {
        Operator::Downscale { factor } => Some((n.id, factor)),
        _ => None,
    })
}

fn crop_node(plan: &Plan) -> Option<NodeId> {
    plan.nodes.values().find_map(|n| match n.op {
        Operator::Crop { .. } => Some(n.id),
        _ => None,
    })
}

/// One refinement step: halve Skip N, then step the downscale factor down,
/// then drop Crop. Returns None when nothing is left to relax.
fn refine_once(plan: &Plan, warnings: &mut Vec<String>) -> Option<Plan> {
    if let Some((id, amount)) = skip_node(plan) {
        if amount >= 2 {
            let mut next = plan.clone();
            if let Operator::Skip { amount: a, .. } = &mut next.nodes.get_mut(&id).unwrap().op {
                *a = amount / 2;
            }
            warnings.push(format!("refinement: skip amount {amount} -> {}", amount / 2));
            return Some(next);
        }
        if amount == 1 {
            warnings.push("refinement: skip removed".into());
            return plan.remove_node(id).ok();
        }
    }
    if let Some((id, factor)) = downscale_node(plan) {
        if factor > 2 {
            let mut next = plan.clone();
            if let Operator::Downscale { factor: f } = &mut next.nodes.get_mut(&id).unwrap().op {
                *f = factor / 2;
            }
            warnings.push(format!("refinement: downscale {factor} -> {}", factor / 2));
            return Some(next);
        }
        warnings.push("refinement: downscale removed".into());
        return plan.remove_node(id).ok();
    }
    if let Some(id) = crop_node(plan) {
        warnings.push("refinement: crop removed".into());
        return plan.remove_node(id).ok();
    }
    None
}

/// The full semantic phase: three reasoning phases, empirical validation,
/// and the self-correcting refinement loop. Falls back to the input plan
/// when every refinement fails.
pub fn semantic_optimize(
    plan: &Plan,
    reasoner: &dyn Reasoner,
    ctx: &OptContext,
    tau: f64,
    warnings: &mut Vec<String>,
) -> Result<Plan, OptError> {
    let description = plan.metadata.description.clone();
    let facts = reasoner.world_knowledge(&description, plan, &ctx.summary)?;
    let candidates = reasoner.operator_select(&description, plan, &ctx.summary, &facts)?;
    let accepted: Vec<CandidateOp> = candidates.iter().filter(|c| c.accepted).cloned().collect();
    let order = reasoner.plan_update_order(&description, plan, &facts, &accepted)?;
    warnings.extend(reasoner.take_warnings());

    let mut candidate_plan = update_plan(plan, &candidates, &order, warnings);
    if candidate_plan == *plan {
        return Ok(candidate_plan);
    }

    for _ in 0..=MAX_REFINEMENTS {
        let verdict = empirical_validate(plan, &candidate_plan, ctx, tau)?;
        if verdict.pass {
            return Ok(candidate_plan);
        }
        warnings.push(format!(
            "validation failed: relative accuracy {:.3} < {tau}",
            verdict.relative_accuracy
        ));
        match refine_once(&candidate_plan, warnings) {
            Some(next) => candidate_plan = next.renumbered(),
            None => break,
        }
    }
    warnings.push("all refinements failed; keeping the unoptimized plan".into());
    Ok(plan.clone())
}

/// Convenience: scripted semantic optimization of a query's naive plan.
pub fn semantic_optimize_scripted(
    ctx: &OptContext,
    warnings: &mut Vec<String>,
) -> Result<Plan, OptError> {
    let reasoner = super::reasoner::ScriptedReasoner;
    semantic_optimize(&ctx.naive_plan, &reasoner, ctx, ctx.tau, warnings)
}

/// True when `query` reads the toll-booth stream (vs. volleyball).
pub fn stream_is_vehicle(query: QueryId) -> bool {
    query.is_tollbooth()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{make_context, BenchConfig};
    use crate::datagen::TollBoothConfig;
    use crate::opt::reasoner::{Reasoner, ScriptedReasoner};
    use crate::plan::build_query;

    fn context(query: QueryId, seed: u64) -> super::super::OptContext {
        make_context(&BenchConfig::default(), query, seed).unwrap()
    }

    #[test]
    fn skip_amount_matches_worked_examples() {
        assert_eq!(compute_skip_amount(30.0, 30.0, 1.0).unwrap(), 3);
        assert_eq!(compute_skip_amount(30.0, 60.0, 1.0).unwrap(), 1);
        assert_eq!(compute_skip_amount(60.0, 30.0, 1.0).unwrap(), 7);
        assert!(compute_skip_amount(30.0, 0.0, 1.0).is_err());
        assert!(compute_skip_amount(0.0, 30.0, 1.0).is_err());
        assert!(compute_skip_amount(30.0, 30.0, 0.0).is_err());
    }

    #[test]
    fn q8_facts_carry_priors_and_relevance() {
        let ctx = context(QueryId::Q8, 42);
        let facts = extract_world_knowledge(&ctx.naive_plan, &ctx.summary).unwrap();
        assert_eq!(facts.temporal_prior.skip_bound, 3);
        assert_eq!(facts.temporal_prior.skip_condition, "no_car");
        assert!(facts.relevance.color_needed);
        assert!(facts.relevance.text_needed);
        assert!(facts.spatial_prior.confidence >= 0.99);
        assert_eq!(
            facts.spatial_prior.region,
            Some(CropSpec::Symbolic { anchor: CropAnchor::Bottom, fraction: 0.5 })
        );
        assert!(facts.empty_fraction > 0.5);
    }

    #[test]
    fn volleyball_facts_reject_color_and_crop() {
        let ctx = context(QueryId::Q10, 42);
        let facts = extract_world_knowledge(&ctx.naive_plan, &ctx.summary).unwrap();
        assert!(!facts.relevance.color_needed);
        assert!(!facts.relevance.text_needed);
        assert!(facts.spatial_prior.confidence < 0.99);
        assert_eq!(facts.temporal_prior.skip_condition, "no_action_change");
    }

    #[test]
    fn q8_candidate_set_matches_preconditions() {
        let ctx = context(QueryId::Q8, 42);
        let facts = extract_world_knowledge(&ctx.naive_plan, &ctx.summary).unwrap();
        let candidates = select_operators(&facts, &ctx.naive_plan, &ctx.summary);
        let by_tag = |tag: &str| candidates.iter().find(|c| c.operator.tag() == tag).unwrap();

        let skip = by_tag("Skip");
        assert!(skip.accepted);
        assert_eq!(
            skip.operator,
            Operator::Skip { amount: 3, condition: "no_car".into() }
        );
        assert!(by_tag("Crop").accepted);
        let down = by_tag("Downscale");
        assert!(down.accepted);
        assert_eq!(down.operator, Operator::Downscale { factor: 2 });
        let grey = by_tag("Greyscale");
        assert!(!grey.accepted);
        assert_eq!(grey.precondition, "color_needed = false");
    }

    #[test]
    fn greyscale_accepted_for_color_free_queries() {
        let ctx = context(QueryId::Q10, 42);
        let facts = extract_world_knowledge(&ctx.naive_plan, &ctx.summary).unwrap();
        let candidates = select_operators(&facts, &ctx.naive_plan, &ctx.summary);
        assert!(candidates
            .iter()
            .any(|c| c.operator == Operator::Greyscale && c.accepted));
    }

    #[test]
    fn zero_bound_rejects_skip() {
        let ctx = context(QueryId::Q8, 42);
        let mut facts = extract_world_knowledge(&ctx.naive_plan, &ctx.summary).unwrap();
        facts.temporal_prior.skip_bound = 0;
        let candidates = select_operators(&facts, &ctx.naive_plan, &ctx.summary);
        let skip = candidates.iter().find(|c| c.operator.tag() == "Skip").unwrap();
        assert!(!skip.accepted);
        assert_eq!(skip.precondition, "G >= 1");
    }

    #[test]
    fn update_plan_inserts_in_fixed_order() {
        let ctx = context(QueryId::Q8, 42);
        let facts = extract_world_knowledge(&ctx.naive_plan, &ctx.summary).unwrap();
        let candidates = select_operators(&facts, &ctx.naive_plan, &ctx.summary);
        let mut warnings = Vec::new();
        let order: Vec<String> =
            FIXED_INSERTION_ORDER.iter().map(|s| s.to_string()).collect();
        let plan = update_plan(&ctx.naive_plan, &candidates, &order, &mut warnings);
        let tags: Vec<&str> =
            plan.topo_order().iter().map(|id| plan.nodes[id].op.tag()).collect();
        assert_eq!(
            tags,
            vec![
                "Source", "Skip", "Crop", "Downscale", "Extract", "Extract", "Extract",
                "Filter", "Sink"
            ]
        );
        assert!(warnings.is_empty());
        assert!(crate::plan::validate_plan(&plan).is_valid());
    }

    #[test]
    fn update_plan_without_candidates_is_identity() {
        let ctx = context(QueryId::Q8, 42);
        let mut warnings = Vec::new();
        let plan = update_plan(&ctx.naive_plan, &[], &[], &mut warnings);
        assert_eq!(plan, ctx.naive_plan);
    }

    #[test]
    fn skip_only_inserts_right_after_source() {
        let ctx = context(QueryId::Q8, 42);
        let candidates = vec![CandidateOp {
            operator: Operator::Skip { amount: 3, condition: "no_car".into() },
            precondition: "G >= 1".into(),
            rationale: String::new(),
            accepted: true,
        }];
        let mut warnings = Vec::new();
        let plan = update_plan(&ctx.naive_plan, &candidates, &["Skip".into()], &mut warnings);
        let tags: Vec<&str> =
            plan.topo_order().iter().map(|id| plan.nodes[id].op.tag()).collect();
        assert_eq!(tags[..2], ["Source", "Skip"]);
        assert_eq!(tags.len(), ctx.naive_plan.nodes.len() + 1);
    }

    #[test]
    fn detector_inserted_when_skip_lacks_evidence_source() {
        let ctx = context(QueryId::Q6, 42);
        let facts = extract_world_knowledge(&ctx.naive_plan, &ctx.summary).unwrap();
        let candidates = select_operators(&facts, &ctx.naive_plan, &ctx.summary);
        let mut warnings = Vec::new();
        let order: Vec<String> =
            FIXED_INSERTION_ORDER.iter().map(|s| s.to_string()).collect();
        let plan = update_plan(&ctx.naive_plan, &candidates, &order, &mut warnings);
        let detectors = plan
            .extract_nodes()
            .iter()
            .filter(
                |n| matches!(n.op, Operator::Extract { task: ExtractTask::ObjectDetection, .. }),
            )
            .count();
        assert_eq!(detectors, 1);
    }

    #[test]
    fn vacuous_threshold_always_passes() {
        let ctx = context(QueryId::Q3, 42);
        let reasoner = ScriptedReasoner;
        let mut warnings = Vec::new();
        let facts = reasoner.world_knowledge("", &ctx.naive_plan, &ctx.summary).unwrap();
        let candidates =
            reasoner.operator_select("", &ctx.naive_plan, &ctx.summary, &facts).unwrap();
        let order: Vec<String> =
            FIXED_INSERTION_ORDER.iter().map(|s| s.to_string()).collect();
        let plan = update_plan(&ctx.naive_plan, &candidates, &order, &mut warnings);
        let verdict = empirical_validate(&ctx.naive_plan, &plan, &ctx, 0.0).unwrap();
        assert!(verdict.pass);
    }

    #[test]
    fn oversized_skip_fails_validation() {
        // Cars dwell 8..14 frames and are visible ~12..20; a 30-frame skip
        // swallows whole cars.
        let ctx = context(QueryId::Q3, 42);
        let unsafe_plan = ctx
            .naive_plan
            .insert_before(
                Operator::Skip { amount: 30, condition: "no_car".into() },
                ctx.naive_plan.consumers()[&ctx.naive_plan.source_id().unwrap()][0],
            )
            .unwrap();
        let verdict = empirical_validate(&ctx.naive_plan, &unsafe_plan, &ctx, 0.9).unwrap();
        assert!(verdict.relative_accuracy < 1.0);
        assert!(!verdict.pass, "relative accuracy {}", verdict.relative_accuracy);
    }

    #[test]
    fn small_sample_rejected() {
        let mut ctx = context(QueryId::Q3, 42);
        ctx.sample.truncate(100);
        let err = empirical_validate(&ctx.naive_plan, &ctx.naive_plan, &ctx, 0.9);
        assert!(matches!(err, Err(OptError::SampleTooSmall { .. })));
    }

    #[test]
    fn default_q8_passes_first_validation() {
        let ctx = context(QueryId::Q8, 42);
        let mut warnings = Vec::new();
        let plan =
            semantic_optimize(&ctx.naive_plan, &ScriptedReasoner, &ctx, 0.9, &mut warnings)
                .unwrap();
        let tags: Vec<&str> =
            plan.topo_order().iter().map(|id| plan.nodes[id].op.tag()).collect();
        assert_eq!(tags[..4], ["Source", "Skip", "Crop", "Downscale"]);
        assert!(!warnings.iter().any(|w| w.contains("refinement")), "{warnings:?}");
    }

    #[test]
    fn understated_metadata_triggers_self_correction() {
        // The true stream runs 60 km/h cars that dwell only 2 frames, but
        // the metadata presented to the optimizer claims 30 km/h. Skip(3)
        // can swallow whole cars; the validation loop must catch it and
        // converge to a safe smaller skip.
        let config = BenchConfig {
            tollbooth: TollBoothConfig {
                v_max_kmh: 60.0,
                dwell_frames_min: 2,
                dwell_frames_max: 2,
                approach_extra_max: 0,
                arrival_rate: 40.0,
                seed: 7,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut ctx = make_context(&config, QueryId::Q3, 7).unwrap();
        // Lie about the stream.
        ctx.meta.kind =
            crate::datagen::StreamKind::Vehicle { v_max_kmh: 30.0, d_entry_m: 1.0 };
        ctx.summary.meta = ctx.meta.clone();

        let mut warnings = Vec::new();
        let plan =
            semantic_optimize(&ctx.naive_plan, &ScriptedReasoner, &ctx, 0.9, &mut warnings)
                .unwrap();
        let refined: Vec<&String> =
            warnings.iter().filter(|w| w.contains("refinement")).collect();
        assert!(!refined.is_empty(), "expected a refinement, warnings: {warnings:?}");
        let skip_amount = plan.nodes.values().find_map(|n| match n.op {
            Operator::Skip { amount, .. } => Some(amount),
            _ => None,
        });
        assert_eq!(skip_amount, Some(1), "warnings: {warnings:?}");
        let verdict = empirical_validate(&ctx.naive_plan, &plan, &ctx, 0.9).unwrap();
        assert!(verdict.pass);
    }

    #[test]
    fn build_query_rejects_unknown_query() {
        assert!(build_query(QueryId::parse("Q7").unwrap(), &Default::default()).is_ok());
        assert!(QueryId::parse("Q14").is_err());
    }
}
