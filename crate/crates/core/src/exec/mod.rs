//! Plan compilation and push-based execution under a simulated clock.
//!
//! Every operator charges its configured latency to an integer microsecond
//! clock; wall time never enters the books, so throughput ratios are
//! hardware-independent. Frames dropped by the skip gate are never decoded
//! and charge nothing.

mod accuracy;

pub use accuracy::{project_outputs, query_accuracy, truth_rows};

use crate::datagen::{EventStream, GroundTruth, StreamMeta};
use crate::model::{infer, Catalog, Extraction, ModelSpec};
use crate::pixel::{color_fraction, crop, downscale, greyscale, Frame, Region};
use crate::plan::{
    validate_plan, AggregateFn, CmpOp, ExtractTask, Literal, NodeId, Operator, Plan, Predicate,
    WindowSpec,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("plan invalid:\n{0}")]
    InvalidPlan(String),
    #[error("model slot {slot} unresolvable for task {task:?}")]
    UnresolvableModel { slot: String, task: ExtractTask },
    #[error("{0}")]
    Model(#[from] crate::model::ModelError),
    #[error("crop region {0:?} out of bounds for {1}x{2} input")]
    BadCrop(Region, u32, u32),
    #[error("downscale factor {0} does not divide {1}x{2}")]
    BadDownscale(u32, u32, u32),
    #[error("unsupported plan shape: {0}")]
    Unsupported(String),
}

/// Cost-model knobs. Values are simulation calibration, configurable from
/// the benchmark config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExecConfig {
    /// Transport cost charged for every ingested frame, skipped or not, in
    /// any plan that inspects frames. Plans that never look at pixels drop
    /// frames at the source and pay nothing.
    pub ingest_ms: f64,
    /// Charged once per admitted frame when the pipeline first touches its
    /// pixels. Frames dropped by the skip gate are never decoded.
    pub decode_ms: f64,
    /// Flat charge for Crop, Downscale, Greyscale, and pixel-fraction
    /// filters.
    pub cheap_op_ms: f64,
    /// Latency multiplier for the second and later invocations of the same
    /// model on one frame (the input is already encoded).
    pub followup_factor: f64,
    /// Inference latency scales with (current pixels / source pixels)^alpha.
    pub alpha: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            ingest_ms: 5.0,
            decode_ms: 35.0,
            cheap_op_ms: 0.2,
            followup_factor: 0.25,
            alpha: 0.5,
        }
    }
}

/// Attribute value carried by a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Boolean(bool),
    Number(f64),
    Label(String),
    Text(String),
    Bbox(Region),
}

impl Value {
    fn matches_literal(&self, op: CmpOp, lit: &Literal) -> bool {
        use std::cmp::Ordering;
        let ord = match (self, lit) {
            (Value::Boolean(a), Literal::Boolean(b)) => a.partial_cmp(b),
            (Value::Number(a), Literal::Number(b)) => a.partial_cmp(b),
            (Value::Label(a), Literal::Label(b)) => Some(a.as_str().cmp(b.as_str())),
            (Value::Text(a), Literal::Text(b)) => Some(a.as_str().cmp(b.as_str())),
            _ => None,
        };
        let Some(ord) = ord else {
            return false;
        };
        match op {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }
    }
}

pub type Row = BTreeMap<String, Value>;

/// One query result: a row emitted by the sink (notifications) or by a
/// window aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEvent {
    pub frame_id: u64,
    pub event_time_ms: u64,
    pub row: Row,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunMetrics {
    pub frames_ingested: u64,
    pub frames_skipped: u64,
    pub frames_fully_processed: u64,
    pub simulated_us: u64,
    pub fps: f64,
    pub outputs: u64,
    /// Per-node charged microseconds; decode time is attributed to the
    /// Source node.
    pub per_operator_us: BTreeMap<NodeId, u64>,
    /// Per-node count of frames that reached the operator.
    pub reach: BTreeMap<NodeId, u64>,
}

impl RunMetrics {
    pub fn simulated_ms(&self) -> f64 {
        self.simulated_us as f64 / 1000.0
    }

    pub fn ms_per_frame(&self) -> f64 {
        if self.frames_ingested == 0 {
            0.0
        } else {
            self.simulated_ms() / self.frames_ingested as f64
        }
    }
}

#[derive(Debug, Clone)]
enum Stage {
    Source { node: NodeId },
    // Admission parameters live on Pipeline::skip; the stage only marks the
    // node for reach accounting.
    Skip { node: NodeId },
    Crop { node: NodeId, region: Region },
    Downscale { node: NodeId, factor: u32 },
    Greyscale { node: NodeId },
    Extract { node: NodeId, task: ExtractTask, model: ModelSpec },
    Filter { node: NodeId, predicate: Predicate },
    Window { node: NodeId, spec: WindowSpec },
    Aggregate { node: NodeId, fn_: AggregateFn, group_by: Vec<String>, k: usize },
    Sink { node: NodeId },
}

impl Stage {
    fn node(&self) -> NodeId {
        match self {
            Stage::Source { node }
            | Stage::Skip { node }
            | Stage::Crop { node, .. }
            | Stage::Downscale { node, .. }
            | Stage::Greyscale { node }
            | Stage::Extract { node, .. }
            | Stage::Filter { node, .. }
            | Stage::Window { node, .. }
            | Stage::Aggregate { node, .. }
            | Stage::Sink { node } => *node,
        }
    }
}

/// A plan compiled against a catalog: resolved regions, bound models,
/// admission gate parameters, and window state.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub plan: Plan,
    stages: Vec<Stage>,
    source_node: NodeId,
    skip: Option<(u64, String)>,
    source_pixels: u64,
    /// Whether any operator inspects frame pixels; plans that never do
    /// neither transport nor decode frames.
    touches_pixels: bool,
    exec: ExecConfig,
}

impl Pipeline {
    /// Model bound to each Extract node.
    pub fn bindings(&self) -> BTreeMap<NodeId, &ModelSpec> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                Stage::Extract { node, model, .. } => Some((*node, model)),
                _ => None,
            })
            .collect()
    }
}

pub fn compile(
    plan: &Plan,
    catalog: &Catalog,
    exec: &ExecConfig,
    meta: &StreamMeta,
) -> Result<Pipeline, ExecError> {
    let report = validate_plan(plan);
    if !report.is_valid() {
        return Err(ExecError::InvalidPlan(report.to_string()));
    }

    let order = plan.topo_order();
    let mut stages = Vec::with_capacity(order.len());
    let mut skip = None;
    let mut source_node = 0;
    let (mut w, mut h) = (meta.width, meta.height);

    for id in order {
        let node = &plan.nodes[&id];
        let stage = match &node.op {
            Operator::Source => {
                source_node = id;
                Stage::Source { node: id }
            }
            Operator::Skip { amount, condition } => {
                let amount = (*amount).max(0) as u64;
                if skip.is_some() {
                    return Err(ExecError::Unsupported("multiple Skip operators".into()));
                }
                skip = Some((amount, condition.clone()));
                Stage::Skip { node: id }
            }
            Operator::Crop { region } => {
                let resolved = region.resolve(w, h);
                if !resolved.is_valid_within(w, h) {
                    return Err(ExecError::BadCrop(resolved, w, h));
                }
                w = resolved.width();
                h = resolved.height();
                Stage::Crop { node: id, region: resolved }
            }
            Operator::Downscale { factor } => {
                if *factor == 0 || w % factor != 0 || h % factor != 0 {
                    return Err(ExecError::BadDownscale(*factor, w, h));
                }
                w /= factor;
                h /= factor;
                Stage::Downscale { node: id, factor: *factor }
            }
            Operator::Greyscale => Stage::Greyscale { node: id },
            Operator::Extract { task, model_slot } => {
                let model = if model_slot == "auto" {
                    catalog.most_accurate(*task)?
                } else {
                    catalog
                        .get(model_slot)
                        .ok_or_else(|| ExecError::UnresolvableModel {
                            slot: model_slot.clone(),
                            task: *task,
                        })?
                };
                if !model.task.supports(*task) {
                    return Err(ExecError::UnresolvableModel {
                        slot: model_slot.clone(),
                        task: *task,
                    });
                }
                Stage::Extract { node: id, task: *task, model: model.clone() }
            }
            Operator::Filter { predicate } => {
                Stage::Filter { node: id, predicate: predicate.clone() }
            }
            Operator::Window { window } => Stage::Window { node: id, spec: *window },
            Operator::Aggregate { fn_, group_by, k } => Stage::Aggregate {
                node: id,
                fn_: *fn_,
                group_by: group_by.clone(),
                k: k.unwrap_or(1) as usize,
            },
            Operator::Sink => Stage::Sink { node: id },
        };
        stages.push(stage);
    }

    let touches_pixels = stages.iter().any(|s| {
        matches!(
            s,
            Stage::Crop { .. }
                | Stage::Downscale { .. }
                | Stage::Greyscale { .. }
                | Stage::Extract { .. }
                | Stage::Filter { predicate: Predicate::PixelFractionGe { .. }, .. }
        )
    });
    Ok(Pipeline {
        plan: plan.clone(),
        stages,
        source_node,
        skip,
        source_pixels: meta.width as u64 * meta.height as u64,
        touches_pixels,
        exec: exec.clone(),
    })
}

/// Evidence the admission gate uses to evaluate its condition after each
/// processed frame.
#[derive(Debug, Clone, Default)]
struct FrameEvidence {
    /// Some(visible) when an object detection ran on this frame.
    car_visible: Option<bool>,
    /// Action multiset when an action extraction ran.
    actions: Option<Vec<(u32, String)>>,
    /// The frame was dropped by a filter before any detection evidence
    /// existed; for the admission gate that means no relevant object.
    dropped_before_detection: bool,
}

struct WindowState {
    spec: WindowSpec,
    current: Option<u64>,
    rows: Vec<Row>,
}

fn window_index(spec: WindowSpec, frame_id: u64, event_time_ms: u64) -> u64 {
    match spec {
        WindowSpec::TumblingMillis { size_ms } => event_time_ms / size_ms.max(1),
        WindowSpec::TumblingFrames { size } => frame_id / size.max(1),
    }
}

fn window_start_ms(spec: WindowSpec, index: u64, fps: f64) -> u64 {
    match spec {
        WindowSpec::TumblingMillis { size_ms } => index * size_ms,
        WindowSpec::TumblingFrames { size } => {
            (index * size * 1000) / fps.round().max(1.0) as u64
        }
    }
}

/// Window aggregation shared with the ground-truth oracle: the emitted rows
/// for a closed window, sorted for determinism.
pub fn aggregate_rows(
    fn_: AggregateFn,
    group_by: &[String],
    k: usize,
    rows: &[Row],
) -> Vec<Row> {
    if rows.is_empty() {
        return Vec::new();
    }
    let key_of = |row: &Row| -> Vec<String> {
        group_by
            .iter()
            .map(|g| match row.get(g) {
                Some(Value::Label(s)) => s.clone(),
                Some(Value::Text(s)) => s.clone(),
                Some(Value::Number(n)) => format!("{n}"),
                Some(Value::Boolean(b)) => format!("{b}"),
                Some(Value::Bbox(_)) | None => String::new(),
            })
            .collect()
    };
    match fn_ {
        AggregateFn::Count => {
            let mut row = Row::new();
            row.insert("count".into(), Value::Number(rows.len() as f64));
            vec![row]
        }
        AggregateFn::DistinctCount => {
            let distinct: BTreeSet<Vec<String>> = rows.iter().map(key_of).collect();
            let mut row = Row::new();
            row.insert("distinct_count".into(), Value::Number(distinct.len() as f64));
            vec![row]
        }
        AggregateFn::GroupCountArgmax | AggregateFn::TopK => {
            let mut counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
            for row in rows {
                *counts.entry(key_of(row)).or_default() += 1;
            }
            let mut entries: Vec<(Vec<String>, u64)> = counts.into_iter().collect();
            // Highest count first; ties broken by lexicographic key order.
            entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let take = if matches!(fn_, AggregateFn::GroupCountArgmax) { 1 } else { k };
            entries
                .into_iter()
                .take(take)
                .map(|(key, count)| {
                    let mut row = Row::new();
                    for (g, v) in group_by.iter().zip(key) {
                        row.insert(g.clone(), Value::Label(v));
                    }
                    row.insert("count".into(), Value::Number(count as f64));
                    row
                })
                .collect()
        }
    }
}

struct Clock {
    total_us: u64,
    per_node: BTreeMap<NodeId, u64>,
}

impl Clock {
    fn charge_ms(&mut self, node: NodeId, ms: f64) {
        let us = (ms * 1000.0).round() as u64;
        self.total_us += us;
        *self.per_node.entry(node).or_default() += us;
    }
}

/// Runs the pipeline over up to `max_frames` events. `stream_seed` feeds the
/// per-frame mock-inference generators, so paired runs with equal seeds see
/// identical model errors.
pub fn run(
    pipeline: &Pipeline,
    stream: &mut dyn EventStream,
    max_frames: u64,
    stream_seed: u64,
) -> (Vec<OutputEvent>, RunMetrics) {
    let meta = stream.meta().clone();
    let exec = pipeline.exec.clone();
    let mut clock = Clock { total_us: 0, per_node: BTreeMap::new() };
    let mut outputs: Vec<OutputEvent> = Vec::new();
    let mut metrics = RunMetrics::default();

    let mut skip_remaining: u64 = 0;
    let mut prev_evidence: Option<FrameEvidence> = None;
    let mut last_actions: Option<Vec<(u32, String)>> = None;

    // Window state per (window node, aggregate node) pair.
    let mut window: Option<WindowState> = None;
    let mut agg_params: Option<(NodeId, AggregateFn, Vec<String>, usize)> = None;
    for stage in &pipeline.stages {
        match stage {
            Stage::Window { spec, .. } => {
                window = Some(WindowState { spec: *spec, current: None, rows: Vec::new() })
            }
            Stage::Aggregate { node, fn_, group_by, k } => {
                agg_params = Some((*node, *fn_, group_by.clone(), *k))
            }
            _ => {}
        }
    }

    let condition_holds = |condition: &str,
                           evidence: &FrameEvidence,
                           last_actions: &Option<Vec<(u32, String)>>|
     -> bool {
        match condition {
            "no_car" => match evidence.car_visible {
                Some(visible) => !visible,
                None => evidence.dropped_before_detection,
            },
            "no_action_change" => match (&evidence.actions, last_actions) {
                (Some(current), Some(previous)) => current == previous,
                _ => false,
            },
            _ => false,
        }
    };

    let flush_window = |state: &mut WindowState,
                            outputs: &mut Vec<OutputEvent>,
                            agg: &Option<(NodeId, AggregateFn, Vec<String>, usize)>| {
        let Some(index) = state.current else {
            return;
        };
        if let Some((_, fn_, group_by, k)) = agg {
            let rows = aggregate_rows(*fn_, group_by, *k, &state.rows);
            let start_ms = window_start_ms(state.spec, index, meta.fps);
            for row in rows {
                outputs.push(OutputEvent { frame_id: index, event_time_ms: start_ms, row });
            }
        }
        state.rows.clear();
        state.current = None;
    };

    let mut processed: u64 = 0;
    while processed < max_frames {
        let Some(event) = stream.next() else {
            break;
        };
        processed += 1;
        metrics.frames_ingested += 1;
        if pipeline.touches_pixels {
            clock.charge_ms(pipeline.source_node, exec.ingest_ms);
        }

        // Admission gate: skip windows drop frames before decode.
        if skip_remaining > 0 {
            skip_remaining -= 1;
            metrics.frames_skipped += 1;
            continue;
        }

        let frame_id = event.frame.frame_id;
        let event_time_ms = event.frame.event_time_ms;
        let mut frame: Frame = event.frame;
        let truth: GroundTruth = event.truth;
        let mut decoded = false;
        let mut invoked: BTreeSet<String> = BTreeSet::new();
        let mut rows: Vec<Row> = vec![Row::new()];
        let mut evidence = FrameEvidence::default();
        let mut dropped = false;

        for stage in &pipeline.stages {
            if dropped {
                break;
            }
            let node = stage.node();
            *metrics.reach.entry(node).or_default() += 1;
            match stage {
                Stage::Source { .. } | Stage::Skip { .. } => {}
                Stage::Crop { node, region } => {
                    if !decoded {
                        clock.charge_ms(pipeline.source_node, exec.decode_ms);
                        decoded = true;
                    }
                    clock.charge_ms(*node, exec.cheap_op_ms);
                    frame = crop(&frame, *region).expect("region checked at compile time");
                }
                Stage::Downscale { node, factor } => {
                    if !decoded {
                        clock.charge_ms(pipeline.source_node, exec.decode_ms);
                        decoded = true;
                    }
                    clock.charge_ms(*node, exec.cheap_op_ms);
                    frame = downscale(&frame, *factor).expect("factor checked at compile time");
                }
                Stage::Greyscale { node } => {
                    if !decoded {
                        clock.charge_ms(pipeline.source_node, exec.decode_ms);
                        decoded = true;
                    }
                    clock.charge_ms(*node, exec.cheap_op_ms);
                    frame = greyscale(&frame);
                }
                Stage::Extract { node, task, model } => {
                    if !decoded {
                        clock.charge_ms(pipeline.source_node, exec.decode_ms);
                        decoded = true;
                    }
                    let scale = (frame.pixel_count() as f64 / pipeline.source_pixels as f64)
                        .powf(exec.alpha);
                    let followup =
                        if invoked.contains(&model.name) { exec.followup_factor } else { 1.0 };
                    clock.charge_ms(*node, model.latency_ms * scale * followup);
                    invoked.insert(model.name.clone());

                    let extraction = infer(model, *task, &truth, frame_id, stream_seed)
                        .expect("binding checked at compile time");
                    apply_extraction(&mut rows, &extraction, &mut evidence);
                }
                Stage::Filter { node, predicate } => {
                    let frame_pass = eval_frame_predicate(
                        predicate,
                        &frame,
                        &mut decoded,
                        &mut clock,
                        pipeline.source_node,
                        *node,
                        &exec,
                    );
                    if !frame_pass {
                        rows.clear();
                    } else {
                        rows.retain(|row| eval_row_predicate(predicate, row));
                    }
                    if rows.is_empty() {
                        dropped = true;
                        if evidence.car_visible.is_none() {
                            evidence.dropped_before_detection = true;
                        }
                    }
                }
                Stage::Window { .. } => {
                    let state = window.as_mut().expect("window state initialized");
                    let idx = window_index(state.spec, frame_id, event_time_ms);
                    if state.current.is_some() && state.current != Some(idx) {
                        flush_window(state, &mut outputs, &agg_params);
                    }
                    state.current = Some(idx);
                    state.rows.append(&mut rows.clone());
                    // Rows are consumed by the window.
                    rows.clear();
                }
                Stage::Aggregate { .. } => {}
                Stage::Sink { .. } => {
                    for row in &rows {
                        outputs.push(OutputEvent {
                            frame_id,
                            event_time_ms,
                            row: row.clone(),
                        });
                    }
                }
            }
        }

        if !dropped {
            metrics.frames_fully_processed += 1;
        }

        // Arm the skip gate from this frame's evidence.
        if let Some((amount, condition)) = &pipeline.skip {
            if *amount > 0 && condition_holds(condition, &evidence, &last_actions) {
                skip_remaining = *amount;
            }
        }
        if let Some(actions) = evidence.actions.clone() {
            last_actions = Some(actions);
        }
        prev_evidence = Some(evidence);
    }
    let _ = prev_evidence;

    if let Some(state) = window.as_mut() {
        flush_window(state, &mut outputs, &agg_params);
    }

    metrics.simulated_us = clock.total_us;
    metrics.per_operator_us = clock.per_node;
    metrics.outputs = outputs.len() as u64;
    metrics.fps = metrics.frames_ingested as f64 / (clock.total_us.max(1) as f64 / 1e6);
    (outputs, metrics)
}

fn apply_extraction(rows: &mut Vec<Row>, extraction: &Extraction, evidence: &mut FrameEvidence) {
    match extraction {
        Extraction::ObjectDetection { car_visible, car_present, bbox, brand } => {
            evidence.car_visible = Some(*car_visible);
            for row in rows.iter_mut() {
                row.insert("car_visible".into(), Value::Boolean(*car_visible));
                row.insert("car_present".into(), Value::Boolean(*car_present));
                if let Some(b) = bbox {
                    row.insert("bbox".into(), Value::Bbox(*b));
                }
                row.insert(
                    "brand".into(),
                    Value::Label(brand.clone().unwrap_or_else(|| "none".into())),
                );
            }
        }
        Extraction::ColorRecognition { color } => {
            for row in rows.iter_mut() {
                row.insert("color".into(), Value::Label(color.clone()));
            }
        }
        Extraction::TextExtraction { plate } => {
            for row in rows.iter_mut() {
                row.insert("plate".into(), Value::Text(plate.clone()));
            }
        }
        Extraction::ActionRecognition { players } => {
            evidence.actions =
                Some(players.iter().map(|p| (p.player_id, p.action.clone())).collect());
            // Fan out: one row per player, keeping upstream attributes.
            let base = rows.first().cloned().unwrap_or_default();
            *rows = players
                .iter()
                .map(|p| {
                    let mut row = base.clone();
                    row.insert("player_id".into(), Value::Number(p.player_id as f64));
                    row.insert("team".into(), Value::Label(p.team.clone()));
                    row.insert("action".into(), Value::Label(p.action.clone()));
                    row
                })
                .collect();
        }
    }
}

/// Frame-level predicate conjuncts (pixel fraction tests). Returns false when
/// the frame fails one of them.
fn eval_frame_predicate(
    predicate: &Predicate,
    frame: &Frame,
    decoded: &mut bool,
    clock: &mut Clock,
    source_node: NodeId,
    filter_node: NodeId,
    exec: &ExecConfig,
) -> bool {
    match predicate {
        Predicate::PixelFractionGe { color_class, threshold } => {
            if !*decoded {
                clock.charge_ms(source_node, exec.decode_ms);
                *decoded = true;
            }
            clock.charge_ms(filter_node, exec.cheap_op_ms);
            color_fraction(frame, *color_class) >= *threshold
        }
        Predicate::And { children } => children.iter().all(|c| {
            eval_frame_predicate(c, frame, decoded, clock, source_node, filter_node, exec)
        }),
        _ => true,
    }
}

/// Row-level predicate evaluation; pixel tests are handled at frame level
/// and treated as satisfied here.
fn eval_row_predicate(predicate: &Predicate, row: &Row) -> bool {
    match predicate {
        Predicate::Comparison { attribute, op, value } => {
            row.get(attribute).map(|v| v.matches_literal(*op, value)).unwrap_or(false)
        }
        Predicate::PrefixMatch { attribute, prefix } => match row.get(attribute) {
            Some(Value::Text(s)) | Some(Value::Label(s)) => s.starts_with(prefix.as_str()),
            _ => false,
        },
        Predicate::And { children } => children.iter().all(|c| eval_row_predicate(c, row)),
        Predicate::PixelFractionGe { .. } => true,
    }
}

/// Helper tying together compile + run for one-off executions.
pub fn compile_and_run(
    plan: &Plan,
    catalog: &Catalog,
    exec: &ExecConfig,
    stream: &mut dyn EventStream,
    max_frames: u64,
    stream_seed: u64,
) -> Result<(Vec<OutputEvent>, RunMetrics), ExecError> {
    let meta = stream.meta().clone();
    let pipeline = compile(plan, catalog, exec, &meta)?;
    Ok(run(&pipeline, stream, max_frames, stream_seed))
}
