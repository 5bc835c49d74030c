//! Deterministic synthetic stream generators with ground-truth annotations.
//!
//! Annotations power mock inference and exact accuracy measurement; plan
//! operators never see them. The toll-booth generator maintains, by
//! construction, the inter-arrival guarantee that makes frame skipping safe.

mod tollbooth;
mod volleyball;

pub use tollbooth::{gen_tollbooth, TollBoothConfig, TollBoothStream};
pub use volleyball::{gen_volleyball, VolleyballConfig, VolleyballStream, ACTIONS};

use crate::pixel::{Frame, Region};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid stream config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-player annotation for volleyball frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerTruth {
    pub player_id: u32,
    pub team: String,
    pub action: String,
    pub bbox: Region,
}

/// Per-frame ground truth. Car attributes describe the car at the booth
/// (inside the detection zone); `car_visible` also covers the approach
/// phase, when the car is in frame but not yet at the booth.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub car_visible: bool,
    pub car_present: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<Region>,
    pub coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub players: Option<Vec<PlayerTruth>>,
}

#[derive(Debug, Clone)]
pub struct StreamEvent {
    pub frame: Frame,
    pub truth: GroundTruth,
}

/// Stream-level metadata available to the optimizer (world knowledge inputs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub kind: StreamKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamKind {
    /// Fixed camera watching vehicles; motion bounded by `v_max_kmh`.
    Vehicle { v_max_kmh: f64, d_entry_m: f64 },
    /// Moving camera watching agents whose actions persist for at least
    /// `min_action_frames` frames.
    Action { min_action_frames: u32 },
}

pub trait EventStream: Iterator<Item = StreamEvent> {
    fn meta(&self) -> &StreamMeta;
}

/// Statistics over a stream prefix, input to world-knowledge extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    /// Fraction of frames with no object present (no car at the booth / no
    /// players — always 0 for volleyball).
    pub empty_fraction: f64,
    /// Fraction of object bbox pixels falling in the top/middle/bottom
    /// horizontal thirds of the image.
    pub bbox_thirds: [f64; 3],
    /// Smallest bbox row seen, as a fraction of frame height (1.0 if none).
    pub bbox_min_row_frac: f64,
    /// Mean object bbox area in pixels (cars, or individual players).
    pub avg_object_pixels: f64,
    /// Observed color label marginals over object frames.
    pub color_marginals: BTreeMap<String, f64>,
    pub meta: StreamMeta,
}

/// Takes the first `k` events off `stream` and summarizes them.
pub fn sample_stream(
    stream: &mut dyn EventStream,
    k: usize,
) -> (Vec<StreamEvent>, SampleSummary) {
    let meta = stream.meta().clone();
    let events: Vec<StreamEvent> = stream.take(k.max(1)).collect();
    let summary = summarize(&events, meta);
    (events, summary)
}

pub fn summarize(events: &[StreamEvent], meta: StreamMeta) -> SampleSummary {
    let mut empty = 0usize;
    let mut third_mass = [0f64; 3];
    let mut min_row_frac = 1.0f64;
    let mut bbox_pixels = 0f64;
    let mut bbox_count = 0usize;
    let mut colors: BTreeMap<String, usize> = BTreeMap::new();
    let mut color_total = 0usize;

    let record_bbox = |b: &Region, height: u32, third_mass: &mut [f64; 3]| {
        let h3 = height as f64 / 3.0;
        let area = b.pixels() as f64;
        for t in 0..3 {
            let lo = h3 * t as f64;
            let hi = h3 * (t + 1) as f64;
            let overlap =
                (hi.min(b.row_end as f64) - lo.max(b.row_start as f64)).max(0.0);
            third_mass[t] += overlap * b.width() as f64;
        }
        area
    };

    for ev in events {
        let t = &ev.truth;
        let object_present = t.car_present || t.players.is_some();
        if !object_present {
            empty += 1;
        }
        if let Some(b) = &t.bbox {
            let area = record_bbox(b, ev.frame.height, &mut third_mass);
            bbox_pixels += area;
            bbox_count += 1;
            min_row_frac = min_row_frac.min(b.row_start as f64 / ev.frame.height as f64);
        }
        if let Some(players) = &t.players {
            for p in players {
                let area = record_bbox(&p.bbox, ev.frame.height, &mut third_mass);
                bbox_pixels += area;
                bbox_count += 1;
                min_row_frac =
                    min_row_frac.min(p.bbox.row_start as f64 / ev.frame.height as f64);
            }
        }
        if let Some(c) = &t.color {
            *colors.entry(c.clone()).or_default() += 1;
            color_total += 1;
        }
    }

    let total_mass: f64 = third_mass.iter().sum();
    let bbox_thirds = if total_mass > 0.0 {
        [third_mass[0] / total_mass, third_mass[1] / total_mass, third_mass[2] / total_mass]
    } else {
        [0.0; 3]
    };
    SampleSummary {
        fps: meta.fps,
        width: meta.width,
        height: meta.height,
        frames: events.len(),
        empty_fraction: if events.is_empty() { 0.0 } else { empty as f64 / events.len() as f64 },
        bbox_thirds,
        bbox_min_row_frac: min_row_frac,
        avg_object_pixels: if bbox_count == 0 { 0.0 } else { bbox_pixels / bbox_count as f64 },
        color_marginals: colors
            .into_iter()
            .map(|(k, v)| (k, v as f64 / color_total.max(1) as f64))
            .collect(),
        meta,
    }
}

/// Writes `n` frames as PPM files plus a newline-delimited JSON annotation
/// file (`frame_id` + the `truth` fields) into `dir`.
pub fn dump_stream(
    stream: &mut dyn EventStream,
    n: usize,
    dir: &std::path::Path,
) -> Result<(), StreamError> {
    std::fs::create_dir_all(dir)?;
    let mut annotations = std::io::BufWriter::new(std::fs::File::create(dir.join("annotations.ndjson"))?);
    for ev in stream.take(n) {
        let path = dir.join(format!("frame_{:06}.ppm", ev.frame.frame_id));
        std::fs::write(path, ev.frame.to_ppm())?;
        #[derive(Serialize)]
        struct Line<'a> {
            frame_id: u64,
            truth: &'a GroundTruth,
        }
        let line = serde_json::to_string(&Line { frame_id: ev.frame.frame_id, truth: &ev.truth })
            .expect("annotation serialization");
        writeln!(annotations, "{line}")?;
    }
    Ok(())
}

/// Replays a recorded event prefix (used for paired validation runs).
pub struct VecStream {
    events: std::vec::IntoIter<StreamEvent>,
    meta: StreamMeta,
}

impl VecStream {
    pub fn new(events: Vec<StreamEvent>, meta: StreamMeta) -> Self {
        VecStream { events: events.into_iter(), meta }
    }
}

impl Iterator for VecStream {
    type Item = StreamEvent;

    fn next(&mut self) -> Option<Self::Item> {
        self.events.next()
    }
}

impl EventStream for VecStream {
    fn meta(&self) -> &StreamMeta {
        &self.meta
    }
}

/// 64-bit mix used to derive independent substream seeds. Stable forever;
/// changing it invalidates recorded expectations.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Hash of a model/label name for seed derivation.
pub fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Weighted label choice given a uniform draw in [0,1).
pub fn weighted_choice<'a>(weights: &'a [(String, f64)], draw: f64) -> &'a str {
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut acc = 0.0;
    for (label, w) in weights {
        acc += w / total;
        if draw < acc {
            return label;
        }
    }
    &weights.last().expect("non-empty weights").0
}
