//! Simulated inference models: a catalog of specs with latency/accuracy
//! numbers, deterministic mock inference against ground truth, and variant
//! derivation standing in for quantization, pruning, and distillation.

use crate::datagen::{mix_seed, name_hash, GroundTruth};
use crate::pixel::Region;
use crate::plan::ExtractTask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model {model} does not support task {task:?}")]
    TaskMismatch { model: String, task: ExtractTask },
    #[error("{technique} parameter {value} outside {range}")]
    BadTechniqueParam { technique: &'static str, value: f64, range: &'static str },
    #[error("no catalog model for task {0:?}")]
    NoModelForTask(ExtractTask),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("catalog io: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Which extraction tasks a model can serve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCoverage {
    All,
    #[serde(untagged)]
    One(ExtractTask),
}

impl TaskCoverage {
    pub fn supports(&self, task: ExtractTask) -> bool {
        match self {
            TaskCoverage::All => true,
            TaskCoverage::One(t) => *t == task,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub base: String,
    pub techniques: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub task: TaskCoverage,
    /// Simulated full-frame invocation latency.
    pub latency_ms: f64,
    /// Probability an invocation reproduces ground truth.
    pub accuracy: f64,
    pub size_mparams: f64,
    pub provenance: Provenance,
}

impl ModelSpec {
    pub fn new(name: &str, task: TaskCoverage, latency_ms: f64, accuracy: f64, size: f64) -> Self {
        ModelSpec {
            name: name.to_string(),
            task,
            latency_ms,
            accuracy,
            size_mparams: size,
            provenance: Provenance { base: name.to_string(), techniques: Vec::new() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Technique {
    Quantize8,
    Prune { rate: f64 },
    Distill { scale: f64 },
}

/// Derives a compressed variant. Coefficients are catalog policy: they give
/// each technique a plausible monotone latency/accuracy trade, not physics.
pub fn derive_variant(base: &ModelSpec, technique: Technique) -> Result<ModelSpec, ModelError> {
    let mut spec = base.clone();
    match technique {
        Technique::Quantize8 => {
            spec.size_mparams *= 0.5;
            spec.latency_ms *= 0.5;
            spec.accuracy *= 0.99;
            spec.name = format!("{}_q8", base.name);
            spec.provenance.techniques.push("quantize8".to_string());
        }
        Technique::Prune { rate } => {
            if rate == 0.0 {
                return Ok(base.clone());
            }
            if !(0.0..1.0).contains(&rate) {
                return Err(ModelError::BadTechniqueParam {
                    technique: "prune",
                    value: rate,
                    range: "[0,1)",
                });
            }
            spec.size_mparams *= 1.0 - rate;
            spec.latency_ms *= 1.0 - 0.8 * rate;
            spec.accuracy *= 1.0 - 0.15 * rate;
            spec.name = format!("{}_p{}", base.name, (rate * 100.0).round() as u32);
            spec.provenance.techniques.push(format!("prune({rate})"));
        }
        Technique::Distill { scale } => {
            if !(scale > 0.0 && scale <= 1.0) {
                return Err(ModelError::BadTechniqueParam {
                    technique: "distill",
                    value: scale,
                    range: "(0,1]",
                });
            }
            spec.size_mparams *= scale;
            spec.latency_ms *= scale;
            spec.accuracy *= 0.85 + 0.15 * scale;
            spec.name = format!("{}_d{}", base.name, (scale * 100.0).round() as u32);
            spec.provenance.techniques.push(format!("distill({scale})"));
        }
    }
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub models: Vec<ModelSpec>,
}

impl Default for Catalog {
    fn default() -> Self {
        let mllm = ModelSpec::new("mllm_base", TaskCoverage::All, 80.0, 0.98, 7000.0);
        let mllm_q8 = derive_variant(&mllm, Technique::Quantize8).expect("static variant");
        Catalog {
            models: vec![
                mllm,
                mllm_q8,
                ModelSpec::new(
                    "detector_small",
                    TaskCoverage::One(ExtractTask::ObjectDetection),
                    10.0,
                    0.93,
                    25.0,
                ),
                ModelSpec::new(
                    "colorcv",
                    TaskCoverage::One(ExtractTask::ColorRecognition),
                    2.0,
                    0.95,
                    1.0,
                ),
                ModelSpec::new(
                    "ocr_small",
                    TaskCoverage::One(ExtractTask::TextExtraction),
                    15.0,
                    0.94,
                    40.0,
                ),
                ModelSpec::new(
                    "action_small",
                    TaskCoverage::One(ExtractTask::ActionRecognition),
                    20.0,
                    0.90,
                    60.0,
                ),
            ],
        }
    }
}

impl Catalog {
    pub fn load(path: &std::path::Path) -> Result<Catalog, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let models: Vec<ModelSpec> = serde_json::from_str(&text)?;
        Ok(Catalog { models })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        std::fs::write(path, serde_json::to_string_pretty(&self.models)?)?;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.name == name)
    }

    /// Most accurate model for `task`; ties broken by lower latency, then name.
    pub fn most_accurate(&self, task: ExtractTask) -> Result<&ModelSpec, ModelError> {
        self.models
            .iter()
            .filter(|m| m.task.supports(task))
            .max_by(|a, b| {
                a.accuracy
                    .partial_cmp(&b.accuracy)
                    .unwrap()
                    .then(b.latency_ms.partial_cmp(&a.latency_ms).unwrap())
                    .then(b.name.cmp(&a.name))
            })
            .ok_or(ModelError::NoModelForTask(task))
    }

    /// A copy of this catalog with every model made error-free. Useful as an
    /// oracle when exactness (not accuracy) is under test.
    pub fn perfect(&self) -> Catalog {
        let mut c = self.clone();
        for m in &mut c.models {
            m.accuracy = 1.0;
        }
        c
    }
}

/// Models for `task` whose accuracy is at least `min_relative_accuracy`
/// times the baseline's, cheapest first.
pub fn catalog_lookup<'a>(
    catalog: &'a Catalog,
    task: ExtractTask,
    min_relative_accuracy: f64,
    baseline: &ModelSpec,
) -> Vec<&'a ModelSpec> {
    let floor = min_relative_accuracy * baseline.accuracy;
    let mut out: Vec<&ModelSpec> = catalog
        .models
        .iter()
        .filter(|m| m.task.supports(task) && m.accuracy >= floor)
        .collect();
    out.sort_by(|a, b| {
        a.latency_ms.partial_cmp(&b.latency_ms).unwrap().then(a.name.cmp(&b.name))
    });
    out
}

/// One per-player action reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerReading {
    pub player_id: u32,
    pub team: String,
    pub action: String,
}

/// Task-shaped extraction result.
#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    ObjectDetection {
        car_visible: bool,
        /// Car at the booth (inside the detection zone).
        car_present: bool,
        bbox: Option<Region>,
        brand: Option<String>,
    },
    ColorRecognition { color: String },
    TextExtraction { plate: String },
    ActionRecognition { players: Vec<PlayerReading> },
}

pub const COLOR_PALETTE: [&str; 7] =
    ["red", "blue", "white", "black", "silver", "grey", "none"];

const PLATE_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

const BRANDS: [&str; 5] = ["toyota", "volkswagen", "ford", "bmw", "honda"];

/// Corrupted-action marginal: wrong readings follow the rough frequency of
/// actions in play, so rare actions are rarely hallucinated.
const ACTION_MARGINAL: [(&str, f64); 6] = [
    ("stand", 0.42),
    ("set", 0.16),
    ("dig", 0.16),
    ("block", 0.08),
    ("jump", 0.10),
    ("spike", 0.08),
];

fn hallucinated_bbox(truth: &GroundTruth) -> Region {
    let _ = truth;
    Region::new(170, 226, 100, 220)
}

fn corrupt_plate(plate: &str, rng: &mut ChaCha8Rng) -> String {
    if plate.is_empty() {
        // Phantom read on an empty scene.
        return (0..7)
            .map(|_| PLATE_ALPHABET[rng.gen_range(0..PLATE_ALPHABET.len())] as char)
            .collect();
    }
    let mut chars: Vec<char> = plate.chars().collect();
    let pos = rng.gen_range(0..chars.len());
    loop {
        let c = PLATE_ALPHABET[rng.gen_range(0..PLATE_ALPHABET.len())] as char;
        if c != chars[pos] {
            chars[pos] = c;
            break;
        }
    }
    chars.into_iter().collect()
}

/// Deterministic mock inference: for a given (model, frame, stream seed) the
/// outcome is a pure function, independent of invocation order or input
/// resolution. With probability `model.accuracy` it reproduces ground truth,
/// otherwise it returns a corrupted reading.
pub fn infer(
    model: &ModelSpec,
    task: ExtractTask,
    truth: &GroundTruth,
    frame_id: u64,
    stream_seed: u64,
) -> Result<Extraction, ModelError> {
    if !model.task.supports(task) {
        return Err(ModelError::TaskMismatch { model: model.name.clone(), task });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
        stream_seed,
        name_hash(&model.name),
        task as u64 + 1,
        frame_id,
    ]));
    let correct = rng.gen::<f64>() < model.accuracy;

    Ok(match task {
        ExtractTask::ObjectDetection => {
            if correct {
                Extraction::ObjectDetection {
                    car_visible: truth.car_visible,
                    car_present: truth.car_present,
                    bbox: truth.bbox,
                    brand: if truth.car_present { truth.brand.clone() } else { None },
                }
            } else if truth.car_visible {
                // Missed detection.
                Extraction::ObjectDetection {
                    car_visible: false,
                    car_present: false,
                    bbox: None,
                    brand: None,
                }
            } else {
                // Phantom detection.
                Extraction::ObjectDetection {
                    car_visible: true,
                    car_present: true,
                    bbox: Some(hallucinated_bbox(truth)),
                    brand: Some(BRANDS[rng.gen_range(0..BRANDS.len())].to_string()),
                }
            }
        }
        ExtractTask::ColorRecognition => {
            let truth_color =
                if truth.car_present { truth.color.as_deref().unwrap_or("none") } else { "none" };
            if correct {
                Extraction::ColorRecognition { color: truth_color.to_string() }
            } else {
                let others: Vec<&str> =
                    COLOR_PALETTE.iter().copied().filter(|c| *c != truth_color).collect();
                Extraction::ColorRecognition {
                    color: others[rng.gen_range(0..others.len())].to_string(),
                }
            }
        }
        ExtractTask::TextExtraction => {
            let truth_plate =
                if truth.car_present { truth.plate.as_deref().unwrap_or("") } else { "" };
            if correct {
                Extraction::TextExtraction { plate: truth_plate.to_string() }
            } else {
                Extraction::TextExtraction { plate: corrupt_plate(truth_plate, &mut rng) }
            }
        }
        ExtractTask::ActionRecognition => {
            let players = truth.players.clone().unwrap_or_default();
            let mut readings: Vec<PlayerReading> = players
                .iter()
                .map(|p| PlayerReading {
                    player_id: p.player_id,
                    team: p.team.clone(),
                    action: p.action.clone(),
                })
                .collect();
            if !correct && !readings.is_empty() {
                // One player misread per corrupted frame.
                let idx = rng.gen_range(0..readings.len());
                let truth_action = readings[idx].action.clone();
                let weights: Vec<(String, f64)> = ACTION_MARGINAL
                    .iter()
                    .filter(|(a, _)| *a != truth_action)
                    .map(|(a, w)| (a.to_string(), *w))
                    .collect();
                readings[idx].action =
                    crate::datagen::weighted_choice(&weights, rng.gen::<f64>()).to_string();
            }
            Extraction::ActionRecognition { players: readings }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn red_car_truth() -> GroundTruth {
        GroundTruth {
            car_visible: true,
            car_present: true,
            color: Some("red".into()),
            brand: Some("bmw".into()),
            plate: Some("MTT4X99".into()),
            bbox: Some(Region::new(170, 230, 80, 220)),
            coverage: 0.11,
            players: None,
        }
    }

    #[test]
    fn perfect_model_returns_truth() {
        let model =
            ModelSpec::new("oracle", TaskCoverage::All, 10.0, 1.0, 1.0);
        let truth = red_car_truth();
        for frame in 0..200 {
            match infer(&model, ExtractTask::ColorRecognition, &truth, frame, 7).unwrap() {
                Extraction::ColorRecognition { color } => assert_eq!(color, "red"),
                _ => panic!("wrong extraction shape"),
            }
        }
    }

    #[test]
    fn zero_accuracy_always_corrupts() {
        let model = ModelSpec::new("broken", TaskCoverage::All, 10.0, 0.0, 1.0);
        let truth = red_car_truth();
        for frame in 0..200 {
            match infer(&model, ExtractTask::ColorRecognition, &truth, frame, 7).unwrap() {
                Extraction::ColorRecognition { color } => assert_ne!(color, "red"),
                _ => panic!("wrong extraction shape"),
            }
        }
    }

    #[test]
    fn empirical_accuracy_converges_to_spec() {
        let model = ModelSpec::new("p90", TaskCoverage::All, 10.0, 0.9, 1.0);
        let truth = red_car_truth();
        let mut hits = 0usize;
        let n = 10_000u64;
        for frame in 0..n {
            match infer(&model, ExtractTask::ColorRecognition, &truth, frame, 3).unwrap() {
                Extraction::ColorRecognition { color } => {
                    if color == "red" {
                        hits += 1;
                    }
                }
                _ => unreachable!(),
            }
        }
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.9).abs() <= 0.01, "observed {rate}");
    }

    #[test]
    fn inference_is_pure_per_model_and_frame() {
        let model = ModelSpec::new("p80", TaskCoverage::All, 10.0, 0.8, 1.0);
        let truth = red_car_truth();
        for frame in 0..50 {
            let a = infer(&model, ExtractTask::TextExtraction, &truth, frame, 9).unwrap();
            let b = infer(&model, ExtractTask::TextExtraction, &truth, frame, 9).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn task_mismatch_rejected() {
        let model = ModelSpec::new(
            "det",
            TaskCoverage::One(ExtractTask::ObjectDetection),
            10.0,
            0.9,
            1.0,
        );
        assert!(infer(&model, ExtractTask::ColorRecognition, &red_car_truth(), 0, 0).is_err());
    }

    #[test]
    fn quantize_matches_policy_table() {
        let base = ModelSpec::new("mllm", TaskCoverage::All, 80.0, 0.98, 7000.0);
        let q = derive_variant(&base, Technique::Quantize8).unwrap();
        assert_eq!(q.size_mparams, 3500.0);
        assert_eq!(q.latency_ms, 40.0);
        assert!((q.accuracy - 0.9702).abs() < 1e-12);
    }

    #[test]
    fn prune_zero_is_identity() {
        let base = ModelSpec::new("m", TaskCoverage::All, 40.0, 0.9, 100.0);
        assert_eq!(derive_variant(&base, Technique::Prune { rate: 0.0 }).unwrap(), base);
    }

    #[test]
    fn prune_half_scales_latency_and_accuracy() {
        let base = ModelSpec::new("m", TaskCoverage::All, 40.0, 0.9, 100.0);
        let p = derive_variant(&base, Technique::Prune { rate: 0.5 }).unwrap();
        assert!((p.latency_ms - 24.0).abs() < 1e-12);
        assert!((p.accuracy - 0.9 * 0.925).abs() < 1e-12);
        assert!(derive_variant(&base, Technique::Prune { rate: 1.2 }).is_err());
    }

    #[test]
    fn variant_chains_degrade_monotonically() {
        let base = ModelSpec::new("m", TaskCoverage::All, 80.0, 0.98, 7000.0);
        let mut current = base.clone();
        for tech in [
            Technique::Quantize8,
            Technique::Prune { rate: 0.3 },
            Technique::Distill { scale: 0.5 },
        ] {
            let next = derive_variant(&current, tech).unwrap();
            assert!(next.latency_ms <= current.latency_ms);
            assert!(next.accuracy <= current.accuracy);
            current = next;
        }
    }

    #[test]
    fn lookup_sorts_by_latency_and_filters_by_relative_accuracy() {
        let catalog = Catalog::default();
        let baseline = catalog.most_accurate(ExtractTask::ObjectDetection).unwrap().clone();
        assert_eq!(baseline.name, "mllm_base");
        let eligible = catalog_lookup(&catalog, ExtractTask::ObjectDetection, 0.9, &baseline);
        let names: Vec<&str> = eligible.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, vec!["detector_small", "mllm_base_q8", "mllm_base"]);

        let strict = catalog_lookup(&catalog, ExtractTask::ObjectDetection, 1.0, &baseline);
        assert_eq!(strict.len(), 1);
        assert_eq!(strict[0].name, "mllm_base");

        let all = catalog_lookup(&catalog, ExtractTask::ObjectDetection, 0.0, &baseline);
        assert_eq!(all.len(), 3);
        assert!(all.windows(2).all(|w| w[0].latency_ms <= w[1].latency_ms));
    }

    #[test]
    fn catalog_roundtrips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.json");
        let catalog = Catalog::default();
        catalog.save(&path).unwrap();
        let back = Catalog::load(&path).unwrap();
        assert_eq!(back, catalog);
    }
}
