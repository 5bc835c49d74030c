//! Physical optimization: accuracy-constrained model selection per
//! extraction, sample-driven plan cost estimation, and the adaptive pruning
//! policy driven by stream density.

use super::semantic::empirical_validate;
use super::{OptContext, OptError};
use crate::model::{catalog_lookup, derive_variant, Catalog, ModelSpec, Technique};
use crate::plan::{NodeId, Operator, Plan};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Sample-measured plan cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    pub expected_ms_per_frame: f64,
    /// Fraction of ingested frames reaching each node.
    pub reach_probabilities: BTreeMap<NodeId, f64>,
    /// Per-node contribution in ms per ingested frame.
    pub breakdown: BTreeMap<NodeId, f64>,
}

/// Executes the plan over the context's sample and derives per-node reach
/// probabilities and expected per-frame cost. Deterministic for a fixed
/// sample and seed.
pub fn estimate_cost(plan: &Plan, ctx: &OptContext) -> Result<CostEstimate, OptError> {
    const MIN_SAMPLE: usize = 100;
    if ctx.sample.len() < MIN_SAMPLE {
        return Err(OptError::SampleTooSmall { got: ctx.sample.len(), need: MIN_SAMPLE });
    }
    let mut stream = ctx.replay();
    let (_, metrics) = crate::exec::compile_and_run(
        plan,
        &ctx.catalog,
        &ctx.exec,
        &mut stream,
        ctx.sample.len() as u64,
        ctx.stream_seed,
    )?;
    let frames = metrics.frames_ingested.max(1) as f64;
    let reach_probabilities = metrics
        .reach
        .iter()
        .map(|(id, count)| (*id, *count as f64 / frames))
        .collect();
    let breakdown: BTreeMap<NodeId, f64> = metrics
        .per_operator_us
        .iter()
        .map(|(id, us)| (*id, *us as f64 / 1000.0 / frames))
        .collect();
    Ok(CostEstimate {
        expected_ms_per_frame: metrics.simulated_us as f64 / 1000.0 / frames,
        reach_probabilities,
        breakdown,
    })
}

/// Latency saved by a candidate binding relative to the baseline model.
fn latency_savings(baseline: &ModelSpec, bound: &ModelSpec) -> f64 {
    baseline.latency_ms - bound.latency_ms
}

/// Binds each extraction to the cheapest catalog model meeting the relative
/// accuracy floor, then validates the whole plan against the naive baseline
/// and reverts bindings (largest latency savings first) until validation
/// passes. The all-baseline binding always passes, so the loop terminates.
pub fn select_models(plan: &Plan, ctx: &OptContext, tau: f64) -> Result<Plan, OptError> {
    let mut bound = plan.clone();
    // (node, baseline, chosen) for each swapped extraction.
    let mut swaps: Vec<(NodeId, ModelSpec, ModelSpec)> = Vec::new();

    for node in plan.extract_nodes() {
        let Operator::Extract { task, model_slot } = &node.op else {
            unreachable!()
        };
        let baseline = match model_slot.as_str() {
            "auto" => ctx.catalog.most_accurate(*task)?.clone(),
            name => ctx
                .catalog
                .get(name)
                .ok_or_else(|| {
                    crate::model::ModelError::UnknownModel(name.to_string())
                })?
                .clone(),
        };
        let candidates = catalog_lookup(&ctx.catalog, *task, tau, &baseline);
        let Some(best) = candidates.first() else {
            continue;
        };
        if best.name != baseline.name {
            let chosen = (*best).clone();
            if let Operator::Extract { model_slot, .. } =
                &mut bound.nodes.get_mut(&node.id).unwrap().op
            {
                *model_slot = chosen.name.clone();
            }
            swaps.push((node.id, baseline, chosen));
        }
    }

    if swaps.is_empty() {
        return Ok(bound);
    }

    // Revert loop: restore baselines in descending latency-savings order
    // until the plan validates.
    swaps.sort_by(|a, b| {
        latency_savings(&b.1, &b.2)
            .partial_cmp(&latency_savings(&a.1, &a.2))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut reverts = 0usize;
    loop {
        let verdict = empirical_validate(&ctx.naive_plan, &bound, ctx, tau)?;
        if verdict.pass {
            let mut result = bound;
            result
                .metadata
                .rewrite_notes
                .push(format!("physical(swaps={},reverts={reverts})", swaps.len() - reverts));
            return Ok(result);
        }
        let Some((node, baseline, _)) = swaps.get(reverts).cloned() else {
            return Ok(bound);
        };
        if let Operator::Extract { model_slot, .. } = &mut bound.nodes.get_mut(&node).unwrap().op {
            *model_slot = baseline.name.clone();
        }
        reverts += 1;
    }
}

/// Recent-stream density statistics the pruning policy reacts to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityStats {
    /// Fraction of recent frames with objects present, in [0,1].
    pub object_density: f64,
}

/// Density-band pruning policy: low-traffic periods run heavily pruned
/// variants, high-traffic periods restore the base model. Band switches
/// require the new band to hold for `hysteresis_windows` consecutive
/// evaluations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrunePolicy {
    /// (density upper bound, prune rate), evaluated in order; densities
    /// above the last bound use rate 0 (base model).
    pub bands: Vec<(f64, f64)>,
    pub hysteresis_windows: u32,
}

impl Default for PrunePolicy {
    fn default() -> Self {
        PrunePolicy { bands: vec![(0.2, 0.5), (0.6, 0.25)], hysteresis_windows: 2 }
    }
}

impl PrunePolicy {
    pub fn rate_for(&self, density: f64) -> f64 {
        for (bound, rate) in &self.bands {
            if density <= *bound {
                return *rate;
            }
        }
        0.0
    }
}

/// Hysteretic adaptive pruner; owns the band state between evaluation
/// windows.
#[derive(Debug, Clone)]
pub struct AdaptivePruner {
    policy: PrunePolicy,
    current_rate: f64,
    pending: Option<(f64, u32)>,
}

impl AdaptivePruner {
    pub fn new(policy: PrunePolicy) -> Self {
        AdaptivePruner { policy, current_rate: 0.0, pending: None }
    }

    pub fn current_rate(&self) -> f64 {
        self.current_rate
    }

    /// One evaluation window: returns the model to run with from here on.
    pub fn step(
        &mut self,
        current_model: &ModelSpec,
        stats: DensityStats,
        catalog: &Catalog,
    ) -> Result<ModelSpec, OptError> {
        let base_name = &current_model.provenance.base;
        let base = catalog
            .get(base_name)
            .ok_or_else(|| crate::model::ModelError::UnknownModel(base_name.clone()))?
            .clone();

        let target = self.policy.rate_for(stats.object_density);
        if (target - self.current_rate).abs() < f64::EPSILON {
            self.pending = None;
        } else {
            self.pending = match self.pending {
                Some((rate, count)) if (rate - target).abs() < f64::EPSILON => {
                    Some((rate, count + 1))
                }
                _ => Some((target, 1)),
            };
            if let Some((rate, count)) = self.pending {
                if count >= self.policy.hysteresis_windows {
                    self.current_rate = rate;
                    self.pending = None;
                }
            }
        }

        if self.current_rate == 0.0 {
            Ok(base)
        } else {
            Ok(derive_variant(&base, Technique::Prune { rate: self.current_rate })?)
        }
    }
}

/// Single-shot policy application (no hysteresis state): the variant the
/// policy prescribes for a sustained density level.
pub fn adaptive_prune(
    current_model: &ModelSpec,
    stats: DensityStats,
    policy: &PrunePolicy,
    catalog: &Catalog,
) -> Result<ModelSpec, OptError> {
    let base_name = &current_model.provenance.base;
    let base = catalog
        .get(base_name)
        .ok_or_else(|| crate::model::ModelError::UnknownModel(base_name.clone()))?
        .clone();
    let rate = policy.rate_for(stats.object_density);
    if rate == 0.0 {
        Ok(base)
    } else {
        Ok(derive_variant(&base, Technique::Prune { rate })?)
    }
}
