//! Reasoner backends for the semantic phases.
//!
//! The scripted reasoner derives facts and candidate operators mechanically
//! and is the deterministic default. The external reasoner forwards each
//! phase to an HTTP endpoint speaking a structured JSON protocol and falls
//! back to the scripted rules whenever the response is missing, malformed,
//! or contradicts stream metadata. Safety-relevant numbers are never taken
//! from an external response when metadata can derive them.

use super::semantic::{self, CandidateOp, Facts};
use super::OptError;
use crate::datagen::SampleSummary;
use crate::plan::{serialize_plan, Plan};
use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonerMode {
    Scripted,
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReasonerConfig {
    pub mode: ReasonerMode,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    5_000
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig { mode: ReasonerMode::Scripted, endpoint: None, timeout_ms: 5_000 }
    }
}

/// The three phase calls every reasoner backend implements. Inputs and
/// outputs share one schema across backends.
pub trait Reasoner {
    fn world_knowledge(
        &self,
        query_description: &str,
        plan: &Plan,
        summary: &SampleSummary,
    ) -> Result<Facts, OptError>;

    fn operator_select(
        &self,
        query_description: &str,
        plan: &Plan,
        summary: &SampleSummary,
        facts: &Facts,
    ) -> Result<Vec<CandidateOp>, OptError>;

    /// Insertion order for the accepted candidates, as operator tags. The
    /// plan updater validates each insertion; unknown tags are ignored.
    fn plan_update_order(
        &self,
        query_description: &str,
        plan: &Plan,
        facts: &Facts,
        accepted: &[CandidateOp],
    ) -> Result<Vec<String>, OptError>;

    /// Warnings accumulated since the last call (fallbacks, rejected
    /// responses). Scripted mode never warns.
    fn take_warnings(&self) -> Vec<String> {
        Vec::new()
    }
}

/// Deterministic rule-based reasoner.
#[derive(Debug, Default, Clone)]
pub struct ScriptedReasoner;

impl Reasoner for ScriptedReasoner {
    fn world_knowledge(
        &self,
        _query_description: &str,
        plan: &Plan,
        summary: &SampleSummary,
    ) -> Result<Facts, OptError> {
        semantic::extract_world_knowledge(plan, summary)
    }

    fn operator_select(
        &self,
        _query_description: &str,
        plan: &Plan,
        summary: &SampleSummary,
        facts: &Facts,
    ) -> Result<Vec<CandidateOp>, OptError> {
        Ok(semantic::select_operators(facts, plan, summary))
    }

    fn plan_update_order(
        &self,
        _query_description: &str,
        _plan: &Plan,
        _facts: &Facts,
        _accepted: &[CandidateOp],
    ) -> Result<Vec<String>, OptError> {
        Ok(semantic::FIXED_INSERTION_ORDER.iter().map(|s| s.to_string()).collect())
    }
}

/// Request body for POST /reason.
#[derive(Debug, Serialize)]
struct ReasonRequest<'a> {
    phase: &'a str,
    query_description: &'a str,
    plan: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    sample_summary: Option<&'a SampleSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    facts: Option<&'a Facts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    catalog: Option<Vec<String>>,
}

/// HTTP-backed reasoner with scripted fallback.
pub struct ExternalReasoner {
    endpoint: String,
    agent: ureq::Agent,
    scripted: ScriptedReasoner,
    warnings: std::sync::Mutex<Vec<String>>,
}

impl ExternalReasoner {
    pub fn new(endpoint: &str, timeout_ms: u64) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .build();
        ExternalReasoner {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            agent: config.into(),
            scripted: ScriptedReasoner,
            warnings: std::sync::Mutex::new(Vec::new()),
        }
    }

    fn warn(&self, message: String) {
        self.warnings.lock().expect("warning lock").push(message);
    }

    fn post<T: serde::de::DeserializeOwned>(&self, request: &ReasonRequest) -> Result<T, String> {
        let url = format!("{}/reason", self.endpoint);
        let mut response = self
            .agent
            .post(&url)
            .send_json(request)
            .map_err(|e| format!("request failed: {e}"))?;
        response.body_mut().read_json::<T>().map_err(|e| format!("bad response: {e}"))
    }

    fn plan_value(plan: &Plan) -> serde_json::Value {
        serde_json::from_str(&serialize_plan(plan)).expect("plan json")
    }
}

impl Reasoner for ExternalReasoner {
    fn world_knowledge(
        &self,
        query_description: &str,
        plan: &Plan,
        summary: &SampleSummary,
    ) -> Result<Facts, OptError> {
        let request = ReasonRequest {
            phase: "world_knowledge",
            query_description,
            plan: Self::plan_value(plan),
            sample_summary: Some(summary),
            facts: None,
            catalog: None,
        };
        match self.post::<Facts>(&request) {
            Ok(facts) => {
                // Schema validation: safety numbers must agree with what the
                // metadata formula derives.
                let expected = semantic::extract_world_knowledge(plan, summary)?;
                if facts.temporal_prior.skip_bound != expected.temporal_prior.skip_bound {
                    self.warn(format!(
                        "external facts claim G={} but metadata derives G={}; response rejected",
                        facts.temporal_prior.skip_bound, expected.temporal_prior.skip_bound
                    ));
                    return Ok(expected);
                }
                if !(0.0..=1.0).contains(&facts.spatial_prior.confidence) {
                    self.warn("external spatial confidence outside [0,1]; response rejected".into());
                    return Ok(expected);
                }
                Ok(facts)
            }
            Err(e) => {
                self.warn(format!("world_knowledge fallback to scripted: {e}"));
                self.scripted.world_knowledge(query_description, plan, summary)
            }
        }
    }

    fn operator_select(
        &self,
        query_description: &str,
        plan: &Plan,
        summary: &SampleSummary,
        facts: &Facts,
    ) -> Result<Vec<CandidateOp>, OptError> {
        let request = ReasonRequest {
            phase: "operator_select",
            query_description,
            plan: Self::plan_value(plan),
            sample_summary: Some(summary),
            facts: Some(facts),
            catalog: Some(
                semantic::REDUCTION_CATALOG.iter().map(|s| s.to_string()).collect(),
            ),
        };
        match self.post::<Vec<CandidateOp>>(&request) {
            Ok(candidates) => {
                // Accepted candidates must satisfy their own preconditions
                // against the facts we hold.
                let scripted = semantic::select_operators(facts, plan, summary);
                for c in &candidates {
                    if c.accepted {
                        let ok = scripted
                            .iter()
                            .any(|s| s.accepted && s.operator.tag() == c.operator.tag());
                        if !ok {
                            self.warn(format!(
                                "external candidate {} fails precondition check; using scripted set",
                                c.operator.tag()
                            ));
                            return Ok(scripted);
                        }
                    }
                }
                Ok(candidates)
            }
            Err(e) => {
                self.warn(format!("operator_select fallback to scripted: {e}"));
                self.scripted.operator_select(query_description, plan, summary, facts)
            }
        }
    }

    fn plan_update_order(
        &self,
        query_description: &str,
        plan: &Plan,
        facts: &Facts,
        accepted: &[CandidateOp],
    ) -> Result<Vec<String>, OptError> {
        let request = ReasonRequest {
            phase: "plan_update",
            query_description,
            plan: Self::plan_value(plan),
            sample_summary: None,
            facts: Some(facts),
            catalog: Some(accepted.iter().map(|c| c.operator.tag().to_string()).collect()),
        };
        match self.post::<Vec<String>>(&request) {
            Ok(order) => Ok(order),
            Err(e) => {
                self.warn(format!("plan_update fallback to scripted: {e}"));
                self.scripted.plan_update_order(query_description, plan, facts, accepted)
            }
        }
    }

    fn take_warnings(&self) -> Vec<String> {
        std::mem::take(&mut self.warnings.lock().expect("warning lock"))
    }
}

/// Builds the backend selected by `config`.
pub fn make_reasoner(config: &ReasonerConfig) -> Box<dyn Reasoner> {
    match config.mode {
        ReasonerMode::Scripted => Box::new(ScriptedReasoner),
        ReasonerMode::External => match &config.endpoint {
            Some(endpoint) => Box::new(ExternalReasoner::new(endpoint, config.timeout_ms)),
            None => Box::new(ScriptedReasoner),
        },
    }
}
