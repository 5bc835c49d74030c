//! Naive plan constructors for the thirteen benchmark queries.
//!
//! A naive plan extracts with the most accurate model slot on every frame and
//! applies filters, windows, and aggregates downstream. No reduction
//! operators (Skip/Crop/Downscale/Greyscale) are present; those come from the
//! optimizer.

use super::{
    AggregateFn, CmpOp, ExtractTask, Literal, Operator, Plan, PlanError, PlanMetadata, Predicate,
    WindowSpec,
};
use serde::{Deserialize, Serialize};

/// Marker value extraction produces when there is no object in the frame.
pub const NO_LABEL: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QueryId {
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
    Q6,
    Q7,
    Q8,
    Q9,
    Q10,
    Q11,
    Q12,
    Q13,
}

impl QueryId {
    pub fn all() -> [QueryId; 13] {
        use QueryId::*;
        [Q1, Q2, Q3, Q4, Q5, Q6, Q7, Q8, Q9, Q10, Q11, Q12, Q13]
    }

    pub fn parse(s: &str) -> Result<QueryId, PlanError> {
        use QueryId::*;
        Ok(match s.to_ascii_uppercase().as_str() {
            "Q1" => Q1,
            "Q2" => Q2,
            "Q3" => Q3,
            "Q4" => Q4,
            "Q5" => Q5,
            "Q6" => Q6,
            "Q7" => Q7,
            "Q8" => Q8,
            "Q9" => Q9,
            "Q10" => Q10,
            "Q11" => Q11,
            "Q12" => Q12,
            "Q13" => Q13,
            other => return Err(PlanError::UnknownQuery(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        use QueryId::*;
        match self {
            Q1 => "Q1",
            Q2 => "Q2",
            Q3 => "Q3",
            Q4 => "Q4",
            Q5 => "Q5",
            Q6 => "Q6",
            Q7 => "Q7",
            Q8 => "Q8",
            Q9 => "Q9",
            Q10 => "Q10",
            Q11 => "Q11",
            Q12 => "Q12",
            Q13 => "Q13",
        }
    }

    /// Whether the query runs over the toll-booth stream (vs. volleyball).
    pub fn is_tollbooth(&self) -> bool {
        use QueryId::*;
        matches!(self, Q1 | Q2 | Q3 | Q4 | Q5 | Q6 | Q7 | Q8 | Q9)
    }

    pub fn description(&self) -> &'static str {
        use QueryId::*;
        match self {
            Q1 => "car brand recognition",
            Q2 => "car color recognition",
            Q3 => "license plate detection",
            Q4 => "most popular brand and color",
            Q5 => "most popular brand",
            Q6 => "most popular color",
            Q7 => "repeated car detection",
            Q8 => "red stolen MTT car",
            Q9 => "unique license plates",
            Q10 => "amount of jumping players",
            Q11 => "most offensive team",
            Q12 => "notify when someone spikes",
            Q13 => "three most common actions",
        }
    }
}

impl std::fmt::Display for QueryId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Knobs the builder needs from the benchmark configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanBuildConfig {
    /// Tumbling window length for aggregation queries.
    pub window: WindowSpec,
    /// Relative accuracy the optimizer must retain.
    pub accuracy_threshold: f64,
}

impl Default for PlanBuildConfig {
    fn default() -> Self {
        // 60 simulated seconds unless the benchmark overrides it.
        PlanBuildConfig {
            window: WindowSpec::TumblingMillis { size_ms: 60_000 },
            accuracy_threshold: 0.9,
        }
    }
}

fn extract(task: ExtractTask) -> Operator {
    Operator::Extract { task, model_slot: "auto".to_string() }
}

fn filter(predicate: Predicate) -> Operator {
    Operator::Filter { predicate }
}

fn car_present() -> Predicate {
    Predicate::Comparison {
        attribute: "car_present".into(),
        op: CmpOp::Eq,
        value: Literal::Boolean(true),
    }
}

fn label_eq(attr: &str, value: &str) -> Predicate {
    Predicate::Comparison {
        attribute: attr.into(),
        op: CmpOp::Eq,
        value: Literal::Label(value.into()),
    }
}

fn label_ne(attr: &str, value: &str) -> Predicate {
    Predicate::Comparison {
        attribute: attr.into(),
        op: CmpOp::Ne,
        value: Literal::Label(value.into()),
    }
}

pub fn build_query(query_id: QueryId, config: &PlanBuildConfig) -> Result<Plan, PlanError> {
    use ExtractTask::*;
    use QueryId::*;

    let window = Operator::Window { window: config.window };
    let argmax = |group_by: Vec<&str>| Operator::Aggregate {
        fn_: AggregateFn::GroupCountArgmax,
        group_by: group_by.into_iter().map(String::from).collect(),
        k: None,
    };
    let distinct = |attr: &str| Operator::Aggregate {
        fn_: AggregateFn::DistinctCount,
        group_by: vec![attr.to_string()],
        k: None,
    };

    let ops: Vec<Operator> = match query_id {
        Q1 => vec![
            Operator::Source,
            extract(ObjectDetection),
            filter(car_present()),
            Operator::Sink,
        ],
        Q2 => vec![
            Operator::Source,
            extract(ColorRecognition),
            filter(label_ne("color", NO_LABEL)),
            Operator::Sink,
        ],
        Q3 => vec![
            Operator::Source,
            extract(ObjectDetection),
            extract(TextExtraction),
            filter(Predicate::And {
                children: vec![
                    car_present(),
                    Predicate::Comparison {
                        attribute: "plate".into(),
                        op: CmpOp::Ne,
                        value: Literal::Text(String::new()),
                    },
                ],
            }),
            Operator::Sink,
        ],
        Q4 => vec![
            Operator::Source,
            extract(ColorRecognition),
            extract(ObjectDetection),
            filter(Predicate::And {
                children: vec![label_ne("color", NO_LABEL), car_present()],
            }),
            window.clone(),
            argmax(vec!["brand", "color"]),
            Operator::Sink,
        ],
        Q5 => vec![
            Operator::Source,
            extract(ColorRecognition),
            extract(ObjectDetection),
            filter(Predicate::And {
                children: vec![label_ne("color", NO_LABEL), car_present()],
            }),
            window.clone(),
            argmax(vec!["brand"]),
            Operator::Sink,
        ],
        Q6 => vec![
            Operator::Source,
            extract(ColorRecognition),
            filter(label_ne("color", NO_LABEL)),
            window.clone(),
            argmax(vec!["color"]),
            Operator::Sink,
        ],
        Q7 => vec![
            Operator::Source,
            extract(ObjectDetection),
            extract(TextExtraction),
            filter(Predicate::And {
                children: vec![
                    car_present(),
                    Predicate::Comparison {
                        attribute: "plate".into(),
                        op: CmpOp::Ne,
                        value: Literal::Text(String::new()),
                    },
                ],
            }),
            window.clone(),
            argmax(vec!["plate"]),
            Operator::Sink,
        ],
        Q8 => vec![
            Operator::Source,
            extract(ColorRecognition),
            extract(ObjectDetection),
            extract(TextExtraction),
            filter(Predicate::And {
                children: vec![
                    label_eq("color", "red"),
                    Predicate::PrefixMatch { attribute: "plate".into(), prefix: "MTT".into() },
                ],
            }),
            Operator::Sink,
        ],
        Q9 => vec![
            Operator::Source,
            extract(ObjectDetection),
            extract(TextExtraction),
            filter(Predicate::And {
                children: vec![
                    car_present(),
                    Predicate::Comparison {
                        attribute: "plate".into(),
                        op: CmpOp::Ne,
                        value: Literal::Text(String::new()),
                    },
                ],
            }),
            window.clone(),
            distinct("plate"),
            Operator::Sink,
        ],
        Q10 => vec![
            Operator::Source,
            extract(ActionRecognition),
            filter(label_eq("action", "jump")),
            window.clone(),
            distinct("player_id"),
            Operator::Sink,
        ],
        Q11 => vec![
            Operator::Source,
            extract(ActionRecognition),
            filter(label_eq("action", "spike")),
            window.clone(),
            argmax(vec!["team"]),
            Operator::Sink,
        ],
        Q12 => vec![
            Operator::Source,
            extract(ActionRecognition),
            filter(label_eq("action", "spike")),
            Operator::Sink,
        ],
        Q13 => vec![
            Operator::Source,
            extract(ActionRecognition),
            window.clone(),
            Operator::Aggregate {
                fn_: AggregateFn::TopK,
                group_by: vec!["action".to_string()],
                k: Some(3),
            },
            Operator::Sink,
        ],
    };

    let mut metadata = PlanMetadata::new(query_id.name(), query_id.description());
    metadata.accuracy_threshold = config.accuracy_threshold;
    Ok(Plan::chain(metadata, ops))
}

#[cfg(test)]
mod tests {
    use super::super::validate_plan;
    use super::*;

    #[test]
    fn all_queries_validate_clean() {
        for q in QueryId::all() {
            let plan = build_query(q, &Default::default()).unwrap();
            let report = validate_plan(&plan);
            assert!(report.is_valid(), "{q}: {report}");
        }
    }

    #[test]
    fn q8_shape_matches_expected_chain() {
        let plan = build_query(QueryId::Q8, &Default::default()).unwrap();
        let tags: Vec<&str> =
            plan.topo_order().iter().map(|id| plan.nodes[id].op.tag()).collect();
        assert_eq!(tags, vec!["Source", "Extract", "Extract", "Extract", "Filter", "Sink"]);
        let tasks: Vec<ExtractTask> = plan
            .extract_nodes()
            .iter()
            .map(|n| match n.op {
                Operator::Extract { task, .. } => task,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(
            tasks,
            vec![
                ExtractTask::ColorRecognition,
                ExtractTask::ObjectDetection,
                ExtractTask::TextExtraction
            ]
        );
    }

    #[test]
    fn q6_has_window_aggregate() {
        let plan = build_query(QueryId::Q6, &Default::default()).unwrap();
        let tags: Vec<&str> =
            plan.topo_order().iter().map(|id| plan.nodes[id].op.tag()).collect();
        assert_eq!(tags, vec!["Source", "Extract", "Filter", "Window", "Aggregate", "Sink"]);
    }

    #[test]
    fn q12_is_action_notification() {
        let plan = build_query(QueryId::Q12, &Default::default()).unwrap();
        let tags: Vec<&str> =
            plan.topo_order().iter().map(|id| plan.nodes[id].op.tag()).collect();
        assert_eq!(tags, vec!["Source", "Extract", "Filter", "Sink"]);
    }

    #[test]
    fn unknown_query_id_errors() {
        assert!(QueryId::parse("Q99").is_err());
    }

    #[test]
    fn naive_plans_have_no_reduction_operators() {
        for q in QueryId::all() {
            let plan = build_query(q, &Default::default()).unwrap();
            assert!(plan.nodes.values().all(|n| !matches!(
                n.op,
                Operator::Skip { .. }
                    | Operator::Crop { .. }
                    | Operator::Downscale { .. }
                    | Operator::Greyscale
            )));
        }
    }
}
