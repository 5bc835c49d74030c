//! External reasoner protocol: a local HTTP stub serves the three phases;
//! malformed or contradictory responses fall back to the scripted rules.

use mmstream_core::bench::{make_context, BenchConfig};
use mmstream_core::opt::{ExternalReasoner, Reasoner, ScriptedReasoner};
use mmstream_core::plan::QueryId;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

/// Minimal one-shot HTTP server: answers `count` POST /reason requests with
/// the bodies produced by `respond`, then exits.
fn serve(count: usize, respond: impl Fn(usize, &str) -> String + Send + 'static) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind test server");
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for i in 0..count {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut reader = BufReader::new(stream);
            let mut content_length: Option<usize> = None;
            let mut chunked = false;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).is_err() || line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(rest) = lower.strip_prefix("content-length:") {
                    content_length = rest.trim().parse().ok();
                }
                if lower.starts_with("transfer-encoding:") && lower.contains("chunked") {
                    chunked = true;
                }
            }
            let mut body = Vec::new();
            if chunked {
                loop {
                    let mut size_line = String::new();
                    if reader.read_line(&mut size_line).is_err() {
                        break;
                    }
                    let size = usize::from_str_radix(size_line.trim(), 16).unwrap_or(0);
                    if size == 0 {
                        let mut crlf = String::new();
                        let _ = reader.read_line(&mut crlf);
                        break;
                    }
                    let mut chunk = vec![0u8; size + 2];
                    if reader.read_exact(&mut chunk).is_err() {
                        break;
                    }
                    chunk.truncate(size);
                    body.extend_from_slice(&chunk);
                }
            } else {
                body = vec![0u8; content_length.unwrap_or(0)];
                if reader.read_exact(&mut body).is_err() {
                    return;
                }
            }
            let request = String::from_utf8_lossy(&body).to_string();
            let response_body = respond(i, &request);
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                response_body.len(),
                response_body
            );
        }
    });
    format!("http://{addr}")
}

#[test]
fn external_reasoner_accepts_consistent_facts() {
    let ctx = make_context(&BenchConfig::default(), QueryId::Q8, 42).unwrap();
    let scripted_facts = ScriptedReasoner
        .world_knowledge("q", &ctx.naive_plan, &ctx.summary)
        .unwrap();
    let facts_json = serde_json::to_string(&scripted_facts).unwrap();

    let endpoint = serve(1, move |_, request| {
        let parsed: serde_json::Value = serde_json::from_str(request).unwrap();
        assert_eq!(parsed["phase"], "world_knowledge");
        assert!(parsed.get("sample_summary").is_some());
        assert!(parsed.get("plan").is_some());
        facts_json.clone()
    });
    let reasoner = ExternalReasoner::new(&endpoint, 2_000);
    let facts = reasoner.world_knowledge("q", &ctx.naive_plan, &ctx.summary).unwrap();
    assert_eq!(facts, scripted_facts);
    assert!(reasoner.take_warnings().is_empty());
}

#[test]
fn contradicting_skip_bound_is_rejected() {
    let ctx = make_context(&BenchConfig::default(), QueryId::Q8, 42).unwrap();
    let mut lying = ScriptedReasoner
        .world_knowledge("q", &ctx.naive_plan, &ctx.summary)
        .unwrap();
    lying.temporal_prior.skip_bound = 30;
    let lying_json = serde_json::to_string(&lying).unwrap();

    let endpoint = serve(1, move |_, _| lying_json.clone());
    let reasoner = ExternalReasoner::new(&endpoint, 2_000);
    let facts = reasoner.world_knowledge("q", &ctx.naive_plan, &ctx.summary).unwrap();
    // Safety number recomputed from metadata, response rejected.
    assert_eq!(facts.temporal_prior.skip_bound, 3);
    let warnings = reasoner.take_warnings();
    assert!(warnings.iter().any(|w| w.contains("rejected")), "{warnings:?}");
}

#[test]
fn malformed_response_falls_back_to_scripted() {
    let ctx = make_context(&BenchConfig::default(), QueryId::Q8, 42).unwrap();
    let endpoint = serve(1, |_, _| "{\"not\": \"facts\"}".to_string());
    let reasoner = ExternalReasoner::new(&endpoint, 2_000);
    let facts = reasoner.world_knowledge("q", &ctx.naive_plan, &ctx.summary).unwrap();
    let expected = ScriptedReasoner
        .world_knowledge("q", &ctx.naive_plan, &ctx.summary)
        .unwrap();
    assert_eq!(facts, expected);
    assert!(reasoner.take_warnings().iter().any(|w| w.contains("fallback")));
}

#[test]
fn unreachable_endpoint_falls_back_to_scripted() {
    let ctx = make_context(&BenchConfig::default(), QueryId::Q6, 42).unwrap();
    let reasoner = ExternalReasoner::new("http://127.0.0.1:1", 300);
    let facts = reasoner.world_knowledge("q", &ctx.naive_plan, &ctx.summary).unwrap();
    let expected = ScriptedReasoner
        .world_knowledge("q", &ctx.naive_plan, &ctx.summary)
        .unwrap();
    assert_eq!(facts, expected);
    assert!(!reasoner.take_warnings().is_empty());
}

#[test]
fn operator_select_round_trips_candidates() {
    let ctx = make_context(&BenchConfig::default(), QueryId::Q8, 42).unwrap();
    let facts = ScriptedReasoner
        .world_knowledge("q", &ctx.naive_plan, &ctx.summary)
        .unwrap();
    let scripted =
        ScriptedReasoner.operator_select("q", &ctx.naive_plan, &ctx.summary, &facts).unwrap();
    let candidates_json = serde_json::to_string(&scripted).unwrap();

    let endpoint = serve(1, move |_, request| {
        let parsed: serde_json::Value = serde_json::from_str(request).unwrap();
        assert_eq!(parsed["phase"], "operator_select");
        assert!(parsed.get("catalog").is_some());
        assert!(parsed.get("facts").is_some());
        candidates_json.clone()
    });
    let reasoner = ExternalReasoner::new(&endpoint, 2_000);
    let got =
        reasoner.operator_select("q", &ctx.naive_plan, &ctx.summary, &facts).unwrap();
    assert_eq!(got, scripted);
}
