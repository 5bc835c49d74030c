//! Calibration scratchpad: prints per-query naive/optimized throughput and
//! accuracy so stream defaults can be tuned against the acceptance bands.

use mmstream_core::bench::{
    make_context, optimize_with_phases, run_benchmark, run_plan, BenchConfig, Phase,
};
use mmstream_core::opt::ScriptedReasoner;
use mmstream_core::plan::QueryId;

fn main() {
    let config = BenchConfig::default();

    // Anchor: naive Q8.
    let ctx = make_context(&config, QueryId::Q8, 42).unwrap();
    let naive = run_plan(&config, QueryId::Q8, &ctx.naive_plan, 42, 3000).unwrap();
    println!(
        "naive Q8: fps={:.3} ms/frame={:.2} acc={:.3}",
        naive.metrics.fps,
        naive.metrics.ms_per_frame(),
        naive.accuracy
    );

    let mut warnings = Vec::new();
    for (label, phases) in [
        ("S", vec![Phase::Semantic]),
        ("S+L", vec![Phase::Semantic, Phase::Logical]),
        ("S+L+P", vec![Phase::Semantic, Phase::Logical, Phase::Physical]),
    ] {
        let plan =
            optimize_with_phases(&ctx, &phases, &ScriptedReasoner, &mut warnings).unwrap();
        let out = run_plan(&config, QueryId::Q8, &plan, 42, 3000).unwrap();
        println!(
            "Q8 {label}: fps={:.2} speedup={:.2}x acc={:.3} rel={:.3}",
            out.metrics.fps,
            out.metrics.fps / naive.metrics.fps,
            out.accuracy,
            out.accuracy / naive.accuracy.max(1e-9)
        );
        let chain: Vec<String> = plan
            .topo_order()
            .iter()
            .map(|id| match &plan.nodes[id].op {
                mmstream_core::plan::Operator::Extract { task, model_slot } => {
                    format!("Extract[{}={}]", task.name(), model_slot)
                }
                op => op.tag().to_string(),
            })
            .collect();
        println!("  chain: {}", chain.join(" -> "));
        println!("  notes: {:?}", plan.metadata.rewrite_notes);
    }
    for w in &warnings {
        println!("  warn: {w}");
    }

    let t0 = std::time::Instant::now();
    let report = run_benchmark(&config).unwrap();
    println!("\nfull benchmark in {:.1}s", t0.elapsed().as_secs_f64());
    println!("{}", report.aggregate_table());
    for label in ["S", "S+L", "S+L+P"] {
        println!("phase {label}:");
        for (q, (speedup, rel)) in report.query_means(label) {
            println!("  {q:<4} speedup={speedup:>7.2}x rel_acc={rel:.3}");
        }
    }
    for w in report.warnings.iter().take(40) {
        println!("warn: {w}");
    }
}
