//! Command-line front end: build and optimize query plans, run them over
//! synthetic streams, reproduce the benchmark and ablation tables, and dump
//! annotated frames.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mmstream_core::bench::{
    check_report, make_context, optimize_with_phases, run_benchmark, run_plan, BenchConfig,
    Phase, PHASE_SETS,
};
use mmstream_core::datagen::dump_stream;
use mmstream_core::opt::reasoner::make_reasoner;
use mmstream_core::opt::{empirical_validate, estimate_cost};
use mmstream_core::plan::{
    deserialize_plan, serialize_plan, validate_plan, Operator, Plan, QueryId,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "mmstream", about = "Multimodal stream engine and plan super-optimizer")]
struct Cli {
    /// Benchmark configuration file (JSON); defaults are built in.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Stream seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a query plan and write naive + optimized plan files.
    Optimize(OptimizeArgs),
    /// Run a plan file over a stream and write metrics CSV.
    Run(RunArgs),
    /// Run the full benchmark suite (all queries x phase sets x seeds).
    Bench(BenchArgs),
    /// Phase-ablation table over all queries.
    Ablate,
    /// Synthetic stream tooling.
    Datagen(DatagenArgs),
}

#[derive(Args)]
struct OptimizeArgs {
    /// Query id (Q1..Q13).
    #[arg(long)]
    query: String,
    /// Comma-separated phases: semantic,logical,physical (empty = none).
    #[arg(long, default_value = "semantic,logical,physical")]
    phases: String,
}

#[derive(Args)]
struct RunArgs {
    /// Plan file produced by `optimize` (or hand-written).
    #[arg(long)]
    plan: PathBuf,
    /// Stream kind: tollbooth | volleyball.
    #[arg(long, default_value = "tollbooth")]
    stream: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 3000)]
    frames: u64,
    /// Catalog file; built-in default when absent.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Metrics CSV path.
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    /// Label recorded in the plan_variant column.
    #[arg(long, default_value = "custom")]
    variant: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Assert the acceptance bands and exit non-zero on failure.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct DatagenArgs {
    #[command(subcommand)]
    command: DatagenCommand,
}

#[derive(Subcommand)]
enum DatagenCommand {
    /// Write PPM frames plus an NDJSON annotation file.
    Dump {
        #[arg(long, default_value = "tollbooth")]
        stream: String,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value = "dump_out")]
        out: PathBuf,
    },
}

fn describe(plan: &Plan) -> String {
    plan.topo_order()
        .iter()
        .map(|id| match &plan.nodes[id].op {
            Operator::Extract { task, model_slot } => format!("Extract({}, {})", task.name(), model_slot),
            Operator::Skip { amount, condition } => format!("Skip({amount}, {condition})"),
            Operator::Crop { region } => format!("Crop({region:?})"),
            Operator::Downscale { factor } => format!("Downscale({factor})"),
            Operator::Filter { predicate } => {
                let attrs = predicate.referenced_attributes();
                if attrs.is_empty() {
                    "Filter(pixel)".to_string()
                } else {
                    format!("Filter({})", attrs.join(","))
                }
            }
            Operator::Aggregate { fn_, group_by, .. } => {
                format!("Aggregate({fn_:?} by {})", group_by.join(","))
            }
            op => op.tag().to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n  -> ")
}

fn load_config(cli: &Cli) -> Result<BenchConfig> {
    let mut config = match &cli.config {
        Some(path) => BenchConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn cmd_optimize(cli: &Cli, args: &OptimizeArgs) -> Result<()> {
    let config = load_config(cli)?;
    let query = QueryId::parse(&args.query).map_err(|_| {
        anyhow::anyhow!(
            "unknown query {}; valid ids: {}",
            args.query,
            QueryId::all().map(|q| q.name().to_string()).join(", ")
        )
    })?;
    let phases = Phase::parse_list(&args.phases)?;
    let seed = *config.seeds.first().unwrap_or(&42);

    std::fs::create_dir_all(&config.out_dir)?;
    let ctx = make_context(&config, query, seed)?;
    let reasoner = make_reasoner(&config.reasoner);

    let naive_path = config.out_dir.join(format!("{}_naive.json", query.name().to_lowercase()));
    std::fs::write(&naive_path, serialize_plan(&ctx.naive_plan))?;
    println!("naive plan ({}):\n  {}", naive_path.display(), describe(&ctx.naive_plan));

    let mut warnings = Vec::new();
    let mut current = ctx.naive_plan.clone();
    for upto in 1..=phases.len() {
        current =
            optimize_with_phases(&ctx, &phases[..upto], reasoner.as_ref(), &mut warnings)?;
        println!("\nafter {:?}:\n  {}", phases[upto - 1], describe(&current));
    }

    let report = validate_plan(&current);
    if !report.is_valid() {
        bail!("optimized plan failed validation:\n{report}");
    }
    let verdict = empirical_validate(&ctx.naive_plan, &current, &ctx, ctx.tau)?;
    println!(
        "\nvalidation: naive acc {:.3}, optimized acc {:.3}, relative {:.3} ({})",
        verdict.naive_accuracy,
        verdict.optimized_accuracy,
        verdict.relative_accuracy,
        if verdict.pass { "pass" } else { "FAIL" }
    );
    let estimate = estimate_cost(&current, &ctx)?;
    println!("estimated cost: {:.2} ms/frame", estimate.expected_ms_per_frame);

    let opt_path =
        config.out_dir.join(format!("{}_optimized.json", query.name().to_lowercase()));
    std::fs::write(&opt_path, serialize_plan(&current))?;
    println!("optimized plan written to {}", opt_path.display());
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<()> {
    let mut config = load_config(cli)?;
    if let Some(catalog) = &args.catalog {
        config.catalog_path = Some(catalog.clone());
    }
    let text = std::fs::read_to_string(&args.plan)
        .with_context(|| format!("reading {}", args.plan.display()))?;
    let plan = deserialize_plan(&text)?;
    let query = QueryId::parse(&plan.metadata.query_id)
        .map_err(|_| anyhow::anyhow!("plan metadata has no known query id"))?;
    match args.stream.as_str() {
        "tollbooth" | "volleyball" => {}
        other => bail!("unknown stream kind {other}"),
    }

    let outcome = run_plan(&config, query, &plan, args.seed, args.frames)?;
    let mut csv = String::from("query_id,plan_variant,fps,accuracy,frames,simulated_ms,outputs\n");
    csv.push_str(&format!(
        "{},{},{:.4},{:.4},{},{:.3},{}\n",
        query.name(),
        args.variant,
        outcome.metrics.fps,
        outcome.accuracy,
        outcome.metrics.frames_ingested,
        outcome.metrics.simulated_ms(),
        outcome.outputs.len()
    ));
    std::fs::write(&args.out, &csv)?;
    println!(
        "{}: fps {:.3}, accuracy {:.3}, {} outputs over {} frames -> {}",
        query.name(),
        outcome.metrics.fps,
        outcome.accuracy,
        outcome.outputs.len(),
        outcome.metrics.frames_ingested,
        args.out.display()
    );
    Ok(())
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> Result<i32> {
    let config = load_config(cli)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let report = run_benchmark(&config)?;
    let rows_path = config.out_dir.join("report.csv");
    let agg_path = config.out_dir.join("aggregate.csv");
    std::fs::write(&rows_path, report.rows_csv())?;
    std::fs::write(&agg_path, report.aggregate_csv())?;
    println!("{}", report.aggregate_table());
    println!("rows -> {}", rows_path.display());
    println!("aggregates -> {}", agg_path.display());

    if args.check {
        let checks = check_report(&report, &config);
        let mut failed = false;
        for (name, ok, detail) in &checks {
            println!("[{}] {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
            failed |= !ok;
        }
        if failed {
            return Ok(2);
        }
    }
    Ok(0)
}

fn cmd_ablate(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let report = run_benchmark(&config)?;
    println!("{}", report.aggregate_table());
    for (label, phases) in PHASE_SETS {
        if phases.is_empty() {
            continue;
        }
        println!("phase {label}:");
        for (query, (speedup, rel)) in report.query_means(label) {
            println!("  {query:<4} speedup {speedup:>7.2}x  relative accuracy {rel:.3}");
        }
    }
    let path = config.out_dir.join("ablation.csv");
    std::fs::write(&path, report.aggregate_csv())?;
    println!("ablation table -> {}", path.display());
    Ok(())
}

fn cmd_datagen(cli: &Cli, args: &DatagenArgs) -> Result<()> {
    let config = load_config(cli)?;
    match &args.command {
        DatagenCommand::Dump { stream, frames, out } => {
            let seed = *config.seeds.first().unwrap_or(&42);
            let mut source: Box<dyn mmstream_core::datagen::EventStream> = match stream.as_str() {
                "tollbooth" => Box::new(mmstream_core::datagen::gen_tollbooth(
                    mmstream_core::datagen::TollBoothConfig { seed, ..config.tollbooth.clone() },
                )?),
                "volleyball" => Box::new(mmstream_core::datagen::gen_volleyball(
                    mmstream_core::datagen::VolleyballConfig { seed, ..config.volleyball.clone() },
                )?),
                other => bail!("unknown stream kind {other}"),
            };
            dump_stream(source.as_mut(), *frames, out)?;
            println!("wrote {frames} frames + annotations.ndjson to {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Optimize(args) => cmd_optimize(&cli, args).map(|_| 0),
        Command::Run(args) => cmd_run(&cli, args).map(|_| 0),
        Command::Bench(args) => cmd_bench(&cli, args),
        Command::Ablate => cmd_ablate(&cli).map(|_| 0),
        Command::Datagen(args) => cmd_datagen(&cli, args).map(|_| 0),
    };
    match code {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
