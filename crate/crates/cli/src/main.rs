//! Command-line front end: population generation, CVR fitting and
//! evaluation, calibration, multiplier fitting, exact oracle runs,
//! multi-day simulation, and the allocation daemon.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use coupon_core::config::Config;
use coupon_core::cvr::{self, CvrModel};
use coupon_core::dual::{brute_force_oracle, default_lambda_bounds, fit_lambda_trisection, Instance};
use coupon_core::isotonic;
use coupon_core::ladder::PriceLadder;
use coupon_core::service::{Server, ServerConfig};
use coupon_core::sim::{self, derive_day_seed, prepare_strategies, run_day, SimConfig, StrategySpec};
use coupon_core::synthpop::{
    apply_campaign, generate_population, read_population_jsonl, true_purchase,
    write_population_jsonl, CampaignLevel, CampaignScenario,
};

#[derive(Parser)]
#[command(name = "coupon", about = "Budget-constrained real-time coupon allocation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population (and optionally a training log).
    GenPop(GenPopArgs),
    /// CVR model fitting and evaluation.
    #[command(subcommand)]
    Cvr(CvrCommand),
    /// Calibrate a CVR matrix CSV to be monotone in price.
    Calibrate(CalibrateArgs),
    /// Fit the budget multiplier on an instance CSV.
    FitLambda(FitLambdaArgs),
    /// Exact enumeration baseline for tiny instances.
    Oracle(OracleArgs),
    /// Multi-day strategy comparison on a population.
    Simulate(SimulateArgs),
    /// Run the allocation daemon.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenPopArgs {
    #[arg(long)]
    size: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Concurrent-campaign scenario for the training log.
    #[arg(long, default_value = "basic")]
    campaign: String,
    /// Also write a price-exposure training log (JSONL of records).
    #[arg(long)]
    records_out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum CvrCommand {
    /// Fit the built-in binned-frequency predictor.
    Fit(CvrFitArgs),
    /// Evaluate a model on held-out records (prints key=value lines).
    Eval(CvrEvalArgs),
}

#[derive(Args)]
struct CvrFitArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
    /// Ladder config file; defaults to the synthetic 16..8 ladder.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CvrEvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    records: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitLambdaArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    pb: f64,
    /// Bracket tolerance relative to the upper bound.
    #[arg(long, default_value_t = 1e-6)]
    eps: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    pb: f64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    pop: PathBuf,
    #[arg(long, default_value_t = 5)]
    days: u32,
    /// Comma-separated: random,manual,ipgroup:<k>,ldm,ldmir
    #[arg(long)]
    strategies: String,
    #[arg(long)]
    pb: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Trailing days pooled into the multiplier fit.
    #[arg(long, default_value_t = 3)]
    t0: usize,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
}

fn ladder_from(config: &Option<PathBuf>) -> Result<PriceLadder> {
    match config {
        Some(path) => {
            let cfg = Config::from_path(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            Ok(cfg.ladder()?)
        }
        None => Ok(coupon_core::synthpop::synthetic_ladder()),
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenPop(args) => gen_pop(args),
        Command::Cvr(CvrCommand::Fit(args)) => cvr_fit(args),
        Command::Cvr(CvrCommand::Eval(args)) => cvr_eval(args),
        Command::Calibrate(args) => calibrate(args),
        Command::FitLambda(args) => fit_lambda_cmd(args),
        Command::Oracle(args) => oracle_cmd(args),
        Command::Simulate(args) => simulate(args),
        Command::Serve(args) => serve(args),
    }
}

fn gen_pop(args: GenPopArgs) -> Result<()> {
    let pop = generate_population(args.size, args.seed)?;
    let out = BufWriter::new(File::create(&args.out)?);
    write_population_jsonl(&pop, out)?;
    eprintln!("wrote {} customers to {}", pop.customers.len(), args.out.display());

    if let Some(records_path) = &args.records_out {
        let level = CampaignLevel::parse(&args.campaign)?;
        let scenario = CampaignScenario::preset(level);
        let prices = apply_campaign(&pop, &scenario, args.seed ^ 0xc0ffee);
        let records: Vec<cvr::TrainingRecord> = pop
            .customers
            .iter()
            .zip(&prices)
            .map(|(c, &p)| cvr::TrainingRecord {
                f1: c.f1,
                f2: c.f2,
                price: p,
                purchased: true_purchase(c, p),
            })
            .collect();
        let w = BufWriter::new(File::create(records_path)?);
        cvr::write_records_jsonl(&records, w)?;
        eprintln!("wrote {} training records to {}", records.len(), records_path.display());
    } else if args.campaign != "basic" {
        bail!("--campaign only affects the training log; pass --records-out as well");
    }
    Ok(())
}

fn cvr_fit(args: CvrFitArgs) -> Result<()> {
    let ladder = ladder_from(&args.config)?;
    let records = cvr::read_records_jsonl(BufReader::new(File::open(&args.records)?))?;
    let model = cvr::fit(&records, &ladder, args.bins)?;
    model.to_json_writer(BufWriter::new(File::create(&args.out)?))?;
    eprintln!("fitted on {} records, wrote {}", records.len(), args.out.display());
    Ok(())
}

fn cvr_eval(args: CvrEvalArgs) -> Result<()> {
    let model = CvrModel::from_json_reader(BufReader::new(File::open(&args.model)?))?;
    let records = cvr::read_records_jsonl(BufReader::new(File::open(&args.records)?))?;
    if records.is_empty() {
        bail!("no records to evaluate");
    }
    let ladder = model.ladder().clone();
    let rows = cvr::eval_rows(&model, &records)?;

    let preds_at_price: Vec<f64> = rows.iter().map(|r| r.prediction_at_offer).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.purchased).collect();
    let vectors: Vec<coupon_core::ladder::CvrVector> = rows.into_iter().map(|r| r.vector).collect();

    println!("auc={}", cvr::auc(&preds_at_price, &labels)?);
    println!("pcoc={}", cvr::pcoc(&preds_at_price, &labels)?);
    println!("nonmonotonic_fraction={}", cvr::nonmonotonic_fraction(&vectors, &ladder)?);
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let rows = cvr::read_cvr_matrix_csv(BufReader::new(File::open(&args.input)?))?;
    if rows.is_empty() {
        bail!("empty CVR matrix");
    }
    let j = rows[0].1.len();
    let calibrated: Vec<(u64, coupon_core::ladder::CvrVector)> = rows
        .into_iter()
        .map(|(id, q)| Ok((id, isotonic::calibrate(&q)?)))
        .collect::<Result<_>>()?;
    cvr::write_cvr_matrix_csv(&calibrated, j, BufWriter::new(File::create(&args.out)?))?;
    eprintln!("calibrated {} rows into {}", calibrated.len(), args.out.display());
    Ok(())
}

fn fit_lambda_cmd(args: FitLambdaArgs) -> Result<()> {
    let ladder = ladder_from(&args.config)?;
    let inst =
        Instance::from_csv_reader(BufReader::new(File::open(&args.instance)?), ladder, args.pb)?;
    let (lo, hi) = default_lambda_bounds(&inst)?;
    let sol = fit_lambda_trisection(&inst, lo, hi, args.eps * hi)?;
    let payload = serde_json::json!({
        "lambda": sol.lambda,
        "objective": sol.objective,
        "bracket_width": sol.bracket_width,
        "assignment": inst
            .ids()
            .iter()
            .zip(&sol.assignment)
            .map(|(id, l)| serde_json::json!({
                "customer_id": id,
                "level": l.get(),
                "price": inst.ladder().price(*l),
            }))
            .collect::<Vec<_>>(),
        "fractional_ties": sol.fractional_ties,
    });
    serde_json::to_writer_pretty(BufWriter::new(File::create(&args.out)?), &payload)?;
    println!("lambda={}", sol.lambda);
    println!("objective={}", sol.objective);
    println!("fractional_ties={}", sol.fractional_ties.len());
    Ok(())
}

fn oracle_cmd(args: OracleArgs) -> Result<()> {
    let ladder = ladder_from(&args.config)?;
    let inst =
        Instance::from_csv_reader(BufReader::new(File::open(&args.instance)?), ladder, args.pb)?;
    let sol = brute_force_oracle(&inst)?;
    if !sol.feasible {
        println!("feasible=false");
        return Ok(());
    }
    println!("feasible=true");
    println!("objective={}", sol.objective);
    for (id, level) in inst.ids().iter().zip(&sol.assignment) {
        println!(
            "assign customer_id={id} level={} price={}",
            level.get(),
            inst.ladder().price(*level)
        );
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let pop = read_population_jsonl(BufReader::new(File::open(&args.pop)?))?;
    let specs: Vec<StrategySpec> = args
        .strategies
        .split(',')
        .map(|s| StrategySpec::parse(s.trim()).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    if specs.is_empty() {
        bail!("no strategies requested");
    }

    let mut cfg = SimConfig::new(args.pb);
    cfg.bins = args.bins;
    cfg.history_days = args.t0.max(1);

    std::fs::create_dir_all(&args.out)?;
    let model = sim::exposure_model(&pop, args.seed, cfg.bins)?;

    let mut reports = Vec::new();
    let mut decisions_file = BufWriter::new(File::create(args.out.join("decisions.jsonl"))?);
    let mut trace_paths: HashMap<String, PathBuf> = HashMap::new();

    // Days 0..t0 exist only as history; simulated days start at t0.
    for day in 0..args.days {
        let day_index = cfg.history_days as u64 + day as u64;
        let history: Vec<u64> = (1..=cfg.history_days as u64)
            .map(|k| derive_day_seed(args.seed, day_index - k))
            .collect();
        let mut strategies = prepare_strategies(&pop, &model, &specs, &cfg, args.seed, &history)?;
        let day_seed = derive_day_seed(args.seed, day_index);
        let out = run_day(&pop, &model, &mut strategies, &cfg, day, day_seed)?;

        for d in &out.decisions {
            serde_json::to_writer(&mut decisions_file, d)?;
            decisions_file.write_all(b"\n")?;
        }
        for (name, trace) in &out.traces {
            let fresh = !trace_paths.contains_key(name);
            if fresh {
                let path = if trace_paths.is_empty() {
                    args.out.join("lambda_trace.csv")
                } else {
                    args.out.join(format!("lambda_trace.{name}.csv"))
                };
                trace_paths.insert(name.clone(), path);
            }
            let path = trace_paths[name].clone();
            if fresh {
                sim::write_lambda_trace_csv(trace, BufWriter::new(File::create(&path)?))?;
            } else {
                let file = File::options().append(true).open(&path)?;
                sim::append_lambda_trace_csv(trace, BufWriter::new(file))?;
            }
        }
        eprintln!(
            "day {day}: {} arrivals | {}",
            out.report.arrivals,
            out.report
                .strategies
                .iter()
                .map(|s| format!("{} cvr={:.4} avg_price={:.2}", s.strategy, s.cvr, s.avg_price))
                .collect::<Vec<_>>()
                .join(" | ")
        );
        reports.push(out.report);
    }
    decisions_file.flush()?;

    let report_file = BufWriter::new(File::create(args.out.join("day_report.csv"))?);
    sim::write_day_reports_csv(&reports, &pop.ladder, report_file)?;
    eprintln!("wrote reports to {}", args.out.display());
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let cfg = Config::from_path(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let server_cfg = ServerConfig::from_config(&cfg)?;
    let listener = TcpListener::bind((args.bind.as_str(), args.port))
        .with_context(|| format!("binding {}:{}", args.bind, args.port))?;
    let server = Server::start(server_cfg, listener)?;
    eprintln!("listening on {}", server.addr());
    server.wait();
    Ok(())
}
