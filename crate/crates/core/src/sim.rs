//! Multi-day marketplace simulation pitting allocation strategies against
//! each other on a synthetic population.
//!
//! Every strategy sees the identical arrival sequence for a day (common
//! random numbers); purchases resolve against the ground-truth demand model
//! at the price each strategy actually offered. Multiplier-based strategies
//! fit their multiplier on pooled arrivals from previous days and may run a
//! PID loop during the day.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cvr::CvrModel;
use crate::dual::{fit_lambda, offline_ip_group, Instance};
use crate::error::{Error, Result};
use crate::isotonic;
use crate::ladder::{argmax_level, BudgetTarget, Level, PriceLadder, ValueVector};
use crate::pid::{PidConfig, PidState};
use crate::synthpop::{sample_day, true_purchase, Customer, Population, Segment};

/// Deterministic per-day seed for a simulation run.
pub fn derive_day_seed(base: u64, day_index: u64) -> u64 {
    derive_seed(base, "day", day_index)
}

/// Exploration exposure: every customer sees a uniformly random ladder
/// price once, outcomes resolve against ground truth, and the built-in
/// predictor is fitted on the log. This is the identifiability traffic a
/// CVR model needs before any optimized strategy can run.
pub fn exposure_model(pop: &Population, seed: u64, bins: usize) -> Result<CvrModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "exposure", 0));
    let prices = pop.ladder.prices();
    let records: Vec<crate::cvr::TrainingRecord> = pop
        .customers
        .iter()
        .map(|c| {
            let p = prices[rng.random_range(0..prices.len())];
            crate::cvr::TrainingRecord {
                f1: c.f1,
                f2: c.f2,
                price: p,
                purchased: true_purchase(c, p),
            }
        })
        .collect();
    crate::cvr::fit(&records, &pop.ladder, bins)
}

/// Simple FNV-1a over (base, tag, k) for deriving independent seeds.
pub(crate) fn derive_seed(base: u64, tag: &str, k: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    };
    for b in base.to_le_bytes() {
        eat(b);
    }
    for b in tag.bytes() {
        eat(b);
    }
    for b in k.to_le_bytes() {
        eat(b);
    }
    h
}

/// Manual baseline: a fixed coupon level per customer segment.
#[derive(Clone, Debug)]
pub struct SegmentTable {
    levels: [Level; 5],
}

impl SegmentTable {
    /// Requires an entry for every segment.
    pub fn new(entries: &[(Segment, Level)], ladder: &PriceLadder) -> Result<Self> {
        let mut slots: [Option<Level>; 5] = [None; 5];
        for (seg, level) in entries {
            ladder.check(*level)?;
            let idx = Segment::ALL.iter().position(|s| s == seg).unwrap();
            slots[idx] = Some(*level);
        }
        let mut levels = [Level::new(1)?; 5];
        for (i, slot) in slots.into_iter().enumerate() {
            levels[i] = slot.ok_or_else(|| {
                Error::Config(format!("manual table missing segment {:?}", Segment::ALL[i].name()))
            })?;
        }
        Ok(SegmentTable { levels })
    }

    /// Graded default: frequent riders get the smallest coupon, new and
    /// churned customers the deepest ones. With quintile segments this
    /// averages out near the middle of the ladder.
    pub fn default_for(ladder: &PriceLadder) -> Result<Self> {
        let j = ladder.len();
        let pick = |frac: f64| -> Result<Level> {
            let idx = ((j as f64 - 1.0) * frac).round() as usize;
            ladder.level(idx + 1)
        };
        SegmentTable::new(
            &[
                (Segment::HighFreq, pick(0.0)?),
                (Segment::MediumFreq, pick(0.25)?),
                (Segment::LowFreq, pick(0.5)?),
                (Segment::Churned, pick(0.75)?),
                (Segment::New, pick(1.0)?),
            ],
            ladder,
        )
    }

    pub fn level(&self, seg: Segment) -> Level {
        let idx = Segment::ALL.iter().position(|s| *s == seg).unwrap();
        self.levels[idx]
    }
}

/// Requested strategy lineup.
#[derive(Clone, Debug)]
pub enum StrategySpec {
    Random,
    Manual { table: Option<SegmentTable> },
    OfflineIpGroup { groups: usize },
    Ldm { pid: bool },
    LdmIr { pid: bool },
}

impl StrategySpec {
    /// Parses the CLI form: `random`, `manual`, `ipgroup:<k>`, `ldm`, `ldmir`.
    pub fn parse(s: &str) -> Result<StrategySpec> {
        match s {
            "random" => Ok(StrategySpec::Random),
            "manual" => Ok(StrategySpec::Manual { table: None }),
            "ldm" => Ok(StrategySpec::Ldm { pid: true }),
            "ldmir" => Ok(StrategySpec::LdmIr { pid: true }),
            other => {
                if let Some(k) = other.strip_prefix("ipgroup:") {
                    let groups: usize = k
                        .parse()
                        .map_err(|_| Error::Argument(format!("bad group count {k:?}")))?;
                    return Ok(StrategySpec::OfflineIpGroup { groups });
                }
                Err(Error::Argument(format!("unknown strategy {other:?}")))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub p_b: f64,
    /// Length of the trading day (16 simulated hours by default).
    pub day_seconds: f64,
    pub pid_dt_seconds: f64,
    /// Final fraction of the day in which the manual baseline corrects
    /// toward the floor.
    pub manual_correction_fraction: f64,
    /// Days of pooled history used to fit multipliers.
    pub history_days: usize,
    /// Bins for the built-in predictor when one is fitted in-line.
    pub bins: usize,
    /// When false (default) decision records carry latency 0 so identical
    /// seeds reproduce identical bytes.
    pub record_latency: bool,
}

impl SimConfig {
    pub fn new(p_b: f64) -> Self {
        SimConfig {
            p_b,
            day_seconds: 57_600.0,
            pid_dt_seconds: 60.0,
            manual_correction_fraction: 0.25,
            history_days: 3,
            bins: 20,
            record_latency: false,
        }
    }
}

/// One allocation decision in the log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub day: u32,
    pub arrival: u64,
    pub customer_id: u64,
    pub strategy: String,
    pub level: Level,
    pub price: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub purchased: bool,
    pub latency_us: u64,
    pub t_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SegmentCvr {
    pub segment: Segment,
    pub exposed: u64,
    pub conversions: u64,
    pub cvr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub exposed: u64,
    pub conversions: u64,
    pub cvr: f64,
    /// Average realized price over purchases (0 when no purchases).
    pub avg_price: f64,
    pub avg_price_times_cvr: f64,
    /// |p_T - p_b| / p_b at end of day (0 when no purchases).
    pub pb_gap_rel: f64,
    pub segments: Vec<SegmentCvr>,
    /// Offered-price histogram in level order: (price, count).
    pub price_histogram: Vec<(f64, u64)>,
}

impl StrategyReport {
    /// Number of distinct prices actually offered.
    pub fn support_size(&self) -> usize {
        self.price_histogram.iter().filter(|(_, n)| *n > 0).count()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DayReport {
    pub day: u32,
    pub arrivals: u64,
    pub strategies: Vec<StrategyReport>,
}

/// One multiplier-trace sample per control step.
#[derive(Clone, Debug, Serialize)]
pub struct TracePoint {
    pub t: f64,
    pub lambda: f64,
    pub p_t: Option<f64>,
    pub e_t: f64,
}

enum PreparedKind {
    Random,
    Manual { table: SegmentTable },
    Group { level_of: HashMap<u64, Level>, lambda: f64 },
    Ldm { calibrated: bool, lambda_hat: f64, pid: Option<PidConfig>, state: PidState },
}

/// A strategy with its pre-day work done (fitted multiplier, group table).
pub struct PreparedStrategy {
    pub name: String,
    kind: PreparedKind,
}

impl PreparedStrategy {
    pub fn random() -> Self {
        PreparedStrategy { name: "random".into(), kind: PreparedKind::Random }
    }

    pub fn manual(table: SegmentTable) -> Self {
        PreparedStrategy { name: "manual".into(), kind: PreparedKind::Manual { table } }
    }

    /// Multiplier-rule strategy with an explicit fitted multiplier.
    pub fn ldm(name: &str, calibrated: bool, lambda_hat: f64, pid: Option<PidConfig>) -> Result<Self> {
        let state = PidState::init(lambda_hat, &PidConfig::open_loop(1.0, 60.0, 60.0)?)?;
        Ok(PreparedStrategy {
            name: name.into(),
            kind: PreparedKind::Ldm { calibrated, lambda_hat, pid, state },
        })
    }

    pub fn group(level_of: HashMap<u64, Level>, lambda: f64) -> Self {
        PreparedStrategy { name: "ipgroup".into(), kind: PreparedKind::Group { level_of, lambda } }
    }

    pub fn lambda_hat(&self) -> Option<f64> {
        match &self.kind {
            PreparedKind::Ldm { lambda_hat, .. } => Some(*lambda_hat),
            PreparedKind::Group { lambda, .. } => Some(*lambda),
            _ => None,
        }
    }
}

/// Builds the instance for a set of arrivals from model predictions with the
/// revenue objective; calibrates when asked.
pub fn arrivals_instance(
    arrivals: &[Customer],
    model: &CvrModel,
    ladder: &PriceLadder,
    budget: BudgetTarget,
    calibrated: bool,
) -> Result<Instance> {
    let mut rows = Vec::with_capacity(arrivals.len());
    let mut ids = Vec::with_capacity(arrivals.len());
    for c in arrivals {
        let raw = model.predict(c)?;
        let q = if calibrated { isotonic::calibrate(&raw)? } else { raw };
        let v = ValueVector::revenue(ladder, &q)?;
        ids.push(c.id);
        rows.push((q, v));
    }
    Instance::with_ids(rows, ids, ladder.clone(), budget, calibrated)
}

/// Pools arrivals over a window of past days and fits the multiplier on the
/// pooled set.
pub fn lambda_from_history(
    pop: &Population,
    model: &CvrModel,
    day_seeds: &[u64],
    p_b: f64,
    calibrated: bool,
) -> Result<f64> {
    if day_seeds.is_empty() {
        return Err(Error::Argument("need at least one history day".into()));
    }
    let mut pooled: Vec<Customer> = Vec::new();
    for &s in day_seeds {
        pooled.extend(sample_day(pop, s));
    }
    if pooled.is_empty() {
        return Err(Error::Data("no arrivals in the history window".into()));
    }
    let budget = BudgetTarget::new(p_b, &pop.ladder)?;
    let inst = arrivals_instance(&pooled, model, &pop.ladder, budget, calibrated)?;
    Ok(fit_lambda(&inst)?.lambda)
}

/// Runs the pre-day work for each requested strategy. Multiplier-rule
/// strategies fit on arrivals pooled over `history_seeds` (one seed per
/// trailing day); when empty, seeds derive from `seed` and the configured
/// history window.
pub fn prepare_strategies(
    pop: &Population,
    model: &CvrModel,
    specs: &[StrategySpec],
    cfg: &SimConfig,
    seed: u64,
    history_seeds: &[u64],
) -> Result<Vec<PreparedStrategy>> {
    let budget = BudgetTarget::new(cfg.p_b, &pop.ladder)?;
    let history: Vec<u64> = if history_seeds.is_empty() {
        (1..=cfg.history_days as u64).map(|k| derive_seed(seed, "history", k)).collect()
    } else {
        history_seeds.to_vec()
    };
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        match spec {
            StrategySpec::Random => out.push(PreparedStrategy::random()),
            StrategySpec::Manual { table } => {
                let table = match table {
                    Some(t) => t.clone(),
                    None => SegmentTable::default_for(&pop.ladder)?,
                };
                out.push(PreparedStrategy::manual(table));
            }
            StrategySpec::OfflineIpGroup { groups } => {
                // Batched baseline: solve over the whole registered base one
                // day ahead, show-up estimates as masses, then store one
                // level per customer.
                let mut rows = Vec::with_capacity(pop.customers.len());
                let mut masses = Vec::with_capacity(pop.customers.len());
                for c in &pop.customers {
                    let q = isotonic::calibrate(&model.predict(c)?)?;
                    let v = ValueVector::revenue(&pop.ladder, &q)?;
                    rows.push((q, v));
                    masses.push(c.show_up_prob);
                }
                let inst = Instance::with_masses(rows, masses, pop.ladder.clone(), budget)?;
                let sol = offline_ip_group(&inst, *groups, derive_seed(seed, "kmeans", 0))?;
                let level_of: HashMap<u64, Level> = pop
                    .customers
                    .iter()
                    .zip(&sol.assignment)
                    .map(|(c, l)| (c.id, *l))
                    .collect();
                out.push(PreparedStrategy::group(level_of, sol.lambda));
            }
            StrategySpec::Ldm { pid } => {
                let lambda = lambda_from_history(pop, model, &history, cfg.p_b, false)?;
                let pid_cfg = pid
                    .then(|| {
                        PidConfig::default_for(lambda, cfg.p_b, cfg.pid_dt_seconds, cfg.day_seconds)
                    })
                    .transpose()?;
                out.push(PreparedStrategy::ldm("ldm", false, lambda, pid_cfg)?);
            }
            StrategySpec::LdmIr { pid } => {
                let lambda = lambda_from_history(pop, model, &history, cfg.p_b, true)?;
                let pid_cfg = pid
                    .then(|| {
                        PidConfig::default_for(lambda, cfg.p_b, cfg.pid_dt_seconds, cfg.day_seconds)
                    })
                    .transpose()?;
                out.push(PreparedStrategy::ldm("ldmir", true, lambda, pid_cfg)?);
            }
        }
    }
    Ok(out)
}

pub struct DayOutput {
    pub report: DayReport,
    pub decisions: Vec<DecisionRecord>,
    /// Multiplier trace per PID-enabled strategy.
    pub traces: Vec<(String, Vec<TracePoint>)>,
}

struct StrategyDayState {
    exposed: u64,
    conversions: u64,
    price_sum_purchases: f64,
    seg_exposed: [u64; 5],
    seg_conversions: [u64; 5],
    histogram: Vec<u64>,
}

impl StrategyDayState {
    fn new(j: usize) -> Self {
        StrategyDayState {
            exposed: 0,
            conversions: 0,
            price_sum_purchases: 0.0,
            seg_exposed: [0; 5],
            seg_conversions: [0; 5],
            histogram: vec![0; j],
        }
    }

    fn realized_avg(&self) -> Option<f64> {
        (self.conversions > 0).then(|| self.price_sum_purchases / self.conversions as f64)
    }

    fn into_report(self, name: &str, ladder: &PriceLadder, p_b: f64) -> StrategyReport {
        let cvr = if self.exposed > 0 { self.conversions as f64 / self.exposed as f64 } else { 0.0 };
        let avg_price = self.realized_avg().unwrap_or(0.0);
        let pb_gap_rel = match self.realized_avg() {
            Some(p) => (p - p_b).abs() / p_b,
            None => 0.0,
        };
        StrategyReport {
            strategy: name.to_string(),
            exposed: self.exposed,
            conversions: self.conversions,
            cvr,
            avg_price,
            avg_price_times_cvr: avg_price * cvr,
            pb_gap_rel,
            segments: Segment::ALL
                .iter()
                .enumerate()
                .map(|(i, seg)| SegmentCvr {
                    segment: *seg,
                    exposed: self.seg_exposed[i],
                    conversions: self.seg_conversions[i],
                    cvr: if self.seg_exposed[i] > 0 {
                        self.seg_conversions[i] as f64 / self.seg_exposed[i] as f64
                    } else {
                        0.0
                    },
                })
                .collect(),
            price_histogram: ladder
                .levels()
                .map(|l| (ladder.price(l), self.histogram[l.idx()]))
                .collect(),
        }
    }
}

/// Runs one day. Arrivals are sampled from the population, timestamped
/// uniformly over the day, and every strategy decides on the identical
/// sequence. Ground truth resolves each purchase at the strategy's offered
/// price; PID-enabled strategies ingest their own outcomes.
pub fn run_day(
    pop: &Population,
    model: &CvrModel,
    strategies: &mut [PreparedStrategy],
    cfg: &SimConfig,
    day: u32,
    day_seed: u64,
) -> Result<DayOutput> {
    let ladder = &pop.ladder;
    let budget = BudgetTarget::new(cfg.p_b, ladder)?;
    let arrivals = sample_day(pop, day_seed);
    let mut times: Vec<f64> = {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(day_seed, "times", 0));
        (0..arrivals.len()).map(|_| rng.random::<f64>() * cfg.day_seconds).collect()
    };
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());

    for s in strategies.iter_mut() {
        if let PreparedKind::Ldm { lambda_hat, state, .. } = &mut s.kind {
            state.reset_day(*lambda_hat)?;
        }
    }

    let mut rngs: Vec<Option<ChaCha8Rng>> = strategies
        .iter()
        .enumerate()
        .map(|(i, s)| match s.kind {
            PreparedKind::Random => {
                Some(ChaCha8Rng::seed_from_u64(derive_seed(day_seed, "strategy", i as u64)))
            }
            _ => None,
        })
        .collect();

    let mut states: Vec<StrategyDayState> =
        strategies.iter().map(|_| StrategyDayState::new(ladder.len())).collect();
    let mut traces: Vec<(String, Vec<TracePoint>)> = strategies
        .iter()
        .filter_map(|s| match &s.kind {
            PreparedKind::Ldm { pid: Some(_), .. } => Some((s.name.clone(), Vec::new())),
            _ => None,
        })
        .collect();
    let mut decisions = Vec::with_capacity(arrivals.len() * strategies.len());

    for (arrival_idx, (customer, &t)) in arrivals.iter().zip(&times).enumerate() {
        let seg_idx = Segment::ALL.iter().position(|s| *s == customer.segment).unwrap();
        for (si, strategy) in strategies.iter_mut().enumerate() {
            let started = cfg.record_latency.then(Instant::now);
            let (level, lambda_snapshot) = match &mut strategy.kind {
                PreparedKind::Random => {
                    let rng = rngs[si].as_mut().expect("random strategy has an rng");
                    (Level::from_idx(rng.random_range(0..ladder.len())), None)
                }
                PreparedKind::Manual { table } => {
                    let base = table.level(customer.segment);
                    let in_window = t >= cfg.day_seconds * (1.0 - cfg.manual_correction_fraction);
                    let level = if in_window {
                        match states[si].realized_avg() {
                            Some(p_t) if p_t < cfg.p_b => {
                                ladder.level(base.get().saturating_sub(1).max(1))?
                            }
                            Some(p_t) if p_t > cfg.p_b => {
                                ladder.level((base.get() + 1).min(ladder.len()))?
                            }
                            _ => base,
                        }
                    } else {
                        base
                    };
                    (level, None)
                }
                PreparedKind::Group { level_of, lambda } => {
                    let level = *level_of.get(&customer.id).ok_or_else(|| {
                        Error::Config(format!("no stored level for customer {}", customer.id))
                    })?;
                    (level, Some(*lambda))
                }
                PreparedKind::Ldm { calibrated, pid, state, .. } => {
                    if let Some(pc) = pid {
                        while state.clock() + pc.dt_seconds <= t {
                            state.step(pc);
                            let trace = traces
                                .iter_mut()
                                .find(|(n, _)| n == &strategy.name)
                                .expect("trace exists for pid strategy");
                            trace.1.push(TracePoint {
                                t: state.clock(),
                                lambda: state.lambda(),
                                p_t: state.realized_avg_price(),
                                e_t: state.error_now(pc),
                            });
                        }
                    }
                    let raw = model.predict(customer)?;
                    let q = if *calibrated { isotonic::calibrate(&raw)? } else { raw };
                    let v = ValueVector::revenue(ladder, &q)?;
                    let level = argmax_level(&v, &q, ladder, budget, state.lambda())?;
                    (level, Some(state.lambda()))
                }
            };

            let price = ladder.price(level);
            let purchased = true_purchase(customer, price);
            if let PreparedKind::Ldm { state, .. } = &mut strategy.kind {
                state.record_outcome(price, purchased);
            }

            let st = &mut states[si];
            st.exposed += 1;
            st.histogram[level.idx()] += 1;
            st.seg_exposed[seg_idx] += 1;
            if purchased {
                st.conversions += 1;
                st.price_sum_purchases += price;
                st.seg_conversions[seg_idx] += 1;
            }

            decisions.push(DecisionRecord {
                day,
                arrival: arrival_idx as u64,
                customer_id: customer.id,
                strategy: strategy.name.clone(),
                level,
                price,
                lambda: lambda_snapshot,
                purchased,
                latency_us: started.map_or(0, |s| s.elapsed().as_micros() as u64),
                t_seconds: t,
            });
        }
    }

    let report = DayReport {
        day,
        arrivals: arrivals.len() as u64,
        strategies: strategies
            .iter()
            .zip(states)
            .map(|(s, st)| st.into_report(&s.name, ladder, cfg.p_b))
            .collect(),
    };
    Ok(DayOutput { report, decisions, traces })
}

/// One row of the multiplier-misspecification study.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub deviation: f64,
    pub pid: bool,
    /// Share of arrivals whose offered price differs from the
    /// true-multiplier run.
    pub deviated_user_share: f64,
    /// Relative objective (model-value) deviation vs the true-multiplier run.
    pub objective_deviation: f64,
    /// Signed relative gap between the end-of-day realized average price and
    /// the floor.
    pub pb_deviation: f64,
}

/// Fits the true multiplier on the day's actual arrivals, then replays the
/// same day under perturbed multipliers with and without the PID loop.
pub fn misspecification_sweep(
    pop: &Population,
    model: &CvrModel,
    deviations: &[f64],
    cfg: &SimConfig,
    day_seed: u64,
) -> Result<Vec<SweepRow>> {
    let budget = BudgetTarget::new(cfg.p_b, &pop.ladder)?;
    let arrivals = sample_day(pop, day_seed);
    if arrivals.is_empty() {
        return Err(Error::Data("no arrivals on the sweep day".into()));
    }
    let inst = arrivals_instance(&arrivals, model, &pop.ladder, budget, true)?;
    let lambda_star = fit_lambda(&inst)?.lambda;

    let run = |lambda_hat: f64, pid: bool| -> Result<(Vec<f64>, f64, Option<f64>)> {
        let pid_cfg = pid
            .then(|| PidConfig::default_for(lambda_hat, cfg.p_b, cfg.pid_dt_seconds, cfg.day_seconds))
            .transpose()?;
        let mut strategies = vec![PreparedStrategy::ldm("ldmir", true, lambda_hat, pid_cfg)?];
        let out = run_day(pop, model, &mut strategies, cfg, 0, day_seed)?;
        let prices: Vec<f64> = out.decisions.iter().map(|d| d.price).collect();
        let value: f64 = out
            .decisions
            .iter()
            .map(|d| {
                let i = d.arrival as usize;
                inst.v_row(i)[d.level.idx()]
            })
            .sum();
        let p_t = out.report.strategies[0].realized_avg();
        Ok((prices, value, p_t))
    };

    let (oracle_prices, oracle_value, _) = run(lambda_star, false)?;

    let mut rows = Vec::new();
    for &d in deviations {
        for pid in [false, true] {
            let (prices, value, p_t) = run(lambda_star * (1.0 + d), pid)?;
            let deviated = prices
                .iter()
                .zip(&oracle_prices)
                .filter(|(a, b)| (*a - *b).abs() > 1e-9)
                .count() as f64
                / prices.len() as f64;
            let objective_deviation = (value - oracle_value) / oracle_value.abs().max(1e-12);
            let pb_deviation = match p_t {
                Some(p) => (p - cfg.p_b) / cfg.p_b,
                None => 0.0,
            };
            rows.push(SweepRow {
                deviation: d,
                pid,
                deviated_user_share: deviated,
                objective_deviation,
                pb_deviation,
            });
        }
    }
    Ok(rows)
}

impl StrategyReport {
    fn realized_avg(&self) -> Option<f64> {
        (self.conversions > 0).then_some(self.avg_price)
    }
}

/// `day_report.csv`: one row per (day, strategy) with per-segment CVR and
/// the offered-price histogram.
pub fn write_day_reports_csv<W: Write>(reports: &[DayReport], ladder: &PriceLadder, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec![
        "day".to_string(),
        "strategy".to_string(),
        "exposed".to_string(),
        "conversions".to_string(),
        "cvr".to_string(),
        "avg_price".to_string(),
        "avg_price_x_cvr".to_string(),
        "pb_gap_rel".to_string(),
    ];
    for seg in Segment::ALL {
        header.push(format!("cvr_{}", seg.name()));
    }
    for l in ladder.levels() {
        header.push(format!("offered_{}", ladder.price(l)));
    }
    wtr.write_record(&header)?;
    for day in reports {
        for s in &day.strategies {
            let mut rec = vec![
                day.day.to_string(),
                s.strategy.clone(),
                s.exposed.to_string(),
                s.conversions.to_string(),
                format!("{:.6}", s.cvr),
                format!("{:.6}", s.avg_price),
                format!("{:.6}", s.avg_price_times_cvr),
                format!("{:.6}", s.pb_gap_rel),
            ];
            for seg in &s.segments {
                rec.push(format!("{:.6}", seg.cvr));
            }
            for (_, count) in &s.price_histogram {
                rec.push(count.to_string());
            }
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_decisions_jsonl<W: Write>(decisions: &[DecisionRecord], mut w: W) -> Result<()> {
    for d in decisions {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// `t,lambda,p_t,e_t` rows; `p_t` is empty before the first purchase.
pub fn write_lambda_trace_csv<W: Write>(trace: &[TracePoint], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["t", "lambda", "p_t", "e_t"])?;
    write_trace_rows(trace, &mut wtr)?;
    wtr.flush()?;
    Ok(())
}

/// Appends rows without a header (multi-day traces).
pub fn append_lambda_trace_csv<W: Write>(trace: &[TracePoint], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    write_trace_rows(trace, &mut wtr)?;
    wtr.flush()?;
    Ok(())
}

fn write_trace_rows<W: Write>(trace: &[TracePoint], wtr: &mut csv::Writer<W>) -> Result<()> {
    for p in trace {
        wtr.write_record(&[
            format!("{}", p.t),
            format!("{}", p.lambda),
            p.p_t.map_or(String::new(), |x| format!("{x}")),
            format!("{}", p.e_t),
        ])?;
    }
    Ok(())
}
