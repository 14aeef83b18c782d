//! Offline fitting of the budget multiplier and exact baselines.
//!
//! For an instance of customers with calibrated conversion vectors `q` and
//! value vectors `v` over a shared ladder, the coupled problem is to pick
//! one level per customer maximizing total value subject to the cleared
//! budget constraint `sum_i q[i][j(i)] * (p[j(i)] - p_b) >= 0` (the ratio
//! form times its positive denominator). Dualizing that constraint with
//! multiplier `lambda >= 0` decomposes the problem per customer:
//!
//! ```text
//! L(lambda) = sum_i mass_i * max_j ( v[i][j] - lambda * q[i][j] * (p_b - p[j]) )
//! ```
//!
//! `L` is an upper bound on the constrained optimum for every `lambda`
//! (weak duality), piecewise linear, and convex in this maximization sign,
//! so the tightest bound — the dual optimum — is its minimum over
//! `lambda >= 0`, equivalently the maximum of the concave mirrored form.
//! [`fit_lambda_trisection`] brackets that optimum by trisection.
//! [`brute_force_oracle`] enumerates tiny instances exactly, and
//! [`offline_ip_group`] reproduces the batched group-level baseline
//! (cluster, solve at centroid granularity, assign group-wide).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::ladder::{best_reduced, BudgetTarget, CvrVector, Level, PriceLadder, ValueVector, TIE_TOL};

/// Customers processed per parallel chunk. Fixed so floating-point sums
/// combine in a deterministic order regardless of thread scheduling.
const CHUNK: usize = 8192;

#[derive(Clone, Debug)]
pub struct Instance {
    ids: Vec<u64>,
    /// Row-major `n x J` conversion probabilities.
    q: Vec<f64>,
    /// Row-major `n x J` values.
    v: Vec<f64>,
    /// Per-customer weight (1 for individuals; group size or pooled show-up
    /// mass for aggregated instances).
    masses: Vec<f64>,
    prices: Vec<f64>,
    ladder: PriceLadder,
    budget: BudgetTarget,
}

impl Instance {
    /// Calibrated-input constructor: conversion vectors must be monotone
    /// non-increasing in price; violations are rejected.
    pub fn new(
        customers: Vec<(CvrVector, ValueVector)>,
        ladder: PriceLadder,
        budget: BudgetTarget,
    ) -> Result<Self> {
        let n = customers.len();
        Self::build(customers, vec![1.0; n], (0..n as u64).collect(), ladder, budget, true)
    }

    /// Accepts uncalibrated (possibly non-monotone) conversion vectors, for
    /// baselines that deliberately run on raw predictions.
    pub fn new_raw(
        customers: Vec<(CvrVector, ValueVector)>,
        ladder: PriceLadder,
        budget: BudgetTarget,
    ) -> Result<Self> {
        let n = customers.len();
        Self::build(customers, vec![1.0; n], (0..n as u64).collect(), ladder, budget, false)
    }

    /// Weighted variant used for group-level instances.
    pub fn with_masses(
        customers: Vec<(CvrVector, ValueVector)>,
        masses: Vec<f64>,
        ladder: PriceLadder,
        budget: BudgetTarget,
    ) -> Result<Self> {
        let n = customers.len();
        Self::build(customers, masses, (0..n as u64).collect(), ladder, budget, false)
    }

    /// Unit-mass constructor with explicit customer ids; monotonicity is
    /// enforced only when the rows are declared calibrated.
    pub fn with_ids(
        customers: Vec<(CvrVector, ValueVector)>,
        ids: Vec<u64>,
        ladder: PriceLadder,
        budget: BudgetTarget,
        calibrated: bool,
    ) -> Result<Self> {
        let n = customers.len();
        Self::build(customers, vec![1.0; n], ids, ladder, budget, calibrated)
    }

    fn build(
        customers: Vec<(CvrVector, ValueVector)>,
        masses: Vec<f64>,
        ids: Vec<u64>,
        ladder: PriceLadder,
        budget: BudgetTarget,
        require_monotone: bool,
    ) -> Result<Self> {
        if customers.is_empty() {
            return Err(Error::Data("empty instance: no customers".into()));
        }
        if masses.len() != customers.len() || ids.len() != customers.len() {
            return Err(Error::Argument("masses/ids must match customer count".into()));
        }
        if masses.iter().any(|m| !m.is_finite() || *m <= 0.0) {
            return Err(Error::Argument("masses must be finite and > 0".into()));
        }
        if ladder.max_price() < budget.get() {
            return Err(Error::DegenerateBudget(format!(
                "every ladder price is below the budget floor {}; the average-price constraint \
                 cannot be satisfied",
                budget.get()
            )));
        }
        let j = ladder.len();
        let mut q = Vec::with_capacity(customers.len() * j);
        let mut v = Vec::with_capacity(customers.len() * j);
        for (i, (qi, vi)) in customers.iter().enumerate() {
            if qi.len() != j || vi.len() != j {
                return Err(Error::Data(format!(
                    "customer {i}: vector length does not match ladder ({j} levels)"
                )));
            }
            if require_monotone && !qi.is_monotone() {
                return Err(Error::Data(format!(
                    "customer {i}: conversion vector is not monotone non-increasing in price; \
                     calibrate before loading"
                )));
            }
            q.extend_from_slice(qi.as_slice());
            v.extend_from_slice(vi.as_slice());
        }
        Ok(Instance { ids, q, v, masses, prices: ladder.prices(), ladder, budget })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn levels(&self) -> usize {
        self.prices.len()
    }

    pub fn ladder(&self) -> &PriceLadder {
        &self.ladder
    }

    pub fn budget(&self) -> BudgetTarget {
        self.budget
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn q_row(&self, i: usize) -> &[f64] {
        let j = self.levels();
        &self.q[i * j..(i + 1) * j]
    }

    pub fn v_row(&self, i: usize) -> &[f64] {
        let j = self.levels();
        &self.v[i * j..(i + 1) * j]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    /// Slack of the cleared budget constraint under an assignment:
    /// `sum_i mass_i * q[i][j(i)] * (p[j(i)] - p_b)`; feasible iff >= 0.
    pub fn budget_slack(&self, assignment: &[Level]) -> f64 {
        let pb = self.budget.get();
        assignment
            .iter()
            .enumerate()
            .map(|(i, l)| self.masses[i] * self.q_row(i)[l.idx()] * (self.prices[l.idx()] - pb))
            .sum()
    }

    /// Total value of an assignment.
    pub fn assignment_value(&self, assignment: &[Level]) -> f64 {
        assignment
            .iter()
            .enumerate()
            .map(|(i, l)| self.masses[i] * self.v_row(i)[l.idx()])
            .sum()
    }

    /// Expected average offered price under an assignment (conversion-
    /// weighted), the quantity the budget floor constrains.
    pub fn expected_avg_price(&self, assignment: &[Level]) -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, l) in assignment.iter().enumerate() {
            let w = self.masses[i] * self.q_row(i)[l.idx()];
            num += w * self.prices[l.idx()];
            den += w;
        }
        (den > 0.0).then_some(num / den)
    }

    /// Loads `customer_id,q_1..q_J,v_1..v_J` rows. Conversion vectors must
    /// be calibrated (monotone); violations are rejected here.
    pub fn from_csv_reader<R: Read>(r: R, ladder: PriceLadder, p_b: f64) -> Result<Instance> {
        let budget = BudgetTarget::new(p_b, &ladder)?;
        let j = ladder.len();
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() != 1 + 2 * j {
            return Err(Error::Schema(format!(
                "expected 1 + 2*{j} columns (customer_id,q_1..q_{j},v_1..v_{j}), found {}",
                headers.len()
            )));
        }
        if headers.get(0) != Some("customer_id") {
            return Err(Error::Schema("first column must be customer_id".into()));
        }
        for k in 0..j {
            let want_q = format!("q_{}", k + 1);
            let want_v = format!("v_{}", k + 1);
            if headers.get(1 + k) != Some(want_q.as_str()) {
                return Err(Error::Schema(format!("expected column {want_q}")));
            }
            if headers.get(1 + j + k) != Some(want_v.as_str()) {
                return Err(Error::Schema(format!("expected column {want_v}")));
            }
        }
        let mut ids = Vec::new();
        let mut customers = Vec::new();
        for (lineno, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = lineno + 2;
            if rec.len() != 1 + 2 * j {
                return Err(Error::Schema(format!("row {row}: wrong field count")));
            }
            let id: u64 = rec[0]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("row {row}: bad customer id {:?}", &rec[0])))?;
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Data(format!("row {row}: bad number {s:?}")))
            };
            let q: Vec<f64> = rec.iter().skip(1).take(j).map(parse).collect::<Result<_>>()?;
            let v: Vec<f64> = rec.iter().skip(1 + j).map(parse).collect::<Result<_>>()?;
            ids.push(id);
            customers.push((
                CvrVector::new(q).map_err(|e| Error::Data(format!("row {row}: {e}")))?,
                ValueVector::new(v).map_err(|e| Error::Data(format!("row {row}: {e}")))?,
            ));
        }
        let n = customers.len();
        Self::build(customers, vec![1.0; n], ids, ladder, budget, true)
    }

    pub fn to_csv_writer<W: Write>(&self, w: W) -> Result<()> {
        let j = self.levels();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["customer_id".to_string()];
        header.extend((1..=j).map(|k| format!("q_{k}")));
        header.extend((1..=j).map(|k| format!("v_{k}")));
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.ids[i].to_string()];
            rec.extend(self.q_row(i).iter().map(|x| format!("{x}")));
            rec.extend(self.v_row(i).iter().map(|x| format!("{x}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn chunk_ranges(n: usize) -> Vec<std::ops::Range<usize>> {
    (0..n).step_by(CHUNK).map(|s| s..(s + CHUNK).min(n)).collect()
}

/// Dual value only; the trisection hot path.
pub fn dual_value(inst: &Instance, lambda: f64) -> f64 {
    let pb = inst.budget.get();
    let parts: Vec<f64> = chunk_ranges(inst.len())
        .into_par_iter()
        .map(|r| {
            let mut acc = 0.0;
            for i in r {
                let (_, best) = best_reduced(inst.v_row(i), inst.q_row(i), &inst.prices, pb, lambda);
                acc += inst.masses[i] * best;
            }
            acc
        })
        .collect();
    parts.into_iter().sum()
}

/// Dual value plus the per-customer argmax assignment at `lambda`
/// (lowest-coupon tie rule).
pub fn dual_objective(inst: &Instance, lambda: f64) -> (f64, Vec<Level>) {
    let pb = inst.budget.get();
    let parts: Vec<(f64, Vec<Level>)> = chunk_ranges(inst.len())
        .into_par_iter()
        .map(|r| {
            let mut acc = 0.0;
            let mut levels = Vec::with_capacity(r.len());
            for i in r {
                let (j, best) = best_reduced(inst.v_row(i), inst.q_row(i), &inst.prices, pb, lambda);
                acc += inst.masses[i] * best;
                levels.push(Level::from_idx(j));
            }
            (acc, levels)
        })
        .collect();
    let mut total = 0.0;
    let mut assignment = Vec::with_capacity(inst.len());
    for (part, levels) in parts {
        total += part;
        assignment.extend(levels);
    }
    (total, assignment)
}

/// A customer whose top reduced values tie at the fitted multiplier; the
/// only candidates for fractional mass in the relaxed problem.
#[derive(Clone, Debug, Serialize)]
pub struct FractionalTie {
    pub customer: usize,
    pub customer_id: u64,
    pub levels: Vec<Level>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DualSolution {
    /// Fitted multiplier (midpoint of the final trisection bracket).
    pub lambda: f64,
    /// Dual bound `L(lambda)`.
    pub objective: f64,
    /// Per-customer argmax levels at `lambda`.
    pub assignment: Vec<Level>,
    /// Per-customer attained maxima of the reduced value.
    pub reduced_max: Vec<f64>,
    /// Customers with near-tied top levels at `lambda`.
    pub fractional_ties: Vec<FractionalTie>,
    /// Width of the final bracket (`<= eps`).
    pub bracket_width: f64,
}

fn check_finite(name: &str, x: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::Argument(format!("{name} must be finite, got {x}")));
    }
    Ok(())
}

/// Trisection search for the dual-optimal multiplier on `[lambda_low,
/// lambda_high]`. Keeps the third with the smaller dual value (the bound is
/// convex in this sign) until the bracket is narrower than `eps`, then
/// evaluates everything at the bracket midpoint.
pub fn fit_lambda_trisection(
    inst: &Instance,
    lambda_low: f64,
    lambda_high: f64,
    eps: f64,
) -> Result<DualSolution> {
    check_finite("lambda_low", lambda_low)?;
    check_finite("lambda_high", lambda_high)?;
    check_finite("eps", eps)?;
    if lambda_low < 0.0 {
        return Err(Error::Argument(format!("lambda_low must be >= 0, got {lambda_low}")));
    }
    if lambda_low >= lambda_high {
        return Err(Error::Argument(format!(
            "need lambda_low < lambda_high, got [{lambda_low}, {lambda_high}]"
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Argument(format!("eps must be > 0, got {eps}")));
    }

    let mut lo = lambda_low;
    let mut hi = lambda_high;
    while hi - lo > eps {
        let third = (hi - lo) / 3.0;
        let m1 = lo + third;
        let m2 = hi - third;
        if m1 <= lo || m2 >= hi {
            break; // bracket below floating-point resolution
        }
        if dual_value(inst, m1) <= dual_value(inst, m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }

    let lambda = 0.5 * (lo + hi);
    let bracket_width = hi - lo;
    let (objective, assignment) = dual_objective(inst, lambda);

    let pb = inst.budget.get();
    let mut reduced_max = Vec::with_capacity(inst.len());
    let mut fractional_ties = Vec::new();
    for i in 0..inst.len() {
        let q = inst.q_row(i);
        let v = inst.v_row(i);
        let mut best = f64::NEG_INFINITY;
        let mut span: f64 = 0.0;
        for j in 0..inst.levels() {
            let coef = q[j] * (pb - inst.prices[j]);
            span = span.max(coef.abs());
            let val = v[j] - lambda * coef;
            if val > best {
                best = val;
            }
        }
        reduced_max.push(best);
        // Levels within the lambda-uncertainty of the top are tie candidates.
        let tol = bracket_width * span + TIE_TOL;
        let tied: Vec<Level> = (0..inst.levels())
            .filter(|&j| {
                let val = v[j] - lambda * q[j] * (pb - inst.prices[j]);
                val >= best - tol
            })
            .map(Level::from_idx)
            .collect();
        if tied.len() > 1 {
            fractional_ties.push(FractionalTie { customer: i, customer_id: inst.ids[i], levels: tied });
        }
    }

    Ok(DualSolution { lambda, objective, assignment, reduced_max, fractional_ties, bracket_width })
}

/// Default bracket: `lambda_low = 0` and, over levels priced below the
/// budget floor with positive conversion,
/// `lambda_high = max (v[i][j] - min_k v[i][k]) / (q[i][j] * (p_b - p[j])) + 1`.
/// Past that multiplier no below-floor level can win any argmax, so the
/// dual optimum is interior to the bracket.
pub fn default_lambda_bounds(inst: &Instance) -> Result<(f64, f64)> {
    let pb = inst.budget.get();
    let mut hi: f64 = 0.0;
    let mut found = false;
    for i in 0..inst.len() {
        let v = inst.v_row(i);
        let q = inst.q_row(i);
        let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
        for j in 0..inst.levels() {
            let gap = pb - inst.prices[j];
            if gap > 0.0 && q[j] > 0.0 {
                found = true;
                hi = hi.max((v[j] - vmin) / (q[j] * gap));
            }
        }
    }
    if !found {
        return Err(Error::DegenerateBudget(
            "no ladder level priced below the budget floor with positive conversion; \
             the constraint can never bind and the multiplier is identically optimal at 0"
                .into(),
        ));
    }
    Ok((0.0, hi + 1.0))
}

/// Fits with the default bracket and a relative tolerance of 1e-6 times the
/// upper bound (assignments are step functions of the multiplier, so finer
/// resolution buys nothing).
pub fn fit_lambda(inst: &Instance) -> Result<DualSolution> {
    let (lo, hi) = default_lambda_bounds(inst)?;
    fit_lambda_trisection(inst, lo, hi, 1e-6 * hi)
}

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub feasible: bool,
    /// Best feasible total value; meaningful only when `feasible`.
    pub objective: f64,
    pub assignment: Vec<Level>,
}

/// Exhaustive enumeration of all `J^N` assignments. Only for desk-scale
/// verification: at most 10 customers and 4 levels.
pub fn brute_force_oracle(inst: &Instance) -> Result<OracleSolution> {
    let n = inst.len();
    let j = inst.levels();
    if n > 10 || j > 4 {
        return Err(Error::Size(format!(
            "oracle enumerates J^N assignments; got N={n}, J={j} (limits: N<=10, J<=4)"
        )));
    }
    let pb = inst.budget.get();
    let mut current = vec![0usize; n];
    let mut best_value = f64::NEG_INFINITY;
    let mut best: Option<Vec<usize>> = None;
    loop {
        let mut slack = 0.0;
        let mut value = 0.0;
        for (i, &ji) in current.iter().enumerate() {
            let m = inst.masses[i];
            slack += m * inst.q_row(i)[ji] * (inst.prices[ji] - pb);
            value += m * inst.v_row(i)[ji];
        }
        if slack >= 0.0 && value > best_value {
            best_value = value;
            best = Some(current.clone());
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == n {
                let solution = match best {
                    Some(assign) => OracleSolution {
                        feasible: true,
                        objective: best_value,
                        assignment: assign.into_iter().map(Level::from_idx).collect(),
                    },
                    None => OracleSolution {
                        feasible: false,
                        objective: f64::NEG_INFINITY,
                        assignment: Vec::new(),
                    },
                };
                return Ok(solution);
            }
            current[pos] += 1;
            if current[pos] < j {
                break;
            }
            current[pos] = 0;
            pos += 1;
        }
    }
}

/// Customers whose top-two reduced values at `lambda` are within `tol`,
/// with every level inside the tolerance listed.
pub fn fractionality_report(inst: &Instance, lambda: f64, tol: f64) -> Vec<FractionalTie> {
    let pb = inst.budget.get();
    let mut out = Vec::new();
    for i in 0..inst.len() {
        let (best_j, best, second) =
            crate::ladder::top_two_reduced(inst.v_row(i), inst.q_row(i), &inst.prices, pb, lambda);
        if second >= best - tol {
            let levels: Vec<Level> = (0..inst.levels())
                .filter(|&j| {
                    let val = inst.v_row(i)[j] - lambda * inst.q_row(i)[j] * (pb - inst.prices[j]);
                    val >= best - tol
                })
                .map(Level::from_idx)
                .collect();
            debug_assert!(levels.contains(&Level::from_idx(best_j)));
            out.push(FractionalTie { customer: i, customer_id: inst.ids[i], levels });
        }
    }
    out
}

/// Relative gap between multipliers fitted independently on two arrival
/// samples from the same population.
pub fn prop1_gap(a: &Instance, b: &Instance) -> Result<f64> {
    let la = fit_lambda(a)?.lambda;
    let lb = fit_lambda(b)?.lambda;
    Ok((la - lb).abs() / la.max(lb).max(1e-12))
}

/// Group-level batched baseline output.
#[derive(Clone, Debug)]
pub struct GroupSolution {
    /// Level per original customer (every member of a group shares one).
    pub assignment: Vec<Level>,
    /// Group index per customer.
    pub group_of: Vec<usize>,
    /// Level chosen for each group.
    pub group_levels: Vec<Level>,
    /// Multiplier fitted on the centroid instance.
    pub lambda: f64,
    /// Total value of the group assignment on the original instance.
    pub objective_value: f64,
}

/// The batched baseline: cluster customers by their concatenated
/// (conversion, value/base-price) vectors, solve the dual at centroid
/// granularity with group sizes as masses, and give every member the
/// group's level.
pub fn offline_ip_group(inst: &Instance, groups: usize, seed: u64) -> Result<GroupSolution> {
    let n = inst.len();
    if groups == 0 {
        return Err(Error::Argument("group count must be >= 1".into()));
    }
    if groups > n {
        return Err(Error::Argument(format!("{groups} groups for {n} customers")));
    }
    let j = inst.levels();
    let p0 = inst.ladder.base_price();
    let dims = 2 * j;
    let mut features = Vec::with_capacity(n * dims);
    for i in 0..n {
        features.extend_from_slice(inst.q_row(i));
        features.extend(inst.v_row(i).iter().map(|x| x / p0));
    }

    let (group_of, centroids) = kmeans(&features, dims, groups, seed, 50);

    let mut masses = vec![0.0f64; groups];
    for (i, &g) in group_of.iter().enumerate() {
        masses[g] += inst.masses[i];
    }
    let mut members: Vec<(CvrVector, ValueVector)> = Vec::with_capacity(groups);
    for g in 0..groups {
        let c = &centroids[g * dims..(g + 1) * dims];
        let q: Vec<f64> = c[..j].iter().map(|x| x.clamp(0.0, 1.0)).collect();
        let v: Vec<f64> = c[j..].iter().map(|x| x * p0).collect();
        members.push((CvrVector::new(q)?, ValueVector::new(v)?));
    }
    let group_inst = Instance::with_masses(members, masses, inst.ladder.clone(), inst.budget)?;
    let fitted = fit_lambda(&group_inst)?;
    let group_levels = fitted.assignment.clone();
    let assignment: Vec<Level> = group_of.iter().map(|&g| group_levels[g]).collect();
    let objective_value = inst.assignment_value(&assignment);
    Ok(GroupSolution { assignment, group_of, group_levels, lambda: fitted.lambda, objective_value })
}

/// Lloyd's k-means with a fixed seed. For large inputs the centroids are
/// trained on a seeded subsample and every point is assigned once at the
/// end; iteration order is fixed so results are reproducible.
fn kmeans(points: &[f64], dims: usize, k: usize, seed: u64, max_iter: usize) -> (Vec<usize>, Vec<f64>) {
    const TRAIN_CAP: usize = 20_000;
    let n = points.len() / dims;
    debug_assert!(k >= 1 && k <= n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let train: Vec<usize> = if n > TRAIN_CAP {
        let mut idx = rand::seq::index::sample(&mut rng, n, TRAIN_CAP).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };

    let init = rand::seq::index::sample(&mut rng, train.len(), k).into_vec();
    let mut centroids = Vec::with_capacity(k * dims);
    for &ti in &init {
        let p = train[ti];
        centroids.extend_from_slice(&points[p * dims..(p + 1) * dims]);
    }

    let dist2 = |p: &[f64], c: &[f64]| -> f64 {
        p.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
    };
    let nearest = |centroids: &[f64], p: &[f64]| -> (usize, f64) {
        let mut best = 0usize;
        let mut bd = f64::INFINITY;
        for g in 0..k {
            let d = dist2(p, &centroids[g * dims..(g + 1) * dims]);
            if d < bd {
                bd = d;
                best = g;
            }
        }
        (best, bd)
    };

    let mut assign = vec![usize::MAX; train.len()];
    for _ in 0..max_iter {
        let new_assign: Vec<(usize, f64)> = train
            .par_iter()
            .map(|&p| nearest(&centroids, &points[p * dims..(p + 1) * dims]))
            .collect();
        let moved = new_assign
            .iter()
            .zip(&assign)
            .filter(|((g, _), old)| g != *old)
            .count();
        for (slot, (g, _)) in assign.iter_mut().zip(&new_assign) {
            *slot = *g;
        }
        // Converged when fewer than 0.1% of training points switch cluster.
        if moved * 1000 < train.len().max(1000) {
            break;
        }
        let mut sums = vec![0.0f64; k * dims];
        let mut counts = vec![0usize; k];
        for (ti, &p) in train.iter().enumerate() {
            let g = assign[ti];
            counts[g] += 1;
            for (s, x) in sums[g * dims..(g + 1) * dims].iter_mut().zip(&points[p * dims..(p + 1) * dims]) {
                *s += x;
            }
        }
        for g in 0..k {
            if counts[g] == 0 {
                // Reseed an empty cluster at the training point farthest
                // from its centroid (lowest index on ties).
                let (mut far_ti, mut far_d) = (0usize, -1.0f64);
                for (ti, &(_, d)) in new_assign.iter().enumerate() {
                    if d > far_d {
                        far_d = d;
                        far_ti = ti;
                    }
                }
                let p = train[far_ti];
                centroids[g * dims..(g + 1) * dims]
                    .copy_from_slice(&points[p * dims..(p + 1) * dims]);
            } else {
                for d in 0..dims {
                    centroids[g * dims + d] = sums[g * dims + d] / counts[g] as f64;
                }
            }
        }
    }

    let final_assign: Vec<usize> = chunk_ranges(n)
        .into_par_iter()
        .map(|r| {
            r.map(|p| nearest(&centroids, &points[p * dims..(p + 1) * dims]).0)
                .collect::<Vec<usize>>()
        })
        .flatten()
        .collect();
    (final_assign, centroids)
}
