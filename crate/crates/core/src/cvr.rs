//! Raw CVR prediction and evaluation metrics.
//!
//! The built-in predictor is a binned-frequency estimator: feature space is
//! cut into quantile cells over (f1, f2) and each (cell, price) holds a
//! Laplace-smoothed conversion frequency. It deliberately knows nothing
//! about price monotonicity, so selection effects in the training data
//! (e.g. concurrent campaigns steering cheap prices to reluctant buyers)
//! surface as non-monotone predicted curves, exactly what the downstream
//! calibration step exists to repair. Model outputs can also be supplied
//! externally as a per-customer CSV matrix.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ladder::{CvrVector, PriceLadder};
use crate::synthpop::Customer;

/// Threshold for counting an adjacent-level increase toward lower price as
/// a monotonicity violation (absolute, on probabilities).
pub const NONMONO_TOL: f64 = 0.01;

/// One observed exposure: features, offered price, and the realized outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub f1: f64,
    pub f2: f64,
    pub price: f64,
    pub purchased: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct Counts {
    successes: u64,
    trials: u64,
}

impl Counts {
    fn laplace(&self) -> f64 {
        (self.successes as f64 + 1.0) / (self.trials as f64 + 2.0)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Cell {
    per_price: Vec<Counts>,
    total: Counts,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BinnedModel {
    ladder: PriceLadder,
    bins: usize,
    f1_edges: Vec<f64>,
    f2_edges: Vec<f64>,
    cells: Vec<Cell>,
    global: Counts,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixModel {
    ladder: PriceLadder,
    rows: HashMap<u64, CvrVector>,
}

/// A fitted CVR predictor.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CvrModel {
    Binned(BinnedModel),
    Matrix(MatrixModel),
}

fn quantile_edges(mut values: Vec<f64>, bins: usize) -> Vec<f64> {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    (1..bins).map(|k| values[k * n / bins]).collect()
}

fn bin_of(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e <= x)
}

impl BinnedModel {
    fn cell_index(&self, f1: f64, f2: f64) -> usize {
        let i = bin_of(&self.f1_edges, f1);
        let j = bin_of(&self.f2_edges, f2);
        i * self.bins + j
    }

    fn predict_cell(&self, cell: &Cell, level_idx: usize) -> f64 {
        let c = &cell.per_price[level_idx];
        if c.trials > 0 {
            c.laplace()
        } else if cell.total.trials > 0 {
            cell.total.laplace()
        } else {
            self.global.laplace()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Schema("binned model must have bins >= 1".into()));
        }
        let expected_cells = self
            .bins
            .checked_mul(self.bins)
            .filter(|n| *n <= 100_000_000)
            .ok_or_else(|| Error::Schema("bin count out of range".into()))?;
        if self.f1_edges.len() + 1 != self.bins || self.f2_edges.len() + 1 != self.bins {
            return Err(Error::Schema("edge count does not match bin count".into()));
        }
        if self.cells.len() != expected_cells {
            return Err(Error::Schema("cell table does not match bin count".into()));
        }
        let j = self.ladder.len();
        if self.cells.iter().any(|c| c.per_price.len() != j) {
            return Err(Error::Schema("cell price table does not match ladder".into()));
        }
        Ok(())
    }
}

/// Fits the binned-frequency predictor. Requires at least one record per
/// ladder price overall; per-cell gaps fall back to the cell-wide rate and
/// empty cells to the global rate.
pub fn fit(records: &[TrainingRecord], ladder: &PriceLadder, bins: usize) -> Result<CvrModel> {
    if records.is_empty() {
        return Err(Error::Data("no training records".into()));
    }
    if bins < 1 {
        return Err(Error::Argument("bins must be >= 1".into()));
    }
    let mut level_of = Vec::with_capacity(records.len());
    for r in records {
        if !r.f1.is_finite() || !r.f2.is_finite() {
            return Err(Error::Data("training record has non-finite features".into()));
        }
        let level = ladder
            .level_of_price(r.price, 1e-9)
            .ok_or_else(|| Error::Data(format!("record price {} is not on the ladder", r.price)))?;
        level_of.push(level.idx());
    }
    for l in ladder.levels() {
        if !level_of.iter().any(|&i| i == l.idx()) {
            return Err(Error::Data(format!(
                "no training records at ladder price {}",
                ladder.price(l)
            )));
        }
    }

    let f1_edges = quantile_edges(records.iter().map(|r| r.f1).collect(), bins);
    let f2_edges = quantile_edges(records.iter().map(|r| r.f2).collect(), bins);
    let mut model = BinnedModel {
        ladder: ladder.clone(),
        bins,
        f1_edges,
        f2_edges,
        cells: vec![
            Cell { per_price: vec![Counts::default(); ladder.len()], total: Counts::default() };
            bins * bins
        ],
        global: Counts::default(),
    };

    for (r, &li) in records.iter().zip(&level_of) {
        let ci = model.cell_index(r.f1, r.f2);
        let cell = &mut model.cells[ci];
        let hit = u64::from(r.purchased);
        cell.per_price[li].successes += hit;
        cell.per_price[li].trials += 1;
        cell.total.successes += hit;
        cell.total.trials += 1;
        model.global.successes += hit;
        model.global.trials += 1;
    }

    Ok(CvrModel::Binned(model))
}

impl CvrModel {
    pub fn ladder(&self) -> &PriceLadder {
        match self {
            CvrModel::Binned(m) => &m.ladder,
            CvrModel::Matrix(m) => &m.ladder,
        }
    }

    /// Raw prediction vector over all ladder levels. No monotonicity
    /// guarantee; calibrate downstream.
    pub fn predict(&self, customer: &Customer) -> Result<CvrVector> {
        match self {
            CvrModel::Binned(m) => {
                let cell = &m.cells[m.cell_index(customer.f1, customer.f2)];
                let q: Vec<f64> = (0..m.ladder.len()).map(|li| m.predict_cell(cell, li)).collect();
                CvrVector::new(q)
            }
            CvrModel::Matrix(m) => m
                .rows
                .get(&customer.id)
                .cloned()
                .ok_or_else(|| Error::Data(format!("no CVR row for customer {}", customer.id))),
        }
    }

    pub fn from_matrix(ladder: PriceLadder, rows: Vec<(u64, CvrVector)>) -> Result<CvrModel> {
        let mut map = HashMap::with_capacity(rows.len());
        for (id, q) in rows {
            if q.len() != ladder.len() {
                return Err(Error::Schema(format!(
                    "CVR row for customer {id} has {} levels, ladder has {}",
                    q.len(),
                    ladder.len()
                )));
            }
            if map.insert(id, q).is_some() {
                return Err(Error::Data(format!("duplicate CVR row for customer {id}")));
            }
        }
        Ok(CvrModel::Matrix(MatrixModel { ladder, rows: map }))
    }

    pub fn to_json_writer<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn from_json_reader<R: Read>(r: R) -> Result<CvrModel> {
        let model: CvrModel = serde_json::from_reader(r)?;
        if let CvrModel::Binned(m) = &model {
            m.validate()?;
        }
        if let CvrModel::Matrix(m) = &model {
            for (id, q) in &m.rows {
                if q.len() != m.ladder.len() {
                    return Err(Error::Schema(format!(
                        "CVR row for customer {id} does not match ladder"
                    )));
                }
            }
        }
        Ok(model)
    }
}

/// Fraction of customers whose raw curve rises by more than [`NONMONO_TOL`]
/// from one price to the next higher price (strict comparison). Vectors are
/// in level order, i.e. descending price.
pub fn nonmonotonic_fraction(predictions: &[CvrVector], ladder: &PriceLadder) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Data("no prediction vectors".into()));
    }
    let mut bad = 0usize;
    for q in predictions {
        if q.len() != ladder.len() {
            return Err(Error::Data(format!(
                "prediction vector has {} levels, ladder has {}",
                q.len(),
                ladder.len()
            )));
        }
        let s = q.as_slice();
        // s[j] is at a higher price than s[j+1]; a violation is the
        // higher-price conversion exceeding the lower-price one by > tol.
        if s.windows(2).any(|w| w[0] > w[1] + NONMONO_TOL) {
            bad += 1;
        }
    }
    Ok(bad as f64 / predictions.len() as f64)
}

/// Per-record evaluation row: the full predicted vector plus the prediction
/// at the record's offered price.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub vector: CvrVector,
    pub prediction_at_offer: f64,
}

/// Predicts every record with the built-in model (records double as
/// customers here; ids are row indices, which external-matrix models cannot
/// resolve).
pub fn eval_rows(model: &CvrModel, records: &[TrainingRecord]) -> Result<Vec<EvalRow>> {
    let ladder = model.ladder();
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let level = ladder
            .level_of_price(r.price, 1e-9)
            .ok_or_else(|| Error::Data(format!("record price {} is not on the ladder", r.price)))?;
        let customer = Customer {
            id: i as u64,
            f1: r.f1,
            f2: r.f2,
            show_up_prob: 1.0,
            segment: crate::synthpop::Segment::New,
        };
        let vector = model.predict(&customer)?;
        let prediction_at_offer = vector.get(level);
        out.push(EvalRow { vector, prediction_at_offer });
    }
    Ok(out)
}

/// Rank-based (Mann-Whitney) AUC; tied scores contribute half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Argument("scores and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUC needs both classes present".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Average ranks over tie groups (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos as f64) * (pos as f64 + 1.0) / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Predicted-conversions-over-conversions: the summed predicted CVR at the
/// offered level over the number of realized purchases. 1.0 is unbiased,
/// below 1 underestimates, above 1 overestimates.
pub fn pcoc(predicted: &[f64], outcomes: &[bool]) -> Result<f64> {
    if predicted.len() != outcomes.len() {
        return Err(Error::Argument("predictions and outcomes differ in length".into()));
    }
    let purchases = outcomes.iter().filter(|&&o| o).count();
    if purchases == 0 {
        return Err(Error::Metric("PCOC undefined with zero purchases".into()));
    }
    Ok(predicted.iter().sum::<f64>() / purchases as f64)
}

/// JSONL record I/O.
pub fn write_records_jsonl<W: Write>(records: &[TrainingRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records_jsonl<R: BufRead>(r: R) -> Result<Vec<TrainingRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrainingRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
        if !rec.f1.is_finite() || !rec.f2.is_finite() || !rec.price.is_finite() {
            return Err(Error::Data(format!("line {}: non-finite fields", lineno + 1)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// CSV matrix I/O with header `customer_id,q_1..q_J`.
pub fn write_cvr_matrix_csv<W: Write>(rows: &[(u64, CvrVector)], j: usize, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["customer_id".to_string()];
    header.extend((1..=j).map(|k| format!("q_{k}")));
    wtr.write_record(&header)?;
    for (id, q) in rows {
        if q.len() != j {
            return Err(Error::Schema(format!("row for customer {id} has wrong level count")));
        }
        let mut rec = vec![id.to_string()];
        rec.extend(q.as_slice().iter().map(|x| format!("{x}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_cvr_matrix_csv<R: Read>(r: R) -> Result<Vec<(u64, CvrVector)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.get(0) != Some("customer_id") {
        return Err(Error::Schema("first CSV column must be customer_id".into()));
    }
    let j = headers.len() - 1;
    if j == 0 {
        return Err(Error::Schema("CSV has no q_ columns".into()));
    }
    for (k, name) in headers.iter().skip(1).enumerate() {
        let expect = format!("q_{}", k + 1);
        if name != expect {
            return Err(Error::Schema(format!("expected column {expect}, found {name}")));
        }
    }
    let mut out = Vec::new();
    for (lineno, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != j + 1 {
            return Err(Error::Schema(format!("row {}: wrong field count", lineno + 2)));
        }
        let id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("row {}: bad customer id {:?}", lineno + 2, &rec[0])))?;
        let mut q = Vec::with_capacity(j);
        for f in rec.iter().skip(1) {
            let x: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("row {}: bad probability {f:?}", lineno + 2)))?;
            q.push(x);
        }
        out.push((id, CvrVector::new(q).map_err(|e| Error::Data(format!("row {}: {e}", lineno + 2)))?));
    }
    Ok(out)
}
