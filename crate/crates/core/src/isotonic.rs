//! Weighted isotonic regression for CVR calibration.
//!
//! Calibrated conversion vectors must be non-increasing in price. Levels
//! are ordered by descending price, so in level order the constraint reads
//! non-decreasing: `out[0] <= out[1] <= ... <= out[J-1]`. [`pava`] solves
//! the weighted least-squares projection exactly by pooling adjacent
//! violators; [`qp_oracle`] recomputes the same minimizer by exhaustive
//! block enumeration and exists purely to cross-check `pava`.

use crate::error::{Error, Result};
use crate::ladder::CvrVector;

/// Raw values and positive weights over ladder levels (descending price
/// order, the total order the calibration constraint runs along).
#[derive(Clone, Debug)]
pub struct IsotonicInput {
    raw: Vec<f64>,
    weights: Vec<f64>,
}

impl IsotonicInput {
    pub fn new(raw: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Data("isotonic input must have at least one level".into()));
        }
        if raw.len() != weights.len() {
            return Err(Error::Data(format!(
                "isotonic input has {} values but {} weights",
                raw.len(),
                weights.len()
            )));
        }
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("isotonic raw values must be finite".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Data("isotonic weights must be finite and > 0".into()));
        }
        Ok(IsotonicInput { raw, weights })
    }

    pub fn unit(raw: Vec<f64>) -> Result<Self> {
        let w = vec![1.0; raw.len()];
        IsotonicInput::new(raw, w)
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Pool-adjacent-violators: the exact weighted least-squares projection onto
/// non-decreasing sequences. Each pooled block comes out at the weighted
/// mean of its raw values.
pub fn pava(input: &IsotonicInput) -> Vec<f64> {
    let y = &input.raw;
    let w = &input.weights;
    let n = y.len();

    // Blocks as (weight sum, weighted value sum, member count).
    let mut bw: Vec<f64> = Vec::with_capacity(n);
    let mut bwy: Vec<f64> = Vec::with_capacity(n);
    let mut len: Vec<usize> = Vec::with_capacity(n);

    for i in 0..n {
        bw.push(w[i]);
        bwy.push(w[i] * y[i]);
        len.push(1);
        // Merge while the last block mean is below its predecessor's.
        while bw.len() > 1 {
            let k = bw.len();
            let mean_prev = bwy[k - 2] / bw[k - 2];
            let mean_last = bwy[k - 1] / bw[k - 1];
            if mean_prev <= mean_last {
                break;
            }
            bw[k - 2] += bw[k - 1];
            bwy[k - 2] += bwy[k - 1];
            len[k - 2] += len[k - 1];
            bw.pop();
            bwy.pop();
            len.pop();
        }
    }

    let mut out = Vec::with_capacity(n);
    for b in 0..bw.len() {
        let mean = bwy[b] / bw[b];
        for _ in 0..len[b] {
            out.push(mean);
        }
    }
    out
}

/// Exact minimizer by enumerating every ordered block partition (2^(J-1)
/// of them), setting each block to its weighted mean, keeping partitions
/// whose block means are feasible (non-decreasing), and taking the smallest
/// weighted squared error. The objective is strictly convex so the optimal
/// vector is unique and must equal [`pava`]'s output.
pub fn qp_oracle(input: &IsotonicInput) -> Result<Vec<f64>> {
    let y = &input.raw;
    let w = &input.weights;
    let n = y.len();
    if n > 12 {
        return Err(Error::Size(format!(
            "qp oracle enumerates 2^(J-1) partitions; J = {n} exceeds the limit of 12"
        )));
    }

    let mut best_sse = f64::INFINITY;
    let mut best: Option<Vec<f64>> = None;

    // Bit k of `cuts` set means a block boundary between positions k and k+1.
    for cuts in 0u32..(1u32 << (n - 1)) {
        let mut means = Vec::with_capacity(n);
        let mut fitted = Vec::with_capacity(n);
        let mut start = 0usize;
        let mut feasible = true;
        for end in 0..n {
            let boundary = end + 1 == n || cuts & (1 << end) != 0;
            if !boundary {
                continue;
            }
            let mut sw = 0.0;
            let mut swy = 0.0;
            for i in start..=end {
                sw += w[i];
                swy += w[i] * y[i];
            }
            let mean = swy / sw;
            if let Some(&prev) = means.last() {
                if mean < prev {
                    feasible = false;
                    break;
                }
            }
            means.push(mean);
            for _ in start..=end {
                fitted.push(mean);
            }
            start = end + 1;
        }
        if !feasible {
            continue;
        }
        let sse: f64 = (0..n).map(|i| w[i] * (fitted[i] - y[i]).powi(2)).sum();
        if sse < best_sse {
            best_sse = sse;
            best = Some(fitted);
        }
    }

    best.ok_or_else(|| Error::Internal("no feasible partition found".into()))
}

/// Calibrates one conversion vector: unit-weight PAVA plus a range check.
/// Weighted means of probabilities stay in [0, 1] up to rounding, so any
/// real excursion is an internal error rather than something to silently fix.
pub fn calibrate(q: &CvrVector) -> Result<CvrVector> {
    let input = IsotonicInput::unit(q.as_slice().to_vec())?;
    let mut fitted = pava(&input);
    for x in &mut fitted {
        if *x < -1e-9 || *x > 1.0 + 1e-9 {
            return Err(Error::Internal(format!("calibrated CVR {x} escaped [0, 1]")));
        }
        *x = x.clamp(0.0, 1.0);
    }
    CvrVector::new(fitted)
}

/// Calibrates every customer's vector with unit weights.
pub fn calibrate_population(predictions: &[CvrVector]) -> Result<Vec<CvrVector>> {
    predictions.iter().map(calibrate).collect()
}
