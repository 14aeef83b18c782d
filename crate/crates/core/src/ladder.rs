//! Price ladder domain types and the per-customer reduced-value decision rule.
//!
//! A ladder is the fixed set of coupon values `c[1..=J]` over a base price
//! `p0`, giving offered prices `p[j] = p0 - c[j]`. The reduced value of
//! level `j` for a customer with conversion vector `q` and value vector `v`
//! at multiplier `lambda` is
//!
//! ```text
//! V(j, lambda) = v[j] - lambda * q[j] * (p_b - p[j])
//! ```
//!
//! where `p_b` is the budget floor on the average realized price. The
//! allocation rule picks the level maximizing `V`; ties break toward the
//! lowest coupon value (highest price), which is the budget-safe side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance under which two reduced values count as tied.
///
/// Exact ties are measure-zero for continuously drawn inputs, but rounding
/// can manufacture them; the tie rule needs a deterministic answer either way.
pub const TIE_TOL: f64 = 1e-9;

/// 1-based coupon level index into a [`PriceLadder`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Level(usize);

impl Level {
    /// Levels are numbered `1..=J`; 0 is rejected.
    pub fn new(j: usize) -> Result<Self> {
        if j == 0 {
            return Err(Error::Argument("levels are 1-based; 0 is not a level".into()));
        }
        Ok(Level(j))
    }

    pub fn get(self) -> usize {
        self.0
    }

    #[inline]
    pub(crate) fn idx(self) -> usize {
        self.0 - 1
    }

    #[inline]
    pub(crate) fn from_idx(i: usize) -> Self {
        Level(i + 1)
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Deserialize)]
struct LadderRepr {
    base_price: f64,
    coupons: Vec<f64>,
}

/// The discrete coupon ladder: base price and strictly increasing coupon
/// values, giving strictly decreasing positive offered prices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LadderRepr")]
pub struct PriceLadder {
    base_price: f64,
    coupons: Vec<f64>,
}

impl TryFrom<LadderRepr> for PriceLadder {
    type Error = Error;
    fn try_from(r: LadderRepr) -> Result<Self> {
        PriceLadder::new(r.base_price, r.coupons)
    }
}

impl PriceLadder {
    pub fn new(base_price: f64, coupons: Vec<f64>) -> Result<Self> {
        if !base_price.is_finite() || base_price <= 0.0 {
            return Err(Error::Ladder(format!("base price must be finite and > 0, got {base_price}")));
        }
        if coupons.is_empty() {
            return Err(Error::Ladder("at least one coupon level required".into()));
        }
        if coupons.iter().any(|c| !c.is_finite()) {
            return Err(Error::Ladder("coupon values must be finite".into()));
        }
        if coupons[0] < 0.0 {
            return Err(Error::Ladder(format!("first coupon must be >= 0, got {}", coupons[0])));
        }
        for w in coupons.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Ladder(format!(
                    "coupon values must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let min_price = base_price - coupons[coupons.len() - 1];
        if min_price <= 0.0 {
            return Err(Error::Ladder(format!(
                "largest coupon {} leaves non-positive price {min_price}",
                coupons[coupons.len() - 1]
            )));
        }
        Ok(PriceLadder { base_price, coupons })
    }

    pub fn len(&self) -> usize {
        self.coupons.len()
    }

    pub fn is_empty(&self) -> bool {
        false // constructor guarantees at least one level
    }

    pub fn base_price(&self) -> f64 {
        self.base_price
    }

    /// Validates a raw 1-based index against this ladder.
    pub fn level(&self, j: usize) -> Result<Level> {
        if j == 0 || j > self.len() {
            return Err(Error::Level { level: j, max: self.len() });
        }
        Ok(Level(j))
    }

    pub fn check(&self, level: Level) -> Result<()> {
        if level.get() > self.len() {
            return Err(Error::Level { level: level.get(), max: self.len() });
        }
        Ok(())
    }

    /// Offered price `p[j] = p0 - c[j]`. Panics on a level from a larger
    /// ladder; use [`PriceLadder::check`] first for untrusted indices.
    pub fn price(&self, level: Level) -> f64 {
        self.base_price - self.coupons[level.idx()]
    }

    pub fn coupon(&self, level: Level) -> f64 {
        self.coupons[level.idx()]
    }

    pub fn min_price(&self) -> f64 {
        self.base_price - self.coupons[self.coupons.len() - 1]
    }

    pub fn max_price(&self) -> f64 {
        self.base_price - self.coupons[0]
    }

    /// Prices in level order (strictly decreasing).
    pub fn prices(&self) -> Vec<f64> {
        self.coupons.iter().map(|c| self.base_price - c).collect()
    }

    pub fn coupons(&self) -> &[f64] {
        &self.coupons
    }

    pub fn levels(&self) -> impl Iterator<Item = Level> + '_ {
        (0..self.len()).map(Level::from_idx)
    }

    /// Finds the ladder level whose price matches `price` within `tol`.
    pub fn level_of_price(&self, price: f64, tol: f64) -> Option<Level> {
        (0..self.len())
            .map(Level::from_idx)
            .find(|&l| (self.price(l) - price).abs() <= tol)
    }
}

/// Per-level conversion probabilities for one customer.
///
/// Raw model output may violate price monotonicity; that is expected and
/// corrected downstream, so only the `[0, 1]` range is enforced here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CvrVector(Vec<f64>);

impl TryFrom<Vec<f64>> for CvrVector {
    type Error = Error;
    fn try_from(q: Vec<f64>) -> Result<Self> {
        CvrVector::new(q)
    }
}

impl From<CvrVector> for Vec<f64> {
    fn from(q: CvrVector) -> Vec<f64> {
        q.0
    }
}

impl CvrVector {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Data("empty CVR vector".into()));
        }
        for (i, &x) in q.iter().enumerate() {
            if !x.is_finite() || !(0.0..=1.0).contains(&x) {
                return Err(Error::Data(format!("CVR q[{}] = {x} outside [0, 1]", i + 1)));
            }
        }
        Ok(CvrVector(q))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, level: Level) -> f64 {
        self.0[level.idx()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// True when non-increasing in price, i.e. non-decreasing in level index.
    pub fn is_monotone(&self) -> bool {
        self.0.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Per-level objective contributions for one customer (revenue, conversion,
/// or any other value the allocation maximizes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ValueVector(Vec<f64>);

impl TryFrom<Vec<f64>> for ValueVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ValueVector::new(v)
    }
}

impl From<ValueVector> for Vec<f64> {
    fn from(v: ValueVector) -> Vec<f64> {
        v.0
    }
}

impl ValueVector {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Data("empty value vector".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("value vector entries must be finite".into()));
        }
        Ok(ValueVector(v))
    }

    /// Revenue objective: `v[j] = p[j] * q[j]` exactly.
    pub fn revenue(ladder: &PriceLadder, q: &CvrVector) -> Result<Self> {
        if q.len() != ladder.len() {
            return Err(Error::Data(format!(
                "CVR vector has {} levels, ladder has {}",
                q.len(),
                ladder.len()
            )));
        }
        Ok(ValueVector(
            ladder.levels().map(|l| ladder.price(l) * q.get(l)).collect(),
        ))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, level: Level) -> f64 {
        self.0[level.idx()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Budget floor on the average realized price.
///
/// Must satisfy `min_price <= p_b <= base_price`: above the base price no
/// allocation can satisfy the constraint, below the cheapest level it can
/// never bind. Both are almost certainly configuration mistakes and are
/// rejected up front.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct BudgetTarget(f64);

impl BudgetTarget {
    pub fn new(p_b: f64, ladder: &PriceLadder) -> Result<Self> {
        if !p_b.is_finite() {
            return Err(Error::Budget(format!("budget floor must be finite, got {p_b}")));
        }
        if p_b > ladder.base_price() {
            return Err(Error::Budget(format!(
                "budget floor {p_b} exceeds base price {}; constraint is infeasible",
                ladder.base_price()
            )));
        }
        if p_b < ladder.min_price() {
            return Err(Error::Budget(format!(
                "budget floor {p_b} is below the cheapest ladder price {}; constraint can never bind",
                ladder.min_price()
            )));
        }
        Ok(BudgetTarget(p_b))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Two-pass argmax over reduced values on raw slices: find the maximum, then
/// the lowest level within [`TIE_TOL`] of it. Single source of truth for the
/// tie rule; hot paths call this directly.
#[inline]
pub(crate) fn best_reduced(v: &[f64], q: &[f64], prices: &[f64], p_b: f64, lambda: f64) -> (usize, f64) {
    let mut best = f64::NEG_INFINITY;
    for j in 0..prices.len() {
        let val = v[j] - lambda * q[j] * (p_b - prices[j]);
        if val > best {
            best = val;
        }
    }
    for j in 0..prices.len() {
        let val = v[j] - lambda * q[j] * (p_b - prices[j]);
        if val >= best - TIE_TOL {
            return (j, val);
        }
    }
    unreachable!("non-empty ladder always has an argmax")
}

/// Best and second-best reduced values (second is `-inf` when `J == 1`).
#[inline]
pub(crate) fn top_two_reduced(v: &[f64], q: &[f64], prices: &[f64], p_b: f64, lambda: f64) -> (usize, f64, f64) {
    let (best_j, best) = best_reduced(v, q, prices, p_b, lambda);
    let mut second = f64::NEG_INFINITY;
    for j in 0..prices.len() {
        if j == best_j {
            continue;
        }
        let val = v[j] - lambda * q[j] * (p_b - prices[j]);
        if val > second {
            second = val;
        }
    }
    (best_j, best, second)
}

fn check_dims(v: &ValueVector, q: &CvrVector, ladder: &PriceLadder) -> Result<()> {
    if v.len() != ladder.len() || q.len() != ladder.len() {
        return Err(Error::Data(format!(
            "dimension mismatch: ladder {} levels, q {}, v {}",
            ladder.len(),
            q.len(),
            v.len()
        )));
    }
    Ok(())
}

/// Reduced value `V(j, lambda) = v[j] - lambda * q[j] * (p_b - p[j])`.
pub fn reduced_value(
    v: &ValueVector,
    q: &CvrVector,
    ladder: &PriceLadder,
    budget: BudgetTarget,
    lambda: f64,
    level: Level,
) -> Result<f64> {
    check_dims(v, q, ladder)?;
    ladder.check(level)?;
    debug_assert!(lambda >= 0.0, "multiplier must be non-negative");
    Ok(v.get(level) - lambda * q.get(level) * (budget.get() - ladder.price(level)))
}

/// Level maximizing the reduced value; ties within [`TIE_TOL`] go to the
/// lowest coupon value (highest price).
pub fn argmax_level(
    v: &ValueVector,
    q: &CvrVector,
    ladder: &PriceLadder,
    budget: BudgetTarget,
    lambda: f64,
) -> Result<Level> {
    check_dims(v, q, ladder)?;
    debug_assert!(lambda >= 0.0, "multiplier must be non-negative");
    let prices = ladder.prices();
    let (j, _) = best_reduced(v.as_slice(), q.as_slice(), &prices, budget.get(), lambda);
    Ok(Level::from_idx(j))
}
