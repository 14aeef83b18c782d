//! Plain `key=value` configuration files.
//!
//! One `key=value` pair per line; blank lines and `#` comments are ignored.
//! Recognized keys:
//!
//! ```text
//! base_price = 16            # ladder base price
//! coupons    = 0,2,4,6,8     # ascending coupon values
//! p_b        = 12            # budget floor on the average realized price
//! lambda_init = 0.8          # serving: initial multiplier
//! pid.kp = 0.03              # controller gains (optional; defaults derive
//! pid.ki = 0.0000005         # from lambda_init and p_b)
//! pid.kd = 0.02
//! pid.dt_seconds = 60
//! pid.window_seconds = 57600
//! model = model.json         # serving: optional CVR model path
//! log = decisions.jsonl      # serving: optional decision log path
//! ```

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ladder::{BudgetTarget, PriceLadder};
use crate::pid::PidConfig;

#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
        }
        Ok(Config { values })
    }

    pub fn from_reader<R: Read>(mut r: R) -> Result<Config> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Config::parse(&text)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key {key:?}")))?;
        let x: f64 = raw
            .parse()
            .map_err(|_| Error::Config(format!("key {key:?}: {raw:?} is not a number")))?;
        if !x.is_finite() {
            return Err(Error::Config(format!("key {key:?}: value must be finite")));
        }
        Ok(x)
    }

    pub fn get_f64_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.get(key).is_none() {
            return Ok(default);
        }
        self.get_f64(key)
    }

    /// Builds the ladder from `base_price` and the ascending `coupons` list.
    pub fn ladder(&self) -> Result<PriceLadder> {
        let base = self.get_f64("base_price")?;
        let raw = self
            .get("coupons")
            .ok_or_else(|| Error::Config("missing key \"coupons\"".into()))?;
        let mut coupons = Vec::new();
        for part in raw.split(',') {
            let part = part.trim();
            if part.is_empty() {
                return Err(Error::Config("empty coupon entry".into()));
            }
            let c: f64 = part
                .parse()
                .map_err(|_| Error::Config(format!("coupon {part:?} is not a number")))?;
            coupons.push(c);
        }
        PriceLadder::new(base, coupons)
    }

    /// Reads `p_b` and validates it against the ladder.
    pub fn budget(&self, ladder: &PriceLadder) -> Result<BudgetTarget> {
        BudgetTarget::new(self.get_f64("p_b")?, ladder)
    }

    /// Controller settings under `pid.*`; gains default from the initial
    /// multiplier and budget floor when absent.
    pub fn pid(&self, lambda_init: f64, p_b: f64) -> Result<PidConfig> {
        let dt = self.get_f64_or("pid.dt_seconds", 60.0)?;
        let window = self.get_f64_or("pid.window_seconds", 57_600.0)?;
        let defaults = PidConfig::default_for(lambda_init, p_b, dt, window)?;
        PidConfig::new(
            self.get_f64_or("pid.kp", defaults.kp)?,
            self.get_f64_or("pid.ki", defaults.ki)?,
            self.get_f64_or("pid.kd", defaults.kd)?,
            dt,
            window,
            p_b,
        )
    }
}
