//! Closed-loop control of the budget multiplier.
//!
//! The controller tracks the running average offered price over realized
//! purchases, `p_t`, against the budget floor `p_b`. At each control step
//! the error is `e(t) = p_b - p_t` and the control signal is
//!
//! ```text
//! u(t) = Kp * e(t) + Ki * sum_{tau = t-T..t} e(tau) * dt + Kd * (e(t) - e(t-dt)) / dt
//! ```
//!
//! applied as `lambda(t+dt) = max(0, lambda(t) + u(t))`. Higher multipliers
//! push toward higher offered prices, so a realized average below the floor
//! (positive error) raises the multiplier and vice versa.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Simulated seconds per control step.
    pub dt_seconds: f64,
    /// Length of the error-integration window, in simulated seconds.
    pub window_seconds: f64,
    /// The price floor the loop regulates toward.
    pub target_price: f64,
}

impl PidConfig {
    pub fn new(
        kp: f64,
        ki: f64,
        kd: f64,
        dt_seconds: f64,
        window_seconds: f64,
        target_price: f64,
    ) -> Result<Self> {
        for (name, g) in [("kp", kp), ("ki", ki), ("kd", kd)] {
            if !g.is_finite() {
                return Err(Error::Argument(format!("gain {name} must be finite, got {g}")));
            }
        }
        if !dt_seconds.is_finite() || dt_seconds <= 0.0 {
            return Err(Error::Argument(format!("dt must be > 0, got {dt_seconds}")));
        }
        if !window_seconds.is_finite() || window_seconds < dt_seconds {
            return Err(Error::Argument(format!(
                "window ({window_seconds}) must be at least one step ({dt_seconds})"
            )));
        }
        if !target_price.is_finite() || target_price <= 0.0 {
            return Err(Error::Argument(format!("target price must be > 0, got {target_price}")));
        }
        Ok(PidConfig { kp, ki, kd, dt_seconds, window_seconds, target_price })
    }

    /// Gains scaled by `lambda_hat / p_b` so the loop responds proportionally
    /// across instances, with the integral weight normalized by the window
    /// and the derivative weight by the step so each term is dimensionless
    /// in time. The error signal is the day-cumulative average price, which
    /// reacts like an integrator; the heavy derivative weight is the brake
    /// that keeps the proportional term from winding the multiplier past its
    /// target. Tuned once against the pacing scenario and frozen.
    pub fn default_for(lambda_hat: f64, p_b: f64, dt_seconds: f64, window_seconds: f64) -> Result<Self> {
        if lambda_hat < 0.0 || !lambda_hat.is_finite() {
            return Err(Error::Argument(format!("lambda_hat must be >= 0, got {lambda_hat}")));
        }
        let scale = lambda_hat.max(1e-6) / p_b;
        PidConfig::new(
            0.15 * scale,
            0.05 * scale / window_seconds,
            5.0 * scale * dt_seconds,
            dt_seconds,
            window_seconds,
            p_b,
        )
    }

    /// All gains zero: the multiplier never moves and the loop reproduces
    /// open-loop allocation exactly.
    pub fn open_loop(p_b: f64, dt_seconds: f64, window_seconds: f64) -> Result<Self> {
        PidConfig::new(0.0, 0.0, 0.0, dt_seconds, window_seconds, p_b)
    }

    fn window_steps(&self) -> usize {
        ((self.window_seconds / self.dt_seconds).round() as usize).max(1)
    }
}

#[derive(Clone, Debug)]
pub struct PidState {
    lambda: f64,
    clock: f64,
    errors: VecDeque<f64>,
    last_error: Option<f64>,
    price_sum: f64,
    purchases: u64,
}

impl PidState {
    /// Starts the loop at the offline-fitted multiplier.
    pub fn init(lambda_hat: f64, _config: &PidConfig) -> Result<Self> {
        if !lambda_hat.is_finite() || lambda_hat < 0.0 {
            return Err(Error::Argument(format!(
                "initial multiplier must be >= 0, got {lambda_hat}"
            )));
        }
        Ok(PidState {
            lambda: lambda_hat,
            clock: 0.0,
            errors: VecDeque::new(),
            last_error: None,
            price_sum: 0.0,
            purchases: 0,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn purchases(&self) -> u64 {
        self.purchases
    }

    /// Running average offered price over purchases; undefined before the
    /// first conversion.
    pub fn realized_avg_price(&self) -> Option<f64> {
        (self.purchases > 0).then(|| self.price_sum / self.purchases as f64)
    }

    /// Tracking error `e(t) = p_b - p_t`, held at zero until a purchase
    /// exists (the average is 0/0 before that).
    pub fn error_now(&self, config: &PidConfig) -> f64 {
        match self.realized_avg_price() {
            Some(p_t) => config.target_price - p_t,
            None => 0.0,
        }
    }

    /// Feeds one allocation outcome. Non-purchases leave the tracker
    /// untouched; purchases accumulate into the realized-price average.
    pub fn record_outcome(&mut self, price: f64, purchased: bool) {
        if purchased {
            self.price_sum += price;
            self.purchases += 1;
        }
    }

    /// One control step after `dt` elapsed; returns the applied signal.
    pub fn step(&mut self, config: &PidConfig) -> f64 {
        let e = self.error_now(config);
        self.errors.push_back(e);
        while self.errors.len() > config.window_steps() {
            self.errors.pop_front();
        }
        let integral: f64 = self.errors.iter().sum::<f64>() * config.dt_seconds;
        let derivative = match self.last_error {
            Some(prev) => (e - prev) / config.dt_seconds,
            None => 0.0,
        };
        let u = config.kp * e + config.ki * integral + config.kd * derivative;
        self.lambda = (self.lambda + u).max(0.0);
        self.last_error = Some(e);
        self.clock += config.dt_seconds;
        u
    }

    /// Day rollover: restart from a fresh multiplier with cleared history
    /// and price tracking.
    pub fn reset_day(&mut self, lambda_hat: f64) -> Result<()> {
        if !lambda_hat.is_finite() || lambda_hat < 0.0 {
            return Err(Error::Argument(format!(
                "initial multiplier must be >= 0, got {lambda_hat}"
            )));
        }
        self.lambda = lambda_hat;
        self.clock = 0.0;
        self.errors.clear();
        self.last_error = None;
        self.price_sum = 0.0;
        self.purchases = 0;
        Ok(())
    }
}
