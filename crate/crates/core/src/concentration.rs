//! Running sample statistics and the adaptive confidence radius.
//!
//! For samples in `[0, 1]` and any (possibly data-dependent) stopping time
//! `J`, the empirical mean after `J` samples is within
//!
//! ```text
//! eps(delta, n) = sqrt( ( 3/5 * ln(log_{1.1}(n) + 1) + 5/9 * ln(24/delta) ) / n )
//! ```
//!
//! of the true mean with probability at least `1 - delta`. All logarithms are
//! natural. The radius is not clamped to 1.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConcentrationError {
    #[error("sample {0} is outside [0, 1]")]
    OutOfRangeSample(f64),
    #[error("confidence parameter {0} is outside (0, 1)")]
    InvalidDelta(f64),
    #[error("sample count must be at least 1")]
    InvalidCount,
}

/// Running count and compensated sum of `[0, 1]`-valued samples for one
/// variable.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    name: String,
    n: u64,
    sum: f64,
    // Neumaier compensation term.
    carry: f64,
}

impl EstimatorState {
    pub fn new(name: impl Into<String>) -> Self {
        EstimatorState {
            name: name.into(),
            n: 0,
            sum: 0.0,
            carry: 0.0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.carry
    }

    /// `s / n`, or `None` before the first sample.
    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum() / self.n as f64)
    }

    pub fn update(&mut self, sample: f64) -> Result<(), ConcentrationError> {
        if !(0.0..=1.0).contains(&sample) {
            return Err(ConcentrationError::OutOfRangeSample(sample));
        }
        let t = self.sum + sample;
        if self.sum.abs() >= sample.abs() {
            self.carry += (self.sum - t) + sample;
        } else {
            self.carry += (sample - t) + self.sum;
        }
        self.sum = t;
        self.n += 1;
        Ok(())
    }

    /// Radius of the adaptive bound at the current count.
    pub fn epsilon(&self, delta: f64) -> Result<f64, ConcentrationError> {
        epsilon(delta, self.n)
    }
}

fn check_args(delta: f64, n: u64) -> Result<(), ConcentrationError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ConcentrationError::InvalidDelta(delta));
    }
    if n == 0 {
        return Err(ConcentrationError::InvalidCount);
    }
    Ok(())
}

/// Adaptive (stopping-time valid) confidence radius.
pub fn epsilon(delta: f64, n: u64) -> Result<f64, ConcentrationError> {
    check_args(delta, n)?;
    let n = n as f64;
    let log_11_10 = n.ln() / 1.1f64.ln();
    let numerator = 0.6 * (log_11_10 + 1.0).ln() + (5.0 / 9.0) * (24.0 / delta).ln();
    Ok((numerator / n).sqrt())
}

/// Fixed-sample-size Hoeffding radius, `sqrt(ln(2/delta) / (2n))`. Only valid
/// when `n` is chosen in advance.
pub fn hoeffding_epsilon(delta: f64, n: u64) -> Result<f64, ConcentrationError> {
    check_args(delta, n)?;
    Ok(((2.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}
