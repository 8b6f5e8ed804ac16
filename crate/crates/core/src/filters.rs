//! Scalar Kalman filter for a single RSS stream.
//!
//! The tracked quantity is assumed constant between observations, so the
//! predict step only inflates the variance by the process noise and the
//! update step is the textbook scalar blend of prior and measurement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanParams {
    /// Process noise R added to the variance on every predict, dB².
    pub process_noise: f64,
    /// Measurement noise Q, dB².
    pub measurement_noise: f64,
    /// Variance assigned when the first observation seeds the estimate, dB².
    pub initial_variance: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            process_noise: 0.008,
            measurement_noise: 4.0,
            initial_variance: 10.0,
        }
    }
}

impl KalmanParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.process_noise.is_finite()
            && self.process_noise >= 0.0
            && self.measurement_noise.is_finite()
            && self.measurement_noise > 0.0
            && self.initial_variance.is_finite()
            && self.initial_variance > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!(
                "kalman parameters need R >= 0, Q > 0, initial variance > 0: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KalmanState {
    pub mu: f64,
    pub variance: f64,
    pub initialized: bool,
    /// Non-finite measurements refused so far.
    pub rejected: u64,
}

impl KalmanState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Prior for the next observation: estimate unchanged, variance grown by R.
    pub fn predict(&self, params: &KalmanParams) -> Result<Self> {
        if !self.initialized {
            return Err(Error::Uninitialized);
        }
        Ok(Self {
            variance: self.variance + params.process_noise,
            ..*self
        })
    }

    pub fn gain(&self, params: &KalmanParams) -> f64 {
        self.variance / (self.variance + params.measurement_noise)
    }

    /// Folds observation `z` into the estimate.
    ///
    /// An uninitialized state is seeded with `z` and the configured initial
    /// variance. A non-finite `z` leaves the estimate untouched and bumps the
    /// rejection counter.
    pub fn update(&self, params: &KalmanParams, z: f64) -> Self {
        if !z.is_finite() {
            return Self {
                rejected: self.rejected + 1,
                ..*self
            };
        }
        if !self.initialized {
            return Self {
                mu: z,
                variance: params.initial_variance,
                initialized: true,
                rejected: self.rejected,
            };
        }
        let k = self.gain(params);
        Self {
            mu: self.mu + k * (z - self.mu),
            variance: (1.0 - k) * self.variance,
            ..*self
        }
    }

    /// Predict (when already initialized) followed by update.
    pub fn step(&self, params: &KalmanParams, z: f64) -> Self {
        match self.predict(params) {
            Ok(prior) => prior.update(params, z),
            Err(_) => self.update(params, z),
        }
    }
}

/// Smooths a time-ordered series. Output element `i` is the posterior
/// estimate after consuming observations `0..=i`.
pub fn filter_series(params: &KalmanParams, series: &[f64]) -> Vec<f64> {
    let mut state = KalmanState::new();
    series
        .iter()
        .map(|&z| {
            state = state.step(params, z);
            state.mu
        })
        .collect()
}
