//! Log-distance path-loss model.
//!
//! Received signal strength falls off linearly in `log10(d / d0)`:
//!
//! ```text
//! rss(d) = rss_d0 - 10 * n * log10(d / d0) + X_sigma
//! ```
//!
//! where `X_sigma` is zero-mean Gaussian shadowing. The model is used in both
//! directions: forward to synthesize readings, inverted to turn a reading
//! into a range estimate.

use std::fmt;
use std::io::BufRead;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn unit_distance() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    /// Signal strength at the reference distance, dBm.
    pub rss_d0: f64,
    /// Path-loss exponent.
    pub n: f64,
    /// Shadowing standard deviation, dB.
    #[serde(default)]
    pub sigma: f64,
    /// Reference distance, meters.
    #[serde(default = "unit_distance")]
    pub d0: f64,
}

impl PathLossModel {
    /// Noise-free model with a 1 m reference distance.
    pub fn new(rss_d0: f64, n: f64) -> Self {
        Self {
            rss_d0,
            n,
            sigma: 0.0,
            d0: 1.0,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_reference_distance(mut self, d0: f64) -> Self {
        self.d0 = d0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !self.rss_d0.is_finite() {
            problems.push(format!("rss_d0 must be finite, got {}", self.rss_d0));
        }
        if !(self.n.is_finite() && self.n > 0.0) {
            problems.push(format!("n must be > 0, got {}", self.n));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            problems.push(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(self.d0.is_finite() && self.d0 > 0.0) {
            problems.push(format!("d0 must be > 0, got {}", self.d0));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(problems.join("; ")))
        }
    }

    /// Mean received strength at distance `d` (no shadowing term).
    pub fn predict_rss(&self, d: f64) -> Result<f64> {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::NonPositiveDistance(d));
        }
        Ok(self.rss_d0 - 10.0 * self.n * (d / self.d0).log10())
    }

    /// Range implied by a reading. Exact inverse of [`predict_rss`](Self::predict_rss).
    pub fn invert_distance(&self, rss: f64) -> f64 {
        self.d0 * 10f64.powf((self.rss_d0 - rss) / (10.0 * self.n))
    }

    /// One shadowed reading at distance `d`.
    ///
    /// Always consumes exactly one standard-normal draw from `rng`, so the
    /// random stream stays aligned whatever `sigma` is.
    pub fn sample_rss<R: Rng + ?Sized>(&self, d: f64, rng: &mut R) -> Result<f64> {
        let mean = self.predict_rss(d)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(mean + self.sigma * z)
    }

    /// Flat `key=value` text record, one field per line.
    pub fn to_record(&self) -> String {
        format!(
            "rss_d0={}\nn={}\nsigma={}\nd0={}\n",
            self.rss_d0, self.n, self.sigma, self.d0
        )
    }

    /// Parses the output of [`to_record`](Self::to_record). Keys may appear in
    /// any order, blank lines and `#` comments are ignored, `sigma` and `d0`
    /// are optional.
    pub fn from_record(text: &str) -> Result<Self> {
        let (mut rss_d0, mut n, mut sigma, mut d0) = (None, None, 0.0, 1.0);
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: idx + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got `{line}`")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("`{}` is not a number", value.trim())))?;
            match key.trim() {
                "rss_d0" => rss_d0 = Some(value),
                "n" => n = Some(value),
                "sigma" => sigma = value,
                "d0" => d0 = value,
                other => return Err(parse_err(format!("unknown key `{other}`"))),
            }
        }
        let model = Self {
            rss_d0: rss_d0.ok_or_else(|| Error::InvalidModel("missing rss_d0".into()))?,
            n: n.ok_or_else(|| Error::InvalidModel("missing n".into()))?,
            sigma,
            d0,
        };
        model.validate()?;
        Ok(model)
    }
}

impl fmt::Display for PathLossModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rss_d0={:.4} dBm, n={:.4}, sigma={:.4} dB, d0={} m",
            self.rss_d0, self.n, self.sigma, self.d0
        )
    }
}

/// One empirical (distance, RSS) observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangingSample {
    pub distance: f64,
    pub rss: f64,
}

impl RangingSample {
    pub fn new(distance: f64, rss: f64) -> Result<Self> {
        if !(distance.is_finite() && distance > 0.0) {
            return Err(Error::NonPositiveDistance(distance));
        }
        Ok(Self { distance, rss })
    }
}

/// Least-squares fit of `rss_d0` and `n` by linear regression of RSS on
/// `log10(d / d0)`. `sigma` is the residual standard deviation with N-2
/// degrees of freedom (zero when only two samples are given).
pub fn fit_model(samples: &[RangingSample], d0: f64) -> Result<PathLossModel> {
    if !(d0.is_finite() && d0 > 0.0) {
        return Err(Error::NonPositiveDistance(d0));
    }
    if let Some(bad) = samples.iter().find(|s| !(s.distance.is_finite() && s.distance > 0.0)) {
        return Err(Error::NonPositiveDistance(bad.distance));
    }
    let first = samples
        .first()
        .ok_or_else(|| Error::InsufficientData("no ranging samples".into()))?;
    if samples.iter().all(|s| s.distance == first.distance) {
        return Err(Error::InsufficientData(
            "fit needs samples at 2 or more distinct distances".into(),
        ));
    }

    let count = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| (s.distance / d0).log10()).collect();
    let x_mean = xs.iter().sum::<f64>() / count;
    let y_mean = samples.iter().map(|s| s.rss).sum::<f64>() / count;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, s) in xs.iter().zip(samples) {
        sxx += (x - x_mean) * (x - x_mean);
        sxy += (x - x_mean) * (s.rss - y_mean);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;

    let ssr: f64 = xs
        .iter()
        .zip(samples)
        .map(|(x, s)| {
            let r = s.rss - (intercept + slope * x);
            r * r
        })
        .sum();
    let sigma = if samples.len() > 2 {
        (ssr / (count - 2.0)).sqrt()
    } else {
        0.0
    };

    let model = PathLossModel {
        rss_d0: intercept,
        n: -slope / 10.0,
        sigma,
        d0,
    };
    if model.n <= 0.0 {
        return Err(Error::InvalidModel(format!(
            "fitted exponent {} is not positive; RSS does not fall with distance",
            model.n
        )));
    }
    Ok(model)
}

/// Mean squared prediction error of `model` over `samples`, dB².
pub fn mse(model: &PathLossModel, samples: &[RangingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no ranging samples".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let r = s.rss - model.predict_rss(s.distance)?;
        total += r * r;
    }
    Ok(total / samples.len() as f64)
}

/// Reads `distance_m,rss_dbm` records. A non-numeric first line is treated as
/// a header; blank lines and `#` comments are skipped.
pub fn read_ranging_csv<R: BufRead>(reader: R) -> Result<Vec<RangingSample>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [d, r] => d.parse::<f64>().ok().zip(r.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some((d, r)) => out.push(RangingSample::new(d, r).map_err(|e| Error::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })?),
            None if out.is_empty() && idx == 0 => continue,
            None => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected `distance_m,rss_dbm`, got `{trimmed}`"),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_ranging_csv<W: std::io::Write>(mut out: W, samples: &[RangingSample]) -> Result<()> {
    writeln!(out, "distance_m,rss_dbm")?;
    for s in samples {
        writeln!(out, "{},{}", s.distance, s.rss)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const PASSIVE: PathLossModel = PathLossModel {
        rss_d0: -54.5,
        n: 1.8638,
        sigma: 0.0,
        d0: 1.0,
    };

    #[test]
    fn predict_at_reference_distance() {
        assert_eq!(PASSIVE.predict_rss(1.0).unwrap(), -54.5);
        let active = PathLossModel::new(-56.5, 1.8261);
        assert_eq!(active.predict_rss(1.0).unwrap(), -56.5);
    }

    #[test]
    fn predict_at_ten_meters() {
        // -54.5 - 10 * 1.8638 * log10(10)
        assert!((PASSIVE.predict_rss(10.0).unwrap() - (-73.138)).abs() < 1e-12);
    }

    #[test]
    fn predict_rejects_non_positive_distance() {
        assert!(matches!(PASSIVE.predict_rss(0.0), Err(Error::NonPositiveDistance(_))));
        assert!(matches!(PASSIVE.predict_rss(-2.0), Err(Error::NonPositiveDistance(_))));
        assert!(PASSIVE.predict_rss(f64::NAN).is_err());
    }

    #[test]
    fn invert_examples() {
        assert!((PASSIVE.invert_distance(-54.5) - 1.0).abs() < 1e-12);
        assert!((PASSIVE.invert_distance(-73.138) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn non_unit_reference_distance() {
        let m = PASSIVE.with_reference_distance(2.0);
        assert_eq!(m.predict_rss(2.0).unwrap(), -54.5);
        assert!((m.invert_distance(m.predict_rss(7.5).unwrap()) - 7.5).abs() < 1e-9);
    }

    #[test]
    fn fit_two_points_by_hand() {
        let samples = [
            RangingSample::new(1.0, -50.0).unwrap(),
            RangingSample::new(10.0, -70.0).unwrap(),
        ];
        let m = fit_model(&samples, 1.0).unwrap();
        assert!((m.n - 2.0).abs() < 1e-12);
        assert!((m.rss_d0 + 50.0).abs() < 1e-12);
        assert_eq!(m.sigma, 0.0);
    }

    #[test]
    fn fit_noiseless_recovers_exactly() {
        let samples: Vec<_> = (1..=30)
            .map(|i| {
                let d = 0.5 * i as f64;
                RangingSample::new(d, PASSIVE.predict_rss(d).unwrap()).unwrap()
            })
            .collect();
        let m = fit_model(&samples, 1.0).unwrap();
        assert!((m.n - PASSIVE.n).abs() < 1e-9);
        assert!((m.rss_d0 - PASSIVE.rss_d0).abs() < 1e-9);
        assert!(m.sigma < 1e-9);
    }

    #[test]
    fn fit_noisy_recovers_within_tolerance() {
        let truth = PASSIVE.with_sigma(3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<_> = (0..1000)
            .map(|_| {
                let d = rng.random_range(1.0..15.0);
                RangingSample::new(d, truth.sample_rss(d, &mut rng).unwrap()).unwrap()
            })
            .collect();
        let m = fit_model(&samples, 1.0).unwrap();
        assert!((m.n - truth.n).abs() < 0.1, "n = {}", m.n);
        assert!((m.rss_d0 - truth.rss_d0).abs() < 1.0, "rss_d0 = {}", m.rss_d0);
        assert!((m.sigma - 3.0).abs() < 0.3, "sigma = {}", m.sigma);
    }

    #[test]
    fn fit_single_distance_is_insufficient() {
        let samples = [
            RangingSample::new(3.0, -60.0).unwrap(),
            RangingSample::new(3.0, -62.0).unwrap(),
        ];
        assert!(matches!(fit_model(&samples, 1.0), Err(Error::InsufficientData(_))));
        assert!(matches!(fit_model(&[], 1.0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn sample_with_zero_sigma_is_deterministic_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [0.5, 1.0, 7.0, 42.0] {
            assert_eq!(
                PASSIVE.sample_rss(d, &mut rng).unwrap(),
                PASSIVE.predict_rss(d).unwrap()
            );
        }
    }

    #[test]
    fn sample_statistics_match_model() {
        let model = PASSIVE.with_sigma(3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| model.sample_rss(5.0, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((mean - model.predict_rss(5.0).unwrap()).abs() < 0.1);
        assert!((var.sqrt() - 3.0).abs() < 0.05 * 3.0);
    }

    #[test]
    fn sample_same_seed_same_output() {
        let model = PASSIVE.with_sigma(3.0);
        let a = model.sample_rss(4.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = model.sample_rss(4.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(model.sample_rss(0.0, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn record_round_trip() {
        let m = PathLossModel::new(-56.5, 1.8261).with_sigma(2.25);
        assert_eq!(PathLossModel::from_record(&m.to_record()).unwrap(), m);
        let partial = PathLossModel::from_record("# fitted\nn = 2\nrss_d0=-50\n").unwrap();
        assert_eq!(partial, PathLossModel::new(-50.0, 2.0));
        assert!(PathLossModel::from_record("n=2\n").is_err());
        assert!(PathLossModel::from_record("rss_d0=-50\nn=-1\n").is_err());
        assert!(PathLossModel::from_record("rss_d0=-50\nn=2\nfoo=1\n").is_err());
    }

    #[test]
    fn csv_reading() {
        let text = "distance_m,rss_dbm\n1,-50\n\n# comment\n10, -70\n";
        let samples = read_ranging_csv(text.as_bytes()).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[1], RangingSample { distance: 10.0, rss: -70.0 });
        assert!(read_ranging_csv("1,-50\nabc\n".as_bytes()).is_err());
        assert!(read_ranging_csv("1,-50\n-1,-40\n".as_bytes()).is_err());
    }
}
