use std::f64::consts::PI;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{FieldSequence, QueryGrid, SensorSeries};
use crate::error::{Result, StoneError};
use crate::tensor::Tensor;

const AR_RHO: f64 = 0.95;
const AR_INNOVATION: f64 = 0.03;
const SENSOR_NOISE: f64 = 0.5;
const SENSOR_SCALE: f64 = 10.0;
const DOSE_A: f64 = 1.0;
const DOSE_B: f64 = 0.3;

/// A generated dataset together with the latent driver that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub sensors: SensorSeries,
    pub fields: FieldSequence,
    pub driver: Vec<f64>,
    pub gains: Vec<f64>,
}

pub fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2001, 1, 1).expect("valid date")
}

/// Latitude bowl: lowest at the equator, highest at the poles.
pub fn latitude_bowl(lat_norm: f64) -> f64 {
    1.5 + 3.0 * (2.0 * lat_norm - 1.0).powi(2)
}

/// Noise-free dose for normalized coordinates and driver value, before f32 rounding.
pub fn dose(lat_norm: f64, lon_norm: f64, driver: f64) -> f64 {
    let spatial = latitude_bowl(lat_norm) + 0.2 * (2.0 * PI * lon_norm).cos();
    spatial * (DOSE_A - DOSE_B * driver)
}

/// Slow sinusoid plus AR(1) noise drives both the sensors and the dose field.
pub fn synth_generate(seed: u64, n_sensors: usize, grid: (usize, usize), t_total: usize, k_cycles: f64) -> Result<SynthData> {
    if t_total < 2 {
        return Err(StoneError::config("synth.days", "at least 2 days are required"));
    }
    if n_sensors == 0 {
        return Err(StoneError::config("synth.sensors", "at least one sensor is required"));
    }
    if !k_cycles.is_finite() {
        return Err(StoneError::config("synth.cycles", "must be finite"));
    }
    let grid = QueryGrid::regular(grid.0, grid.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut driver = Vec::with_capacity(t_total);
    let mut ar = 0.0;
    for t in 0..t_total {
        ar = AR_RHO * ar + AR_INNOVATION * std_normal.sample(&mut rng);
        driver.push((2.0 * PI * k_cycles * t as f64 / t_total as f64).sin() + ar);
    }

    let gains: Vec<f64> = (0..n_sensors).map(|_| rng.random_range(0.5..1.5)).collect();
    let bases: Vec<f64> = (0..n_sensors).map(|_| rng.random_range(80.0..120.0)).collect();
    let mut readings = Vec::with_capacity(t_total * n_sensors);
    for &phi in &driver {
        for n in 0..n_sensors {
            let noise = SENSOR_NOISE * std_normal.sample(&mut rng);
            readings.push(bases[n] + SENSOR_SCALE * gains[n] * phi + noise);
        }
    }

    let norm = grid.normalized();
    let mut doses = Vec::with_capacity(t_total * grid.len());
    for &phi in &driver {
        for i in 0..grid.len() {
            doses.push(dose(norm.at(&[i, 0]), norm.at(&[i, 1]), phi) as f32 as f64);
        }
    }

    let dates = (0..t_total).map(|d| start_date() + Days::new(d as u64)).collect();
    let ids = (1..=n_sensors).map(|n| format!("station_{n}")).collect();
    let sensors = SensorSeries::new(dates, Tensor::from_vec(&[t_total, n_sensors], readings)?, ids)?;
    let fields = FieldSequence::new(Tensor::from_vec(&[t_total, grid.len()], doses)?, grid)?;
    Ok(SynthData {
        sensors,
        fields,
        driver,
        gains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = synth_generate(7, 4, (8, 16), 400, 2.0).unwrap();
        let b = synth_generate(7, 4, (8, 16), 400, 2.0).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(8, 4, (8, 16), 400, 2.0).unwrap();
        assert_ne!(a.driver, c.driver);
    }

    #[test]
    fn sensors_track_driver() {
        let d = synth_generate(7, 4, (8, 16), 400, 2.0).unwrap();
        for n in 0..4 {
            let col: Vec<f64> = (0..400).map(|t| d.sensors.values.at(&[t, n])).collect();
            let r = correlation(&col, &d.driver);
            assert!(r > 0.9, "sensor {n}: {r}");
        }
    }

    #[test]
    fn bowl_is_higher_toward_poles() {
        let d = synth_generate(3, 2, (8, 16), 50, 2.0).unwrap();
        for &phi in &d.driver {
            for v in [0.0, 0.3, 0.9] {
                assert!(dose(0.5, v, phi) < dose(0.95, v, phi));
            }
        }
        assert!(latitude_bowl(0.5) < latitude_bowl(0.95));
    }

    #[test]
    fn doses_positive_and_f32_exact() {
        let d = synth_generate(11, 3, (4, 8), 120, 2.0).unwrap();
        for &v in d.fields.values.data() {
            assert!(v > 0.0);
            assert_eq!(v as f32 as f64, v);
        }
        assert_eq!(d.fields.values.dims(), &[120, 32]);
    }
}
