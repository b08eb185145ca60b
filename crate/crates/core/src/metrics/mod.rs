//! Error metrics, per-lead profiles, regional subsets and report export.

mod report;

pub use report::{comparison_csv, heatmap_csv, report_csv, table_leads};

use crate::data::QueryGrid;
use crate::error::{Result, StoneError};
use crate::tensor::Tensor;

/// Default MAPE denominator floor.
pub const MAPE_FLOOR: f64 = 1e-9;

fn check_len(op: &'static str, y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(StoneError::dims(op, &[y.len()], &[yhat.len()]));
    }
    if y.is_empty() {
        return Err(StoneError::UndefinedMetric(format!("{op} of zero points")));
    }
    Ok(())
}

/// `‖y − ŷ‖₂ / ‖y‖₂`, a dimensionless fraction.
pub fn rel_l2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len("rel_l2", y, yhat)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in y.iter().zip(yhat) {
        num += (a - b) * (a - b);
        den += a * a;
    }
    if den == 0.0 {
        return Err(StoneError::UndefinedMetric("rel_l2 with zero-norm reference".into()));
    }
    Ok((num / den).sqrt())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len("mae", y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len("rmse", y, yhat)?;
    Ok((y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    /// Percentage over the included points.
    pub value: f64,
    /// Points with `|y| < floor`, left out of the mean.
    pub excluded: usize,
}

pub fn mape(y: &[f64], yhat: &[f64], floor: f64) -> Result<Mape> {
    check_len("mape", y, yhat)?;
    let (mut sum, mut included) = (0.0, 0usize);
    for (a, b) in y.iter().zip(yhat) {
        if a.abs() >= floor {
            sum += ((a - b) / a).abs();
            included += 1;
        }
    }
    if included == 0 {
        return Err(StoneError::UndefinedMetric(format!("mape: every |y| is below {floor}")));
    }
    Ok(Mape {
        value: 100.0 * sum / included as f64,
        excluded: y.len() - included,
    })
}

/// Per-lead error profile of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub label: String,
    pub samples: usize,
    pub rel_l2: Vec<f64>,
    pub rmse: Vec<f64>,
    pub mae: Vec<f64>,
    pub mape: Vec<f64>,
    pub excluded: Vec<usize>,
}

/// Means of the per-lead columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub rel_l2: f64,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub excluded: usize,
}

impl MetricReport {
    pub fn leads(&self) -> usize {
        self.rel_l2.len()
    }

    pub fn aggregate(&self) -> Aggregate {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Aggregate {
            rel_l2: mean(&self.rel_l2),
            rmse: mean(&self.rmse),
            mae: mean(&self.mae),
            mape: mean(&self.mape),
            excluded: self.excluded.iter().sum(),
        }
    }
}

/// Metrics at every lead over all samples, points and channels of
/// `[samples×P×p×K]` arrays.
pub fn per_lead_profile(label: &str, forecasts: &Tensor, targets: &Tensor) -> Result<MetricReport> {
    if forecasts.dims() != targets.dims() || targets.dims().len() != 4 {
        return Err(StoneError::dims("per_lead_profile", forecasts.dims(), targets.dims()));
    }
    let k = targets.dims()[3];
    let rows = targets.numel() / k;
    let mut report = MetricReport {
        label: label.to_string(),
        samples: targets.dims()[0],
        rel_l2: Vec::with_capacity(k),
        rmse: Vec::with_capacity(k),
        mae: Vec::with_capacity(k),
        mape: Vec::with_capacity(k),
        excluded: Vec::with_capacity(k),
    };
    let (mut y, mut yhat) = (Vec::with_capacity(rows), Vec::with_capacity(rows));
    for lead in 0..k {
        y.clear();
        yhat.clear();
        for r in 0..rows {
            y.push(targets.data()[r * k + lead]);
            yhat.push(forecasts.data()[r * k + lead]);
        }
        let m = mape(&y, &yhat, MAPE_FLOOR)?;
        report.rel_l2.push(rel_l2(&y, &yhat)?);
        report.rmse.push(rmse(&y, &yhat)?);
        report.mae.push(mae(&y, &yhat)?);
        report.mape.push(m.value);
        report.excluded.push(m.excluded);
    }
    Ok(report)
}

/// A latitude/longitude box and the grid points inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub lat: (f64, f64),
    pub lon: (f64, f64),
    pub indices: Vec<usize>,
}

impl RegionMask {
    /// Points with `lat ∈ [lat.0, lat.1]` and `lon ∈ [lon.0, lon.1]`.
    pub fn bbox(grid: &QueryGrid, lat: (f64, f64), lon: (f64, f64)) -> Result<Self> {
        let indices: Vec<usize> = grid
            .degrees()
            .iter()
            .enumerate()
            .filter(|(_, [a, o])| (lat.0..=lat.1).contains(a) && (lon.0..=lon.1).contains(o))
            .map(|(i, _)| i)
            .collect();
        Self::from_indices(lat, lon, indices)
    }

    pub fn from_indices(lat: (f64, f64), lon: (f64, f64), indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(StoneError::Range(format!(
                "region lat {lat:?} lon {lon:?} selects no grid points"
            )));
        }
        Ok(RegionMask { lat, lon, indices })
    }

    /// Parses `LAT0:LAT1,LON0:LON1`.
    pub fn parse(text: &str, grid: &QueryGrid) -> Result<Self> {
        let bad = || StoneError::config("region", format!("`{text}` is not LAT0:LAT1,LON0:LON1"));
        let range = |s: &str| -> Result<(f64, f64)> {
            let (a, b) = s.split_once(':').ok_or_else(bad)?;
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        };
        let (lat, lon) = text.split_once(',').ok_or_else(bad)?;
        Self::bbox(grid, range(lat)?, range(lon)?)
    }
}

/// Per-lead profile restricted to the masked points.
pub fn region_metrics(label: &str, forecasts: &Tensor, targets: &Tensor, mask: &RegionMask) -> Result<MetricReport> {
    if forecasts.dims() != targets.dims() || targets.dims().len() != 4 {
        return Err(StoneError::dims("region_metrics", forecasts.dims(), targets.dims()));
    }
    let points = targets.dims()[1];
    if let Some(&bad) = mask.indices.iter().find(|&&i| i >= points) {
        return Err(StoneError::Range(format!("mask index {bad} outside {points} points")));
    }
    let select = |t: &Tensor| -> Result<Tensor> {
        let d = t.dims();
        let inner = d[2] * d[3];
        let mut out = Vec::with_capacity(d[0] * mask.indices.len() * inner);
        for s in 0..d[0] {
            for &i in &mask.indices {
                let start = (s * points + i) * inner;
                out.extend_from_slice(&t.data()[start..start + inner]);
            }
        }
        Tensor::from_vec(&[d[0], mask.indices.len(), d[2], d[3]], out)
    };
    per_lead_profile(label, &select(forecasts)?, &select(targets)?)
}
