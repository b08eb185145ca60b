//! Sensor and field ingestion, sliding windows, chronological split and normalization.

mod fieldpack;
mod grid;
mod sensors;
mod synth;

use std::collections::BTreeMap;
use std::path::Path;

pub use fieldpack::FieldPack;
pub use grid::QueryGrid;
pub use sensors::{load_sensor_csv, parse_sensor_csv, SensorSeries, MAX_GAP_DAYS};
pub use synth::{dose, latitude_bowl, start_date, synth_generate, SynthData};

use crate::config::DataConfig;
use crate::error::{Result, StoneError};
use crate::tensor::Tensor;

/// Dose frames `values: [T×P]` over a query grid, index-aligned with the sensor days.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSequence {
    pub values: Tensor,
    pub grid: QueryGrid,
}

impl FieldSequence {
    pub fn new(values: Tensor, grid: QueryGrid) -> Result<Self> {
        if values.dims().len() != 2 || values.dims()[1] != grid.len() {
            return Err(StoneError::dims("field_sequence", values.dims(), &[grid.len()]));
        }
        if let Some(pos) = values.data().iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            let p = grid.len();
            return Err(StoneError::Range(format!(
                "dose {} at frame {} point {} is not positive",
                values.data()[pos],
                pos / p,
                pos % p
            )));
        }
        Ok(FieldSequence { values, grid })
    }

    pub fn len(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> usize {
        self.grid.len()
    }

    pub fn from_pack(pack: &FieldPack) -> Result<Self> {
        let grid = QueryGrid::from_degrees(pack.coords.clone())?;
        let values = pack.frames.iter().map(|&v| v as f64).collect();
        Self::new(Tensor::from_vec(&[pack.frames_len(), pack.points()], values)?, grid)
    }

    pub fn to_pack(&self) -> Result<FieldPack> {
        FieldPack::new(
            self.grid.degrees().to_vec(),
            self.values.data().iter().map(|&v| v as f32).collect(),
        )
    }
}

pub fn load_field_pack(path: &Path) -> Result<FieldSequence> {
    FieldSequence::from_pack(&FieldPack::read(path)?)
}

/// Sensor history `[K_hist×N]` for days `[a−K_hist, a)` and dose target
/// `[P×p×K_fut]` for days `[a, a+K_fut)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair {
    pub history: Tensor,
    pub target: Tensor,
    pub anchor: usize,
}

impl WindowPair {
    pub fn k_hist(&self) -> usize {
        self.history.dims()[0]
    }

    pub fn k_fut(&self) -> usize {
        self.target.dims()[2]
    }

    /// Day range covered by the history.
    pub fn history_days(&self) -> std::ops::Range<usize> {
        self.anchor - self.k_hist()..self.anchor
    }

    /// Day range covered by the target.
    pub fn target_days(&self) -> std::ops::Range<usize> {
        self.anchor..self.anchor + self.k_fut()
    }
}

pub fn window_count(t_total: usize, k_hist: usize, k_fut: usize) -> usize {
    (t_total + 1).saturating_sub(k_hist + k_fut)
}

/// Stride-1 sliding windows in chronological order.
pub fn make_windows(sensors: &SensorSeries, fields: &FieldSequence, k_hist: usize, k_fut: usize) -> Result<Vec<WindowPair>> {
    if k_hist == 0 || k_fut == 0 {
        return Err(StoneError::config("data.k_hist", "window lengths must be at least 1"));
    }
    let t_total = sensors.len();
    if fields.len() != t_total {
        return Err(StoneError::Contract(format!(
            "sensors cover {t_total} days but the field sequence has {} frames",
            fields.len()
        )));
    }
    if t_total < k_hist + k_fut {
        return Err(StoneError::Contract(format!(
            "series of {t_total} days is shorter than the required minimum k_hist + k_fut = {}",
            k_hist + k_fut
        )));
    }
    let n = sensors.n_sensors();
    let p = fields.points();
    let (sv, fv) = (sensors.values.data(), fields.values.data());
    let mut out = Vec::with_capacity(window_count(t_total, k_hist, k_fut));
    for anchor in k_hist..=t_total - k_fut {
        let history = Tensor::from_vec(&[k_hist, n], sv[(anchor - k_hist) * n..anchor * n].to_vec())?;
        let mut target = vec![0.0; p * k_fut];
        for k in 0..k_fut {
            for i in 0..p {
                target[i * k_fut + k] = fv[(anchor + k) * p + i];
            }
        }
        out.push(WindowPair {
            history,
            target: Tensor::from_vec(&[p, 1, k_fut], target)?,
            anchor,
        });
    }
    Ok(out)
}

/// Segment sizes before the leakage guard: `⌊f₀W⌋`, `⌊f₁W⌋`, remainder.
pub fn split_sizes(windows: usize, fractions: [f64; 3]) -> [usize; 3] {
    // the small slack keeps 0.45·100 from flooring to 44
    let n_train = ((fractions[0] * windows as f64) + 1e-9).floor() as usize;
    let n_val = ((fractions[1] * windows as f64) + 1e-9).floor() as usize;
    let n_train = n_train.min(windows);
    let n_val = n_val.min(windows - n_train);
    [n_train, n_val, windows - n_train - n_val]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<WindowPair>,
    pub val: Vec<WindowPair>,
    pub test: Vec<WindowPair>,
}

/// Contiguous chronological split followed by the leakage guard: a window is
/// dropped from an earlier split when its target days reach into the history
/// days of any later split.
pub fn chrono_split(pairs: Vec<WindowPair>, fractions: [f64; 3]) -> Result<Splits> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(StoneError::config("data.split", format!("fractions {fractions:?} must sum to 1")));
    }
    if pairs.windows(2).any(|w| w[1].anchor <= w[0].anchor) {
        return Err(StoneError::Contract("windows must be in chronological order".into()));
    }
    let [n_train, n_val, _] = split_sizes(pairs.len(), fractions);
    let mut test = pairs;
    let mut val = test.drain(..n_train + n_val).collect::<Vec<_>>();
    let mut train = val.drain(..n_train).collect::<Vec<_>>();

    let history_start = |split: &[WindowPair]| split.first().map(|w| w.history_days().start);
    let test_start = history_start(&test);
    let val_start = history_start(&val).or(test_start);
    if let Some(limit) = val_start {
        train.retain(|w| w.target_days().end <= limit);
    }
    if let Some(limit) = test_start {
        val.retain(|w| w.target_days().end <= limit);
    }
    for (name, split) in [("train", &train), ("validation", &val), ("test", &test)] {
        if split.is_empty() {
            return Err(StoneError::config(
                "data.split",
                format!("{name} split is empty after the leakage guard"),
            ));
        }
    }
    Ok(Splits { train, val, test })
}

/// Z-score statistics fitted on the training split only (population std).
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub sensor_mean: Vec<f64>,
    pub sensor_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl NormStats {
    /// Each calendar day contributes once even when shared by several windows.
    pub fn fit(train: &[WindowPair]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| StoneError::Contract("cannot fit normalization on an empty split".into()))?;
        let n = first.history.dims()[1];
        let p = first.target.dims()[0] * first.target.dims()[1];
        let k_fut = first.k_fut();
        let mut sensor_days: BTreeMap<usize, &[f64]> = BTreeMap::new();
        let mut target_days: BTreeMap<usize, (&WindowPair, usize)> = BTreeMap::new();
        for w in train {
            for (r, day) in w.history_days().enumerate() {
                sensor_days.entry(day).or_insert(&w.history.data()[r * n..(r + 1) * n]);
            }
            for (k, day) in w.target_days().enumerate() {
                target_days.entry(day).or_insert((w, k));
            }
        }

        let mut sensor_mean = vec![0.0; n];
        let mut sensor_std = vec![0.0; n];
        for s in 0..n {
            let (m, sd) = mean_std(sensor_days.values().map(|row| row[s]));
            if sd.is_nan() || sd <= 0.0 {
                return Err(StoneError::config(
                    "data.sensors",
                    format!("sensor channel {s} has zero variance on the training split"),
                ));
            }
            sensor_mean[s] = m;
            sensor_std[s] = sd;
        }
        let (target_mean, target_std) = mean_std(
            target_days
                .values()
                .flat_map(|&(w, k)| (0..p).map(move |i| w.target.data()[i * k_fut + k])),
        );
        if target_std.is_nan() || target_std <= 0.0 {
            return Err(StoneError::config(
                "data.fields",
                "target channel has zero variance on the training split",
            ));
        }
        Ok(NormStats {
            sensor_mean,
            sensor_std,
            target_mean,
            target_std,
        })
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_mean.len()
    }

    /// Normalizes a `[..×N]` history.
    pub fn apply_history(&self, history: &Tensor) -> Result<Tensor> {
        let n = self.n_sensors();
        if history.dims().last() != Some(&n) {
            return Err(StoneError::dims("apply_history", history.dims(), &[n]));
        }
        let mut out = history.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let s = i % n;
            *v = (*v - self.sensor_mean[s]) / self.sensor_std[s];
        }
        Ok(out)
    }

    pub fn invert_history(&self, history: &Tensor) -> Result<Tensor> {
        let n = self.n_sensors();
        if history.dims().last() != Some(&n) {
            return Err(StoneError::dims("invert_history", history.dims(), &[n]));
        }
        let mut out = history.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let s = i % n;
            *v = *v * self.sensor_std[s] + self.sensor_mean[s];
        }
        Ok(out)
    }

    pub fn apply_target(&self, target: &Tensor) -> Tensor {
        target.map(|v| (v - self.target_mean) / self.target_std)
    }

    pub fn invert_target(&self, target: &Tensor) -> Tensor {
        target.map(|v| v * self.target_std + self.target_mean)
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values.clone() {
        sum += v;
        count += 1;
    }
    let mean = sum / count as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
    (mean, var.sqrt())
}

/// Normalized, stacked windows ready for batching.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    /// `[W×K_hist×N]`, normalized.
    pub histories: Tensor,
    /// `[W×P×p×K_fut]`, normalized.
    pub targets: Tensor,
    /// `[W×P×p×K_fut]` in physical units.
    pub targets_raw: Tensor,
    pub anchors: Vec<usize>,
}

impl WindowSet {
    pub fn from_pairs(pairs: &[WindowPair], norm: &NormStats) -> Result<Self> {
        if pairs.is_empty() {
            return Err(StoneError::Contract("window set needs at least one window".into()));
        }
        let hist = pairs.iter().map(|w| norm.apply_history(&w.history)).collect::<Result<Vec<_>>>()?;
        let raw: Vec<&Tensor> = pairs.iter().map(|w| &w.target).collect();
        let targets_raw = Tensor::stack(&raw)?;
        Ok(WindowSet {
            histories: Tensor::stack(&hist.iter().collect::<Vec<_>>())?,
            targets: norm.apply_target(&targets_raw),
            targets_raw,
            anchors: pairs.iter().map(|w| w.anchor).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Normalized `(histories, targets)` for the given window indices.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        Ok((gather(&self.histories, indices)?, gather(&self.targets, indices)?))
    }
}

fn gather(t: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let rows = indices.iter().map(|&i| t.rows(i, 1)).collect::<Result<Vec<_>>>()?;
    let mut dims = t.dims().to_vec();
    dims[0] = indices.len();
    Tensor::stack(&rows.iter().collect::<Vec<_>>())?.reshape(&dims)
}

/// Sensors and fields loaded from files or generated in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sensors: SensorSeries,
    pub fields: FieldSequence,
}

impl Dataset {
    /// Resolves the data section; relative paths are taken from `base`.
    pub fn from_config(cfg: &DataConfig, base: &Path) -> Result<Self> {
        if let Some(s) = &cfg.synth {
            let d = synth_generate(s.seed, s.sensors, (s.grid[0], s.grid[1]), s.days, s.cycles)?;
            return Ok(Dataset {
                sensors: d.sensors,
                fields: d.fields,
            });
        }
        let (sensors, fields) = match (&cfg.sensors, &cfg.fields, &cfg.dir) {
            (Some(s), Some(f), _) => (base.join(s), base.join(f)),
            (None, None, Some(d)) => (base.join(d).join("sensors.csv"), base.join(d).join("fields.stnf")),
            _ => {
                return Err(StoneError::config(
                    "data",
                    "one of `synth`, `dir`, or `sensors` + `fields` is required",
                ))
            }
        };
        Ok(Dataset {
            sensors: load_sensor_csv(&sensors)?,
            fields: load_field_pack(&fields)?,
        })
    }

    pub fn prepare(&self, k_hist: usize, k_fut: usize, split: [f64; 3]) -> Result<Prepared> {
        let windows = make_windows(&self.sensors, &self.fields, k_hist, k_fut)?;
        let splits = chrono_split(windows, split)?;
        let norm = NormStats::fit(&splits.train)?;
        Ok(Prepared {
            train: WindowSet::from_pairs(&splits.train, &norm)?,
            val: WindowSet::from_pairs(&splits.val, &norm)?,
            test: WindowSet::from_pairs(&splits.test, &norm)?,
            norm,
            grid: self.fields.grid.clone(),
        })
    }
}

/// Normalized splits with their statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    pub norm: NormStats,
    pub grid: QueryGrid,
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Days;

    fn toy(t_total: usize, n: usize, p: usize) -> (SensorSeries, FieldSequence) {
        let dates = (0..t_total).map(|d| start_date() + Days::new(d as u64)).collect();
        let sv = (0..t_total * n).map(|i| (i as f64 * 0.7).sin() + 2.0).collect();
        let ids = (0..n).map(|s| format!("s{s}")).collect();
        let sensors = SensorSeries::new(dates, Tensor::from_vec(&[t_total, n], sv).unwrap(), ids).unwrap();
        let degrees = (0..p).map(|i| [i as f64, 0.0]).collect();
        let fv = (0..t_total * p).map(|i| 1.0 + (i / p) as f64 + 0.01 * (i % p) as f64).collect();
        let fields = FieldSequence::new(
            Tensor::from_vec(&[t_total, p], fv).unwrap(),
            QueryGrid::from_degrees(degrees).unwrap(),
        )
        .unwrap();
        (sensors, fields)
    }

    #[test]
    fn window_contents_follow_day_ranges() {
        let (s, f) = toy(5, 2, 3);
        let w = make_windows(&s, &f, 2, 2).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[0].anchor, 2);
        assert_eq!(w[1].history.data(), &s.values.data()[2..6]);
        // target[i, 0, k] = field[a + k, i]
        assert_eq!(w[1].target.at(&[2, 0, 1]), f.values.at(&[4, 2]));
    }

    #[test]
    fn window_counts() {
        let (s, f) = toy(360, 1, 1);
        assert_eq!(make_windows(&s, &f, 180, 180).unwrap().len(), 1);
        assert_eq!(window_count(5, 2, 2), 2);
        let err = make_windows(&s, &f, 200, 180).unwrap_err();
        assert!(err.to_string().contains("380"), "{err}");
    }

    #[test]
    fn split_sizes_from_fractions() {
        assert_eq!(split_sizes(100, [0.45, 0.10, 0.45]), [45, 10, 45]);
        assert_eq!(split_sizes(641, [0.45, 0.10, 0.45]), [288, 64, 289]);
    }

    #[test]
    fn guard_drops_boundary_windows() {
        let (s, f) = toy(20, 1, 1);
        let w = make_windows(&s, &f, 2, 2).unwrap();
        assert_eq!(w.len(), 17);
        let sp = chrono_split(w, [0.4, 0.3, 0.3]).unwrap();
        let anchors = |v: &[WindowPair]| v.iter().map(|w| w.anchor).collect::<Vec<_>>();
        // pre-guard: train 2..=7, val 8..=12, test 13..=18
        assert_eq!(anchors(&sp.train), vec![2, 3, 4]);
        assert_eq!(anchors(&sp.val), vec![8, 9]);
        assert_eq!(anchors(&sp.test), (13..=18).collect::<Vec<_>>());
    }

    #[test]
    fn guard_emptying_a_split_is_config_error() {
        let (s, f) = toy(20, 1, 1);
        let w = make_windows(&s, &f, 2, 2).unwrap();
        let err = chrono_split(w, [0.45, 0.10, 0.45]).unwrap_err();
        assert!(matches!(err, StoneError::Config { ref field, .. } if field == "data.split"), "{err}");
    }

    #[test]
    fn norm_stats_toy_channel() {
        let history = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let target = Tensor::from_vec(&[1, 1, 1], vec![5.0]).unwrap();
        let w = WindowPair { history, target: target.clone(), anchor: 3 };
        let w2 = WindowPair {
            history: Tensor::from_vec(&[3, 1], vec![2.0, 3.0, 3.0]).unwrap(),
            target: Tensor::from_vec(&[1, 1, 1], vec![7.0]).unwrap(),
            anchor: 4,
        };
        // day 3 appears in both windows and counts once
        let stats = NormStats::fit(&[w, w2]).unwrap();
        let m = 9.0 / 4.0;
        let sd = ([1.0, 2.0, 3.0, 3.0].iter().map(|v: &f64| (v - m).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert_eq!(stats.sensor_mean, vec![m]);
        assert!((stats.sensor_std[0] - sd).abs() < 1e-15);
        assert_eq!((stats.target_mean, stats.target_std), (6.0, 1.0));
    }

    #[test]
    fn three_value_channel() {
        let w = WindowPair {
            history: Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap(),
            target: Tensor::from_vec(&[2, 1, 1], vec![1.0, 2.0]).unwrap(),
            anchor: 3,
        };
        let s = NormStats::fit(&[w]).unwrap();
        assert_eq!(s.sensor_mean[0], 2.0);
        assert!((s.sensor_std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_channel_rejected() {
        let w = WindowPair {
            history: Tensor::from_vec(&[3, 2], vec![1.0, 4.0, 2.0, 4.0, 3.0, 4.0]).unwrap(),
            target: Tensor::from_vec(&[2, 1, 1], vec![1.0, 2.0]).unwrap(),
            anchor: 3,
        };
        let err = NormStats::fit(&[w]).unwrap_err();
        assert!(err.to_string().contains("channel 1"), "{err}");
    }

    #[test]
    fn apply_invert_round_trip() {
        let (s, f) = toy(40, 3, 4);
        let w = make_windows(&s, &f, 4, 3).unwrap();
        let stats = NormStats::fit(&w[..10]).unwrap();
        for pair in &w {
            let h = stats.invert_history(&stats.apply_history(&pair.history).unwrap()).unwrap();
            for (a, b) in h.data().iter().zip(pair.history.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            let t = stats.invert_target(&stats.apply_target(&pair.target));
            for (a, b) in t.data().iter().zip(pair.target.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batches_gather_rows() {
        let (s, f) = toy(30, 2, 3);
        let w = make_windows(&s, &f, 3, 2).unwrap();
        let stats = NormStats::fit(&w).unwrap();
        let set = WindowSet::from_pairs(&w, &stats).unwrap();
        let (h, t) = set.batch(&[4, 1]).unwrap();
        assert_eq!(h.dims(), &[2, 3, 2]);
        assert_eq!(t.dims(), &[2, 3, 1, 2]);
        assert_eq!(h.rows(0, 1).unwrap().data(), set.histories.rows(4, 1).unwrap().data());
        assert_eq!(t.rows(1, 1).unwrap().data(), set.targets.rows(1, 1).unwrap().data());
    }

    #[test]
    fn field_pack_conversion_round_trip() {
        let (_, f) = toy(6, 1, 3);
        let f = FieldSequence::new(f.values.map(|v| v as f32 as f64), f.grid).unwrap();
        assert_eq!(FieldSequence::from_pack(&f.to_pack().unwrap()).unwrap(), f);
    }

    #[test]
    fn non_positive_dose_rejected() {
        let grid = QueryGrid::from_degrees(vec![[0.0, 0.0]]).unwrap();
        assert!(FieldSequence::new(Tensor::from_vec(&[2, 1], vec![1.0, 0.0]).unwrap(), grid).is_err());
    }
}
