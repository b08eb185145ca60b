use proptest::prelude::*;

use stone_core::data::{
    chrono_split, make_windows, split_sizes, synth_generate, window_count, Dataset, FieldPack, FieldSequence,
    SensorSeries,
};
use stone_core::metrics::{mae, mape, rel_l2, rmse, MAPE_FLOOR};
use stone_core::tensor::Tensor;

fn paired(len: impl Into<prop::collection::SizeRange>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((0.1f64..50.0, -5.0f64..5.0), len)
        .prop_map(|v| v.into_iter().map(|(y, d)| (y, y + d)).unzip())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn rel_l2_matches_oracle((y, yhat) in paired(1..60)) {
        let num: f64 = y.iter().zip(&yhat).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        let den: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(close(rel_l2(&y, &yhat).unwrap(), num / den, 1e-12));
    }

    #[test]
    fn mae_never_exceeds_rmse((y, yhat) in paired(1..60)) {
        let (a, r) = (mae(&y, &yhat).unwrap(), rmse(&y, &yhat).unwrap());
        prop_assert!(a <= r * (1.0 + 1e-12));
    }

    #[test]
    fn mape_matches_oracle((y, yhat) in paired(1..60)) {
        let m = mape(&y, &yhat, MAPE_FLOOR).unwrap();
        let oracle = 100.0 * y.iter().zip(&yhat).map(|(a, b)| ((b - a) / a).abs()).sum::<f64>() / y.len() as f64;
        prop_assert_eq!(m.excluded, 0);
        prop_assert!(close(m.value, oracle, 1e-12));
    }

    #[test]
    fn relative_metrics_are_scale_invariant((y, yhat) in paired(1..40), c in 0.01f64..100.0) {
        let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
        let hs: Vec<f64> = yhat.iter().map(|v| v * c).collect();
        prop_assert!(close(rel_l2(&ys, &hs).unwrap(), rel_l2(&y, &yhat).unwrap(), 1e-10));
        prop_assert!(close(mape(&ys, &hs, MAPE_FLOOR).unwrap().value, mape(&y, &yhat, MAPE_FLOOR).unwrap().value, 1e-10));
        prop_assert!(close(rmse(&ys, &hs).unwrap(), c * rmse(&y, &yhat).unwrap(), 1e-10));
        prop_assert!(close(mae(&ys, &hs).unwrap(), c * mae(&y, &yhat).unwrap(), 1e-10));
    }

    #[test]
    fn perfect_forecast_scores_zero(y in prop::collection::vec(0.1f64..50.0, 1..40)) {
        prop_assert_eq!(rel_l2(&y, &y).unwrap(), 0.0);
        prop_assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        prop_assert_eq!(mae(&y, &y).unwrap(), 0.0);
        prop_assert_eq!(mape(&y, &y, MAPE_FLOOR).unwrap().value, 0.0);
    }

    #[test]
    fn window_count_sweep(t in 2usize..80, kh in 1usize..20, kf in 1usize..20) {
        let expected = if t >= kh + kf { t - kh - kf + 1 } else { 0 };
        prop_assert_eq!(window_count(t, kh, kf), expected);
        let d = synth_generate(1, 2, (2, 2), t, 1.0).unwrap();
        match make_windows(&d.sensors, &d.fields, kh, kf) {
            Ok(w) => {
                prop_assert_eq!(w.len(), expected);
                for (i, pair) in w.iter().enumerate() {
                    prop_assert_eq!(pair.anchor, kh + i);
                    prop_assert_eq!(pair.history_days(), i..i + kh);
                    prop_assert_eq!(pair.target_days(), kh + i..kh + i + kf);
                }
            }
            Err(_) => prop_assert_eq!(expected, 0),
        }
    }

    #[test]
    fn split_sizes_partition_windows(w in 0usize..2000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let train = a;
        let val = (1.0 - a) * b;
        let sizes = split_sizes(w, [train, val, 1.0 - train - val]);
        prop_assert_eq!(sizes.iter().sum::<usize>(), w);
    }

    #[test]
    fn guarded_splits_never_share_target_and_history_days(days in 120usize..260, kh in 2usize..10, kf in 2usize..10) {
        let d = synth_generate(2, 2, (2, 2), days, 1.0).unwrap();
        let w = make_windows(&d.sensors, &d.fields, kh, kf).unwrap();
        if let Ok(s) = chrono_split(w, [0.45, 0.10, 0.45]) {
            let val_start = s.val[0].history_days().start;
            let test_start = s.test[0].history_days().start;
            prop_assert!(s.train.iter().all(|p| p.target_days().end <= val_start));
            prop_assert!(s.val.iter().all(|p| p.target_days().end <= test_start));
        }
    }

    #[test]
    fn normalization_ignores_validation_and_test_days(seed in 0u64..50, bump in -30.0f64..30.0) {
        let d = synth_generate(seed, 3, (2, 3), 160, 1.5).unwrap();
        let (kh, kf, split) = (6, 5, [0.45, 0.10, 0.45]);
        let base = Dataset { sensors: d.sensors.clone(), fields: d.fields.clone() };
        let prepared = base.prepare(kh, kf, split).unwrap();

        let windows = make_windows(&d.sensors, &d.fields, kh, kf).unwrap();
        let train_end = chrono_split(windows, split).unwrap().train.iter().map(|w| w.target_days().end).max().unwrap();

        let n = d.sensors.n_sensors();
        let p = d.fields.points();
        let mut sv = d.sensors.values.data().to_vec();
        let mut fv = d.fields.values.data().to_vec();
        sv[train_end * n..].iter_mut().for_each(|v| *v += bump);
        fv[train_end * p..].iter_mut().for_each(|v| *v *= 1.0 + bump.abs() / 10.0);
        let changed = Dataset {
            sensors: SensorSeries::new(
                d.sensors.dates.clone(),
                Tensor::from_vec(d.sensors.values.dims(), sv).unwrap(),
                d.sensors.station_ids.clone(),
            ).unwrap(),
            fields: FieldSequence::new(Tensor::from_vec(d.fields.values.dims(), fv).unwrap(), d.fields.grid.clone()).unwrap(),
        };
        let other = changed.prepare(kh, kf, split).unwrap();
        prop_assert_eq!(&prepared.norm, &other.norm);
        prop_assert_eq!(&prepared.train, &other.train);
    }

    #[test]
    fn field_pack_round_trips(points in 1usize..6, frames in 1usize..6, seed in any::<u64>()) {
        let coords: Vec<[f64; 2]> = (0..points).map(|i| [i as f64 - 2.5, (seed % 97) as f64 + i as f64]).collect();
        let values: Vec<f32> = (0..points * frames).map(|i| (seed.wrapping_mul(i as u64 + 1) % 1000) as f32 / 7.0).collect();
        let pack = FieldPack::new(coords, values).unwrap();
        let bytes = pack.to_bytes();
        prop_assert_eq!(bytes.len(), 16 + points * 16 + points * frames * 4);
        prop_assert_eq!(FieldPack::from_bytes(&bytes).unwrap(), pack);
    }

    #[test]
    fn truncated_field_pack_is_rejected(cut in 0usize..40) {
        let pack = FieldPack::new(vec![[0.0, 1.0], [2.0, 3.0]], vec![1.0; 6]).unwrap();
        let bytes = pack.to_bytes();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(FieldPack::from_bytes(&bytes[..cut]).is_err());
    }
}
