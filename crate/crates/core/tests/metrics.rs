//! Metric laws on random inputs.

use flowcast::metrics::{
    average_report, format_table, mae, mape, mse, residuals, rmse, MetricSpace, MetricsReport,
    RowLabel, ZeroPolicy,
};
use proptest::prelude::*;

fn pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((1.0f64..500.0, 0.0f64..500.0), 1..60)
}

proptest! {
    #[test]
    fn residuals_match_elementwise_difference(v in pairs()) {
        let (a, p): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let e = residuals(&a, &p).unwrap();
        for i in 0..a.len() {
            prop_assert_eq!(e[i], a[i] - p[i]);
        }
        let n = a.len() as f64;
        let want_mse = e.iter().map(|x| x * x).sum::<f64>() / n;
        let want_mae = e.iter().map(|x| x.abs()).sum::<f64>() / n;
        prop_assert!((mse(&e).unwrap() - want_mse).abs() <= 1e-9 * want_mse.max(1.0));
        prop_assert!((mae(&e).unwrap() - want_mae).abs() <= 1e-9 * want_mae.max(1.0));
        prop_assert!(mae(&e).unwrap() <= rmse(&e).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn metrics_ignore_point_order(v in pairs(), rot in 0usize..60) {
        let (a, p): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
        let k = rot % v.len();
        let mut w = v.clone();
        w.rotate_left(k);
        w.reverse();
        let (a2, p2): (Vec<f64>, Vec<f64>) = w.into_iter().unzip();
        let r1 = MetricsReport::compute("s", "m", &a, &p, MetricSpace::Scaled, ZeroPolicy::default()).unwrap();
        let r2 = MetricsReport::compute("s", "m", &a2, &p2, MetricSpace::Scaled, ZeroPolicy::default()).unwrap();
        for (x, y) in [(r1.mape_percent, r2.mape_percent), (r1.mae, r2.mae), (r1.mse, r2.mse), (r1.rmse, r2.rmse)] {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn mape_is_scale_free(v in pairs(), k in 0.01f64..100.0) {
        let (a, p): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let scale = |xs: &[f64]| xs.iter().map(|x| x * k).collect::<Vec<_>>();
        let m1 = mape(&a, &p, ZeroPolicy::Error).unwrap().percent;
        let m2 = mape(&scale(&a), &scale(&p), ZeroPolicy::Error).unwrap().percent;
        prop_assert!((m1 - m2).abs() <= 1e-9 * m1.max(1.0));
    }

    #[test]
    fn averaging_a_report_with_itself_is_identity(v in pairs()) {
        let (a, p): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let r = MetricsReport::compute("s", "m", &a, &p, MetricSpace::Original, ZeroPolicy::default()).unwrap();
        let avg = average_report(&[r.clone(), r.clone()]).unwrap();
        prop_assert!((avg.mse - r.mse).abs() <= 1e-12 * r.mse.max(1.0));
        prop_assert_eq!(avg.n, 2 * r.n);
    }
}

#[test]
fn zero_actuals_follow_the_policy() {
    let m = mape(&[0.0, 50.0, 1e-9], &[1.0, 40.0, 0.5], ZeroPolicy::default()).unwrap();
    assert_eq!((m.used, m.excluded), (1, 2));
    assert!((m.percent - 20.0).abs() < 1e-12);
    assert!(mape(&[0.0, 50.0], &[1.0, 40.0], ZeroPolicy::Error).is_err());
    assert!(mape(&[0.0], &[1.0], ZeroPolicy::default()).is_err());
}

#[test]
fn table_has_one_line_per_row() {
    let rows: Vec<MetricsReport> = (0..3)
        .map(|i| {
            MetricsReport::compute(
                &format!("st{i}"),
                "LSTM",
                &[10.0, 20.0],
                &[11.0, 19.0 + i as f64],
                MetricSpace::Scaled,
                ZeroPolicy::default(),
            )
            .unwrap()
        })
        .collect();
    let t = format_table("LSTM", &rows, RowLabel::Station);
    assert_eq!(t.lines().count(), 2 + rows.len());
    assert!(t.lines().nth(2).unwrap().starts_with("st0"));
}
