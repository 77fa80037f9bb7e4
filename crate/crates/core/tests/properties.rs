use isac_core::autodiff::{Activation, Graph};
use isac_core::channel::{steering_vector, CTensor};
use isac_core::comm_rx::decide;
use isac_core::config::TrainPower;
use isac_core::eval::{compute_detection, compute_ser, read_metrics_csv, write_metrics_csv};
use isac_core::training::isac_loss;
use isac_core::{AngleInterval, EstimatorKind, MetricsRow, SystemConfig, TransmitterKind};
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #[test]
    fn steering_vectors_have_unit_norm(theta in -90.0f64..90.0, n in 1usize..64) {
        let a = steering_vector(theta, n);
        prop_assert!((a.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_normalization_hits_budget(x in matrix(6, 5), p_dbm in -10.0f64..30.0) {
        prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
        let p = 10f64.powf(p_dbm / 10.0);
        let mut g = Graph::new();
        let xi = g.leaf(x);
        let y = g.power_normalize(xi, p).unwrap();
        let mean = g.value(y).mapv(|v| v * v).sum() / 5.0;
        prop_assert!((mean - p).abs() <= 1e-9 * p);
    }

    #[test]
    fn softmax_columns_are_distributions(x in matrix(5, 3)) {
        let mut g = Graph::new();
        let xi = g.leaf(x * 20.0);
        let y = g.activation(Activation::SoftmaxCols, xi).unwrap();
        for c in g.value(y).columns() {
            prop_assert!((c.sum() - 1.0).abs() < 1e-12);
            prop_assert!(c.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn isac_loss_is_affine(l in prop::array::uniform3(0.0f64..10.0), w1 in 0.0f64..=1.0, w2 in 0.0f64..=1.0) {
        let direct = isac_loss(l[0], l[1], l[2], w1, w2);
        let coef = [
            isac_loss(1.0, 0.0, 0.0, w1, w2),
            isac_loss(0.0, 1.0, 0.0, w1, w2),
            isac_loss(0.0, 0.0, 1.0, w1, w2),
        ];
        prop_assert!((coef[0] - w2 * (1.0 - w1)).abs() < 1e-15);
        prop_assert!((coef[1] - w2 * w1).abs() < 1e-15);
        prop_assert!((coef[2] - (1.0 - w2)).abs() < 1e-15);
        let recomposed = coef[0] * l[0] + coef[1] * l[1] + coef[2] * l[2];
        prop_assert!((direct - recomposed).abs() < 1e-12);
    }

    #[test]
    fn real_rep_acts_like_complex_product(a in matrix(6, 8), x in matrix(8, 2)) {
        let a = CTensor::new(a.slice(ndarray::s![..3, ..4]).to_owned(), a.slice(ndarray::s![3.., 4..]).to_owned()).unwrap();
        let x = CTensor::new(x.slice(ndarray::s![..4, ..]).to_owned(), x.slice(ndarray::s![4.., ..]).to_owned()).unwrap();
        let direct = a.matmul(&x).unwrap().to_stacked();
        let via = a.real_rep().dot(&x.to_stacked());
        prop_assert!((&direct - &via).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn decide_picks_a_maximum(p in prop::collection::vec(0.0f64..1.0, 1..16)) {
        let i = decide(&p);
        prop_assert!(p.iter().all(|&v| v <= p[i]));
        prop_assert!(p[..i].iter().all(|&v| v < p[i]));
    }

    #[test]
    fn detection_matches_recount(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 2..400)) {
        let (t_hat, t): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let h1 = t.iter().filter(|&&v| v).count();
        let h0 = t.len() - h1;
        match compute_detection(&t_hat, &t) {
            Ok((pd, pfa)) => {
                let mut hits = 0.0;
                let mut fas = 0.0;
                for i in 0..t.len() {
                    if t[i] && t_hat[i] { hits += 1.0; }
                    if !t[i] && t_hat[i] { fas += 1.0; }
                }
                prop_assert_eq!(pd, hits / h1 as f64);
                prop_assert_eq!(pfa, fas / h0 as f64);
            }
            Err(_) => prop_assert!(h1 == 0 || h0 == 0),
        }
    }

    #[test]
    fn ser_matches_recount(k in 1usize..4, seed in any::<u64>(), len in 1usize..300) {
        use rand::Rng;
        let mut rng = isac_core::rng::stream(seed, isac_core::Purpose::TestData, 0);
        let truth: Vec<Vec<usize>> = (0..k).map(|_| (0..len).map(|_| rng.random_range(0..4)).collect()).collect();
        let dec: Vec<Vec<usize>> = (0..k).map(|_| (0..len).map(|_| rng.random_range(0..4)).collect()).collect();
        let mut wrong = 0usize;
        for u in 0..k {
            for b in 0..len {
                if dec[u][b] != truth[u][b] { wrong += 1; }
            }
        }
        prop_assert_eq!(compute_ser(&dec, &truth).unwrap(), wrong as f64 / (k * len) as f64);
    }

    #[test]
    fn metrics_csv_round_trips(rows in prop::collection::vec(
        (-20.0f64..40.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..90.0, 1usize..1_000_000, any::<bool>(), any::<bool>()),
        0..20,
    )) {
        let rows: Vec<MetricsRow> = rows
            .into_iter()
            .map(|(p, s, d, f, r, n, slp, lstm)| MetricsRow {
                p_dbm: p,
                ser_avg: s,
                p_d: d,
                p_fa: f,
                rmse_deg: r,
                n_samples: n,
                mode: if slp { TransmitterKind::Slp } else { TransmitterKind::Blp },
                estimator: if lstm { EstimatorKind::Lstm } else { EstimatorKind::Mlp },
            })
            .collect();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        prop_assert_eq!(read_metrics_csv(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn config_text_round_trips(
        nt in 1usize..32, k in 1usize..4, n in 1usize..16, p in -10.0f64..30.0,
        w1 in 0.0f64..=1.0, lo in -80.0f64..0.0, width in 0.0f64..60.0, seed in any::<u64>(), unif in any::<bool>(),
    ) {
        let mut cfg = SystemConfig::default();
        cfg.nt = nt;
        cfg.k = k;
        cfg.user_bounds.truncate(k);
        cfg.n = n;
        cfg.p_dbm = p;
        cfg.omega1 = w1;
        cfg.theta_bounds = AngleInterval::new(lo, lo + width);
        cfg.seed = seed;
        if unif {
            cfg.train_power = TrainPower::Uniform { lo_dbm: p - 4.0, hi_dbm: p + 4.0 };
        }
        let back: SystemConfig = cfg.to_string().parse().unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }
}
