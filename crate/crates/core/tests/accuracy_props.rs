mod common;

use proptest::prelude::*;

use codesign::accuracy::{
    descriptors, proxy_train_eval, surrogate_acc_loss, surrogate_acc_loss_node, AccuracyEvaluator, Descriptors,
    ProxyConfig, ProxyDataset,
};
use codesign::autodiff::{Tape, VarId};
use codesign::config::EvaluatorConfig;
use codesign::space::OpKind;
use common::{configs_dir, load_config, small_space};

fn bundled_dataset() -> ProxyDataset {
    let text = std::fs::read_to_string(configs_dir().join("data/blobs.csv")).unwrap();
    ProxyDataset::from_csv_str(&text, 0.25, 11).unwrap()
}

fn toy_surrogate() -> codesign::accuracy::SurrogateParams {
    match load_config("toy_scd.toml").config.evaluator {
        EvaluatorConfig::Surrogate(s) => s,
        _ => unreachable!("toy configs use the surrogate"),
    }
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    let params = toy_surrogate();
    let h = 1e-6;
    for k in 0..100 {
        let d = [2.0 + 0.1 * k as f64, (k % 7) as f64, 0.01 * (k % 5) as f64];
        let mut tape = Tape::new();
        let v: Vec<_> = d.iter().enumerate().map(|(i, &x)| tape.var(VarId(i as u64), x)).collect();
        let y = surrogate_acc_loss_node(&mut tape, &params, v[0], v[1], v[2]);
        let f = |x: [f64; 3]| {
            surrogate_acc_loss(&params, &Descriptors { log_param_count: x[0], effective_depth: x[1], quant_penalty: x[2] })
        };
        assert!((tape.value(y) - f(d)).abs() < 1e-15);
        let g = tape.grad_all(y).unwrap();
        for i in 0..3 {
            let (mut up, mut down) = (d, d);
            up[i] += h;
            down[i] -= h;
            let fd = (f(up) - f(down)) / (2.0 * h);
            let an = g[&VarId(i as u64)];
            assert!((an - fd).abs() / an.abs().max(1e-12) < 1e-4, "case {k} d{i}: {an} vs {fd}");
        }
    }
}

#[test]
fn surrogate_constant_without_weights() {
    let mut p = toy_surrogate();
    p.capacity_weight = 0.0;
    p.depth_weight = 0.0;
    for v in p.quant_penalty.values_mut() {
        *v = 0.0;
    }
    let space = small_space();
    for seed in 0..50 {
        let pt = space.sample_uniform(seed).unwrap();
        let loss = AccuracyEvaluator::acc_loss(&p, &space, &pt).ok();
        // small_space also offers 4-bit ops, which the toy table lacks
        if let Some(l) = loss {
            assert!((l - (p.floor + 1.0)).abs() < 1e-15);
        }
    }
}

#[test]
fn lower_precision_costs_accuracy() {
    let p = codesign::accuracy::SurrogateParams::default();
    let space = small_space();
    for seed in 0..100 {
        let mut a = space.sample_uniform(seed).unwrap();
        let cands = space.candidates(&a.bundle_id).unwrap();
        let slot = (0..a.replications).find(|&i| {
            let op = &cands[a.op_choice[i]];
            op.kind != OpKind::Identity && op.allowed_quant_bits.contains(&4) && op.allowed_quant_bits.contains(&16)
        });
        let Some(i) = slot else { continue };
        a.quant_bits[i] = 16;
        let mut b = a.clone();
        b.quant_bits[i] = 4;
        assert!(p.acc_loss(&space, &b).unwrap() > p.acc_loss(&space, &a).unwrap());
        let (da, db) = (descriptors(&p, &space, &a).unwrap(), descriptors(&p, &space, &b).unwrap());
        assert_eq!(da.log_param_count, db.log_param_count);
    }
}

#[test]
fn proxy_is_bitwise_deterministic() {
    let c = load_config("mixed_proxy_pso.toml");
    let data = bundled_dataset();
    let p = c.space.sample_uniform(3).unwrap();
    let cfg = ProxyConfig { epochs: 20, ..Default::default() };
    let a = proxy_train_eval(&p, &data, &cfg, 7).unwrap();
    let b = proxy_train_eval(&p, &data, &cfg, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.train_losses.len(), 21);
}

#[test]
fn proxy_loss_never_rises_at_default_lr() {
    let c = load_config("mixed_proxy_pso.toml");
    let data = bundled_dataset();
    let cfg = ProxyConfig::default();
    let mut points = vec![c.space.default_point()];
    points.extend((0..12).map(|s| c.space.sample_uniform(s).unwrap()));
    for p in &points {
        let out = proxy_train_eval(p, &data, &cfg, 11).unwrap();
        for (e, w) in out.train_losses.windows(2).enumerate() {
            assert!(w[1] <= w[0] + 1e-6, "{p:?} epoch {e}: {} -> {}", w[0], w[1]);
        }
        assert!((0.0..=1.0).contains(&out.val_accuracy));
    }
}

#[test]
fn wider_network_is_no_worse_in_median() {
    let c = load_config("mixed_proxy_pso.toml");
    let data = bundled_dataset();
    let cfg = ProxyConfig::default();
    let mut narrow = c.space.default_point();
    narrow.replications = 2;
    narrow.channels = vec![16, 16, 32, 32];
    let mut wide = narrow.clone();
    wide.channels = vec![32, 32, 64, 64];
    let median = |p: &codesign::space::DesignPoint| {
        let mut v: Vec<f64> = (0..10).map(|s| proxy_train_eval(p, &data, &cfg, s).unwrap().val_accuracy).collect();
        v.sort_by(f64::total_cmp);
        (v[4] + v[5]) / 2.0
    };
    let (n, w) = (median(&narrow), median(&wide));
    assert!(w >= n, "wide {w} < narrow {n}");
}

#[test]
fn single_class_dataset_is_rejected() {
    let err = ProxyDataset::from_csv_str("x,label\n0.1,2\n0.3,2\n0.5,2\n0.7,2\n", 0.25, 0);
    assert!(err.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn more_parameters_lower_the_loss(lp in 0.0f64..20.0, dlp in 0.001f64..5.0, depth in 0.0f64..10.0, pen in 0.0f64..1.0) {
        let p = toy_surrogate();
        let a = surrogate_acc_loss(&p, &Descriptors { log_param_count: lp, effective_depth: depth, quant_penalty: pen });
        let b = surrogate_acc_loss(&p, &Descriptors { log_param_count: lp + dlp, effective_depth: depth, quant_penalty: pen });
        prop_assert!(b < a);
        prop_assert!(b > p.floor);
    }

    #[test]
    fn dataset_csv_round_trips(seed in 0u64..1000, rows in 2usize..20, dims in 2usize..5, classes in 2usize..4) {
        let d = ProxyDataset::synthetic_blobs(seed, rows, dims, classes).unwrap();
        let back = ProxyDataset::from_csv_str(&d.to_csv_string(), 0.25, seed).unwrap();
        prop_assert_eq!(back.features, d.features);
        prop_assert_eq!(back.labels, d.labels);
    }
}
