use classreg::synth::{make_split, ClipSpec};
use classreg::training::{
    evaluate, train, train_on, ComparisonReport, NoopObserver, PairRow, TrainConfig, TrainParams,
};
use classreg::{Network, NetworkSpec};

fn small_config(epochs: usize) -> TrainConfig {
    let dataset = ClipSpec::default();
    TrainConfig {
        network: NetworkSpec {
            input: dataset.geometry(),
            classes: dataset.classes,
            layers: NetworkSpec::default_layers(),
            classreg: NetworkSpec::default_classreg(),
        },
        dataset,
        train_size: 60,
        val_size: 40,
        params: TrainParams { epochs, batch_size: 10, ..TrainParams::default() },
        checkpoint: None,
        metrics: None,
    }
}

#[test]
fn zero_learning_rate_is_a_fixed_point() {
    let mut cfg = small_config(1);
    cfg.params.lr = 0.0;
    let (tr, va) = make_split(&cfg.dataset, cfg.train_size, cfg.val_size).unwrap();
    let out = train_on(&cfg, &tr, &va, &mut NoopObserver).unwrap();
    let init = Network::new(&cfg.network, cfg.params.seed).unwrap();
    for ((n, a), (_, b)) in out.network.named_parameters().iter().zip(init.named_parameters()) {
        assert!(a.bit_eq(b), "{n} moved");
    }
}

#[test]
fn loss_decreases_over_first_epochs() {
    let mut cfg = small_config(3);
    cfg.train_size = 500;
    cfg.params.batch_size = 16;
    let out = train(&cfg).unwrap();
    let losses: Vec<f64> = out.metrics.iter().map(|m| m.train_loss).collect();
    assert!(losses[0] < (5.0f64).ln() + 0.1, "{losses:?}");
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert!(losses[2] < (5.0f64).ln());
}

#[test]
fn metrics_files_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let mut cfg = small_config(2);
        cfg.metrics = Some(dir.path().join(name));
        cfg.checkpoint = Some(dir.path().join(format!("{name}.crn")));
        let out = train(&cfg).unwrap();
        (std::fs::read(dir.path().join(name)).unwrap(), out)
    };
    let (a, oa) = run("a.jsonl");
    let (b, ob) = run("b.jsonl");
    assert_eq!(a, b);
    assert_eq!(oa.metrics, ob.metrics);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 2);
    assert!(dir.path().join("a.jsonl.crn").exists());
    assert!(dir.path().join("a.jsonl.best.crn").exists());
}

#[test]
fn untrained_network_is_near_chance() {
    // a single random init is often close to a constant predictor, so judge
    // chance level over several inits
    let cfg = small_config(1);
    let (_, va) = make_split(&cfg.dataset, 10, 200).unwrap();
    let seeds = 10;
    let mut total = 0.0;
    for seed in 0..seeds {
        let mut net = Network::new(&cfg.network, seed).unwrap();
        let r = evaluate(&mut net, &va).unwrap();
        assert_eq!(r.block_agreement.len(), 2);
        total += r.top1;
    }
    let mean = total / seeds as f64;
    assert!((mean - 0.2).abs() <= 0.15, "mean top-1 {mean}");
}

#[test]
fn train_split_eval_at_least_recorded_train_accuracy() {
    let mut cfg = small_config(8);
    cfg.train_size = 500;
    cfg.params.batch_size = 16;
    let (tr, va) = make_split(&cfg.dataset, cfg.train_size, cfg.val_size).unwrap();
    let mut out = train_on(&cfg, &tr, &va, &mut NoopObserver).unwrap();
    let last = out.metrics.last().unwrap().clone();
    assert!(last.train_top1 > 0.9, "not converged: {last:?}");
    let r = evaluate(&mut out.network, &tr).unwrap();
    assert!(r.top1 >= last.train_top1 - 1e-9, "{} < {}", r.top1, last.train_top1);
}

#[test]
fn comparison_report_roundtrips_through_json() {
    let rows = vec![
        PairRow { seed: 0, baseline_top1: 0.95, classreg_top1: 0.965, delta: 0.965 - 0.95 },
        PairRow { seed: 1, baseline_top1: 1.0, classreg_top1: 0.99, delta: 0.99 - 1.0 },
    ];
    let report =
        ComparisonReport { epochs: 30, rows, mean_baseline: 0.975, mean_classreg: 0.9775, mean_delta: 0.0025, wins: 1 };
    let text = serde_json::to_string(&report).unwrap();
    let back: ComparisonReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
    assert_eq!(report.table().lines().count(), 4 + 1);
}
