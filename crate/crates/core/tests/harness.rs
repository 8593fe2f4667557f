mod common;

use std::fs;
use std::path::Path;

use common::rng;
use mgser::harness::{
    emit_report, encode_idx, gen_synthetic, load_idx, load_mnist_dir, run_experiment,
    run_experiment_on, summary_record, DatasetSource, DomainTransform, ExperimentConfig,
    SyntheticSpec,
};
use mgser::model::{Activation, Model};
use mgser::optim::{step, Method, OptimConfig, TaskBatch};
use mgser::scenarios::Scenario;
use mgser::Error;
use rand::seq::SliceRandom;

fn small(method: Method) -> ExperimentConfig {
    ExperimentConfig {
        method,
        hidden: vec![24],
        seeds: vec![0, 1],
        buffer_size: 50,
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            per_class: 60,
            test_per_class: 20,
            ..SyntheticSpec::default()
        }),
        ..ExperimentConfig::default()
    }
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let out = tempfile::tempdir().unwrap();
    for method in [Method::Er, Method::MgserSam] {
        let cfg = small(method);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        emit_report(&a, &out.path().join("a")).unwrap();
        emit_report(&b, &out.path().join("b")).unwrap();
        for f in [
            "matrix_seed0.csv",
            "matrix_seed1.csv",
            "summary.json",
            "curve.csv",
        ] {
            assert_eq!(
                read(&out.path().join("a"), f),
                read(&out.path().join("b"), f)
            );
        }
    }
}

#[test]
fn rho_does_not_move_data_order() {
    let mut a = small(Method::ErSam);
    a.rho = 0.0;
    let mut b = small(Method::Er);
    b.rho = 0.3;
    let ra = run_experiment(&a).unwrap();
    let rb = run_experiment(&b).unwrap();
    for (x, y) in ra.runs.iter().zip(&rb.runs) {
        assert_eq!(x.matrix, y.matrix);
    }
}

#[test]
fn report_files_and_aggregates() {
    let report = run_experiment(&small(Method::Derpp)).unwrap();
    let out = tempfile::tempdir().unwrap();
    emit_report(&report, out.path()).unwrap();
    let mut names: Vec<String> = fs::read_dir(out.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "curve.csv",
            "matrix_seed0.csv",
            "matrix_seed1.csv",
            "summary.json"
        ]
    );

    let curve = read(out.path(), "curve.csv");
    assert_eq!(curve.lines().count(), 1 + report.config.n_tasks);
    assert!(curve.ends_with('\n'));

    let summary: serde_json::Value =
        serde_json::from_str(&read(out.path(), "summary.json")).unwrap();
    let mean = report.runs.iter().map(|r| r.summary.acc).sum::<f64>() / report.runs.len() as f64;
    assert!((summary["acc_mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert_eq!(summary["method"], "derpp");
    assert_eq!(summary_record(&report).backward_passes, report.steps);

    let m = read(out.path(), "matrix_seed1.csv");
    assert_eq!(m.lines().count(), 5);
    assert!(m
        .lines()
        .next()
        .unwrap()
        .starts_with(|c: char| c.is_ascii_digit()));
}

#[test]
fn backward_passes_over_full_runs() {
    for method in Method::ALL {
        let mut cfg = small(method);
        cfg.seeds = vec![3];
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(
            r.backward_passes,
            u64::from(method.backward_passes()) * r.steps,
            "{method}"
        );
    }
}

#[test]
fn joint_records_only_the_final_row() {
    let r = run_experiment(&small(Method::Joint)).unwrap();
    let m = &r.runs[0].matrix;
    assert!(m.get(0, 0).is_none());
    assert!((0..5).all(|j| m.get(4, j).is_some()));
    assert_eq!(r.runs[0].summary.forget, Some(0.0));
}

#[test]
fn every_scenario_runs() {
    for (scenario, transform) in [
        (Scenario::TaskIl, DomainTransform::Permute),
        (Scenario::DomainIl, DomainTransform::Permute),
        (Scenario::DomainIl, DomainTransform::Rotate),
    ] {
        let mut cfg = small(Method::MgserSam);
        cfg.scenario = scenario;
        cfg.domain_transform = transform;
        cfg.n_tasks = 3;
        cfg.train_per_task = Some(200);
        cfg.test_per_task = Some(100);
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.runs[0].matrix.tasks(), 3);
        assert!(r.acc.mean > 0.0 && r.acc.mean <= 1.0);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        ExperimentConfig {
            seeds: vec![],
            ..small(Method::Er)
        },
        ExperimentConfig {
            epochs: 0,
            ..small(Method::Er)
        },
        ExperimentConfig {
            lr: 0.0,
            ..small(Method::Er)
        },
        ExperimentConfig {
            rho: -0.1,
            ..small(Method::Er)
        },
        ExperimentConfig {
            buffer_size: 0,
            ..small(Method::Er)
        },
        ExperimentConfig {
            hidden: vec![0],
            ..small(Method::Er)
        },
        ExperimentConfig {
            n_tasks: 6,
            ..small(Method::Er)
        },
    ];
    for cfg in bad {
        assert!(run_experiment(&cfg).is_err(), "{cfg:?}");
    }
    let missing = ExperimentConfig {
        dataset: DatasetSource::Mnist {
            dir: "/nonexistent/mnist".into(),
        },
        ..small(Method::Er)
    };
    assert!(matches!(run_experiment(&missing), Err(Error::Io { .. })));
}

#[test]
fn config_round_trips_through_json() {
    let cfg = small(Method::MgserSam);
    let text = serde_json::to_string(&cfg).unwrap();
    let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn default_stream_reference_settings() {
    let base = ExperimentConfig {
        seeds: vec![0, 1, 2],
        ..ExperimentConfig::default()
    };
    let corpus = base.load_corpus().unwrap();
    let joint = run_experiment_on(
        &ExperimentConfig {
            method: Method::Joint,
            ..base.clone()
        },
        &corpus,
    )
    .unwrap();
    assert!(joint.acc.mean >= 0.95, "joint ACC {}", joint.acc.mean);
    let online = run_experiment_on(
        &ExperimentConfig {
            method: Method::Online,
            ..base
        },
        &corpus,
    )
    .unwrap();
    assert!(
        (online.acc.mean - 0.2).abs() <= 0.1,
        "online ACC {}",
        online.acc.mean
    );
}

#[test]
fn linear_probe_separates_default_clusters() {
    let data = gen_synthetic(10, 200, 64, Some((8, 8)), 0).unwrap();
    let mut model = Model::new(&[64, 10], Activation::Relu, &mut rng(0)).unwrap();
    let cfg = OptimConfig {
        lr: 0.5,
        ..OptimConfig::new(Method::Online)
    };
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut r = rng(1);
    for _ in 0..60 {
        idx.shuffle(&mut r);
        for chunk in idx.chunks(32) {
            let x = data.inputs.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            step(
                &mut model,
                &TaskBatch::new(&x, &y, 0).unwrap(),
                None,
                &cfg,
                &mut r,
            )
            .unwrap();
        }
    }
    let acc = mgser::scenarios::accuracy(&model, &data, Scenario::ClassIl, &[]).unwrap();
    assert!(acc >= 0.95, "probe train accuracy {acc}");
}

#[test]
fn idx_files_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..6 * 4).map(|v| (v * 10) as u8).collect();
    let labels = [0u8, 1, 2, 1, 0, 2];
    let (img, lab) = encode_idx(6, 2, 2, &pixels, &labels);
    for (name, bytes) in [
        ("train-images-idx3-ubyte", &img),
        ("train-labels-idx1-ubyte", &lab),
        ("t10k-images.idx3-ubyte", &img),
        ("t10k-labels.idx1-ubyte", &lab),
    ] {
        fs::write(dir.path().join(name), bytes).unwrap();
    }
    let ds = load_idx(
        &dir.path().join("train-images-idx3-ubyte"),
        &dir.path().join("train-labels-idx1-ubyte"),
    )
    .unwrap();
    assert_eq!((ds.len(), ds.feature_dim(), ds.class_count), (6, 4, 3));
    assert_eq!(ds.image_shape, Some((2, 2)));
    assert_eq!(ds.inputs.get(1, 0), 40.0 / 255.0);
    let corpus = load_mnist_dir(dir.path()).unwrap();
    assert_eq!(corpus.test.len(), 6);

    fs::write(
        dir.path().join("train-labels-idx1-ubyte"),
        &lab[..lab.len() - 1],
    )
    .unwrap();
    assert!(matches!(
        load_mnist_dir(dir.path()),
        Err(Error::Format { .. })
    ));
}
