//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails. Criterion 8 needs the MNIST IDX files in the directory
//! named by `MGSER_MNIST_DIR` and is skipped otherwise.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use mgser::harness::{
    emit_report, run_experiment, run_experiment_on, DatasetSource, ExperimentConfig, SyntheticSpec,
};
use mgser::metrics::ResultMatrix;
use mgser::model::{Activation, Objective};
use mgser::optim::{
    replay_objective, sam_perturbation, sgd_apply, step, Method, OptimConfig, DEFAULT_EPSILON,
};
use mgser::replay::{MemoryBuffer, MemoryItem};
use rand::Rng;

type Check = fn() -> Outcome;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let mut r = rng(1001);
    let mut worst = 0.0f64;
    let cases = 60;
    for case in 0..cases {
        let dims = [
            r.random_range(1..=5),
            r.random_range(1..=8),
            r.random_range(2..=4),
        ];
        let act = if case % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let model = random_model(&dims, act, &mut r);
        let mut terms = (r.random_bool(0.5), r.random_bool(0.5), r.random_bool(0.5));
        if !(terms.0 || terms.1 || terms.2) {
            terms.0 = true;
        }
        let rows = r.random_range(1..=4);
        let obj = random_objective(&model, rows, terms, &mut r);
        worst = worst.max(fd_max_rel_err(&model, &obj, 1e-5));
    }
    let el = t.elapsed();
    verdict(
        worst < 1e-5 && within(el, 10),
        format!(
            "{cases} cases, max relative error {worst:.2e} (< 1e-5), {:.2}s (< 10s)",
            el.as_secs_f64()
        ),
    )
}

fn sam_geometry() -> Outcome {
    let mut r = rng(1002);
    let (mut worst_norm, mut worst_cos) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = r.random_range(1..200);
        let g: mgser::GradVector = random_vec(n, r.random_range(1e-3..1e3), &mut r).into();
        let rho = r.random_range(1e-3..2.0);
        let d = sam_perturbation(&g, rho, DEFAULT_EPSILON);
        worst_norm = worst_norm.max((d.norm() - rho).abs());
        worst_cos = worst_cos.max(1.0 - d.dot(&g) / (d.norm() * g.norm()));
    }

    let mut identical = true;
    for seed in 0..20 {
        let mut r = rng(seed);
        let model = random_model(&[4, 6, 3], Activation::Relu, &mut r);
        let buffer = filled_buffer(16, 4, 3, (seed as usize) % 14, &mut r);
        let batch = Batch::random(5, 4, 3, &mut r);
        for (sam, plain) in [
            (Method::ErSam, Method::Er),
            (Method::DerppSam, Method::Derpp),
        ] {
            let run = |m: Method| {
                let cfg = OptimConfig {
                    rho: 0.0,
                    batch_size: 4,
                    ..OptimConfig::new(m)
                };
                let (mut model, mut buffer) = (model.clone(), buffer.clone());
                let mut rr = rng(seed + 100);
                for _ in 0..3 {
                    step(&mut model, &batch.view(), Some(&mut buffer), &cfg, &mut rr).unwrap();
                }
                (bits(&model.params()), buffer)
            };
            identical &= run(sam) == run(plain);
        }
    }
    for (sam, plain) in [
        (Method::ErSam, Method::Er),
        (Method::DerppSam, Method::Derpp),
    ] {
        let cfg = |m| ExperimentConfig {
            method: m,
            rho: 0.0,
            ..small_run()
        };
        let a = run_experiment(&cfg(sam)).unwrap();
        let b = run_experiment(&cfg(plain)).unwrap();
        identical &= a
            .runs
            .iter()
            .zip(&b.runs)
            .all(|(x, y)| x.matrix.to_csv() == y.matrix.to_csv());
    }
    verdict(
        worst_norm < 1e-9 && worst_cos < 1e-9 && identical,
        format!(
            "1000 gradients: max |‖δ‖-ρ| {worst_norm:.1e}, max 1-cos {worst_cos:.1e}; rho=0 reductions bit-identical: {identical}"
        ),
    )
}

fn reservoir_uniformity() -> Outcome {
    let t = Instant::now();
    let trials = 100_000;
    let mut counts = vec![0u32; 100];
    let mut r = rng(1003);
    let z = vec![0.0; 2];
    for _ in 0..trials {
        let mut buf = MemoryBuffer::new(20, 1, 2).unwrap();
        for i in 0..100 {
            let item = MemoryItem {
                x: vec![i as f64],
                y: 0,
                z: z.clone(),
                task_id: 0,
            };
            buf.offer(item, &mut r).unwrap();
        }
        for it in buf.items() {
            counts[it.x[0] as usize] += 1;
        }
    }
    let worst = counts
        .iter()
        .map(|&c| (c as f64 / trials as f64 - 0.2).abs())
        .fold(0.0, f64::max);
    let el = t.elapsed();
    verdict(
        worst <= 0.01 && within(el, 30),
        format!(
            "M=20, n=100, 1e5 trials: max |freq-0.2| {worst:.4} (<= 0.01), {:.2}s (< 30s)",
            el.as_secs_f64()
        ),
    )
}

fn metrics_oracle() -> Outcome {
    let mut m = ResultMatrix::new(2).unwrap();
    m.record(0, 0, 0.9).unwrap();
    m.record(1, 0, 0.8).unwrap();
    m.record(1, 1, 0.85).unwrap();
    let acc = m.acc_final().unwrap();
    let forget = m.forgetting().unwrap().unwrap();
    verdict(
        (acc - 0.825).abs() < 1e-15 && (forget + 0.1).abs() < 1e-15,
        format!("ACC {acc} (0.825), Forget {forget} (-0.1)"),
    )
}

fn eq9_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let cases = 25;
    for seed in 0..cases {
        let mut r = rng(2000 + seed);
        let dims = [
            r.random_range(2..=5),
            r.random_range(2..=8),
            r.random_range(2..=4),
        ];
        let model = random_model(&dims, Activation::Tanh, &mut r);
        let resident = r.random_range(1..20);
        let buffer = filled_buffer(20, dims[0], dims[2], resident, &mut r);
        let batch = Batch::random(r.random_range(1..6), dims[0], dims[2], &mut r);
        let cfg = OptimConfig {
            lr: r.random_range(0.01..0.5),
            rho: r.random_range(0.0..0.5),
            batch_size: r.random_range(1..8),
            ..OptimConfig::new(Method::MgserSam)
        };

        let mut stepped = model.clone();
        step(
            &mut stepped,
            &batch.view(),
            Some(&mut buffer.clone()),
            &cfg,
            &mut rng(seed),
        )
        .unwrap();

        let theta = model.params();
        let full = replay_objective(
            &model,
            &batch.view(),
            &buffer,
            cfg.batch_size,
            true,
            &mut rng(seed),
        )
        .unwrap();
        let mut dr = rng(seed);
        let b1 = buffer.sample_batch(cfg.batch_size, &mut dr);
        let b2 = buffer.sample_batch(cfg.batch_size, &mut dr);
        let mut mem = Objective::for_model(&model);
        mem.replay(b1.iter().map(|it| (it.x.as_slice(), it.y)))
            .unwrap();
        mem.logit_match(b2.iter().map(|it| (it.x.as_slice(), it.z.as_slice())))
            .unwrap();

        let g0 = model.loss_and_grad(&full).unwrap().1;
        let delta = sam_perturbation(&g0, cfg.rho, DEFAULT_EPSILON);
        let mut shifted = model.clone();
        shifted
            .set_params(
                &theta
                    .iter()
                    .zip(delta.values())
                    .map(|(t, d)| t + d)
                    .collect::<Vec<_>>(),
            )
            .unwrap();
        let g = shifted
            .loss_and_grad(&full)
            .unwrap()
            .1
            .add(&model.loss_and_grad(&mem).unwrap().1);
        let want = sgd_apply(&theta, &g, cfg.lr).unwrap();
        // compare gradients: (θ - θ') / η
        for (a, b) in stepped.params().iter().zip(&want) {
            worst = worst.max((a - b).abs() / cfg.lr);
        }
    }
    verdict(
        worst < 1e-10,
        format!("{cases} configurations, max gradient deviation {worst:.2e} (< 1e-10)"),
    )
}

fn cost_claim() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for method in Method::ALL {
        let r = run_experiment(&ExperimentConfig {
            method,
            ..small_run()
        })
        .unwrap();
        let want = if method.uses_sam() { 2 } else { 1 };
        ok &= r.backward_passes == want * r.steps;
        detail.push(format!(
            "{}={:.1}",
            method.name(),
            r.backward_passes as f64 / r.steps as f64
        ));
    }
    verdict(
        ok,
        format!("backward passes per step: {}", detail.join(", ")),
    )
}

fn desk_ordering() -> Outcome {
    let t = Instant::now();
    let base = ExperimentConfig::default();
    let corpus = base.load_corpus().unwrap();
    let run = |method| {
        run_experiment_on(
            &ExperimentConfig {
                method,
                ..base.clone()
            },
            &corpus,
        )
        .unwrap()
    };
    let (joint, mgser, er, online) = (
        run(Method::Joint),
        run(Method::MgserSam),
        run(Method::Er),
        run(Method::Online),
    );
    let el = t.elapsed();
    let acc = |r: &mgser::harness::RunReport| r.acc.mean;
    let fabs = |r: &mgser::harness::RunReport| r.forget_abs.unwrap().mean;
    let checks = [
        acc(&joint) > acc(&mgser),
        acc(&mgser) >= acc(&er) - 0.02,
        acc(&er) > acc(&online),
        fabs(&mgser) <= fabs(&er),
        within(el, 300),
    ];
    verdict(
        checks.iter().all(|&c| c),
        format!(
            "ACC joint {:.4}, mgser_sam {:.4}, er {:.4}, online {:.4}; |Forget| mgser_sam {:.4}, er {:.4}; \
             joint>mgser {}, mgser>=er-0.02 {}, er>online {}, |F| mgser<=er {}; {:.1}s (< 300s)",
            acc(&joint), acc(&mgser), acc(&er), acc(&online), fabs(&mgser), fabs(&er),
            checks[0], checks[1], checks[2], checks[3], el.as_secs_f64()
        ),
    )
}

fn mnist_reproduction() -> Outcome {
    let Some(dir) = std::env::var_os("MGSER_MNIST_DIR").map(PathBuf::from) else {
        return Outcome::Skip(
            "set MGSER_MNIST_DIR to the directory holding the MNIST IDX files".into(),
        );
    };
    let base = ExperimentConfig {
        buffer_size: 2000,
        dataset: DatasetSource::Mnist { dir },
        ..ExperimentConfig::default()
    };
    let corpus = match base.load_corpus() {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(format!("cannot load MNIST: {e}")),
    };
    let er = run_experiment_on(
        &ExperimentConfig {
            method: Method::Er,
            ..base.clone()
        },
        &corpus,
    )
    .unwrap();
    let mg = run_experiment_on(
        &ExperimentConfig {
            method: Method::MgserSam,
            ..base
        },
        &corpus,
    )
    .unwrap();
    let (er_acc, mg_acc) = (100.0 * er.acc.mean, 100.0 * mg.acc.mean);
    let band = (er_acc - 89.49).abs() <= 4.0;
    verdict(
        mg_acc >= er_acc,
        format!(
            "S-MNIST class-IL, M=2000: ER {er_acc:.2} (89.49 ± 4: {band}), MGSER-SAM {mg_acc:.2} (>= ER: {})",
            mg_acc >= er_acc
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut same = true;
    for method in Method::ALL {
        let cfg = ExperimentConfig {
            method,
            ..small_run()
        };
        for tag in ["a", "b"] {
            emit_report(
                &run_experiment(&cfg).unwrap(),
                &dir.path().join(method.name()).join(tag),
            )
            .unwrap();
        }
        for seed in &cfg.seeds {
            let f = format!("matrix_seed{seed}.csv");
            let read = |tag: &str| {
                std::fs::read(dir.path().join(method.name()).join(tag).join(&f)).unwrap()
            };
            same &= read("a") == read("b");
        }
    }
    verdict(
        same,
        format!(
            "repeated runs of all {} methods give byte-identical matrix CSVs: {same}",
            Method::ALL.len()
        ),
    )
}

fn small_run() -> ExperimentConfig {
    ExperimentConfig {
        hidden: vec![32],
        seeds: vec![0, 1, 2],
        buffer_size: 60,
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            per_class: 80,
            test_per_class: 20,
            ..SyntheticSpec::default()
        }),
        ..ExperimentConfig::default()
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("gradient correctness", gradient_correctness),
        ("SAM geometry and rho=0 reductions", sam_geometry),
        ("reservoir uniformity", reservoir_uniformity),
        ("metrics oracle", metrics_oracle),
        ("memory-guided update oracle", eq9_oracle),
        ("backward-pass cost", cost_claim),
        ("desk-scale method ordering", desk_ordering),
        ("MNIST reproduction", mnist_reproduction),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (tag, detail) = match check() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {} [{tag}] {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all criteria passed or skipped");
        ExitCode::SUCCESS
    }
}
