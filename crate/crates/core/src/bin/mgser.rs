use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use mgser::harness::{
    emit_report, run_experiment_on, DatasetSource, DomainTransform, ExperimentConfig, SyntheticSpec,
};
use mgser::model::Activation;
use mgser::optim::Method;
use mgser::scenarios::Scenario;
use mgser::{Error, Result};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DatasetKind {
    Synthetic,
    Mnist,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TransformArg {
    Permute,
    Rotate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    Tanh,
}

/// Run continual-learning experiments and write result matrices, summaries and curves.
#[derive(Debug, Parser)]
#[command(name = "mgser", version)]
struct Args {
    /// Comma-separated methods: online, joint, er, er_sam, derpp, derpp_sam, mgser_sam, or `all`.
    #[arg(long, default_value = "er")]
    method: String,

    /// task-il, class-il or domain-il.
    #[arg(long, default_value = "class-il", value_parser = parse_scenario)]
    scenario: Scenario,

    /// Input transform of domain-il tasks.
    #[arg(long, value_enum, default_value_t = TransformArg::Permute)]
    transform: TransformArg,

    #[arg(long, value_enum, default_value_t = DatasetKind::Synthetic)]
    dataset: DatasetKind,

    /// Directory with the four MNIST IDX files (required with --dataset mnist).
    #[arg(long)]
    mnist_dir: Option<PathBuf>,

    #[arg(long, default_value_t = 5)]
    tasks: usize,

    /// Classes per task in split scenarios.
    #[arg(long, default_value_t = 2)]
    classes_per_task: usize,

    /// Replay memory capacity.
    #[arg(long, default_value_t = 400)]
    buffer: usize,

    #[arg(long, default_value_t = 1)]
    epochs: usize,

    /// Shared size of the task batch and each memory batch.
    #[arg(long, default_value_t = 32)]
    batch: usize,

    #[arg(long, default_value_t = 0.05)]
    lr: f64,

    /// SAM neighbourhood radius.
    #[arg(long, default_value_t = 0.05)]
    rho: f64,

    /// Comma-separated hidden layer widths.
    #[arg(long, default_value = "400")]
    hidden: String,

    #[arg(long, value_enum, default_value_t = ActivationArg::Relu)]
    activation: ActivationArg,

    /// Seed list: `0,3,7`, a half-open range `0..5`, or a single seed.
    #[arg(long, default_value = "0..5")]
    seeds: String,

    /// Subsample each task's training set to this many examples.
    #[arg(long)]
    train_per_task: Option<usize>,

    /// Subsample each task's test set to this many examples.
    #[arg(long)]
    test_per_task: Option<usize>,

    /// Synthetic data: feature count.
    #[arg(long, default_value_t = 64)]
    features: usize,

    /// Synthetic data: classes.
    #[arg(long, default_value_t = 10)]
    classes: usize,

    /// Synthetic data: training examples per class.
    #[arg(long, default_value_t = 2000)]
    per_class: usize,

    /// Synthetic data: test examples per class.
    #[arg(long, default_value_t = 200)]
    test_per_class: usize,

    /// Synthetic data: generator seed (fixed across run seeds).
    #[arg(long, default_value_t = 0)]
    data_seed: u64,

    /// Output directory; each method writes into `<out>/<method>/`.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|_| Error::Config(format!("invalid {what} '{p}'")))
        })
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let lo: u64 = a
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid seed range '{s}'")))?;
        let hi: u64 = b
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid seed range '{s}'")))?;
        return Ok((lo..hi).collect());
    }
    parse_list(s, "seed")
}

fn parse_methods(s: &str) -> Result<Vec<Method>> {
    if s.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    s.split(',').map(str::parse).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{:6.2}", 100.0 * v))
}

fn run(args: Args) -> Result<()> {
    let methods = parse_methods(&args.method)?;
    let dataset = match args.dataset {
        DatasetKind::Synthetic => {
            let side = (args.features as f64).sqrt().round() as usize;
            DatasetSource::Synthetic(SyntheticSpec {
                class_count: args.classes,
                per_class: args.per_class,
                test_per_class: args.test_per_class,
                feature_dim: args.features,
                image_shape: (side * side == args.features).then_some((side, side)),
                seed: args.data_seed,
                ..SyntheticSpec::default()
            })
        }
        DatasetKind::Mnist => DatasetSource::Mnist {
            dir: args
                .mnist_dir
                .clone()
                .ok_or_else(|| Error::Config("--dataset mnist requires --mnist-dir".into()))?,
        },
    };
    let base = ExperimentConfig {
        method: methods[0],
        scenario: args.scenario,
        domain_transform: match args.transform {
            TransformArg::Permute => DomainTransform::Permute,
            TransformArg::Rotate => DomainTransform::Rotate,
        },
        buffer_size: args.buffer,
        epochs: args.epochs,
        batch_size: args.batch,
        lr: args.lr,
        rho: args.rho,
        n_tasks: args.tasks,
        classes_per_task: args.classes_per_task,
        hidden: parse_list(&args.hidden, "hidden width")?,
        activation: match args.activation {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Tanh => Activation::Tanh,
        },
        seeds: parse_seeds(&args.seeds)?,
        dataset,
        train_per_task: args.train_per_task,
        test_per_task: args.test_per_task,
    };
    base.validate()?;
    let corpus = base.load_corpus()?;

    println!(
        "{:<10} {:<10} {:>6} {:>15} {:>15} {:>10}",
        "method", "scenario", "M", "ACC %", "Forget %", "bwd/step"
    );
    for method in methods {
        let cfg = ExperimentConfig {
            method,
            ..base.clone()
        };
        let report = run_experiment_on(&cfg, &corpus)?;
        emit_report(&report, &args.out.join(method.name()))?;
        println!(
            "{:<10} {:<10} {:>6} {:>8} ± {:<5.2} {:>8} ± {:<5} {:>10.2}",
            method.name(),
            cfg.scenario.name(),
            if method.uses_memory() {
                cfg.buffer_size.to_string()
            } else {
                "-".into()
            },
            format!("{:6.2}", 100.0 * report.acc.mean),
            100.0 * report.acc.std,
            fmt_opt(report.forget.map(|f| f.mean)),
            report
                .forget
                .map_or_else(|| "n/a".into(), |f| format!("{:.2}", 100.0 * f.std)),
            report.backward_passes as f64 / report.steps.max(1) as f64,
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
