//! Command-line entry point for reweighting runs, evaluation, data
//! generation, gap sweeps and the population oracle battery.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maple_core::data::write_dataset_dir;
use maple_core::harness::{
    eval_weighted_erm, parse_dataset_config, resolve_output_dir, run_experiment, sweep_generalization_gap,
    write_sweep, MethodMetrics, RunConfig, OUTPUT_ROOT_ENV,
};
use maple_core::oracle::{oracle_suite, SuiteOptions};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUN: u8 = 2;
const EXIT_ORACLE: u8 = 3;

#[derive(Parser)]
#[command(name = "maple", version, about = "Bilevel sample reweighting experiments")]
#[command(after_help = format!(
    "Relative output directories are placed under ${OUTPUT_ROOT_ENV} when it is set.\n\
     Exit codes: 0 success, 1 validation error, 2 run failure, 3 oracle check failure."
))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the baselines and the reweighting search described by a config.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weighted ERM on a dataset directory with frozen weights.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// TOML file with a [model] table and an optional [inner] table.
        #[arg(long)]
        model: PathBuf,
    },
    /// Generate a synthetic dataset directory.
    Gen {
        dataset_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validation-size sweep of the validation/held-out risk gap.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Randomized population-level invariant battery.
    Oracle {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = SuiteOptions::default().trials)]
        trials: usize,
        /// Use unit weights instead of the closed form (negative control).
        #[arg(long)]
        inject_uniform_weight: bool,
    },
}

/// Error paired with the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

fn validation(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        msg: e.to_string(),
    }
}

fn run_failure(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_RUN,
        msg: e.to_string(),
    }
}

fn with_path(path: &Path) -> impl Fn(maple_core::Error) -> Failure + '_ {
    move |e| validation(format!("{}: {e}", path.display()))
}

fn output_dir(config: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| resolve_output_dir(&config.output_dir))
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let config = RunConfig::load(path).map_err(with_path(path))?;
    config.validate().map_err(with_path(path))?;
    Ok(config)
}

fn print_metrics(rows: &[MethodMetrics]) {
    println!(
        "{:<24} {:>9} {:>11} {:>9} {:>11}",
        "method", "test_acc", "test_worst", "val_acc", "val_worst"
    );
    for m in rows {
        println!(
            "{:<24} {:>9.4} {:>11.4} {:>9.4} {:>11.4}",
            m.method, m.test.accuracy, m.test.worst_group_accuracy, m.val.accuracy, m.val.worst_group_accuracy
        );
    }
}

fn cmd_run(config: PathBuf, out: Option<PathBuf>) -> Result<(), Failure> {
    let config = load_config(&config)?;
    let dir = output_dir(&config, out);
    let outcome = run_experiment(&config, &dir).map_err(run_failure)?;
    print_metrics(&outcome.metrics);
    println!("config_hash {}", outcome.config_hash);
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_eval(data: PathBuf, weights: PathBuf, model: PathBuf) -> Result<(), Failure> {
    // everything here is input checking except the training itself, which
    // only fails on divergence
    let metrics = eval_weighted_erm(&data, &weights, &model).map_err(|e| match e {
        maple_core::Error::Diverged { .. } => run_failure(e),
        e => validation(e),
    })?;
    print_metrics(std::slice::from_ref(&metrics));
    Ok(())
}

fn cmd_gen(config: PathBuf, out: PathBuf, seed: Option<u64>) -> Result<(), Failure> {
    let text = fs::read_to_string(&config).map_err(|e| validation(format!("{}: {e}", config.display())))?;
    let mut dataset = parse_dataset_config(&text).map_err(with_path(&config))?;
    if let Some(seed) = seed {
        dataset = dataset.with_seed(seed);
    }
    dataset.validate().map_err(with_path(&config))?;
    let splits = dataset.generate().map_err(run_failure)?;
    let dir = if out.is_relative() {
        resolve_output_dir(&out.to_string_lossy())
    } else {
        out
    };
    write_dataset_dir(&dir, &dataset, &splits).map_err(run_failure)?;
    println!(
        "wrote {} (train {}, val {}, test {})",
        dir.display(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(())
}

fn cmd_sweep(config: PathBuf, out: Option<PathBuf>) -> Result<(), Failure> {
    let config = load_config(&config)?;
    let dir = output_dir(&config, out);
    let report = sweep_generalization_gap(&config).map_err(run_failure)?;
    fs::create_dir_all(&dir).map_err(run_failure)?;
    let summary = File::create(dir.join("sweep.csv")).map_err(run_failure)?;
    let raw = File::create(dir.join("sweep_raw.csv")).map_err(run_failure)?;
    write_sweep(BufWriter::new(summary), BufWriter::new(raw), &report).map_err(run_failure)?;
    println!("{:>8} {:>12} {:>12} {:>8}", "n_val", "mean_gap", "std_gap", "repeats");
    for r in &report.rows {
        let flag = if r.single_seed { "  (single seed)" } else { "" };
        println!("{:>8} {:>12.6} {:>12.6} {:>8}{flag}", r.n_val, r.mean_gap, r.std_gap, r.repeats);
    }
    match report.slope {
        Some(s) => println!("log-log slope {s:.3}"),
        None => println!("log-log slope undefined"),
    }
    if let Some(p) = report.paired_fraction {
        println!("paired fraction (largest n below smallest n) {p:.3}");
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_oracle(seed: u64, trials: usize, inject_uniform_weight: bool) -> Result<(), Failure> {
    if trials == 0 {
        return Err(validation("trials must be positive"));
    }
    let report = oracle_suite(&SuiteOptions {
        seed,
        trials,
        inject_uniform_weight,
        ..SuiteOptions::default()
    })
    .map_err(run_failure)?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_ORACLE,
            msg: "oracle checks failed".into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run { config, out } => cmd_run(config, out),
        Command::Eval { data, weights, model } => cmd_eval(data, weights, model),
        Command::Gen {
            dataset_config,
            out,
            seed,
        } => cmd_gen(dataset_config, out, seed),
        Command::Sweep { config, out } => cmd_sweep(config, out),
        Command::Oracle {
            seed,
            trials,
            inject_uniform_weight,
        } => cmd_oracle(seed, trials, inject_uniform_weight),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
