use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use qcgm::benchmark::{robustness_sweep, run_benchmark, write_sweep_csv};
use qcgm::model::infer;
use qcgm::{checkpoint, metrics, synth, training};
use qcgm::{Ablation, Dataset, Error, GraphPair, ParameterSet, PreparedPair, SynthConfig};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Ablate, Class, Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// Training stopped on a non-finite value; partial outputs were written.
    TrainAborted(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(_) => 1,
            CliError::TrainAborted(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::TrainAborted(m) => write!(f, "training aborted: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        if let Some(s) = &mut cfg.synth {
            s.seed = seed;
        }
    }
    let seed = cfg.train.seed;
    match cli.command {
        Command::Synth {
            class,
            count,
            outliers,
            out,
        } => {
            let mut s = cfg.synth.unwrap_or_else(|| preset(class, seed));
            if let Some(k) = outliers {
                s.n_outliers = k;
            }
            let ds = synth::gen_dataset(&s, count)?;
            match out {
                Some(path) => ds.write_json_file(path)?,
                None => {
                    let stdout = io::stdout();
                    let mut w = stdout.lock();
                    serde_json::to_writer_pretty(&mut w, &ds).map_err(Error::from)?;
                    writeln!(w)?;
                }
            }
            Ok(())
        }
        Command::Train { data, init, out } => train(&cfg, &data, init.as_deref(), &out),
        Command::Match {
            pair,
            params,
            ablate,
            trace,
            out,
        } => {
            let pair = PreparedPair::new(&load_pair(&pair)?)?;
            let params = load_params(params.as_deref(), pair.attr_dim(), &cfg)?;
            let variant = ablate.map_or(Ablation::Full, Ablate::variant);
            let m = infer(&pair, &params, &cfg.solver, variant)?;
            let scored = pair.gt.iter().any(Option::is_some);
            let result = MatchOutput {
                variant: variant.name(),
                permutation: m.permutation.as_slice().to_vec(),
                objective: m.objective,
                fw_steps: m.trace.steps.len(),
                accuracy: if scored {
                    Some(metrics::accuracy(&m.permutation, &pair.gt)?)
                } else {
                    None
                },
                f1: if scored {
                    Some(metrics::f1_permutation(&m.permutation, &pair.gt)?)
                } else {
                    None
                },
            };
            let text = serde_json::to_string_pretty(&result).map_err(Error::from)?;
            println!("{text}");
            if let Some(path) = out {
                fs::write(path, text + "\n")?;
            }
            if let Some(path) = trace {
                m.trace.write_csv(BufWriter::new(File::create(path)?))?;
            }
            Ok(())
        }
        Command::Eval {
            data,
            params,
            ablate,
            out,
        } => {
            let ds = Dataset::from_json_file(&data)?;
            let params = load_params(params.as_deref(), attr_dim(&ds)?, &cfg)?;
            let mut variants = vec![Ablation::Full];
            if ablate.is_empty() {
                variants = Ablation::ALL.to_vec();
            }
            for a in ablate {
                if !variants.contains(&a.variant()) {
                    variants.push(a.variant());
                }
            }
            let report = run_benchmark(&ds.pairs, &params, &cfg.solver, &variants)?;
            fs::create_dir_all(&out)?;
            report.write_summary_csv(BufWriter::new(File::create(out.join("summary.csv"))?))?;
            report.write_pairs_csv(BufWriter::new(File::create(out.join("pairs.csv"))?))?;
            let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            fs::write(out.join("report.json"), json + "\n")?;
            report.write_summary_csv(io::stdout().lock())?;
            Ok(())
        }
        Command::BenchRobust {
            data,
            params,
            ks,
            sigma,
            out,
        } => {
            let ds = Dataset::from_json_file(&data)?;
            let params = load_params(params.as_deref(), attr_dim(&ds)?, &cfg)?;
            let points = robustness_sweep(&ds.pairs, &params, &cfg.solver, &ks, sigma, seed)?;
            write_sweep_csv(&points, BufWriter::new(File::create(&out)?))?;
            write_sweep_csv(&points, io::stdout().lock())?;
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct MatchOutput {
    variant: &'static str,
    /// Column of graph B assigned to each node of graph A.
    permutation: Vec<usize>,
    objective: f64,
    fw_steps: usize,
    accuracy: Option<f64>,
    f1: Option<f64>,
}

fn preset(class: Class, seed: u64) -> SynthConfig {
    match class {
        Class::Easy => SynthConfig::easy(seed),
        Class::Ambiguous => SynthConfig::ambiguous(seed),
        Class::Adversarial => SynthConfig::adversarial(seed),
    }
}

/// A pair file, or the first pair of a dataset file.
fn load_pair(path: &Path) -> Result<GraphPair> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    let pair = if value.get("pairs").is_some() {
        let ds: Dataset = serde_json::from_value(value).map_err(Error::from)?;
        ds.pairs
            .into_iter()
            .next()
            .ok_or_else(|| Error::InvalidInput("dataset has no pairs".into()))?
    } else {
        serde_json::from_value(value).map_err(Error::from)?
    };
    pair.validate()?;
    Ok(pair)
}

fn attr_dim(ds: &Dataset) -> Result<usize> {
    let first = ds
        .pairs
        .first()
        .ok_or_else(|| Error::InvalidInput("dataset has no pairs".into()))?;
    Ok(first.graph_a.feature_dim() + 2)
}

fn load_params(path: Option<&Path>, attr_dim: usize, cfg: &RunConfig) -> Result<ParameterSet> {
    Ok(match path {
        Some(p) => checkpoint::load(p)?,
        None => ParameterSet::init(attr_dim, cfg.train.layers, cfg.train.seed),
    })
}

fn train(cfg: &RunConfig, data: &Path, init: Option<&Path>, out: &PathBuf) -> Result<()> {
    let ds = Dataset::from_json_file(data)?;
    let prepared = ds
        .pairs
        .iter()
        .map(PreparedPair::new)
        .collect::<qcgm::Result<Vec<_>>>()?;
    let params = load_params(init, attr_dim(&ds)?, cfg)?;
    let run = training::train(&prepared, params, &cfg.train)?;
    fs::create_dir_all(out)?;
    run.write_history_csv(BufWriter::new(File::create(out.join("history.csv"))?))?;
    checkpoint::save(&run.params, out.join("params.json"))?;
    if let Some(last) = run.history.last() {
        println!(
            "epoch {} loss {:.6e} train_acc {:.4} param_norm {:.4}",
            last.epoch, last.mean_loss, last.train_acc, last.param_norm
        );
    }
    match run.failure {
        Some(f) => Err(CliError::TrainAborted(format!(
            "epoch {} step {}: {}",
            f.epoch, f.step, f.message
        ))),
        None => Ok(()),
    }
}
