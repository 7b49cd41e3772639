//! Command-line front end: simulate data, fit by maximum likelihood or
//! Gibbs sampling, run posterior predictive checks, summarize chains.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

use anorm::array_normal::ArrayNormal;
use anorm::bayes::run_gibbs;
use anorm::config::ModelConfig;
use anorm::diagnostics::{correlation_summary, posterior_predictive, trace_summary};
use anorm::io::{matrix_to_rows, read_chain, write_chain, TensorFile};
use anorm::linalg::RngStream;
use anorm::mle::fit_mle;
use anorm::tensor::DenseArray;
use anorm::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "anorm", about = "Array normal models with separable covariance", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Input tensor data file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Declarative run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Independent chains run in parallel on derived RNG substreams.
    #[arg(long)]
    chains: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a configured array normal model.
    Simulate(CommonArgs),
    /// Flip-flop maximum-likelihood fit.
    FitMle(CommonArgs),
    /// Gibbs-sampler posterior fit.
    FitBayes(CommonArgs),
    /// Posterior predictive check of per-mode dependence statistics.
    Ppc {
        #[command(flatten)]
        common: CommonArgs,
        /// Chain directory written by fit-bayes.
        #[arg(long)]
        chain: PathBuf,
    },
    /// Posterior correlation and eigenstructure summaries.
    Summarize {
        #[command(flatten)]
        common: CommonArgs,
        /// Chain directory written by fit-bayes.
        #[arg(long)]
        chain: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => cmd_simulate(&c),
        Command::FitMle(c) => cmd_fit_mle(&c),
        Command::FitBayes(c) => cmd_fit_bayes(&c),
        Command::Ppc { common, chain } => cmd_ppc(&common, &chain),
        Command::Summarize { common, chain } => cmd_summarize(&common, &chain),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) | Error::InvalidMode { .. } | Error::InvalidDof { .. } => 2,
        Error::Data(_)
        | Error::MissingData(_)
        | Error::Io(_)
        | Error::ShapeMismatch(_)
        | Error::InvalidIndex(_) => 3,
        Error::SamplerStep { source, .. } => exit_code(source),
        _ => 4,
    }
}

fn load_config(common: &CommonArgs, required: bool) -> Result<ModelConfig> {
    let mut cfg = match &common.config {
        Some(p) => ModelConfig::from_path(p)?,
        None if required => {
            return Err(Error::InvalidConfig("this command needs --config".into()))
        }
        None => ModelConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.sampler.seed = seed;
    }
    if let Some(iters) = common.iters {
        cfg.sampler.iters = iters;
    }
    if let Some(burn_in) = common.burn_in {
        cfg.sampler.burn_in = burn_in;
    }
    if let Some(thin) = common.thin {
        cfg.sampler.thin = thin;
    }
    if let Some(chains) = common.chains {
        cfg.sampler.chains = chains;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(common: &CommonArgs) -> Result<TensorFile> {
    let path = common
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("this command needs --data".into()))?;
    TensorFile::read_path(path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Data(format!("json: {e}")))?;
    std::fs::write(path, bytes)?;
    Ok(())
}

#[derive(Serialize)]
struct TruthRecord {
    seed: u64,
    rng_algorithm: String,
    config_hash: String,
    mean_dims: Vec<usize>,
    mean: Vec<f64>,
    comps: Vec<Vec<Vec<f64>>>,
}

fn cmd_simulate(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common, true)?;
    if cfg.dims.len() < 2 {
        return Err(Error::InvalidConfig(
            "simulate needs dims with at least two modes (replication mode last)".into(),
        ));
    }
    let dims = cfg.dims.clone();
    let order = dims.len();
    let n = dims[order - 1];
    let cov = cfg.build_covariance()?;
    let mean_dims: Vec<usize> = if cfg.dependent_last_mode {
        dims[..order - 1].to_vec()
    } else {
        dims[..order - 1].to_vec()
    };
    let mean = DenseArray::constant(mean_dims.clone(), cfg.simulate.mean);
    let dist = if cfg.dependent_last_mode {
        ArrayNormal::new(mean.outer_ones(n), cov.clone())?
    } else {
        ArrayNormal::new(mean.clone(), cov.clone())?.replicate(n)?
    };
    let mut rng = RngStream::new(cfg.sampler.seed);
    let mut y = dist.sample(&mut rng);

    if cfg.simulate.missing_fraction > 0.0 {
        let total = y.len();
        let k = (cfg.simulate.missing_fraction * total as f64).round() as usize;
        // deterministic partial shuffle picks exactly k cells
        let mut cells: Vec<usize> = (0..total).collect();
        for i in 0..k {
            let j = i + (rng.uniform() * (total - i) as f64) as usize;
            cells.swap(i, j.min(total - 1));
        }
        let mut mask = vec![false; total];
        for &c in &cells[..k] {
            mask[c] = true;
        }
        y = y.with_mask(mask)?;
    }

    std::fs::create_dir_all(&common.out)?;
    let names = cfg.mode_names_for(order)?;
    let tf = TensorFile::new(y, names)?;
    tf.write_path(&common.out.join("data.tnsr"))?;
    write_json(
        &common.out.join("truth.json"),
        &TruthRecord {
            seed: cfg.sampler.seed,
            rng_algorithm: RngStream::ALGORITHM.to_string(),
            config_hash: cfg.hash(),
            mean_dims,
            mean: mean.data().to_vec(),
            comps: cov.comps().iter().map(|c| matrix_to_rows(c.values())).collect(),
        },
    )?;
    println!("wrote {} cells to {}", tf.array.len(), common.out.display());
    Ok(())
}

#[derive(Serialize)]
struct MleReport {
    config_hash: String,
    converged: bool,
    iters: usize,
    loglik: f64,
    mean_dims: Vec<usize>,
    mean: Vec<f64>,
    comps: Vec<Vec<Vec<f64>>>,
    correlations: Vec<Vec<Vec<f64>>>,
}

fn cmd_fit_mle(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common, false)?;
    let tf = load_data(common)?;
    if tf.array.has_missing() {
        return Err(Error::MissingData(format!(
            "maximum-likelihood fitting needs complete data; {} cells are missing",
            tf.array.missing_count()
        )));
    }
    if cfg.dependent_last_mode {
        return Err(Error::InvalidConfig(
            "fit-mle treats the last mode as i.i.d. replicates; dependent-last-mode is not supported here".into(),
        ));
    }
    let fit = fit_mle(&tf.array, &cfg.mle)?;
    std::fs::create_dir_all(&common.out)?;
    let report = MleReport {
        config_hash: cfg.hash(),
        converged: fit.converged,
        iters: fit.iters,
        loglik: *fit.loglik_trace.last().unwrap(),
        mean_dims: fit.mean_hat.dims().to_vec(),
        mean: fit.mean_hat.data().to_vec(),
        comps: fit.cov_hat.comps().iter().map(|c| matrix_to_rows(c.values())).collect(),
        correlations: fit
            .cov_hat
            .comps()
            .iter()
            .map(|c| matrix_to_rows(&c.to_correlation()))
            .collect(),
    };
    write_json(&common.out.join("report.json"), &report)?;
    let mut trace = String::from("iter,loglik\n");
    for (i, ll) in fit.loglik_trace.iter().enumerate() {
        writeln!(trace, "{i},{ll}").unwrap();
    }
    std::fs::write(common.out.join("loglik_trace.csv"), trace)?;
    println!(
        "fit {} in {} iterations (converged: {})",
        common.data.as_ref().unwrap().display(),
        report.iters,
        report.converged
    );
    Ok(())
}

fn cmd_fit_bayes(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common, true)?;
    let tf = load_data(common)?;
    let prior = cfg.build_prior(&tf.array)?;
    let hash = cfg.hash();
    let base = cfg.gibbs_config();
    std::fs::create_dir_all(&common.out)?;
    let chains = cfg.sampler.chains;
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for c in 0..chains {
            let mut gc = base.clone();
            gc.stream = c as u64;
            let y = &tf.array;
            let prior = &prior;
            let names = &tf.mode_names;
            let hash = &hash;
            let dir = common.out.join(format!("chain-{c}"));
            handles.push(scope.spawn(move || -> Result<()> {
                let chain = run_gibbs(y, prior, &gc)?;
                write_chain(&dir, &chain, names, hash)
            }));
        }
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    for r in results {
        r?;
    }
    println!("wrote {chains} chain(s) to {}", common.out.display());
    Ok(())
}

#[derive(Serialize)]
struct PpcSummary {
    config_hash: String,
    seed: u64,
    mode_names: Vec<String>,
    observed: Vec<f64>,
    p_values: Vec<f64>,
    tail_probabilities: Vec<f64>,
}

fn cmd_ppc(common: &CommonArgs, chain_dir: &Path) -> Result<()> {
    let cfg = load_config(common, false)?;
    let tf = load_data(common)?;
    let (chain, meta) = read_chain(chain_dir)?;
    if chain.meta.dims != tf.array.dims() {
        return Err(Error::Data(format!(
            "chain was fit on dims {:?}, data has dims {:?}",
            chain.meta.dims,
            tf.array.dims()
        )));
    }
    let seed = common.seed.unwrap_or(chain.meta.seed);
    // decouple the check's randomness from the sampler's streams
    let mut rng = RngStream::new(seed).substream(1 << 32);
    let ppc = posterior_predictive(&tf.array, &chain, &mut rng)?;
    std::fs::create_dir_all(&common.out)?;

    let cov_names = &meta.mode_names[..ppc.observed.len()];
    let mut csv = String::from("state");
    for name in cov_names {
        write!(csv, ",t_{name}").unwrap();
    }
    csv.push('\n');
    for (s, row) in ppc.replicated.iter().enumerate() {
        write!(csv, "{s}").unwrap();
        for v in row {
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
    }
    std::fs::write(common.out.join("ppc.csv"), csv)?;

    let tails: Vec<f64> = ppc.p_values.iter().map(|&p| p.min(1.0 - p)).collect();
    write_json(
        &common.out.join("ppc_summary.json"),
        &PpcSummary {
            config_hash: cfg.hash(),
            seed,
            mode_names: cov_names.to_vec(),
            observed: ppc.observed.clone(),
            p_values: ppc.p_values.clone(),
            tail_probabilities: tails.clone(),
        },
    )?;
    for (k, name) in cov_names.iter().enumerate() {
        println!("t_{name}: observed {:.4}, tail probability {:.4}", ppc.observed[k], tails[k]);
    }
    Ok(())
}

#[derive(Serialize)]
struct ModeSummary {
    mode: usize,
    name: String,
    eigenvalues: Vec<f64>,
    axes: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct SummarizeReport {
    config_hash: String,
    gamma0: anorm::diagnostics::TraceSummary,
    loglik: anorm::diagnostics::TraceSummary,
    modes: Vec<ModeSummary>,
}

fn cmd_summarize(common: &CommonArgs, chain_dir: &Path) -> Result<()> {
    let (chain, meta) = read_chain(chain_dir)?;
    std::fs::create_dir_all(&common.out)?;
    let mut modes = Vec::new();
    for k in 0..chain.meta.identity_flags.len() {
        if chain.meta.identity_flags[k] {
            continue;
        }
        let name = meta.mode_names[k].clone();
        let summary = correlation_summary(&chain, k)?;
        let m = summary.mean_correlation.len();
        // one label per level within the mode
        let labels: Vec<String> = (1..=m).map(|i| format!("{name}{i}")).collect();
        let mut csv = String::new();
        write!(csv, ",{}", labels.join(",")).unwrap();
        csv.push('\n');
        for (i, row) in summary.mean_correlation.iter().enumerate() {
            write!(csv, "{}", labels[i]).unwrap();
            for v in row {
                write!(csv, ",{v}").unwrap();
            }
            csv.push('\n');
        }
        std::fs::write(common.out.join(format!("correlation-{name}.csv")), csv)?;
        modes.push(ModeSummary {
            mode: k + 1,
            name,
            eigenvalues: summary.eigenvalues,
            axes: summary.axes,
        });
    }
    let report = SummarizeReport {
        config_hash: meta.config_hash.clone(),
        gamma0: trace_summary(&chain.gamma0_trace)?,
        loglik: trace_summary(&chain.loglik_trace)?,
        modes,
    };
    write_json(&common.out.join("summary.json"), &report)?;
    println!(
        "summarized {} states across {} estimated mode(s)",
        chain.states.len(),
        report.modes.len()
    );
    Ok(())
}
