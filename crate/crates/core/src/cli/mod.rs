//! Command-line front end: `fit`, `sample`, `study` and `impute`.

mod data;
mod model;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use data::{read_table, write_rows, write_table, Table};
pub use model::{FitMetadata, MarginalDocument, ModelDocument, FORMAT_VERSION};

use crate::copula::CopulaModel;
use crate::ecm::{run_ecm, EcmConfig};
use crate::error::{Error, Result};
use crate::marginals::CDF_CLAMP;
use crate::numkernel::{mvn_sample, std_normal_cdf, stream, SymMatrix};
use crate::simstudy::{percentile_mixture, run_study, StudyResult, StudySetting};

const TAG_SAMPLE_PERCENTILE: u64 = 0x5341_4d50;
const TAG_SAMPLE_JOINT: u64 = 0x4a4f_494e;
const TAG_IMPUTE: u64 = 0x494d_5055;

pub const DEFAULT_SAMPLE_K: usize = 1000;
pub const DEFAULT_IMPUTE_M: usize = 10;
pub const DEFAULT_N_PRIME: usize = 10_000;

#[derive(Debug, Parser)]
#[command(
    name = "copula-em",
    version,
    about = "Gaussian copula fitting for incomplete data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub config: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV and write the model JSON and iteration trace.
    Fit,
    /// Draw joint samples from a fitted model.
    Sample,
    /// Run the simulation study.
    Study,
    /// Draw conditional completions of the missing cells of a CSV.
    Impute,
}

/// Flat run configuration. Every field can come from `--config` or a flag;
/// flags win. Fields irrelevant to a command are ignored.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Flat JSON file with any of these settings.
    #[arg(long = "config", global = true, value_name = "FILE")]
    #[serde(skip)]
    pub config_file: Option<PathBuf>,
    /// Data CSV (fit, impute).
    #[arg(long, global = true, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Main output file; `-` or absent means stdout for sample and impute.
    #[arg(long, global = true, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Model JSON (sample, impute).
    #[arg(long, global = true, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Trace CSV of `fit`; defaults to `<output>.trace.csv`.
    #[arg(long, global = true, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Summary JSON of `study`; defaults to `<output>.summary.json`.
    #[arg(long, global = true, value_name = "FILE")]
    pub summary: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Mixture components per marginal.
    #[arg(long, global = true)]
    pub g: Option<usize>,
    #[arg(long = "m-small", global = true)]
    pub m_small: Option<usize>,
    #[arg(long = "m-large", global = true)]
    pub m_large: Option<usize>,
    /// Convergence threshold on the correlation change.
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long = "n-max", global = true)]
    pub n_max: Option<usize>,
    #[arg(long = "n-small", global = true)]
    pub n_small: Option<usize>,
    #[arg(long = "n-late", global = true)]
    pub n_late: Option<usize>,
    /// Number of joint draws (sample).
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Draws per row (impute).
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Mixture draws behind each percentile function.
    #[arg(long = "n-prime", global = true)]
    pub n_prime: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub beta0: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub beta1: Option<f64>,
    #[arg(long = "p-mcar", global = true)]
    pub p_mcar: Option<f64>,
    #[arg(long = "n-rows", global = true)]
    pub n_rows: Option<usize>,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    /// Draws per method for the KS statistic.
    #[arg(long = "k-joint", global = true)]
    pub k_joint: Option<usize>,
    /// Run all four study settings around the given base.
    #[arg(long, global = true)]
    pub batch: bool,
}

macro_rules! overlay {
    ($flags:expr, $file:expr; $($f:ident),*) => {
        RunConfig {
            config_file: $flags.config_file.clone(),
            batch: $flags.batch || $file.batch,
            $($f: $flags.$f.clone().or($file.$f.clone()),)*
        }
    };
}

impl RunConfig {
    /// `self` over `base`, field by field.
    pub fn over(&self, base: &RunConfig) -> RunConfig {
        overlay!(self, base; input, output, model, trace, summary, seed, workers, g,
            m_small, m_large, eps, n_max, n_small, n_late, k, m, n_prime, rho, beta0,
            beta1, p_mcar, n_rows, reps, k_joint)
    }

    /// Flags merged over the config file, if any.
    pub fn resolve(&self) -> Result<RunConfig> {
        let Some(path) = &self.config_file else {
            return Ok(self.clone());
        };
        let text = fs::read_to_string(path)?;
        let file: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("config {}: {e}", path.display())))?;
        Ok(self.over(&file))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn ecm_config(&self) -> EcmConfig {
        let d = EcmConfig::default();
        EcmConfig {
            g: self.g.unwrap_or(d.g),
            n_max: self.n_max.unwrap_or(d.n_max),
            eps_converged: self.eps.unwrap_or(d.eps_converged),
            m_small: self.m_small.unwrap_or(d.m_small),
            m_large: self.m_large.unwrap_or(d.m_large),
            n_small: self.n_small.unwrap_or(d.n_small),
            n_late: self.n_late.unwrap_or(d.n_late),
            master_seed: self.seed(),
            theta_opt: d.theta_opt,
        }
    }

    pub fn study_setting(&self) -> StudySetting {
        let d = StudySetting::default();
        StudySetting {
            rho: self.rho.unwrap_or(d.rho),
            beta0: self.beta0.unwrap_or(d.beta0),
            beta1: self.beta1.unwrap_or(d.beta1),
            p_mcar: self.p_mcar.unwrap_or(d.p_mcar),
            n_rows: self.n_rows.unwrap_or(d.n_rows),
            reps: self.reps.unwrap_or(d.reps),
            seed: self.seed(),
            k_joint: self.k_joint.unwrap_or(d.k_joint),
            n_prime: self.n_prime.unwrap_or(d.n_prime),
            ecm: self.ecm_config(),
            ..d
        }
    }

    fn required<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        match value {
            Some(p) if !p.as_os_str().is_empty() => Ok(p),
            _ => Err(Error::Config(format!("--{flag} is required"))),
        }
    }
}

/// Parses nothing; runs an already parsed command line.
pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.config.resolve()?;
    let workers = match cfg.workers {
        Some(0) => return Err(Error::Config("--workers must be at least 1".into())),
        Some(w) => w,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Fit => cmd_fit(&cfg),
        Command::Sample => cmd_sample(&cfg),
        Command::Study => cmd_study(&cfg),
        Command::Impute => cmd_impute(&cfg),
    })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) if p.as_os_str() == "-" => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) => Ok(Box::new(create(p)?)),
    }
}

fn read_input(cfg: &RunConfig) -> Result<Table> {
    let path = cfg.required(&cfg.input, "input")?;
    read_table(fs::File::open(path)?)
}

pub fn read_model(path: &Path) -> Result<(ModelDocument, CopulaModel)> {
    let doc = ModelDocument::from_json(&fs::read_to_string(path)?)?;
    let model = doc.to_model()?;
    Ok((doc, model))
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let out = cfg.required(&cfg.output, "output")?;
    let table = read_input(cfg)?;
    let ecm = cfg.ecm_config();
    let (model, trace) = run_ecm(&table.data, &ecm)?;
    let last = trace.last();
    let fit = FitMetadata {
        iterations: last.map_or(0, |it| it.iteration),
        final_eps: last.map_or(f64::NAN, |it| it.eps),
        converged: trace.converged,
        seed: cfg.seed(),
        n_rows: table.data.n_rows(),
    };
    let doc = ModelDocument::from_model(&model, table.columns, fit);
    fs::write(out, doc.to_json())?;
    let trace_path = cfg
        .trace
        .clone()
        .unwrap_or_else(|| with_suffix(out, ".trace.csv"));
    fs::write(&trace_path, trace.to_csv())?;
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "fit: {} iterations, converged = {}, model -> {}, trace -> {}",
        doc.fit.iterations,
        doc.fit.converged,
        out.display(),
        trace_path.display()
    );
    Ok(())
}

/// `k` joint draws: correlated normal scores pushed through per-column
/// percentile functions of `n_prime` mixture draws.
pub fn sample_model(
    model: &CopulaModel,
    k: usize,
    n_prime: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let quantiles = model
        .marginals()
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let mut rng = stream(seed, &[TAG_SAMPLE_PERCENTILE, j as u64]);
            percentile_mixture(m, n_prime, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let sigma: &SymMatrix = model.sigma().matrix();
    let mut rng = stream(seed, &[TAG_SAMPLE_JOINT]);
    let mut draws = mvn_sample(&vec![0.0; model.p()], sigma, k, &mut rng)?;
    for row in &mut draws {
        for (v, q) in row.iter_mut().zip(&quantiles) {
            *v = q.eval(std_normal_cdf(*v).clamp(CDF_CLAMP, 1.0 - CDF_CLAMP));
        }
    }
    Ok(draws)
}

pub fn cmd_sample(cfg: &RunConfig) -> Result<()> {
    let (doc, model) = read_model(cfg.required(&cfg.model, "model")?)?;
    let k = cfg.k.unwrap_or(DEFAULT_SAMPLE_K);
    let draws = sample_model(
        &model,
        k,
        cfg.n_prime.unwrap_or(DEFAULT_N_PRIME),
        cfg.seed(),
    )?;
    let rows = draws.into_iter().map(|r| r.into_iter().map(Some).collect());
    write_rows(open_output(cfg.output.as_deref())?, &doc.columns, rows)
}

/// `m` completions of every row; observed cells are copied through.
pub fn impute_rows(
    model: &CopulaModel,
    table: &Table,
    m: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let data = &table.data;
    if data.p() != model.p() {
        return Err(Error::Config(format!(
            "model has {} columns but the data has {}",
            model.p(),
            data.p()
        )));
    }
    let maps = model.score_maps();
    (0..data.n_rows())
        .into_par_iter()
        .map(|l| {
            let part = data.row_partition(l);
            let base: Vec<f64> = (0..data.p())
                .map(|j| data.get(l, j).unwrap_or(f64::NAN))
                .collect();
            if part.is_complete() {
                return Ok(vec![base; m]);
            }
            let law = model.conditional_law(&part, &data.observed_values(l))?;
            let mut rng = stream(seed, &[TAG_IMPUTE, l as u64]);
            let draws = model.sample_conditional_mapped(&law, &maps, m, &mut rng)?;
            Ok(draws
                .into_iter()
                .map(|d| {
                    let mut row = base.clone();
                    for (&j, v) in part.mis().iter().zip(d) {
                        row[j] = v;
                    }
                    row
                })
                .collect())
        })
        .collect()
}

pub fn cmd_impute(cfg: &RunConfig) -> Result<()> {
    let (_, model) = read_model(cfg.required(&cfg.model, "model")?)?;
    let table = read_input(cfg)?;
    let m = cfg.m.unwrap_or(DEFAULT_IMPUTE_M);
    if m == 0 {
        return Err(Error::Config("--m must be at least 1".into()));
    }
    let imputed = impute_rows(&model, &table, m, cfg.seed())?;
    let mut header = vec!["row".to_string(), "draw".to_string()];
    header.extend(table.columns.iter().cloned());
    let rows = imputed.into_iter().enumerate().flat_map(|(l, draws)| {
        draws.into_iter().enumerate().map(move |(d, row)| {
            let mut out = vec![Some((l + 1) as f64), Some((d + 1) as f64)];
            out.extend(row.into_iter().map(Some));
            out
        })
    });
    write_rows(open_output(cfg.output.as_deref())?, &header, rows)
}

/// Results of several settings in one CSV, prefixed by the setting.
pub fn study_csv(results: &[StudyResult]) -> String {
    let mut out = format!("rho,beta0,beta1,{}\n", StudyResult::CSV_HEADER);
    for r in results {
        let s = &r.setting;
        for line in r.to_csv().lines().skip(1) {
            out.push_str(&format!("{},{},{},{line}\n", s.rho, s.beta0, s.beta1));
        }
    }
    out
}

pub fn cmd_study(cfg: &RunConfig) -> Result<()> {
    let out = cfg.required(&cfg.output, "output")?;
    let base = cfg.study_setting();
    let settings = if cfg.batch {
        StudySetting::grid(&base)
    } else {
        vec![base]
    };
    let mut results = Vec::with_capacity(settings.len());
    for s in &settings {
        let r = run_study(s)?;
        eprintln!(
            "study rho = {}, beta = ({}, {}): {} reps, {} failures",
            s.rho,
            s.beta0,
            s.beta1,
            r.reps.len(),
            r.failures.len()
        );
        results.push(r);
    }
    fs::write(out, study_csv(&results))?;
    let summary: Vec<_> = results.iter().map(StudyResult::summary).collect();
    let summary_path = cfg
        .summary
        .clone()
        .unwrap_or_else(|| with_suffix(out, ".summary.json"));
    let mut text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Parse(format!("summary: {e}")))?;
    text.push('\n');
    fs::write(summary_path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("copula-em").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn global_flags_parse_after_subcommand() {
        let cli = parse(&[
            "fit", "--input", "a.csv", "--g", "3", "--eps", "1e-4", "--seed", "9",
        ]);
        assert_eq!(cli.command, Command::Fit);
        let ecm = cli.config.ecm_config();
        assert_eq!((ecm.g, ecm.eps_converged, ecm.master_seed), (3, 1e-4, 9));
        let cli = parse(&["study", "--rho", "-0.1", "--batch"]);
        assert_eq!(cli.config.rho, Some(-0.1));
        assert!(cli.config.batch);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"g": 4, "seed": 11, "reps": 3, "batch": true}"#).unwrap();
        let cli = parse(&["study", "--config", path.to_str().unwrap(), "--g", "2"]);
        let cfg = cli.config.resolve().unwrap();
        assert_eq!(
            (cfg.g, cfg.seed, cfg.reps, cfg.batch),
            (Some(2), Some(11), Some(3), true)
        );
        fs::write(&path, r#"{"bogus": 1}"#).unwrap();
        let cli = parse(&["study", "--config", path.to_str().unwrap()]);
        assert!(matches!(cli.config.resolve(), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_paths_are_config_errors() {
        let cfg = RunConfig::default();
        assert!(matches!(cmd_fit(&cfg), Err(Error::Config(_))));
        assert!(matches!(cmd_study(&cfg), Err(Error::Config(_))));
        assert!(matches!(cmd_sample(&cfg), Err(Error::Config(_))));
        let cli = parse(&["fit", "--workers", "0"]);
        assert!(matches!(execute(&cli), Err(Error::Config(_))));
    }
}
