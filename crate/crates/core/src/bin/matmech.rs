use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use matmech::error::{svd_bound, svdb_achievable, ErrorReport, PrivacyParams};
use matmech::experiment::{self, ExperimentConfig, StrategySource};
use matmech::io::{self, fmt_sig};
use matmech::lsa::{self, LsaConfig};
use matmech::mechanism::{consistency_check, CellVector, MatrixMechanism, Randomness, RunMetadata};
use matmech::scaling;
use matmech::strategy::Strategy;
use matmech::workload::{DomainShape, Partition, Table, Workload, WorkloadDescriptor};
use matmech::{Error, Result};

#[derive(Parser)]
#[command(name = "matmech", version, about = "Matrix mechanism: bounds, strategy design, private answers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Singular value bound of a workload, and the error of a strategy if given.
    Bound {
        #[command(flatten)]
        workload: WorkloadArg,
        #[arg(long)]
        strategy: Option<String>,
        #[command(flatten)]
        privacy: PrivacyArgs,
    },
    /// Design a strategy with the level selection algorithm.
    Design {
        #[command(flatten)]
        workload: WorkloadArg,
        /// Cap on accepted levels.
        #[arg(long = "levels", value_name = "K")]
        levels: Option<usize>,
        /// Design each one-dimensional component separately.
        #[arg(long, conflicts_with = "generalize")]
        separate: bool,
        /// Design over M merged cells first, then refine inside each block.
        #[arg(long, value_name = "M")]
        generalize: Option<usize>,
        #[command(flatten)]
        privacy: PrivacyArgs,
        /// Strategy CSV; the run log goes next to it as `.log.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer a workload with the matrix mechanism.
    Answer {
        #[command(flatten)]
        workload: WorkloadArg,
        /// Strategy CSV or one of workload, identity, hierarchical, wavelet, lsa, var-agnostic.
        #[arg(long, default_value = "identity")]
        strategy: String,
        /// Cell counts, one per line.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        privacy: PrivacyArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Skip the noise and return exact answers.
        #[arg(long)]
        zero_noise: bool,
        /// Answers CSV; the estimate goes to `.xhat.csv`, metadata to `.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment config and write the ratio table and sampling curves.
    Experiment {
        config: PathBuf,
        /// Table CSV; overrides the config. Curves go to `.curves.csv` beside it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count records of a CSV table into cells.
    Ingest {
        /// Table with a header row.
        #[arg(long)]
        data: PathBuf,
        /// JSON map of attribute to bucket list, inline or a file.
        #[arg(long)]
        partition: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct WorkloadArg {
    /// Workload descriptor JSON (inline or a file), or a CSV of query rows.
    #[arg(long)]
    workload: String,
}

impl WorkloadArg {
    fn build(&self, dense: bool) -> Result<(String, Workload)> {
        let arg = self.workload.as_str();
        if arg.ends_with(".csv") {
            let rows = io::read_matrix_csv(Path::new(arg))?;
            let shape = DomainShape::line(rows.ncols())?;
            let label = Path::new(arg)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            return Ok((label, Workload::from_rows(shape, rows)?));
        }
        let mut d = WorkloadDescriptor::from_arg(arg)?;
        if dense {
            d.params.dense = Some(true);
        }
        let base = Path::new(arg).parent().filter(|_| !arg.trim_start().starts_with('{'));
        Ok((d.label(), d.build_in(base)?))
    }
}

#[derive(Args)]
struct PrivacyArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    /// Zero selects pure ε with Laplace noise.
    #[arg(long)]
    delta: Option<f64>,
}

impl PrivacyArgs {
    /// Normalized unless ε is given.
    fn params(&self) -> Result<PrivacyParams> {
        match (self.epsilon, self.delta) {
            (None, None) => Ok(PrivacyParams::Normalized),
            (None, Some(_)) => Err(Error::Argument("--delta needs --epsilon".into())),
            (Some(e), d) => PrivacyParams::from_epsilon_delta(e, d.unwrap_or(0.0)),
        }
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn matrix_text(m: &nalgebra::DMatrix<f64>) -> Result<String> {
    let mut buf = Vec::new();
    io::write_matrix(&mut buf, m)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

fn unix_time() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn strategy_for(source: &str, w: &Workload, lsa: LsaConfig) -> Result<Strategy> {
    let config = ExperimentConfig {
        lsa,
        ..Default::default()
    };
    experiment::build_strategy(&StrategySource::parse(source), w, &config, None)
}

fn bound(workload: &WorkloadArg, strategy: Option<&str>, privacy: &PrivacyArgs) -> Result<bool> {
    let (label, w) = workload.build(false)?;
    let privacy = privacy.params()?;
    match strategy {
        Some(s) => {
            let a = strategy_for(s, &w, LsaConfig::default())?;
            let mut report = ErrorReport::evaluate(&label, &w, &a, &privacy)?;
            report.strategy = StrategySource::parse(s).label();
            println!("{}\n{}", ErrorReport::CSV_HEADER, report.csv_row());
        }
        None => {
            let achievable = svdb_achievable(&w, 1e-9);
            println!("workload,n,svdb,achievable");
            println!("{label},{},{},{achievable}", w.n(), fmt_sig(svd_bound(&w, &privacy)));
        }
    }
    Ok(true)
}

fn design(
    workload: &WorkloadArg,
    levels: Option<usize>,
    separate: bool,
    generalize: Option<usize>,
    privacy: &PrivacyArgs,
    out: Option<&Path>,
) -> Result<bool> {
    let (label, w) = workload.build(false)?;
    let privacy = privacy.params()?;
    let config = match levels {
        Some(k) => LsaConfig::with_max_levels(k)?,
        None => LsaConfig::default(),
    };
    let svdb = svd_bound(&w, &privacy);
    let (rows, error, mut log) = if separate {
        let plan = scaling::separate(&w)?;
        let d = scaling::design_separated(&plan, &w, &config, &privacy)?;
        let log = serde_json::to_value(&d)?;
        (d.rows, d.composite_error, log)
    } else if let Some(m) = generalize {
        let plan = scaling::generalize(&w, m)?;
        let d = scaling::design_generalized(&plan, &w, &config)?;
        let error = matmech::error::total_error(&w, &d.strategy, &privacy)?;
        let log = json!({
            "plan": d.plan,
            "phase1": d.phase1,
            "phase2": d.phase2,
            "phase2_levels": d.phase2_levels,
            "wall_seconds": d.wall_seconds,
        });
        (d.strategy.rows().clone(), error, log)
    } else {
        let (a, log) = lsa::design_with_log(&w, &config)?;
        let error = matmech::error::total_error(&w, &a, &privacy)?;
        (a.rows().clone(), error, serde_json::to_value(&log)?)
    };
    if let Some(obj) = log.as_object_mut() {
        obj.insert("workload".into(), json!(label));
        obj.insert("total_error".into(), json!(error));
        obj.insert("svdb".into(), json!(svdb));
        obj.insert("ratio".into(), json!(error / svdb));
        obj.insert("finished_at".into(), json!(unix_time()));
    }
    let log_text = serde_json::to_string_pretty(&log)?;
    write_text(out, &matrix_text(&rows)?)?;
    match out {
        Some(p) => std::fs::write(sidecar(p, ".log.json"), log_text + "\n")?,
        None => eprintln!("{log_text}"),
    }
    eprintln!(
        "{label}: {} rows, total error {}, ratio {}",
        rows.nrows(),
        fmt_sig(error),
        fmt_sig(error / svdb)
    );
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn answer(
    workload: &WorkloadArg,
    strategy: &str,
    data: &Path,
    privacy: &PrivacyArgs,
    seed: Option<u64>,
    zero_noise: bool,
    out: Option<&Path>,
) -> Result<bool> {
    if !data.is_file() {
        return Err(Error::Argument(format!("data file {} not found", data.display())));
    }
    let (_, w) = workload.build(true)?;
    let randomness = match (zero_noise, seed) {
        (true, _) => Randomness::Zero,
        (false, Some(s)) => Randomness::seeded(s),
        (false, None) => return Err(Error::Argument("--seed is required unless --zero-noise".into())),
    };
    let privacy = match privacy.params()? {
        PrivacyParams::Normalized if !zero_noise => {
            return Err(Error::Argument("--epsilon is required unless --zero-noise".into()))
        }
        p => p,
    };
    let x = CellVector::from_csv(data, w.shape().clone())?;
    let a = strategy_for(strategy, &w, LsaConfig::default())?;
    let mm = MatrixMechanism::new(&w, &a)?;
    let output = mm.run(&x, &privacy, randomness)?;
    let consistent = consistency_check(&output.answers, &w)?;
    let mut meta = RunMetadata::new(privacy, output.noise, a.rows());
    meta.consistent = Some(consistent);

    let answers = nalgebra::DMatrix::from_column_slice(output.answers.len(), 1, output.answers.as_slice());
    write_text(out, &matrix_text(&answers)?)?;
    let mut meta = serde_json::to_value(&meta)?;
    meta["strategy"] = json!(a.name());
    meta["finished_at"] = json!(unix_time());
    let meta_text = serde_json::to_string_pretty(&meta)?;
    match out {
        Some(p) => {
            if let Some(est) = &output.estimate {
                io::write_matrix_csv(
                    &sidecar(p, ".xhat.csv"),
                    &nalgebra::DMatrix::from_column_slice(est.values().len(), 1, est.values().as_slice()),
                )?;
            }
            std::fs::write(sidecar(p, ".json"), meta_text + "\n")?;
        }
        None => eprintln!("{meta_text}"),
    }
    Ok(true)
}

fn run_experiment(config_path: &Path, out: Option<&Path>) -> Result<bool> {
    let mut config = ExperimentConfig::from_path(config_path)?;
    let base = config_path.parent();
    if let Some(p) = out {
        config.output.table = Some(p.to_path_buf());
        config.output.curves = Some(sidecar(p, ".curves.csv"));
    }
    let output = experiment::run(&config, base)?;
    if config.output.table.is_none() {
        print!("{}", output.table_csv()?);
    }
    if config.output.curves.is_none() && !output.curves.is_empty() {
        print!("\n{}", output.curves_csv()?);
    }
    experiment::write_outputs(&output, &config.output, base)?;
    for row in &output.table {
        if let Err(msg) = &row.outcome {
            eprintln!("{} / {}: {msg}", row.workload, row.strategy);
        }
    }
    Ok(output.all_succeeded())
}

fn ingest(data: &Path, partition: &str, out: Option<&Path>) -> Result<bool> {
    let partition = if partition.trim_start().starts_with('{') {
        Partition::from_json(partition)?
    } else {
        Partition::from_path(Path::new(partition))?
    };
    let x = matmech::workload::ingest_cells(&Table::from_path(data)?, &partition)?;
    let v = x.values();
    write_text(out, &matrix_text(&nalgebra::DMatrix::from_column_slice(v.len(), 1, v.as_slice()))?)?;
    Ok(true)
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Bound { workload, strategy, privacy } => bound(&workload, strategy.as_deref(), &privacy),
        Command::Design { workload, levels, separate, generalize, privacy, out } => {
            design(&workload, levels, separate, generalize, &privacy, out.as_deref())
        }
        Command::Answer { workload, strategy, data, privacy, seed, zero_noise, out } => {
            answer(&workload, &strategy, &data, &privacy, seed, zero_noise, out.as_deref())
        }
        Command::Experiment { config, out } => run_experiment(&config, out.as_deref()),
        Command::Ingest { data, partition, out } => ingest(&data, &partition, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match experiment::with_thread_cap(|| dispatch(cli)).and_then(|r| r) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
