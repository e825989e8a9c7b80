#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdbreak::bootstrap::Multiplier;
use hdbreak::design::{make_grid, GridPolicy, RegressionPanel};
use hdbreak::dgp::{generate, ArchSpec, DgpSpec, Family, Mixture};
use hdbreak::estimator::CovKind;
use hdbreak::hlv::KernelSpec;
use hdbreak::limitdist::{
    empirical_quantile, limit_statistic_draws, simulate_bessel_sup, LimitConfig, LimitKind,
    TableCache,
};
use hdbreak::mc::{render, run_experiment, ExperimentConfig, TableFormat};
use hdbreak::rng::StreamKey;
use hdbreak::teststats::CTag;
use hdbreak_cli::dataset::{ingest_csv, DataError, OilTransform, SchemaHints, TimeKey};
use hdbreak_cli::empirical::{
    run_empirical, run_panel_tests, EmpiricalError, EmpiricalSpec, Model, TestSettings,
};
use nalgebra::DMatrix;

#[derive(Parser)]
#[command(
    name = "hdbreak",
    version,
    about = "Structural break tests robust to growing dimension"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test one regression on a CSV dataset.
    Test(TestCmd),
    /// Run a Monte Carlo experiment from a TOML config.
    Mc(McCmd),
    /// Simulate (and cache) critical values.
    Critvals(CritCmd),
    /// Write a synthetic sample as CSV.
    Dgp(DgpCmd),
    /// AR/ADL stability test of a growth-rate series with oil-price terms.
    Empirical(EmpiricalCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Ew,
    Homo,
    Structured,
}

impl From<CovArg> for CovKind {
    fn from(c: CovArg) -> Self {
        match c {
            CovArg::Ew => CovKind::EickerWhite,
            CovArg::Homo => CovKind::Homoskedastic,
            CovArg::Structured => CovKind::StructuredEickerWhite,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MultArg {
    Rademacher,
    Mammen,
    Gaussian,
}

impl From<MultArg> for Multiplier {
    fn from(m: MultArg) -> Self {
        match m {
            MultArg::Rademacher => Multiplier::Rademacher,
            MultArg::Mammen => Multiplier::Mammen,
            MultArg::Gaussian => Multiplier::Gaussian,
        }
    }
}

#[derive(Args)]
struct TestFlags {
    /// Trimming bounds of the break-fraction grid.
    #[arg(long, num_args = 2, value_names = ["C1", "C2"], default_values_t = [0.15, 0.85])]
    grid_trim: Vec<f64>,
    #[arg(long, value_enum, default_value = "ew")]
    cov: CovArg,
    /// Exponent of the transform: 0 (average), inf (supremum) or a positive number.
    #[arg(long, default_value = "inf")]
    c: CTag,
    /// Fixed-b bandwidth of the long-run variance estimate.
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    /// Bootstrap replications for the bias estimate.
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    #[arg(long, value_enum, default_value = "rademacher")]
    multiplier: MultArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Draws of each simulated null distribution.
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long, default_value_t = 500)]
    integration_points: usize,
    /// Directory for cached critical-value tables.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TestFlags {
    fn settings(&self) -> TestSettings {
        TestSettings {
            trim: [self.grid_trim[0], self.grid_trim[1]],
            cov_kind: self.cov.into(),
            c: self.c,
            bandwidth: self.bandwidth,
            bootstrap: self.bootstrap,
            multiplier: self.multiplier.into(),
            seed: self.seed,
            draws: self.draws,
            integration_points: self.integration_points,
        }
    }

    fn cache(&self) -> Option<TableCache> {
        self.cache_dir.as_ref().map(TableCache::new)
    }
}

#[derive(Args)]
struct TestCmd {
    #[arg(long)]
    data: PathBuf,
    /// Dependent variable column.
    #[arg(long)]
    response: String,
    /// Regressor columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    regressors: Vec<String>,
    /// Fit an AR(p) to the response instead of using regressor columns.
    #[arg(long, conflicts_with = "regressors")]
    ar: Option<usize>,
    /// Leave out the intercept column.
    #[arg(long)]
    no_intercept: bool,
    #[command(flatten)]
    flags: TestFlags,
}

#[derive(Args)]
struct McCmd {
    /// Experiment config (TOML).
    config: PathBuf,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "markdown")]
    format: TableFormat,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableKind {
    Robust,
    Plain,
    Supw,
}

#[derive(Args)]
struct CritCmd {
    #[arg(long, value_enum, default_value = "robust")]
    kind: TableKind,
    #[arg(long, num_args = 2, value_names = ["C1", "C2"], default_values_t = [0.15, 0.85])]
    grid_trim: Vec<f64>,
    /// Equally spaced grid points over the trimming range.
    #[arg(long, conflicts_with = "t")]
    grid_points: Option<usize>,
    /// Use every split index of a sample of this size.
    #[arg(long)]
    t: Option<usize>,
    /// Restriction count (supw only).
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value = "inf")]
    c: CTag,
    #[arg(long, default_value_t = 1.0)]
    bandwidth: f64,
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long, default_value_t = 500)]
    integration_points: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Dl,
    Arma,
}

#[derive(Args)]
struct DgpCmd {
    #[arg(long, value_enum, default_value = "dl")]
    family: FamilyArg,
    #[arg(long, default_value_t = 500)]
    t: usize,
    #[arg(long, default_value_t = 9)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    mixture: u8,
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    /// d0 (DL) or θ (ARMA).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    magnitude: f64,
    #[arg(long)]
    psi0: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    alpha_x: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ar,
    Adl,
}

#[derive(Args)]
struct EmpiricalCmd {
    #[arg(long)]
    data: PathBuf,
    /// Output level series (its growth rate is modeled).
    #[arg(long, default_value = "GDPC1")]
    response: String,
    /// Oil price level series.
    #[arg(long)]
    oil: Option<String>,
    /// o, o_plus or o_net.
    #[arg(long, default_value = "o")]
    transform: OilTransform,
    /// Look-back of the net oil price increase, in periods.
    #[arg(long, default_value_t = 4)]
    window: usize,
    #[arg(long, value_enum, default_value = "ar")]
    model: ModelArg,
    #[arg(long, default_value_t = 4)]
    p: usize,
    /// First date of the estimation sample (e.g. 1981Q1).
    #[arg(long)]
    start: Option<String>,
    #[arg(long)]
    end: Option<String>,
    #[command(flatten)]
    flags: TestFlags,
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<hdbreak::Error> for Failure {
    fn from(e: hdbreak::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<EmpiricalError> for Failure {
    fn from(e: EmpiricalError) -> Self {
        match e {
            EmpiricalError::Data(d) => d.into(),
            EmpiricalError::Stats(s) => s.into(),
        }
    }
}

fn write_out(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn parse_key(s: &Option<String>) -> Result<Option<TimeKey>, Failure> {
    s.as_deref()
        .map(|v| v.parse::<TimeKey>().map_err(Failure::Usage))
        .transpose()
}

fn cmd_test(cmd: &TestCmd) -> Result<(), Failure> {
    let mut required = vec![cmd.response.clone()];
    required.extend(cmd.regressors.iter().cloned());
    let hints = SchemaHints {
        required: Some(required),
        ..SchemaHints::default()
    };
    let data = ingest_csv(&cmd.data, &hints)?;
    let y = data.column(&cmd.response)?.to_vec();
    let panel = match cmd.ar {
        Some(p) => hdbreak::design::build_ar_design(&y, p)?,
        None => {
            if cmd.regressors.is_empty() && cmd.no_intercept {
                return Err(Failure::Usage(
                    "no regressors: give --regressors, --ar, or keep the intercept".into(),
                ));
            }
            let mut cols: Vec<&[f64]> = Vec::new();
            let ones = vec![1.0; y.len()];
            let mut labels = Vec::new();
            if !cmd.no_intercept {
                cols.push(&ones);
                labels.push("const".to_string());
            }
            for r in &cmd.regressors {
                cols.push(data.column(r)?);
                labels.push(r.clone());
            }
            let x = DMatrix::from_fn(y.len(), cols.len(), |i, j| cols[j][i]);
            RegressionPanel::new(y, x, labels, 1)?
        }
    };
    let mut report = run_panel_tests(&panel, &cmd.flags.settings(), cmd.flags.cache().as_ref())?;
    let n = data.len();
    report.sample = Some([
        data.index[n - panel.nobs()].to_string(),
        data.index[n - 1].to_string(),
    ]);
    write_out(&json(&report), cmd.flags.out.as_deref())
}

fn cmd_mc(cmd: &McCmd) -> Result<(), Failure> {
    let mut config = ExperimentConfig::from_toml_file(&cmd.config)?;
    if let Some(r) = cmd.reps {
        config.reps = r;
    }
    if let Some(b) = cmd.bootstrap {
        config.bootstrap = b;
    }
    if let Some(s) = cmd.seed {
        config.seed = s;
    }
    if cmd.workers.is_some() {
        config.workers = cmd.workers;
    }
    let cache = cmd.cache_dir.as_ref().map(TableCache::new);
    let table = run_experiment(&config, cache.as_ref())?;
    write_out(&render(&table, cmd.format)?, cmd.out.as_deref())
}

fn cmd_critvals(cmd: &CritCmd) -> Result<(), Failure> {
    let [c1, c2] = [cmd.grid_trim[0], cmd.grid_trim[1]];
    let fractions = match (cmd.grid_points, cmd.t) {
        (Some(n), _) => LimitConfig::uniform_grid(c1, c2, n),
        (None, Some(t)) => make_grid(t, c1, c2, GridPolicy::EveryIndex)?.fractions,
        (None, None) => LimitConfig::uniform_grid(c1, c2, 71),
    };
    let levels = [0.10, 0.05, 0.01];
    let report = match cmd.kind {
        TableKind::Supw => {
            let key = StreamKey::new(cmd.seed).named("bessel").child(cmd.p as u64);
            let mut d = simulate_bessel_sup(cmd.p, &fractions, cmd.draws, key)?;
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            serde_json::json!({
                "kind": "supw",
                "p": cmd.p,
                "grid_points": fractions.len(),
                "draws": cmd.draws,
                "critvals": levels.iter().map(|l| (format!("{l}"), empirical_quantile(&d, 1.0 - l))).collect::<std::collections::BTreeMap<_, _>>(),
            })
        }
        TableKind::Robust | TableKind::Plain => {
            let mut cfg = LimitConfig::new(fractions, cmd.draws, cmd.seed);
            cfg.c = cmd.c;
            cfg.kernel = KernelSpec::new(cmd.bandwidth, 1.0)?;
            cfg.integration_points = cmd.integration_points;
            cfg.kind = if matches!(cmd.kind, TableKind::Plain) {
                LimitKind::Plain
            } else {
                LimitKind::Robust
            };
            let (table, path) = match &cmd.cache_dir {
                Some(dir) => {
                    let cache = TableCache::new(dir);
                    (
                        cache.get_or_build(&cfg)?,
                        Some(cache.path_for(&cfg).display().to_string()),
                    )
                }
                None => (limit_statistic_draws(&cfg)?, None),
            };
            serde_json::json!({
                "kind": format!("{:?}", cfg.kind).to_lowercase(),
                "c": cfg.c,
                "grid_points": cfg.psi_grid.len(),
                "draws": table.len(),
                "config_hash": cfg.hash(),
                "checksum": table.checksum,
                "path": path,
                "critvals": levels.iter().map(|l| (format!("{l}"), table.critical_value(*l))).collect::<std::collections::BTreeMap<_, _>>(),
            })
        }
    };
    write_out(&json(&report), None)
}

fn cmd_dgp(cmd: &DgpCmd) -> Result<(), Failure> {
    let spec = DgpSpec {
        family: match cmd.family {
            FamilyArg::Dl => Family::MultipleRegressionDl,
            FamilyArg::Arma => Family::ArmaMa1,
        },
        t: cmd.t,
        p: cmd.p,
        arch: ArchSpec {
            alpha: cmd.alpha,
            mixture: match cmd.mixture {
                1 => Mixture::Type1,
                2 => Mixture::Type2,
                m => return Err(Failure::Usage(format!("mixture must be 1 or 2, got {m}"))),
            },
            ..ArchSpec::default()
        },
        alpha_x: cmd.alpha_x,
        magnitude: cmd.magnitude,
        psi0: cmd.psi0,
    };
    let sample = generate(&spec, StreamKey::new(cmd.seed))?;
    let panel = &sample.panel;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend(panel.labels().iter().cloned());
    let io = |e: csv::Error| Failure::Data(e.to_string());
    w.write_record(&header).map_err(io)?;
    for i in 0..panel.nobs() {
        let mut rec = vec![(i + 1).to_string(), panel.y()[i].to_string()];
        rec.extend((0..panel.ncols()).map(|j| panel.x()[(i, j)].to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Data(e.to_string()))?;
    write_out(
        &String::from_utf8(bytes).expect("csv is utf-8"),
        cmd.out.as_deref(),
    )
}

fn cmd_empirical(cmd: &EmpiricalCmd) -> Result<(), Failure> {
    let mut required = vec![cmd.response.clone()];
    required.extend(cmd.oil.iter().cloned());
    let hints = SchemaHints {
        required: Some(required),
        ..SchemaHints::default()
    };
    let data = ingest_csv(&cmd.data, &hints)?;
    let spec = EmpiricalSpec {
        response: cmd.response.clone(),
        oil: cmd.oil.clone(),
        transform: cmd.transform,
        window: cmd.window,
        model: match cmd.model {
            ModelArg::Ar => Model::Ar,
            ModelArg::Adl => Model::Adl,
        },
        p: cmd.p,
        start: parse_key(&cmd.start)?,
        end: parse_key(&cmd.end)?,
        settings: cmd.flags.settings(),
    };
    let report = run_empirical(&data, &spec, cmd.flags.cache().as_ref())?;
    write_out(&json(&report), cmd.flags.out.as_deref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Test(c) => cmd_test(c),
        Command::Mc(c) => cmd_mc(c),
        Command::Critvals(c) => cmd_critvals(c),
        Command::Dgp(c) => cmd_dgp(c),
        Command::Empirical(c) => cmd_empirical(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
