//! Monte Carlo rejection-rate experiments over a cartesian grid of designs.
//!
//! Replication `r` of cell `k` draws its data from `StreamKey::new(seed)
//! .child(k).child(r).child(0)` and its bootstrap multipliers from `.child(1)`,
//! so results do not depend on the number of worker threads.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{BootstrapConfig, Multiplier};
use crate::design::{make_grid, BreakGrid, GridPolicy};
use crate::dgp::{generate, ArchSpec, DgpSpec, Family, Mixture};
use crate::error::{Error, Result};
use crate::estimator::{wald_curve_with, CovKind, CurveOptions, WaldCurve};
use crate::hlv::KernelSpec;
use crate::limitdist::{
    empirical_quantile, limit_statistic_draws, simulate_bessel_sup, LimitConfig, LimitKind,
    LimitTable, TableCache,
};
use crate::rng::StreamKey;
use crate::teststats::{
    exp_z, run_exph_pipeline_keyed, sup_wald, CTag, PipelineConfig, StatKind, WeightJ,
};

/// Share of failed replications above which a cell is flagged invalid.
pub const MAX_FAILURE_SHARE: f64 = 0.01;

/// Cartesian grid of data-generating designs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignGrid {
    pub family: Family,
    pub t: Vec<usize>,
    /// Regressor count (DL) or AR order (ARMA).
    pub p: Vec<usize>,
    /// Innovation mixture type, 1 or 2.
    pub mixture: Vec<u8>,
    /// ARCH coefficient.
    pub alpha: Vec<f64>,
    /// d₀ (DL) or θ (ARMA).
    pub magnitude: Vec<f64>,
    /// Break fraction of the DGP; absent means no break.
    pub psi0: Option<f64>,
    pub alpha_x: f64,
    pub arch_bound: f64,
}

impl Default for DesignGrid {
    fn default() -> Self {
        DesignGrid {
            family: Family::MultipleRegressionDl,
            t: vec![500],
            p: vec![9],
            mixture: vec![1],
            alpha: vec![0.3],
            magnitude: vec![0.0],
            psi0: None,
            alpha_x: 0.5,
            arch_bound: 2.5,
        }
    }
}

/// Settings of the simulated critical-value tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitSettings {
    pub n_draws: usize,
    pub integration_points: usize,
    pub bandwidth: f64,
}

impl Default for LimitSettings {
    fn default() -> Self {
        LimitSettings {
            n_draws: 10_000,
            integration_points: 500,
            bandwidth: 1.0,
        }
    }
}

/// A full experiment, usually read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub reps: usize,
    /// Bootstrap replications per Monte Carlo replication.
    pub bootstrap: usize,
    pub level: f64,
    pub tests: Vec<StatKind>,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    pub cov_kind: CovKind,
    pub c: CTag,
    pub trim: [f64; 2],
    /// Equally spaced break fractions over `trim`; `None` uses every
    /// admissible split index.
    pub grid_points: Option<usize>,
    pub multiplier: Multiplier,
    pub limit: LimitSettings,
    pub design: DesignGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            reps: 500,
            bootstrap: 100,
            level: 0.05,
            tests: vec![StatKind::ExpH, StatKind::ExpZ, StatKind::SupW],
            workers: None,
            cov_kind: CovKind::EickerWhite,
            c: CTag::Sup,
            trim: [0.15, 0.85],
            grid_points: Some(71),
            multiplier: Multiplier::Rademacher,
            limit: LimitSettings::default(),
            design: DesignGrid::default(),
        }
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Serde(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)");
        }
        if self.tests.is_empty() {
            return bad("no tests requested");
        }
        if self.tests.contains(&StatKind::ExpH) && self.bootstrap == 0 {
            return bad("ExpH needs at least one bootstrap replication");
        }
        if self.workers == Some(0) {
            return bad("workers must be positive");
        }
        let [c1, c2] = self.trim;
        if !(c1 > 0.0 && c1 < c2 && c2 < 1.0) {
            return bad("trim must satisfy 0 < c1 < c2 < 1");
        }
        if self.grid_points == Some(0) {
            return bad("grid_points must be positive");
        }
        if self.limit.n_draws == 0 {
            return bad("limit.n_draws must be positive");
        }
        KernelSpec::new(self.limit.bandwidth, 1.0)?;
        let d = &self.design;
        if d.t.is_empty()
            || d.p.is_empty()
            || d.mixture.is_empty()
            || d.alpha.is_empty()
            || d.magnitude.is_empty()
        {
            return bad("every design list needs at least one entry");
        }
        if d.mixture.iter().any(|&m| m != 1 && m != 2) {
            return bad("mixture must be 1 or 2");
        }
        for cell in self.cells() {
            cell.dgp_spec(d).validate()?;
        }
        Ok(())
    }

    /// Design points in table order: T, p and magnitude blocks, with
    /// (mixture, α) varying fastest.
    pub fn cells(&self) -> Vec<Cell> {
        let d = &self.design;
        let mut out = Vec::new();
        for &t in &d.t {
            for &p in &d.p {
                for &magnitude in &d.magnitude {
                    for &mixture in &d.mixture {
                        for &alpha in &d.alpha {
                            out.push(Cell {
                                family: d.family,
                                t,
                                p,
                                mixture,
                                alpha,
                                magnitude,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    fn grid_for(&self, t: usize) -> Result<BreakGrid> {
        let [c1, c2] = self.trim;
        match self.grid_points {
            Some(n) => BreakGrid::from_fractions(t, &LimitConfig::uniform_grid(c1, c2, n)),
            None => make_grid(t, c1, c2, GridPolicy::EveryIndex),
        }
    }

    fn limit_config(&self, fractions: &[f64], kind: LimitKind) -> Result<LimitConfig> {
        let mut cfg = LimitConfig::new(fractions.to_vec(), self.limit.n_draws, self.seed);
        cfg.c = self.c;
        cfg.weights = WeightJ::Uniform;
        cfg.kernel = KernelSpec::new(self.limit.bandwidth, 1.0)?;
        cfg.integration_points = self.limit.integration_points;
        cfg.kind = kind;
        Ok(cfg)
    }

    fn pipeline_config(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            cov_kind: self.cov_kind,
            c: self.c,
            weights: WeightJ::Uniform,
            kernel: KernelSpec::new(self.limit.bandwidth, 1.0)?,
            bootstrap: BootstrapConfig {
                replications: self.bootstrap,
                multiplier: self.multiplier,
                seed: self.seed,
                ..BootstrapConfig::default()
            },
            ..PipelineConfig::default()
        })
    }
}

/// One design point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub family: Family,
    pub t: usize,
    pub p: usize,
    pub mixture: u8,
    pub alpha: f64,
    pub magnitude: f64,
}

impl Cell {
    /// Number of tested coefficients.
    pub fn restrictions(&self) -> usize {
        match self.family {
            Family::MultipleRegressionDl => self.p,
            Family::ArmaMa1 => self.p + 1,
        }
    }

    pub fn dgp_spec(&self, grid: &DesignGrid) -> DgpSpec {
        DgpSpec {
            family: self.family,
            t: self.t,
            p: self.p,
            arch: ArchSpec {
                alpha: self.alpha,
                bound: grid.arch_bound,
                mixture: if self.mixture == 2 {
                    Mixture::Type2
                } else {
                    Mixture::Type1
                },
            },
            alpha_x: grid.alpha_x,
            magnitude: self.magnitude,
            psi0: grid.psi0,
        }
    }

    /// Column label used in the markdown layout.
    pub fn label(&self) -> String {
        let mut s = format!(
            "T={} p={} ({},{})",
            self.t, self.p, self.mixture, self.alpha
        );
        if self.magnitude != 0.0 {
            let name = match self.family {
                Family::MultipleRegressionDl => "d0",
                Family::ArmaMa1 => "θ",
            };
            let _ = write!(s, " {name}={}", self.magnitude);
        }
        s
    }
}

/// Rejection rate of one test at one design point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRate {
    pub family: Family,
    pub t: usize,
    pub p: usize,
    pub restrictions: usize,
    pub mixture: u8,
    pub alpha: f64,
    pub magnitude: f64,
    pub test: StatKind,
    pub reps: usize,
    pub failures: usize,
    pub rejections: usize,
    pub rate: f64,
    pub se: f64,
    pub invalid: bool,
}

/// CSV header, in field order of [`CellRate`].
pub const CSV_COLUMNS: [&str; 14] = [
    "family",
    "t",
    "p",
    "restrictions",
    "mixture",
    "alpha",
    "magnitude",
    "test",
    "reps",
    "failures",
    "rejections",
    "rate",
    "se",
    "invalid",
];

impl CellRate {
    fn new(cell: &Cell, test: StatKind, reps: usize, failures: usize, rejections: usize) -> Self {
        let effective = reps - failures;
        let rate = if effective > 0 {
            rejections as f64 / effective as f64
        } else {
            0.0
        };
        let se = if effective > 0 {
            (rate * (1.0 - rate) / effective as f64).sqrt()
        } else {
            0.0
        };
        CellRate {
            family: cell.family,
            t: cell.t,
            p: cell.p,
            restrictions: cell.restrictions(),
            mixture: cell.mixture,
            alpha: cell.alpha,
            magnitude: cell.magnitude,
            test,
            reps,
            failures,
            rejections,
            rate,
            se,
            invalid: effective == 0 || failures as f64 > MAX_FAILURE_SHARE * reps as f64,
        }
    }

    pub fn cell(&self) -> Cell {
        Cell {
            family: self.family,
            t: self.t,
            p: self.p,
            mixture: self.mixture,
            alpha: self.alpha,
            magnitude: self.magnitude,
        }
    }

    /// Replications that produced a statistic.
    pub fn effective(&self) -> usize {
        self.reps - self.failures
    }
}

/// Settings and timing of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub seed: u64,
    pub reps: usize,
    pub bootstrap: usize,
    pub level: f64,
    pub cov_kind: CovKind,
    pub c: CTag,
    pub limit_draws: usize,
    pub grid_points: Option<usize>,
    pub runtime_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionTable {
    pub cells: Vec<CellRate>,
    pub meta: RunMeta,
}

impl RejectionTable {
    /// Rate of `test` at the cell equal to `cell`.
    pub fn rate(&self, cell: &Cell, test: StatKind) -> Option<&CellRate> {
        self.cells
            .iter()
            .find(|c| c.test == test && c.cell() == *cell)
    }
}

/// Critical-value material shared by all replications of a grid.
struct Tables {
    robust: Option<Arc<LimitTable>>,
    plain: Option<Arc<LimitTable>>,
    /// Upper-level critical value of sup 𝒲_q keyed by q.
    supw_cv: BTreeMap<usize, f64>,
}

/// Builds the tables that the requested tests need, through `cache` if one
/// is given.
struct TableBuilder<'a> {
    config: &'a ExperimentConfig,
    cache: Option<&'a TableCache>,
    built: BTreeMap<String, Arc<LimitTable>>,
    bessel: BTreeMap<(usize, Vec<u64>), f64>,
}

impl<'a> TableBuilder<'a> {
    fn limit(&mut self, fractions: &[f64], kind: LimitKind) -> Result<Arc<LimitTable>> {
        let cfg = self.config.limit_config(fractions, kind)?;
        let hash = cfg.hash();
        if let Some(t) = self.built.get(&hash) {
            return Ok(t.clone());
        }
        log::info!(
            "building {kind:?} limit table ({} draws, {} grid points)",
            cfg.n_draws,
            fractions.len()
        );
        let table = Arc::new(match self.cache {
            Some(c) => c.get_or_build(&cfg)?,
            None => limit_statistic_draws(&cfg)?,
        });
        self.built.insert(hash, table.clone());
        Ok(table)
    }

    fn supw_cv(&mut self, q: usize, fractions: &[f64]) -> Result<f64> {
        let bits = fractions.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
        if let Some(&cv) = self.bessel.get(&(q, bits.clone())) {
            return Ok(cv);
        }
        let key = StreamKey::new(self.config.seed)
            .named("bessel")
            .child(q as u64);
        let mut draws = simulate_bessel_sup(q, fractions, self.config.limit.n_draws, key)?;
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cv = empirical_quantile(&draws, 1.0 - self.config.level);
        self.bessel.insert((q, bits), cv);
        Ok(cv)
    }

    fn tables_for(&mut self, grid: &BreakGrid, restrictions: usize) -> Result<Tables> {
        let tests = &self.config.tests;
        let f = &grid.fractions;
        let robust = if tests.contains(&StatKind::ExpH) {
            Some(self.limit(f, LimitKind::Robust)?)
        } else {
            None
        };
        let plain = if tests.contains(&StatKind::ExpZ) {
            Some(self.limit(f, LimitKind::Plain)?)
        } else {
            None
        };
        let mut supw_cv = BTreeMap::new();
        if tests.contains(&StatKind::SupW) {
            supw_cv.insert(restrictions, self.supw_cv(restrictions, f)?);
        }
        Ok(Tables {
            robust,
            plain,
            supw_cv,
        })
    }
}

/// Rejection indicator per requested test for one replication.
fn replicate(
    config: &ExperimentConfig,
    pipeline: &PipelineConfig,
    spec: &DgpSpec,
    grid: &BreakGrid,
    tables: &Tables,
    key: StreamKey,
) -> Result<Vec<bool>> {
    let sample = generate(spec, key.child(0))?;
    let panel = &sample.panel;
    let mut exph_p = None;
    let curve: WaldCurve = if config.tests.contains(&StatKind::ExpH) {
        let out = run_exph_pipeline_keyed(
            panel,
            grid,
            pipeline,
            tables.robust.as_deref(),
            key.child(1),
        )?;
        exph_p = out.result.pvalue;
        out.curve
    } else {
        let opts = CurveOptions {
            cov_kind: config.cov_kind,
            ..CurveOptions::default()
        };
        wald_curve_with(panel, grid, &opts)?
    };
    config
        .tests
        .iter()
        .map(|test| {
            Ok(match test {
                StatKind::ExpH => exph_p.expect("table present") < config.level,
                StatKind::ExpZ => {
                    let table = tables.plain.as_deref().expect("table present");
                    exp_z(&curve, config.c, &WeightJ::Uniform)?
                        .with_table(table)
                        .pvalue
                        .expect("table present")
                        < config.level
                }
                StatKind::SupW => {
                    let cv = tables.supw_cv.get(&curve.p).copied().ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "no supW critical value for {} restrictions",
                            curve.p
                        ))
                    })?;
                    sup_wald(&curve).statistic > cv
                }
            })
        })
        .collect()
}

fn run_cells(config: &ExperimentConfig, cache: Option<&TableCache>) -> Result<Vec<CellRate>> {
    let pipeline = config.pipeline_config()?;
    let mut builder = TableBuilder {
        config,
        cache,
        built: BTreeMap::new(),
        bessel: BTreeMap::new(),
    };
    let cells = config.cells();
    let root = StreamKey::new(config.seed);
    let mut out = Vec::with_capacity(cells.len() * config.tests.len());
    for (k, cell) in cells.iter().enumerate() {
        let started = Instant::now();
        let grid = config.grid_for(cell.t)?;
        let tables = builder.tables_for(&grid, cell.restrictions())?;
        let spec = cell.dgp_spec(&config.design);
        let cell_key = root.child(k as u64);
        let outcomes: Vec<Result<Vec<bool>>> = (0..config.reps)
            .into_par_iter()
            .map(|r| {
                replicate(
                    config,
                    &pipeline,
                    &spec,
                    &grid,
                    &tables,
                    cell_key.child(r as u64),
                )
            })
            .collect();
        let mut failures = 0;
        let mut rejections = vec![0usize; config.tests.len()];
        for o in &outcomes {
            match o {
                Ok(flags) => {
                    for (n, f) in rejections.iter_mut().zip(flags) {
                        *n += *f as usize;
                    }
                }
                Err(e) => {
                    failures += 1;
                    log::debug!("cell {k}: replication failed: {e}");
                }
            }
        }
        log::info!(
            "cell {}/{} [{}] done in {:.1}s ({} failures)",
            k + 1,
            cells.len(),
            cell.label(),
            started.elapsed().as_secs_f64(),
            failures
        );
        for (test, n) in config.tests.iter().zip(rejections) {
            out.push(CellRate::new(cell, *test, config.reps, failures, n));
        }
    }
    Ok(out)
}

/// Runs every replication of every cell. Rates are those of the replications
/// that produced a statistic; failed ones are counted, not retried.
pub fn run_experiment(
    config: &ExperimentConfig,
    cache: Option<&TableCache>,
) -> Result<RejectionTable> {
    config.validate()?;
    let started = Instant::now();
    let cells = match config.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(|| run_cells(config, cache))?,
        None => run_cells(config, cache)?,
    };
    Ok(RejectionTable {
        cells,
        meta: RunMeta {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            reps: config.reps,
            bootstrap: config.bootstrap,
            level: config.level,
            cov_kind: config.cov_kind,
            c: config.c,
            limit_draws: config.limit.n_draws,
            grid_points: config.grid_points,
            runtime_secs: started.elapsed().as_secs_f64(),
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::InvalidInput(format!(
                "unknown table format {other:?}"
            ))),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

/// Writes the rows with a header line, also when there are none.
pub fn write_csv<W: Write>(rows: &[CellRate], w: W) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in rows {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<CellRate>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_COLUMNS) {
        return Err(Error::InvalidInput(format!(
            "unexpected csv header {header:?}"
        )));
    }
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

fn test_name(t: StatKind) -> &'static str {
    match t {
        StatKind::ExpH => "ExpH",
        StatKind::ExpZ => "ExpZ",
        StatKind::SupW => "supW",
    }
}

/// One row per test, one column per design point; invalid cells are starred.
pub fn render_markdown(table: &RejectionTable) -> String {
    let mut cells: Vec<Cell> = Vec::new();
    let mut tests: Vec<StatKind> = Vec::new();
    for r in &table.cells {
        let c = r.cell();
        if !cells.contains(&c) {
            cells.push(c);
        }
        if !tests.contains(&r.test) {
            tests.push(r.test);
        }
    }
    let mut s = String::from("| test |");
    for c in &cells {
        let _ = write!(s, " {} |", c.label());
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|".repeat(cells.len()));
    s.push('\n');
    for t in &tests {
        let _ = write!(s, "| {} |", test_name(*t));
        for c in &cells {
            match table.rate(c, *t) {
                Some(r) => {
                    let _ = write!(s, " {:.3}{} |", r.rate, if r.invalid { "*" } else { "" });
                }
                None => s.push_str(" |"),
            }
        }
        s.push('\n');
    }
    let m = &table.meta;
    let _ = writeln!(
        s,
        "\nNominal level {}; {} replications; {} bootstrap draws; {} limit draws.",
        m.level, m.reps, m.bootstrap, m.limit_draws
    );
    s
}

pub fn render(table: &RejectionTable, format: TableFormat) -> Result<String> {
    Ok(match format {
        TableFormat::Csv => {
            let mut buf = Vec::new();
            write_csv(&table.cells, &mut buf)?;
            String::from_utf8(buf).expect("csv is utf-8")
        }
        TableFormat::Json => serde_json::to_string_pretty(table)? + "\n",
        TableFormat::Markdown => render_markdown(table),
    })
}

/// Writes the table to `path` in `format`.
pub fn emit_table(table: &RejectionTable, format: TableFormat, path: &Path) -> Result<()> {
    std::fs::write(path, render(table, format)?)?;
    Ok(())
}
