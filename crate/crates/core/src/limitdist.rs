//! Simulation of the limiting processes, their functionals and quantile
//! tables.
//!
//! G and Ḡ are centered Gaussian processes on [0, 1] with
//!
//! ```text
//! Cov(G(a), G(b))   = min(a, b)²
//! Cov(Ḡ(a), Ḡ(b))   = (1 - max(a, b))²
//! Cov(Ḡ(a), G(b))   = 1{a < b} (a - b)²
//! ```
//!
//! and Z(ψ) = G(ψ)/ψ + Ḡ(ψ)/(1 - ψ) - G(1) is standard normal at every ψ. The
//! robust statistic's limit divides Z by the square root of the random
//! denominator ∬𝒦(r, s) dG(r) dG(s), built from the same path of G.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hlv::{denominator_weights, KernelSpec};
use crate::rng::StreamKey;
use crate::teststats::{exp_transform_tag, CTag, WeightJ};

/// Bumped whenever the cache file layout or the simulation scheme changes.
pub const CACHE_FORMAT_VERSION: u32 = 1;

const BATCH: usize = 256;
const EIGEN_CLIP: f64 = -1e-10;

/// Which limit the table describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LimitKind {
    /// Z(ψ)/√(∬𝒦 dG dG): the bias-corrected, studentized process.
    #[default]
    Robust,
    /// Z(ψ) itself (ω = 1, no studentization).
    Plain,
}

/// Local-alternative drift: Z(ψ) is shifted by [`noncentrality`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub psi0: f64,
    pub varrho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitConfig {
    /// Break fractions of the grid the functional is taken over.
    pub psi_grid: Vec<f64>,
    pub n_draws: usize,
    pub c: CTag,
    pub weights: WeightJ,
    pub kernel: KernelSpec,
    /// Number N of equal steps on [0, 1] for the double integral.
    pub integration_points: usize,
    pub kind: LimitKind,
    pub drift: Option<Drift>,
    pub seed: u64,
}

impl LimitConfig {
    /// Sup-type robust table over `psi_grid` with default kernel and
    /// integration settings.
    pub fn new(psi_grid: Vec<f64>, n_draws: usize, seed: u64) -> Self {
        LimitConfig {
            psi_grid,
            n_draws,
            c: CTag::Sup,
            weights: WeightJ::Uniform,
            kernel: KernelSpec::default(),
            integration_points: 500,
            kind: LimitKind::Robust,
            drift: None,
            seed,
        }
    }

    /// `n` equally spaced fractions from `c1` to `c2` inclusive.
    pub fn uniform_grid(c1: f64, c2: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![c1];
        }
        (0..n)
            .map(|i| c1 + (c2 - c1) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.psi_grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if self.psi_grid.iter().any(|&p| !(p > 0.0 && p < 1.0))
            || self.psi_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidInput(
                "limit grid must be strictly increasing inside (0, 1)".into(),
            ));
        }
        if self.n_draws == 0 {
            return Err(Error::InvalidInput("n_draws must be positive".into()));
        }
        if self.kind == LimitKind::Robust && self.integration_points < 2 {
            return Err(Error::InvalidInput(
                "integration grid needs at least two steps".into(),
            ));
        }
        if let Some(d) = self.drift {
            if !(d.psi0 > 0.0 && d.psi0 < 1.0) {
                return Err(Error::InvalidInput(
                    "drift break fraction must lie in (0, 1)".into(),
                ));
            }
        }
        self.weights.weights(&self.psi_grid)?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(
            serde_json::to_vec(self).expect("config serializes"),
        ))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Coord {
    G,
    GBar,
}

fn cov_entry(a: (Coord, f64), b: (Coord, f64)) -> f64 {
    let ((ka, x), (kb, y)) = (a, b);
    match (ka, kb) {
        (Coord::G, Coord::G) => x.min(y).powi(2),
        (Coord::GBar, Coord::GBar) => (1.0 - x.max(y)).powi(2),
        (Coord::GBar, Coord::G) => {
            if x < y {
                (x - y).powi(2)
            } else {
                0.0
            }
        }
        (Coord::G, Coord::GBar) => {
            if x > y {
                (x - y).powi(2)
            } else {
                0.0
            }
        }
    }
}

fn stacked_covariance(coords: &[(Coord, f64)]) -> DMatrix<f64> {
    let n = coords.len();
    DMatrix::from_fn(n, n, |i, j| cov_entry(coords[i], coords[j]))
}

/// Covariance of (G(ψ₁..ψₙ), Ḡ(ψ₁..ψₙ), G(1)).
pub fn covariance_matrix_z(psi_grid: &[f64]) -> DMatrix<f64> {
    let mut coords: Vec<(Coord, f64)> = psi_grid.iter().map(|&p| (Coord::G, p)).collect();
    coords.extend(psi_grid.iter().map(|&p| (Coord::GBar, p)));
    coords.push((Coord::G, 1.0));
    stacked_covariance(&coords)
}

/// Z(ψ) from G(ψ), Ḡ(ψ) and G(1).
pub fn z_from_parts(psi: f64, g: f64, gbar: f64, g1: f64) -> f64 {
    g / psi + gbar / (1.0 - psi) - g1
}

/// ϱ∞ (ψψ₀ - min{ψ, ψ₀})² / (ψ(1 - ψ)).
pub fn noncentrality(psi: f64, psi0: f64, varrho: f64) -> f64 {
    varrho * (psi * psi0 - psi.min(psi0)).powi(2) / (psi * (1.0 - psi))
}

/// c*·√(2p/ω) + p: maps a critical value on the Z scale to the Wald scale.
pub fn sequential_transform_cv(c_star: f64, p: usize, omega: f64) -> Result<f64> {
    if p == 0 {
        return Err(Error::InvalidInput("p must be at least one".into()));
    }
    if !(omega > 0.0) {
        return Err(Error::NonpositiveOmega(omega));
    }
    Ok(c_star * (2.0 * p as f64 / omega).sqrt() + p as f64)
}

/// One simulated path on the ψ grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianPath {
    pub psi: Vec<f64>,
    pub g: Vec<f64>,
    pub gbar: Vec<f64>,
    pub g1: f64,
    pub z: Vec<f64>,
}

/// Exact finite-dimensional sampler for G on a node set and Ḡ on the ψ grid.
pub(crate) struct PathSampler {
    factor: DMatrix<f64>,
    psi: Vec<f64>,
    /// Sorted G nodes; the last one is 1.
    g_nodes: Vec<f64>,
    psi_in_g: Vec<usize>,
    /// Positions in `g_nodes` of the integration nodes k/N, k = 1..N.
    integration: Vec<usize>,
}

impl PathSampler {
    /// `integration_points = 0` skips the integration grid.
    pub fn new(psi: &[f64], integration_points: usize) -> Result<Self> {
        let n_int = integration_points;
        let mut nodes: Vec<f64> = psi.to_vec();
        nodes.extend((1..=n_int).map(|k| k as f64 / n_int as f64));
        nodes.push(1.0);
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Merge nodes that coincide up to rounding (ψ = k/N).
        let mut g_nodes: Vec<f64> = Vec::with_capacity(nodes.len());
        for v in nodes {
            match g_nodes.last() {
                Some(&last) if (v - last).abs() <= 1e-12 => {}
                _ => g_nodes.push(v),
            }
        }
        let locate = |x: f64| -> usize {
            g_nodes
                .iter()
                .position(|&v| (v - x).abs() <= 1e-12)
                .expect("node was inserted above")
        };
        let psi_in_g: Vec<usize> = psi.iter().map(|&p| locate(p)).collect();
        let integration: Vec<usize> = (1..=n_int)
            .map(|k| locate(k as f64 / n_int as f64))
            .collect();

        let mut coords: Vec<(Coord, f64)> = g_nodes.iter().map(|&v| (Coord::G, v)).collect();
        coords.extend(psi.iter().map(|&p| (Coord::GBar, p)));
        let cov = stacked_covariance(&coords);
        let eig = SymmetricEigen::new(cov);
        let min = eig.eigenvalues.min();
        if min < EIGEN_CLIP {
            return Err(Error::NotPsd(min));
        }
        let mut factor = eig.eigenvectors;
        for (j, mut col) in factor.column_iter_mut().enumerate() {
            col *= eig.eigenvalues[j].max(0.0).sqrt();
        }
        Ok(PathSampler {
            factor,
            psi: psi.to_vec(),
            g_nodes,
            psi_in_g,
            integration,
        })
    }

    fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Column j is the stacked vector (G(nodes), Ḡ(ψ)) for draw `first + j`.
    fn draw_batch(&self, key: StreamKey, first: usize, count: usize) -> DMatrix<f64> {
        let d = self.dim();
        let mut xi = DMatrix::zeros(d, count);
        for j in 0..count {
            let mut rng = key.child((first + j) as u64).rng();
            for v in xi.column_mut(j).iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        &self.factor * xi
    }

    fn path(&self, col: &[f64]) -> GaussianPath {
        let ng = self.g_nodes.len();
        let g: Vec<f64> = self.psi_in_g.iter().map(|&i| col[i]).collect();
        let gbar: Vec<f64> = col[ng..ng + self.psi.len()].to_vec();
        let g1 = col[ng - 1];
        let z = self
            .psi
            .iter()
            .zip(g.iter().zip(&gbar))
            .map(|(&p, (&a, &b))| z_from_parts(p, a, b, g1))
            .collect();
        GaussianPath {
            psi: self.psi.clone(),
            g,
            gbar,
            g1,
            z,
        }
    }

    /// Increments of G over the integration grid, starting from G(0) = 0.
    fn increments(&self, col: &[f64]) -> Vec<f64> {
        let mut prev = 0.0;
        self.integration
            .iter()
            .map(|&i| {
                let d = col[i] - prev;
                prev = col[i];
                d
            })
            .collect()
    }
}

/// Runs `f` on every draw, in parallel over fixed-size batches; the output
/// order is the draw order.
fn map_draws<T: Send, F>(sampler: &PathSampler, key: StreamKey, n: usize, f: F) -> Vec<T>
where
    F: Fn(&[f64]) -> T + Sync,
{
    let batches = n.div_ceil(BATCH);
    let out: Vec<Vec<T>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let first = b * BATCH;
            let count = BATCH.min(n - first);
            let m = sampler.draw_batch(key, first, count);
            m.column_iter().map(|c| f(c.as_slice())).collect()
        })
        .collect();
    out.into_iter().flatten().collect()
}

/// `config.n_draws` paths of (G, Ḡ, Z) on the ψ grid.
pub fn sample_gaussian_paths(config: &LimitConfig, key: StreamKey) -> Result<Vec<GaussianPath>> {
    config.validate()?;
    let sampler = PathSampler::new(&config.psi_grid, 0)?;
    Ok(map_draws(&sampler, key, config.n_draws, |c| {
        sampler.path(c)
    }))
}

fn quadratic_form(k: &DMatrix<f64>, d: &[f64]) -> f64 {
    let n = d.len();
    let mut total = 0.0;
    for i in 0..n {
        let col = k.column(i);
        let s: f64 = col.iter().zip(d).map(|(a, b)| a * b).sum();
        total += s * d[i];
    }
    total
}

/// Left-point nodes (k-1)/N, k = 1..N.
fn left_nodes(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / n as f64).collect()
}

/// Draws of Σ_i Σ_j 𝒦(r_i, r_j) ΔG_i ΔG_j on the integration grid.
pub fn denominator_draws(config: &LimitConfig, key: StreamKey) -> Result<Vec<f64>> {
    config.validate()?;
    let n = config.integration_points.max(2);
    let sampler = PathSampler::new(&config.psi_grid, n)?;
    let k = denominator_weights(&config.kernel, &left_nodes(n));
    Ok(map_draws(&sampler, key, config.n_draws, |c| {
        quadratic_form(&k, &sampler.increments(c))
    }))
}

/// The numerator path and its denominator from one draw of G.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitDraw {
    pub z: Vec<f64>,
    /// 1 for [`LimitKind::Plain`].
    pub denom: f64,
    pub statistic: f64,
}

/// Per-draw components of the limit statistic.
pub fn limit_draws(config: &LimitConfig) -> Result<Vec<LimitDraw>> {
    config.validate()?;
    let key = StreamKey::new(config.seed).named("limit");
    let weights = config.weights.weights(&config.psi_grid)?;
    let shift: Vec<f64> = match config.drift {
        Some(d) => config
            .psi_grid
            .iter()
            .map(|&p| noncentrality(p, d.psi0, d.varrho))
            .collect(),
        None => vec![0.0; config.psi_grid.len()],
    };
    let (sampler, kmat) = match config.kind {
        LimitKind::Robust => {
            let n = config.integration_points;
            (
                PathSampler::new(&config.psi_grid, n)?,
                Some(denominator_weights(&config.kernel, &left_nodes(n))),
            )
        }
        LimitKind::Plain => (PathSampler::new(&config.psi_grid, 0)?, None),
    };
    Ok(map_draws(&sampler, key, config.n_draws, |c| {
        let path = sampler.path(c);
        let z: Vec<f64> = path.z.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let denom = match &kmat {
            Some(k) => quadratic_form(k, &sampler.increments(c)),
            None => 1.0,
        };
        let scaled: Vec<f64> = z.iter().map(|v| v / denom.max(0.0).sqrt()).collect();
        let statistic = exp_transform_tag(&scaled, config.c, &weights);
        LimitDraw {
            z,
            denom,
            statistic,
        }
    }))
}

/// Sorted draws of the limit statistic with their configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitTable {
    pub draws: Vec<f64>,
    pub config: LimitConfig,
    pub checksum: String,
}

impl LimitTable {
    pub fn from_draws(mut draws: Vec<f64>, config: LimitConfig) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::InvalidInput(
                "limit table needs at least one draw".into(),
            ));
        }
        if draws.iter().any(|d| d.is_nan()) {
            return Err(Error::InvalidInput("limit draws contain NaN".into()));
        }
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let checksum = table_checksum(&draws, &config);
        Ok(LimitTable {
            draws,
            config,
            checksum,
        })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Right-tail p-value; see [`pvalue_lookup`].
    pub fn pvalue(&self, stat: f64) -> f64 {
        pvalue_lookup(self, stat)
    }

    /// Empirical quantile; see [`empirical_quantile`].
    pub fn quantile(&self, q: f64) -> f64 {
        empirical_quantile(&self.draws, q)
    }

    /// Upper-`level` critical value.
    pub fn critical_value(&self, level: f64) -> f64 {
        self.quantile(1.0 - level)
    }

    pub fn verify(&self) -> bool {
        self.checksum == table_checksum(&self.draws, &self.config)
    }
}

/// The ⌈qn⌉-th smallest of `sorted` (clamped to the sample).
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

fn table_checksum(draws: &[f64], config: &LimitConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    for d in draws {
        h.update(d.to_le_bytes());
    }
    hex(&h.finalize())
}

/// Simulates the table for `config`.
pub fn limit_statistic_draws(config: &LimitConfig) -> Result<LimitTable> {
    let draws = limit_draws(config)?
        .into_iter()
        .map(|d| d.statistic)
        .collect();
    LimitTable::from_draws(draws, config.clone())
}

/// (#{d > s} + ½#{d = s} + 1)/(n + 1).
///
/// A statistic below every draw gets 1; one above every draw gets 1/(n + 1).
pub fn pvalue_lookup(table: &LimitTable, stat: f64) -> f64 {
    pvalue_from_sorted(&table.draws, stat)
}

/// [`pvalue_lookup`] against any ascending sample.
pub fn pvalue_from_sorted(d: &[f64], stat: f64) -> f64 {
    let below = d.partition_point(|&v| v < stat);
    let upto = d.partition_point(|&v| v <= stat);
    let above = d.len() - upto;
    let ties = upto - below;
    (above as f64 + 0.5 * ties as f64 + 1.0) / (d.len() as f64 + 1.0)
}

/// Draws of 𝒲_p(ψ) = ‖B_p(ψ) - ψB_p(1)‖²/(ψ(1 - ψ)) on `grid`, one vector
/// per draw.
///
/// Brownian motion is sampled exactly at the grid points and at 1.
pub fn simulate_bessel_paths(
    p: usize,
    grid: &[f64],
    n_draws: usize,
    key: StreamKey,
) -> Result<Vec<Vec<f64>>> {
    if p == 0 {
        return Err(Error::InvalidInput("p must be at least one".into()));
    }
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.iter().any(|&v| !(v > 0.0 && v < 1.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "grid must be strictly increasing inside (0, 1)".into(),
        ));
    }
    let mut steps: Vec<f64> = Vec::with_capacity(grid.len() + 1);
    let mut prev = 0.0;
    for &g in grid.iter().chain(std::iter::once(&1.0)) {
        steps.push((g - prev).sqrt());
        prev = g;
    }
    let out = (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.child(i as u64).rng();
            let m = grid.len();
            let mut b = vec![0.0; p * (m + 1)];
            for d in 0..p {
                let mut acc = 0.0;
                for (s, sd) in steps.iter().enumerate() {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    acc += sd * e;
                    b[d * (m + 1) + s] = acc;
                }
            }
            grid.iter()
                .enumerate()
                .map(|(s, &psi)| {
                    let mut q = 0.0;
                    for d in 0..p {
                        let v = b[d * (m + 1) + s] - psi * b[d * (m + 1) + m];
                        q += v * v;
                    }
                    q / (psi * (1.0 - psi))
                })
                .collect()
        })
        .collect();
    Ok(out)
}

/// Draws of sup_ψ 𝒲_p(ψ) over `grid`; see [`simulate_bessel_paths`].
pub fn simulate_bessel_sup(
    p: usize,
    grid: &[f64],
    n_draws: usize,
    key: StreamKey,
) -> Result<Vec<f64>> {
    Ok(simulate_bessel_paths(p, grid, n_draws, key)?
        .into_iter()
        .map(|w| w.into_iter().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// On-disk cache of limit tables, one JSON file per configuration.
///
/// File name `limit-<first 16 hex digits of the config hash>.json`; contents
/// `{format_version, config_hash, draw_count, table}`.
#[derive(Clone, Debug)]
pub struct TableCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format_version: u32,
    config_hash: String,
    draw_count: usize,
    table: LimitTable,
}

impl TableCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TableCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, config: &LimitConfig) -> PathBuf {
        self.dir
            .join(format!("limit-{}.json", &config.hash()[..16]))
    }

    /// Cached table if present and intact.
    pub fn load(&self, config: &LimitConfig) -> Result<Option<LimitTable>> {
        let path = self.path_for(config);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        let file: CacheFile = serde_json::from_str(&text)?;
        if file.format_version != CACHE_FORMAT_VERSION
            || file.config_hash != config.hash()
            || file.table.config != *config
            || file.draw_count != file.table.len()
            || !file.table.verify()
        {
            log::warn!("ignoring stale or corrupt cache file {}", path.display());
            return Ok(None);
        }
        Ok(Some(file.table))
    }

    pub fn store(&self, table: &LimitTable) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.path_for(&table.config);
        let file = CacheFile {
            format_version: CACHE_FORMAT_VERSION,
            config_hash: table.config.hash(),
            draw_count: table.len(),
            table: table.clone(),
        };
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec(&file)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }

    pub fn get_or_build(&self, config: &LimitConfig) -> Result<LimitTable> {
        if let Some(t) = self.load(config)? {
            return Ok(t);
        }
        log::info!("simulating limit table ({} draws)", config.n_draws);
        let t = limit_statistic_draws(config)?;
        self.store(&t)?;
        Ok(t)
    }
}
