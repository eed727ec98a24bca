//! Data generators, the seeded replication harness, and CSV reporting.
//!
//! Every replicate draws from its own RNG stream derived from
//! `(seed, experiment tags...)`, so results are bit-identical regardless of
//! scheduling or thread count; aggregation happens in a fixed order at the
//! end.

use crate::error::{Error, Result};
use crate::grids::{build_net, clustering_bounds, regression_bounds, spatial_grid, spatial_grid_on, GridSpec};
use crate::kernels::{KernelSpec, NoiseModel};
use crate::noisy_kmeans::{
    clustering_error, distortion, lloyd_kmeans_baseline, Codebook, DeconvDensity, KmeansPipeline,
    NoisySample,
};
use crate::numerics::{mean_stderr, median};
use crate::robust_regression::{
    default_bound, default_gamma, local_estimate, select_global, select_pointwise,
    RegressionSample,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Per-axis affine map `x' = (x - shift) / scale` onto the unit box.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AffineMap {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| (v - self.shift[j]) / self.scale[j])
            .collect()
    }

    pub fn inverse(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| v * self.scale[j] + self.shift[j])
            .collect()
    }
}

/// Rescales points into `[0,1]^d` with a per-axis margin, returning the map.
pub fn rescale_to_unit(points: &[Vec<f64>], margin: f64) -> (Vec<Vec<f64>>, AffineMap) {
    let d = points[0].len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points {
        for j in 0..d {
            lo[j] = lo[j].min(p[j]);
            hi[j] = hi[j].max(p[j]);
        }
    }
    let mut shift = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let range = (hi[j] - lo[j]).max(1e-9);
        shift[j] = lo[j] - margin * range;
        scale[j] = range * (1.0 + 2.0 * margin);
    }
    let map = AffineMap { shift, scale };
    (points.iter().map(|p| map.forward(p)).collect(), map)
}

/// Deterministic RNG stream derived from a seed and a tag path.
pub fn rng_stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix(seed ^ 0x6A09E667F3BCC909);
    for &t in tags {
        state = splitmix(state ^ t.wrapping_mul(0x9E3779B97F4A7C15));
    }
    ChaCha8Rng::seed_from_u64(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; hand-rolled so streams stay stable across dependency bumps
    let u1: f64 = rng.gen_range(1e-300..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Two-component Gaussian mixture observed under additive Gaussian noise
/// with covariance `diag(1, u)`.
#[derive(Debug, Clone)]
pub struct MixtureData {
    /// Noisy observations `Z = X + eps`, original units.
    pub z: Vec<Vec<f64>>,
    /// Latent noise-free positions, original units (error scoring only).
    pub x: Vec<Vec<f64>>,
    /// Latent class labels in `{1, 2}`.
    pub labels: Vec<usize>,
}

/// Samples the clustering experiment model: class 1 centered at the origin,
/// class 2 at `(5, 0)`, unit class covariances, noise `N(0, diag(1, u))`.
pub fn gen_mixture(n: usize, u: f64, seed: u64) -> MixtureData {
    assert!(u >= 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let s2 = u.sqrt();
    for _ in 0..n {
        let label = 1 + rng.gen_range(0..2usize);
        let cx = if label == 1 { 0.0 } else { 5.0 };
        let xi = vec![cx + standard_normal(&mut rng), standard_normal(&mut rng)];
        let eps = [standard_normal(&mut rng), s2 * standard_normal(&mut rng)];
        z.push(vec![xi[0] + eps[0], xi[1] + eps[1]]);
        x.push(xi);
        labels.push(label);
    }
    MixtureData { z, x, labels }
}

/// Regression target functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FStar {
    /// `sin(2 pi x_1)`.
    Sin,
    /// `1 - 2|x_1 - 1/2|` (Lipschitz tent).
    Tent,
    /// Constant 0.3.
    Const,
}

impl FStar {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FStar::Sin => (2.0 * PI * x[0]).sin(),
            FStar::Tent => 1.0 - 2.0 * (x[0] - 0.5).abs(),
            FStar::Const => 0.3,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sin" => Ok(FStar::Sin),
            "tent" => Ok(FStar::Tent),
            "const" => Ok(FStar::Const),
            _ => Err(Error::InvalidInput(format!("unknown target function `{s}`"))),
        }
    }
}

/// Symmetric regression noise menu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegNoise {
    None,
    Gaussian(f64),
    /// Student t with 3 degrees of freedom, scaled.
    StudentT3(f64),
    Cauchy(f64),
}

impl RegNoise {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            RegNoise::None => 0.0,
            RegNoise::Gaussian(s) => s * standard_normal(rng),
            RegNoise::StudentT3(s) => {
                let z = standard_normal(rng);
                let chi2: f64 = (0..3).map(|_| standard_normal(rng).powi(2)).sum();
                s * z / (chi2 / 3.0).sqrt()
            }
            RegNoise::Cauchy(s) => {
                let u: f64 = rng.gen_range(1e-12..1.0 - 1e-12);
                s * (PI * (u - 0.5)).tan()
            }
        }
    }

    pub fn parse(s: &str, scale: f64) -> Result<Self> {
        match s {
            "none" => Ok(RegNoise::None),
            "gaussian" => Ok(RegNoise::Gaussian(scale)),
            "student-t3" => Ok(RegNoise::StudentT3(scale)),
            "cauchy" => Ok(RegNoise::Cauchy(scale)),
            _ => Err(Error::InvalidInput(format!("unknown noise `{s}`"))),
        }
    }
}

/// Uniform design on `[0,1]^d` with `Y = f*(W) + xi`.
pub fn gen_regression(
    n: usize,
    f_star: FStar,
    noise: RegNoise,
    seed: u64,
    d: usize,
) -> RegressionSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = w.iter().map(|p| f_star.eval(p) + noise.sample(&mut rng)).collect();
    RegressionSample::new(w, y).expect("generated sample is valid")
}

/// Configuration for the clustering experiment reproduction.
#[derive(Debug, Clone)]
pub struct Figure1Config {
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub u_values: Vec<f64>,
    pub constants: Vec<f64>,
    pub grid_m: usize,
    pub net_ratio: f64,
    pub beta: Vec<f64>,
    pub s_plus: f64,
    pub margin: f64,
    pub k: usize,
}

impl Default for Figure1Config {
    fn default() -> Self {
        Figure1Config {
            n: 200,
            replicates: 100,
            seed: 1,
            u_values: (1..=10).map(|u| u as f64).collect(),
            constants: vec![0.1, 1.0, 10.0],
            grid_m: 128,
            net_ratio: 0.7,
            beta: vec![1.0, 1.0],
            s_plus: 2.0,
            margin: 0.05,
            k: 2,
        }
    }
}

impl Figure1Config {
    fn validate(&self) -> Result<()> {
        if self.replicates < 1 || self.n < 10 {
            return Err(Error::InvalidInput(
                "need replicates >= 1 and n >= 10".into(),
            ));
        }
        if self.constants.iter().any(|&c| c <= 0.0) {
            return Err(Error::InvalidInput("constants must be positive".into()));
        }
        Ok(())
    }
}

/// Clustering method identifiers in result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    KMeans,
    Erc,
    Gradient,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::KMeans => write!(f, "kmeans"),
            Method::Erc => write!(f, "erc"),
            Method::Gradient => write!(f, "gradient"),
        }
    }
}

/// One raw measurement; `value` is `None` when the replicate failed.
#[derive(Debug, Clone)]
pub struct Figure1Row {
    pub method: Method,
    pub constant: Option<f64>,
    pub u: f64,
    pub replicate: usize,
    pub value: Option<f64>,
}

/// Raw rows plus the config that produced them.
#[derive(Debug, Clone)]
pub struct Figure1Result {
    pub rows: Vec<Figure1Row>,
    pub config: Figure1Config,
}

impl Figure1Result {
    /// Mean clustering error for a `(method, constant, u)` cell.
    pub fn mean(&self, method: Method, constant: Option<f64>, u: f64) -> Option<(f64, f64)> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.constant == constant && r.u == u)
            .filter_map(|r| r.value)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(mean_stderr(&vals))
        }
    }

    /// Raw rows followed by aggregate rows (flagged by the last column).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,constant,u,replicate,value,is_aggregate,stat\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},false,\n",
                r.method,
                r.constant.map_or(String::new(), fmt_f64),
                fmt_f64(r.u),
                r.replicate,
                r.value.map_or(String::new(), fmt_f64),
            ));
        }
        for (method, constant) in self.cells() {
            for &u in &self.config.u_values {
                if let Some((mean, se)) = self.mean(method, constant, u) {
                    let c = constant.map_or(String::new(), fmt_f64);
                    out.push_str(&format!(
                        "{method},{c},{},,{},true,mean\n",
                        fmt_f64(u),
                        fmt_f64(mean)
                    ));
                    out.push_str(&format!(
                        "{method},{c},{},,{},true,stderr\n",
                        fmt_f64(u),
                        fmt_f64(se)
                    ));
                }
            }
        }
        out
    }

    fn cells(&self) -> Vec<(Method, Option<f64>)> {
        let mut cells = vec![(Method::KMeans, None)];
        for &c in &self.config.constants {
            cells.push((Method::Erc, Some(c)));
        }
        for &c in &self.config.constants {
            cells.push((Method::Gradient, Some(c)));
        }
        cells
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.10e}")
}

struct CellOutcome {
    u: f64,
    replicate: usize,
    kmeans: Option<f64>,
    erc: Vec<Option<f64>>,
    gradient: Vec<Option<f64>>,
}

/// Runs the clustering comparison: standard k-means against the isotropic
/// risk-comparison baseline and the gradient rule, each with every constant,
/// over all `(u, replicate)` cells. Failed cells are recorded as missing.
pub fn run_figure1(config: &Figure1Config) -> Result<Figure1Result> {
    config.validate()?;
    let cells: Vec<(usize, usize)> = (0..config.u_values.len())
        .flat_map(|ui| (0..config.replicates).map(move |r| (ui, r)))
        .collect();
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|&(ui, rep)| run_cell(config, ui, rep))
        .collect();
    let mut rows = Vec::new();
    for o in outcomes {
        rows.push(Figure1Row {
            method: Method::KMeans,
            constant: None,
            u: o.u,
            replicate: o.replicate,
            value: o.kmeans,
        });
        for (ci, &c) in config.constants.iter().enumerate() {
            rows.push(Figure1Row {
                method: Method::Erc,
                constant: Some(c),
                u: o.u,
                replicate: o.replicate,
                value: o.erc[ci],
            });
        }
        for (ci, &c) in config.constants.iter().enumerate() {
            rows.push(Figure1Row {
                method: Method::Gradient,
                constant: Some(c),
                u: o.u,
                replicate: o.replicate,
                value: o.gradient[ci],
            });
        }
    }
    Ok(Figure1Result {
        rows,
        config: config.clone(),
    })
}

fn run_cell(config: &Figure1Config, ui: usize, rep: usize) -> CellOutcome {
    let u = config.u_values[ui];
    let seed_data = rng_stream(config.seed, &[1, ui as u64, rep as u64]).gen::<u64>();
    let data = gen_mixture(config.n, u, seed_data);
    let scored = NoisySample::new(data.z.clone())
        .and_then(|s| s.with_labels(data.labels.clone()))
        .and_then(|s| s.with_latent(data.x.clone()))
        .expect("consistent generated sample");

    // standard k-means on the raw observations
    let seed_lloyd = rng_stream(config.seed, &[2, ui as u64, rep as u64]).gen::<u64>();
    let km = lloyd_kmeans_baseline(&scored, config.k, seed_lloyd);
    let kmeans = clustering_error(&km, &scored).ok();

    // shared deconvolution pipeline
    let (z_scaled, map) = rescale_to_unit(&data.z, config.margin);
    let noise = NoiseModel::gaussian(
        vec![1.0 / map.scale[0], u.sqrt() / map.scale[1]],
        config.beta.clone(),
    );
    let (h_minus, h_plus, _clamped) = clustering_bounds(config.n, &config.beta, config.s_plus);
    let seed_pipe = rng_stream(config.seed, &[3, ui as u64, rep as u64]).gen::<u64>();
    let pipeline = build_net(h_minus, h_plus, config.net_ratio, 2, config.n)
        .and_then(|net| {
            let grid = spatial_grid(2, config.grid_m)?;
            let sample = NoisySample::new(z_scaled.clone())?;
            KmeansPipeline::new(
                &sample,
                &KernelSpec::sinc(2),
                &noise,
                &net,
                config.k,
                &grid,
                seed_pipe,
            )
        });

    let mut erc = vec![None; config.constants.len()];
    let mut gradient = vec![None; config.constants.len()];
    if let Ok(pipe) = pipeline {
        for (ci, &c) in config.constants.iter().enumerate() {
            gradient[ci] = pipe.select(c, 1).ok().and_then(|(_, cb)| {
                let back = cb.map_coords(|j, v| v * map.scale[j] + map.shift[j]);
                clustering_error(&back, &scored).ok()
            });
            erc[ci] = pipe.erc_select(c).ok().and_then(|cb| {
                let back = cb.map_coords(|j, v| v * map.scale[j] + map.shift[j]);
                clustering_error(&back, &scored).ok()
            });
        }
    }
    CellOutcome {
        u,
        replicate: rep,
        kmeans,
        erc,
        gradient,
    }
}

/// Configuration for the risk-decay sweep.
#[derive(Debug, Clone)]
pub struct RatesConfig {
    pub n_values: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub q: f64,
    /// Fixed noise-covariance parameter for the clustering section.
    pub cluster_u: f64,
    pub grid_m: usize,
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig {
            n_values: vec![250, 500, 1000, 2000, 4000],
            replicates: 20,
            seed: 1,
            q: 2.0,
            cluster_u: 4.0,
            grid_m: 128,
        }
    }
}

/// Section identifiers in the rates table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Pointwise,
    GlobalLq,
    Clustering,
}

impl std::fmt::Display for Section {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Section::Pointwise => write!(f, "pointwise"),
            Section::GlobalLq => write!(f, "global-lq"),
            Section::Clustering => write!(f, "clustering"),
        }
    }
}

/// One raw rates measurement: risk of the selected bandwidth or of a fixed
/// net member.
#[derive(Debug, Clone)]
pub struct RatesRow {
    pub section: Section,
    pub n: usize,
    /// "selected" or the net member the risk was measured at.
    pub member: String,
    pub replicate: usize,
    pub value: Option<f64>,
}

/// Rates sweep output with per-section summaries.
#[derive(Debug, Clone)]
pub struct RatesResult {
    pub rows: Vec<RatesRow>,
    pub config: RatesConfig,
}

/// Location summary of the risk of "selected" versus the best fixed member.
#[derive(Debug, Clone)]
pub struct RatesSummary {
    pub section: Section,
    pub n: usize,
    /// Median (pointwise, clustering) or mean (global) selected risk.
    pub selected: f64,
    /// Best fixed-member risk under the same location statistic.
    pub oracle: f64,
    pub ratio: f64,
}

impl RatesResult {
    fn location(&self, section: Section, vals: &[f64]) -> f64 {
        match section {
            Section::GlobalLq => mean_stderr(vals).0,
            // clustering oracle comparisons use means too; the decay trend
            // is checked on medians
            Section::Clustering => mean_stderr(vals).0,
            Section::Pointwise => median(vals),
        }
    }

    fn collect(&self, section: Section, n: usize, member: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.section == section && r.n == n && r.member == member)
            .filter_map(|r| r.value)
            .collect()
    }

    /// Median selected risk per n (for decay checks).
    pub fn median_selected(&self, section: Section, n: usize) -> Option<f64> {
        let v = self.collect(section, n, "selected");
        if v.is_empty() {
            None
        } else {
            Some(median(&v))
        }
    }

    /// Summary per `(section, n)`: selected vs best-in-net risk.
    pub fn summaries(&self) -> Vec<RatesSummary> {
        let mut out = Vec::new();
        for &section in &[Section::Pointwise, Section::GlobalLq, Section::Clustering] {
            for &n in &self.config.n_values {
                let selected = self.collect(section, n, "selected");
                if selected.is_empty() {
                    continue;
                }
                let members: Vec<String> = {
                    let mut ms: Vec<String> = self
                        .rows
                        .iter()
                        .filter(|r| r.section == section && r.n == n && r.member != "selected")
                        .map(|r| r.member.clone())
                        .collect();
                    ms.sort();
                    ms.dedup();
                    ms
                };
                let sel_stat = self.location(section, &selected);
                let oracle = members
                    .iter()
                    .map(|m| self.location(section, &self.collect(section, n, m)))
                    .fold(f64::INFINITY, f64::min);
                out.push(RatesSummary {
                    section,
                    n,
                    selected: sel_stat,
                    oracle,
                    ratio: sel_stat / oracle,
                });
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("record,section,n,member,replicate,value,oracle,ratio\n");
        for r in &self.rows {
            out.push_str(&format!(
                "raw,{},{},\"{}\",{},{},,\n",
                r.section,
                r.n,
                r.member,
                r.replicate,
                r.value.map_or(String::new(), fmt_f64)
            ));
        }
        for s in self.summaries() {
            out.push_str(&format!(
                "summary,{},{},selected,,{},{},{}\n",
                s.section,
                s.n,
                fmt_f64(s.selected),
                fmt_f64(s.oracle),
                fmt_f64(s.ratio)
            ));
        }
        out
    }
}

/// Runs the decay sweep: pointwise and global regression risks and
/// clustering excess distortion over a doubling n-grid, selected versus
/// every fixed net member.
pub fn run_rates(config: &RatesConfig) -> Result<RatesResult> {
    let mut jobs: Vec<(Section, usize, usize)> = Vec::new();
    for &n in &config.n_values {
        for rep in 0..config.replicates {
            jobs.push((Section::Pointwise, n, rep));
            jobs.push((Section::GlobalLq, n, rep));
            jobs.push((Section::Clustering, n, rep));
        }
    }
    let results: Vec<Vec<RatesRow>> = jobs
        .par_iter()
        .map(|&(section, n, rep)| match section {
            Section::Pointwise => pointwise_job(config, n, rep),
            Section::GlobalLq => global_job(config, n, rep),
            Section::Clustering => clustering_job(config, n, rep),
        })
        .collect();
    Ok(RatesResult {
        rows: results.into_iter().flatten().collect(),
        config: config.clone(),
    })
}

fn regression_net(n: usize) -> crate::grids::BandwidthNet {
    let (hm, hp, _) = regression_bounds(n, 1);
    build_net(hm, hp, 0.7, 1, n).expect("valid clamped bounds")
}

fn pointwise_job(config: &RatesConfig, n: usize, rep: usize) -> Vec<RatesRow> {
    let seed = rng_stream(config.seed, &[10, n as u64, rep as u64]).gen::<u64>();
    let sample = gen_regression(n, FStar::Sin, RegNoise::StudentT3(0.3), seed, 1);
    let net = regression_net(n);
    let kernel = KernelSpec::epanechnikov(1);
    let x0 = [0.5];
    let truth = FStar::Sin.eval(&x0);
    let gamma = default_gamma(sample.y());
    let b = default_bound(sample.y());
    let mut rows = Vec::new();
    let sel = select_pointwise(&x0, &sample, &net, &kernel, gamma, b, 1.0, 1)
        .ok()
        .map(|fit| (fit.estimate - truth).abs());
    rows.push(RatesRow {
        section: Section::Pointwise,
        n,
        member: "selected".into(),
        replicate: rep,
        value: sel,
    });
    for h in net.members() {
        let err = local_estimate(&x0, h, &sample, &kernel, gamma, b)
            .ok()
            .map(|est| (est - truth).abs());
        rows.push(RatesRow {
            section: Section::Pointwise,
            n,
            member: h.to_string(),
            replicate: rep,
            value: err,
        });
    }
    rows
}

fn global_job(config: &RatesConfig, n: usize, rep: usize) -> Vec<RatesRow> {
    let seed = rng_stream(config.seed, &[11, n as u64, rep as u64]).gen::<u64>();
    let sample = gen_regression(n, FStar::Sin, RegNoise::StudentT3(0.3), seed, 1);
    let net = regression_net(n);
    let kernel = KernelSpec::epanechnikov(1);
    let gamma = default_gamma(sample.y());
    let b = default_bound(sample.y());
    let x_grid = spatial_grid_on(1, 33, &[0.15], &[0.85]).expect("valid interior grid");
    let q = config.q;
    let lq_risk = |values: &[f64]| -> f64 {
        let mut acc = 0.0;
        let cv = x_grid.cell_volume();
        for (i, v) in values.iter().enumerate() {
            let x = x_grid.node(i);
            acc += (v - FStar::Sin.eval(&x)).abs().powf(q) * cv;
        }
        acc.powf(1.0 / q)
    };
    let mut rows = Vec::new();
    let sel = select_global(&sample, &net, &kernel, gamma, b, q, 1, &x_grid, 1.0)
        .ok()
        .map(|fit| lq_risk(fit.fitted.values()));
    rows.push(RatesRow {
        section: Section::GlobalLq,
        n,
        member: "selected".into(),
        replicate: rep,
        value: sel,
    });
    for h in net.members() {
        let mut vals = Vec::with_capacity(x_grid.len());
        let mut ok = true;
        for i in 0..x_grid.len() {
            match local_estimate(&x_grid.node(i), h, &sample, &kernel, gamma, b) {
                Ok(v) => vals.push(v),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        rows.push(RatesRow {
            section: Section::GlobalLq,
            n,
            member: h.to_string(),
            replicate: rep,
            value: ok.then(|| lq_risk(&vals)),
        });
    }
    rows
}

/// Quadrature description of the latent mixture: density of
/// `1/2 N(0, I) + 1/2 N((5,0), I)` on a box covering its mass.
pub struct MixtureTruth {
    grid: GridSpec,
    density: Vec<f64>,
    pub optimal_codebook: Codebook,
    pub optimal_distortion: f64,
}

impl MixtureTruth {
    pub fn new() -> Self {
        let grid = spatial_grid_on(2, 220, &[-5.0, -5.0], &[10.0, 5.0]).expect("valid box");
        let mut density = vec![0.0; grid.len()];
        let pdf = |x: &[f64], cx: f64| {
            ((-0.5 * ((x[0] - cx) * (x[0] - cx) + x[1] * x[1])).exp()) / (2.0 * PI)
        };
        crate::grids::for_each_node(&grid, |idx, x| {
            density[idx] = 0.5 * pdf(x, 0.0) + 0.5 * pdf(x, 5.0);
        });
        // population 2-means by Lloyd iteration on the quadrature grid
        let cv = grid.cell_volume();
        let mut centers = vec![vec![0.0, 0.0], vec![5.0, 0.0]];
        for _ in 0..200 {
            let mut mass = [0.0f64; 2];
            let mut mean = [[0.0f64; 2]; 2];
            crate::grids::for_each_node(&grid, |idx, x| {
                let d0: f64 = (x[0] - centers[0][0]).powi(2) + (x[1] - centers[0][1]).powi(2);
                let d1: f64 = (x[0] - centers[1][0]).powi(2) + (x[1] - centers[1][1]).powi(2);
                let j = usize::from(d1 < d0);
                mass[j] += density[idx];
                mean[j][0] += density[idx] * x[0];
                mean[j][1] += density[idx] * x[1];
            });
            let mut moved = 0.0f64;
            for j in 0..2 {
                for a in 0..2 {
                    let nv = mean[j][a] / mass[j];
                    moved = moved.max((nv - centers[j][a]).abs());
                    centers[j][a] = nv;
                }
            }
            if moved < 1e-12 {
                break;
            }
        }
        let optimal_codebook = Codebook::new(centers).expect("separated optima");
        let mut truth = MixtureTruth {
            grid,
            density,
            optimal_codebook: Codebook::new(vec![vec![0.0, 0.0], vec![5.0, 0.0]]).unwrap(),
            optimal_distortion: 0.0,
        };
        truth.optimal_distortion = truth.distortion(&optimal_codebook) * cv / cv;
        truth.optimal_codebook = optimal_codebook;
        truth
    }

    /// Population distortion of a codebook under the latent mixture.
    pub fn distortion(&self, codebook: &Codebook) -> f64 {
        let mut acc = 0.0;
        crate::grids::for_each_node(&self.grid, |idx, x| {
            let mut best = f64::INFINITY;
            for c in codebook.centers() {
                let d: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best {
                    best = d;
                }
            }
            acc += best * self.density[idx];
        });
        acc * self.grid.cell_volume()
    }

    pub fn excess(&self, codebook: &Codebook) -> f64 {
        (self.distortion(codebook) - self.optimal_distortion).max(0.0)
    }
}

impl Default for MixtureTruth {
    fn default() -> Self {
        Self::new()
    }
}

fn clustering_job(config: &RatesConfig, n: usize, rep: usize) -> Vec<RatesRow> {
    let seed = rng_stream(config.seed, &[12, n as u64, rep as u64]).gen::<u64>();
    let data = gen_mixture(n, config.cluster_u, seed);
    let truth = MixtureTruth::new();
    let (z_scaled, map) = rescale_to_unit(&data.z, 0.05);
    let beta = vec![1.0, 1.0];
    let noise = NoiseModel::gaussian(
        vec![1.0 / map.scale[0], config.cluster_u.sqrt() / map.scale[1]],
        beta.clone(),
    );
    let (hm, hp, _) = clustering_bounds(n, &beta, 2.0);
    let seed_pipe = rng_stream(config.seed, &[13, n as u64, rep as u64]).gen::<u64>();
    let pipe = build_net(hm, hp, 0.7, 2, n.min(200)).and_then(|net| {
        let grid = spatial_grid(2, config.grid_m)?;
        let sample = NoisySample::new(z_scaled.clone())?;
        KmeansPipeline::new(
            &sample,
            &KernelSpec::sinc(2),
            &noise,
            &net,
            2,
            &grid,
            seed_pipe,
        )
    });
    let mut rows = Vec::new();
    match pipe {
        Ok(pipe) => {
            let sel = pipe.select(1.0, 1).ok().map(|(_, cb)| {
                truth.excess(&cb.map_coords(|j, v| v * map.scale[j] + map.shift[j]))
            });
            rows.push(RatesRow {
                section: Section::Clustering,
                n,
                member: "selected".into(),
                replicate: rep,
                value: sel,
            });
            for (i, h) in pipe.net().members().iter().enumerate() {
                let cb = &pipe.fits()[i].codebook;
                let excess =
                    truth.excess(&cb.map_coords(|j, v| v * map.scale[j] + map.shift[j]));
                rows.push(RatesRow {
                    section: Section::Clustering,
                    n,
                    member: h.to_string(),
                    replicate: rep,
                    value: Some(excess),
                });
            }
        }
        Err(_) => {
            rows.push(RatesRow {
                section: Section::Clustering,
                n,
                member: "selected".into(),
                replicate: rep,
                value: None,
            });
        }
    }
    rows
}

/// Population distortion helper reused by diagnostics: distortion of a
/// fitted codebook measured against an empirical density on its own grid.
pub fn empirical_distortion(codebook: &Codebook, density: &DeconvDensity) -> f64 {
    distortion(codebook, density)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixture_deterministic_and_shaped() {
        let a = gen_mixture(100, 3.0, 42);
        let b = gen_mixture(100, 3.0, 42);
        assert_eq!(a.z, b.z);
        assert_eq!(a.labels, b.labels);
        assert!(a.labels.iter().all(|&l| l == 1 || l == 2));
        // u = 0: second noise coordinate degenerate, so Z2 == X2
        let c = gen_mixture(50, 0.0, 7);
        for i in 0..50 {
            assert!((c.z[i][1] - c.x[i][1]).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_class_means_converge() {
        let data = gen_mixture(10_000, 1.0, 11);
        let mut sums = [[0.0f64; 2]; 2];
        let mut counts = [0usize; 2];
        for i in 0..data.z.len() {
            let l = data.labels[i] - 1;
            sums[l][0] += data.z[i][0];
            sums[l][1] += data.z[i][1];
            counts[l] += 1;
        }
        // 3 standard errors with var = 2 per coordinate
        let tol = 3.0 * (2.0f64 / 5000.0).sqrt();
        assert!((sums[0][0] / counts[0] as f64 - 0.0).abs() < tol);
        assert!((sums[1][0] / counts[1] as f64 - 5.0).abs() < tol);
    }

    #[test]
    fn rescale_covers_unit_box() {
        let data = gen_mixture(500, 10.0, 3);
        let (scaled, map) = rescale_to_unit(&data.z, 0.05);
        for (p, orig) in scaled.iter().zip(&data.z) {
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)), "{p:?}");
            let back = map.inverse(p);
            assert!((back[0] - orig[0]).abs() < 1e-10);
            assert!((back[1] - orig[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn regression_generator_contracts() {
        let clean = gen_regression(50, FStar::Sin, RegNoise::None, 5, 1);
        for i in 0..clean.n() {
            assert_eq!(clean.y()[i], FStar::Sin.eval(&clean.w()[i]));
        }
        let a = gen_regression(50, FStar::Tent, RegNoise::Cauchy(0.2), 9, 1);
        let b = gen_regression(50, FStar::Tent, RegNoise::Cauchy(0.2), 9, 1);
        assert_eq!(a.y(), b.y());
        // cauchy noise: undefined mean but residual median near zero
        let big = gen_regression(4000, FStar::Const, RegNoise::Cauchy(0.2), 13, 1);
        let res: Vec<f64> = big.y().iter().map(|y| y - 0.3).collect();
        assert!(median(&res).abs() < 0.05);
    }

    #[test]
    fn figure1_row_accounting_tiny() {
        let config = Figure1Config {
            n: 60,
            replicates: 1,
            seed: 3,
            u_values: vec![1.0],
            constants: vec![1.0],
            grid_m: 32,
            ..Figure1Config::default()
        };
        let result = run_figure1(&config).unwrap();
        // 1 kmeans + 1 erc + 1 gradient per (u, replicate)
        assert_eq!(result.rows.len(), 3);
        let csv = result.to_csv();
        assert!(csv.lines().count() >= 1 + 3);
        assert!(csv.starts_with("method,constant,u,replicate,value,is_aggregate,stat"));
    }

    #[test]
    fn figure1_deterministic_across_runs() {
        let config = Figure1Config {
            n: 60,
            replicates: 2,
            seed: 7,
            u_values: vec![2.0],
            constants: vec![1.0],
            grid_m: 32,
            ..Figure1Config::default()
        };
        let a = run_figure1(&config).unwrap().to_csv();
        let b = run_figure1(&config).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn mixture_truth_optimal_near_class_means() {
        let truth = MixtureTruth::new();
        let mut cs = truth.optimal_codebook.centers().to_vec();
        cs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        // centroids pulled slightly toward the shared boundary
        assert!((cs[0][0]).abs() < 0.1, "{cs:?}");
        assert!((cs[1][0] - 5.0).abs() < 0.1);
        assert!(cs[0][1].abs() < 1e-6 && cs[1][1].abs() < 1e-6);
        // optimum beats nearby perturbations
        let perturbed = Codebook::new(vec![
            vec![cs[0][0] + 0.3, cs[0][1]],
            vec![cs[1][0], cs[1][1] + 0.3],
        ])
        .unwrap();
        assert!(truth.excess(&perturbed) > 0.0);
    }

    #[test]
    fn rng_streams_differ_by_tag() {
        let mut a = rng_stream(1, &[1, 2, 3]);
        let mut b = rng_stream(1, &[1, 2, 4]);
        let va: u64 = a.gen();
        let vb: u64 = b.gen();
        assert_ne!(va, vb);
        let mut c = rng_stream(1, &[1, 2, 3]);
        assert_eq!(va, c.gen::<u64>());
    }
}
