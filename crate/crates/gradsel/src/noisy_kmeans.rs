//! Clustering with errors in variables: deconvolution distortion, Voronoi
//! gradients, codebook fitting, the clustering majorant and selection rule,
//! clustering error, the Pollard Hessian diagnostic, and baselines.
//!
//! All spatial integrals are Riemann sums over a uniform grid on `[0,1]^d`;
//! Voronoi membership is resolved per node (nearest centroid, ties to the
//! lowest index).

use crate::conv::{build_ring, convolve_axis, AxisFft};
use crate::error::{Error, Result};
use crate::grids::{for_each_node, interp2, BandwidthNet, GridFunction, GridSpec};
use crate::kernels::{deconv_axis_profile, Bandwidth, KernelId, KernelSpec, NoiseModel};
use crate::numerics::norm2;
use crate::selector::{
    select, CandidateSet, GradientField, Majorant, SelectionReport, SelectorConfig,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::f64::consts::PI;

/// Ordered list of k centroids.
#[derive(Debug, Clone)]
pub struct Codebook {
    centers: Vec<Vec<f64>>,
}

impl Codebook {
    /// Centroids must be pairwise distinct (separation > 1e-9).
    pub fn new(centers: Vec<Vec<f64>>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidInput("codebook needs k >= 1 centroids".into()));
        }
        let d = centers[0].len();
        for c in &centers {
            if c.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: c.len(),
                });
            }
        }
        for i in 0..centers.len() {
            for j in (i + 1)..centers.len() {
                let dist: f64 = centers[i]
                    .iter()
                    .zip(&centers[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dist <= 1e-9 {
                    return Err(Error::DegenerateCodebook(1e-9));
                }
            }
        }
        Ok(Codebook { centers })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j]
    }

    /// Centroid-major flattening: `[c_1 ; c_2 ; ... ; c_k]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.centers.iter().flatten().copied().collect()
    }

    pub fn from_flat(flat: &[f64], k: usize, d: usize) -> Result<Self> {
        if flat.len() != k * d {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                got: flat.len(),
            });
        }
        Codebook::new((0..k).map(|j| flat[j * d..(j + 1) * d].to_vec()).collect())
    }

    /// Applies a coordinatewise map to every centroid.
    pub fn map_coords<F: Fn(usize, f64) -> f64>(&self, f: F) -> Codebook {
        Codebook {
            centers: self
                .centers
                .iter()
                .map(|c| c.iter().enumerate().map(|(j, &v)| f(j, v)).collect())
                .collect(),
        }
    }

    /// Index of the nearest centroid (ties to the lowest index).
    pub fn assign(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, c) in self.centers.iter().enumerate() {
            let d: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }
}

/// Noisy observations with optional latent labels and latent noise-free
/// positions (both used only for error scoring).
#[derive(Debug, Clone)]
pub struct NoisySample {
    z: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    latent_x: Option<Vec<Vec<f64>>>,
}

impl NoisySample {
    pub fn new(z: Vec<Vec<f64>>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::InvalidInput("sample must be nonempty".into()));
        }
        let d = z[0].len();
        if z.iter().any(|p| p.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: 0 });
        }
        Ok(NoisySample {
            z,
            labels: None,
            latent_x: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.z.len() {
            return Err(Error::DimensionMismatch {
                expected: self.z.len(),
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_latent(mut self, x: Vec<Vec<f64>>) -> Result<Self> {
        if x.len() != self.z.len() {
            return Err(Error::DimensionMismatch {
                expected: self.z.len(),
                got: x.len(),
            });
        }
        self.latent_x = Some(x);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn dim(&self) -> usize {
        self.z[0].len()
    }

    pub fn z(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn latent_x(&self) -> Option<&[Vec<f64>]> {
        self.latent_x.as_deref()
    }
}

/// Deconvolution density estimate on a grid. Values are signed:
/// deconvolution estimates can dip below zero.
#[derive(Debug, Clone)]
pub struct DeconvDensity {
    f: GridFunction,
    kernel: KernelId,
    h: Bandwidth,
    aux_eta: Option<Bandwidth>,
}

impl DeconvDensity {
    pub fn grid_fn(&self) -> &GridFunction {
        &self.f
    }

    pub fn kernel(&self) -> KernelId {
        self.kernel
    }

    pub fn bandwidth(&self) -> &Bandwidth {
        &self.h
    }

    pub fn auxiliary(&self) -> bool {
        self.aux_eta.is_some()
    }

    pub fn mass(&self) -> f64 {
        self.f.riemann_sum()
    }
}

/// Per-pipeline caches: axis kernel rings (keyed by axis and scales) and
/// FFT plans, shared across the many densities built from one sample.
#[derive(Default)]
struct DensityCaches {
    rings: HashMap<(usize, u64, u64), Vec<f64>>,
    ffts: HashMap<usize, AxisFft>,
}

/// `f^(x) = (1/n) sum_i K~(Z_i - x)` on grid nodes, with `K~` the
/// deconvolution kernel of `K_h` (or of `K_h * K_eta` when `aux_eta` is
/// given). Data are binned to the nearest node and convolved by FFT.
pub fn deconv_density(
    sample: &NoisySample,
    kernel: &KernelSpec,
    h: &Bandwidth,
    noise: &NoiseModel,
    grid: &GridSpec,
    aux_eta: Option<&Bandwidth>,
) -> Result<DeconvDensity> {
    deconv_density_cached(
        sample,
        kernel,
        h,
        noise,
        grid,
        aux_eta,
        &mut DensityCaches::default(),
    )
}

fn deconv_density_cached(
    sample: &NoisySample,
    kernel: &KernelSpec,
    h: &Bandwidth,
    noise: &NoiseModel,
    grid: &GridSpec,
    aux_eta: Option<&Bandwidth>,
    caches: &mut DensityCaches,
) -> Result<DeconvDensity> {
    let d = grid.dim();
    if sample.dim() != d || h.dim() != d || kernel.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: sample.dim(),
        });
    }
    if !noise.is_none() {
        let support = kernel.fourier_support().ok_or(Error::NonBandLimited)?;
        for j in 0..d {
            let band = match aux_eta {
                Some(eta) => support[j] / h.get(j).max(eta.get(j)),
                None => support[j] / h.get(j),
            };
            let nyquist = PI / grid.spacing(j);
            if nyquist < band {
                return Err(Error::GridTooCoarse {
                    nyquist,
                    required: band,
                });
            }
        }
    }
    // bin the sample
    let mut values = vec![0.0; grid.len()];
    let w = 1.0 / sample.n() as f64;
    for z in sample.z() {
        values[grid.nearest_node(z)] += w;
    }
    // separable FFT convolution with the deconvolution kernel ring
    let m = grid.nodes_per_axis();
    let dims = vec![m; d];
    for axis in 0..d {
        let key = (
            axis,
            h.get(axis).to_bits(),
            aux_eta.map_or(u64::MAX, |e| e.get(axis).to_bits()),
        );
        if !caches.rings.contains_key(&key) {
            let dx = grid.spacing(axis);
            let offsets: Vec<f64> = (0..2 * m)
                .map(|j| {
                    let o = if j < m { j as i64 } else { j as i64 - 2 * m as i64 };
                    o as f64 * dx
                })
                .collect();
            let profile = deconv_axis_profile(
                kernel,
                h.get(axis),
                aux_eta.map(|e| e.get(axis)),
                noise,
                axis,
                &offsets,
            )?;
            let ring = build_ring(m, |o| {
                let j = if o >= 0 { o as usize } else { (o + 2 * m as i64) as usize };
                profile[j]
            });
            caches.rings.insert(key, ring);
        }
        let ring = &caches.rings[&key];
        let fft = caches
            .ffts
            .entry(2 * m)
            .or_insert_with(|| AxisFft::new(2 * m));
        convolve_axis(&mut values, &dims, axis, ring, fft);
    }
    Ok(DeconvDensity {
        f: GridFunction::new(grid.clone(), values),
        kernel: kernel.id(),
        h: h.clone(),
        aux_eta: aux_eta.cloned(),
    })
}

/// Distortion `int min_j |x - c_j|^2 f^(x) dx` as a Riemann sum.
pub fn distortion(codebook: &Codebook, density: &DeconvDensity) -> f64 {
    let spec = density.f.spec();
    let vals = density.f.values();
    let centers = codebook.centers();
    let mut acc = 0.0;
    for_each_node(spec, |idx, x| {
        let mut best = f64::INFINITY;
        for c in centers {
            let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best {
                best = d2;
            }
        }
        acc += best * vals[idx];
    });
    acc * spec.cell_volume()
}

/// Gradient of the distortion: block `(j, u)` is
/// `-2 int_{V_j} (x^u - c_j^u) f^(x) dx` (centroid-major flattening).
pub fn gradient_distortion(codebook: &Codebook, density: &DeconvDensity) -> Result<Vec<f64>> {
    let d = codebook.dim();
    let k = codebook.k();
    // distinctness is a Codebook invariant; re-check cheaply for safety
    for i in 0..k {
        for j in (i + 1)..k {
            let dist: f64 = codebook.centers()[i]
                .iter()
                .zip(&codebook.centers()[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist.sqrt() <= 1e-9 {
                return Err(Error::DegenerateCodebook(1e-9));
            }
        }
    }
    let spec = density.f.spec();
    let vals = density.f.values();
    let centers = codebook.centers();
    let mut g = vec![0.0; d * k];
    for_each_node(spec, |idx, x| {
        let mut best = f64::INFINITY;
        let mut who = 0usize;
        for (j, c) in centers.iter().enumerate() {
            let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best {
                best = d2;
                who = j;
            }
        }
        let f = vals[idx];
        for u in 0..d {
            g[who * d + u] += (x[u] - centers[who][u]) * f;
        }
    });
    let cv = spec.cell_volume();
    for v in &mut g {
        *v *= -2.0 * cv;
    }
    Ok(g)
}

/// Result of fitting a codebook to a density.
#[derive(Debug, Clone)]
pub struct Fit {
    pub codebook: Codebook,
    pub distortion: f64,
    pub grad_norm: f64,
    pub restarts_used: usize,
}

/// Lloyd-type fixed point on the positive part of the density, from a
/// k-means++-style initialization over grid nodes; best of 5 restarts by
/// (signed) distortion.
pub fn fit_codebook(
    density: &DeconvDensity,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<Fit> {
    const RESTARTS: usize = 5;
    let spec = density.f.spec();
    let d = spec.dim();
    let fplus: Vec<f64> = density.f.values().iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = fplus.iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyCell {
            cell: 0,
            restarts: 0,
        });
    }
    // node coordinates, node-major
    let mut coords = vec![0.0; spec.len() * d];
    for_each_node(spec, |idx, x| {
        coords[idx * d..(idx + 1) * d].copy_from_slice(x);
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut failures = 0usize;
    let mut last_empty = 0usize;
    for _restart in 0..RESTARTS {
        let mut centers = kmeanspp_init(&fplus, &coords, d, k, &mut rng);
        let mut ok = true;
        for _it in 0..max_iter {
            let mut mass = vec![0.0f64; k];
            let mut mean = vec![0.0f64; k * d];
            for idx in 0..spec.len() {
                let w = fplus[idx];
                if w == 0.0 {
                    continue;
                }
                let x = &coords[idx * d..(idx + 1) * d];
                let j = nearest(&centers, x);
                mass[j] += w;
                for u in 0..d {
                    mean[j * d + u] += w * x[u];
                }
            }
            if let Some(j) = mass.iter().position(|&m| m <= 0.0) {
                ok = false;
                last_empty = j;
                break;
            }
            let mut movement = 0.0f64;
            for j in 0..k {
                let mut step = 0.0;
                for u in 0..d {
                    let nv = mean[j * d + u] / mass[j];
                    step += (nv - centers[j][u]) * (nv - centers[j][u]);
                    centers[j][u] = nv;
                }
                movement = movement.max(step.sqrt());
            }
            if movement < tol {
                break;
            }
        }
        if !ok {
            failures += 1;
            continue;
        }
        let cb = match Codebook::new(centers) {
            Ok(cb) => cb,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let dist = distortion(&cb, density);
        if best.as_ref().map_or(true, |(b, _)| dist < *b) {
            best = Some((dist, cb.centers().to_vec()));
        }
    }
    match best {
        Some((dist, centers)) => {
            let codebook = Codebook::new(centers)?;
            let grad_norm = norm2(&gradient_distortion(&codebook, density)?);
            Ok(Fit {
                codebook,
                distortion: dist,
                grad_norm,
                restarts_used: failures,
            })
        }
        None => Err(Error::EmptyCell {
            cell: last_empty,
            restarts: RESTARTS,
        }),
    }
}

fn nearest(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn kmeanspp_init(
    weights: &[f64],
    coords: &[f64],
    d: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let n = weights.len();
    let draw = |w: &[f64], rng: &mut ChaCha8Rng| -> usize {
        let total: f64 = w.iter().sum();
        let mut u = rng.gen_range(0.0..total.max(1e-300));
        for (i, &wi) in w.iter().enumerate() {
            u -= wi;
            if u <= 0.0 {
                return i;
            }
        }
        n - 1
    };
    let first = draw(weights, rng);
    let mut centers = vec![coords[first * d..(first + 1) * d].to_vec()];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(&coords[i * d..(i + 1) * d], &centers[0]))
        .collect();
    while centers.len() < k {
        let w: Vec<f64> = (0..n).map(|i| weights[i] * d2[i]).collect();
        let total: f64 = w.iter().sum();
        let pick = if total > 0.0 { draw(&w, rng) } else { draw(weights, rng) };
        let c = coords[pick * d..(pick + 1) * d].to_vec();
        for i in 0..n {
            let nd = sq_dist(&coords[i * d..(i + 1) * d], &c);
            if nd < d2[i] {
                d2[i] = nd;
            }
        }
        centers.push(c);
    }
    centers
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clustering majorant
/// `b1' sqrt(kd) (prod eta_i^{-beta_i} + prod (h_i v eta_i)^{-beta_i}) / sqrt(n)`.
pub fn majorant_kmeans(
    h: &Bandwidth,
    eta: &Bandwidth,
    n: usize,
    k: usize,
    d: usize,
    beta: &[f64],
    b1_prime: f64,
) -> f64 {
    assert!(b1_prime > 0.0);
    let sqrt_n = (n as f64).sqrt();
    let mut p_eta = 1.0;
    let mut p_join = 1.0;
    for j in 0..d {
        p_eta *= eta.get(j).powf(-beta[j]);
        p_join *= h.get(j).max(eta.get(j)).powf(-beta[j]);
    }
    b1_prime * ((k * d) as f64).sqrt() * (p_eta / sqrt_n + p_join / sqrt_n)
}

/// [`Majorant`] wrapper around [`majorant_kmeans`].
#[derive(Debug, Clone)]
pub struct KmeansMajorant {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub beta: Vec<f64>,
    pub b1_prime: f64,
    pub l: u32,
}

impl Majorant for KmeansMajorant {
    fn eval(&self, h: &Bandwidth, eta: &Bandwidth) -> f64 {
        majorant_kmeans(h, eta, self.n, self.k, self.d, &self.beta, self.b1_prime)
    }
    fn confidence(&self) -> u32 {
        self.l
    }
}

/// Precomputed densities, fitted codebooks and gradient tables for one
/// sample and net; selection for different majorant constants reuses it.
pub struct KmeansPipeline {
    net: BandwidthNet,
    k: usize,
    d: usize,
    n: usize,
    beta: Vec<f64>,
    kernel: KernelSpec,
    densities: HashMap<Vec<u64>, DeconvDensity>,
    fits: Vec<Fit>,
    candidates: CandidateSet,
    grad_table: HashMap<(Vec<u64>, Vec<u64>), Vec<f64>>,
}

fn plain_key(h: &Bandwidth) -> Vec<u64> {
    let mut k = vec![0u64];
    k.extend(h.key());
    k
}

fn aux_key(kernel: &KernelSpec, h: &Bandwidth, eta: &Bandwidth) -> Vec<u64> {
    match kernel.id() {
        // indicator Fourier transform: the convolved kernel collapses to the
        // componentwise maximum, so the auxiliary density equals a plain one
        KernelId::SincProduct => plain_key(&h.join(eta)),
        _ => {
            let mut k = vec![1u64];
            for j in 0..h.dim() {
                let (a, b) = if h.get(j) <= eta.get(j) {
                    (h.get(j), eta.get(j))
                } else {
                    (eta.get(j), h.get(j))
                };
                k.push(a.to_bits());
                k.push(b.to_bits());
            }
            k
        }
    }
}

fn theta_key(theta: &[f64]) -> Vec<u64> {
    theta.iter().map(|v| v.to_bits()).collect()
}

impl KmeansPipeline {
    pub fn new(
        sample: &NoisySample,
        kernel: &KernelSpec,
        noise: &NoiseModel,
        net: &BandwidthNet,
        k: usize,
        grid: &GridSpec,
        seed: u64,
    ) -> Result<Self> {
        let d = grid.dim();
        let mut caches = DensityCaches::default();
        let mut densities: HashMap<Vec<u64>, DeconvDensity> = HashMap::new();
        for eta in net.members() {
            let key = plain_key(eta);
            if !densities.contains_key(&key) {
                densities.insert(
                    key,
                    deconv_density_cached(sample, kernel, eta, noise, grid, None, &mut caches)?,
                );
            }
        }
        for h in net.members() {
            for eta in net.members() {
                let key = aux_key(kernel, h, eta);
                if !densities.contains_key(&key) {
                    let dens = match kernel.id() {
                        KernelId::SincProduct => deconv_density_cached(
                            sample,
                            kernel,
                            &h.join(eta),
                            noise,
                            grid,
                            None,
                            &mut caches,
                        )?,
                        _ => deconv_density_cached(
                            sample,
                            kernel,
                            h,
                            noise,
                            grid,
                            Some(eta),
                            &mut caches,
                        )?,
                    };
                    densities.insert(key, dens);
                }
            }
        }
        let mut fits = Vec::with_capacity(net.len());
        for (i, eta) in net.members().iter().enumerate() {
            let dens = &densities[&plain_key(eta)];
            fits.push(fit_codebook(dens, k, splitmix(seed, i as u64), 200, 1e-6)?);
        }
        let candidates = CandidateSet::new(
            fits.iter().map(|f| f.codebook.flatten()).collect(),
            vec![0.0; d * k],
            vec![1.0; d * k],
        )?;
        // gradient table over (density, candidate): assignments are shared
        // across densities, and the accumulation order matches
        // `gradient_distortion` exactly
        let mut coords = vec![0.0; grid.len() * d];
        for_each_node(grid, |idx, x| {
            coords[idx * d..(idx + 1) * d].copy_from_slice(x);
        });
        let cv = grid.cell_volume();
        let mut grad_table = HashMap::new();
        for theta in candidates.points() {
            let cb = Codebook::from_flat(theta, k, d)?;
            let centers = cb.centers();
            let assign: Vec<u8> = (0..grid.len())
                .map(|i| nearest(centers, &coords[i * d..(i + 1) * d]) as u8)
                .collect();
            let tkey = theta_key(theta);
            for (key, dens) in &densities {
                let vals = dens.grid_fn().values();
                let mut g = vec![0.0; k * d];
                for i in 0..grid.len() {
                    let j = assign[i] as usize;
                    let f = vals[i];
                    for u in 0..d {
                        g[j * d + u] += (coords[i * d + u] - centers[j][u]) * f;
                    }
                }
                for v in &mut g {
                    *v *= -2.0 * cv;
                }
                grad_table.insert((key.clone(), tkey.clone()), g);
            }
        }
        Ok(KmeansPipeline {
            net: net.clone(),
            k,
            d,
            n: sample.n(),
            beta: noise.na_beta().to_vec(),
            kernel: kernel.clone(),
            densities,
            fits,
            candidates,
            grad_table,
        })
    }

    pub fn fits(&self) -> &[Fit] {
        &self.fits
    }

    pub fn net(&self) -> &BandwidthNet {
        &self.net
    }

    pub fn density(&self, h: &Bandwidth) -> Option<&DeconvDensity> {
        self.densities.get(&plain_key(h))
    }

    fn grad_from(&self, key: &[u64], theta: &[f64]) -> Vec<f64> {
        if let Some(g) = self.grad_table.get(&(key.to_vec(), theta_key(theta))) {
            return g.clone();
        }
        let dens = &self.densities[key];
        let cb = Codebook::from_flat(theta, self.k, self.d).expect("valid theta");
        gradient_distortion(&cb, dens).expect("gradient on cached density")
    }

    /// Selection for one majorant constant; returns the report and the
    /// fitted codebook at the selected bandwidth.
    pub fn select(&self, b1_prime: f64, l: u32) -> Result<(SelectionReport, Codebook)> {
        let majorant = KmeansMajorant {
            n: self.n,
            k: self.k,
            d: self.d,
            beta: self.beta.clone(),
            b1_prime,
            l,
        };
        let mut report = select(
            self,
            &majorant,
            &self.net,
            &self.candidates,
            &SelectorConfig::default(),
        )?;
        report.kernel_note = Some(self.kernel.id().name().to_string());
        let idx = self
            .net
            .members()
            .iter()
            .position(|h| h.key() == report.selected.key())
            .expect("selected bandwidth is a net member");
        Ok((report, self.fits[idx].codebook.clone()))
    }

    /// Isotropic empirical-risk-comparison baseline over the isotropic
    /// members of the net; `constant` scales the variance threshold.
    pub fn erc_select(&self, constant: f64) -> Result<Codebook> {
        let members: Vec<(usize, &Bandwidth)> = self
            .net
            .members()
            .iter()
            .enumerate()
            .filter(|(_, h)| h.is_isotropic())
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyNet);
        }
        let sqrt_n = (self.n as f64).sqrt();
        let thr = |h: &Bandwidth| {
            let mut p = 1.0;
            for j in 0..self.d {
                p *= h.get(j).powf(-self.beta[j]);
            }
            constant * p / sqrt_n
        };
        let mut best: Option<(f64, usize)> = None;
        for &(i, h) in &members {
            let ch = &self.fits[i].codebook;
            let mut sup = 0.0f64;
            for &(j, eta) in &members {
                // compare against finer bandwidths only
                if eta.get(0) > h.get(0) {
                    continue;
                }
                let dens_eta = &self.densities[&plain_key(eta)];
                let diff = (distortion(ch, dens_eta)
                    - distortion(&self.fits[j].codebook, dens_eta))
                .abs();
                sup = sup.max(diff - constant * 0.0 - (thr(eta) + thr(h)));
            }
            let crit = sup.max(0.0) + 2.0 * thr(h);
            if best.map_or(true, |(b, _)| crit < b) {
                best = Some((crit, i));
            }
        }
        let (_, idx) = best.unwrap();
        Ok(self.fits[idx].codebook.clone())
    }
}

impl GradientField for KmeansPipeline {
    fn dim(&self) -> usize {
        self.d * self.k
    }

    fn grad(&self, h: &Bandwidth, theta: &[f64]) -> Vec<f64> {
        self.grad_from(&plain_key(h), theta)
    }

    fn grad_aux(&self, h: &Bandwidth, eta: &Bandwidth, theta: &[f64]) -> Vec<f64> {
        self.grad_from(&aux_key(&self.kernel, h, eta), theta)
    }
}

fn splitmix(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Selection rule for clustering: builds the gradient field from Voronoi
/// gradients of plain and auxiliary deconvolution densities, takes the
/// fitted codebooks across the net as candidates, and delegates to the
/// generic engine.
pub fn select_bandwidth_kmeans(
    sample: &NoisySample,
    kernel: &KernelSpec,
    noise: &NoiseModel,
    net: &BandwidthNet,
    k: usize,
    b1_prime: f64,
    grid: &GridSpec,
    seed: u64,
) -> Result<(SelectionReport, Codebook)> {
    KmeansPipeline::new(sample, kernel, noise, net, k, grid, seed)?.select(b1_prime, 1)
}

/// Empirical clustering error: fraction of points whose nearest-centroid
/// class disagrees with the latent label, minimized over label-to-centroid
/// matchings. Scores on the latent noise-free positions when present.
pub fn clustering_error(codebook: &Codebook, sample: &NoisySample) -> Result<f64> {
    let labels = sample.labels().ok_or(Error::MissingLabels)?;
    let k = codebook.k();
    if k > 8 {
        return Err(Error::KTooLargeForExactMatching(k));
    }
    let mut uniq: Vec<usize> = labels.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.len() > k {
        return Err(Error::InvalidInput(format!(
            "{} distinct labels but only k = {k} centroids",
            uniq.len()
        )));
    }
    let label_idx: Vec<usize> = labels
        .iter()
        .map(|l| uniq.binary_search(l).unwrap())
        .collect();
    let points = sample.latent_x().unwrap_or_else(|| sample.z());
    let assigned: Vec<usize> = points.iter().map(|p| codebook.assign(p)).collect();
    // all centroid -> label-slot assignments
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = usize::MAX;
    permute(&mut perm, 0, &mut |p: &[usize]| {
        let mismatches = assigned
            .iter()
            .zip(&label_idx)
            .filter(|&(&a, &l)| p[a] != l)
            .count();
        if mismatches < best {
            best = mismatches;
        }
    });
    Ok(best as f64 / labels.len() as f64)
}

fn permute(p: &mut Vec<usize>, i: usize, visit: &mut dyn FnMut(&[usize])) {
    if i == p.len() {
        visit(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, visit);
        p.swap(i, j);
    }
}

/// Distortion Hessian at a codebook (d = 2 only): `2 P(V_i) I` diagonal
/// blocks corrected by Voronoi-face integrals, off-diagonal blocks built
/// from face integrals of centered outer products. Faces are bisector
/// segments clipped to `[0,1]^2`, integrated by the midpoint rule with
/// bilinear density interpolation. Returns the `dk x dk` matrix (row-major)
/// and its smallest eigenvalue.
pub fn pollard_hessian(
    codebook: &Codebook,
    density: &DeconvDensity,
) -> Result<(Vec<f64>, f64)> {
    let d = codebook.dim();
    if d != 2 || density.f.spec().dim() != 2 {
        return Err(Error::UnsupportedDimension(d));
    }
    let k = codebook.k();
    let centers = codebook.centers();
    let spec = density.f.spec();
    let vals = density.f.values();
    let n = d * k;
    let mut hess = vec![0.0; n * n];

    // cell masses
    let mut mass = vec![0.0f64; k];
    for_each_node(spec, |idx, x| {
        mass[nearest(centers, x)] += vals[idx];
    });
    for m in &mut mass {
        *m *= spec.cell_volume();
    }
    for i in 0..k {
        for u in 0..d {
            hess[(i * d + u) * n + (i * d + u)] += 2.0 * mass[i];
        }
    }

    const NQ: usize = 400;
    for i in 0..k {
        for j in (i + 1)..k {
            let ci = &centers[i];
            let cj = &centers[j];
            let delta = (sq_dist(ci, cj)).sqrt();
            // bisector line: point p(t) = mid + t * tangent
            let mid = [0.5 * (ci[0] + cj[0]), 0.5 * (ci[1] + cj[1])];
            let dirv = [(cj[0] - ci[0]) / delta, (cj[1] - ci[1]) / delta];
            let tang = [-dirv[1], dirv[0]];
            // clip to the unit box and to dominance over the other centroids
            let mut t_lo = -2.0f64;
            let mut t_hi = 2.0f64;
            for ax in 0..2 {
                // 0 <= mid[ax] + t*tang[ax] <= 1
                if tang[ax].abs() < 1e-14 {
                    if mid[ax] < 0.0 || mid[ax] > 1.0 {
                        t_lo = 1.0;
                        t_hi = 0.0;
                    }
                } else {
                    let a = (0.0 - mid[ax]) / tang[ax];
                    let b = (1.0 - mid[ax]) / tang[ax];
                    t_lo = t_lo.max(a.min(b));
                    t_hi = t_hi.min(a.max(b));
                }
            }
            for (w, cw) in centers.iter().enumerate() {
                if w == i || w == j {
                    continue;
                }
                // |p - ci|^2 <= |p - cw|^2  <=>  linear in t
                let pc = [mid[0] - ci[0], mid[1] - ci[1]];
                let pw = [mid[0] - cw[0], mid[1] - cw[1]];
                let a0 = pc[0] * pc[0] + pc[1] * pc[1] - pw[0] * pw[0] - pw[1] * pw[1];
                let a1 = 2.0 * (pc[0] * tang[0] + pc[1] * tang[1]
                    - pw[0] * tang[0]
                    - pw[1] * tang[1]);
                // a0 + a1 t <= 0
                if a1.abs() < 1e-14 {
                    if a0 > 0.0 {
                        t_lo = 1.0;
                        t_hi = 0.0;
                    }
                } else if a1 > 0.0 {
                    t_hi = t_hi.min(-a0 / a1);
                } else {
                    t_lo = t_lo.max(-a0 / a1);
                }
            }
            if t_lo >= t_hi {
                continue;
            }
            let dt = (t_hi - t_lo) / NQ as f64;
            let mut sii = [[0.0f64; 2]; 2];
            let mut sjj = [[0.0f64; 2]; 2];
            let mut sij = [[0.0f64; 2]; 2];
            for q in 0..NQ {
                let t = t_lo + (q as f64 + 0.5) * dt;
                let p = [mid[0] + t * tang[0], mid[1] + t * tang[1]];
                let f = interp2(&density.f, &p);
                let vi = [p[0] - ci[0], p[1] - ci[1]];
                let vj = [p[0] - cj[0], p[1] - cj[1]];
                for a in 0..2 {
                    for b in 0..2 {
                        sii[a][b] += f * vi[a] * vi[b] * dt;
                        sjj[a][b] += f * vj[a] * vj[b] * dt;
                        sij[a][b] += f * vi[a] * vj[b] * dt;
                    }
                }
            }
            for a in 0..2 {
                for b in 0..2 {
                    hess[(i * d + a) * n + (i * d + b)] -= 2.0 / delta * sii[a][b];
                    hess[(j * d + a) * n + (j * d + b)] -= 2.0 / delta * sjj[a][b];
                    hess[(i * d + a) * n + (j * d + b)] += 2.0 / delta * sij[a][b];
                    hess[(j * d + a) * n + (i * d + b)] += 2.0 / delta * sij[b][a];
                }
            }
        }
    }
    let ev = crate::numerics::symmetric_eigenvalues(&hess, n);
    Ok((hess, ev[0]))
}

/// Standard Lloyd k-means on the raw observations with k-means++
/// initialization, best of 5 restarts.
pub fn lloyd_kmeans_baseline(sample: &NoisySample, k: usize, seed: u64) -> Codebook {
    let pts = sample.z();
    let n = pts.len();
    let d = pts[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _restart in 0..5 {
        let mut centers = kmeanspp_points(pts, k, &mut rng);
        let mut assign = vec![0usize; n];
        for _it in 0..100 {
            let mut changed = false;
            for (i, p) in pts.iter().enumerate() {
                let j = nearest(&centers, p);
                if j != assign[i] {
                    assign[i] = j;
                    changed = true;
                }
            }
            let mut mass = vec![0.0f64; k];
            let mut mean = vec![0.0f64; k * d];
            for (i, p) in pts.iter().enumerate() {
                mass[assign[i]] += 1.0;
                for u in 0..d {
                    mean[assign[i] * d + u] += p[u];
                }
            }
            for j in 0..k {
                if mass[j] > 0.0 {
                    for u in 0..d {
                        centers[j][u] = mean[j * d + u] / mass[j];
                    }
                } else {
                    // re-seed an empty cluster at the point farthest from
                    // its assigned center
                    let far = (0..n)
                        .max_by(|&a, &b| {
                            sq_dist(&pts[a], &centers[assign[a]])
                                .partial_cmp(&sq_dist(&pts[b], &centers[assign[b]]))
                                .unwrap()
                        })
                        .unwrap();
                    centers[j] = pts[far].clone();
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let wss: f64 = pts
            .iter()
            .map(|p| sq_dist(p, &centers[nearest(&centers, p)]))
            .sum();
        if best.as_ref().map_or(true, |(b, _)| wss < *b) {
            best = Some((wss, centers));
        }
    }
    let (_, centers) = best.unwrap();
    Codebook::new(centers).expect("k-means centers are distinct")
}

fn kmeanspp_points(pts: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = pts.len();
    let first = rng.gen_range(0..n);
    let mut centers = vec![pts[first].clone()];
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centers.push(pts[pick].clone());
        for (i, p) in pts.iter().enumerate() {
            let nd = sq_dist(p, centers.last().unwrap());
            if nd < d2[i] {
                d2[i] = nd;
            }
        }
    }
    centers
}

/// Standalone empirical-risk-comparison baseline on an isotropic net.
pub fn erc_baseline(
    sample: &NoisySample,
    kernel: &KernelSpec,
    noise: &NoiseModel,
    isotropic_net: &BandwidthNet,
    k: usize,
    constant: f64,
    grid: &GridSpec,
    seed: u64,
) -> Result<Codebook> {
    if isotropic_net.members().iter().any(|h| !h.is_isotropic()) {
        return Err(Error::InvalidInput(
            "the empirical-risk-comparison baseline needs an isotropic net".into(),
        ));
    }
    KmeansPipeline::new(sample, kernel, noise, isotropic_net, k, grid, seed)?
        .erc_select(constant)
}
