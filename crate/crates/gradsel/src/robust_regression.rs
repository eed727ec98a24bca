//! Robust nonparametric regression: Huber local-constant M-estimation with
//! the pointwise selection rule and the global `L_q` rule.
//!
//! Local scores are monotone in the fitted constant for nonnegative kernels,
//! so estimates are bisection roots. The pointwise comparison runs the
//! generic selection engine with the 201-point t-grid as candidate set; the
//! global rule plugs an `L_q`-over-x comparison into the same engine.

use crate::error::{Error, Result};
use crate::grids::{for_each_node, BandwidthNet, GridFunction, GridSpec};
use crate::kernels::{convolved_kernel, dilate, kernel_norm, Bandwidth, KernelSpec};
use crate::numerics::{median, simpson_adaptive};
use crate::selector::{
    select, select_with_comparison, CandidateSet, Majorant, SelectionReport, SelectorConfig,
};
use std::collections::HashMap;

/// Number of points used to discretize suprema over the fitted constant.
pub const T_GRID_POINTS: usize = 201;

/// Huber loss `rho_gamma`: quadratic inside `[-gamma, gamma]`, linear outside.
#[derive(Debug, Clone, Copy)]
pub struct HuberLoss {
    pub gamma: f64,
}

impl HuberLoss {
    pub fn new(gamma: f64) -> Self {
        assert!(gamma > 0.0, "robustness scale must be positive");
        HuberLoss { gamma }
    }

    pub fn eval(&self, z: f64) -> f64 {
        huber(z, self.gamma)
    }

    pub fn prime(&self, z: f64) -> f64 {
        huber_prime(z, self.gamma)
    }

    pub fn second(&self, z: f64) -> f64 {
        huber_second(z, self.gamma)
    }
}

/// `rho_gamma(z) = z^2/2` if `|z| <= gamma`, else `gamma(|z| - gamma/2)`.
pub fn huber(z: f64, gamma: f64) -> f64 {
    if z.abs() <= gamma {
        0.5 * z * z
    } else {
        gamma * (z.abs() - 0.5 * gamma)
    }
}

/// `rho'_gamma(z) = clamp(z, -gamma, gamma)`.
pub fn huber_prime(z: f64, gamma: f64) -> f64 {
    z.clamp(-gamma, gamma)
}

/// `rho''_gamma(z) = 1{|z| <= gamma}` (a.e.).
pub fn huber_second(z: f64, gamma: f64) -> f64 {
    if z.abs() <= gamma {
        1.0
    } else {
        0.0
    }
}

/// Design points in `[0,1]^d` with responses.
#[derive(Debug, Clone)]
pub struct RegressionSample {
    w: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl RegressionSample {
    pub fn new(w: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.len() != y.len() {
            return Err(Error::InvalidInput(
                "regression sample needs matching, nonempty W and Y".into(),
            ));
        }
        let d = w[0].len();
        for p in &w {
            if p.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: p.len() });
            }
            if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidInput(format!(
                    "design point {p:?} outside [0,1]^d"
                )));
            }
        }
        Ok(RegressionSample { w, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.w[0].len()
    }

    pub fn w(&self) -> &[Vec<f64>] {
        &self.w
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }
}

/// `B` default: `max |Y_i|` rounded up (at least 1).
pub fn default_bound(y: &[f64]) -> f64 {
    y.iter().fold(0.0f64, |m, v| m.max(v.abs())).ceil().max(1.0)
}

/// `gamma` default: `1.345 * MAD / 0.6745` of the residuals from a median
/// fit (the classical 95%-efficiency tuning).
pub fn default_gamma(y: &[f64]) -> f64 {
    let med = median(y);
    let dev: Vec<f64> = y.iter().map(|v| (v - med).abs()).collect();
    (1.345 * median(&dev) / 0.6745).max(1e-6)
}

fn kernel_weights(
    x0: &[f64],
    h: &Bandwidth,
    aux_eta: Option<&Bandwidth>,
    sample: &RegressionSample,
    kernel: &KernelSpec,
) -> Vec<f64> {
    let d = sample.dim();
    let mut diff = vec![0.0; d];
    match aux_eta {
        None => sample
            .w()
            .iter()
            .map(|wi| {
                for j in 0..d {
                    diff[j] = wi[j] - x0[j];
                }
                dilate(kernel, h, &diff)
            })
            .collect(),
        Some(eta) => {
            let conv = convolved_kernel(kernel, h, eta);
            sample
                .w()
                .iter()
                .map(|wi| {
                    for j in 0..d {
                        diff[j] = wi[j] - x0[j];
                    }
                    conv.eval(&diff)
                })
                .collect()
        }
    }
}

fn score(weights: &[f64], y: &[f64], t: f64, gamma: f64, n: usize) -> f64 {
    let mut acc = 0.0;
    for (w, yi) in weights.iter().zip(y) {
        if *w != 0.0 {
            acc += huber_prime(yi - t, gamma) * w;
        }
    }
    -acc / n as f64
}

/// Local gradient empirical risk
/// `G^loc_h(t) = -(1/n) sum_i rho'_gamma(Y_i - t) K_h(W_i - x0)`
/// (auxiliary variant with the convolved kernel when `aux_eta` is given).
pub fn g_emp_loc(
    t: f64,
    x0: &[f64],
    h: &Bandwidth,
    sample: &RegressionSample,
    kernel: &KernelSpec,
    gamma: f64,
    aux_eta: Option<&Bandwidth>,
) -> f64 {
    let w = kernel_weights(x0, h, aux_eta, sample, kernel);
    score(&w, sample.y(), t, gamma, sample.n())
}

/// Local constant estimate: the root of the monotone score on `[-B, B]`
/// (boundary value when the score does not change sign).
pub fn local_estimate(
    x0: &[f64],
    h: &Bandwidth,
    sample: &RegressionSample,
    kernel: &KernelSpec,
    gamma: f64,
    b: f64,
) -> Result<f64> {
    if !kernel.is_nonnegative() {
        return Err(Error::KernelNotNonnegative(kernel.id().name().into()));
    }
    let w = kernel_weights(x0, h, None, sample, kernel);
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyWindow(x0.to_vec()));
    }
    Ok(bisect_root(&w, sample.y(), gamma, sample.n(), b))
}

fn bisect_root(weights: &[f64], y: &[f64], gamma: f64, n: usize, b: f64) -> f64 {
    let mut lo = -b;
    let mut hi = b;
    let g_lo = score(weights, y, lo, gamma, n);
    let g_hi = score(weights, y, hi, gamma, n);
    // score is nondecreasing in t: positive at -B means the risk increases
    // over the whole interval
    if g_lo >= 0.0 {
        return lo;
    }
    if g_hi <= 0.0 {
        return hi;
    }
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if score(weights, y, mid, gamma, n) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Pointwise majorant
/// `C0 |K|_2 sqrt(vhat) ( sqrt(l log n / (n Pi(h v eta))) + sqrt(l log n / (n Pi eta)) )`.
pub fn majorant_loc(
    h: &Bandwidth,
    eta: &Bandwidth,
    n: usize,
    l: u32,
    kernel: &KernelSpec,
    vhat: f64,
    c0: f64,
) -> f64 {
    assert!(vhat >= 0.0);
    let norm2 = kernel_norm(kernel, 2.0).expect("L2 norm exists for all menu kernels");
    let lln = l as f64 * (n as f64).ln();
    let nn = n as f64;
    let p_join = h.join(eta).product();
    let p_eta = eta.product();
    c0 * norm2 * vhat.sqrt() * ((lln / (nn * p_join)).sqrt() + (lln / (nn * p_eta)).sqrt())
}

struct LocMajorant {
    n: usize,
    l: u32,
    norm2: f64,
    vhat: f64,
    c0: f64,
}

impl Majorant for LocMajorant {
    fn eval(&self, h: &Bandwidth, eta: &Bandwidth) -> f64 {
        let lln = self.l as f64 * (self.n as f64).ln();
        let nn = self.n as f64;
        self.c0
            * self.norm2
            * self.vhat.sqrt()
            * ((lln / (nn * h.join(eta).product())).sqrt() + (lln / (nn * eta.product())).sqrt())
    }
    fn confidence(&self) -> u32 {
        self.l
    }
}

/// Result of a pointwise fit at `x0`.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub x0: Vec<f64>,
    pub selected: Bandwidth,
    pub estimate: f64,
    pub bound: f64,
    pub vhat: f64,
    pub report: SelectionReport,
}

struct LocalField {
    n: usize,
    y: Vec<f64>,
    gamma: f64,
    plain: HashMap<Vec<u64>, Vec<f64>>,
    aux: HashMap<Vec<u64>, Vec<f64>>,
}

fn pair_key(h: &Bandwidth, eta: &Bandwidth) -> Vec<u64> {
    let mut k = Vec::with_capacity(2 * h.dim());
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

impl crate::selector::GradientField for LocalField {
    fn dim(&self) -> usize {
        1
    }
    fn grad(&self, h: &Bandwidth, theta: &[f64]) -> Vec<f64> {
        let w = &self.plain[&h.key()];
        vec![score(w, &self.y, theta[0], self.gamma, self.n)]
    }
    fn grad_aux(&self, h: &Bandwidth, eta: &Bandwidth, theta: &[f64]) -> Vec<f64> {
        let w = &self.aux[&pair_key(h, eta)];
        vec![score(w, &self.y, theta[0], self.gamma, self.n)]
    }
}

fn t_grid(b: f64) -> Vec<f64> {
    (0..T_GRID_POINTS)
        .map(|i| -b + 2.0 * b * i as f64 / (T_GRID_POINTS - 1) as f64)
        .collect()
}

/// Pointwise selection rule at `x0`: compares local scores across the net
/// with the sup over t discretized on the 201-point grid, with the variance
/// proxy `vhat` estimated from pilot residuals at the net's median bandwidth.
pub fn select_pointwise(
    x0: &[f64],
    sample: &RegressionSample,
    net: &BandwidthNet,
    kernel: &KernelSpec,
    gamma: f64,
    b: f64,
    c0: f64,
    l: u32,
) -> Result<LocalFit> {
    if !kernel.is_nonnegative() {
        return Err(Error::KernelNotNonnegative(kernel.id().name().into()));
    }
    let n = sample.n();
    // pilot residual plug-in for E[rho'(xi)^2]
    let pilot_h = &net.members()[net.len() / 2];
    let mut vhat = 0.0;
    let mut used = 0usize;
    for i in 0..n {
        let wi = sample.w()[i].clone();
        match local_estimate(&wi, pilot_h, sample, kernel, gamma, b) {
            Ok(fit) => {
                let r = huber_prime(sample.y()[i] - fit, gamma);
                vhat += r * r;
                used += 1;
            }
            Err(Error::EmptyWindow(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let vhat = if used > 0 { vhat / used as f64 } else { gamma * gamma };

    let mut plain = HashMap::new();
    for h in net.members() {
        plain.insert(h.key(), kernel_weights(x0, h, None, sample, kernel));
    }
    let mut aux = HashMap::new();
    for h in net.members() {
        for eta in net.members() {
            let key = pair_key(h, eta);
            if !aux.contains_key(&key) {
                aux.insert(key, kernel_weights(x0, h, Some(eta), sample, kernel));
            }
        }
    }
    let field = LocalField {
        n,
        y: sample.y().to_vec(),
        gamma,
        plain,
        aux,
    };
    let candidates = CandidateSet::new(
        t_grid(b).into_iter().map(|t| vec![t]).collect(),
        vec![-b],
        vec![b],
    )?;
    let majorant = LocMajorant {
        n,
        l,
        norm2: kernel_norm(kernel, 2.0)?,
        vhat,
        c0,
    };
    let report = select(&field, &majorant, net, &candidates, &SelectorConfig::default())?;
    let estimate = local_estimate(x0, &report.selected, sample, kernel, gamma, b)?;
    Ok(LocalFit {
        x0: x0.to_vec(),
        selected: report.selected.clone(),
        estimate,
        bound: b,
        vhat,
        report,
    })
}

/// Global variance term `Gamma_{l,q}(h)`; two branches in `q`.
pub fn gamma_lq(
    h: &Bandwidth,
    q: f64,
    l: u32,
    n: usize,
    kernel: &KernelSpec,
    gamma: f64,
    c_q: f64,
) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(Error::InvalidQ(q));
    }
    let n_pi = n as f64 * h.product();
    let base = c_q * gamma * (1.0 + l as f64).sqrt();
    let v = if q < 2.0 {
        4.0 * kernel_norm(kernel, q)? * n_pi.powf(-(q - 1.0) / q)
    } else {
        let k2 = kernel_norm(kernel, 2.0)?;
        let kq = kernel_norm(kernel, q)?;
        30.0 * q / q.ln() * k2.max(kq) * n_pi.powf(-0.5)
    };
    Ok(base * v)
}

struct GlobalMajorant<'a> {
    q: f64,
    l: u32,
    n: usize,
    kernel: &'a KernelSpec,
    gamma: f64,
    c_q: f64,
}

impl Majorant for GlobalMajorant<'_> {
    fn eval(&self, h: &Bandwidth, eta: &Bandwidth) -> f64 {
        let a = gamma_lq(&h.join(eta), self.q, self.l, self.n, self.kernel, self.gamma, self.c_q)
            .expect("validated q");
        let b = gamma_lq(eta, self.q, self.l, self.n, self.kernel, self.gamma, self.c_q)
            .expect("validated q");
        a + b
    }
    fn confidence(&self) -> u32 {
        self.l
    }
}

/// Result of the global rule: selected bandwidth and the fitted function on
/// the evaluation grid.
#[derive(Debug, Clone)]
pub struct GlobalFit {
    pub selected: Bandwidth,
    pub fitted: GridFunction,
    pub report: SelectionReport,
}

/// Global `L_q` selection rule. `x_grid` must lie strictly inside `[0,1]^d`
/// (margin at least the largest net bandwidth); `L_q` norms over x are
/// Riemann sums on it, the sup over t runs on the 201-point grid.
pub fn select_global(
    sample: &RegressionSample,
    net: &BandwidthNet,
    kernel: &KernelSpec,
    gamma: f64,
    b: f64,
    q: f64,
    l: u32,
    x_grid: &GridSpec,
    c_q: f64,
) -> Result<GlobalFit> {
    if !kernel.is_nonnegative() {
        return Err(Error::KernelNotNonnegative(kernel.id().name().into()));
    }
    if !(q >= 1.0) {
        return Err(Error::InvalidQ(q));
    }
    for j in 0..x_grid.dim() {
        if x_grid.lo()[j] <= 0.0 || x_grid.hi()[j] >= 1.0 {
            return Err(Error::InvalidInput(
                "evaluation grid must lie strictly inside [0,1]^d".into(),
            ));
        }
    }
    let n = sample.n();
    let nx = x_grid.len();
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(nx);
    for_each_node(x_grid, |_, x| xs.push(x.to_vec()));

    // weight tables: plain per net member, auxiliary per unordered pair
    let mut plain: HashMap<Vec<u64>, Vec<Vec<f64>>> = HashMap::new();
    for h in net.members() {
        let ws: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| kernel_weights(x, h, None, sample, kernel))
            .collect();
        plain.insert(h.key(), ws);
    }
    let mut aux: HashMap<Vec<u64>, Vec<Vec<f64>>> = HashMap::new();
    for h in net.members() {
        for eta in net.members() {
            let key = pair_key(h, eta);
            if !aux.contains_key(&key) {
                let ws: Vec<Vec<f64>> = xs
                    .iter()
                    .map(|x| kernel_weights(x, h, Some(eta), sample, kernel))
                    .collect();
                aux.insert(key, ws);
            }
        }
    }
    let ts = t_grid(b);
    let cell_vol = x_grid.cell_volume();
    let y = sample.y();
    let comparison = |h: &Bandwidth, eta: &Bandwidth| -> f64 {
        let wa = &aux[&pair_key(h, eta)];
        let wp = &plain[&eta.key()];
        let mut sup = 0.0f64;
        for &t in &ts {
            let mut acc = 0.0;
            for ix in 0..nx {
                let diff = score(&wa[ix], y, t, gamma, n) - score(&wp[ix], y, t, gamma, n);
                acc += diff.abs().powf(q) * cell_vol;
            }
            sup = sup.max(acc.powf(1.0 / q));
        }
        sup
    };
    let majorant = GlobalMajorant {
        q,
        l,
        n,
        kernel,
        gamma,
        c_q,
    };
    let report = select_with_comparison(
        &comparison,
        &majorant,
        net,
        &SelectorConfig::default(),
        T_GRID_POINTS,
    )?;
    let mut fitted = vec![0.0; nx];
    for (ix, x) in xs.iter().enumerate() {
        fitted[ix] = local_estimate(x, &report.selected, sample, kernel, gamma, b)?;
    }
    Ok(GlobalFit {
        selected: report.selected.clone(),
        fitted: GridFunction::new(x_grid.clone(), fitted),
        report,
    })
}

/// One bandwidth's row in the margin diagnostic.
#[derive(Debug, Clone)]
pub struct MarginRow {
    pub h: Bandwidth,
    pub estimate: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Margin diagnostic comparing the pointwise error against the population
/// gradient gap.
#[derive(Debug, Clone)]
pub struct MarginReport {
    /// `E rho''_gamma(xi) = P(|xi| <= gamma)`.
    pub e_rho_second: f64,
    pub precondition_ok: bool,
    pub rows: Vec<MarginRow>,
    pub all_hold: bool,
}

/// Verifies, for every bandwidth in the net, that
/// `|theta^_h(x0) - f*(x0)| <= 2 / E rho''(xi) * |G^loc(theta^_h) - G^loc(f*(x0))|`,
/// with `G^loc` computed by numerical integration against the known noise
/// density. The stated precondition is
/// `sup_h |theta^_h - f*(x0)| <= E rho''(xi) / 4`.
#[allow(clippy::too_many_arguments)]
pub fn check_local_margin(
    x0: &[f64],
    sample: &RegressionSample,
    net: &BandwidthNet,
    kernel: &KernelSpec,
    gamma: f64,
    b: f64,
    f_star_x0: f64,
    noise_pdf: &dyn Fn(f64) -> f64,
    tail_halfwidth: f64,
) -> Result<MarginReport> {
    let e_rho_second = simpson_adaptive(&|s| noise_pdf(s), -gamma, gamma, 256, 1e-10);
    // population local score G^loc(t) = -E rho'(xi + f*(x0) - t)
    let g_loc = |t: f64| -> f64 {
        -simpson_adaptive(
            &|s: f64| huber_prime(s + f_star_x0 - t, gamma) * noise_pdf(s),
            -tail_halfwidth,
            tail_halfwidth,
            1 << 12,
            1e-10,
        )
    };
    let g_star = g_loc(f_star_x0);
    let mut rows = Vec::with_capacity(net.len());
    let mut sup_err = 0.0f64;
    for h in net.members() {
        let est = local_estimate(x0, h, sample, kernel, gamma, b)?;
        let lhs = (est - f_star_x0).abs();
        let rhs = 2.0 / e_rho_second * (g_loc(est) - g_star).abs();
        sup_err = sup_err.max(lhs);
        rows.push(MarginRow {
            h: h.clone(),
            estimate: est,
            lhs,
            rhs,
            holds: lhs <= rhs + 1e-9,
        });
    }
    let precondition_ok = sup_err <= e_rho_second / 4.0;
    let all_hold = rows.iter().all(|r| r.holds);
    Ok(MarginReport {
        e_rho_second,
        precondition_ok,
        rows,
        all_hold,
    })
}
