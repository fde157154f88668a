//! The steady-state family `μ^{m,σ} ∝ exp(-2 W_m / σ²)`, its self-consistency
//! map `χ_σ(m) = M(μ^{m,σ}) - m`, the positive zero `m(σ)`, the turning point
//! `t_σ`, the critical noise `σ_c(α)` and a spectral-gap estimate for the
//! frozen generator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{GridMeasure, GridSpec, InitialMeasureSpec, MeasureError};
use crate::poly::Poly;
use crate::potential::{EffectiveParams, ValidatedPotential};
use crate::quadrature::{GaussLegendre, QuadratureSpec};

/// Gibbs weights below this level are treated as zero when sizing the window.
const TAIL_CUTOFF: f64 = 1e-16;
const MAX_PANELS: usize = 1 << 16;
/// `χ_σ` must exceed this on the scan grid for a positive zero to be reported.
pub const CHI_POSITIVE_TOL: f64 = 1e-11;
/// `χ_σ'(0)` above which a positive zero is certified even when it sits
/// below the first scan node.
const SLOPE_POSITIVE_TOL: f64 = 1e-9;
const ROOT_BISECT_WIDTH: f64 = 1e-6;
const ROOT_NEWTON_TOL: f64 = 1e-10;
const SIGMA_C_WIDTH: f64 = 1e-6;
const SCAN_ENLARGEMENTS: usize = 3;

#[derive(Debug, Error)]
pub enum SteadyStateError {
    #[error("quadrature did not converge within {panels} panels (last change {change:e})")]
    QuadratureNotConverged { panels: usize, change: f64 },
    #[error("Gibbs weight vanishes on the integration window")]
    DegenerateWeight,
    #[error("chi is still positive at m = {m_max} after enlarging the scan window")]
    ScanWindowTooSmall { m_max: f64 },
    #[error("chi has no interior maximum on (0, {m_max}]")]
    NoInteriorMax { m_max: f64 },
    #[error("sigma_c bracket not found: predicate is {value} at both {lo} and {hi}")]
    BracketNotFound { lo: f64, hi: f64, value: bool },
    #[error("grid does not cover the steady density (edge weight {edge_weight:e})")]
    GridTooNarrow { edge_weight: f64 },
    #[error("grid too coarse: normalization changes by {change:e} under refinement")]
    GridTooCoarse { change: f64 },
    #[error("eigenvalue solve failed: {0}")]
    EigenSolveFailed(String),
    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

type Result<T> = std::result::Result<T, SteadyStateError>;

/// Quadrature controls plus the resolution of the `m` scan used for root and
/// maximum bracketing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateSpec {
    pub quadrature: QuadratureSpec,
    /// Number of intervals of the uniform scan of `[0, m_max]`.
    pub scan_points: usize,
}

impl Default for SteadyStateSpec {
    fn default() -> Self {
        SteadyStateSpec {
            quadrature: QuadratureSpec::default(),
            scan_points: 512,
        }
    }
}

/// Location of the minimum of `W_m` and the symmetric window `[-L, L]` outside
/// which the Gibbs weight is negligible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsWindow {
    pub w_min: f64,
    pub argmin: f64,
    pub half_width: f64,
}

pub fn gibbs_window(
    vp: &ValidatedPotential,
    params: &EffectiveParams,
    spec: &QuadratureSpec,
) -> GibbsWindow {
    let w = vp.effective_poly(params);
    let (argmin, w_min) = w
        .derivative()
        .real_roots(1e-10)
        .into_iter()
        .map(|x| (x, w.eval(x)))
        .fold((0.0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
    // exp(-2 (W - w_min) / σ²) < TAIL_CUTOFF beyond the outermost level-set root
    let level = 0.5 * params.sigma * params.sigma * (-TAIL_CUTOFF.ln());
    let shifted = w.add(&Poly::new(vec![-(w_min + level)]));
    let reach = shifted
        .real_roots(1e-9)
        .into_iter()
        .map(f64::abs)
        .fold(argmin.abs(), f64::max);
    GibbsWindow {
        w_min,
        argmin,
        half_width: reach * spec.truncation_factor,
    }
}

/// Normalized Gibbs moments `E[x^k]`, `k < K`, of `μ^{m,σ}`.
fn gibbs_moments<const K: usize>(
    vp: &ValidatedPotential,
    params: &EffectiveParams,
    spec: &QuadratureSpec,
) -> Result<[f64; K]> {
    if !(params.sigma > 0.0) {
        return Err(SteadyStateError::InvalidSigma(params.sigma));
    }
    let win = gibbs_window(vp, params, spec);
    let gl = GaussLegendre::new(spec.panel_order.max(4));
    let beta = 2.0 / (params.sigma * params.sigma);
    let (lo, hi) = (-win.half_width, win.half_width);

    let integrate = |panels: usize| -> ([f64; K], [f64; K]) {
        let mut signed = [0.0; K];
        let mut absolute = [0.0; K];
        let h = (hi - lo) / panels as f64;
        let half = 0.5 * h;
        for p in 0..panels {
            let c = lo + (p as f64 + 0.5) * h;
            let mut s = [0.0; K];
            let mut a = [0.0; K];
            for (node, wt) in gl.nodes.iter().zip(&gl.weights) {
                let x = c + half * node;
                let g = wt * (-beta * (vp.effective_potential(params, x) - win.w_min)).exp();
                let mut xp = 1.0;
                for k in 0..K {
                    s[k] += xp * g;
                    a[k] += xp.abs() * g;
                    xp *= x;
                }
            }
            for k in 0..K {
                signed[k] += s[k] * half;
                absolute[k] += a[k] * half;
            }
        }
        (signed, absolute)
    };

    let mut panels = 4;
    let (mut prev, _) = integrate(panels);
    loop {
        panels *= 2;
        let (cur, abs) = integrate(panels);
        let change = (0..K)
            .map(|k| (cur[k] - prev[k]).abs() / abs[k].max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        if change <= spec.rel_tol {
            let z = cur[0];
            if !(z > 0.0 && z.is_finite()) {
                return Err(SteadyStateError::DegenerateWeight);
            }
            let mut out = [0.0; K];
            for k in 0..K {
                out[k] = cur[k] / z;
            }
            return Ok(out);
        }
        if panels >= MAX_PANELS {
            return Err(SteadyStateError::QuadratureNotConverged { panels, change });
        }
        prev = cur;
    }
}

/// `∫ x^p e^{-2W_m/σ²} / ∫ e^{-2W_m/σ²}` for `p ≤ 8`.
pub fn weighted_moment(
    vp: &ValidatedPotential,
    params: &EffectiveParams,
    power: u32,
    spec: &QuadratureSpec,
) -> Result<f64> {
    assert!(power <= 8, "weighted moments are supported up to order 8");
    let m = gibbs_moments::<9>(vp, params, spec)?;
    Ok(m[power as usize])
}

/// `χ_σ(m) = M(μ^{m,σ}) - m`.
pub fn chi(vp: &ValidatedPotential, alpha: f64, sigma: f64, m: f64, spec: &QuadratureSpec) -> Result<f64> {
    let mom = gibbs_moments::<2>(vp, &EffectiveParams { alpha, sigma, m }, spec)?;
    Ok(mom[1] - m)
}

/// `(χ_σ(m), χ_σ'(m))`, using `d/dm M(μ^{m,σ}) = (2α/σ²) Var(μ^{m,σ})`.
pub fn chi_with_slope(
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    m: f64,
    spec: &QuadratureSpec,
) -> Result<(f64, f64)> {
    let mom = gibbs_moments::<3>(vp, &EffectiveParams { alpha, sigma, m }, spec)?;
    let var = mom[2] - mom[1] * mom[1];
    Ok((mom[1] - m, 2.0 * alpha / (sigma * sigma) * var - 1.0))
}

/// Upper end of the `m` scan before any enlargement.
pub fn initial_m_max(vp: &ValidatedPotential, alpha: f64, sigma: f64) -> f64 {
    vp.a() + 5.0 * sigma + alpha.abs().sqrt()
}

/// `χ_σ` tabulated on `m_k = k m_max / n`, `k = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiScan {
    pub m: Vec<f64>,
    pub chi: Vec<f64>,
}

impl ChiScan {
    pub fn m_max(&self) -> f64 {
        *self.m.last().unwrap()
    }

    /// Index of the largest value, first occurrence.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.chi.iter().enumerate() {
            if v > self.chi[best] {
                best = k;
            }
        }
        best
    }
}

pub fn scan_chi(
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    m_lo: f64,
    m_hi: f64,
    intervals: usize,
    spec: &QuadratureSpec,
) -> Result<ChiScan> {
    let m: Vec<f64> = (0..=intervals)
        .map(|k| m_lo + (m_hi - m_lo) * k as f64 / intervals as f64)
        .collect();
    let chi = m
        .par_iter()
        .map(|&mk| chi(vp, alpha, sigma, mk, spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(ChiScan { m, chi })
}

/// Scan of `[0, m_max]`, enlarging `m_max` until `χ_σ(m_max) ≤ 0`.
fn scan_positive_half(
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    spec: &SteadyStateSpec,
) -> Result<ChiScan> {
    let mut m_max = initial_m_max(vp, alpha, sigma);
    for attempt in 0..=SCAN_ENLARGEMENTS {
        let scan = scan_chi(vp, alpha, sigma, 0.0, m_max, spec.scan_points, &spec.quadrature)?;
        if *scan.chi.last().unwrap() <= 0.0 {
            return Ok(scan);
        }
        if attempt < SCAN_ENLARGEMENTS {
            m_max *= 2.0;
        }
    }
    Err(SteadyStateError::ScanWindowTooSmall { m_max })
}

/// The positive zero `m(σ)` of `χ_σ`, or `None` when `χ_σ ≤ 0` on `(0, ∞)`.
pub fn find_m_sigma(
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    spec: &SteadyStateSpec,
) -> Result<Option<f64>> {
    if !(sigma > 0.0) {
        return Err(SteadyStateError::InvalidSigma(sigma));
    }
    let scan = scan_positive_half(vp, alpha, sigma, spec)?;
    root_from_scan(vp, alpha, sigma, &scan, &spec.quadrature)
}

fn root_from_scan(
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    scan: &ChiScan,
    quad: &QuadratureSpec,
) -> Result<Option<f64>> {
    let mut top = scan.argmax();
    if scan.chi[top] <= CHI_POSITIVE_TOL {
        // χ(0) = 0 with χ'(0) > 0 and χ(m_max) ≤ 0 still brackets a zero
        if !positive_slope_at_zero(vp, alpha, sigma, quad)? {
            return Ok(None);
        }
        top = 0;
    }
    let j = (top + 1..scan.chi.len())
        .find(|&j| scan.chi[j] <= 0.0)
        .expect("scan ends at a non-positive value");
    let (mut lo, mut hi) = (scan.m[j - 1], scan.m[j]);
    if scan.chi[j] == 0.0 {
        return Ok(Some(hi));
    }
    while hi - lo > ROOT_BISECT_WIDTH {
        let mid = 0.5 * (lo + hi);
        if chi(vp, alpha, sigma, mid, quad)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut m = 0.5 * (lo + hi);
    for _ in 0..20 {
        let (f, df) = chi_with_slope(vp, alpha, sigma, m, quad)?;
        if df == 0.0 {
            break;
        }
        let next = m - f / df;
        if !(lo..=hi).contains(&next) {
            break;
        }
        let step = (next - m).abs();
        m = next;
        if step < ROOT_NEWTON_TOL * 1e-2 {
            break;
        }
    }
    Ok(Some(m))
}

fn positive_slope_at_zero(vp: &ValidatedPotential, alpha: f64, sigma: f64, quad: &QuadratureSpec) -> Result<bool> {
    Ok(chi_with_slope(vp, alpha, sigma, 0.0, quad)?.1 > SLOPE_POSITIVE_TOL)
}

/// Maximizer of `χ_σ` on `(0, m_max)`: golden-section search around the best
/// scan point, then refined as the sign change of `χ_σ'`.
pub fn find_t_sigma(
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    spec: &SteadyStateSpec,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(SteadyStateError::InvalidSigma(sigma));
    }
    let scan = scan_positive_half(vp, alpha, sigma, spec)?;
    t_from_scan(vp, alpha, sigma, &scan, &spec.quadrature)
}

fn t_from_scan(
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    scan: &ChiScan,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let k = scan.argmax();
    let (mut a, mut b) = if k > 0 && scan.chi[k] > 0.0 {
        (scan.m[k - 1], scan.m[(k + 1).min(scan.m.len() - 1)])
    } else if positive_slope_at_zero(vp, alpha, sigma, quad)? {
        (scan.m[0], scan.m[1])
    } else {
        return Err(SteadyStateError::NoInteriorMax { m_max: scan.m_max() });
    };
    let f = |m: f64| chi(vp, alpha, sigma, m, quad);

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-7 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    let guess = 0.5 * (a + b);

    // χ' = (2α/σ²) Var - 1 has a clean sign change at the maximum
    let slope = |m: f64| chi_with_slope(vp, alpha, sigma, m, quad).map(|r| r.1);
    let h = scan.m[1] - scan.m[0];
    let (mut lo, mut hi) = ((guess - h).max(0.0), guess + h);
    let (s_lo, s_hi) = (slope(lo)?, slope(hi)?);
    if !(s_lo > 0.0 && s_hi < 0.0) {
        return Ok(guess);
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bisection in `σ` on "χ_σ has a positive zero".
pub fn find_sigma_c(vp: &ValidatedPotential, alpha: f64, spec: &SteadyStateSpec) -> Result<f64> {
    let pred = |s: f64| find_m_sigma(vp, alpha, s, spec).map(|r| r.is_some());
    let mut lo = 0.05;
    let mut hi = 4.0 * (vp.a() * alpha).sqrt() + 1.0;
    let mut tries = 0;
    while !pred(lo)? {
        lo *= 0.5;
        tries += 1;
        if tries > 8 {
            return Err(SteadyStateError::BracketNotFound { lo, hi, value: false });
        }
    }
    tries = 0;
    while pred(hi)? {
        hi *= 2.0;
        tries += 1;
        if tries > 8 {
            return Err(SteadyStateError::BracketNotFound { lo, hi, value: true });
        }
    }
    while hi - lo > SIGMA_C_WIDTH {
        let mid = 0.5 * (lo + hi);
        if pred(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `μ^{m,σ}` tabulated at the cell centres and normalized on the grid.
pub fn steady_density(
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    m: f64,
    grid: GridSpec,
    spec: &QuadratureSpec,
) -> Result<GridMeasure> {
    if !(sigma > 0.0) {
        return Err(SteadyStateError::InvalidSigma(sigma));
    }
    let params = EffectiveParams { alpha, sigma, m };
    let win = gibbs_window(vp, &params, spec);
    let beta = 2.0 / (sigma * sigma);
    let weight = |x: f64| (-beta * (vp.effective_potential(&params, x) - win.w_min)).exp();

    let edge_weight = weight(grid.x_min).max(weight(grid.x_max));
    if edge_weight > 1e-14 {
        return Err(SteadyStateError::GridTooNarrow { edge_weight });
    }
    let density: Vec<f64> = grid.centers().into_iter().map(weight).collect();
    let z: f64 = density.iter().sum::<f64>() * grid.dx();
    let fine = grid.refined();
    let z_fine: f64 = fine.centers().into_iter().map(weight).sum::<f64>() * fine.dx();
    let change = (z - z_fine).abs() / z_fine;
    if change > 1e-8 {
        return Err(SteadyStateError::GridTooCoarse { change });
    }
    Ok(GridMeasure::from_unnormalized(grid, density)?)
}

/// Symmetric grid wide enough for every `μ^{m,σ}` with `|m| ≤ m_abs`.
pub fn steady_grid(
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    m_abs: f64,
    n_cells: usize,
    spec: &QuadratureSpec,
) -> Result<GridSpec> {
    let half = [0.0, 0.5, 1.0]
        .iter()
        .map(|f| {
            gibbs_window(vp, &EffectiveParams { alpha, sigma, m: f * m_abs }, spec).half_width
        })
        .fold(0.0, f64::max);
    Ok(GridSpec::symmetric(half, n_cells)?)
}

/// Smallest nonzero eigenvalue of the discretized frozen generator
/// `(σ²/2) ∂² - W_m' ∂`, self-adjoint in `L²(μ^{m,σ})`.
///
/// Flux form with no-flux ends: the Dirichlet form is
/// `(σ²/2) Σ π_{i+1/2} (f_{i+1} - f_i)² / Δx` with the logarithmic mean of the
/// neighbouring Gibbs weights on each face. After the similarity transform by
/// `diag(π)^{1/2}` the matrix is symmetric tridiagonal and only depends on
/// differences of `log π`, so no weight underflows.
pub fn poincare_gap(
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    m: f64,
    grid: GridSpec,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(SteadyStateError::InvalidSigma(sigma));
    }
    let params = EffectiveParams { alpha, sigma, m };
    let n = grid.n_cells;
    let dx = grid.dx();
    let beta = 2.0 / (sigma * sigma);
    let log_pi: Vec<f64> = grid
        .centers()
        .into_iter()
        .map(|x| -beta * vp.effective_potential(&params, x))
        .collect();
    let k = 0.5 * sigma * sigma / (dx * dx);

    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    for i in 0..n - 1 {
        let delta = log_pi[i + 1] - log_pi[i];
        // face weight over π_i, over π_{i+1}, and over sqrt(π_i π_{i+1})
        let to_left = expm1_over(delta);
        let to_right = expm1_over(-delta);
        let sym = sinhc(0.5 * delta);
        diag[i] += k * to_left;
        diag[i + 1] += k * to_right;
        off[i] = -k * sym;
    }
    if diag.iter().chain(&off).any(|v| !v.is_finite()) {
        return Err(SteadyStateError::EigenSolveFailed(
            "non-finite generator entry; grid too wide for this sigma".into(),
        ));
    }
    tridiagonal_eigenvalue(&diag, &off, 1)
}

/// `(e^d - 1) / d`, continuous at 0.
fn expm1_over(d: f64) -> f64 {
    if d.abs() < 1e-8 {
        1.0 + 0.5 * d
    } else {
        d.exp_m1() / d
    }
}

/// `sinh(x) / x`.
fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 + x * x / 6.0
    } else {
        x.sinh() / x
    }
}

/// Number of eigenvalues strictly below `x` of the symmetric tridiagonal
/// matrix, from the signs of the LDLᵀ pivots.
pub fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let q_prev = if q == 0.0 { f64::EPSILON * (diag[i - 1].abs() + off[i - 1].abs()).max(f64::MIN_POSITIVE) } else { q };
        q = diag[i] - x - off[i - 1] * off[i - 1] / q_prev;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// `index`-th smallest eigenvalue (0-based) by bisection on the Sturm count.
pub fn tridiagonal_eigenvalue(diag: &[f64], off: &[f64], index: usize) -> Result<f64> {
    let n = diag.len();
    if index >= n || off.len() + 1 != n {
        return Err(SteadyStateError::EigenSolveFailed(format!(
            "index {index} out of range for a {n}x{n} matrix"
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(1e-300);
    lo -= 1e-12 * scale;
    hi += 1e-12 * scale;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(diag, off, mid) > index {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * scale.min(hi.abs().max(lo.abs()) * 1e6).max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let value = 0.5 * (lo + hi);
    if !value.is_finite() {
        return Err(SteadyStateError::EigenSolveFailed("bisection produced a non-finite value".into()));
    }
    Ok(value)
}

/// Steady-state structure at a given `(α, σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateReport {
    pub alpha: f64,
    pub sigma: f64,
    pub theta: f64,
    /// Positive steady mean; `None` in the unique-steady-state regime.
    pub m_sigma: Option<f64>,
    pub t_sigma: Option<f64>,
    pub sigma_c: Option<f64>,
    pub nu_plus: Option<GridMeasure>,
    pub nu_zero: GridMeasure,
    pub nu_minus: Option<GridMeasure>,
    /// Spectral gap of the frozen generator at `m(σ)`, or at 0 when there is
    /// no positive steady state.
    pub gap: f64,
    pub chi_scan: ChiScan,
}

/// Options for [`analyze`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeOptions {
    pub spec: SteadyStateSpec,
    pub density_cells: usize,
    pub gap_cells: usize,
    pub with_sigma_c: bool,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            spec: SteadyStateSpec::default(),
            density_cells: 2048,
            gap_cells: 2048,
            with_sigma_c: false,
        }
    }
}

pub fn analyze(
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    opts: &AnalyzeOptions,
) -> Result<SteadyStateReport> {
    let spec = &opts.spec;
    let quad = &spec.quadrature;
    let scan = scan_positive_half(vp, alpha, sigma, spec)?;
    let m_sigma = root_from_scan(vp, alpha, sigma, &scan, quad)?;
    let t_sigma = match m_sigma {
        Some(_) => Some(t_from_scan(vp, alpha, sigma, &scan, quad)?),
        None => None,
    };
    let sigma_c = if opts.with_sigma_c {
        Some(find_sigma_c(vp, alpha, spec)?)
    } else {
        None
    };
    let m_abs = m_sigma.unwrap_or(0.0);
    let grid = steady_grid(vp, alpha, sigma, m_abs, opts.density_cells, quad)?;
    let nu_zero = steady_density(vp, alpha, sigma, 0.0, grid, quad)?;
    let (nu_plus, nu_minus) = match m_sigma {
        Some(m) => (
            Some(steady_density(vp, alpha, sigma, m, grid, quad)?),
            Some(steady_density(vp, alpha, sigma, -m, grid, quad)?),
        ),
        None => (None, None),
    };
    let gap_grid = GridSpec::symmetric(
        gibbs_window(vp, &EffectiveParams { alpha, sigma, m: m_abs }, quad).half_width,
        opts.gap_cells,
    )?;
    let gap = poincare_gap(vp, alpha, sigma, m_abs, gap_grid)?;
    Ok(SteadyStateReport {
        alpha,
        sigma,
        theta: vp.theta(),
        m_sigma,
        t_sigma,
        sigma_c,
        nu_plus,
        nu_zero,
        nu_minus,
        gap,
        chi_scan: scan,
    })
}

/// Label of a steady state, or `Undecided` when no state is clearly nearest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyLimit {
    NuPlus,
    NuZero,
    NuMinus,
    Undecided,
}

impl SteadyLimit {
    pub fn as_str(&self) -> &'static str {
        match self {
            SteadyLimit::NuPlus => "nu_plus",
            SteadyLimit::NuZero => "nu_zero",
            SteadyLimit::NuMinus => "nu_minus",
            SteadyLimit::Undecided => "undecided",
        }
    }
}

/// The three steady laws on a common grid; `plus`/`minus` are absent in the
/// unique-steady-state regime.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyTargets {
    pub plus: Option<GridMeasure>,
    pub zero: GridMeasure,
    pub minus: Option<GridMeasure>,
}

impl SteadyTargets {
    pub fn compute(
        vp: &ValidatedPotential,
        alpha: f64,
        sigma: f64,
        m_sigma: Option<f64>,
        grid: GridSpec,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        Ok(SteadyTargets {
            plus: m_sigma.map(|m| steady_density(vp, alpha, sigma, m, grid, quad)).transpose()?,
            zero: steady_density(vp, alpha, sigma, 0.0, grid, quad)?,
            minus: m_sigma.map(|m| steady_density(vp, alpha, sigma, -m, grid, quad)).transpose()?,
        })
    }

    pub fn from_report(report: &SteadyStateReport) -> Self {
        SteadyTargets {
            plus: report.nu_plus.clone(),
            zero: report.nu_zero.clone(),
            minus: report.nu_minus.clone(),
        }
    }
}

/// Nearest steady state, accepted only when the runner-up is at least twice
/// as far. Distances are `(plus, zero, minus)`; NaN marks an absent state.
pub fn classify_nearest(w2_plus: f64, w2_zero: f64, w2_minus: f64) -> SteadyLimit {
    let mut c: Vec<(f64, SteadyLimit)> = [
        (w2_plus, SteadyLimit::NuPlus),
        (w2_zero, SteadyLimit::NuZero),
        (w2_minus, SteadyLimit::NuMinus),
    ]
    .into_iter()
    .filter(|(d, _)| d.is_finite())
    .collect();
    c.sort_by(|a, b| a.0.total_cmp(&b.0));
    match c.as_slice() {
        [] => SteadyLimit::Undecided,
        [(_, only)] => *only,
        [(d1, best), (d2, _), ..] => {
            if *d2 >= 2.0 * d1 {
                *best
            } else {
                SteadyLimit::Undecided
            }
        }
    }
}

/// Turns an [`InitialMeasureSpec`] into a density on `grid`.
pub fn resolve_initial(
    init: &InitialMeasureSpec,
    grid: GridSpec,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    quad: &QuadratureSpec,
) -> Result<GridMeasure> {
    use crate::measures::{mixture_on_grid, read_density_csv, tabulated_on_grid};
    Ok(match init {
        InitialMeasureSpec::SteadyFamily { m } => steady_density(vp, alpha, sigma, *m, grid, quad)?,
        InitialMeasureSpec::Gaussian { mean, sd } => GridMeasure::gaussian(grid, *mean, *sd)?,
        InitialMeasureSpec::Mixture { weights, components } => {
            mixture_on_grid(grid, weights, components)?
        }
        InitialMeasureSpec::Tabulated { file } => {
            let (xs, ds) = read_density_csv(file)?;
            tabulated_on_grid(&xs, &ds, grid)?
        }
    })
}
