//! Probability densities tabulated on uniform one-dimensional grids, with
//! moments, entropy and free energy, the quadratic Wasserstein distance and a
//! chi-square-type L2 distance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::ValidatedPotential;

/// Default number of quantile nodes for [`wasserstein2_with_nodes`].
pub const QUANTILE_NODES: usize = 4096;
const QUANTILE_CLAMP: f64 = 1e-9;
/// Cells where the reference density falls below this fraction of its maximum
/// are left out of [`l2_distance`].
pub const L2_RELATIVE_FLOOR: f64 = 1e-16;
const L2_ABSOLUTE_FLOOR: f64 = 1e-300;
/// Mass of `mu` tolerated on cells excluded from the L2 integral.
pub const L2_SUPPORT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("density has total mass {0}, expected 1")]
    NotNormalized(f64),
    #[error("density is negative or non-finite at cell {index}: {value}")]
    InvalidDensity { index: usize, value: f64 },
    #[error("measures live on different grids")]
    GridMismatch,
    #[error("mass {mass:e} sits where the reference density is below the floor ({cells} cells)")]
    SupportMismatch { mass: f64, cells: usize },
    #[error("no sample falls inside the grid")]
    AllSamplesOutsideGrid,
    #[error("sample list is empty")]
    EmptySamples,
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("invalid initial measure: {0}")]
    InvalidInitial(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Uniform cell-centred grid on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self, MeasureError> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(MeasureError::InvalidGrid(format!(
                "need x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n_cells < 16 {
            return Err(MeasureError::InvalidGrid(format!(
                "need at least 16 cells, got {n_cells}"
            )));
        }
        Ok(GridSpec { x_min, x_max, n_cells })
    }

    /// `[-half_width, half_width]` with `n_cells` cells.
    pub fn symmetric(half_width: f64, n_cells: usize) -> Result<Self, MeasureError> {
        GridSpec::new(-half_width, half_width, n_cells)
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    #[inline]
    pub fn edge(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn refined(&self) -> GridSpec {
        GridSpec {
            n_cells: 2 * self.n_cells,
            ..*self
        }
    }

    pub fn mirrored(&self) -> GridSpec {
        GridSpec {
            x_min: -self.x_max,
            x_max: -self.x_min,
            n_cells: self.n_cells,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }
}

/// Probability density per unit length at each cell centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    grid: GridSpec,
    density: Vec<f64>,
}

impl GridMeasure {
    /// Wraps an already normalized density; checks the mass to 1e-10.
    pub fn new(grid: GridSpec, density: Vec<f64>) -> Result<Self, MeasureError> {
        check_density(&grid, &density)?;
        let mass: f64 = density.iter().sum::<f64>() * grid.dx();
        if (mass - 1.0).abs() > 1e-10 {
            return Err(MeasureError::NotNormalized(mass));
        }
        Ok(GridMeasure { grid, density })
    }

    /// Normalizes a non-negative profile to unit mass.
    pub fn from_unnormalized(grid: GridSpec, mut density: Vec<f64>) -> Result<Self, MeasureError> {
        check_density(&grid, &density)?;
        let mass: f64 = density.iter().sum::<f64>() * grid.dx();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(MeasureError::NotNormalized(mass));
        }
        let inv = 1.0 / mass;
        density.iter_mut().for_each(|d| *d *= inv);
        Ok(GridMeasure { grid, density })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: GridSpec, f: F) -> Result<Self, MeasureError> {
        let d = grid.centers().into_iter().map(f).collect();
        GridMeasure::from_unnormalized(grid, d)
    }

    /// Normal law tabulated on the grid and renormalized.
    pub fn gaussian(grid: GridSpec, mean: f64, sd: f64) -> Result<Self, MeasureError> {
        if !(sd > 0.0) {
            return Err(MeasureError::InvalidInitial(format!("gaussian sd must be positive, got {sd}")));
        }
        GridMeasure::from_fn(grid, |x| {
            let z = (x - mean) / sd;
            (-0.5 * z * z).exp()
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// Raw moment of order `k` by the midpoint rule.
    pub fn moment(&self, k: u32) -> f64 {
        assert!(k <= 8, "moments above order 8 are not supported");
        let dx = self.grid.dx();
        self.density
            .iter()
            .enumerate()
            .map(|(i, d)| self.grid.center(i).powi(k as i32) * d)
            .sum::<f64>()
            * dx
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let dx = self.grid.dx();
        self.density
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let y = self.grid.center(i) - m;
                y * y * d
            })
            .sum::<f64>()
            * dx
    }

    /// `∫ μ log μ` with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        self.density
            .iter()
            .filter(|&&d| d > 0.0)
            .map(|&d| d * d.ln())
            .sum::<f64>()
            * self.grid.dx()
    }

    /// Cumulative mass at the cell edges; `cdf[0] = 0`, `cdf[n] = 1`.
    pub fn cdf_edges(&self) -> Vec<f64> {
        let dx = self.grid.dx();
        let mut out = Vec::with_capacity(self.density.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for d in &self.density {
            acc += d * dx;
            out.push(acc);
        }
        let total = acc;
        out.iter_mut().for_each(|c| *c /= total);
        out
    }

    /// CDF at `x`, linear inside each cell.
    pub fn cdf(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x <= g.x_min {
            return 0.0;
        }
        if x >= g.x_max {
            return 1.0;
        }
        let edges = self.cdf_edges();
        let s = (x - g.x_min) / g.dx();
        let j = (s.floor() as usize).min(g.n_cells - 1);
        let frac = s - j as f64;
        edges[j] + frac * (edges[j + 1] - edges[j])
    }

    pub fn quantiles(&self) -> Quantile<'_> {
        Quantile {
            grid: &self.grid,
            cdf: self.cdf_edges(),
        }
    }

    /// Mirror image `x -> -x`, tabulated on the mirrored grid.
    pub fn reflect(&self) -> GridMeasure {
        let mut d = self.density.clone();
        d.reverse();
        GridMeasure {
            grid: self.grid.mirrored(),
            density: d,
        }
    }

    /// Linear interpolation onto another grid, renormalized. Mass outside the
    /// target grid is dropped.
    pub fn resample(&self, target: GridSpec) -> Result<GridMeasure, MeasureError> {
        if target == self.grid {
            return Ok(self.clone());
        }
        let g = &self.grid;
        let n = g.n_cells;
        let d = target
            .centers()
            .into_iter()
            .map(|x| {
                let s = (x - g.x_min) / g.dx() - 0.5;
                if s < -0.5 || s > n as f64 - 0.5 {
                    return 0.0;
                }
                let s = s.clamp(0.0, (n - 1) as f64);
                let j = (s.floor() as usize).min(n - 2);
                let t = s - j as f64;
                (1.0 - t) * self.density[j] + t * self.density[j + 1]
            })
            .collect();
        GridMeasure::from_unnormalized(target, d)
    }
}

fn check_density(grid: &GridSpec, density: &[f64]) -> Result<(), MeasureError> {
    if density.len() != grid.n_cells {
        return Err(MeasureError::InvalidGrid(format!(
            "{} density values for {} cells",
            density.len(),
            grid.n_cells
        )));
    }
    if let Some((index, &value)) = density
        .iter()
        .enumerate()
        .find(|(_, d)| !(d.is_finite() && **d >= 0.0))
    {
        return Err(MeasureError::InvalidDensity { index, value });
    }
    Ok(())
}

/// Inverse of the piecewise-linear CDF of a [`GridMeasure`].
pub struct Quantile<'a> {
    grid: &'a GridSpec,
    cdf: Vec<f64>,
}

impl Quantile<'_> {
    pub fn at(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let n = self.grid.n_cells;
        // first edge with cdf > u
        let j = self.cdf.partition_point(|&c| c <= u);
        if j == 0 {
            return self.grid.x_min;
        }
        if j > n {
            // u == 1: right end of the last cell carrying mass
            let last = self.cdf.partition_point(|&c| c < 1.0);
            return self.grid.edge(last.min(n));
        }
        let lo = self.cdf[j - 1];
        let p = self.cdf[j] - lo;
        self.grid.edge(j - 1) + (u - lo) / p * self.grid.dx()
    }
}

/// Quantile level of node `k` out of `m`, clamped away from 0 and 1.
#[inline]
pub fn quantile_node(k: usize, m: usize) -> f64 {
    ((k as f64 + 0.5) / m as f64).clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP)
}

/// Quadratic Wasserstein distance through the quantile representation.
///
/// Both quantile functions are piecewise linear between the merged CDF
/// breakpoints, so the integral of their squared difference is evaluated
/// exactly with a two-point Gauss rule on every piece.
pub fn wasserstein2(mu: &GridMeasure, nu: &GridMeasure) -> f64 {
    let qa = mu.quantiles();
    let qb = nu.quantiles();
    let mut breaks: Vec<f64> = qa.cdf.iter().chain(qb.cdf.iter()).copied().collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    const G: f64 = 0.211_324_865_405_187_1; // (1 - 1/sqrt(3)) / 2
    let mut s = 0.0;
    for w in breaks.windows(2) {
        let (u0, u1) = (w[0], w[1]);
        let h = u1 - u0;
        if h <= 0.0 {
            continue;
        }
        let d0 = qa.at(u0 + G * h) - qb.at(u0 + G * h);
        let d1 = qa.at(u1 - G * h) - qb.at(u1 - G * h);
        s += 0.5 * h * (d0 * d0 + d1 * d1);
    }
    s.max(0.0).sqrt()
}

/// W2 by the midpoint rule on `nodes` quantile levels clamped to
/// `[1e-9, 1 - 1e-9]`.
pub fn wasserstein2_with_nodes(mu: &GridMeasure, nu: &GridMeasure, nodes: usize) -> f64 {
    let qa = mu.quantiles();
    let qb = nu.quantiles();
    let s: f64 = (0..nodes)
        .map(|k| {
            let u = quantile_node(k, nodes);
            let d = qa.at(u) - qb.at(u);
            d * d
        })
        .sum();
    (s / nodes as f64).sqrt()
}

/// W2 between two equally weighted samples of the same size (sorted pairing).
pub fn wasserstein2_samples(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "sample sizes differ");
    assert!(!a.is_empty());
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}

/// W2 between an empirical measure and a grid law: sorted samples against the
/// grid quantile at ranks `(i - 1/2) / N`.
pub fn wasserstein2_samples_to_measure(samples: &[f64], nu: &GridMeasure) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    wasserstein2_sorted_to_measure(&xs, nu)
}

pub fn wasserstein2_sorted_to_measure(sorted: &[f64], nu: &GridMeasure) -> f64 {
    assert!(!sorted.is_empty());
    let q = nu.quantiles();
    let n = sorted.len();
    let s: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let d = x - q.at((i as f64 + 0.5) / n as f64);
            d * d
        })
        .sum();
    (s / n as f64).sqrt()
}

/// Outcome of an L2 evaluation, with the cells left out near the tails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Report {
    pub distance: f64,
    pub excluded_cells: usize,
    pub excluded_mass: f64,
}

/// `(∫ (dμ/dν - 1)^2 dν)^(1/2)` on the common grid.
pub fn l2_distance(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64, MeasureError> {
    l2_report(mu, nu).map(|r| r.distance)
}

pub fn l2_report(mu: &GridMeasure, nu: &GridMeasure) -> Result<L2Report, MeasureError> {
    if !same_grid(&mu.grid, &nu.grid) {
        return Err(MeasureError::GridMismatch);
    }
    let dx = nu.grid.dx();
    let max_nu = nu.density.iter().cloned().fold(0.0, f64::max);
    let floor = L2_RELATIVE_FLOOR * max_nu;
    let mut sum = 0.0;
    let mut excluded_cells = 0;
    let mut excluded_mass = 0.0;
    for (&p, &q) in mu.density.iter().zip(&nu.density) {
        if q < floor {
            excluded_cells += 1;
            excluded_mass += p * dx;
            continue;
        }
        let q = q.max(L2_ABSOLUTE_FLOOR);
        let r = p / q - 1.0;
        sum += r * r * q * dx;
    }
    if excluded_mass > L2_SUPPORT_TOL {
        return Err(MeasureError::SupportMismatch {
            mass: excluded_mass,
            cells: excluded_cells,
        });
    }
    Ok(L2Report {
        distance: sum.sqrt(),
        excluded_cells,
        excluded_mass,
    })
}

pub(crate) fn same_grid(a: &GridSpec, b: &GridSpec) -> bool {
    let tol = 1e-12 * (a.x_max - a.x_min).abs().max(1.0);
    a.n_cells == b.n_cells && (a.x_min - b.x_min).abs() <= tol && (a.x_max - b.x_max).abs() <= tol
}

/// Entropy `∫ μ log μ` and the free energy
/// `(σ²/2) ∫ μ log μ + ∫ V dμ + (α/2) Var(μ)`.
pub fn entropy_and_free_energy(
    mu: &GridMeasure,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
) -> (f64, f64) {
    let entropy = mu.entropy();
    let dx = mu.grid.dx();
    let potential: f64 = mu
        .density
        .iter()
        .enumerate()
        .map(|(i, d)| vp.value(mu.grid.center(i)) * d)
        .sum::<f64>()
        * dx;
    let m1 = mu.mean();
    let interaction = 0.5 * alpha * (mu.moment(2) - m1 * m1);
    (entropy, 0.5 * sigma * sigma * entropy + potential + interaction)
}

/// Silverman's rule of thumb.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        let j = (i + 1).min(sorted.len() - 1);
        sorted[i] * (1.0 - t) + sorted[j] * t
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density estimate on the grid, renormalized to unit mass.
/// `bandwidth = None` selects Silverman's rule (floored at one cell width).
pub fn from_samples(
    xs: &[f64],
    grid: GridSpec,
    bandwidth: Option<f64>,
) -> Result<GridMeasure, MeasureError> {
    if xs.is_empty() {
        return Err(MeasureError::EmptySamples);
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(MeasureError::InvalidBandwidth(h)),
        None => silverman_bandwidth(xs).max(grid.dx()),
    };
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = 8.0 * h;
    let inv_h = 1.0 / h;
    let density: Vec<f64> = grid
        .centers()
        .into_iter()
        .map(|x| {
            let lo = sorted.partition_point(|&s| s < x - cutoff);
            let hi = sorted.partition_point(|&s| s <= x + cutoff);
            sorted[lo..hi]
                .iter()
                .map(|s| {
                    let z = (x - s) * inv_h;
                    (-0.5 * z * z).exp()
                })
                .sum()
        })
        .collect();
    if density.iter().all(|&d| d == 0.0) {
        return Err(MeasureError::AllSamplesOutsideGrid);
    }
    GridMeasure::from_unnormalized(grid, density)
}

/// Reads a two-column `x, density` CSV. A non-numeric first line is taken as
/// a header.
pub fn read_density_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>), MeasureError> {
    let text = std::fs::read_to_string(path).map_err(|source| MeasureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut xs = Vec::new();
    let mut ds = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: Option<(f64, f64)> = match fields.as_slice() {
            [x, d] => x.parse().ok().zip(d.parse().ok()),
            _ => None,
        };
        match parsed {
            Some((x, d)) => {
                xs.push(x);
                ds.push(d);
            }
            None if xs.is_empty() && lineno == 0 => continue,
            None => {
                return Err(MeasureError::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    message: format!("expected two numeric columns, got `{line}`"),
                })
            }
        }
    }
    if xs.len() < 2 {
        return Err(MeasureError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "need at least two rows".into(),
        });
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MeasureError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "x column must be strictly increasing".into(),
        });
    }
    Ok((xs, ds))
}

/// Linearly interpolates tabulated `(x, density)` pairs onto `grid`; zero
/// outside the tabulated range. Renormalizes.
pub fn tabulated_on_grid(xs: &[f64], ds: &[f64], grid: GridSpec) -> Result<GridMeasure, MeasureError> {
    let d = grid
        .centers()
        .into_iter()
        .map(|x| {
            if x < xs[0] || x > xs[xs.len() - 1] {
                return 0.0;
            }
            let j = xs.partition_point(|&t| t <= x).clamp(1, xs.len() - 1);
            let t = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
            ((1.0 - t) * ds[j - 1] + t * ds[j]).max(0.0)
        })
        .collect();
    GridMeasure::from_unnormalized(grid, d)
}

/// Declarative initial law; see [`crate::steady_state::resolve_initial`] for
/// turning it into a [`GridMeasure`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialMeasureSpec {
    /// Member `μ^{m,σ}` of the steady family.
    SteadyFamily { m: f64 },
    Gaussian { mean: f64, sd: f64 },
    /// Gaussian mixture, components given as `(mean, sd)`.
    Mixture { weights: Vec<f64>, components: Vec<(f64, f64)> },
    Tabulated { file: PathBuf },
}

pub fn mixture_on_grid(
    grid: GridSpec,
    weights: &[f64],
    components: &[(f64, f64)],
) -> Result<GridMeasure, MeasureError> {
    if weights.len() != components.len() || weights.is_empty() {
        return Err(MeasureError::InvalidInitial(
            "mixture needs one weight per component".into(),
        ));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || components.iter().any(|c| !(c.1 > 0.0)) {
        return Err(MeasureError::InvalidInitial(
            "mixture weights must be non-negative and sds positive".into(),
        ));
    }
    GridMeasure::from_fn(grid, |x| {
        weights
            .iter()
            .zip(components)
            .map(|(w, (m, s))| {
                let z = (x - m) / s;
                w * (-0.5 * z * z).exp() / s
            })
            .sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::symmetric(4.0, 2000).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1.0, 0.0, 100).is_err());
        assert!(GridSpec::new(0.0, 1.0, 8).is_err());
        let g = GridSpec::new(0.0, 1.0, 16).unwrap();
        assert_eq!(g.dx(), 1.0 / 16.0);
        assert_eq!(g.center(0), 1.0 / 32.0);
    }

    #[test]
    fn symmetric_mean_is_zero() {
        let mu = GridMeasure::gaussian(grid(), 0.0, 0.5).unwrap();
        assert!(mu.mean().abs() < 1e-12);
        assert!(mu.moment(3).abs() < 1e-10);
        assert!((mu.moment(0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_moments() {
        let mu = GridMeasure::gaussian(grid(), 0.3, 0.1).unwrap();
        assert!((mu.mean() - 0.3).abs() < 1e-6);
        let nu = GridMeasure::gaussian(grid(), 0.0, 0.4).unwrap();
        assert!((nu.moment(2) - 0.16).abs() < 1e-6);
    }

    #[test]
    fn new_rejects_bad_mass_and_values() {
        let g = GridSpec::new(0.0, 1.0, 16).unwrap();
        assert!(matches!(
            GridMeasure::new(g, vec![2.0; 16]),
            Err(MeasureError::NotNormalized(_))
        ));
        let mut d = vec![1.0; 16];
        d[3] = -0.1;
        assert!(matches!(
            GridMeasure::from_unnormalized(g, d),
            Err(MeasureError::InvalidDensity { index: 3, .. })
        ));
    }

    #[test]
    fn uniform_entropy_is_zero() {
        let g = GridSpec::new(0.0, 1.0, 64).unwrap();
        let mu = GridMeasure::new(g, vec![1.0; 64]).unwrap();
        assert!(mu.entropy().abs() < 1e-15);
    }

    #[test]
    fn interaction_term_is_half_alpha_variance() {
        // zero potential contribution is impossible with a validated V, so
        // subtract it explicitly
        let vp = crate::validate(&crate::PolynomialPotential::quartic()).unwrap();
        let mu = GridMeasure::gaussian(grid(), 0.0, 0.7).unwrap();
        let (ent, fe) = entropy_and_free_energy(&mu, &vp, 2.0, 0.5);
        let pot: f64 = mu
            .density()
            .iter()
            .enumerate()
            .map(|(i, d)| vp.value(mu.grid().center(i)) * d)
            .sum::<f64>()
            * mu.grid().dx();
        let interaction = fe - 0.125 * ent - pot;
        assert!((interaction - mu.variance()).abs() < 1e-12);
    }

    #[test]
    fn w2_identity_and_translation() {
        let mu = GridMeasure::gaussian(grid(), -0.2, 0.3).unwrap();
        assert_eq!(wasserstein2(&mu, &mu), 0.0);
        let nu = GridMeasure::gaussian(grid(), 0.45, 0.3).unwrap();
        assert!((wasserstein2(&mu, &nu) - 0.65).abs() < 1e-4);
    }

    #[test]
    fn node_rule_close_to_exact() {
        let mu = GridMeasure::gaussian(grid(), -0.5, 0.3).unwrap();
        let nu = mixture_on_grid(grid(), &[0.3, 0.7], &[(-1.0, 0.2), (1.0, 0.25)]).unwrap();
        let exact = wasserstein2(&mu, &nu);
        let nodes = wasserstein2_with_nodes(&mu, &nu, QUANTILE_NODES);
        assert!((exact - nodes).abs() < 1e-3 * exact, "{exact} vs {nodes}");
    }

    #[test]
    fn w2_three_atoms_matches_sorted_pairing() {
        let g = GridSpec::new(0.0, 1.0, 100).unwrap();
        let atoms = |cells: [usize; 3]| {
            let mut d = vec![0.0; 100];
            for c in cells {
                d[c] = 1.0;
            }
            GridMeasure::from_unnormalized(g, d).unwrap()
        };
        let a = [3usize, 40, 77];
        let b = [10usize, 55, 90];
        let w = wasserstein2(&atoms(a), &atoms(b));
        // exhaustive search over pairings
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms
            .iter()
            .map(|p| {
                (0..3)
                    .map(|i| {
                        let d = g.center(a[i]) - g.center(b[p[i]]);
                        d * d / 3.0
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        assert!((w - best).abs() < 1e-12, "{w} vs {best}");
    }

    #[test]
    fn sample_w2_matches_brute_force() {
        let a: [f64; 4] = [0.3, -1.2, 2.5, 0.9];
        let b: [f64; 4] = [1.1, 0.0, -0.4, 3.0];
        let mut best = f64::INFINITY;
        let mut idx = [0usize, 1, 2, 3];
        permute(&mut idx, 0, &mut |p| {
            let c: f64 = (0..4).map(|i| (a[i] - b[p[i]]).powi(2)).sum::<f64>() / 4.0;
            best = best.min(c);
        });
        assert!((wasserstein2_samples(&a, &b) - best.sqrt()).abs() < 1e-14);
    }

    fn permute(v: &mut [usize; 4], k: usize, f: &mut impl FnMut(&[usize; 4])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn l2_self_is_zero() {
        let nu = GridMeasure::gaussian(grid(), 0.1, 0.5).unwrap();
        assert_eq!(l2_distance(&nu, &nu).unwrap(), 0.0);
    }

    #[test]
    fn l2_linear_perturbation() {
        let nu = GridMeasure::gaussian(grid(), 0.0, 0.5).unwrap();
        let eps = 1e-4;
        let bump = |x: f64| (x * x - 0.25) * (-x * x).exp();
        let pert: Vec<f64> = nu
            .density()
            .iter()
            .enumerate()
            .map(|(i, d)| d * (1.0 + eps * bump(nu.grid().center(i))))
            .collect();
        let mu = GridMeasure::from_unnormalized(*nu.grid(), pert).unwrap();
        let dx = nu.grid().dx();
        // centred bump after renormalization
        let mean_b: f64 = nu
            .density()
            .iter()
            .enumerate()
            .map(|(i, d)| bump(nu.grid().center(i)) * d * dx)
            .sum();
        let norm: f64 = nu
            .density()
            .iter()
            .enumerate()
            .map(|(i, d)| (bump(nu.grid().center(i)) - mean_b).powi(2) * d * dx)
            .sum::<f64>()
            .sqrt();
        let got = l2_distance(&mu, &nu).unwrap();
        assert!((got - eps * norm).abs() < 1e-3 * eps * norm, "{got} vs {}", eps * norm);
    }

    #[test]
    fn l2_grid_mismatch() {
        let a = GridMeasure::gaussian(grid(), 0.0, 0.5).unwrap();
        let b = GridMeasure::gaussian(GridSpec::symmetric(4.0, 1000).unwrap(), 0.0, 0.5).unwrap();
        assert!(matches!(l2_distance(&a, &b), Err(MeasureError::GridMismatch)));
    }

    #[test]
    fn l2_support_mismatch() {
        let g = grid();
        let nu = GridMeasure::gaussian(g, -2.0, 0.1).unwrap();
        let mu = GridMeasure::gaussian(g, 2.0, 0.1).unwrap();
        assert!(matches!(
            l2_distance(&mu, &nu),
            Err(MeasureError::SupportMismatch { .. })
        ));
    }

    #[test]
    fn kde_of_point_mass() {
        let g = grid();
        let mu = from_samples(&[0.0; 100], g, Some(0.05)).unwrap();
        assert!(mu.mean().abs() < 1e-10);
        assert!((mu.mass() - 1.0).abs() < 1e-12);
        // Silverman degenerates to zero spread; floored at one cell
        let nu = from_samples(&[0.0; 100], g, None).unwrap();
        assert!(nu.mean().abs() < 1e-10);
    }

    #[test]
    fn kde_errors() {
        let g = grid();
        assert!(matches!(from_samples(&[], g, None), Err(MeasureError::EmptySamples)));
        assert!(matches!(
            from_samples(&[100.0], g, Some(0.1)),
            Err(MeasureError::AllSamplesOutsideGrid)
        ));
        assert!(matches!(
            from_samples(&[0.0], g, Some(-1.0)),
            Err(MeasureError::InvalidBandwidth(_))
        ));
    }

    #[test]
    fn reflect_flips_mean() {
        let mu = GridMeasure::gaussian(GridSpec::new(-3.0, 5.0, 400).unwrap(), 0.7, 0.3).unwrap();
        let r = mu.reflect();
        assert!((r.mean() + mu.mean()).abs() < 1e-12);
        assert_eq!(r.grid().x_min, -5.0);
    }

    #[test]
    fn resample_preserves_mean() {
        let mu = GridMeasure::gaussian(grid(), 0.4, 0.3).unwrap();
        let r = mu.resample(GridSpec::new(-3.0, 3.5, 777).unwrap()).unwrap();
        assert!((r.mean() - 0.4).abs() < 1e-6);
    }

    #[test]
    fn mixture_mean() {
        let mu = mixture_on_grid(grid(), &[0.25, 0.75], &[(-1.0, 0.2), (1.0, 0.2)]).unwrap();
        assert!((mu.mean() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("gb-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.csv");
        let mu = GridMeasure::gaussian(GridSpec::symmetric(3.0, 300).unwrap(), 0.2, 0.4).unwrap();
        let mut text = String::from("x,density\n");
        for (i, d) in mu.density().iter().enumerate() {
            text.push_str(&format!("{},{}\n", mu.grid().center(i), d));
        }
        std::fs::write(&path, text).unwrap();
        let (xs, ds) = read_density_csv(&path).unwrap();
        let nu = tabulated_on_grid(&xs, &ds, *mu.grid()).unwrap();
        assert!((nu.mean() - mu.mean()).abs() < 1e-12);
        std::fs::write(&path, "x,density\n0,1\nfoo,bar\n").unwrap();
        let err = read_density_csv(&path).unwrap_err();
        assert!(matches!(err, MeasureError::Parse { line: 3, .. }), "{err}");
    }
}
