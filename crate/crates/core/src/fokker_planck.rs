//! Finite-volume solver for `∂_t μ = ∂_x[(σ²/2) ∂_x μ + (V'(x) + α(x - m1)) μ]`
//! with no-flux ends and explicit time stepping.
//!
//! The default flux is the exponentially fitted (Chang–Cooper /
//! Scharfetter–Gummel) one. Writing `D = σ²/2` and
//! `Φ(x) = V(x) + α(x²/2 - m1 x)`, the flux through the face between cells
//! `i` and `i+1` is `(D/Δx) [B(z) ρ_i - B(-z) ρ_{i+1}]` with
//! `z = (Φ_{i+1} - Φ_i)/D` and `B(z) = z/(e^z - 1)`. It vanishes on the
//! nodal Gibbs profile `ρ_i ∝ exp(-Φ(x_i)/D)`, so the tabulated steady laws are
//! discrete steady states, and positivity holds under the time-step bound.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{entropy_and_free_energy, wasserstein2, GridMeasure, GridSpec, MeasureError};
use crate::potential::ValidatedPotential;
use crate::steady_state::SteadyTargets;

/// Safety factor of the explicit time-step bound.
pub const CFL_SAFETY: f64 = 0.45;

#[derive(Debug, Error)]
pub enum FpError {
    #[error("time step {dt} exceeds the stability bound {bound}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("negative density {value} in cell {index} at t = {time}")]
    NegativeDensity { index: usize, value: f64, time: f64 },
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

type Result<T> = std::result::Result<T, FpError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    ChangCooper,
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FPConfig {
    pub grid: GridSpec,
    /// Upper bound on the step; the solver may take smaller steps.
    pub dt: f64,
    pub t_final: f64,
    pub scheme: FluxScheme,
    /// Steps between recorded snapshots.
    pub record_every: usize,
    /// Evaluate the free energy after every step.
    pub track_energy: bool,
}

impl FPConfig {
    pub fn new(grid: GridSpec, t_final: f64) -> Self {
        FPConfig {
            grid,
            dt: 1e-3,
            t_final,
            scheme: FluxScheme::ChangCooper,
            record_every: 1000,
            track_energy: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_final > 0.0) {
            return Err(FpError::InvalidConfig("dt and t_final must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(FpError::InvalidConfig("record_every must be positive".into()));
        }
        Ok(())
    }
}

/// Density at one time together with its mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FPState {
    pub mu: GridMeasure,
    pub time: f64,
    pub m1: f64,
}

impl FPState {
    pub fn new(mu: GridMeasure) -> Self {
        let m1 = mu.mean();
        FPState { mu, time: 0.0, m1 }
    }
}

/// `B(z) = z / (e^z - 1)`.
#[inline]
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Explicit integrator holding the current density and the precomputed
/// face data.
#[derive(Debug, Clone)]
pub struct FpSolver<'a> {
    vp: &'a ValidatedPotential,
    alpha: f64,
    sigma: f64,
    grid: GridSpec,
    scheme: FluxScheme,
    rho: Vec<f64>,
    time: f64,
    steps: u64,
    /// `(Φ_{i+1} - Φ_i)/D` without the `m1` term.
    z_static: Vec<f64>,
    /// `V'` at the faces.
    dv_face: Vec<f64>,
    x_face: Vec<f64>,
    flux: Vec<f64>,
}

impl<'a> FpSolver<'a> {
    pub fn new(
        mu0: &GridMeasure,
        vp: &'a ValidatedPotential,
        alpha: f64,
        sigma: f64,
        grid: GridSpec,
        scheme: FluxScheme,
    ) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(FpError::InvalidConfig(format!("sigma must be positive, got {sigma}")));
        }
        let mu = onto_grid(mu0, grid)?;
        let n = grid.n_cells;
        let d = 0.5 * sigma * sigma;
        let xs = grid.centers();
        let phi0: Vec<f64> = xs.iter().map(|&x| vp.value(x) + 0.5 * alpha * x * x).collect();
        let z_static = (0..n - 1).map(|i| (phi0[i + 1] - phi0[i]) / d).collect();
        let x_face: Vec<f64> = (1..n).map(|j| grid.edge(j)).collect();
        let dv_face = x_face.iter().map(|&x| vp.grad(x)).collect();
        Ok(FpSolver {
            vp,
            alpha,
            sigma,
            grid,
            scheme,
            rho: mu.density().to_vec(),
            time: 0.0,
            steps: 0,
            z_static,
            dv_face,
            x_face,
            flux: vec![0.0; n - 1],
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn density(&self) -> &[f64] {
        &self.rho
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Mean, summed in cell order.
    pub fn m1(&self) -> f64 {
        let dx = self.grid.dx();
        self.rho
            .iter()
            .enumerate()
            .map(|(i, r)| self.grid.center(i) * r)
            .sum::<f64>()
            * dx
    }

    pub fn mass(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.dx()
    }

    pub fn measure(&self) -> Result<GridMeasure> {
        let mut rho = self.rho.clone();
        // clip rounding-level negatives from the central scheme
        rho.iter_mut().for_each(|r| *r = r.max(0.0));
        Ok(GridMeasure::from_unnormalized(self.grid, rho)?)
    }

    pub fn state(&self) -> Result<FPState> {
        Ok(FPState {
            mu: self.measure()?,
            time: self.time,
            m1: self.m1(),
        })
    }

    pub fn free_energy(&self) -> Result<f64> {
        Ok(entropy_and_free_energy(&self.measure()?, self.vp, self.alpha, self.sigma).1)
    }

    /// `0.45 Δx² / (σ²/2 + Δx max|drift|)` for the drift with mean `m1`.
    pub fn cfl_bound(&self, m1: f64) -> f64 {
        let dx = self.grid.dx();
        let max_drift = self
            .dv_face
            .iter()
            .zip(&self.x_face)
            .map(|(dv, x)| (dv + self.alpha * (x - m1)).abs())
            .fold(0.0, f64::max);
        CFL_SAFETY * dx * dx / (0.5 * self.sigma * self.sigma + dx * max_drift)
    }

    /// Bound valid for every mean the density can have on this grid.
    pub fn uniform_cfl_bound(&self) -> f64 {
        self.cfl_bound(self.grid.x_min).min(self.cfl_bound(self.grid.x_max))
    }

    /// One explicit step; `m1` is taken from the pre-step density.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let m1 = self.m1();
        let bound = self.cfl_bound(m1);
        if dt > bound {
            return Err(FpError::CflViolation { dt, bound });
        }
        let dx = self.grid.dx();
        let d = 0.5 * self.sigma * self.sigma;
        let n = self.rho.len();
        match self.scheme {
            FluxScheme::ChangCooper => {
                let shift = self.alpha * m1 * dx / d;
                for i in 0..n - 1 {
                    let z = self.z_static[i] - shift;
                    let b = bernoulli(z);
                    // B(-z) = B(z) + z
                    self.flux[i] = d / dx * (b * self.rho[i] - (b + z) * self.rho[i + 1]);
                }
            }
            FluxScheme::Central => {
                for i in 0..n - 1 {
                    let drift = self.dv_face[i] + self.alpha * (self.x_face[i] - m1);
                    self.flux[i] = -d * (self.rho[i + 1] - self.rho[i]) / dx
                        - drift * 0.5 * (self.rho[i] + self.rho[i + 1]);
                }
            }
        }
        let c = dt / dx;
        self.rho[0] -= c * self.flux[0];
        for i in 1..n - 1 {
            self.rho[i] -= c * (self.flux[i] - self.flux[i - 1]);
        }
        self.rho[n - 1] += c * self.flux[n - 2];
        self.steps += 1;
        self.time += dt;
        if let Some((index, &value)) = self.rho.iter().enumerate().find(|(_, r)| !(**r >= 0.0)) {
            if self.scheme == FluxScheme::Central || !value.is_finite() || value < -1e-300 {
                return Err(FpError::NegativeDensity {
                    index,
                    value,
                    time: self.time,
                });
            }
        }
        Ok(())
    }

    /// Steps with a uniform step size to land exactly on `t`.
    pub fn advance_to(&mut self, t: f64, dt_max: f64) -> Result<()> {
        let span = t - self.time;
        if span <= 0.0 {
            return Ok(());
        }
        let dt_cap = dt_max.min(self.uniform_cfl_bound());
        let n = (span / dt_cap).ceil() as u64;
        let dt = span / n as f64;
        for _ in 0..n {
            self.step(dt)?;
        }
        self.time = t;
        Ok(())
    }
}

/// Tabulates `mu0` on `grid`, dropping mass that falls outside it (with a
/// warning) and renormalizing.
pub fn onto_grid(mu0: &GridMeasure, grid: GridSpec) -> Result<GridMeasure> {
    if *mu0.grid() == grid {
        return Ok(mu0.clone());
    }
    let src = mu0.grid();
    let dx = src.dx();
    let outside: f64 = mu0
        .density()
        .iter()
        .enumerate()
        .filter(|(i, _)| !grid.contains(src.center(*i)))
        .map(|(_, d)| d * dx)
        .sum();
    if outside > 0.0 {
        warn!("initial law has mass {outside:.3e} outside [{}, {}]; clipped and renormalized", grid.x_min, grid.x_max);
    }
    Ok(mu0.resample(grid)?)
}

/// One step of size `cfg.dt` from `state`.
pub fn fp_step(
    state: &FPState,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    cfg: &FPConfig,
) -> Result<FPState> {
    let mut s = FpSolver::new(&state.mu, vp, alpha, sigma, cfg.grid, cfg.scheme)?;
    s.time = state.time;
    s.step(cfg.dt)?;
    s.state()
}

/// Per-snapshot diagnostics of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpDiagnostics {
    pub times: Vec<f64>,
    pub mass: Vec<f64>,
    pub m1: Vec<f64>,
    pub free_energy: Vec<f64>,
    pub w2_plus: Vec<f64>,
    pub w2_zero: Vec<f64>,
    pub w2_minus: Vec<f64>,
    /// Step size actually used.
    pub dt: f64,
    pub steps: u64,
    pub max_mass_drift_per_step: f64,
    /// Largest single-step free-energy increase (negative when F always
    /// decreased); NaN when energy tracking is off.
    pub max_energy_increase: f64,
}

#[derive(Debug, Clone)]
pub struct FpRun {
    pub snapshots: Vec<FPState>,
    pub diagnostics: FpDiagnostics,
}

/// Runs to `cfg.t_final` with a uniform step `min(cfg.dt, CFL bound)`,
/// recording every `cfg.record_every` steps and at the end.
pub fn fp_evolve(
    mu0: &GridMeasure,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    cfg: &FPConfig,
    targets: Option<&SteadyTargets>,
) -> Result<FpRun> {
    cfg.validate()?;
    let mut solver = FpSolver::new(mu0, vp, alpha, sigma, cfg.grid, cfg.scheme)?;
    let dt_cap = cfg.dt.min(solver.uniform_cfl_bound());
    let n_steps = (cfg.t_final / dt_cap).ceil() as u64;
    let dt = cfg.t_final / n_steps as f64;

    let mut snapshots = vec![solver.state()?];
    let mut max_mass_drift = 0.0f64;
    let mut max_energy_increase = f64::NEG_INFINITY;
    let mut mass = solver.mass();
    let mut energy = if cfg.track_energy { solver.free_energy()? } else { f64::NAN };
    for k in 1..=n_steps {
        solver.step(dt)?;
        let m = solver.mass();
        max_mass_drift = max_mass_drift.max((m - mass).abs());
        mass = m;
        if cfg.track_energy {
            let e = solver.free_energy()?;
            max_energy_increase = max_energy_increase.max(e - energy);
            energy = e;
        }
        if k % cfg.record_every as u64 == 0 || k == n_steps {
            if k == n_steps {
                solver.time = cfg.t_final;
            }
            snapshots.push(solver.state()?);
        }
    }
    if !cfg.track_energy {
        max_energy_increase = f64::NAN;
    }

    let dist = |mu: &GridMeasure, t: Option<&GridMeasure>| t.map_or(f64::NAN, |nu| wasserstein2(mu, nu));
    let mut diag = FpDiagnostics {
        times: Vec::new(),
        mass: Vec::new(),
        m1: Vec::new(),
        free_energy: Vec::new(),
        w2_plus: Vec::new(),
        w2_zero: Vec::new(),
        w2_minus: Vec::new(),
        dt,
        steps: n_steps,
        max_mass_drift_per_step: max_mass_drift,
        max_energy_increase,
    };
    for s in &snapshots {
        diag.times.push(s.time);
        diag.mass.push(s.mu.mass());
        diag.m1.push(s.m1);
        diag.free_energy.push(entropy_and_free_energy(&s.mu, vp, alpha, sigma).1);
        diag.w2_plus.push(dist(&s.mu, targets.and_then(|t| t.plus.as_ref())));
        diag.w2_zero.push(dist(&s.mu, targets.map(|t| &t.zero)));
        diag.w2_minus.push(dist(&s.mu, targets.and_then(|t| t.minus.as_ref())));
    }
    Ok(FpRun {
        snapshots,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{validate, PolynomialPotential};
    use crate::quadrature::QuadratureSpec;
    use crate::steady_state::{steady_density, steady_grid};

    fn quartic() -> ValidatedPotential {
        validate(&PolynomialPotential::quartic()).unwrap()
    }

    #[test]
    fn bernoulli_identity() {
        for z in [-30.0, -1.0, -1e-9, 0.0, 1e-9, 0.3, 5.0, 40.0] {
            let lhs = bernoulli(-z);
            let rhs = bernoulli(z) + z;
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "z={z}");
        }
    }

    #[test]
    fn symmetric_steady_state_is_stationary() {
        let vp = quartic();
        let q = QuadratureSpec::default();
        let g = steady_grid(&vp, 1.0, 0.5, 0.0, 512, &q).unwrap();
        let nu0 = steady_density(&vp, 1.0, 0.5, 0.0, g, &q).unwrap();
        let mut s = FpSolver::new(&nu0, &vp, 1.0, 0.5, g, FluxScheme::ChangCooper).unwrap();
        let dt = s.uniform_cfl_bound();
        for _ in 0..100 {
            let before = s.density().to_vec();
            s.step(dt).unwrap();
            let drift = before
                .iter()
                .zip(s.density())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(drift <= 1e-10, "{drift}");
        }
    }

    #[test]
    fn mass_conserved_and_positive() {
        let vp = quartic();
        let g = GridSpec::symmetric(3.0, 256).unwrap();
        let mu0 = GridMeasure::gaussian(g, 0.8, 0.2).unwrap();
        let mut s = FpSolver::new(&mu0, &vp, 1.0, 0.5, g, FluxScheme::ChangCooper).unwrap();
        s.advance_to(1.0, 1e-3).unwrap();
        assert!((s.mass() - 1.0).abs() < 1e-12);
        assert!(s.density().iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn symmetry_preserved() {
        let vp = quartic();
        let g = GridSpec::symmetric(3.0, 200).unwrap();
        let mu0 = GridMeasure::from_fn(g, |x| (-(x * x - 0.5f64).powi(2) * 4.0).exp()).unwrap();
        let mut s = FpSolver::new(&mu0, &vp, 1.0, 0.5, g, FluxScheme::ChangCooper).unwrap();
        s.advance_to(2.0, 1e-3).unwrap();
        let r = s.density();
        let n = r.len();
        let asym = (0..n).map(|i| (r[i] - r[n - 1 - i]).abs()).fold(0.0, f64::max);
        assert!(asym <= 1e-12, "{asym}");
    }

    #[test]
    fn mean_identity() {
        let vp = quartic();
        let g = GridSpec::symmetric(3.0, 600).unwrap();
        let mu0 = GridMeasure::gaussian(g, 0.4, 0.3).unwrap();
        let mut s = FpSolver::new(&mu0, &vp, 2.0, 0.5, g, FluxScheme::ChangCooper).unwrap();
        let dt = 0.5 * s.uniform_cfl_bound();
        let m_before = s.m1();
        let dx = g.dx();
        let avg_grad: f64 = s
            .density()
            .iter()
            .enumerate()
            .map(|(i, r)| vp.grad(g.center(i)) * r)
            .sum::<f64>()
            * dx;
        s.step(dt).unwrap();
        let rate = (s.m1() - m_before) / dt;
        assert!((rate + avg_grad).abs() < 1e-3, "{rate} vs {}", -avg_grad);
    }

    #[test]
    fn cfl_violation_reported() {
        let vp = quartic();
        let g = GridSpec::symmetric(3.0, 256).unwrap();
        let mu0 = GridMeasure::gaussian(g, 0.0, 0.5).unwrap();
        let mut s = FpSolver::new(&mu0, &vp, 1.0, 0.5, g, FluxScheme::ChangCooper).unwrap();
        assert!(matches!(s.step(1.0), Err(FpError::CflViolation { .. })));
    }

    #[test]
    fn central_scheme_agrees_on_smooth_data() {
        let vp = quartic();
        let g = GridSpec::symmetric(3.0, 800).unwrap();
        let mu0 = GridMeasure::gaussian(g, 0.5, 0.4).unwrap();
        let run = |scheme| {
            let mut s = FpSolver::new(&mu0, &vp, 1.0, 0.5, g, scheme).unwrap();
            s.advance_to(1.0, 1e-3).unwrap();
            s.measure().unwrap()
        };
        let a = run(FluxScheme::ChangCooper);
        let b = run(FluxScheme::Central);
        assert!(wasserstein2(&a, &b) < 1e-3);
    }

    #[test]
    fn clipped_initial_mass_renormalized() {
        let wide = GridSpec::symmetric(6.0, 600).unwrap();
        let mu = GridMeasure::gaussian(wide, 2.5, 0.5).unwrap();
        let narrow = GridSpec::symmetric(3.0, 300).unwrap();
        let out = onto_grid(&mu, narrow).unwrap();
        assert!((out.mass() - 1.0).abs() < 1e-12);
    }
}
