//! Euler–Maruyama simulation of the interacting particle system
//! `dX = -V'(X) dt - α (X - mean(X)) dt + σ dB`, of the frozen-mean diffusion
//! `dY = -V'(Y) dt - α (Y - m*) dt + σ dB`, and of their synchronous coupling.
//!
//! Each particle owns a ChaCha stream selected by `(seed, particle index)`;
//! the increment drawn at step `k` is the `k`-th normal of that stream. The
//! noise is therefore a pure function of `(seed, i, k)`, independent of how
//! the particle loop is scheduled across threads, and two ensembles built
//! from the same seed see identical increments.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;
use thiserror::Error;

use crate::measures::{wasserstein2_sorted_to_measure, GridMeasure};
use crate::potential::ValidatedPotential;
use crate::steady_state::{classify_nearest, SteadyLimit, SteadyTargets};

/// Positions beyond this magnitude abort the run.
pub const OVERFLOW_GUARD: f64 = 1e6;
/// Tolerance below which `X_i < Y_i` is not counted as an order violation.
pub const ORDER_TOL: f64 = 1e-9;
const STABILITY_LIMIT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("particle {index} left the overflow guard at t = {time}: x = {value}")]
    BlowUp { index: usize, time: f64, value: f64 },
    #[error("time step {dt} too large: dt * (alpha + max|V''|) = {product} >= 0.5")]
    Unstable { dt: f64, product: f64 },
    #[error("inverse-CDF sampling produced a non-finite position")]
    DegenerateCdf,
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_particles: usize,
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    /// Steps between recorded snapshots.
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_particles: 10_000,
            dt: 1e-3,
            t_final: 30.0,
            seed: 0,
            record_every: 100,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(SimError::InvalidConfig("n_particles must be at least 2".into()));
        }
        if !(self.dt > 0.0 && self.t_final > 0.0) {
            return Err(SimError::InvalidConfig("dt and t_final must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(SimError::InvalidConfig("record_every must be positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Rejects `dt` when `dt (α + max|V''|) ≥ 0.5` on `[-r, r]`.
    pub fn check_stability(&self, vp: &ValidatedPotential, alpha: f64, r: f64) -> Result<()> {
        let product = self.dt * (alpha + vp.max_abs_curvature(r));
        if product >= STABILITY_LIMIT {
            return Err(SimError::Unstable { dt: self.dt, product });
        }
        Ok(())
    }
}

/// Noise stream of particle `index`.
pub fn particle_stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Uniform on `(0, 1)` from 53 random bits.
#[inline]
fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal by inversion of the CDF.
#[inline]
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * open_uniform(rng))
}

/// `N` particle positions with their noise streams.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
    streams: Vec<ChaCha8Rng>,
    time: f64,
    steps: u64,
}

impl ParticleEnsemble {
    /// Ensemble at given positions with fresh streams for `seed`.
    pub fn from_positions(positions: Vec<f64>, seed: u64) -> Self {
        let streams = (0..positions.len()).map(|i| particle_stream(seed, i)).collect();
        ParticleEnsemble {
            positions,
            streams,
            time: 0.0,
            steps: 0,
        }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Empirical mean, summed in particle order.
    pub fn mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.positions.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.positions.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Mirror image `x -> -x`, keeping the streams.
    pub fn reflect(&mut self) {
        self.positions.iter_mut().for_each(|x| *x = -*x);
    }

    fn advance<F>(&mut self, sigma: f64, dt: f64, drift: F) -> Result<()>
    where
        F: Fn(f64) -> f64 + Sync,
    {
        let noise = sigma * dt.sqrt();
        self.positions
            .par_iter_mut()
            .zip(self.streams.par_iter_mut())
            .for_each(|(x, rng)| {
                let g = standard_normal(rng);
                *x += drift(*x) * dt + noise * g;
            });
        self.steps += 1;
        self.time = self.steps as f64 * dt;
        if let Some((index, &value)) = self
            .positions
            .iter()
            .enumerate()
            .find(|(_, x)| !(x.abs() <= OVERFLOW_GUARD))
        {
            return Err(SimError::BlowUp {
                index,
                time: self.time,
                value,
            });
        }
        Ok(())
    }
}

/// `N` i.i.d. draws from `mu0` by inverse-CDF sampling; the first word of each
/// particle stream is spent on its initial position.
pub fn init_ensemble(mu0: &GridMeasure, cfg: &SimConfig) -> Result<ParticleEnsemble> {
    cfg.validate()?;
    let q = mu0.quantiles();
    let mut streams: Vec<ChaCha8Rng> = (0..cfg.n_particles)
        .map(|i| particle_stream(cfg.seed, i))
        .collect();
    let positions: Vec<f64> = streams.iter_mut().map(|rng| q.at(open_uniform(rng))).collect();
    if positions.iter().any(|x| !x.is_finite()) {
        return Err(SimError::DegenerateCdf);
    }
    Ok(ParticleEnsemble {
        positions,
        streams,
        time: 0.0,
        steps: 0,
    })
}

/// One step of the interacting system; the mean is taken from the pre-step
/// positions.
pub fn step_mkv(
    ens: &mut ParticleEnsemble,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    dt: f64,
) -> Result<()> {
    let mean = ens.mean();
    ens.advance(sigma, dt, |x| -(vp.grad(x) + alpha * (x - mean)))
}

/// One step of the frozen-mean diffusion.
pub fn step_frozen(
    ens: &mut ParticleEnsemble,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    frozen_mean: f64,
    dt: f64,
) -> Result<()> {
    ens.advance(sigma, dt, |x| -(vp.grad(x) + alpha * (x - frozen_mean)))
}

/// Positions recorded at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub positions: Vec<f64>,
}

impl Snapshot {
    fn of(ens: &ParticleEnsemble) -> Self {
        Snapshot {
            time: ens.time(),
            positions: ens.positions().to_vec(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.positions.len() as f64
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut s = self.positions.clone();
        s.sort_by(f64::total_cmp);
        s
    }
}

/// Per-snapshot diagnostics of a particle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub empirical_means: Vec<f64>,
    pub w2_to_nu_plus: Vec<f64>,
    pub w2_to_nu_zero: Vec<f64>,
    pub w2_to_nu_minus: Vec<f64>,
    /// First step time at which the empirical mean is `≤ threshold`.
    pub t0_hit: Option<f64>,
    pub threshold: Option<f64>,
    /// Smallest empirical mean seen at any step.
    pub min_mean: f64,
    pub nearest_final: SteadyLimit,
}

/// W2 of each snapshot to the three steady laws (NaN where a law is absent),
/// and the nearest law at the last snapshot.
pub fn trajectory_diagnostics(
    snapshots: &[Snapshot],
    targets: &SteadyTargets,
    threshold: Option<f64>,
    t0_hit: Option<f64>,
    min_mean: f64,
) -> TrajectoryRecord {
    let dist = |sorted: &[f64], t: Option<&GridMeasure>| {
        t.map_or(f64::NAN, |nu| wasserstein2_sorted_to_measure(sorted, nu))
    };
    let rows: Vec<(f64, f64, f64, f64, f64)> = snapshots
        .par_iter()
        .map(|s| {
            let sorted = s.sorted();
            (
                s.time,
                s.mean(),
                dist(&sorted, targets.plus.as_ref()),
                dist(&sorted, Some(&targets.zero)),
                dist(&sorted, targets.minus.as_ref()),
            )
        })
        .collect();
    let nearest_final = rows
        .last()
        .map_or(SteadyLimit::Undecided, |r| classify_nearest(r.2, r.3, r.4));
    TrajectoryRecord {
        times: rows.iter().map(|r| r.0).collect(),
        empirical_means: rows.iter().map(|r| r.1).collect(),
        w2_to_nu_plus: rows.iter().map(|r| r.2).collect(),
        w2_to_nu_zero: rows.iter().map(|r| r.3).collect(),
        w2_to_nu_minus: rows.iter().map(|r| r.4).collect(),
        t0_hit,
        threshold,
        min_mean,
        nearest_final,
    }
}

/// Output of [`run_particles`].
#[derive(Debug, Clone)]
pub struct ParticleRun {
    pub record: TrajectoryRecord,
    pub snapshots: Vec<Snapshot>,
}

/// Simulates the interacting system from `mu0` until `t_final`.
pub fn run_particles(
    mu0: &GridMeasure,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    cfg: &SimConfig,
    targets: &SteadyTargets,
    threshold: Option<f64>,
) -> Result<ParticleRun> {
    let ens = init_ensemble(mu0, cfg)?;
    run_particles_from(ens, vp, alpha, sigma, cfg, targets, threshold)
}

pub fn run_particles_from(
    mut ens: ParticleEnsemble,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    cfg: &SimConfig,
    targets: &SteadyTargets,
    threshold: Option<f64>,
) -> Result<ParticleRun> {
    cfg.validate()?;
    cfg.check_stability(vp, alpha, ens.max_abs().max(vp.a()))?;
    let mut snapshots = vec![Snapshot::of(&ens)];
    let mut t0_hit = None;
    let mut min_mean = ens.mean();
    let mut note_mean = |m: f64, t: f64, hit: &mut Option<f64>| {
        min_mean = min_mean.min(m);
        if let Some(th) = threshold {
            if hit.is_none() && m <= th {
                *hit = Some(t);
            }
        }
    };
    note_mean(ens.mean(), 0.0, &mut t0_hit);
    for k in 1..=cfg.n_steps() {
        step_mkv(&mut ens, vp, alpha, sigma, cfg.dt)?;
        note_mean(ens.mean(), ens.time(), &mut t0_hit);
        if k % cfg.record_every == 0 || k == cfg.n_steps() {
            snapshots.push(Snapshot::of(&ens));
        }
    }
    let record = trajectory_diagnostics(&snapshots, targets, threshold, t0_hit, min_mean);
    Ok(ParticleRun { record, snapshots })
}

/// W2 of the frozen diffusion to its invariant law over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenRecord {
    pub frozen_mean: f64,
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub w2_to_invariant: Vec<f64>,
}

/// Simulates the frozen-mean diffusion from `ens` and records the
/// sorted-sample W2 distance to `invariant` every `record_every` steps.
pub fn run_frozen(
    mut ens: ParticleEnsemble,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    frozen_mean: f64,
    cfg: &SimConfig,
    invariant: &GridMeasure,
) -> Result<(FrozenRecord, Vec<Snapshot>)> {
    cfg.validate()?;
    cfg.check_stability(vp, alpha, ens.max_abs().max(vp.a()))?;
    let mut snapshots = vec![Snapshot::of(&ens)];
    for k in 1..=cfg.n_steps() {
        step_frozen(&mut ens, vp, alpha, sigma, frozen_mean, cfg.dt)?;
        if k % cfg.record_every == 0 || k == cfg.n_steps() {
            snapshots.push(Snapshot::of(&ens));
        }
    }
    let w2: Vec<f64> = snapshots
        .par_iter()
        .map(|s| wasserstein2_sorted_to_measure(&s.sorted(), invariant))
        .collect();
    Ok((
        FrozenRecord {
            frozen_mean,
            times: snapshots.iter().map(|s| s.time).collect(),
            means: snapshots.iter().map(Snapshot::mean).collect(),
            w2_to_invariant: w2,
        },
        snapshots,
    ))
}

/// Order and contraction diagnostics of the synchronous coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledRecord {
    pub frozen_mean: f64,
    /// Particle-steps with `X_i < Y_i - ORDER_TOL`, counted while the
    /// empirical mean of `X` has stayed `≥ m(σ) - δ`.
    pub order_violations: u64,
    pub max_violation: f64,
    /// `(t, W2(law(Y_t), μ^{m(σ)-δ,σ}))` at each snapshot.
    pub contraction_w2: Vec<(f64, f64)>,
    /// Smallest `mean(X) - (m(σ) - δ)` over the run.
    pub min_gate_margin: f64,
}

/// Runs `X` (interacting) and `Y` (frozen at `m(σ) - δ`) from the same draws
/// with the same increments.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled(
    mu0: &GridMeasure,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    m_sigma: f64,
    delta: f64,
    cfg: &SimConfig,
    targets: &SteadyTargets,
    frozen_target: &GridMeasure,
) -> Result<(TrajectoryRecord, CoupledRecord)> {
    if !(delta > 0.0 && delta < m_sigma) {
        return Err(SimError::InvalidConfig(format!(
            "delta {delta} outside (0, {m_sigma})"
        )));
    }
    let frozen_mean = m_sigma - delta;
    let mut x = init_ensemble(mu0, cfg)?;
    cfg.check_stability(vp, alpha, x.max_abs().max(vp.a()))?;
    let mut y = x.clone();

    let mut x_snaps = vec![Snapshot::of(&x)];
    let mut y_snaps = vec![Snapshot::of(&y)];
    let mut t0_hit = None;
    let mut min_mean = x.mean();
    let mut min_gate_margin = x.mean() - frozen_mean;
    let mut gate_open = x.mean() > frozen_mean || x.mean() >= frozen_mean;
    if !gate_open {
        t0_hit = Some(0.0);
    }
    let mut order_violations = 0u64;
    let mut max_violation = 0.0f64;

    for k in 1..=cfg.n_steps() {
        step_mkv(&mut x, vp, alpha, sigma, cfg.dt)?;
        step_frozen(&mut y, vp, alpha, sigma, frozen_mean, cfg.dt)?;
        if gate_open {
            for (xi, yi) in x.positions().iter().zip(y.positions()) {
                let gap = yi - xi;
                if gap > ORDER_TOL {
                    order_violations += 1;
                    max_violation = max_violation.max(gap);
                }
            }
        }
        let mx = x.mean();
        min_mean = min_mean.min(mx);
        min_gate_margin = min_gate_margin.min(mx - frozen_mean);
        if gate_open && mx <= frozen_mean {
            gate_open = false;
            t0_hit = Some(x.time());
        }
        if k % cfg.record_every == 0 || k == cfg.n_steps() {
            x_snaps.push(Snapshot::of(&x));
            y_snaps.push(Snapshot::of(&y));
        }
    }
    let record = trajectory_diagnostics(&x_snaps, targets, Some(frozen_mean), t0_hit, min_mean);
    let contraction_w2 = y_snaps
        .par_iter()
        .map(|s| (s.time, wasserstein2_sorted_to_measure(&s.sorted(), frozen_target)))
        .collect();
    Ok((
        record,
        CoupledRecord {
            frozen_mean,
            order_violations,
            max_violation,
            contraction_w2,
            min_gate_margin,
        },
    ))
}
