//! Sufficient condition on an initial law for convergence to the positive
//! steady state, with a grid search for the witnessing `δ` and the mirrored
//! statement for the negative steady state.
//!
//! For `δ ∈ (0, m(σ))` the condition reads
//!
//! 1. `M(μ_0) > m(σ) - δ`, and
//! 2. `χ_σ(m(σ) - δ) > D(μ_0, μ^{m(σ)-δ,σ})`,
//!
//! where `D` is W2 when `α > θ` and the chi-square-type L2 distance otherwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{l2_distance, wasserstein2, GridMeasure, MeasureError};
use crate::potential::ValidatedPotential;
use crate::steady_state::{chi, find_m_sigma, steady_density, SteadyStateError, SteadyStateSpec};

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error("no positive steady mean at sigma = {sigma} (unique steady state)")]
    NoPositiveSteadyMean { sigma: f64 },
    #[error("delta = {delta} outside (0, {m_sigma})")]
    DeltaOutOfRange { delta: f64, m_sigma: f64 },
    #[error(transparent)]
    SteadyState(#[from] SteadyStateError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

type Result<T> = std::result::Result<T, ConditionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Wasserstein,
    L2,
}

impl Branch {
    /// Strict `α > θ` selects W2; `α ≤ θ` selects L2.
    pub fn select(alpha: f64, theta: f64) -> Branch {
        if alpha > theta {
            Branch::Wasserstein
        } else {
            Branch::L2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictedLimit {
    NuPlus,
    NuMinus,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub delta: f64,
    pub m_sigma: f64,
    pub mean_init: f64,
    /// `m(σ) - δ`
    pub threshold_mean: f64,
    pub branch: Branch,
    /// `χ_σ(m(σ) - δ)`
    pub lhs: f64,
    /// Distance from the initial law to `μ^{m(σ)-δ,σ}`; infinite when the
    /// initial law charges cells where the target vanishes (L2 branch).
    #[serde(with = "extended_real")]
    pub rhs: f64,
    pub condition1_pass: bool,
    pub condition2_pass: bool,
    pub predicted_limit: PredictedLimit,
}

impl ConditionReport {
    pub fn passes(&self) -> bool {
        self.condition1_pass && self.condition2_pass
    }

    /// `min(mean_init - (m(σ) - δ), lhs - rhs)`.
    pub fn margin(&self) -> f64 {
        (self.mean_init - self.threshold_mean).min(self.lhs - self.rhs)
    }
}

/// JSON has no infinity; `+∞` is written as the string `"inf"`.
mod extended_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeltaSearchSpec {
    /// Number of `δ` values on `(0, m(σ))`.
    pub n_delta: usize,
}

impl Default for DeltaSearchSpec {
    fn default() -> Self {
        DeltaSearchSpec { n_delta: 64 }
    }
}

/// The `δ` grid: `n` uniform points on `[m/128, m - m/128]`.
pub fn delta_grid(m_sigma: f64, n: usize) -> Vec<f64> {
    let n = n.max(8);
    let margin = m_sigma / 128.0;
    let span = m_sigma - 2.0 * margin;
    (0..n)
        .map(|j| margin + span * j as f64 / (n - 1) as f64)
        .collect()
}

/// Shared context for evaluating the condition at several `δ`.
pub struct ConditionChecker<'a> {
    vp: &'a ValidatedPotential,
    alpha: f64,
    sigma: f64,
    spec: SteadyStateSpec,
    m_sigma: f64,
}

impl<'a> ConditionChecker<'a> {
    pub fn new(
        vp: &'a ValidatedPotential,
        alpha: f64,
        sigma: f64,
        spec: &SteadyStateSpec,
    ) -> Result<Self> {
        let m_sigma = find_m_sigma(vp, alpha, sigma, spec)?
            .ok_or(ConditionError::NoPositiveSteadyMean { sigma })?;
        Ok(ConditionChecker {
            vp,
            alpha,
            sigma,
            spec: *spec,
            m_sigma,
        })
    }

    pub fn m_sigma(&self) -> f64 {
        self.m_sigma
    }

    pub fn branch(&self) -> Branch {
        Branch::select(self.alpha, self.vp.theta())
    }

    pub fn check(&self, mu0: &GridMeasure, delta: f64) -> Result<ConditionReport> {
        if !(delta > 0.0 && delta < self.m_sigma) {
            return Err(ConditionError::DeltaOutOfRange {
                delta,
                m_sigma: self.m_sigma,
            });
        }
        let quad = &self.spec.quadrature;
        let threshold = self.m_sigma - delta;
        let target = steady_density(self.vp, self.alpha, self.sigma, threshold, *mu0.grid(), quad)?;
        let lhs = chi(self.vp, self.alpha, self.sigma, threshold, quad)?;
        let branch = self.branch();
        let rhs = match branch {
            Branch::Wasserstein => wasserstein2(mu0, &target),
            Branch::L2 => match l2_distance(mu0, &target) {
                Ok(d) => d,
                Err(MeasureError::SupportMismatch { .. }) => f64::INFINITY,
                Err(e) => return Err(e.into()),
            },
        };
        let mean_init = mu0.mean();
        let condition1_pass = mean_init > threshold;
        let condition2_pass = lhs > rhs;
        Ok(ConditionReport {
            delta,
            m_sigma: self.m_sigma,
            mean_init,
            threshold_mean: threshold,
            branch,
            lhs,
            rhs,
            condition1_pass,
            condition2_pass,
            predicted_limit: if condition1_pass && condition2_pass {
                PredictedLimit::NuPlus
            } else {
                PredictedLimit::Undetermined
            },
        })
    }

    /// Reports at every `δ` of the search grid, in grid order.
    pub fn sweep(&self, mu0: &GridMeasure, search: &DeltaSearchSpec) -> Result<Vec<ConditionReport>> {
        delta_grid(self.m_sigma, search.n_delta)
            .par_iter()
            .map(|&d| self.check(mu0, d))
            .collect()
    }

    /// Passing report with the largest margin; ties keep the smaller `δ`.
    pub fn search(&self, mu0: &GridMeasure, search: &DeltaSearchSpec) -> Result<Option<ConditionReport>> {
        Ok(best_passing(self.sweep(mu0, search)?))
    }
}

pub fn best_passing(reports: Vec<ConditionReport>) -> Option<ConditionReport> {
    reports
        .into_iter()
        .filter(ConditionReport::passes)
        .fold(None, |best: Option<ConditionReport>, r| match best {
            Some(b) if b.margin() >= r.margin() => Some(b),
            _ => Some(r),
        })
}

pub fn check_condition(
    mu0: &GridMeasure,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    delta: f64,
    spec: &SteadyStateSpec,
) -> Result<ConditionReport> {
    ConditionChecker::new(vp, alpha, sigma, spec)?.check(mu0, delta)
}

pub fn search_delta(
    mu0: &GridMeasure,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    search: &DeltaSearchSpec,
    spec: &SteadyStateSpec,
) -> Result<Option<ConditionReport>> {
    ConditionChecker::new(vp, alpha, sigma, spec)?.search(mu0, search)
}

/// Runs [`search_delta`] on the reflection of `mu0`; a success predicts
/// convergence to the negative steady state.
pub fn mirror_check(
    mu0: &GridMeasure,
    vp: &ValidatedPotential,
    alpha: f64,
    sigma: f64,
    search: &DeltaSearchSpec,
    spec: &SteadyStateSpec,
) -> Result<Option<ConditionReport>> {
    let reflected = mu0.reflect();
    Ok(search_delta(&reflected, vp, alpha, sigma, search, spec)?.map(|mut r| {
        r.predicted_limit = PredictedLimit::NuMinus;
        r
    }))
}
