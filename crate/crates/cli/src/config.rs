//! Experiment configuration: a TOML file with dotted sections, optionally
//! patched by `--set key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml_edit::{DocumentMut, Item, Table, Value};

use granular_basin::condition::DeltaSearchSpec;
use granular_basin::fokker_planck::FluxScheme;
use granular_basin::{InitialMeasureSpec, PolynomialPotential, QuadratureSpec, SteadyStateSpec};

#[derive(Debug, Error)]
#[error("{origin}: {message}")]
pub struct ConfigError {
    pub origin: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(origin: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            origin: origin.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    /// Ascending powers.
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSection {
    /// `μ^{m,σ}`; give `m` directly or `m_frac` as a multiple of `m(σ)`.
    SteadyFamily {
        m: Option<f64>,
        m_frac: Option<f64>,
    },
    Gaussian {
        mean: f64,
        sd: f64,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<(f64, f64)>,
    },
    Tabulated {
        file: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n_cells: usize,
    /// Half-width of the symmetric domain; derived from the steady laws when
    /// absent.
    pub half_width: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            n_cells: 1024,
            half_width: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadySection {
    pub scan_points: usize,
    pub density_cells: usize,
    pub gap_cells: usize,
    pub with_sigma_c: bool,
}

impl Default for SteadySection {
    fn default() -> Self {
        SteadySection {
            scan_points: 512,
            density_cells: 2048,
            gap_cells: 2048,
            with_sigma_c: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionSection {
    pub n_delta: usize,
    pub mirror: bool,
}

impl Default for ConditionSection {
    fn default() -> Self {
        ConditionSection {
            n_delta: DeltaSearchSpec::default().n_delta,
            mirror: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticleSection {
    pub n_particles: usize,
    pub dt: f64,
    pub t_final: f64,
    pub record_every: usize,
    /// Write every recorded snapshot's positions.
    pub dump_positions: bool,
    /// Run the coupled pair with the frozen mean at `m(σ) - delta`.
    pub coupled_delta: Option<f64>,
}

impl Default for ParticleSection {
    fn default() -> Self {
        ParticleSection {
            n_particles: 10_000,
            dt: 1e-3,
            t_final: 30.0,
            record_every: 100,
            dump_positions: false,
            coupled_delta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSection {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: FluxScheme,
    pub record_every: usize,
    pub track_energy: bool,
}

impl Default for PdeSection {
    fn default() -> Self {
        PdeSection {
            dt: 1e-3,
            t_final: 30.0,
            scheme: FluxScheme::ChangCooper,
            record_every: 2000,
            track_energy: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFamily {
    /// `μ^{v,σ}` (`v · m(σ)` when relative).
    SteadyFamily,
    /// `μ^{-v,σ}`.
    Mirror,
    /// Normal laws with mean `v` and fixed `sd`.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Simulator {
    Particles,
    Pde,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub family: SweepFamily,
    pub values: Vec<f64>,
    /// Interpret `values` as multiples of `m(σ)` (steady families only).
    pub relative: bool,
    pub sd: f64,
    pub simulator: Simulator,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            family: SweepFamily::SteadyFamily,
            values: (1..=9).map(|k| k as f64 / 10.0).collect(),
            relative: true,
            sd: 0.3,
            simulator: Simulator::Particles,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub potential: PotentialSection,
    pub alpha: f64,
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub init: Option<InitSection>,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub steady: SteadySection,
    #[serde(default)]
    pub condition: ConditionSection,
    #[serde(default)]
    pub particles: ParticleSection,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    pub fn potential(&self) -> PolynomialPotential {
        PolynomialPotential {
            coefficients: self.potential.coeffs.clone(),
        }
    }

    pub fn steady_spec(&self) -> SteadyStateSpec {
        SteadyStateSpec {
            quadrature: self.quadrature,
            scan_points: self.steady.scan_points,
        }
    }

    pub fn delta_search(&self) -> DeltaSearchSpec {
        DeltaSearchSpec {
            n_delta: self.condition.n_delta,
        }
    }
}

/// Parsed configuration plus what is needed to point diagnostics back at
/// the source.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    source: String,
    overridden: Vec<String>,
}

impl LoadedConfig {
    /// Error about `key`, located at its line in the file or at the
    /// command-line override that set it.
    pub fn error_at(&self, key: &str, message: impl Into<String>) -> ConfigError {
        let origin = if self.overridden.iter().any(|k| k == key) {
            format!("--set {key}")
        } else {
            match locate_key(&self.source, key) {
                Some(line) => format!("{}:{line}: key `{key}`", self.path.display()),
                None => format!("{}: key `{key}`", self.path.display()),
            }
        };
        ConfigError::new(origin, message)
    }

    /// Resolves a path from the config relative to the config file.
    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    /// The initial law as a core spec; `m_sigma` resolves `m_frac`.
    pub fn initial_spec(&self, m_sigma: Option<f64>) -> Result<InitialMeasureSpec, ConfigError> {
        let init = self
            .config
            .init
            .as_ref()
            .ok_or_else(|| self.error_at("init", "this subcommand needs an [init] section"))?;
        Ok(match init {
            InitSection::SteadyFamily { m, m_frac } => match (m, m_frac) {
                (Some(m), None) => InitialMeasureSpec::SteadyFamily { m: *m },
                (None, Some(f)) => {
                    let ms = m_sigma.ok_or_else(|| {
                        self.error_at("init.m_frac", "m_frac needs a positive steady mean, but the steady state is unique at this sigma")
                    })?;
                    InitialMeasureSpec::SteadyFamily { m: f * ms }
                }
                _ => return Err(self.error_at("init", "steady_family needs exactly one of `m` and `m_frac`")),
            },
            InitSection::Gaussian { mean, sd } => InitialMeasureSpec::Gaussian { mean: *mean, sd: *sd },
            InitSection::Mixture { weights, components } => InitialMeasureSpec::Mixture {
                weights: weights.clone(),
                components: components.clone(),
            },
            InitSection::Tabulated { file } => InitialMeasureSpec::Tabulated {
                file: self.resolve_path(file),
            },
        })
    }

    fn check(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(self.error_at(key, format!("must be positive and finite, got {v}")))
            }
        };
        positive("alpha", c.alpha)?;
        positive("sigma", c.sigma)?;
        positive("particles.dt", c.particles.dt)?;
        positive("particles.t_final", c.particles.t_final)?;
        positive("pde.dt", c.pde.dt)?;
        positive("pde.t_final", c.pde.t_final)?;
        positive("quadrature.rel_tol", c.quadrature.rel_tol)?;
        positive("quadrature.truncation_factor", c.quadrature.truncation_factor)?;
        if let Some(h) = c.grid.half_width {
            positive("grid.half_width", h)?;
        }
        if c.grid.n_cells < 16 {
            return Err(self.error_at("grid.n_cells", "needs at least 16 cells"));
        }
        if c.particles.n_particles < 2 {
            return Err(self.error_at("particles.n_particles", "needs at least 2 particles"));
        }
        if c.particles.record_every == 0 {
            return Err(self.error_at("particles.record_every", "must be positive"));
        }
        if c.pde.record_every == 0 {
            return Err(self.error_at("pde.record_every", "must be positive"));
        }
        if c.quadrature.panel_order == 0 {
            return Err(self.error_at("quadrature.panel_order", "must be positive"));
        }
        if c.steady.scan_points < 8 {
            return Err(self.error_at("steady.scan_points", "needs at least 8 intervals"));
        }
        if c.potential.coeffs.iter().any(|v| !v.is_finite()) {
            return Err(self.error_at("potential.coeffs", "coefficients must be finite"));
        }
        Ok(())
    }
}

/// Reads `path`, applies the overrides and deserializes.
pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(path.display().to_string(), format!("cannot read config: {e}")))?;
    let mut doc: DocumentMut = source
        .parse()
        .map_err(|e: toml_edit::TomlError| ConfigError::new(path.display().to_string(), e.to_string()))?;
    let mut overridden = Vec::new();
    for o in overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| ConfigError::new(format!("--set {o}"), "expected key=value"))?;
        let key = key.trim();
        set_dotted(&mut doc, key, parse_value(value.trim()))
            .map_err(|m| ConfigError::new(format!("--set {key}"), m))?;
        overridden.push(key.to_string());
    }
    let effective = doc.to_string();
    let config: ExperimentConfig = toml::from_str(&effective).map_err(|e| {
        let key = e
            .span()
            .and_then(|s| key_at_offset(&effective, s.start))
            .unwrap_or_default();
        let origin = if overridden.contains(&key) {
            format!("--set {key}")
        } else {
            match (key.is_empty(), locate_key(&source, &key)) {
                (false, Some(line)) => format!("{}:{line}: key `{key}`", path.display()),
                (false, None) => format!("{}: key `{key}`", path.display()),
                _ => path.display().to_string(),
            }
        };
        ConfigError::new(origin, e.message().to_string())
    })?;
    let loaded = LoadedConfig {
        config,
        path: path.to_path_buf(),
        source,
        overridden,
    };
    loaded.check()?;
    Ok(loaded)
}

/// A TOML literal when it parses as one, else a string.
fn parse_value(raw: &str) -> Value {
    raw.parse::<Value>().unwrap_or_else(|_| Value::from(raw))
}

fn set_dotted(doc: &mut DocumentMut, key: &str, value: Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err("empty key segment".into());
    }
    let mut table: &mut Table = doc.as_table_mut();
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p).or_insert_with(|| Item::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| format!("`{p}` is not a table"))?;
    }
    table.insert(parts[parts.len() - 1], Item::Value(value));
    Ok(())
}

/// 1-based line of the dotted key's definition, or of its table header.
pub fn locate_key(source: &str, key: &str) -> Option<usize> {
    let mut section = String::new();
    let mut header_line = None;
    for (i, line) in source.lines().enumerate() {
        let t = strip_comment(line).trim();
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().trim_matches(|c| c == '[' || c == ']').to_string();
            if section == key {
                header_line = Some(i + 1);
            }
            continue;
        }
        if let Some((k, _)) = t.split_once('=') {
            let k = k.trim().trim_matches('"');
            let full = if section.is_empty() {
                k.to_string()
            } else {
                format!("{section}.{k}")
            };
            if full == key {
                return Some(i + 1);
            }
        }
    }
    header_line
}

/// Dotted key of the assignment or table header containing byte `offset`.
fn key_at_offset(source: &str, offset: usize) -> Option<String> {
    let mut section = String::new();
    let mut pos = 0;
    let mut last_key = None;
    for line in source.split_inclusive('\n') {
        let t = strip_comment(line).trim();
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().trim_matches(|c| c == '[' || c == ']').to_string();
            last_key = Some(section.clone());
        } else if let Some((k, _)) = t.split_once('=') {
            let k = k.trim().trim_matches('"');
            last_key = Some(if section.is_empty() {
                k.to_string()
            } else {
                format!("{section}.{k}")
            });
        }
        pos += line.len();
        if offset < pos {
            return last_key;
        }
    }
    last_key
}

fn strip_comment(line: &str) -> &str {
    // good enough for the flat schema: no '#' inside strings we accept
    line.split('#').next().unwrap_or("")
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "alpha = 1.0\nsigma = 0.5\n\n[potential]\ncoeffs = [0.0, 0.0, -0.5, 0.0, 0.25]\n";

    #[test]
    fn locates_keys() {
        assert_eq!(locate_key(BASE, "sigma"), Some(2));
        assert_eq!(locate_key(BASE, "potential.coeffs"), Some(5));
        assert_eq!(locate_key(BASE, "potential"), Some(4));
        assert_eq!(locate_key(BASE, "init.kind"), None);
    }

    #[test]
    fn key_at_offset_finds_assignment() {
        let off = BASE.find("[0.0").unwrap() + 2;
        assert_eq!(key_at_offset(BASE, off).as_deref(), Some("potential.coeffs"));
    }

    #[test]
    fn overrides_create_tables() {
        let mut doc: DocumentMut = BASE.parse().unwrap();
        set_dotted(&mut doc, "init.kind", parse_value("gaussian")).unwrap();
        set_dotted(&mut doc, "init.mean", parse_value("0.5")).unwrap();
        set_dotted(&mut doc, "init.sd", parse_value("0.25")).unwrap();
        let c: ExperimentConfig = toml::from_str(&doc.to_string()).unwrap();
        assert_eq!(c.init, Some(InitSection::Gaussian { mean: 0.5, sd: 0.25 }));
    }

    #[test]
    fn unknown_init_field_rejected() {
        let src = format!("{BASE}\n[init]\nkind = \"gaussian\"\nmean = 0.1\nsd = 0.2\nwidth = 3\n");
        assert!(toml::from_str::<ExperimentConfig>(&src).is_err());
    }
}
