//! Run configuration (TOML).
//!
//! ```toml
//! seed = 42
//! output = "runs/sim"            # optional, see `resolve_output`
//! baseline = true                # also train the single-output baseline
//! truncation = { count = 20 }    # or { variance_threshold = 0.95 }
//!
//! [simulation]                   # either this table ...
//! nx = 64
//! ny = 48
//! cell_size = 1.0
//! stations = [500, 250, 250]
//! n_components = 20
//! t_len = 256
//!
//! [data]                         # ... or this one
//! stations = "stations.csv"
//! measurements = "measurements.csv"
//! grid = "grid.csv"              # optional prediction grid
//! split = [0.6, 0.2, 0.2]
//!
//! [model]                        # network settings; `seed` is derived from the root seed
//! max_epochs = 300
//!
//! [variogram]
//! space_bins = 15
//! max_time_lag = 10
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stfield::eof::TruncationRule;
use stfield::model::MlpConfig;
use stfield::simulate::{GridSpec, GrfMethod, SimulationParams};

pub const OUTPUT_ROOT_ENV: &str = "STFIELD_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub simulation: Option<SimulationConfig>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default = "default_truncation")]
    pub truncation: TruncationRule,
    #[serde(default)]
    pub model: MlpConfig,
    #[serde(default)]
    pub variogram: VariogramConfig,
    #[serde(default)]
    pub maps: MapConfig,
}

fn default_truncation() -> TruncationRule {
    TruncationRule::VarianceThreshold(0.95)
}

/// Synthetic benchmark; defaults give the desk-scale replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
    pub origin: (f64, f64),
    /// Train, validation and test station counts.
    pub stations: [usize; 3],
    pub n_components: usize,
    pub t_len: usize,
    pub noise_ratio: f64,
    pub phi: f64,
    pub innovation_sd: f64,
    pub length_scale: f64,
    pub method: GrfMethod,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let p = SimulationParams {
            t_len: 256,
            ..SimulationParams::default()
        };
        Self {
            nx: 64,
            ny: 48,
            cell_size: 1.0,
            origin: (0.0, 0.0),
            stations: [500, 250, 250],
            n_components: p.n_components,
            t_len: p.t_len,
            noise_ratio: p.noise_ratio,
            phi: p.phi,
            innovation_sd: p.innovation_sd,
            length_scale: p.length_scale,
            method: p.method,
        }
    }
}

impl SimulationConfig {
    pub fn params(&self) -> SimulationParams {
        SimulationParams {
            n_components: self.n_components,
            t_len: self.t_len,
            noise_ratio: self.noise_ratio,
            phi: self.phi,
            innovation_sd: self.innovation_sd,
            length_scale: self.length_scale,
            method: self.method,
        }
    }

    pub fn grid(&self) -> stfield::Result<GridSpec> {
        GridSpec::new(self.nx, self.ny, self.cell_size, self.origin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub stations: PathBuf,
    pub measurements: PathBuf,
    #[serde(default)]
    pub grid: Option<PathBuf>,
    /// Train, validation and test fractions of the stations.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Fill missing values from space-time neighbours before splitting.
    #[serde(default = "yes")]
    pub impute: bool,
}

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariogramConfig {
    pub space_bins: usize,
    pub max_time_lag: usize,
    /// Residual surfaces with max/min γ (h > 0) above this are flagged.
    pub flatness_threshold: f64,
    /// Keep this fraction of station pairs (seeded); all pairs if absent.
    pub subsample: Option<f64>,
}

impl Default for VariogramConfig {
    fn default() -> Self {
        Self {
            space_bins: 15,
            max_time_lag: 10,
            flatness_threshold: 1.5,
            subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Time indices at which field maps are written.
    pub snapshots: Vec<usize>,
    /// Also write the full `cells × T` predicted field.
    pub full_field: bool,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            snapshots: vec![0],
            full_field: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(data) = &mut config.data {
            data.stations = base.join(&data.stations);
            data.measurements = base.join(&data.measurements);
            data.grid = data.grid.as_ref().map(|g| base.join(g));
        }
        config.output = config.output.as_ref().map(|o| base.join(o));
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.simulation, &self.data) {
            (Some(_), Some(_)) => bail!("configure either [simulation] or [data], not both"),
            (None, None) => bail!("configure one of [simulation] or [data]"),
            _ => {}
        }
        if let Some(sim) = &self.simulation {
            if sim.stations.contains(&0) {
                bail!("every station set needs at least one station, got {:?}", sim.stations);
            }
        }
        if let Some(data) = &self.data {
            if data.split.iter().any(|f| !(*f >= 0.0 && f.is_finite())) || data.split[1] == 0.0 {
                bail!("split fractions must be nonnegative with a nonzero validation share, got {:?}", data.split);
            }
        }
        self.model.validate()?;
        if self.variogram.space_bins == 0 {
            bail!("variogram.space_bins must be at least 1");
        }
        if let Some(f) = self.variogram.subsample {
            if !(f > 0.0 && f <= 1.0) {
                bail!("variogram.subsample must be in (0, 1]");
            }
        }
        Ok(())
    }
}

/// `--output`, else the config's `output`, else `$STFIELD_OUTPUT_ROOT/<name>`,
/// else `./stfield-out/<name>`.
pub fn resolve_output(cli: Option<&Path>, config: Option<&Path>, name: &str) -> PathBuf {
    if let Some(p) = cli.or(config) {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("stfield-out"));
    root.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simulation_config() {
        let c = RunConfig::from_toml(
            r#"
            seed = 7
            baseline = true
            truncation = { count = 5 }
            [simulation]
            nx = 16
            ny = 12
            stations = [30, 10, 10]
            n_components = 5
            t_len = 64
            [model]
            hidden_layers = 2
            "#,
        )
        .unwrap();
        let sim = c.simulation.unwrap();
        assert_eq!(sim.params().t_len, 64);
        assert_eq!(sim.noise_ratio, 0.10);
        assert_eq!(c.truncation, TruncationRule::Count(5));
        assert_eq!(c.model.hidden_layers, 2);
        assert_eq!(c.model.width, 100);
        assert_eq!(c.variogram.space_bins, 15);
    }

    #[test]
    fn requires_exactly_one_input() {
        assert!(RunConfig::from_toml("seed = 1").is_err());
        let both = r#"
            [simulation]
            nx = 4
            ny = 4
            stations = [3, 3, 3]
            [data]
            stations = "s.csv"
            measurements = "m.csv"
        "#;
        assert!(RunConfig::from_toml(both).is_err());
    }

    #[test]
    fn rejects_missing_validation_share() {
        let c = r#"
            [data]
            stations = "s.csv"
            measurements = "m.csv"
            split = [0.8, 0.0, 0.2]
        "#;
        assert!(RunConfig::from_toml(c).is_err());
        assert!(RunConfig::from_toml("[simulation]\nnx = 4\nny = 4\nstations = [3, 0, 3]").is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::from_toml("[simulation]\nnx = 4\nny = 4\nstations = [3, 3, 3]\nbogus = 1").is_err());
        assert!(RunConfig::from_toml("[simulation]\nnx = 4\nny = 4\nstations = [3, 3, 3]\n[model]\nwidht = 3").is_err());
    }

    #[test]
    fn output_resolution() {
        let p = resolve_output(Some(Path::new("a")), Some(Path::new("b")), "x");
        assert_eq!(p, PathBuf::from("a"));
        let p = resolve_output(None, Some(Path::new("b")), "x");
        assert_eq!(p, PathBuf::from("b"));
    }
}
