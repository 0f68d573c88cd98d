//! Analysis configuration file. Command-line flags override its values.

use std::path::{Path, PathBuf};

use psbounds::data::CategoryAliases;
use psbounds::diagnostics::DiagnosticKind;
use psbounds::simulation::{CovariateChoice, SimScenario};
use psbounds::slicing::SlicePlan;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    #[default]
    Pretty,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<Format>,
    #[serde(default)]
    pub aliases: CategoryAliases,
    /// Assignment probability for inputs without a `prob_treat` column.
    pub default_prob_treat: Option<f64>,
    pub slicing: Option<SlicePlan>,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub simulation: SimulationSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    pub replicates: Option<usize>,
    pub percentile_alpha: Option<f64>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub kinds: Vec<DiagnosticKind>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Shipped preset name.
    pub preset: Option<String>,
    /// Scenario file; takes precedence over `preset`.
    pub scenario_file: Option<PathBuf>,
    pub workers: Option<usize>,
    pub noise_grid: Option<NoiseGridSpec>,
    pub sample_size: Option<SampleSizeSpec>,
    pub slice_count: Option<SliceCountSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseGridSpec {
    pub variances: Vec<f64>,
    pub trials: usize,
    #[serde(default = "four")]
    pub bins: usize,
    #[serde(default = "three")]
    pub secondary_bins: usize,
    #[serde(default = "all_choices")]
    pub choices: Vec<CovariateChoice>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSizeSpec {
    pub n: Vec<usize>,
    pub trials: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceCountSpec {
    pub bins: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub covariate: usize,
    pub bootstrap_replicates: Option<usize>,
    /// Covariate noise standard deviations, overriding the scenario's.
    pub noise_sd: Option<[f64; 3]>,
}

fn four() -> usize {
    4
}

fn three() -> usize {
    3
}

fn all_choices() -> Vec<CovariateChoice> {
    CovariateChoice::ALL.to_vec()
}

impl AnalysisConfig {
    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: AnalysisConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        rebase(&mut cfg.input);
        rebase(&mut cfg.out_dir);
        rebase(&mut cfg.simulation.scenario_file);
        Ok(cfg)
    }

    pub fn scenario(&self, preset_flag: Option<&str>) -> Result<SimScenario, CliError> {
        let sim = &self.simulation;
        if let Some(name) = preset_flag {
            return SimScenario::preset(name).map_err(|e| CliError::Config(e.to_string()));
        }
        if let Some(path) = &sim.scenario_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            return SimScenario::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
        }
        SimScenario::preset(sim.preset.as_deref().unwrap_or("echs")).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_example_parses() {
        let text = include_str!("../examples/analysis.toml");
        let cfg: AnalysisConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.slicing.unwrap().covariate, "x1");
        assert!(cfg.simulation.noise_grid.is_some());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<AnalysisConfig>("inptu = \"a.csv\"").is_err());
        assert!(toml::from_str::<AnalysisConfig>("[slicing]\ncovariate = \"x1\"\nbin = 3").is_err());
    }
}
