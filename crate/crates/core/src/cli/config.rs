//! Optional TOML defaults for the subcommands. Command-line flags override
//! anything set here.

use std::path::Path;

use serde::Deserialize;

use crate::error::{PolylogueError, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub threads: Option<usize>,
    #[serde(default)]
    pub extract: ExtractSection,
    #[serde(default)]
    pub whiten: WhitenSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub plot: PlotSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractSection {
    pub alpha: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhitenSection {
    pub lambda: Option<f64>,
    pub eig_floor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturesSection {
    pub n_bins: Option<usize>,
    pub components: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub seed: Option<u64>,
    pub c_min: Option<f64>,
    pub c_max: Option<f64>,
    pub c_count: Option<usize>,
    pub outer_folds: Option<usize>,
    pub inner_folds: Option<usize>,
    pub tolerance: Option<f64>,
    pub max_sweeps: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    pub top_k: Option<usize>,
    pub n_bins: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    pub beta: Option<f64>,
    pub mass_threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub seed: Option<u64>,
    pub traces: Option<usize>,
    pub hidden_size: Option<usize>,
    pub gamma: Option<f64>,
    pub noise_ratio: Option<f64>,
    pub paragraphs: Option<usize>,
    pub extraction_traces: Option<usize>,
    pub label_bin: Option<usize>,
    pub label_persona: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSection {
    pub n_bins: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PolylogueError::io(path, e))?;
        toml::from_str(&text).map_err(|e| PolylogueError::Config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_rejects_typos() {
        let c: ConfigFile = toml::from_str("threads = 2\n[fit]\nseed = 3\nc_count = 4\n").unwrap();
        assert_eq!(c.threads, Some(2));
        assert_eq!(c.fit.seed, Some(3));
        assert!(c.whiten.lambda.is_none());
        assert!(toml::from_str::<ConfigFile>("[fit]\nsed = 3\n").is_err());
    }
}
