use std::collections::BTreeMap;
use std::path::Path;

use pathosynth::pipeline::GenConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Generator settings read from a TOML file; command-line flags override them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub num_batches: u64,
    pub batch_size: usize,
    pub sample_size: [usize; 3],
    pub workers: usize,
    /// Per-dataset sampling weights; these override the manifest's.
    pub weights: BTreeMap<String, f64>,
    #[serde(flatten)]
    pub generation: GenConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 0,
            num_batches: 1,
            batch_size: 4,
            sample_size: [128; 3],
            workers: 1,
            weights: BTreeMap::new(),
            generation: GenConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Generation settings with the output size filled in.
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            sample_size: Some(self.sample_size),
            ..self.generation.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.batch_size == 0 {
            return Err(CliError::Usage("batch size must be positive".into()));
        }
        if self.workers == 0 {
            return Err(CliError::Usage("worker count must be positive".into()));
        }
        self.gen_config().validate().map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// `128` or `160x192x160`.
pub fn parse_size(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad size `{s}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let size = match nums[..] {
        [n] => [n; 3],
        [x, y, z] => [x, y, z],
        _ => return Err(format!("bad size `{s}`: expected N or NxNxN")),
    };
    if size.contains(&0) {
        return Err(format!("bad size `{s}`: extents must be positive"));
    }
    Ok(size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("128").unwrap(), [128; 3]);
        assert_eq!(parse_size("16x24x32").unwrap(), [16, 24, 32]);
        assert!(parse_size("16x24").is_err());
        assert!(parse_size("0").is_err());
    }

    #[test]
    fn toml_overrides_nested_defaults() {
        let c: GeneratorConfig =
            toml::from_str("seed = 7\nbatch_size = 2\n[deformation]\nrotation_deg = 5.0\n[weights]\natlas = 0.5\n")
                .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.batch_size, 2);
        assert_eq!(c.sample_size, [128; 3]);
        assert_eq!(c.generation.deformation.rotation_deg, 5.0);
        assert_eq!(c.generation.deformation.scaling, 0.15);
        assert_eq!(c.weights["atlas"], 0.5);
    }
}
