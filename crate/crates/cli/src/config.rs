use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tamperscope::eval::Predictor;
use tamperscope::metrics::{DEFAULT_MIN_AREA_FRAC, DEFAULT_THRESHOLD};
use tamperscope::model::ModelConfig;
use tamperscope::synth::{Perturbation, SplitAxis, SynthConfig};
use tamperscope::verify::VerifyConfig;
use tamperscope::{CoreError, Result};

/// Every setting a command can read. Loaded from a JSON file, then
/// overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub synth: SynthConfig,
    pub verify: VerifyConfig,
    pub data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
    /// Output directory. Not echoed, since the echo lives inside it.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub threshold: f64,
    pub min_area_frac: f64,
    pub predictor: Predictor,
    pub save_masks: bool,
    pub dump_affinity: bool,
    /// How a single infer image is cut into a pseudo-pair.
    pub split_axis: SplitAxis,
    pub sweep: Vec<Perturbation>,
    /// Stream for perturbation noise.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            synth: SynthConfig::default(),
            verify: VerifyConfig::default(),
            data: None,
            val_data: None,
            out: None,
            checkpoint: None,
            resume: None,
            threshold: DEFAULT_THRESHOLD,
            min_area_frac: DEFAULT_MIN_AREA_FRAC,
            predictor: Predictor::Model,
            save_masks: false,
            dump_affinity: false,
            split_axis: SplitAxis::Vertical,
            sweep: [-0.2, -0.1, 0.0, 0.1, 0.2].into_iter().map(Perturbation::Brightness).collect(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CoreError::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(0.0..=1.0).contains(&self.min_area_frac) {
            return Err(CoreError::Config(format!("min_area_frac {} outside [0, 1]", self.min_area_frac)));
        }
        self.sweep.iter().try_for_each(|p| p.validate().map_err(|e| CoreError::Config(e.to_string())))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| CoreError::Config("an output directory is required (--out)".into()))
    }

    pub fn data_dir(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| CoreError::Config("a dataset directory is required (--data)".into()))
    }

    /// Writes `effective_config.json` into the output directory, creating it.
    pub fn echo(&self) -> Result<PathBuf> {
        let dir = self.out_dir()?;
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        let path = dir.join("effective_config.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CoreError::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CoreError::io(path, e))
}
