use std::fs;
use std::path::{Path, PathBuf};

use lagrank::correlation::CorrelationConfig;
use lagrank::predictor::{ForecastConfig, TrainConfig};
use lagrank::windowing::WindowingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// JSON run configuration. Relative paths are resolved against the directory
/// holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub incidence: Option<PathBuf>,
    pub locations: Option<PathBuf>,
    pub weather: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    /// Precomputed `pic_id,gamma_c,gamma_p,gamma_d` rows; ranks without data.
    pub weights: Option<PathBuf>,
    pub target: Option<String>,
    pub windowing: WindowingConfig,
    pub correlation: CorrelationConfig,
    pub split: [f64; 3],
    pub t_in: usize,
    pub t_out: usize,
    pub batch_size: usize,
    pub train: TrainConfig,
    pub use_weather: bool,
    pub n_pic: usize,
    pub n_max: usize,
    pub top_k: usize,
    pub dump_matrices: bool,
    pub start: Option<String>,
    pub end: Option<String>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let f = ForecastConfig::default();
        Self {
            incidence: None,
            locations: None,
            weather: None,
            regions: None,
            weights: None,
            target: None,
            windowing: WindowingConfig::default(),
            correlation: CorrelationConfig::default(),
            split: f.split,
            t_in: f.t_in,
            t_out: f.t_out,
            batch_size: f.batch_size,
            train: f.train,
            use_weather: false,
            n_pic: 4,
            n_max: 10,
            top_k: 40,
            dump_matrices: false,
            start: None,
            end: None,
            seed: 0,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.incidence,
            &mut cfg.locations,
            &mut cfg.weather,
            &mut cfg.regions,
            &mut cfg.weights,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn forecast(&self) -> ForecastConfig {
        ForecastConfig {
            split: self.split,
            t_in: self.t_in,
            t_out: self.t_out,
            batch_size: self.batch_size,
            weather: self.use_weather,
            train: TrainConfig {
                seed: self.seed,
                ..self.train.clone()
            },
        }
    }

    pub fn target(&self) -> Result<&str, CliError> {
        self.target
            .as_deref()
            .ok_or_else(|| CliError::Usage("no target given (config `target` or --target)".into()))
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("no output directory given (config `out` or --out)".into()))
    }

    /// SHA-256 of the effective configuration's JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn metadata_line(&self) -> String {
        format!("# config_sha256={} seed={}\n", self.digest(), self.seed)
    }

    pub fn metadata_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config_sha256": self.digest(),
            "seed": self.seed,
            "tool": concat!("lagrank ", env!("CARGO_PKG_VERSION")),
        })
    }
}
