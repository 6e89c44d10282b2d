//! Run configuration: defaults, then an optional JSON file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use mpnerf::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Everything a training run depends on besides the data itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub scene: Option<PathBuf>,
    pub collection: Option<PathBuf>,
    pub class: Option<String>,
    pub downsample: usize,
    /// Write an intermediate checkpoint every this many steps (0 = final only).
    pub checkpoint_every: usize,
    /// SHA-256 of the input files, filled in when a run starts.
    pub input_digest: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            scene: None,
            collection: None,
            class: None,
            downsample: 1,
            checkpoint_every: 0,
            input_digest: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        resolve(Some(path), Map::new())
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}

/// Flags shared by every command that trains. Each flag is named after the
/// config key it overrides.
#[derive(Args, Debug, Default, Clone)]
pub struct TrainFlags {
    /// JSON config file; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single-scene directory (transforms_{train,val,test}.json).
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Multi-object collection root (one directory per class).
    #[arg(long)]
    pub collection: Option<PathBuf>,
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long, alias = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long, alias = "final-lr")]
    pub final_learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_rays: Option<usize>,
    #[arg(long, alias = "iters")]
    pub iterations: Option<usize>,
    #[arg(long, alias = "samples")]
    pub samples_per_ray: Option<usize>,
    #[arg(long)]
    pub sigma_noise_std: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// standard | generalization
    #[arg(long)]
    pub mode: Option<String>,
    /// multi_plane | baseline
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n_refs: Option<usize>,
    /// first_n | azimuth_stratified
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub color_width: Option<usize>,
    #[arg(long)]
    pub dir_freqs: Option<usize>,
    #[arg(long)]
    pub uv_freqs: Option<usize>,
    #[arg(long)]
    pub near: Option<f64>,
    #[arg(long)]
    pub far: Option<f64>,
    /// white | black | r,g,b
    #[arg(long, value_parser = parse_background)]
    pub background: Option<[f64; 3]>,
    #[arg(long)]
    pub chunk_rays: Option<usize>,
}

pub fn parse_background(s: &str) -> Result<[f64; 3], String> {
    match s {
        "white" => Ok([1.0; 3]),
        "black" => Ok([0.0; 3]),
        other => {
            let parts: Vec<f64> = other
                .split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
            let rgb: [f64; 3] = parts
                .try_into()
                .map_err(|_| "expected white, black or r,g,b".to_string())?;
            if rgb.iter().all(|c| (0.0..=1.0).contains(c)) {
                Ok(rgb)
            } else {
                Err("background components must lie in [0, 1]".into())
            }
        }
    }
}

impl TrainFlags {
    fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        let mut set = |key: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(key.to_string(), v);
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned()));
        set("scene", path(&self.scene));
        set("collection", path(&self.collection));
        set("class", self.class.clone().map(Value::from));
        set("downsample", self.downsample.map(Value::from));
        set("checkpoint_every", self.checkpoint_every.map(Value::from));
        set("learning_rate", self.learning_rate.map(Value::from));
        set("final_learning_rate", self.final_learning_rate.map(Value::from));
        set("batch_rays", self.batch_rays.map(Value::from));
        set("iterations", self.iterations.map(Value::from));
        set("samples_per_ray", self.samples_per_ray.map(Value::from));
        set("sigma_noise_std", self.sigma_noise_std.map(Value::from));
        set("seed", self.seed.map(Value::from));
        set("mode", self.mode.clone().map(Value::from));
        set("model", self.model.clone().map(Value::from));
        set("n_refs", self.n_refs.map(Value::from));
        set("split", self.split.clone().map(Value::from));
        set("hidden_width", self.hidden_width.map(Value::from));
        set("hidden_layers", self.hidden_layers.map(Value::from));
        set("color_width", self.color_width.map(Value::from));
        set("dir_freqs", self.dir_freqs.map(Value::from));
        set("uv_freqs", self.uv_freqs.map(Value::from));
        set("near", self.near.map(Value::from));
        set("far", self.far.map(Value::from));
        set("background", self.background.map(|b| Value::from(b.to_vec())));
        set("chunk_rays", self.chunk_rays.map(Value::from));
        m
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        resolve(self.config.as_deref(), self.overrides())
    }
}

fn resolve(file: Option<&Path>, overrides: Map<String, Value>) -> Result<RunConfig, CliError> {
    let mut merged = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::Data(format!("{}: expected a JSON object", path.display()))),
                Err(e) => return Err(CliError::Data(format!("{}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    let Value::Object(known) = serde_json::to_value(RunConfig::default()).expect("config serializes") else {
        unreachable!("config serializes to an object")
    };
    if let Some(unknown) = merged.keys().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Usage(format!("unknown config key `{unknown}`")));
    }
    merged.extend(overrides);
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
}
