//! JSON run configurations. Unknown keys are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pararnn::bench::{MseSweepConfig, TimingConfig};
use pararnn::bridge::ArmaSpec;
use pararnn::datagen::DgpSpec;
use pararnn::features::ClassifyOptions;
use pararnn::net::{Activation, AggregatorSpec, Architecture, CellKind, InitScheme, OutputMode};
use pararnn::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Flags shared by every subcommand. Flags win over values in the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scale: Option<f64>,
    pub threads: Option<usize>,
}

/// Implemented by every subcommand config so the shared flags can be
/// applied uniformly.
pub trait RunConfig: Serialize + DeserializeOwned + Default {
    fn seed_mut(&mut self) -> &mut u64;
    fn scale_mut(&mut self) -> &mut f64;
    fn threads_mut(&mut self) -> &mut Option<usize>;

    fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            *self.seed_mut() = s;
        }
        if let Some(s) = o.scale {
            *self.scale_mut() = s;
        }
        if let Some(t) = o.threads {
            *self.threads_mut() = Some(t);
        }
    }
}

/// Reads `path` (or starts from defaults), then applies the flags.
pub fn load<C: RunConfig>(path: Option<&Path>, overrides: &Overrides) -> Result<C> {
    let mut cfg: C = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => C::default(),
    };
    cfg.apply(overrides);
    if *cfg.scale_mut() <= 0.0 || !cfg.scale_mut().is_finite() {
        bail!("scale must be positive, got {}", cfg.scale_mut());
    }
    Ok(cfg)
}

/// Creates `out` and writes the resolved configuration into it.
pub fn prepare_out<C: Serialize>(out: &Path, cfg: &C) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.resolved.json"), cfg)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

macro_rules! run_config {
    ($t:ty) => {
        impl RunConfig for $t {
            fn seed_mut(&mut self) -> &mut u64 {
                &mut self.seed
            }
            fn scale_mut(&mut self) -> &mut f64 {
                &mut self.scale
            }
            fn threads_mut(&mut self) -> &mut Option<usize> {
                &mut self.threads
            }
        }
    };
}

fn default_split() -> (f64, f64) {
    (0.8, 0.1)
}

/// Recurrent model without the data-dependent input and output sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub cell: CellKind,
    pub hidden: usize,
    /// Defaults to `hidden` (one block).
    pub block_size: Option<usize>,
    pub layers: usize,
    pub activation: Activation,
    pub aggregator: AggregatorSpec,
    /// Add a linear head mapping to the target size.
    pub head: bool,
    pub input_projection: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            cell: CellKind::Rnn,
            hidden: 32,
            block_size: None,
            layers: 1,
            activation: Activation::Tanh,
            aggregator: AggregatorSpec::Identity,
            head: true,
            input_projection: false,
        }
    }
}

impl ModelSpec {
    pub fn architecture(&self, d_in: usize, d_out: usize) -> Architecture {
        Architecture {
            cell: self.cell,
            d_in,
            hidden: self.hidden,
            block_size: self.block_size.unwrap_or(self.hidden),
            layers: self.layers,
            activation: self.activation,
            aggregator: self.aggregator,
            head: self.head.then_some(d_out),
            input_projection: self.input_projection,
            mode: OutputMode::SeqToOne,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub seed: u64,
    pub scale: f64,
    pub threads: Option<usize>,
    /// `sec61` or `appA`; ignored when `data` is given.
    pub preset: String,
    pub data: Option<DgpSpec>,
    /// Block size of the fitted layer; defaults to the data dimension.
    pub block_size: Option<usize>,
    pub init: InitScheme,
    pub train: TrainConfig,
    /// Train and validation fractions; the rest is the test split.
    pub split: (f64, f64),
    pub classify: ClassifyOptions,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 1.0,
            threads: None,
            preset: "appA".into(),
            data: None,
            block_size: None,
            init: InitScheme::UniformScaled,
            train: TrainConfig::default(),
            split: default_split(),
            classify: ClassifyOptions::clustered(),
        }
    }
}
run_config!(SimulateConfig);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    /// Sum of two marked values in a sequence of length `t`.
    Adding {
        t: usize,
        n_train: usize,
        n_val: usize,
        n_test: usize,
    },
    /// Sliding windows over a numeric CSV series, split chronologically.
    Csv {
        path: PathBuf,
        target: String,
        window: usize,
        horizon: usize,
        #[serde(default = "default_split")]
        split: (f64, f64),
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub seed: u64,
    pub scale: f64,
    pub threads: Option<usize>,
    pub task: Task,
    pub model: ModelSpec,
    pub init: InitScheme,
    pub train: TrainConfig,
    /// Stop as soon as the test MSE drops below this value; the run passes
    /// only if it does.
    pub target_test_mse: Option<f64>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 1.0,
            threads: None,
            task: Task::Adding {
                t: 100,
                n_train: 10_000,
                n_val: 1_000,
                n_test: 1_000,
            },
            model: ModelSpec {
                cell: CellKind::Lstm,
                hidden: 32,
                block_size: Some(8),
                ..ModelSpec::default()
            },
            init: InitScheme::UniformScaled,
            train: TrainConfig {
                learning_rate: 0.002,
                batch_size: 50,
                max_epochs: 1_000,
                max_iterations: Some(10_000),
                schedule: pararnn::train::Schedule::StepDecay {
                    factor: 0.1,
                    every: 3_334,
                },
                ..TrainConfig::default()
            },
            target_test_mse: None,
        }
    }
}
run_config!(TrainRunConfig);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyMode {
    Strict,
    Clustered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    pub seed: u64,
    pub scale: f64,
    pub threads: Option<usize>,
    /// Matrix text file or checkpoint.
    pub input: Option<PathBuf>,
    pub mode: ClassifyMode,
    pub tol_zero: Option<f64>,
    pub tol_cluster: Option<f64>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 1.0,
            threads: None,
            input: None,
            mode: ClassifyMode::Clustered,
            tol_zero: None,
            tol_cluster: None,
        }
    }
}
run_config!(AnalyzeConfig);

impl AnalyzeConfig {
    pub fn options(&self) -> ClassifyOptions {
        let mut o = match self.mode {
            ClassifyMode::Strict => ClassifyOptions::strict(),
            ClassifyMode::Clustered => ClassifyOptions::clustered(),
        };
        if let Some(z) = self.tol_zero {
            o.tol_zero = z;
        }
        if let Some(c) = self.tol_cluster {
            o.tol_cluster = c;
        }
        o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub seed: u64,
    /// Shrinks the data of the MSE sweep; timing sizes are fixed.
    pub scale: f64,
    pub threads: Option<usize>,
    pub timing: Option<TimingConfig>,
    /// Defaults to the powers of two up to `timing.d`.
    pub block_sizes: Option<Vec<usize>>,
    pub dense_reference: bool,
    pub mse: Option<MseSweepConfig>,
    /// Slack allowed for a time decrease between adjacent block sizes.
    pub monotone_slack: f64,
    /// Allowed relative gap between the single-block layer and the dense
    /// reference.
    pub dense_tolerance: f64,
    /// Required ratio of the single-unit-block test MSE over the 2-unit one.
    pub mse_gap: f64,
    /// Every block size from 2 up must stay within this factor of the
    /// full-block test MSE.
    pub mse_factor: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 1.0,
            threads: None,
            timing: Some(TimingConfig::default()),
            block_sizes: None,
            dense_reference: true,
            mse: None,
            monotone_slack: 0.10,
            dense_tolerance: 0.05,
            mse_gap: 3.0,
            mse_factor: 2.0,
        }
    }
}
run_config!(BenchConfig);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomArma {
    pub count: usize,
    pub dims: Vec<usize>,
    pub max_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmaCheckConfig {
    pub seed: u64,
    /// Scales the number of steps.
    pub scale: f64,
    pub threads: Option<usize>,
    pub specs: Vec<ArmaSpec>,
    /// Extra specs drawn at random for every listed dimension.
    pub random: Option<RandomArma>,
    pub steps: usize,
    pub tolerance: f64,
}

impl Default for ArmaCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 1.0,
            threads: None,
            specs: Vec::new(),
            random: Some(RandomArma {
                count: 100,
                dims: vec![1, 3],
                max_radius: 0.98,
            }),
            steps: 40,
            tolerance: 1e-10,
        }
    }
}
run_config!(ArmaCheckConfig);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<SimulateConfig>(r#"{"preset": "appA", "epochs": 3}"#).is_err());
        assert!(serde_json::from_str::<TrainRunConfig>(r#"{"model": {"hiden": 3}}"#).is_err());
        assert!(serde_json::from_str::<BenchConfig>(r#"{"timing": {"d": 8, "x": 1}}"#).is_err());
        let ok: SimulateConfig = serde_json::from_str(r#"{"preset": "sec61", "train": {"max_epochs": 2}}"#).unwrap();
        assert_eq!(ok.train.max_epochs, 2);
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = SimulateConfig {
            seed: 5,
            ..SimulateConfig::default()
        };
        c.apply(&Overrides {
            seed: Some(9),
            scale: Some(0.5),
            threads: None,
        });
        assert_eq!((c.seed, c.scale, c.threads), (9, 0.5, None));
    }

    #[test]
    fn resolved_config_round_trips() {
        for text in [
            serde_json::to_string(&SimulateConfig::default()).unwrap(),
            serde_json::to_string(&TrainRunConfig::default()).unwrap(),
            serde_json::to_string(&BenchConfig::default()).unwrap(),
            serde_json::to_string(&ArmaCheckConfig::default()).unwrap(),
            serde_json::to_string(&AnalyzeConfig::default()).unwrap(),
        ] {
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert!(v.get("seed").is_some());
        }
        let t: TrainRunConfig =
            serde_json::from_str(&serde_json::to_string(&TrainRunConfig::default()).unwrap()).unwrap();
        assert_eq!(t, TrainRunConfig::default());
    }
}
