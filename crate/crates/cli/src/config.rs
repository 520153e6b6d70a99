//! Run configuration: defaults, TOML file, command-line overrides.
//!
//! Precedence is flag, then file, then built-in default. Every section and
//! key is optional in the file; unknown keys are rejected.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use pinode_core::datagen::RigConfig;
use pinode_core::dynamics::{InputMode, PhysicalParams, State};
use pinode_core::evaluation::{ErrorMode, WindowSampling};
use pinode_core::rng::{derive_seed, Stream};
use pinode_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Failure, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub physics: PhysicalParams,
    pub rig: RigConfig,
    pub generate: GenerateConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub paths: PathsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Recording length (s).
    pub duration: f64,
    /// Peak excitation force (N).
    pub amplitude: f64,
    /// `[x, φ, ẋ, φ̇]` at t = 0.
    pub initial_state: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub layer_sizes: Vec<usize>,
    pub output_scale: f64,
    pub input_mode: InputMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotFormat {
    #[default]
    Csv,
    Json,
}

impl PlotFormat {
    pub fn extension(self) -> &'static str {
        match self {
            PlotFormat::Csv => "csv",
            PlotFormat::Json => "json",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Steps per error window.
    pub window: usize,
    /// Number of windows.
    pub count: usize,
    /// Window sampling seed; derived from the run seed when absent.
    pub seed: Option<u64>,
    pub mode: ErrorMode,
    pub sampling: WindowSampling,
    /// First sample of the long rollout comparison.
    pub rollout_start: usize,
    pub rollout_steps: usize,
    pub histogram_bins: usize,
    pub plot_format: PlotFormat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub model: PathBuf,
    /// Directory for report JSON and plot data.
    pub reports: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            physics: PhysicalParams::default(),
            rig: RigConfig::default(),
            generate: GenerateConfig::default(),
            network: NetworkConfig::default(),
            training: TrainConfig {
                epochs: 200,
                ..TrainConfig::default()
            },
            evaluation: EvaluationConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            duration: 480.0,
            amplitude: 0.7,
            initial_state: [0.0, PI, 0.0, 0.0],
        }
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            layer_sizes: vec![5, 50, 50, 50, 1],
            output_scale: 10.0,
            input_mode: InputMode::RawAngle,
        }
    }
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            window: 30,
            count: 1000,
            seed: None,
            mode: ErrorMode::Terminal,
            sampling: WindowSampling::Random,
            rollout_start: 0,
            rollout_steps: 500,
            histogram_bins: 30,
            plot_format: PlotFormat::Csv,
        }
    }
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            dataset: "data/benchmark.csv".into(),
            model: "out/model.json".into(),
            reports: "out".into(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with `path`, if given.
    pub fn load(path: Option<&Path>) -> Outcome<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| e.context(path.display()))
    }

    pub fn parse(text: &str) -> Outcome<RunConfig> {
        toml::from_str(text).map_err(|e| Failure::invalid(format!("config: {}", e.message())))
    }

    pub fn validate(&self) -> Outcome<()> {
        self.physics.validate()?;
        self.rig().validate()?;
        self.training.validate()?;
        let g = &self.generate;
        if !(g.duration.is_finite() && g.duration > 0.0) {
            return Err(Failure::invalid(format!(
                "generate.duration must be positive, got {}",
                g.duration
            )));
        }
        if !(g.amplitude.is_finite() && g.amplitude >= 0.0) {
            return Err(Failure::invalid(format!(
                "generate.amplitude must be non-negative, got {}",
                g.amplitude
            )));
        }
        if g.initial_state.iter().any(|v| !v.is_finite()) {
            return Err(Failure::invalid("generate.initial_state must be finite"));
        }
        let n = &self.network;
        let width = n.input_mode.width();
        if n.layer_sizes.first() != Some(&width) || n.layer_sizes.last() != Some(&1) {
            return Err(Failure::invalid(format!(
                "network.layer_sizes must start at {width} for {:?} and end at 1, got {:?}",
                n.input_mode, n.layer_sizes
            )));
        }
        if !(n.output_scale.is_finite() && n.output_scale > 0.0) {
            return Err(Failure::invalid(format!(
                "network.output_scale must be positive, got {}",
                n.output_scale
            )));
        }
        let e = &self.evaluation;
        if e.window == 0 || e.count == 0 || e.histogram_bins == 0 {
            return Err(Failure::invalid(
                "evaluation.window, evaluation.count and evaluation.histogram_bins must be positive",
            ));
        }
        Ok(())
    }

    /// Rig section with the physics section as its rigid body.
    pub fn rig(&self) -> RigConfig {
        RigConfig {
            base: self.physics,
            ..self.rig
        }
    }

    /// Training section with its shuffle seed drawn from the run seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, Stream::Shuffle),
            ..self.training
        }
    }

    pub fn initial_state(&self) -> State {
        let [x, phi, x_dot, phi_dot] = self.generate.initial_state;
        State::new(x, phi, x_dot, phi_dot)
    }

    pub fn evaluation_seed(&self) -> u64 {
        self.evaluation
            .seed
            .unwrap_or_else(|| derive_seed(self.seed, Stream::Evaluation))
    }

    pub fn stream_seed(&self, stream: Stream) -> u64 {
        derive_seed(self.seed, stream)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.training.learning_rate, 1e-3);
        assert_eq!(c.training.batch_size, 128);
        assert_eq!(c.rig.sample_rate, 50.0);
        assert_eq!(c.generate.duration * c.rig.sample_rate, 24_000.0);
    }

    #[test]
    fn file_overrides_nested_keys() {
        let c = RunConfig::parse(
            "seed = 9\n[physics]\nmu_c = 0.05\n[training]\nepochs = 3\n[training.loss_weights]\nq = [2.0, 1.0]\n[network]\ninput_mode = \"embedded-angle\"\nlayer_sizes = [6, 8, 1]\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.physics.mu_c, 0.05);
        assert_eq!(c.physics.g, 9.81);
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.training.loss_weights.q, [2.0, 1.0]);
        assert_eq!(c.network.input_mode, InputMode::EmbeddedAngle);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[training]\nepoch = 3\n").is_err());
        assert!(RunConfig::parse("[nonsense]\n").is_err());
    }

    #[test]
    fn rig_takes_the_physics_section() {
        let c = RunConfig::parse("[physics]\nm_c = 0.5\n").unwrap();
        assert_eq!(c.rig().base.m_c, 0.5);
    }

    #[test]
    fn mismatched_network_width_is_invalid() {
        let c = RunConfig::parse("[network]\ninput_mode = \"embedded-angle\"\n").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
