use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::kernels::{GammaSchedule, KernelSpec};
use crate::numerics::{Activation, LayerSpec};
use crate::okc::OkcParams;
use crate::synthdata::GaussianMixtureSpec;
use crate::util::Fingerprint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    /// Generator against the kernel classifier acting on raw samples.
    Okgan,
    /// Generator against an encoder followed by the kernel classifier.
    OkganEncoder,
    /// Generator against an MLP discriminator with the cross-entropy game.
    Vanilla,
}

impl TrainerKind {
    pub fn name(self) -> &'static str {
        match self {
            TrainerKind::Okgan => "okgan",
            TrainerKind::OkganEncoder => "okgan_encoder",
            TrainerKind::Vanilla => "vanilla",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    pub output_activation: Activation,
}

impl GeneratorConfig {
    pub fn layer_specs(&self, output_dim: usize) -> Vec<LayerSpec> {
        let mut specs: Vec<LayerSpec> = self
            .hidden
            .iter()
            .map(|&u| LayerSpec::new(u, Activation::Relu, self.batch_norm))
            .collect();
        specs.push(LayerSpec::new(output_dim, self.output_activation, false));
        specs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub batch_norm: bool,
    /// Never update the encoder parameters.
    pub frozen: bool,
    /// Replace the encoder by a single identity layer (requires
    /// `output_dim` equal to the data dimension).
    pub identity: bool,
}

impl EncoderConfig {
    /// LeakyReLU hidden layers and a plain affine output layer.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs: Vec<LayerSpec> = self
            .hidden
            .iter()
            .map(|&u| LayerSpec::new(u, Activation::LeakyRelu, self.batch_norm))
            .collect();
        specs.push(LayerSpec::new(self.output_dim, Activation::Identity, false));
        specs
    }
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Preset name (`grid25`, `grid49`, `ring8`, `circle`) or `file`.
    pub dataset: String,
    /// Vector dataset read when `dataset` is `file`.
    pub data_path: Option<PathBuf>,
    /// Map file data onto `[-1, 1]` after loading.
    pub rescale_data: bool,
    pub trainer: TrainerKind,
    pub noise_dim: usize,
    pub generator: GeneratorConfig,
    pub encoder: EncoderConfig,
    /// Hidden widths of the MLP discriminator used by the vanilla trainer.
    pub discriminator_hidden: Vec<usize>,
    pub kernel: KernelSpec,
    /// Per-round multiplier of the Gaussian kernel's gamma; 1 disables it.
    pub gamma_ratio: f64,
    pub classifier: OkcParams,
    /// Real (and fake) samples drawn per round.
    pub samples_per_round: usize,
    /// Minibatch size of the classifier updates.
    pub minibatch: usize,
    /// Generator updates per classifier round.
    pub generator_steps: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub rounds: u64,
    pub seed: u64,
    pub eval_every: u64,
    pub eval_samples: usize,
    pub record_every: u64,
    pub probes: usize,
}

impl TrainConfig {
    /// Defaults for one of the 2-D mixture presets.
    pub fn for_preset(name: &str) -> Result<Self> {
        GaussianMixtureSpec::preset(name).map_err(|e| Error::Config {
            field: "dataset".into(),
            reason: e.to_string(),
        })?;
        let (gamma, rounds) = match name {
            "ring8" => (3.2, 5000),
            "grid49" => (0.5, 4000),
            "circle" => (0.2, 3000),
            _ => (0.2, 4000),
        };
        Ok(Self {
            dataset: name.to_string(),
            data_path: None,
            rescale_data: false,
            trainer: TrainerKind::Okgan,
            noise_dim: 2,
            generator: GeneratorConfig {
                hidden: vec![400; 4],
                batch_norm: true,
                output_activation: Activation::Identity,
            },
            encoder: EncoderConfig {
                hidden: vec![400; 4],
                output_dim: 100,
                batch_norm: true,
                frozen: false,
                identity: false,
            },
            discriminator_hidden: vec![200; 3],
            kernel: KernelSpec::gaussian(gamma),
            gamma_ratio: 1.0015,
            classifier: OkcParams::default(),
            samples_per_round: 500,
            minibatch: 64,
            generator_steps: 5,
            learning_rate: 5e-4,
            lr_decay: 0.999,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            rounds,
            seed: 0,
            eval_every: 50,
            eval_samples: 2500,
            record_every: 1,
            probes: 256,
        })
    }

    /// Defaults for the encoder trainer on a flat-vector file.
    pub fn for_vectors(path: impl Into<PathBuf>) -> Self {
        let mut c = Self::for_preset("grid25").expect("grid25 is a preset");
        c.dataset = "file".into();
        c.data_path = Some(path.into());
        c.rescale_data = true;
        c.trainer = TrainerKind::OkganEncoder;
        c.noise_dim = 100;
        c.generator.output_activation = Activation::Tanh;
        c.kernel = KernelSpec::gaussian(0.01);
        c.gamma_ratio = 1.0;
        c.classifier.budget = 700;
        c.samples_per_round = 200;
        c.generator_steps = 10;
        c.learning_rate = 2e-4;
        c.lr_decay = 1.0;
        c.adam_beta1 = 0.5;
        c.rounds = 1000;
        c
    }

    /// Reads a JSON object on top of the defaults selected by its `dataset`
    /// key (`grid25` when absent). Unknown keys are rejected.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let overlay: Value = serde_json::from_str(text)?;
        let Value::Object(map) = &overlay else {
            return Err(Error::Config {
                field: "<root>".into(),
                reason: "config must be a JSON object".into(),
            });
        };
        let dataset = map.get("dataset").and_then(Value::as_str).unwrap_or("grid25");
        let base = if dataset == "file" {
            let path = map.get("data_path").and_then(Value::as_str).ok_or_else(|| Error::Config {
                field: "data_path".into(),
                reason: "required when dataset is \"file\"".into(),
            })?;
            Self::for_vectors(path)
        } else {
            Self::for_preset(dataset)?
        };
        let mut merged = serde_json::to_value(&base)?;
        merge(&mut merged, overlay);
        let config: Self = serde_json::from_value(merged).map_err(|e| Error::Config {
            field: "<root>".into(),
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Fingerprint::new().str(&json).hex()
    }

    pub fn gamma_schedule(&self) -> Option<GammaSchedule> {
        match self.kernel {
            KernelSpec::Gaussian { gamma } if self.gamma_ratio != 1.0 => Some(GammaSchedule {
                initial: gamma,
                ratio: self.gamma_ratio,
            }),
            _ => None,
        }
    }

    /// Checks every field; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        fn bad(field: &str, reason: impl Into<String>) -> Error {
            Error::Config {
                field: field.into(),
                reason: reason.into(),
            }
        }
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(bad(field, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        if self.dataset == "file" {
            if self.data_path.is_none() {
                return Err(bad("data_path", "required when dataset is \"file\""));
            }
            if self.trainer == TrainerKind::Okgan || self.trainer == TrainerKind::Vanilla {
                return Err(bad("trainer", "file datasets need the okgan_encoder trainer"));
            }
        } else {
            GaussianMixtureSpec::preset(&self.dataset).map_err(|e| bad("dataset", e.to_string()))?;
        }
        positive("noise_dim", self.noise_dim)?;
        if self.generator.hidden.contains(&0) {
            return Err(bad("generator.hidden", "layer widths must be at least 1"));
        }
        if self.trainer == TrainerKind::OkganEncoder {
            positive("encoder.output_dim", self.encoder.output_dim)?;
            if self.encoder.hidden.contains(&0) {
                return Err(bad("encoder.hidden", "layer widths must be at least 1"));
            }
        }
        if self.trainer == TrainerKind::Vanilla && self.discriminator_hidden.contains(&0) {
            return Err(bad("discriminator_hidden", "layer widths must be at least 1"));
        }
        self.kernel.validate().map_err(|e| bad("kernel", e.to_string()))?;
        if !(self.gamma_ratio >= 1.0) || !self.gamma_ratio.is_finite() {
            return Err(bad("gamma_ratio", format!("must be a finite value >= 1, got {}", self.gamma_ratio)));
        }
        if self.gamma_ratio != 1.0 && !matches!(self.kernel, KernelSpec::Gaussian { .. }) {
            return Err(bad("gamma_ratio", "a gamma schedule needs the gaussian kernel"));
        }
        self.classifier.validate().map_err(|e| bad("classifier", e.to_string()))?;
        positive("samples_per_round", self.samples_per_round)?;
        positive("minibatch", self.minibatch)?;
        if self.minibatch > 2 * self.samples_per_round {
            return Err(bad("minibatch", "cannot exceed twice samples_per_round"));
        }
        if self.generator.batch_norm && self.samples_per_round < 2 {
            return Err(bad("samples_per_round", "batch norm needs at least 2 samples"));
        }
        positive("generator_steps", self.generator_steps)?;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(bad("learning_rate", "must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(bad("lr_decay", "must lie in (0, 1]"));
        }
        for (field, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(bad(field, "must lie in [0, 1)"));
            }
        }
        if self.eval_every == 0 {
            return Err(bad("eval_every", "must be at least 1"));
        }
        positive("eval_samples", self.eval_samples)?;
        if self.record_every == 0 {
            return Err(bad("record_every", "must be at least 1"));
        }
        if self.probes < 2 {
            return Err(bad("probes", "must be at least 2"));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // kernel specs are replaced whole so the variant can change
                    Some(slot) if k != "kernel" && slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
