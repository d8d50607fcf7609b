//! Training loops: a generator against the budgeted kernel classifier (with
//! or without an encoder in front of it), and a cross-entropy MLP baseline.

mod checkpoint;
mod config;
mod losses;

use std::path::PathBuf;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{EncoderConfig, GeneratorConfig, TrainConfig, TrainerKind};
pub use losses::{
    encoder_loss_and_grad, generator_loss_and_grad, vanilla_discriminator_loss_and_grad,
    vanilla_generator_loss_and_grad, vanilla_value, LOG_CLAMP,
};

use crate::error::{invalid, Error, Result};
use crate::kernels::{schedule_step, GammaSchedule};
use crate::numerics::{standard_normal, Activation, AdamState, LayerSpec, Matrix, MlpNetwork, Mode, RngState, Stream};
use crate::okc::BudgetedKernelMachine;
use crate::synthdata::{load_vectors, DataSource, GaussianMixtureSpec};
use crate::util::Fingerprint;

/// Default number of generated samples for metric evaluation.
pub const DEFAULT_EVAL_SAMPLES: usize = 2500;

#[derive(Clone, Debug, PartialEq)]
pub enum Discriminator {
    Kernel(BudgetedKernelMachine),
    Network { net: MlpNetwork, opt: AdamState },
}

/// Random streams consumed by training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerRng {
    pub data: RngState,
    pub noise: RngState,
    pub shuffle: RngState,
}

impl TrainerRng {
    pub fn new(seed: u64) -> Self {
        Self {
            data: RngState::substream(seed, Stream::Data),
            noise: RngState::substream(seed, Stream::Noise),
            shuffle: RngState::substream(seed, Stream::Shuffle),
        }
    }
}

/// All mutable training state; enough to resume bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub kind: TrainerKind,
    pub config_hash: String,
    pub generator: MlpNetwork,
    pub generator_opt: AdamState,
    pub encoder: Option<MlpNetwork>,
    pub encoder_opt: Option<AdamState>,
    pub discriminator: Discriminator,
    pub round: u64,
    pub learning_rate: f64,
    pub rng: TrainerRng,
}

impl TrainerState {
    /// Fresh state for `config` on data of dimension `data_dim`.
    pub fn new(config: &TrainConfig, data_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut init = RngState::substream(config.seed, Stream::Init);
        let generator = MlpNetwork::init(config.noise_dim, &config.generator.layer_specs(data_dim), &mut init)?;
        let generator_opt = AdamState::new(generator.num_params(), config.adam_beta1, config.adam_beta2);

        let (encoder, encoder_opt) = if config.trainer == TrainerKind::OkganEncoder {
            let enc = if config.encoder.identity {
                if config.encoder.output_dim != data_dim {
                    return Err(Error::Config {
                        field: "encoder.output_dim".into(),
                        reason: format!("identity encoder needs output_dim = data dimension {data_dim}"),
                    });
                }
                MlpNetwork::identity(data_dim)
            } else {
                MlpNetwork::init(data_dim, &config.encoder.layer_specs(), &mut init)?
            };
            let opt = AdamState::new(enc.num_params(), config.adam_beta1, config.adam_beta2);
            (Some(enc), Some(opt))
        } else {
            (None, None)
        };

        let discriminator = match config.trainer {
            TrainerKind::Vanilla => {
                let mut specs: Vec<LayerSpec> = config
                    .discriminator_hidden
                    .iter()
                    .map(|&u| LayerSpec::new(u, Activation::LeakyRelu, false))
                    .collect();
                specs.push(LayerSpec::new(1, Activation::Identity, false));
                let net = MlpNetwork::init(data_dim, &specs, &mut init)?;
                let opt = AdamState::new(net.num_params(), config.adam_beta1, config.adam_beta2);
                Discriminator::Network { net, opt }
            }
            _ => Discriminator::Kernel(BudgetedKernelMachine::new(config.kernel.clone(), config.classifier)?),
        };

        Ok(Self {
            kind: config.trainer,
            config_hash: config.hash(),
            generator,
            generator_opt,
            encoder,
            encoder_opt,
            discriminator,
            round: 0,
            learning_rate: config.learning_rate,
            rng: TrainerRng::new(config.seed),
        })
    }

    pub fn machine(&self) -> Option<&BudgetedKernelMachine> {
        match &self.discriminator {
            Discriminator::Kernel(m) => Some(m),
            Discriminator::Network { .. } => None,
        }
    }

    pub fn noise_dim(&self) -> usize {
        self.generator.input_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.generator.output_dim()
    }

    /// `n` generator samples in evaluation mode from fresh standard-normal noise.
    pub fn generate(&self, n: usize, rng: &mut RngState) -> Result<Matrix> {
        let z = standard_normal(rng, n, self.noise_dim());
        self.generator.predict(&z)
    }

    /// Discriminator scores without touching any state: the classifier value
    /// (on encoded inputs when an encoder is present), or the MLP's
    /// pre-sigmoid logit.
    pub fn discriminator_scores(&self, x: &Matrix) -> Result<Vec<f64>> {
        match &self.discriminator {
            Discriminator::Kernel(m) => match &self.encoder {
                Some(enc) => m.predict(&enc.predict(x)?),
                None => m.predict(x),
            },
            Discriminator::Network { net, .. } => Ok(net.predict(x)?.into_vec()),
        }
    }

    /// SHA-256 over every parameter, optimizer moment, classifier entry and
    /// random-stream position.
    pub fn fingerprint(&self) -> String {
        let mut fp = Fingerprint::new();
        fp.str(self.kind.name()).str(&self.config_hash).u64(self.round).f64s(&[self.learning_rate]);
        let net = |fp: &mut Fingerprint, n: &MlpNetwork| {
            for p in n.params() {
                fp.f64s(p);
            }
            for l in n.layers() {
                if let Some(bn) = &l.batch_norm {
                    fp.f64s(&bn.running_mean).f64s(&bn.running_var);
                }
            }
        };
        let opt = |fp: &mut Fingerprint, o: &AdamState| {
            fp.f64s(&o.first_moment).f64s(&o.second_moment).u64(o.step);
        };
        net(&mut fp, &self.generator);
        opt(&mut fp, &self.generator_opt);
        if let (Some(e), Some(o)) = (&self.encoder, &self.encoder_opt) {
            net(&mut fp, e);
            opt(&mut fp, o);
        }
        match &self.discriminator {
            Discriminator::Kernel(m) => {
                fp.str(&m.fingerprint());
            }
            Discriminator::Network { net: n, opt: o } => {
                net(&mut fp, n);
                opt(&mut fp, o);
            }
        }
        for r in [&self.rng.data, &self.rng.noise, &self.rng.shuffle] {
            let s = r.snapshot();
            fp.bytes(&s.key).u64(s.stream).bytes(&s.word_pos.to_le_bytes());
        }
        fp.hex()
    }
}

/// Callbacks invoked by the trainers. Every method receives a read-only view
/// of the state; an error from `on_eval` or `on_record` stops training.
pub trait TrainingHooks {
    fn after_encoder_step(&mut self, _state: &TrainerState, _loss: f64) {}
    fn after_discriminator_update(&mut self, _state: &TrainerState) {}
    fn after_generator_step(&mut self, _state: &TrainerState, _loss: f64) {}
    /// Called after every round whose (1-based) number is a multiple of `eval_every`.
    fn on_eval(&mut self, _state: &TrainerState) -> Result<()> {
        Ok(())
    }
    /// Called after every round whose number is a multiple of `record_every`.
    fn on_record(&mut self, _state: &TrainerState) -> Result<()> {
        Ok(())
    }
}

pub struct NoHooks;

impl TrainingHooks for NoHooks {}

/// Resolves the real-data source named by a config.
pub fn load_data(config: &TrainConfig) -> Result<DataSource> {
    if config.dataset == "file" {
        let path = config.data_path.as_ref().ok_or_else(|| Error::Config {
            field: "data_path".into(),
            reason: "required when dataset is \"file\"".into(),
        })?;
        Ok(DataSource::Vectors(load_vectors(path, config.rescale_data)?))
    } else {
        Ok(DataSource::Mixture(GaussianMixtureSpec::preset(&config.dataset)?))
    }
}

/// Drives one of the three training algorithms round by round.
pub struct Trainer {
    config: TrainConfig,
    data: DataSource,
    state: TrainerState,
    schedule: Option<GammaSchedule>,
    diagnostic_path: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: DataSource) -> Result<Self> {
        let state = TrainerState::new(&config, data.dim())?;
        Self::resume(config, data, state)
    }

    /// Continues from a saved state; the state must come from the same config.
    pub fn resume(config: TrainConfig, data: DataSource, state: TrainerState) -> Result<Self> {
        config.validate()?;
        if state.config_hash != config.hash() {
            return Err(invalid("checkpoint was written under a different config"));
        }
        if state.data_dim() != data.dim() {
            return Err(crate::error::dim_err(format!(
                "generator emits {} values but the data has dimension {}",
                state.data_dim(),
                data.dim()
            )));
        }
        if let Some(enc) = &state.encoder {
            if enc.input_dim() != data.dim() {
                return Err(crate::error::dim_err("encoder input does not match data dimension"));
            }
        }
        let schedule = config.gamma_schedule();
        Ok(Self {
            config,
            data,
            state,
            schedule,
            diagnostic_path: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn data(&self) -> &DataSource {
        &self.data
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    /// Where to write the state if training diverges.
    pub fn set_diagnostic_checkpoint(&mut self, path: impl Into<PathBuf>) {
        self.diagnostic_path = Some(path.into());
    }

    /// Runs until `config.rounds` rounds have completed.
    pub fn run(&mut self, hooks: &mut dyn TrainingHooks) -> Result<()> {
        while self.state.round < self.config.rounds {
            self.train_round(hooks)?;
        }
        Ok(())
    }

    pub fn run_rounds(&mut self, n: u64, hooks: &mut dyn TrainingHooks) -> Result<()> {
        for _ in 0..n {
            self.train_round(hooks)?;
        }
        Ok(())
    }

    pub fn train_round(&mut self, hooks: &mut dyn TrainingHooks) -> Result<()> {
        let result = match self.state.kind {
            TrainerKind::Vanilla => self.vanilla_round(hooks),
            _ => self.okgan_round(hooks),
        };
        if let Err(err) = result {
            return Err(self.divergence(err));
        }
        self.state.round += 1;
        self.state.learning_rate = self.config.learning_rate * self.config.lr_decay.powf(self.state.round as f64);
        if let (Some(schedule), Discriminator::Kernel(m)) = (&self.schedule, &mut self.state.discriminator) {
            let next = schedule_step(m.kernel(), schedule)?;
            m.set_kernel(next)?;
        }
        if self.state.round.is_multiple_of(self.config.eval_every) {
            hooks.on_eval(&self.state)?;
        }
        if self.state.round.is_multiple_of(self.config.record_every) {
            hooks.on_record(&self.state)?;
        }
        Ok(())
    }

    fn divergence(&self, err: Error) -> Error {
        let detail = match err {
            Error::NonFinite(d) => d,
            other => return other,
        };
        let checkpoint = self
            .diagnostic_path
            .as_ref()
            .filter(|p| save_checkpoint(&self.state, p).is_ok())
            .cloned();
        Error::Diverged {
            round: self.state.round,
            detail,
            checkpoint,
        }
    }

    fn okgan_round(&mut self, hooks: &mut dyn TrainingHooks) -> Result<()> {
        let n = self.config.samples_per_round;
        let lr = self.state.learning_rate;
        let state = &mut self.state;
        let noise_dim = state.noise_dim();
        let reals = self.data.sample(&mut state.rng.data, n);
        let z = standard_normal(&mut state.rng.noise, n, noise_dim);
        let (fakes, _) = state.generator.forward(&z, Mode::Training)?;
        if !fakes.is_finite() {
            return Err(Error::NonFinite("generator output".into()));
        }
        let batch = reals.vstack(&fakes)?;

        // Encoder step against the classifier from the previous round.
        let mut encoder_loss = None;
        if let (Some(enc), Some(opt), Discriminator::Kernel(machine)) =
            (&mut state.encoder, &mut state.encoder_opt, &state.discriminator)
        {
            if state.round > 0 && !self.config.encoder.frozen {
                let (_, cache) = enc.forward(&batch, Mode::Training)?;
                let (loss, grads) = losses::encoder_backprop(enc, &cache, machine, n)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("encoder loss {loss}")));
                }
                opt.step(&mut enc.params_mut(), &grads.slices(), lr)?;
                encoder_loss = Some(loss);
            }
        }
        if let Some(loss) = encoder_loss {
            hooks.after_encoder_step(state, loss);
        }

        let features = match &mut state.encoder {
            Some(enc) => enc.forward(&batch, Mode::Training)?.0,
            None => batch,
        };
        let real_rows: Vec<usize> = (0..n).collect();
        let fake_rows: Vec<usize> = (n..2 * n).collect();
        let Discriminator::Kernel(machine) = &mut state.discriminator else {
            unreachable!("kernel trainer holds a kernel discriminator");
        };
        machine.fit_round(
            &features.select_rows(&real_rows),
            &features.select_rows(&fake_rows),
            self.config.minibatch,
            &mut state.rng.shuffle,
        )?;
        hooks.after_discriminator_update(state);

        for _ in 0..self.config.generator_steps {
            let z = standard_normal(&mut state.rng.noise, n, noise_dim);
            let (x, gen_cache) = state.generator.forward(&z, Mode::Training)?;
            let enc_pass = match &mut state.encoder {
                Some(enc) => Some(enc.forward(&x, Mode::Training)?),
                None => None,
            };
            let Discriminator::Kernel(machine) = &state.discriminator else {
                unreachable!();
            };
            let (loss, grads) = losses::generator_backprop(
                &state.generator,
                &gen_cache,
                state.encoder.as_ref().zip(enc_pass.as_ref().map(|(_, c)| c)),
                machine,
                enc_pass.as_ref().map_or(&x, |(e, _)| e),
            )?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("generator loss {loss}")));
            }
            state.generator_opt.step(&mut state.generator.params_mut(), &grads.slices(), lr)?;
            hooks.after_generator_step(state, loss);
        }
        Ok(())
    }

    fn vanilla_round(&mut self, hooks: &mut dyn TrainingHooks) -> Result<()> {
        let n = self.config.samples_per_round;
        let lr = self.state.learning_rate;
        let state = &mut self.state;
        let noise_dim = state.noise_dim();
        let reals = self.data.sample(&mut state.rng.data, n);
        let z = standard_normal(&mut state.rng.noise, n, noise_dim);
        let (fakes, _) = state.generator.forward(&z, Mode::Training)?;
        if !fakes.is_finite() {
            return Err(Error::NonFinite("generator output".into()));
        }

        let Discriminator::Network { net, opt } = &mut state.discriminator else {
            unreachable!("vanilla trainer holds a network discriminator");
        };
        let (loss, grads) = vanilla_discriminator_loss_and_grad(net, &reals, &fakes)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss {loss}")));
        }
        opt.step(&mut net.params_mut(), &grads.slices(), lr)?;
        hooks.after_discriminator_update(state);

        let z = standard_normal(&mut state.rng.noise, n, noise_dim);
        let (x, cache) = state.generator.forward(&z, Mode::Training)?;
        let Discriminator::Network { net, .. } = &state.discriminator else {
            unreachable!();
        };
        let (loss, grads) = losses::vanilla_generator_backprop(&state.generator, &cache, net, &x)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("generator loss {loss}")));
        }
        state.generator_opt.step(&mut state.generator.params_mut(), &grads.slices(), lr)?;
        hooks.after_generator_step(state, loss);
        Ok(())
    }
}

fn require(config: &TrainConfig, kind: TrainerKind) -> Result<()> {
    if config.trainer != kind {
        return Err(Error::Config {
            field: "trainer".into(),
            reason: format!("expected {}, got {}", kind.name(), config.trainer.name()),
        });
    }
    Ok(())
}

/// Generator against the kernel classifier on a 2-D mixture preset.
pub fn train_okgan_2d(config: &TrainConfig, hooks: &mut dyn TrainingHooks) -> Result<TrainerState> {
    require(config, TrainerKind::Okgan)?;
    let spec = GaussianMixtureSpec::preset(&config.dataset)?;
    let mut t = Trainer::new(config.clone(), DataSource::Mixture(spec))?;
    t.run(hooks)?;
    Ok(t.into_state())
}

/// Generator against encoder plus kernel classifier.
pub fn train_okgan_encoder(config: &TrainConfig, data: DataSource, hooks: &mut dyn TrainingHooks) -> Result<TrainerState> {
    require(config, TrainerKind::OkganEncoder)?;
    let mut t = Trainer::new(config.clone(), data)?;
    t.run(hooks)?;
    Ok(t.into_state())
}

/// Generator against an MLP discriminator, one step each per round.
pub fn train_vanilla_gan(config: &TrainConfig, hooks: &mut dyn TrainingHooks) -> Result<TrainerState> {
    require(config, TrainerKind::Vanilla)?;
    let data = load_data(config)?;
    let mut t = Trainer::new(config.clone(), data)?;
    t.run(hooks)?;
    Ok(t.into_state())
}

#[cfg(test)]
mod tests;
