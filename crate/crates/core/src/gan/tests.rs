use super::*;
use crate::numerics::standard_normal;
use crate::synthdata::make_grid;

fn small(preset: &str, trainer: TrainerKind) -> TrainConfig {
    let mut c = TrainConfig::for_preset(preset).unwrap();
    c.trainer = trainer;
    c.generator.hidden = vec![16, 16];
    c.encoder.hidden = vec![8];
    c.encoder.output_dim = 3;
    c.discriminator_hidden = vec![16, 16];
    c.classifier.budget = 128;
    c.samples_per_round = 48;
    c.minibatch = 16;
    c.generator_steps = 3;
    c.rounds = 4;
    c.seed = 3;
    c
}

#[derive(Default)]
struct Counter {
    encoder: Vec<u64>,
    disc: Vec<u64>,
    gen: Vec<u64>,
    machine_after_fit: Option<String>,
    frozen_violations: usize,
    evals: Vec<u64>,
}

impl TrainingHooks for Counter {
    fn after_encoder_step(&mut self, s: &TrainerState, _: f64) {
        self.encoder.push(s.round);
    }
    fn after_discriminator_update(&mut self, s: &TrainerState) {
        self.disc.push(s.round);
        self.machine_after_fit = s.machine().map(|m| m.fingerprint());
    }
    fn after_generator_step(&mut self, s: &TrainerState, _: f64) {
        self.gen.push(s.round);
        if s.machine().map(|m| m.fingerprint()) != self.machine_after_fit {
            self.frozen_violations += 1;
        }
    }
    fn on_eval(&mut self, s: &TrainerState) -> Result<()> {
        self.evals.push(s.round);
        Ok(())
    }
}

#[test]
fn round_structure_and_frozen_classifier() {
    let mut c = small("grid25", TrainerKind::Okgan);
    c.eval_every = 2;
    let mut hooks = Counter::default();
    let state = train_okgan_2d(&c, &mut hooks).unwrap();
    assert_eq!(state.round, 4);
    assert_eq!(hooks.disc, vec![0, 1, 2, 3]);
    assert_eq!(hooks.gen.len(), 4 * 3);
    for r in 0..4 {
        assert_eq!(hooks.gen.iter().filter(|&&g| g == r).count(), 3);
    }
    assert!(hooks.encoder.is_empty());
    assert_eq!(hooks.frozen_violations, 0);
    assert_eq!(hooks.evals, vec![2, 4]);
}

#[test]
fn encoder_skips_first_round() {
    let c = small("grid25", TrainerKind::OkganEncoder);
    let mut hooks = Counter::default();
    let data = DataSource::Mixture(make_grid(5, 4.0, 0.05).unwrap());
    let state = train_okgan_encoder(&c, data, &mut hooks).unwrap();
    assert_eq!(hooks.encoder, vec![1, 2, 3]);
    assert_eq!(hooks.frozen_violations, 0);
    assert_eq!(state.machine().unwrap().dim(), Some(3));
}

#[test]
fn learning_rate_and_gamma_follow_schedules() {
    let mut c = small("ring8", TrainerKind::Okgan);
    c.rounds = 5;
    let state = train_okgan_2d(&c, &mut NoHooks).unwrap();
    let expect = 5e-4 * 0.999f64.powi(5);
    assert!((state.learning_rate - expect).abs() <= 1e-12 * expect);
    let KernelSpec::Gaussian { gamma } = state.machine().unwrap().kernel() else {
        panic!("gaussian kernel expected");
    };
    assert!((gamma - 3.2 * 1.0015f64.powi(5)).abs() < 1e-12);
}

#[test]
fn identity_encoder_matches_plain_trainer() {
    let plain = small("grid25", TrainerKind::Okgan);
    let mut enc = plain.clone();
    enc.trainer = TrainerKind::OkganEncoder;
    enc.encoder.identity = true;
    enc.encoder.frozen = true;
    enc.encoder.output_dim = 2;
    let a = train_okgan_2d(&plain, &mut NoHooks).unwrap();
    let data = DataSource::Mixture(GaussianMixtureSpec::preset("grid25").unwrap());
    let b = train_okgan_encoder(&enc, data, &mut NoHooks).unwrap();
    assert_eq!(a.generator.params(), b.generator.params());
    assert_eq!(a.machine().unwrap().fingerprint(), b.machine().unwrap().fingerprint());
}

#[test]
fn satisfied_hinge_gives_zero_gradient() {
    let c = small("grid25", TrainerKind::Okgan);
    let mut state = TrainerState::new(&c, 2).unwrap();
    let machine = BudgetedKernelMachine::from_parts(
        KernelSpec::gaussian(0.2),
        OkcParams::default(),
        Some(2),
        vec![0.0, 0.0],
        vec![0.0],
        vec![0],
        2.0,
        1,
    )
    .unwrap();
    let z = standard_normal(&mut RngState::new(1), 32, 2);
    let (loss, grads) = generator_loss_and_grad(&state.generator, None, &machine, &z).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.is_zero());
    let before: Vec<Vec<f64>> = state.generator.params().iter().map(|p| p.to_vec()).collect();
    state.generator_opt.step(&mut state.generator.params_mut(), &grads.slices(), 1e-3).unwrap();
    let after: Vec<Vec<f64>> = state.generator.params().iter().map(|p| p.to_vec()).collect();
    assert_eq!(before, after);
    assert_eq!(state.generator_opt.step, 1);
}

#[test]
fn single_generator_step_descends() {
    let mut violations = 0;
    for seed in 0..100 {
        let mut c = small("grid25", TrainerKind::Okgan);
        c.seed = seed;
        c.generator.hidden = vec![8, 8];
        let mut state = TrainerState::new(&c, 2).unwrap();
        let mut rng = RngState::new(seed + 1000);
        let reals = GaussianMixtureSpec::preset("grid25").unwrap().sample(&mut rng, 32);
        let fakes = state.generate(32, &mut rng).unwrap();
        let Discriminator::Kernel(m) = &mut state.discriminator else { unreachable!() };
        m.fit_round(&reals, &fakes, 16, &mut rng).unwrap();
        let machine = m.clone();
        let z = standard_normal(&mut rng, 32, 2);
        let (before, grads) = generator_loss_and_grad(&state.generator, None, &machine, &z).unwrap();
        state.generator_opt.step(&mut state.generator.params_mut(), &grads.slices(), 1e-4).unwrap();
        let (after, _) = generator_loss_and_grad(&state.generator, None, &machine, &z).unwrap();
        if after > before {
            violations += 1;
        }
    }
    assert!(violations <= 5, "{violations} violations");
}

#[test]
fn checkpoint_round_trip_resumes_bit_exactly() {
    let c = small("circle", TrainerKind::Okgan);
    let data = DataSource::Mixture(GaussianMixtureSpec::preset("circle").unwrap());
    let mut straight = Trainer::new(c.clone(), data.clone()).unwrap();
    straight.run_rounds(2, &mut NoHooks).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    save_checkpoint(straight.state(), &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.fingerprint(), straight.state().fingerprint());

    let mut resumed = Trainer::resume(c, data, loaded).unwrap();
    straight.run_rounds(2, &mut NoHooks).unwrap();
    resumed.run_rounds(2, &mut NoHooks).unwrap();
    assert_eq!(straight.state().fingerprint(), resumed.state().fingerprint());
    let mut r1 = RngState::substream(1, Stream::Eval);
    let mut r2 = r1.clone();
    assert_eq!(
        straight.state().generate(50, &mut r1).unwrap(),
        resumed.state().generate(50, &mut r2).unwrap()
    );
}

#[test]
fn checkpoint_errors_are_distinct() {
    let c = small("grid25", TrainerKind::Vanilla);
    let state = TrainerState::new(&c, 2).unwrap();
    let bytes = checkpoint::encode(&state);
    assert_eq!(checkpoint::decode(&bytes).unwrap().fingerprint(), state.fingerprint());

    let truncated = &bytes[..bytes.len() - 10];
    assert!(matches!(checkpoint::decode(truncated), Err(Error::CheckpointCorrupt(_))));
    let mut flipped = bytes.clone();
    flipped[40] ^= 1;
    assert!(matches!(checkpoint::decode(&flipped), Err(Error::CheckpointCorrupt(_))));
    let mut versioned = bytes.clone();
    versioned[8] = 99;
    assert!(matches!(
        checkpoint::decode(&versioned),
        Err(Error::CheckpointVersion { found: 99, .. })
    ));
}

#[test]
fn resume_rejects_other_config() {
    let c = small("grid25", TrainerKind::Okgan);
    let state = TrainerState::new(&c, 2).unwrap();
    let mut other = c.clone();
    other.seed += 1;
    let data = DataSource::Mixture(GaussianMixtureSpec::preset("grid25").unwrap());
    assert!(Trainer::resume(other, data, state).is_err());
}

#[test]
fn vanilla_is_deterministic() {
    let c = small("ring8", TrainerKind::Vanilla);
    let mut hooks = Counter::default();
    let a = train_vanilla_gan(&c, &mut hooks).unwrap();
    let b = train_vanilla_gan(&c, &mut NoHooks).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_eq!(hooks.disc.len(), 4);
    assert_eq!(hooks.gen.len(), 4);
}

#[test]
fn generate_shape_and_reproducibility() {
    let c = small("grid25", TrainerKind::Okgan);
    let state = TrainerState::new(&c, 2).unwrap();
    let a = state.generate(DEFAULT_EVAL_SAMPLES, &mut RngState::new(5)).unwrap();
    let b = state.generate(DEFAULT_EVAL_SAMPLES, &mut RngState::new(5)).unwrap();
    assert_eq!(a.shape(), (2500, 2));
    assert_eq!(a, b);
}

#[test]
fn divergence_writes_diagnostic_checkpoint() {
    let c = small("grid25", TrainerKind::Okgan);
    let mut state = TrainerState::new(&c, 2).unwrap();
    let last = state.generator.layers_mut().last_mut().unwrap();
    last.bias[0] = f64::NAN;
    let data = DataSource::Mixture(GaussianMixtureSpec::preset("grid25").unwrap());
    let mut t = Trainer::resume(c, data, state).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("diverged.ckpt");
    t.set_diagnostic_checkpoint(&path);
    match t.train_round(&mut NoHooks) {
        Err(Error::Diverged { round: 0, checkpoint: Some(p), .. }) => assert!(load_checkpoint(p).is_ok()),
        other => panic!("expected divergence, got {other:?}"),
    }
}

use crate::kernels::KernelSpec;
use crate::okc::OkcParams;
