//! Versioned little-endian binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` version, `u64` payload length, payload, then
//! the SHA-256 of everything before it. Floats are stored as raw bits so a
//! round trip is exact.

use std::fs;
use std::path::Path;

use super::{Discriminator, TrainerKind, TrainerRng, TrainerState};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::numerics::{Activation, AdamState, BatchNormState, DenseLayer, Matrix, MlpNetwork, RngSnapshot, RngState};
use crate::okc::{BudgetedKernelMachine, LossKind, OkcParams};
use crate::util::Fingerprint;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"OKGCKPT\0";
const HEADER: usize = 8 + 4 + 8;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CheckpointCorrupt(msg.into())
}

pub fn save_checkpoint(state: &TrainerState, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(state))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainerState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

pub(crate) fn encode(state: &TrainerState) -> Vec<u8> {
    let mut w = Writer::default();
    w.str(&state.config_hash);
    w.u8(match state.kind {
        TrainerKind::Okgan => 0,
        TrainerKind::OkganEncoder => 1,
        TrainerKind::Vanilla => 2,
    });
    w.u64(state.round);
    w.f64(state.learning_rate);
    w.net(&state.generator);
    w.adam(&state.generator_opt);
    match (&state.encoder, &state.encoder_opt) {
        (Some(e), Some(o)) => {
            w.u8(1);
            w.net(e);
            w.adam(o);
        }
        _ => w.u8(0),
    }
    match &state.discriminator {
        Discriminator::Kernel(m) => {
            w.u8(0);
            w.machine(m);
        }
        Discriminator::Network { net, opt } => {
            w.u8(1);
            w.net(net);
            w.adam(opt);
        }
    }
    for r in [&state.rng.data, &state.rng.noise, &state.rng.shuffle] {
        let s = r.snapshot();
        w.buf.extend_from_slice(&s.key);
        w.u64(s.stream);
        w.buf.extend_from_slice(&s.word_pos.to_le_bytes());
    }

    let mut out = Vec::with_capacity(HEADER + w.buf.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(w.buf.len() as u64).to_le_bytes());
    out.extend_from_slice(&w.buf);
    let digest = Fingerprint::new().bytes(&out).digest();
    out.extend_from_slice(&digest);
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<TrainerState> {
    if bytes.len() < HEADER + 32 {
        return Err(corrupt(format!("file is only {} bytes", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    if len != (bytes.len() - HEADER - 32) as u64 {
        return Err(corrupt(format!(
            "payload length {len} does not match file size {}",
            bytes.len()
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Fingerprint::new().bytes(body).digest() != digest {
        return Err(corrupt("checksum mismatch"));
    }

    let mut r = Reader {
        buf: &body[HEADER..],
        pos: 0,
    };
    let config_hash = r.str()?;
    let kind = match r.u8()? {
        0 => TrainerKind::Okgan,
        1 => TrainerKind::OkganEncoder,
        2 => TrainerKind::Vanilla,
        t => return Err(corrupt(format!("unknown trainer tag {t}"))),
    };
    let round = r.u64()?;
    let learning_rate = r.f64()?;
    let generator = r.net()?;
    let generator_opt = r.adam()?;
    let (encoder, encoder_opt) = match r.u8()? {
        0 => (None, None),
        1 => (Some(r.net()?), Some(r.adam()?)),
        t => return Err(corrupt(format!("bad encoder flag {t}"))),
    };
    let discriminator = match r.u8()? {
        0 => Discriminator::Kernel(r.machine()?),
        1 => Discriminator::Network {
            net: r.net()?,
            opt: r.adam()?,
        },
        t => return Err(corrupt(format!("unknown discriminator tag {t}"))),
    };
    let mut streams = Vec::with_capacity(3);
    for _ in 0..3 {
        let key: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        streams.push(RngState::restore(&RngSnapshot { key, stream, word_pos }));
    }
    if r.pos != r.buf.len() {
        return Err(corrupt("trailing bytes after state"));
    }
    let shuffle = streams.pop().expect("three streams");
    let noise = streams.pop().expect("three streams");
    let data = streams.pop().expect("three streams");
    Ok(TrainerState {
        kind,
        config_hash,
        generator,
        generator_opt,
        encoder,
        encoder_opt,
        discriminator,
        round,
        learning_rate,
        rng: TrainerRng { data, noise, shuffle },
    })
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::LeakyRelu => 1,
        Activation::Identity => 2,
        Activation::Tanh => 3,
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        vs.iter().for_each(|&v| self.f64(v));
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn net(&mut self, net: &MlpNetwork) {
        self.u64(net.layers().len() as u64);
        for l in net.layers() {
            self.u64(l.input_dim() as u64);
            self.u64(l.output_dim() as u64);
            self.f64s(l.weights.as_slice());
            self.f64s(&l.bias);
            self.u8(activation_tag(l.activation));
            match &l.batch_norm {
                Some(bn) => {
                    self.u8(1);
                    self.f64s(&bn.scale);
                    self.f64s(&bn.shift);
                    self.f64s(&bn.running_mean);
                    self.f64s(&bn.running_var);
                    self.f64(bn.momentum);
                    self.f64(bn.eps);
                }
                None => self.u8(0),
            }
        }
    }

    fn adam(&mut self, a: &AdamState) {
        self.f64s(&a.first_moment);
        self.f64s(&a.second_moment);
        self.u64(a.step);
        self.f64(a.beta1);
        self.f64(a.beta2);
        self.f64(a.eps);
    }

    fn kernel(&mut self, k: &KernelSpec) {
        match k {
            KernelSpec::Gaussian { gamma } => {
                self.u8(0);
                self.f64(*gamma);
            }
            KernelSpec::Linear {} => self.u8(1),
            KernelSpec::Polynomial { gamma, coef0, degree } => {
                self.u8(2);
                self.f64(*gamma);
                self.f64(*coef0);
                self.u64(u64::from(*degree));
            }
            KernelSpec::RationalQuadratic { alpha } => {
                self.u8(3);
                self.f64(*alpha);
            }
            KernelSpec::MixedGaussian { gammas } => {
                self.u8(4);
                self.f64s(gammas);
            }
            KernelSpec::MixedRqLinear { alphas } => {
                self.u8(5);
                self.f64s(alphas);
            }
        }
    }

    fn machine(&mut self, m: &BudgetedKernelMachine) {
        self.kernel(m.kernel());
        let p = m.params();
        self.u64(p.budget as u64);
        self.f64(p.eta);
        self.f64(p.lambda);
        match p.loss {
            LossKind::Hinge { margin } => {
                self.u8(0);
                self.f64(margin);
            }
            LossKind::Logistic {} => self.u8(1),
        }
        self.u8(u8::from(p.skip_zero_coefficients));
        match m.dim() {
            Some(d) => {
                self.u8(1);
                self.u64(d as u64);
            }
            None => self.u8(0),
        }
        self.f64s(m.examples_flat());
        self.f64s(m.coefficients());
        self.u64(m.insertion_indices().len() as u64);
        m.insertion_indices().iter().for_each(|&i| self.u64(i));
        self.f64(m.offset());
        self.u64(m.next_index());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt("unexpected end of payload"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflows usize"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len_prefix(&mut self, elem: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.checked_mul(elem).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(corrupt("length prefix exceeds payload"));
        }
        Ok(n)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len_prefix(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn f64s_exact(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let v = self.f64s()?;
        if v.len() != expected {
            return Err(corrupt(format!("{what}: {} values, expected {expected}", v.len())));
        }
        Ok(v)
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len_prefix(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid utf-8 string"))
    }

    fn net(&mut self) -> Result<MlpNetwork> {
        let count = self.len_prefix(1)?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let input = self.usize()?;
            let output = self.usize()?;
            let size = input.checked_mul(output).ok_or_else(|| corrupt("layer too large"))?;
            let weights = Matrix::from_vec(input, output, self.f64s_exact(size, "weights")?)
                .map_err(|e| corrupt(e.to_string()))?;
            let bias = self.f64s_exact(output, "bias")?;
            let activation = match self.u8()? {
                0 => Activation::Relu,
                1 => Activation::LeakyRelu,
                2 => Activation::Identity,
                3 => Activation::Tanh,
                t => return Err(corrupt(format!("unknown activation tag {t}"))),
            };
            let batch_norm = match self.u8()? {
                0 => None,
                1 => Some(BatchNormState {
                    scale: self.f64s_exact(output, "bn scale")?,
                    shift: self.f64s_exact(output, "bn shift")?,
                    running_mean: self.f64s_exact(output, "bn mean")?,
                    running_var: self.f64s_exact(output, "bn var")?,
                    momentum: self.f64()?,
                    eps: self.f64()?,
                }),
                t => return Err(corrupt(format!("bad batch-norm flag {t}"))),
            };
            layers.push(DenseLayer {
                weights,
                bias,
                batch_norm,
                activation,
            });
        }
        MlpNetwork::from_layers(layers).map_err(|e| corrupt(e.to_string()))
    }

    fn adam(&mut self) -> Result<AdamState> {
        let first_moment = self.f64s()?;
        let second_moment = self.f64s_exact(first_moment.len(), "adam second moment")?;
        Ok(AdamState {
            first_moment,
            second_moment,
            step: self.u64()?,
            beta1: self.f64()?,
            beta2: self.f64()?,
            eps: self.f64()?,
        })
    }

    fn kernel(&mut self) -> Result<KernelSpec> {
        Ok(match self.u8()? {
            0 => KernelSpec::Gaussian { gamma: self.f64()? },
            1 => KernelSpec::Linear {},
            2 => KernelSpec::Polynomial {
                gamma: self.f64()?,
                coef0: self.f64()?,
                degree: u32::try_from(self.u64()?).map_err(|_| corrupt("polynomial degree overflow"))?,
            },
            3 => KernelSpec::RationalQuadratic { alpha: self.f64()? },
            4 => KernelSpec::MixedGaussian { gammas: self.f64s()? },
            5 => KernelSpec::MixedRqLinear { alphas: self.f64s()? },
            t => return Err(corrupt(format!("unknown kernel tag {t}"))),
        })
    }

    fn machine(&mut self) -> Result<BudgetedKernelMachine> {
        let kernel = self.kernel()?;
        let budget = self.usize()?;
        let eta = self.f64()?;
        let lambda = self.f64()?;
        let loss = match self.u8()? {
            0 => LossKind::Hinge { margin: self.f64()? },
            1 => LossKind::Logistic {},
            t => return Err(corrupt(format!("unknown loss tag {t}"))),
        };
        let skip_zero_coefficients = self.u8()? != 0;
        let dim = match self.u8()? {
            0 => None,
            1 => Some(self.usize()?),
            t => return Err(corrupt(format!("bad dimension flag {t}"))),
        };
        let examples = self.f64s()?;
        let coefficients = self.f64s()?;
        let n = self.len_prefix(8)?;
        let insertion = (0..n).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        let offset = self.f64()?;
        let next_index = self.u64()?;
        let params = OkcParams {
            budget,
            eta,
            lambda,
            loss,
            skip_zero_coefficients,
        };
        BudgetedKernelMachine::from_parts(kernel, params, dim, examples, coefficients, insertion, offset, next_index)
            .map_err(|e| corrupt(e.to_string()))
    }
}
