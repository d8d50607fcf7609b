use sha2::{Digest, Sha256};

/// Incremental SHA-256 over typed values, for state and config digests.
#[derive(Clone, Default)]
pub struct Fingerprint(Sha256);

impl Fingerprint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vals: &[f64]) -> &mut Self {
        self.0.update((vals.len() as u64).to_le_bytes());
        for v in vals {
            self.0.update(v.to_bits().to_le_bytes());
        }
        self
    }

    pub fn digest(&self) -> [u8; 32] {
        self.0.clone().finalize().into()
    }

    pub fn hex(&self) -> String {
        self.digest().iter().map(|b| format!("{b:02x}")).collect()
    }
}
