//! SHA-256 fingerprints for datasets, splits and manifests.

use sha2::{Digest, Sha256};

#[derive(Default)]
pub struct Fingerprint {
    inner: Sha256,
}

impl Fingerprint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.usize(s.len());
        self.inner.update(s.as_bytes());
        self
    }

    pub fn usize(&mut self, v: usize) -> &mut Self {
        self.inner.update((v as u64).to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.inner.update(v.to_bits().to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        self.usize(vs.len());
        for v in vs {
            self.f64(*v);
        }
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.usize(b.len());
        self.inner.update(b);
        self
    }

    /// Lowercase hex digest.
    pub fn finish(&self) -> String {
        self.inner
            .clone()
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Digest of raw bytes, e.g. a canonical JSON document.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut f = Fingerprint::new();
    f.inner.update(bytes);
    f.finish()
}
