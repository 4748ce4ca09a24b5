//! The six networks of the scheme with their fixed width profiles, plus the
//! helpers that turn network outputs into bits and latents.
//!
//! Verifier side: [`DnnCrpGenerator`], [`Encoder1`], [`Decoder1`].
//! Node side: [`BasicEncoder2`], [`ExtendedEncoder2`], [`Decoder2`] and a
//! read-only copy of the verifier's [`Encoder1`], grouped in [`NodeModelSet`].

mod arch;
mod bundle;
mod calibrate;
mod latent;

pub use arch::{Architecture, BASE_FEATURES, LATENT_DIM};
pub use bundle::{fresh_bundle, BundleMeta, ModelBundle, VerifierModels};
pub use calibrate::{calibrate_delta, reconstruct_words, Calibration, MAX_DELTA, NOISE_MARGIN};
pub use latent::{LatentBox, LatentChallenge, LatentResponse};

use crate::nn::{Matrix, Mlp, NnError};
use crate::par;
use crate::puf::{Challenge, Crp, Response, CHALLENGE_BITS, RESPONSE_BITS};

pub const DEFAULT_TAU: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("index {index} out of range for {n} enrolled CRPs")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("cannot binarize a non-finite value")]
    NonFinite,
    #[error("calibration failed: {0}")]
    Calibration(String),
}

/// Width of the binary CRP index: ⌈log₂(n+1)⌉.
pub fn index_width(n: usize) -> usize {
    (usize::BITS - n.leading_zeros()) as usize
}

/// Big-endian, fixed-width binary encoding of `i` for an enrolled set of size `n`.
pub fn index_to_bits(i: usize, n: usize) -> Result<Vec<bool>, ModelError> {
    if i >= n {
        return Err(ModelError::IndexOutOfRange { index: i, n });
    }
    let w = index_width(n);
    Ok((0..w).map(|b| (i >> (w - 1 - b)) & 1 == 1).collect())
}

/// Bit `i` is set iff `v[i] >= tau`.
pub fn binarize(v: &[f64], tau: f64) -> Result<Vec<bool>, ModelError> {
    v.iter()
        .map(|&x| if x.is_finite() { Ok(x >= tau) } else { Err(ModelError::NonFinite) })
        .collect()
}

fn bits_to_f64s(bits: &[bool]) -> Vec<f64> {
    bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

fn checked(arch: Architecture, net: Mlp) -> Result<Mlp, NnError> {
    arch.check(&net)?;
    Ok(net)
}

/// Maps a CRP index to the concatenated challenge and response bits.
#[derive(Debug, Clone, PartialEq)]
pub struct DnnCrpGenerator {
    net: Mlp,
    n: usize,
}

impl DnnCrpGenerator {
    pub fn new(n: usize, seed: u64) -> Result<Self, NnError> {
        Ok(Self {
            net: Architecture::dnn(n).build(seed)?,
            n,
        })
    }

    pub fn from_mlp(net: Mlp, n: usize) -> Result<Self, NnError> {
        Ok(Self {
            net: checked(Architecture::dnn(n), net)?,
            n,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Index-bit inputs for all `n` indices, one row each.
    pub fn index_matrix(&self) -> Matrix {
        let w = index_width(self.n);
        let mut m = Matrix::zeros(self.n, w);
        for i in 0..self.n {
            for b in 0..w {
                if (i >> (w - 1 - b)) & 1 == 1 {
                    m.set(i, b, 1.0);
                }
            }
        }
        m
    }

    pub fn generate_crp(&self, index: usize) -> Result<(Challenge, Response), ModelError> {
        let input = bits_to_f64s(&index_to_bits(index, self.n)?);
        let out = self.net.predict(&input)?;
        split_crp(&out)
    }

    /// Regenerates the whole enrolled set.
    pub fn generate_all(&self) -> Result<Vec<Crp>, ModelError> {
        let out = self.net.predict_batch(&self.index_matrix())?;
        out.iter_rows()
            .map(|row| split_crp(row).map(|(challenge, response)| Crp { challenge, response }))
            .collect()
    }
}

fn split_crp(out: &[f64]) -> Result<(Challenge, Response), ModelError> {
    let bits = binarize(out, DEFAULT_TAU)?;
    let c = Challenge::from_bits(&bits[..CHALLENGE_BITS]).expect("32 challenge bits");
    let r = Response::from_bits(&bits[CHALLENGE_BITS..CHALLENGE_BITS + RESPONSE_BITS]).expect("16 response bits");
    Ok((c, r))
}

macro_rules! network {
    ($(#[$doc:meta])* $name:ident, $arch:expr) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            net: Mlp,
        }

        impl $name {
            pub fn new(seed: u64) -> Result<Self, NnError> {
                Ok(Self { net: $arch.build(seed)? })
            }

            pub fn from_mlp(net: Mlp) -> Result<Self, NnError> {
                Ok(Self { net: checked($arch, net)? })
            }

            pub fn net(&self) -> &Mlp {
                &self.net
            }

            pub fn net_mut(&mut self) -> &mut Mlp {
                &mut self.net
            }

            pub fn into_mlp(self) -> Mlp {
                self.net
            }
        }
    };
}

network!(
    /// Challenge (32 bits) → latent challenge (4 reals).
    Encoder1,
    Architecture::encoder1()
);
network!(
    /// Latent response → response (16 reals, binarized by the caller).
    Decoder1,
    Architecture::decoder1()
);
network!(
    /// Latent challenge → 256 base features shared by both node heads.
    BasicEncoder2,
    Architecture::basic_encoder2()
);
network!(
    /// Base features → challenge (32 reals, binarized by the caller).
    Decoder2,
    Architecture::decoder2()
);

impl Encoder1 {
    pub fn encode_challenge(&self, c: Challenge) -> LatentChallenge {
        let out = self.net.predict(&c.to_f64s()).expect("encoder input is 32 wide");
        LatentChallenge::from_slice(&out)
    }

    /// Encodes rows of challenge bits (`batch × 32`).
    pub fn encode_batch(&self, challenges: &Matrix) -> Result<Matrix, NnError> {
        self.net.predict_batch(challenges)
    }
}

impl Decoder1 {
    pub fn decode_response(&self, lr: &LatentResponse) -> Vec<f64> {
        self.net.predict(lr.as_slice()).expect("decoder input is 4 wide")
    }
}

/// Basic encoder (frozen after the first training phase) followed by the
/// trainable extension head that produces the latent response.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedEncoder2 {
    pub base: BasicEncoder2,
    extension: Mlp,
}

impl ExtendedEncoder2 {
    /// Wraps a trained base, freezing it.
    pub fn new(mut base: BasicEncoder2, seed: u64) -> Result<Self, NnError> {
        base.net_mut().freeze_all();
        Ok(Self {
            base,
            extension: Architecture::extension().build(seed)?,
        })
    }

    pub fn from_parts(mut base: BasicEncoder2, extension: Mlp) -> Result<Self, NnError> {
        base.net_mut().freeze_all();
        Ok(Self {
            base,
            extension: checked(Architecture::extension(), extension)?,
        })
    }

    pub fn extension(&self) -> &Mlp {
        &self.extension
    }

    pub fn extension_mut(&mut self) -> &mut Mlp {
        &mut self.extension
    }

    pub fn predict_latent_response(&self, lc: &LatentChallenge) -> LatentResponse {
        let h = self.base.net().predict(lc.as_slice()).expect("base input is 4 wide");
        LatentResponse::from_slice(&self.extension.predict(&h).expect("extension input is 256 wide"))
    }
}

/// `Decoder2(BasicEncoder2(lc))`, before binarization.
pub fn reconstruct_challenge(base: &BasicEncoder2, dec: &Decoder2, lc: &LatentChallenge) -> Vec<f64> {
    let h = base.net().predict(lc.as_slice()).expect("base input is 4 wide");
    dec.net().predict(&h).expect("decoder input is 256 wide")
}

fn reconstruct_batch(base: &BasicEncoder2, dec: &Decoder2, lcs: &Matrix) -> Result<Matrix, NnError> {
    dec.net().predict_batch(&base.net().predict_batch(lcs)?)
}

/// Thresholds used by the node's challenge-authenticity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyParams {
    pub tau: f64,
    /// Latent-consistency bound in normalized latent units.
    pub delta: f64,
    /// Raw latent units per normalized unit (largest enrolled-LC box extent).
    pub latent_scale: f64,
}

impl VerifyParams {
    pub fn delta_raw(&self) -> f64 {
        self.delta * self.latent_scale
    }
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            delta: DEFAULT_DELTA,
            latent_scale: 1.0,
        }
    }
}

const VERIFY_CHUNK: usize = 256;

/// Everything a provisioned node holds.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeModelSet {
    pub extended_encoder2: ExtendedEncoder2,
    pub decoder2: Decoder2,
    pub verifier_encoder_copy: Encoder1,
    pub params: VerifyParams,
}

impl NodeModelSet {
    pub fn basic_encoder2(&self) -> &BasicEncoder2 {
        &self.extended_encoder2.base
    }

    /// Reconstructs C′ from `lc`, re-encodes it with the verifier's encoder
    /// copy and reconstructs C″ from that. A latent challenge is authentic
    /// iff C′ = C″ and the re-encoded latent lies within δ of `lc`.
    pub fn verify_lc_authentic(&self, lc: &LatentChallenge) -> bool {
        if !lc.is_finite() {
            return false;
        }
        let tau = self.params.tau;
        let Ok(c1) = binarize(&reconstruct_challenge(self.basic_encoder2(), &self.decoder2, lc), tau) else {
            return false;
        };
        let c1 = Challenge::from_bits(&c1).expect("32 bits");
        let lc2 = self.verifier_encoder_copy.encode_challenge(c1);
        if !lc2.is_finite() {
            return false;
        }
        let Ok(c2) = binarize(&reconstruct_challenge(self.basic_encoder2(), &self.decoder2, &lc2), tau) else {
            return false;
        };
        c1.to_bits() == c2 && lc.max_abs_diff(&lc2) <= self.params.delta_raw()
    }

    /// Batched [`verify_lc_authentic`](Self::verify_lc_authentic), run in
    /// parallel chunks when the `parallel` feature is on.
    pub fn verify_batch(&self, lcs: &[LatentChallenge]) -> Vec<bool> {
        par::map_chunks(lcs, VERIFY_CHUNK, |chunk| self.verify_chunk(chunk))
    }

    /// [`verify_batch`](Self::verify_batch) on the calling thread.
    pub fn verify_batch_sequential(&self, lcs: &[LatentChallenge]) -> Vec<bool> {
        par::map_chunks_seq(lcs, VERIFY_CHUNK, |chunk| self.verify_chunk(chunk))
    }

    fn verify_chunk(&self, lcs: &[LatentChallenge]) -> Vec<bool> {
        let tau = self.params.tau;
        let input = LatentChallenge::to_matrix(lcs);
        let run = || -> Result<Vec<bool>, ModelError> {
            let first = reconstruct_batch(self.basic_encoder2(), &self.decoder2, &input)?;
            let mut c1 = Matrix::zeros(lcs.len(), CHALLENGE_BITS);
            let mut ok = vec![true; lcs.len()];
            for (r, row) in first.iter_rows().enumerate() {
                match binarize(row, tau) {
                    Ok(bits) => c1.row_mut(r).copy_from_slice(&bits_to_f64s(&bits)),
                    Err(_) => ok[r] = false,
                }
            }
            let lc2 = self.verifier_encoder_copy.encode_batch(&c1)?;
            let second = reconstruct_batch(self.basic_encoder2(), &self.decoder2, &lc2)?;
            for r in 0..lcs.len() {
                if !ok[r] || !lcs[r].is_finite() {
                    ok[r] = false;
                    continue;
                }
                let lc2_r = LatentChallenge::from_slice(lc2.row(r));
                let same = match binarize(second.row(r), tau) {
                    Ok(bits) => bits_to_f64s(&bits) == c1.row(r),
                    Err(_) => false,
                };
                ok[r] = same && lc2_r.is_finite() && lcs[r].max_abs_diff(&lc2_r) <= self.params.delta_raw();
            }
            Ok(ok)
        };
        run().unwrap_or_else(|_| vec![false; lcs.len()])
    }

    pub fn predict_latent_response(&self, lc: &LatentChallenge) -> LatentResponse {
        self.extended_encoder2.predict_latent_response(lc)
    }
}
