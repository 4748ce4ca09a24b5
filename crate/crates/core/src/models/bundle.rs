use std::path::Path;

use super::{
    BasicEncoder2, Decoder1, Decoder2, DnnCrpGenerator, Encoder1, ExtendedEncoder2, LatentBox,
    NodeModelSet, VerifyParams, LATENT_DIM,
};
use crate::nn::container::{decode_mlp, encode_mlp, Container, ContainerKind, Reader};
use crate::nn::NnError;
use crate::puf::{CHALLENGE_BITS, RESPONSE_BITS};

/// Scalar settings stored next to the networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleMeta {
    pub n: usize,
    pub challenge_bits: usize,
    pub response_bits: usize,
    pub verify: VerifyParams,
    /// Bounding box of the enrolled latent challenges.
    pub lc_box: LatentBox,
}

impl BundleMeta {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.n as u64).to_be_bytes());
        out.push(self.challenge_bits as u8);
        out.push(self.response_bits as u8);
        for v in [self.verify.tau, self.verify.delta, self.verify.latent_scale] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        for v in self.lc_box.min.iter().chain(&self.lc_box.max) {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader::new(bytes);
        let n = r.u64()? as usize;
        let challenge_bits = r.u8()? as usize;
        let response_bits = r.u8()? as usize;
        if challenge_bits != CHALLENGE_BITS || response_bits != RESPONSE_BITS {
            return Err(NnError::Format(format!(
                "unsupported CRP widths {challenge_bits}/{response_bits}"
            )));
        }
        let verify = VerifyParams {
            tau: r.f64()?,
            delta: r.f64()?,
            latent_scale: r.f64()?,
        };
        let mut lc_box = LatentBox {
            min: [0.0; LATENT_DIM],
            max: [0.0; LATENT_DIM],
        };
        for v in lc_box.min.iter_mut().chain(lc_box.max.iter_mut()) {
            *v = r.f64()?;
        }
        if !r.is_empty() {
            return Err(NnError::Format("trailing bytes in metadata".into()));
        }
        Ok(Self {
            n,
            challenge_bits,
            response_bits,
            verify,
            lc_box,
        })
    }
}

/// The verifier's three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifierModels {
    pub dnn: DnnCrpGenerator,
    pub encoder1: Encoder1,
    pub decoder1: Decoder1,
}

/// All six trained networks plus their metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub dnn: DnnCrpGenerator,
    pub encoder1: Encoder1,
    pub decoder1: Decoder1,
    pub extended_encoder2: ExtendedEncoder2,
    pub decoder2: Decoder2,
    pub meta: BundleMeta,
}

impl ModelBundle {
    pub fn basic_encoder2(&self) -> &BasicEncoder2 {
        &self.extended_encoder2.base
    }

    pub fn verifier_models(&self) -> VerifierModels {
        VerifierModels {
            dnn: self.dnn.clone(),
            encoder1: self.encoder1.clone(),
            decoder1: self.decoder1.clone(),
        }
    }

    /// What gets provisioned onto a node: its own networks and a copy of
    /// the verifier's encoder.
    pub fn node_set(&self) -> NodeModelSet {
        NodeModelSet {
            extended_encoder2: self.extended_encoder2.clone(),
            decoder2: self.decoder2.clone(),
            verifier_encoder_copy: self.encoder1.clone(),
            params: self.meta.verify,
        }
    }

    /// One digest per network, in section order.
    pub fn digests(&self) -> [u32; 6] {
        [
            self.dnn.net().param_digest(),
            self.encoder1.net().param_digest(),
            self.decoder1.net().param_digest(),
            self.basic_encoder2().net().param_digest(),
            self.extended_encoder2.extension().param_digest(),
            self.decoder2.net().param_digest(),
        ]
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(ContainerKind::Bundle);
        c.push("dnn", encode_mlp(self.dnn.net()));
        c.push("enc1", encode_mlp(self.encoder1.net()));
        c.push("dec1", encode_mlp(self.decoder1.net()));
        c.push("benc2", encode_mlp(self.basic_encoder2().net()));
        c.push("xenc2", encode_mlp(self.extended_encoder2.extension()));
        c.push("dec2", encode_mlp(self.decoder2.net()));
        c.push("meta", self.meta.encode());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, NnError> {
        if c.kind != ContainerKind::Bundle {
            return Err(NnError::Format(format!("expected a bundle container, found {:?}", c.kind)));
        }
        let meta = BundleMeta::decode(c.section("meta")?)?;
        Ok(Self {
            dnn: DnnCrpGenerator::from_mlp(decode_mlp(c.section("dnn")?)?, meta.n)?,
            encoder1: Encoder1::from_mlp(decode_mlp(c.section("enc1")?)?)?,
            decoder1: Decoder1::from_mlp(decode_mlp(c.section("dec1")?)?)?,
            extended_encoder2: ExtendedEncoder2::from_parts(
                BasicEncoder2::from_mlp(decode_mlp(c.section("benc2")?)?)?,
                decode_mlp(c.section("xenc2")?)?,
            )?,
            decoder2: Decoder2::from_mlp(decode_mlp(c.section("dec2")?)?)?,
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_container().encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let bytes = std::fs::read(path).map_err(|e| NnError::Format(e.to_string()))?;
        Self::from_container(&Container::decode(&bytes)?)
    }
}

impl NodeModelSet {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(ContainerKind::NodeSet);
        c.push("benc2", encode_mlp(self.basic_encoder2().net()));
        c.push("xenc2", encode_mlp(self.extended_encoder2.extension()));
        c.push("dec2", encode_mlp(self.decoder2.net()));
        c.push("enc1", encode_mlp(self.verifier_encoder_copy.net()));
        let mut params = Vec::new();
        for v in [self.params.tau, self.params.delta, self.params.latent_scale] {
            params.extend_from_slice(&v.to_be_bytes());
        }
        c.push("params", params);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, NnError> {
        if c.kind != ContainerKind::NodeSet {
            return Err(NnError::Format(format!("expected a node container, found {:?}", c.kind)));
        }
        let mut r = Reader::new(c.section("params")?);
        let params = VerifyParams {
            tau: r.f64()?,
            delta: r.f64()?,
            latent_scale: r.f64()?,
        };
        Ok(Self {
            extended_encoder2: ExtendedEncoder2::from_parts(
                BasicEncoder2::from_mlp(decode_mlp(c.section("benc2")?)?)?,
                decode_mlp(c.section("xenc2")?)?,
            )?,
            decoder2: Decoder2::from_mlp(decode_mlp(c.section("dec2")?)?)?,
            verifier_encoder_copy: Encoder1::from_mlp(decode_mlp(c.section("enc1")?)?)?,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_container().encode())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let bytes = std::fs::read(path).map_err(|e| NnError::Format(e.to_string()))?;
        Self::from_container(&Container::decode(&bytes)?)
    }
}

/// Untrained bundle with default metadata, mostly for tests.
pub fn fresh_bundle(n: usize, seed: u64) -> Result<ModelBundle, NnError> {
    let base = BasicEncoder2::new(seed.wrapping_add(3))?;
    Ok(ModelBundle {
        dnn: DnnCrpGenerator::new(n, seed)?,
        encoder1: Encoder1::new(seed.wrapping_add(1))?,
        decoder1: Decoder1::new(seed.wrapping_add(2))?,
        extended_encoder2: ExtendedEncoder2::new(base, seed.wrapping_add(4))?,
        decoder2: Decoder2::new(seed.wrapping_add(5))?,
        meta: BundleMeta {
            n,
            challenge_bits: CHALLENGE_BITS,
            response_bits: RESPONSE_BITS,
            verify: VerifyParams::default(),
            lc_box: LatentBox {
                min: [0.0; LATENT_DIM],
                max: [1.0; LATENT_DIM],
            },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_round_trip() {
        let b = fresh_bundle(300, 7).unwrap();
        let back = ModelBundle::from_container(&Container::decode(&b.to_container().encode()).unwrap()).unwrap();
        assert_eq!(back.digests(), b.digests());
        assert_eq!(back.meta, b.meta);
        assert_eq!(back.dnn.n(), 300);
    }

    #[test]
    fn node_set_round_trip() {
        let b = fresh_bundle(16, 2).unwrap();
        let node = b.node_set();
        let back = NodeModelSet::from_container(&Container::decode(&node.to_container().encode()).unwrap()).unwrap();
        assert_eq!(back, node);
        assert_eq!(back.verifier_encoder_copy, b.encoder1);
    }

    #[test]
    fn wrong_kind_rejected() {
        let b = fresh_bundle(16, 2).unwrap();
        assert!(NodeModelSet::from_container(&b.to_container()).is_err());
    }
}
