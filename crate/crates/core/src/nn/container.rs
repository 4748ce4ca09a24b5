//! The `LPAN` binary container.
//!
//! ```text
//! "LPAN" | version u16 | kind u8 | section count u16
//!   { name_len u8 | name | payload_len u32 | payload } *
//! crc32 u32 over every preceding byte
//! ```
//!
//! All integers and floats are big-endian. A network payload is
//! `layer_count u32` followed by, per layer, `in u32 | out u32 | activation u8`,
//! the row-major `f64` weights and the `f64` biases.
use super::{Activation, AdamConfig, AdamState, DenseLayer, LayerMoments, Matrix, Mlp, NnError};

pub const MAGIC: &[u8; 4] = b"LPAN";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ContainerKind {
    Model = 1,
    Bundle = 2,
    NodeSet = 3,
    Dataset = 4,
    Checkpoint = 5,
}

impl ContainerKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Model,
            2 => Self::Bundle,
            3 => Self::NodeSet,
            4 => Self::Dataset,
            5 => Self::Checkpoint,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: ContainerKind,
    pub sections: Vec<(String, Vec<u8>)>,
}

impl Container {
    pub fn new(kind: ContainerKind) -> Self {
        Self {
            kind,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, payload: Vec<u8>) {
        self.sections.push((name.to_owned(), payload));
    }

    pub fn section(&self, name: &str) -> Result<&[u8], NnError> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| NnError::Format(format!("missing section `{name}`")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.sections.len() as u16).to_be_bytes());
        for (name, payload) in &self.sections {
            out.push(name.len() as u8);
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
            out.extend_from_slice(payload);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NnError> {
        if bytes.len() < 4 + 2 + 1 + 2 + 4 {
            return Err(NnError::Format("container truncated".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(NnError::Format("bad magic".into()));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_be_bytes(crc.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(NnError::Format("CRC mismatch".into()));
        }
        let mut r = Reader::new(&body[4..]);
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(NnError::Format(format!("unsupported format version {version}")));
        }
        let kind = r.u8()?;
        let kind = ContainerKind::from_u8(kind)
            .ok_or_else(|| NnError::Format(format!("unknown container kind {kind}")))?;
        let count = r.u16()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u8()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| NnError::Format("section name is not UTF-8".into()))?;
            let plen = r.u32()? as usize;
            sections.push((name, r.take(plen)?.to_vec()));
        }
        if !r.is_empty() {
            return Err(NnError::Format("trailing bytes after last section".into()));
        }
        Ok(Self { kind, sections })
    }

    pub fn expect_kind(self, kind: ContainerKind) -> Result<Self, NnError> {
        if self.kind != kind {
            return Err(NnError::Format(format!(
                "expected a {kind:?} container, found {:?}",
                self.kind
            )));
        }
        Ok(self)
    }
}

pub fn encode_mlp(mlp: &Mlp) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + mlp.param_count() * 8 + mlp.layers().len() * 9);
    out.extend_from_slice(&(mlp.layers().len() as u32).to_be_bytes());
    for l in mlp.layers() {
        out.extend_from_slice(&(l.in_dim() as u32).to_be_bytes());
        out.extend_from_slice(&(l.out_dim() as u32).to_be_bytes());
        out.push(l.activation.tag());
        for v in l.weights.as_slice().iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

pub fn decode_mlp(bytes: &[u8]) -> Result<Mlp, NnError> {
    let mut r = Reader::new(bytes);
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        let tag = r.u8()?;
        let activation =
            Activation::from_tag(tag).ok_or_else(|| NnError::Format(format!("unknown activation tag {tag}")))?;
        let weights = r.f64s(fan_in.checked_mul(fan_out).ok_or_else(|| NnError::Format("layer too large".into()))?)?;
        let bias = r.f64s(fan_out)?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("stored parameter"));
        }
        layers.push(DenseLayer::new(Matrix::from_vec(fan_out, fan_in, weights)?, bias, activation)?);
    }
    if !r.is_empty() {
        return Err(NnError::Format("trailing bytes after last layer".into()));
    }
    Mlp::new(layers)
}

/// Optimizer state: `t` u64, β₁, β₂, ε, base lr, layer count u32, then per
/// layer rows u32, cols u32, lr, m/v weights, m/v biases.
pub fn encode_adam(state: &AdamState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&state.t.to_be_bytes());
    let c = state.config;
    for v in [c.beta1, c.beta2, c.epsilon, c.lr] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&(state.moments.len() as u32).to_be_bytes());
    for (m, lr) in state.moments.iter().zip(&state.layer_lr) {
        out.extend_from_slice(&(m.m_weights.rows() as u32).to_be_bytes());
        out.extend_from_slice(&(m.m_weights.cols() as u32).to_be_bytes());
        out.extend_from_slice(&lr.to_be_bytes());
        let all = m.m_weights.as_slice().iter().chain(m.v_weights.as_slice()).chain(&m.m_bias).chain(&m.v_bias);
        for v in all {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

pub fn decode_adam(bytes: &[u8]) -> Result<AdamState, NnError> {
    let mut r = Reader::new(bytes);
    let t = r.u64()?;
    let config = AdamConfig {
        beta1: r.f64()?,
        beta2: r.f64()?,
        epsilon: r.f64()?,
        lr: r.f64()?,
    };
    let count = r.u32()? as usize;
    let mut moments = Vec::with_capacity(count.min(64));
    let mut layer_lr = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        layer_lr.push(r.f64()?);
        let size = rows.checked_mul(cols).ok_or_else(|| NnError::Format("layer too large".into()))?;
        moments.push(LayerMoments {
            m_weights: Matrix::from_vec(rows, cols, r.f64s(size)?)?,
            v_weights: Matrix::from_vec(rows, cols, r.f64s(size)?)?,
            m_bias: r.f64s(rows)?,
            v_bias: r.f64s(rows)?,
        });
    }
    if !r.is_empty() {
        return Err(NnError::Format("trailing bytes after optimizer state".into()));
    }
    Ok(AdamState {
        config,
        t,
        moments,
        layer_lr,
    })
}

/// Big-endian cursor over a byte slice.
pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.buf.len() < n {
            return Err(NnError::Format("unexpected end of data".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    pub fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| NnError::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new(ContainerKind::Model);
        c.push("net", encode_mlp(&Mlp::init_relu_linear(&[3, 5, 2], 4).unwrap()));
        c.push("meta", vec![1, 2, 3]);
        c
    }

    #[test]
    fn adam_round_trip() {
        let net = Mlp::init_relu_linear(&[3, 5, 2], 4).unwrap();
        let mut a = AdamState::new(&net, AdamConfig::default());
        a.t = 17;
        a.moments[1].v_bias[1] = 0.25;
        a.layer_lr[0] = 1e-4;
        assert_eq!(decode_adam(&encode_adam(&a)).unwrap(), a);
        assert!(decode_adam(&encode_adam(&a)[..20]).is_err());
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Container::decode(&c.encode()).unwrap();
        assert_eq!(back, c);
        let mlp = decode_mlp(back.section("net").unwrap()).unwrap();
        assert_eq!(mlp, Mlp::init_relu_linear(&[3, 5, 2], 4).unwrap());
    }

    #[test]
    fn rejects_bad_magic_version_and_crc() {
        let bytes = sample().encode();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Container::decode(&bad).unwrap_err().to_string().contains("magic"));

        let mut bad = bytes.clone();
        bad[5] = 9;
        let n = bad.len();
        let crc = crc32fast::hash(&bad[..n - 4]);
        bad[n - 4..].copy_from_slice(&crc.to_be_bytes());
        assert!(Container::decode(&bad).unwrap_err().to_string().contains("version"));

        let mut bad = bytes.clone();
        bad[20] ^= 0x10;
        assert!(Container::decode(&bad).unwrap_err().to_string().contains("CRC"));

        assert!(Container::decode(&bytes[..8]).is_err());
    }

    #[test]
    fn missing_section_named() {
        let err = sample().section("dec2").unwrap_err();
        assert!(err.to_string().contains("dec2"));
    }
}
