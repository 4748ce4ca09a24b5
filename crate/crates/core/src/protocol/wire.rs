//! Bit-exact message encoding: one type byte followed by the payload.
//!
//! ```text
//! AuthRequest   0x01 | node_id u8
//! ChallengeMsg  0x02 | 4 × f32 BE
//! ResponseMsg   0x03 | 4 × f32 BE
//! ```
//!
//! Overhead accounting counts payload bytes only (the type byte is excluded).

use crate::models::{LatentChallenge, LatentResponse, LATENT_DIM};

pub const TAG_AUTH_REQUEST: u8 = 0x01;
pub const TAG_CHALLENGE: u8 = 0x02;
pub const TAG_RESPONSE: u8 = 0x03;

pub const AUTH_REQUEST_PAYLOAD: usize = 1;
pub const LATENT_PAYLOAD: usize = LATENT_DIM * 4;
/// Payload bytes of one complete session.
pub const SESSION_PAYLOAD: usize = AUTH_REQUEST_PAYLOAD + 2 * LATENT_PAYLOAD;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WireError {
    #[error("empty message")]
    Empty,
    #[error("unknown message type {0:#04x}")]
    BadTag(u8),
    #[error("{kind} payload must be {expected} bytes, got {got}")]
    Length { kind: &'static str, expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthRequest {
    pub node_id: u8,
}

/// A latent challenge in wire precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChallengeMsg {
    pub scalars: [f32; LATENT_DIM],
}

/// A latent response in wire precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseMsg {
    pub scalars: [f32; LATENT_DIM],
}

impl ChallengeMsg {
    pub fn new(lc: &LatentChallenge) -> Self {
        Self { scalars: lc.to_wire() }
    }

    pub fn lc(&self) -> LatentChallenge {
        LatentChallenge::from_wire(self.scalars)
    }
}

impl ResponseMsg {
    pub fn new(lr: &LatentResponse) -> Self {
        Self { scalars: lr.to_wire() }
    }

    pub fn lr(&self) -> LatentResponse {
        LatentResponse::from_wire(self.scalars)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    AuthRequest(AuthRequest),
    Challenge(ChallengeMsg),
    Response(ResponseMsg),
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::AuthRequest(_) => TAG_AUTH_REQUEST,
            Message::Challenge(_) => TAG_CHALLENGE,
            Message::Response(_) => TAG_RESPONSE,
        }
    }

    pub fn payload_len(&self) -> usize {
        match self {
            Message::AuthRequest(_) => AUTH_REQUEST_PAYLOAD,
            _ => LATENT_PAYLOAD,
        }
    }

    pub fn payload_bits(&self) -> usize {
        self.payload_len() * 8
    }
}

fn put_scalars(out: &mut Vec<u8>, s: &[f32; LATENT_DIM]) {
    for v in s {
        out.extend_from_slice(&v.to_be_bytes());
    }
}

fn get_scalars(p: &[u8]) -> [f32; LATENT_DIM] {
    let mut s = [0f32; LATENT_DIM];
    for (v, c) in s.iter_mut().zip(p.chunks_exact(4)) {
        *v = f32::from_be_bytes(c.try_into().expect("4 bytes"));
    }
    s
}

pub fn encode_wire(msg: &Message) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + msg.payload_len());
    out.push(msg.tag());
    match msg {
        Message::AuthRequest(r) => out.push(r.node_id),
        Message::Challenge(c) => put_scalars(&mut out, &c.scalars),
        Message::Response(r) => put_scalars(&mut out, &r.scalars),
    }
    out
}

pub fn decode_wire(bytes: &[u8]) -> Result<Message, WireError> {
    let (&tag, payload) = bytes.split_first().ok_or(WireError::Empty)?;
    let expect = |kind, expected| {
        if payload.len() == expected {
            Ok(())
        } else {
            Err(WireError::Length {
                kind,
                expected,
                got: payload.len(),
            })
        }
    };
    match tag {
        TAG_AUTH_REQUEST => {
            expect("AuthRequest", AUTH_REQUEST_PAYLOAD)?;
            Ok(Message::AuthRequest(AuthRequest { node_id: payload[0] }))
        }
        TAG_CHALLENGE => {
            expect("ChallengeMsg", LATENT_PAYLOAD)?;
            Ok(Message::Challenge(ChallengeMsg {
                scalars: get_scalars(payload),
            }))
        }
        TAG_RESPONSE => {
            expect("ResponseMsg", LATENT_PAYLOAD)?;
            Ok(Message::Response(ResponseMsg {
                scalars: get_scalars(payload),
            }))
        }
        t => Err(WireError::BadTag(t)),
    }
}
