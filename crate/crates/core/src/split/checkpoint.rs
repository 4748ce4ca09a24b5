use std::path::Path;

use crate::nn::container::{decode_adam, decode_mlp, encode_adam, encode_mlp, Container, ContainerKind, Reader};
use crate::nn::{AdamState, Mlp, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    A,
    B,
}

/// Both sides of a split run at a batch boundary, with optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    /// Completed epochs.
    pub epoch: usize,
    /// First batch of `epoch` not yet applied.
    pub next_batch: usize,
    /// Loss summed over the applied batches of `epoch`.
    pub epoch_loss: f64,
    pub loss_curve: Vec<f64>,
    pub upper_net: Mlp,
    pub upper_adam: AdamState,
    pub lower_net: Mlp,
    pub lower_adam: AdamState,
}

impl Checkpoint {
    pub fn start(phase: Phase, upper_adam: AdamState, upper_net: Mlp, lower_adam: AdamState, lower_net: Mlp) -> Self {
        Self {
            phase,
            epoch: 0,
            next_batch: 0,
            epoch_loss: 0.0,
            loss_curve: Vec::new(),
            upper_net,
            upper_adam,
            lower_net,
            lower_adam,
        }
    }

    pub(super) fn finish_epoch(&mut self, batches: usize) {
        self.loss_curve.push(self.epoch_loss / batches.max(1) as f64);
        self.epoch += 1;
        self.next_batch = 0;
        self.epoch_loss = 0.0;
    }

    pub(super) fn expect_phase(&self, phase: Phase) -> Result<(), NnError> {
        if self.phase != phase {
            return Err(NnError::Format(format!("checkpoint is for phase {:?}", self.phase)));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(ContainerKind::Checkpoint);
        let mut progress = vec![match self.phase {
            Phase::A => b'A',
            Phase::B => b'B',
        }];
        progress.extend_from_slice(&(self.epoch as u32).to_be_bytes());
        progress.extend_from_slice(&(self.next_batch as u32).to_be_bytes());
        progress.extend_from_slice(&self.epoch_loss.to_be_bytes());
        progress.extend_from_slice(&(self.loss_curve.len() as u32).to_be_bytes());
        for v in &self.loss_curve {
            progress.extend_from_slice(&v.to_be_bytes());
        }
        c.push("progress", progress);
        c.push("upper", encode_mlp(&self.upper_net));
        c.push("upper_adam", encode_adam(&self.upper_adam));
        c.push("lower", encode_mlp(&self.lower_net));
        c.push("lower_adam", encode_adam(&self.lower_adam));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, NnError> {
        if c.kind != ContainerKind::Checkpoint {
            return Err(NnError::Format(format!("expected a checkpoint, found {:?}", c.kind)));
        }
        let mut r = Reader::new(c.section("progress")?);
        let phase = match r.u8()? {
            b'A' => Phase::A,
            b'B' => Phase::B,
            t => return Err(NnError::Format(format!("unknown phase tag {t:#04x}"))),
        };
        let epoch = r.u32()? as usize;
        let next_batch = r.u32()? as usize;
        let epoch_loss = r.f64()?;
        let len = r.u32()? as usize;
        let loss_curve = r.f64s(len)?;
        let upper_net = decode_mlp(c.section("upper")?)?;
        let lower_net = decode_mlp(c.section("lower")?)?;
        let upper_adam = decode_adam(c.section("upper_adam")?)?;
        let lower_adam = decode_adam(c.section("lower_adam")?)?;
        if upper_adam.moments.len() != upper_net.layers().len() || lower_adam.moments.len() != lower_net.layers().len() {
            return Err(NnError::Format("optimizer state does not match its network".into()));
        }
        Ok(Self {
            phase,
            epoch,
            next_batch,
            epoch_loss,
            loss_curve,
            upper_net,
            upper_adam,
            lower_net,
            lower_adam,
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
