//! In-process frame channel with fault injection.

use std::collections::HashMap;
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{decode_frame, encode_frame, FrameChannel, TransportError};
use crate::protocol::ManualClock;

/// What happens to one outgoing frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Drop,
    /// Advances the shared manual clock before delivery.
    Delay(Duration),
    /// Flips one bit of the encoded frame.
    Corrupt { bit: usize },
    Duplicate,
}

/// Faults keyed by the 0-based ordinal of the frame this end sends.
#[derive(Debug, Clone, Default)]
pub struct FaultPlan {
    faults: Arc<Mutex<HashMap<usize, Fault>>>,
}

impl FaultPlan {
    pub fn at(&self, nth: usize, fault: Fault) -> &Self {
        self.faults.lock().expect("fault plan").insert(nth, fault);
        self
    }

    fn take(&self, nth: usize) -> Option<Fault> {
        self.faults.lock().expect("fault plan").remove(&nth)
    }
}

pub struct LoopbackEnd {
    tx: Option<Sender<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
    plan: FaultPlan,
    clock: Option<ManualClock>,
    sent_frames: usize,
    sent_bytes: usize,
}

/// Two connected ends. Delays advance `clock` when one is given.
pub fn loopback_pair(clock: Option<ManualClock>) -> (LoopbackEnd, LoopbackEnd) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    let end = |tx, rx| LoopbackEnd {
        tx: Some(tx),
        rx,
        plan: FaultPlan::default(),
        clock: clock.clone(),
        sent_frames: 0,
        sent_bytes: 0,
    };
    (end(a_tx, a_rx), end(b_tx, b_rx))
}

impl LoopbackEnd {
    /// Faults applied to frames sent from this end.
    pub fn faults(&self) -> FaultPlan {
        self.plan.clone()
    }

    /// Sends raw bytes without framing them (for malformed-input tests).
    pub fn send_raw(&mut self, bytes: Vec<u8>) -> Result<(), TransportError> {
        self.tx
            .as_ref()
            .ok_or(TransportError::Closed)?
            .send(bytes)
            .map_err(|_| TransportError::Closed)
    }
}

impl FrameChannel for LoopbackEnd {
    fn send_payload(&mut self, payload: &[u8]) -> Result<(), TransportError> {
        let mut frame = encode_frame(payload)?;
        let nth = self.sent_frames;
        self.sent_frames += 1;
        self.sent_bytes += frame.len();
        let mut copies = 1;
        match self.plan.take(nth) {
            Some(Fault::Drop) => return Ok(()),
            Some(Fault::Delay(d)) => {
                if let Some(c) = &self.clock {
                    c.advance(d);
                }
            }
            Some(Fault::Corrupt { bit }) => {
                let bit = bit % (frame.len() * 8);
                frame[bit / 8] ^= 1 << (bit % 8);
            }
            Some(Fault::Duplicate) => copies = 2,
            None => {}
        }
        for _ in 0..copies {
            self.send_raw(frame.clone())?;
        }
        Ok(())
    }

    fn recv_payload(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError> {
        let frame = match timeout {
            None => self.rx.recv().map_err(|_| TransportError::Closed)?,
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => TransportError::Timeout,
                RecvTimeoutError::Disconnected => TransportError::Closed,
            })?,
        };
        Ok(decode_frame(&frame)?)
    }

    fn close(&mut self) {
        self.tx = None;
    }

    fn bytes_sent(&self) -> usize {
        self.sent_bytes
    }
}
