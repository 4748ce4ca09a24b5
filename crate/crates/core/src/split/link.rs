//! The cut between the two halves of a split network.
//!
//! The upper end sends activations (forward) and receives gradients
//! (backward); the lower end does the opposite. Both ends enforce strict
//! alternation and block until the peer's message arrives.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};

use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn tag(self) -> u8 {
        match self {
            Direction::Forward => b'F',
            Direction::Backward => b'B',
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            b'F' => Some(Direction::Forward),
            b'B' => Some(Direction::Backward),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Upper,
    Lower,
}

#[derive(Debug, thiserror::Error)]
pub enum LinkError {
    #[error("peer disconnected")]
    Disconnected,
    #[error("alternation violated: expected to {expected} next")]
    Alternation { expected: &'static str },
    #[error("unexpected {0:?} message")]
    WrongDirection(Direction),
    #[error("corrupt frame: {0}")]
    Corrupt(String),
    #[error("injected link failure")]
    Injected,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub forward: u64,
    pub backward: u64,
}

/// One side of a [`CutLink`].
pub trait LinkEnd: Send {
    fn role(&self) -> Role;
    fn send(&mut self, m: &Matrix) -> Result<(), LinkError>;
    fn recv(&mut self) -> Result<Matrix, LinkError>;
    fn stats(&self) -> LinkStats;
    /// Tears the connection down so a peer blocked in `recv` wakes up with
    /// [`LinkError::Disconnected`].
    fn close(&mut self);
}

impl LinkEnd for Box<dyn LinkEnd> {
    fn role(&self) -> Role {
        (**self).role()
    }

    fn send(&mut self, m: &Matrix) -> Result<(), LinkError> {
        (**self).send(m)
    }

    fn recv(&mut self) -> Result<Matrix, LinkError> {
        (**self).recv()
    }

    fn stats(&self) -> LinkStats {
        (**self).stats()
    }

    fn close(&mut self) {
        (**self).close()
    }
}

/// Alternation bookkeeping shared by every end type.
#[derive(Debug)]
struct Turn {
    role: Role,
    sending: bool,
    stats: LinkStats,
}

impl Turn {
    fn new(role: Role) -> Self {
        Self {
            role,
            sending: role == Role::Upper,
            stats: LinkStats::default(),
        }
    }

    fn outgoing(&self) -> Direction {
        match self.role {
            Role::Upper => Direction::Forward,
            Role::Lower => Direction::Backward,
        }
    }

    fn incoming(&self) -> Direction {
        match self.role {
            Role::Upper => Direction::Backward,
            Role::Lower => Direction::Forward,
        }
    }

    fn before_send(&self) -> Result<Direction, LinkError> {
        if !self.sending {
            return Err(LinkError::Alternation { expected: "receive" });
        }
        Ok(self.outgoing())
    }

    fn before_recv(&self) -> Result<Direction, LinkError> {
        if self.sending {
            return Err(LinkError::Alternation { expected: "send" });
        }
        Ok(self.incoming())
    }

    fn count(&mut self, d: Direction) {
        match d {
            Direction::Forward => self.stats.forward += 1,
            Direction::Backward => self.stats.backward += 1,
        }
        self.sending = !self.sending;
    }
}

/// Bit-exact in-process end over a channel.
pub struct ChannelEnd {
    turn: Turn,
    tx: Option<Sender<(Direction, Matrix)>>,
    rx: Receiver<(Direction, Matrix)>,
}

impl LinkEnd for ChannelEnd {
    fn role(&self) -> Role {
        self.turn.role
    }

    fn send(&mut self, m: &Matrix) -> Result<(), LinkError> {
        let d = self.turn.before_send()?;
        let tx = self.tx.as_ref().ok_or(LinkError::Disconnected)?;
        tx.send((d, m.clone())).map_err(|_| LinkError::Disconnected)?;
        self.turn.count(d);
        Ok(())
    }

    fn recv(&mut self) -> Result<Matrix, LinkError> {
        let want = self.turn.before_recv()?;
        let (d, m) = self.rx.recv().map_err(|_| LinkError::Disconnected)?;
        if d != want {
            return Err(LinkError::WrongDirection(d));
        }
        self.turn.count(d);
        Ok(m)
    }

    fn stats(&self) -> LinkStats {
        self.turn.stats
    }

    fn close(&mut self) {
        self.tx = None;
    }
}

/// Byte streams a [`FramedEnd`] can run over.
pub trait Stream: Read + Write + Send {
    fn shutdown(&mut self) {}
}

impl Stream for TcpStream {
    fn shutdown(&mut self) {
        let _ = TcpStream::shutdown(self, std::net::Shutdown::Both);
    }
}

/// Length-prefixed, CRC-checked frames over any byte stream.
///
/// Frame: body length (u32 BE) | tag `F`/`B` | rows u32 | cols u32 |
/// rows·cols f64 BE | CRC-32 of the body (u32 BE).
pub struct FramedEnd<S> {
    turn: Turn,
    stream: S,
}

const MAX_FRAME: usize = 1 << 28;

impl<S: Stream> FramedEnd<S> {
    pub fn new(stream: S, role: Role) -> Self {
        Self {
            turn: Turn::new(role),
            stream,
        }
    }
}

pub fn encode_frame(d: Direction, m: &Matrix) -> Vec<u8> {
    let mut body = Vec::with_capacity(9 + m.as_slice().len() * 8);
    body.push(d.tag());
    body.extend_from_slice(&(m.rows() as u32).to_be_bytes());
    body.extend_from_slice(&(m.cols() as u32).to_be_bytes());
    for v in m.as_slice() {
        body.extend_from_slice(&v.to_be_bytes());
    }
    let mut out = Vec::with_capacity(body.len() + 8);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_be_bytes());
    out
}

/// Parses the body and trailing CRC of one frame (everything after the length).
pub fn decode_frame(body: &[u8], crc: [u8; 4]) -> Result<(Direction, Matrix), LinkError> {
    if crc32fast::hash(body) != u32::from_be_bytes(crc) {
        return Err(LinkError::Corrupt("checksum mismatch".into()));
    }
    if body.len() < 9 {
        return Err(LinkError::Corrupt("short frame".into()));
    }
    let d = Direction::from_tag(body[0]).ok_or_else(|| LinkError::Corrupt(format!("unknown tag {:#04x}", body[0])))?;
    let rows = u32::from_be_bytes(body[1..5].try_into().unwrap()) as usize;
    let cols = u32::from_be_bytes(body[5..9].try_into().unwrap()) as usize;
    let data = &body[9..];
    if data.len() != rows * cols * 8 {
        return Err(LinkError::Corrupt(format!("{rows}x{cols} matrix in {} bytes", data.len())));
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
        .collect();
    let m = Matrix::from_vec(rows, cols, values).map_err(|e| LinkError::Corrupt(e.to_string()))?;
    Ok((d, m))
}

impl<S: Stream> LinkEnd for FramedEnd<S> {
    fn role(&self) -> Role {
        self.turn.role
    }

    fn send(&mut self, m: &Matrix) -> Result<(), LinkError> {
        let d = self.turn.before_send()?;
        self.stream.write_all(&encode_frame(d, m)).map_err(eof_as_disconnect)?;
        self.stream.flush().map_err(eof_as_disconnect)?;
        self.turn.count(d);
        Ok(())
    }

    fn recv(&mut self) -> Result<Matrix, LinkError> {
        let want = self.turn.before_recv()?;
        let mut len = [0u8; 4];
        self.stream.read_exact(&mut len).map_err(eof_as_disconnect)?;
        let len = u32::from_be_bytes(len) as usize;
        if len > MAX_FRAME {
            return Err(LinkError::Corrupt(format!("frame of {len} bytes")));
        }
        let mut body = vec![0u8; len];
        self.stream.read_exact(&mut body).map_err(eof_as_disconnect)?;
        let mut crc = [0u8; 4];
        self.stream.read_exact(&mut crc).map_err(eof_as_disconnect)?;
        let (d, m) = decode_frame(&body, crc)?;
        if d != want {
            return Err(LinkError::WrongDirection(d));
        }
        self.turn.count(d);
        Ok(m)
    }

    fn stats(&self) -> LinkStats {
        self.turn.stats
    }

    fn close(&mut self) {
        self.stream.shutdown();
    }
}

fn eof_as_disconnect(e: std::io::Error) -> LinkError {
    use std::io::ErrorKind::*;
    if matches!(e.kind(), UnexpectedEof | ConnectionReset | BrokenPipe) {
        LinkError::Disconnected
    } else {
        LinkError::Io(e)
    }
}

/// Wraps an end and fails its `n`-th send (0-based), then every later call.
pub struct FailingEnd<E> {
    inner: E,
    fail_at: u64,
    sends: u64,
}

impl<E: LinkEnd> FailingEnd<E> {
    pub fn new(inner: E, fail_at: u64) -> Self {
        Self {
            inner,
            fail_at,
            sends: 0,
        }
    }
}

impl<E: LinkEnd> LinkEnd for FailingEnd<E> {
    fn role(&self) -> Role {
        self.inner.role()
    }

    fn send(&mut self, m: &Matrix) -> Result<(), LinkError> {
        if self.sends >= self.fail_at {
            return Err(LinkError::Injected);
        }
        self.sends += 1;
        self.inner.send(m)
    }

    fn recv(&mut self) -> Result<Matrix, LinkError> {
        if self.sends > self.fail_at {
            return Err(LinkError::Injected);
        }
        self.inner.recv()
    }

    fn stats(&self) -> LinkStats {
        self.inner.stats()
    }

    fn close(&mut self) {
        self.inner.close()
    }
}

/// Both ends of a cut.
pub struct CutLink {
    pub upper: Box<dyn LinkEnd>,
    pub lower: Box<dyn LinkEnd>,
}

impl CutLink {
    pub fn new(upper: Box<dyn LinkEnd>, lower: Box<dyn LinkEnd>) -> Self {
        Self { upper, lower }
    }

    /// Bit-exact link between two threads of this process.
    pub fn in_process() -> Self {
        let (up_tx, low_rx) = channel();
        let (low_tx, up_rx) = channel();
        Self {
            upper: Box::new(ChannelEnd {
                turn: Turn::new(Role::Upper),
                tx: Some(up_tx),
                rx: up_rx,
            }),
            lower: Box::new(ChannelEnd {
                turn: Turn::new(Role::Lower),
                tx: Some(low_tx),
                rx: low_rx,
            }),
        }
    }

    /// Framed link over a local TCP connection.
    pub fn tcp_loopback() -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let upper = TcpStream::connect(listener.local_addr()?)?;
        let (lower, _) = listener.accept()?;
        upper.set_nodelay(true)?;
        lower.set_nodelay(true)?;
        Ok(Self {
            upper: Box::new(FramedEnd::new(upper, Role::Upper)),
            lower: Box::new(FramedEnd::new(lower, Role::Lower)),
        })
    }

    pub fn stats(&self) -> LinkStats {
        self.upper.stats()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Matrix {
        Matrix::from_vec(2, 3, vec![1.5, -0.0, f64::MIN_POSITIVE, 3.25e-300, -7.0, 1e10]).unwrap()
    }

    #[test]
    fn channel_alternates() {
        let mut link = CutLink::in_process();
        let m = sample();
        assert!(matches!(link.upper.recv(), Err(LinkError::Alternation { .. })));
        assert!(matches!(link.lower.send(&m), Err(LinkError::Alternation { .. })));
        link.upper.send(&m).unwrap();
        assert!(matches!(link.upper.send(&m), Err(LinkError::Alternation { .. })));
        assert_eq!(link.lower.recv().unwrap(), m);
        link.lower.send(&m).unwrap();
        assert_eq!(link.upper.recv().unwrap(), m);
        assert_eq!(link.stats(), LinkStats { forward: 1, backward: 1 });
    }

    #[test]
    fn frames_round_trip_and_detect_corruption() {
        let m = sample();
        let f = encode_frame(Direction::Backward, &m);
        let body = &f[4..f.len() - 4];
        let crc: [u8; 4] = f[f.len() - 4..].try_into().unwrap();
        let (d, back) = decode_frame(body, crc).unwrap();
        assert_eq!(d, Direction::Backward);
        assert_eq!(back, m);
        let mut bad = body.to_vec();
        bad[12] ^= 1;
        assert!(matches!(decode_frame(&bad, crc), Err(LinkError::Corrupt(_))));
    }

    #[test]
    fn tcp_link_is_bit_exact() {
        let mut link = CutLink::tcp_loopback().unwrap();
        let m = sample();
        link.upper.send(&m).unwrap();
        assert_eq!(link.lower.recv().unwrap(), m);
        link.lower.send(&m).unwrap();
        assert_eq!(link.upper.recv().unwrap(), m);
    }

    #[test]
    fn failing_end_fails_on_schedule() {
        let link = CutLink::in_process();
        let mut up = FailingEnd::new(link.upper, 1);
        let mut low = link.lower;
        let m = sample();
        up.send(&m).unwrap();
        low.recv().unwrap();
        low.send(&m).unwrap();
        up.recv().unwrap();
        assert!(matches!(up.send(&m), Err(LinkError::Injected)));
    }
}
