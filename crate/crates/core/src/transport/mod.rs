//! Framed byte channels (TCP and in-process loopback) and the verifier and
//! node roles that run the protocol over them.

mod frame;
mod loopback;

pub use frame::{
    decode_frame, encode_frame, read_frame, FrameError, ReadFrameError, FRAME_MAGIC, FRAME_OVERHEAD, FRAME_VERSION,
};
pub use loopback::{loopback_pair, Fault, FaultPlan, LoopbackEnd};

use std::io::{ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::protocol::{
    decode_wire, encode_wire, ChallengeMsg, Message, NodeReply, NodeState, ProtocolError, ResponseMsg, SessionId,
    Verdict, VerifierState, WireError,
};

/// Type byte of the verdict notice the verifier sends after deciding. It is
/// diagnostics only and not part of the protocol's message budget.
pub const TAG_VERDICT: u8 = 0x7F;
/// Verdict-notice code for a response to a session that is already closed.
pub const CODE_NO_SESSION: u8 = 0xFF;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("connection closed")]
    Closed,
    #[error("timed out")]
    Timeout,
    #[error("corrupt frame: {0}")]
    Corrupt(#[from] FrameError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("unexpected message: {0}")]
    Unexpected(String),
    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            ErrorKind::WouldBlock | ErrorKind::TimedOut => TransportError::Timeout,
            ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset | ErrorKind::BrokenPipe | ErrorKind::ConnectionAborted => {
                TransportError::Closed
            }
            _ => TransportError::Io(e),
        }
    }
}

impl From<ReadFrameError> for TransportError {
    fn from(e: ReadFrameError) -> Self {
        match e {
            ReadFrameError::Frame(f) => TransportError::Corrupt(f),
            ReadFrameError::Io(e) => e.into(),
        }
    }
}

/// Bidirectional channel of framed payloads.
pub trait FrameChannel: Send {
    fn send_payload(&mut self, payload: &[u8]) -> Result<(), TransportError>;
    /// Blocks for the next payload; `None` waits indefinitely.
    fn recv_payload(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError>;
    fn close(&mut self);
    /// Framed bytes written so far.
    fn bytes_sent(&self) -> usize;
}

pub struct TcpChannel {
    stream: TcpStream,
    sent: usize,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> std::io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { stream, sent: 0 })
    }

    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, TransportError> {
        let mut last = None;
        for a in addr.to_socket_addrs().map_err(TransportError::Io)? {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(s) => return Ok(Self::new(s)?),
                Err(e) => last = Some(e),
            }
        }
        Err(TransportError::Io(
            last.unwrap_or_else(|| std::io::Error::new(ErrorKind::AddrNotAvailable, "no address")),
        ))
    }
}

impl FrameChannel for TcpChannel {
    fn send_payload(&mut self, payload: &[u8]) -> Result<(), TransportError> {
        let f = encode_frame(payload)?;
        self.stream.write_all(&f)?;
        self.sent += f.len();
        Ok(())
    }

    fn recv_payload(&mut self, timeout: Option<Duration>) -> Result<Vec<u8>, TransportError> {
        self.stream.set_read_timeout(timeout.map(|t| t.max(Duration::from_millis(1))))?;
        Ok(read_frame(&mut self.stream)?)
    }

    fn close(&mut self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }

    fn bytes_sent(&self) -> usize {
        self.sent
    }
}

fn send_msg(chan: &mut dyn FrameChannel, msg: &Message) -> Result<(), TransportError> {
    chan.send_payload(&encode_wire(msg))
}

fn verdict_notice(code: u8) -> [u8; 2] {
    [TAG_VERDICT, code]
}

/// What the verifier observed on one connection.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ServeOutcome {
    pub session: Option<SessionId>,
    pub verdict: Option<Verdict>,
    /// Extra responses that arrived after the session closed.
    pub late_responses_rejected: usize,
    /// No unused CRP was left for this request.
    pub pool_exhausted: bool,
    pub error: Option<String>,
}

/// Runs one session on an accepted connection. Malformed input closes the
/// connection; once an index has been drawn it stays used whatever happens.
pub fn serve_connection(vs: &VerifierState, chan: &mut dyn FrameChannel, io_timeout: Duration) -> ServeOutcome {
    let mut out = ServeOutcome::default();
    if let Err(e) = serve_inner(vs, chan, io_timeout, &mut out) {
        log::debug!("connection ended: {e}");
        out.pool_exhausted = matches!(e, TransportError::Protocol(ProtocolError::PoolExhausted { .. }));
        out.error = Some(e.to_string());
        if let (Some(id), None) = (out.session, out.verdict) {
            let closed = match e {
                TransportError::Closed => vs.on_node_abort(id),
                _ => vs.on_expired(id),
            };
            out.verdict = closed.ok();
        }
    }
    chan.close();
    out
}

fn serve_inner(
    vs: &VerifierState,
    chan: &mut dyn FrameChannel,
    io_timeout: Duration,
    out: &mut ServeOutcome,
) -> Result<(), TransportError> {
    let req = match decode_wire(&chan.recv_payload(Some(io_timeout))?)? {
        Message::AuthRequest(r) => r,
        other => return Err(TransportError::Unexpected(format!("{other:?} before AuthRequest"))),
    };
    let issued = vs.on_request(req)?;
    out.session = Some(issued.session);
    send_msg(chan, &Message::Challenge(issued.challenge))?;
    let reply = match await_reply(vs, chan, issued.deadline, io_timeout) {
        Ok(p) => p,
        Err(TransportError::Timeout) => {
            let v = vs.on_expired(issued.session)?;
            out.verdict = Some(v);
            let _ = chan.send_payload(&verdict_notice(v.code()));
            return Ok(());
        }
        Err(e) => return Err(e),
    };
    let resp = match decode_wire(&reply)? {
        Message::Response(r) => r,
        other => return Err(TransportError::Unexpected(format!("{other:?} instead of ResponseMsg"))),
    };
    let v = vs.on_response(issued.session, &resp)?;
    out.verdict = Some(v);
    chan.send_payload(&verdict_notice(v.code()))?;
    // Anything after the verdict can only be a duplicate: reject it.
    loop {
        let p = match chan.recv_payload(Some(io_timeout)) {
            Ok(p) => p,
            Err(TransportError::Closed | TransportError::Timeout) => return Ok(()),
            Err(e) => return Err(e),
        };
        match decode_wire(&p)? {
            Message::Response(r) => {
                if vs.on_response(issued.session, &r).is_ok() {
                    return Err(TransportError::Unexpected("closed session answered twice".into()));
                }
                out.late_responses_rejected += 1;
                chan.send_payload(&verdict_notice(CODE_NO_SESSION))?;
            }
            other => return Err(TransportError::Unexpected(format!("{other:?} after verdict"))),
        }
    }
}

const POLL: Duration = Duration::from_millis(50);

/// Waits for the next payload until the verifier's clock passes `deadline`.
/// The clock may be injected, so real time is only used to poll it; a
/// clock that never advances gives up after `max(io_timeout, T_max)`.
fn await_reply(
    vs: &VerifierState,
    chan: &mut dyn FrameChannel,
    deadline: Duration,
    io_timeout: Duration,
) -> Result<Vec<u8>, TransportError> {
    let started = Instant::now();
    let give_up = io_timeout.max(vs.t_max());
    loop {
        let now = vs.clock().now();
        if now > deadline || started.elapsed() > give_up {
            return Err(TransportError::Timeout);
        }
        let slice = deadline.saturating_sub(now).clamp(Duration::from_millis(1), POLL);
        match chan.recv_payload(Some(slice)) {
            Err(TransportError::Timeout) => continue,
            other => return other,
        }
    }
}

/// What the node observed.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRun {
    pub challenge: Option<ChallengeMsg>,
    pub response: Option<ResponseMsg>,
    /// The verifier's verdict, or `NodeAbortUnauthenticLc` if this node
    /// refused the challenge.
    pub verdict: Verdict,
}

impl NodeRun {
    pub fn aborted(&self) -> bool {
        self.verdict == Verdict::NodeAbortUnauthenticLc
    }
}

/// Node role: request, check the challenge, answer or hang up.
pub fn run_node(node: &NodeState, chan: &mut dyn FrameChannel, timeout: Duration) -> Result<NodeRun, TransportError> {
    send_msg(chan, &Message::AuthRequest(node.request()))?;
    let challenge = match decode_wire(&chan.recv_payload(Some(timeout))?)? {
        Message::Challenge(c) => c,
        other => return Err(TransportError::Unexpected(format!("{other:?} instead of ChallengeMsg"))),
    };
    let response = match node.on_challenge(&challenge) {
        NodeReply::Abort => {
            chan.close();
            return Ok(NodeRun {
                challenge: Some(challenge),
                response: None,
                verdict: Verdict::NodeAbortUnauthenticLc,
            });
        }
        NodeReply::Respond(r) => r,
    };
    send_msg(chan, &Message::Response(response))?;
    let notice = chan.recv_payload(Some(timeout))?;
    let verdict = match notice.as_slice() {
        [TAG_VERDICT, code] => Verdict::from_code(*code),
        _ => None,
    }
    .ok_or_else(|| TransportError::Unexpected(format!("verdict notice {notice:02x?}")))?;
    chan.close();
    Ok(NodeRun {
        challenge: Some(challenge),
        response: Some(response),
        verdict,
    })
}

/// Accepts connections until `stop` is set or `limit` connections have been
/// served, one thread per connection.
pub fn serve_tcp(
    listener: TcpListener,
    vs: Arc<VerifierState>,
    stop: Arc<AtomicBool>,
    limit: Option<usize>,
    io_timeout: Duration,
) -> std::io::Result<Vec<ServeOutcome>> {
    listener.set_nonblocking(true)?;
    let mut handles = Vec::new();
    while !stop.load(Ordering::SeqCst) && limit.is_none_or(|l| handles.len() < l) {
        match listener.accept() {
            Ok((stream, peer)) => {
                stream.set_nonblocking(false)?;
                log::info!("connection from {peer}");
                let vs = Arc::clone(&vs);
                handles.push(std::thread::spawn(move || match TcpChannel::new(stream) {
                    Ok(mut chan) => serve_connection(&vs, &mut chan, io_timeout),
                    Err(e) => ServeOutcome {
                        error: Some(e.to_string()),
                        ..Default::default()
                    },
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => return Err(e),
        }
    }
    Ok(handles
        .into_iter()
        .map(|h| h.join().unwrap_or_else(|_| ServeOutcome {
            error: Some("handler panicked".into()),
            ..Default::default()
        }))
        .collect())
}

/// Binds a listener; port 0 picks a free port.
pub fn bind(addr: impl ToSocketAddrs) -> std::io::Result<(TcpListener, SocketAddr)> {
    let l = TcpListener::bind(addr)?;
    let a = l.local_addr()?;
    Ok((l, a))
}
