//! Framed TCP transport for the retrieval protocol.
//!
//! Every frame is `"PCSI" | version (0x01) | kind | payload_len (u32 LE) |
//! payload`. Field elements travel as 2-byte little-endian words.
//!
//! | kind | payload |
//! |------|---------|
//! | `HELLO` (0x01) | empty |
//! | `PARAMS` (0x02) | q, K, M, m (u16 LE each), model (u8), K evaluation points |
//! | `QUERY` (0x03) | model (u8), R (u16), K (u16), R·K elements row-major |
//! | `ANSWER` (0x04) | R (u16), m (u16), R·m elements row-major |
//! | `ERROR` (0x7F) | code (u8), UTF-8 reason |

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use rand::Rng;
use thiserror::Error;

use crate::field::{FieldElement, FieldParams};
use crate::protocol::{
    client_build_query, client_recover, server_answer, Answer, Database, Model, ProtocolParams,
    Query, SideInformation,
};

pub const MAGIC: [u8; 4] = *b"PCSI";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 10;
/// Largest payload a frame may declare.
pub const MAX_PAYLOAD: usize = (1 << 31) - 1;
/// Largest payload the server will buffer for a single frame.
pub const SERVER_PAYLOAD_LIMIT: usize = 64 << 20;

pub const QUERY_HEADER_LEN: usize = 5;
pub const ANSWER_HEADER_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    Hello = 0x01,
    Params = 0x02,
    Query = 0x03,
    Answer = 0x04,
    Error = 0x7F,
}

impl FrameKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => Self::Hello,
            0x02 => Self::Params,
            0x03 => Self::Query,
            0x04 => Self::Answer,
            0x7F => Self::Error,
            _ => return None,
        })
    }
}

/// Codes carried in the first byte of an `ERROR` payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    Malformed = 0x01,
    UnknownKind = 0x02,
    Dimension = 0x03,
    ElementOutOfRange = 0x04,
    UnexpectedFrame = 0x05,
}

impl ErrorCode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Malformed => "malformed",
            Self::UnknownKind => "unknown-kind",
            Self::Dimension => "dimension",
            Self::ElementOutOfRange => "element-out-of-range",
            Self::UnexpectedFrame => "unexpected-frame",
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => Self::Malformed,
            0x02 => Self::UnknownKind,
            0x03 => Self::Dimension,
            0x04 => Self::ElementOutOfRange,
            0x05 => Self::UnexpectedFrame,
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("payload of {0} bytes exceeds the frame limit")]
    PayloadTooLarge(usize),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("element {value} out of range for GF({q})")]
    ElementOutOfRange { value: u16, q: u16 },
    #[error("server reported {code:?}: {reason}")]
    Remote {
        code: Option<ErrorCode>,
        reason: String,
    },
    #[error("unexpected frame kind 0x{0:02x}")]
    UnexpectedFrame(u8),
    #[error("server parameters differ from local parameters: {0}")]
    ParamsMismatch(String),
    #[error(transparent)]
    Protocol(#[from] crate::error::Error),
}

/// A decoded frame. `kind` is kept raw so unknown kinds can be answered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: u8,
    pub payload: Vec<u8>,
}

pub fn encode_frame(kind: u8, payload: &[u8]) -> Result<Vec<u8>, NetError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(NetError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(kind);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

struct Header {
    kind: u8,
    len: usize,
}

fn parse_header(bytes: &[u8; HEADER_LEN]) -> Result<Header, NetError> {
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(NetError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(NetError::BadVersion(bytes[4]));
    }
    let len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(NetError::PayloadTooLarge(len));
    }
    Ok(Header {
        kind: bytes[5],
        len,
    })
}

/// Decodes one frame from the front of `bytes`; returns it with the number
/// of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), NetError> {
    if bytes.len() < HEADER_LEN {
        return Err(NetError::Truncated {
            needed: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let header = parse_header(bytes[..HEADER_LEN].try_into().expect("header"))?;
    let end = HEADER_LEN + header.len;
    if bytes.len() < end {
        return Err(NetError::Truncated {
            needed: end,
            have: bytes.len(),
        });
    }
    Ok((
        Frame {
            kind: header.kind,
            payload: bytes[HEADER_LEN..end].to_vec(),
        },
        end,
    ))
}

pub fn write_frame<W: Write>(
    w: &mut W,
    kind: FrameKind,
    payload: &[u8],
) -> Result<usize, NetError> {
    let bytes = encode_frame(kind as u8, payload)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len())
}

/// Reads one frame. Returns `Ok(None)` on a clean EOF before any header byte.
pub fn read_frame<R: Read>(r: &mut R, limit: usize) -> Result<Option<Frame>, NetError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(NetError::Truncated {
                    needed: HEADER_LEN,
                    have: got,
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let header = parse_header(&header)?;
    if header.len > limit {
        return Err(NetError::PayloadTooLarge(header.len));
    }
    let mut payload = vec![0u8; header.len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => NetError::Truncated {
            needed: HEADER_LEN + header.len,
            have: HEADER_LEN,
        },
        _ => e.into(),
    })?;
    Ok(Some(Frame {
        kind: header.kind,
        payload,
    }))
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.buf.len() < n {
            return Err(NetError::Malformed(format!(
                "payload ends {} bytes early",
                n - self.buf.len()
            )));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn elements(&mut self, n: usize, field: FieldParams) -> Result<Vec<FieldElement>, NetError> {
        let q = field.modulus();
        (0..n)
            .map(|_| {
                let value = self.u16()?;
                field
                    .try_elem(value)
                    .map_err(|_| NetError::ElementOutOfRange { value, q })
            })
            .collect()
    }

    fn finish(&self) -> Result<(), NetError> {
        if !self.buf.is_empty() {
            return Err(NetError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len()
            )));
        }
        Ok(())
    }
}

fn put_elements(out: &mut Vec<u8>, elems: &[FieldElement]) {
    for e in elems {
        out.extend_from_slice(&e.value().to_le_bytes());
    }
}

fn dim_u16(n: usize, what: &str) -> Result<u16, NetError> {
    u16::try_from(n).map_err(|_| NetError::Malformed(format!("{what} = {n} exceeds 65535")))
}

pub fn encode_query(query: &Query) -> Result<Vec<u8>, NetError> {
    let r = query.num_rows();
    let k = query.num_cols();
    let mut out = Vec::with_capacity(QUERY_HEADER_LEN + 2 * r * k);
    out.push(query.model.indicator());
    out.extend_from_slice(&dim_u16(r, "R")?.to_le_bytes());
    out.extend_from_slice(&dim_u16(k, "K")?.to_le_bytes());
    for row in &query.rows {
        if row.len() != k {
            return Err(NetError::Malformed("ragged query rows".into()));
        }
        put_elements(&mut out, row);
    }
    Ok(out)
}

pub fn decode_query(payload: &[u8], field: FieldParams) -> Result<Query, NetError> {
    let mut c = Cursor { buf: payload };
    let flag = c.u8()?;
    let model = Model::from_indicator(flag)
        .ok_or_else(|| NetError::Malformed(format!("model flag {flag}")))?;
    let r = c.u16()? as usize;
    let k = c.u16()? as usize;
    if payload.len() != QUERY_HEADER_LEN + 2 * r * k {
        return Err(NetError::Malformed(format!(
            "query payload of {} bytes for R = {r}, K = {k}",
            payload.len()
        )));
    }
    let rows = (0..r)
        .map(|_| c.elements(k, field))
        .collect::<Result<_, _>>()?;
    c.finish()?;
    Ok(Query { model, rows })
}

pub fn encode_answer(answer: &Answer) -> Result<Vec<u8>, NetError> {
    let r = answer.values.len();
    let m = answer.values.first().map(Vec::len).unwrap_or(0);
    let mut out = Vec::with_capacity(ANSWER_HEADER_LEN + 2 * r * m);
    out.extend_from_slice(&dim_u16(r, "R")?.to_le_bytes());
    out.extend_from_slice(&dim_u16(m, "m")?.to_le_bytes());
    for v in &answer.values {
        if v.len() != m {
            return Err(NetError::Malformed("ragged answer values".into()));
        }
        put_elements(&mut out, v);
    }
    Ok(out)
}

pub fn decode_answer(payload: &[u8], field: FieldParams) -> Result<Answer, NetError> {
    let mut c = Cursor { buf: payload };
    let r = c.u16()? as usize;
    let m = c.u16()? as usize;
    if payload.len() != ANSWER_HEADER_LEN + 2 * r * m {
        return Err(NetError::Malformed(format!(
            "answer payload of {} bytes for R = {r}, m = {m}",
            payload.len()
        )));
    }
    let values = (0..r)
        .map(|_| c.elements(m, field))
        .collect::<Result<_, _>>()?;
    c.finish()?;
    Ok(Answer { values })
}

pub fn encode_params(params: &ProtocolParams) -> Result<Vec<u8>, NetError> {
    let mut out = Vec::with_capacity(9 + 2 * params.k());
    out.extend_from_slice(&params.field().modulus().to_le_bytes());
    out.extend_from_slice(&dim_u16(params.k(), "K")?.to_le_bytes());
    out.extend_from_slice(&dim_u16(params.side_info_size(), "M")?.to_le_bytes());
    out.extend_from_slice(&dim_u16(params.message_len(), "m")?.to_le_bytes());
    out.push(params.model().indicator());
    put_elements(&mut out, params.code().omegas());
    Ok(out)
}

pub fn decode_params(payload: &[u8]) -> Result<ProtocolParams, NetError> {
    let mut c = Cursor { buf: payload };
    let q = c.u16()?;
    let k = c.u16()? as usize;
    let side = c.u16()? as usize;
    let m = c.u16()? as usize;
    let flag = c.u8()?;
    let model = Model::from_indicator(flag)
        .ok_or_else(|| NetError::Malformed(format!("model flag {flag}")))?;
    let field = FieldParams::new(q as u32)?;
    let omegas = c.elements(k, field)?;
    c.finish()?;
    let code = crate::grs::CodeParams::with_omegas(field, omegas)?;
    Ok(ProtocolParams::new(code, side, m, model)?)
}

pub fn encode_error(code: ErrorCode, reason: &str) -> Vec<u8> {
    let mut out = vec![code as u8];
    out.extend_from_slice(reason.as_bytes());
    out
}

pub fn decode_error(payload: &[u8]) -> NetError {
    let code = payload.first().and_then(|&b| ErrorCode::from_byte(b));
    let reason = String::from_utf8_lossy(payload.get(1..).unwrap_or_default()).into_owned();
    NetError::Remote { code, reason }
}

struct Shared {
    db: Database,
    params: ProtocolParams,
    params_payload: Vec<u8>,
    shutdown: AtomicBool,
    queries: AtomicU64,
}

/// A bound, not yet running, server.
pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(
        addr: A,
        db: Database,
        params: ProtocolParams,
    ) -> Result<Self, NetError> {
        params.check_database(&db)?;
        let listener = TcpListener::bind(addr)?;
        let params_payload = encode_params(&params)?;
        Ok(Self {
            listener,
            shared: Arc::new(Shared {
                db,
                params,
                params_payload,
                shutdown: AtomicBool::new(false),
                queries: AtomicU64::new(0),
            }),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, NetError> {
        Ok(self.listener.local_addr()?)
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.shared.params
    }

    /// Accepts connections until shut down; one thread per connection.
    pub fn serve(self) -> Result<(), NetError> {
        for stream in self.listener.incoming() {
            if self.shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let shared = Arc::clone(&self.shared);
            thread::spawn(move || {
                // Per-connection failures only end that connection.
                let _ = handle_connection(stream, &shared);
            });
        }
        Ok(())
    }

    /// Runs [`Server::serve`] on a background thread.
    pub fn spawn(self) -> Result<ServerHandle, NetError> {
        let addr = self.local_addr()?;
        let shared = Arc::clone(&self.shared);
        let thread = thread::spawn(move || self.serve());
        Ok(ServerHandle {
            addr,
            shared,
            thread: Some(thread),
        })
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<Result<(), NetError>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Number of `QUERY` frames answered so far.
    pub fn queries_answered(&self) -> u64 {
        self.shared.queries.load(Ordering::SeqCst)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop();
        }
    }
}

fn handle_connection(mut stream: TcpStream, shared: &Shared) -> Result<(), NetError> {
    stream.set_nodelay(true)?;
    loop {
        let frame = match read_frame(&mut stream, SERVER_PAYLOAD_LIMIT) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            // The header was consumed in full, so the stream stays aligned.
            Err(e @ (NetError::BadMagic(_) | NetError::BadVersion(_))) => {
                write_frame(
                    &mut stream,
                    FrameKind::Error,
                    &encode_error(ErrorCode::Malformed, &e.to_string()),
                )?;
                continue;
            }
            Err(e) => {
                let _ = write_frame(
                    &mut stream,
                    FrameKind::Error,
                    &encode_error(ErrorCode::Malformed, &e.to_string()),
                );
                return Err(e);
            }
        };
        let (kind, payload) = respond(&frame, shared);
        write_frame(&mut stream, kind, &payload)?;
    }
}

fn respond(frame: &Frame, shared: &Shared) -> (FrameKind, Vec<u8>) {
    let err = |code: ErrorCode, reason: String| (FrameKind::Error, encode_error(code, &reason));
    match FrameKind::from_byte(frame.kind) {
        Some(FrameKind::Hello) => (FrameKind::Params, shared.params_payload.clone()),
        Some(FrameKind::Query) => {
            let query = match decode_query(&frame.payload, shared.db.field()) {
                Ok(q) => q,
                Err(e @ NetError::ElementOutOfRange { .. }) => {
                    return err(ErrorCode::ElementOutOfRange, e.to_string())
                }
                Err(e) => return err(ErrorCode::Malformed, e.to_string()),
            };
            match server_answer(&query, &shared.db)
                .map_err(NetError::from)
                .and_then(|a| encode_answer(&a))
            {
                Ok(payload) => {
                    shared.queries.fetch_add(1, Ordering::SeqCst);
                    (FrameKind::Answer, payload)
                }
                Err(e) => err(ErrorCode::Dimension, e.to_string()),
            }
        }
        Some(other) => err(
            ErrorCode::UnexpectedFrame,
            format!("server does not accept {other:?} frames"),
        ),
        None => err(
            ErrorCode::UnknownKind,
            format!("unknown frame kind 0x{:02x}", frame.kind),
        ),
    }
}

/// Byte accounting for one connection, frame headers included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub queries_sent: u64,
}

/// Result of a single remote retrieval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retrieval {
    pub recovered: Vec<FieldElement>,
    pub query_frame_bytes: usize,
    pub answer_frame_bytes: usize,
    /// Element bytes in the answer, excluding all headers.
    pub answer_element_bytes: usize,
    pub rows: usize,
}

/// A connection to a server that has already advertised its parameters.
pub struct Client {
    stream: TcpStream,
    remote: ProtocolParams,
    traffic: Traffic,
}

impl Client {
    /// Connects and performs the `HELLO`/`PARAMS` exchange.
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, NetError> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut traffic = Traffic::default();
        traffic.bytes_sent += write_frame(&mut stream, FrameKind::Hello, &[])? as u64;
        let frame = expect_frame(&mut stream, FrameKind::Params, &mut traffic)?;
        let remote = decode_params(&frame.payload)?;
        Ok(Self {
            stream,
            remote,
            traffic,
        })
    }

    pub fn remote_params(&self) -> &ProtocolParams {
        &self.remote
    }

    pub fn traffic(&self) -> Traffic {
        self.traffic
    }

    /// Builds a query, sends it and recovers the demand. Refuses to send
    /// anything if the advertised parameters differ from `params`.
    pub fn retrieve<R: Rng + ?Sized>(
        &mut self,
        si: &SideInformation,
        params: &ProtocolParams,
        rng: &mut R,
    ) -> Result<Retrieval, NetError> {
        if &self.remote != params {
            return Err(NetError::ParamsMismatch(describe_mismatch(
                &self.remote,
                params,
            )));
        }
        let (query, state) = client_build_query(si, params, rng)?;
        let sent = write_frame(&mut self.stream, FrameKind::Query, &encode_query(&query)?)?;
        self.traffic.bytes_sent += sent as u64;
        self.traffic.queries_sent += 1;
        let frame = expect_frame(&mut self.stream, FrameKind::Answer, &mut self.traffic)?;
        let answer = decode_answer(&frame.payload, params.field())?;
        let recovered = client_recover(&answer, &state, params)?;
        Ok(Retrieval {
            recovered,
            query_frame_bytes: sent,
            answer_frame_bytes: HEADER_LEN + frame.payload.len(),
            answer_element_bytes: frame.payload.len() - ANSWER_HEADER_LEN,
            rows: query.num_rows(),
        })
    }

    /// Sends a raw frame and returns the raw reply.
    pub fn exchange(&mut self, kind: u8, payload: &[u8]) -> Result<Frame, NetError> {
        let bytes = encode_frame(kind, payload)?;
        self.stream.write_all(&bytes)?;
        self.traffic.bytes_sent += bytes.len() as u64;
        let frame = read_frame(&mut self.stream, MAX_PAYLOAD)?.ok_or(NetError::Truncated {
            needed: HEADER_LEN,
            have: 0,
        })?;
        self.traffic.bytes_received += (HEADER_LEN + frame.payload.len()) as u64;
        Ok(frame)
    }
}

fn expect_frame(
    stream: &mut TcpStream,
    kind: FrameKind,
    traffic: &mut Traffic,
) -> Result<Frame, NetError> {
    let frame = read_frame(stream, MAX_PAYLOAD)?.ok_or(NetError::Truncated {
        needed: HEADER_LEN,
        have: 0,
    })?;
    traffic.bytes_received += (HEADER_LEN + frame.payload.len()) as u64;
    if frame.kind == FrameKind::Error as u8 {
        return Err(decode_error(&frame.payload));
    }
    if frame.kind != kind as u8 {
        return Err(NetError::UnexpectedFrame(frame.kind));
    }
    Ok(frame)
}

fn describe_mismatch(remote: &ProtocolParams, local: &ProtocolParams) -> String {
    format!(
        "server (q={}, K={}, M={}, m={}, model {}) vs client (q={}, K={}, M={}, m={}, model {})",
        remote.field().modulus(),
        remote.k(),
        remote.side_info_size(),
        remote.message_len(),
        remote.model(),
        local.field().modulus(),
        local.k(),
        local.side_info_size(),
        local.message_len(),
        local.model(),
    ) + if remote.code() != local.code() && remote.k() == local.k() {
        " (evaluation points differ)"
    } else {
        ""
    }
}

/// Connects, checks parameters and retrieves `X_W` over one query.
pub fn remote_retrieve<A: ToSocketAddrs, R: Rng + ?Sized>(
    endpoint: A,
    si: &SideInformation,
    params: &ProtocolParams,
    rng: &mut R,
) -> Result<Vec<FieldElement>, NetError> {
    let mut client = Client::connect(endpoint)?;
    Ok(client.retrieve(si, params, rng)?.recovered)
}
