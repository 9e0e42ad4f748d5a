//! Frame carriers between the active party and each party worker.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};

use serde::{Deserialize, Serialize};

use super::wire::FRAME_HEADER;
use crate::error::{Error, Result};

/// One end of a bidirectional, ordered, reliable frame stream.
pub trait Link: Send {
    fn send(&mut self, frame: &[u8]) -> Result<()>;
    /// Blocks until one whole frame has arrived.
    fn recv(&mut self) -> Result<Vec<u8>>;
}

/// Both ends of the session with one party.
pub struct Channel {
    pub active: Box<dyn Link>,
    pub party: Box<dyn Link>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Inproc,
    Socket,
}

impl std::str::FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inproc" => Ok(Self::Inproc),
            "socket" => Ok(Self::Socket),
            other => Err(Error::Config(format!("unknown transport `{other}`"))),
        }
    }
}

/// One channel per party, in party-id order.
pub fn open_channels(kind: TransportKind, parties: usize) -> Result<Vec<Channel>> {
    (0..parties)
        .map(|_| match kind {
            TransportKind::Inproc => Ok(inproc_channel()),
            TransportKind::Socket => socket_channel(),
        })
        .collect()
}

pub struct InprocLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl Link for InprocLink {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| Error::Transport("peer hung up".into()))
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        self.rx
            .recv()
            .map_err(|_| Error::Transport("peer hung up".into()))
    }
}

pub fn inproc_channel() -> Channel {
    let (a_tx, p_rx) = channel();
    let (p_tx, a_rx) = channel();
    Channel {
        active: Box::new(InprocLink { tx: a_tx, rx: a_rx }),
        party: Box::new(InprocLink { tx: p_tx, rx: p_rx }),
    }
}

pub struct TcpLink {
    stream: TcpStream,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Link for TcpLink {
    fn send(&mut self, frame: &[u8]) -> Result<()> {
        self.stream
            .write_all(frame)
            .and_then(|_| self.stream.flush())
            .map_err(|e| Error::Transport(format!("send failed: {e}")))
    }

    fn recv(&mut self) -> Result<Vec<u8>> {
        let mut header = [0u8; FRAME_HEADER];
        self.stream
            .read_exact(&mut header)
            .map_err(|e| Error::Transport(format!("receive failed: {e}")))?;
        let len = u32::from_le_bytes(header[..4].try_into().expect("4 bytes")) as usize;
        let mut frame = Vec::with_capacity(FRAME_HEADER + len);
        frame.extend_from_slice(&header);
        frame.resize(FRAME_HEADER + len, 0);
        self.stream
            .read_exact(&mut frame[FRAME_HEADER..])
            .map_err(|e| Error::Transport(format!("receive failed: {e}")))?;
        Ok(frame)
    }
}

/// A loopback TCP connection; the listener is dropped once accepted.
pub fn socket_channel() -> Result<Channel> {
    let listener = TcpListener::bind(("127.0.0.1", 0))?;
    let addr = listener.local_addr()?;
    let party = TcpStream::connect(addr)?;
    let (active, _) = listener.accept()?;
    Ok(Channel {
        active: Box::new(TcpLink::new(active)?),
        party: Box::new(TcpLink::new(party)?),
    })
}
