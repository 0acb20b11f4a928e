//! Line-oriented TCP relay and client.
//!
//! The relay forwards every line it receives to all other connections, in
//! arrival order, and replays its in-memory log to new connections. It never
//! looks inside lines. Because forwarding happens in one serialized section
//! and TCP preserves per-connection order, clients see a causal order, which
//! is what `Mode::NoVc` needs.
//!
//! Lines are either an envelope (`MessageEnvelope::to_line`) or
//! `save <base64>` carrying a whole-document save.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use collab_kernel::{Document, MessageEnvelope, Mode, ReplicaId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::workload::{FuzzDoc, Rng8, Target};
use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

const SAVE_PREFIX: &str = "save ";

#[derive(Default)]
struct Shared {
    log: Vec<String>,
    clients: Vec<(u64, TcpStream)>,
    next_id: u64,
}

impl Shared {
    fn forward(&mut self, from: u64, line: &str) {
        self.log.push(line.to_owned());
        self.clients.retain_mut(|(id, s)| *id == from || writeln!(s, "{line}").is_ok());
    }
}

pub struct RelayServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shared: Arc<Mutex<Shared>>,
    accept: Option<JoinHandle<()>>,
}

impl RelayServer {
    pub fn start(addr: impl ToSocketAddrs) -> Result<RelayServer> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Mutex::new(Shared::default()));
        let accept = {
            let (stop, shared) = (stop.clone(), shared.clone());
            std::thread::spawn(move || accept_loop(listener, stop, shared))
        };
        Ok(RelayServer { addr, stop, shared, accept: Some(accept) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn log_len(&self) -> usize {
        self.shared.lock().expect("relay lock").log.len()
    }

    pub fn connections(&self) -> usize {
        self.shared.lock().expect("relay lock").clients.len()
    }

    /// Stops accepting, drops every connection and forgets the log.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        let mut shared = self.shared.lock().expect("relay lock");
        for (_, s) in shared.clients.drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        shared.log.clear();
    }
}

impl Drop for RelayServer {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_now();
        }
    }
}

fn accept_loop(listener: TcpListener, stop: Arc<AtomicBool>, shared: Arc<Mutex<Shared>>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        let Ok(mut writer) = stream.try_clone() else { continue };
        let id = {
            let mut sh = shared.lock().expect("relay lock");
            // Replay and registration under one lock: no line is missed or
            // seen twice.
            let replay = sh.log.iter().try_for_each(|l| writeln!(writer, "{l}"));
            if replay.is_err() {
                continue;
            }
            sh.next_id += 1;
            let id = sh.next_id;
            sh.clients.push((id, writer));
            id
        };
        let (stop, shared) = (stop.clone(), shared.clone());
        std::thread::spawn(move || {
            for line in BufReader::new(stream).lines() {
                let Ok(line) = line else { break };
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                if !line.is_empty() {
                    shared.lock().expect("relay lock").forward(id, &line);
                }
            }
            shared.lock().expect("relay lock").clients.retain(|(c, _)| *c != id);
        });
    }
}

#[derive(Debug)]
pub enum Incoming {
    Envelope(MessageEnvelope),
    Save(Vec<u8>),
}

fn parse_line(line: &str) -> Result<Incoming> {
    match line.strip_prefix(SAVE_PREFIX) {
        Some(b64) => Ok(Incoming::Save(BASE64.decode(b64).map_err(|e| HarnessError::Protocol(e.to_string()))?)),
        None => Ok(Incoming::Envelope(MessageEnvelope::from_line(line)?)),
    }
}

pub struct RelayClient {
    writer: BufWriter<TcpStream>,
    stream: TcpStream,
    rx: Receiver<Result<Incoming>>,
}

impl RelayClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<RelayClient> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let writer = BufWriter::new(stream.try_clone()?);
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let msg = match line {
                    Ok(l) if l.is_empty() => continue,
                    Ok(l) => parse_line(&l),
                    Err(e) => Err(e.into()),
                };
                if tx.send(msg).is_err() {
                    break;
                }
            }
        });
        Ok(RelayClient { writer, stream, rx })
    }

    pub fn send_envelope(&mut self, env: &MessageEnvelope) -> Result<()> {
        writeln!(self.writer, "{}", env.to_line())?;
        Ok(())
    }

    pub fn send_save(&mut self, save: &[u8]) -> Result<()> {
        writeln!(self.writer, "{SAVE_PREFIX}{}", BASE64.encode(save))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }

    /// Next incoming line; `Ok(None)` on timeout or once the relay is gone.
    pub fn recv_timeout(&self, d: Duration) -> Result<Option<Incoming>> {
        match self.rx.recv_timeout(d) {
            Ok(m) => m.map(Some),
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => Ok(None),
        }
    }

    pub fn close(self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// A fuzz document wired to a relay.
pub struct RelayPeer {
    pub doc: Document,
    pub fd: FuzzDoc,
    client: Option<RelayClient>,
    rng: Rng8,
    pub ops: usize,
}

impl RelayPeer {
    pub fn new(id: &str, mode: Mode, seed: u64) -> Result<RelayPeer> {
        let mut doc = Document::new(ReplicaId::new(id)?, mode);
        let fd = FuzzDoc::register(&mut doc)?;
        Ok(RelayPeer { doc, fd, client: None, rng: ChaCha8Rng::seed_from_u64(seed), ops: 0 })
    }

    pub fn connect(&mut self, addr: SocketAddr) -> Result<()> {
        self.client = Some(RelayClient::connect(addr)?);
        Ok(())
    }

    pub fn disconnect(&mut self) {
        if let Some(c) = self.client.take() {
            c.close();
        }
    }

    /// One random local op; envelopes are sent on the next `pump`.
    pub fn op(&mut self) -> Result<&'static str> {
        use rand::Rng;
        let target = Target::ALL[self.rng.gen_range(0..Target::ALL.len())];
        self.ops += 1;
        Ok(self.fd.op(target, &mut self.doc, &mut self.rng)?)
    }

    pub fn send_save(&mut self) -> Result<()> {
        let save = self.doc.save();
        let c = self.client.as_mut().ok_or_else(|| HarnessError::Protocol("not connected".into()))?;
        c.send_save(&save)?;
        c.flush()
    }

    /// Sends pending envelopes, then applies whatever arrives within `wait`.
    /// Offline peers keep their envelopes in the document's state only.
    pub fn pump(&mut self, wait: Duration) -> Result<usize> {
        let out = self.doc.take_outbox();
        let Some(c) = self.client.as_mut() else { return Ok(0) };
        for env in &out {
            c.send_envelope(env)?;
        }
        c.flush()?;
        let mut n = 0;
        let deadline = Instant::now() + wait;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let Some(msg) = c.recv_timeout(left)? else { break };
            match msg {
                Incoming::Envelope(env) => {
                    self.doc.receive(env)?;
                }
                Incoming::Save(bytes) => {
                    self.doc.load(&bytes)?;
                }
            }
            n += 1;
        }
        Ok(n)
    }
}

/// Pumps every peer until all digests agree and nothing is buffered.
pub fn settle(peers: &mut [RelayPeer], timeout: Duration) -> Result<String> {
    let deadline = Instant::now() + timeout;
    loop {
        for p in peers.iter_mut() {
            p.pump(Duration::from_millis(2))?;
        }
        let digests: Vec<String> = peers.iter().map(|p| p.doc.digest().to_hex()).collect();
        let clocks_equal = peers.iter().all(|p| p.doc.clock() == peers[0].doc.clock());
        let idle = peers.iter().all(|p| p.doc.runtime().pending_len() == 0);
        if clocks_equal && idle && digests.iter().all(|d| *d == digests[0]) {
            return Ok(digests[0].clone());
        }
        if Instant::now() > deadline {
            return Err(HarnessError::Protocol(format!("relay peers did not converge: {digests:?}")));
        }
    }
}
