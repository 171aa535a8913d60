//! Live operator session served over WebSocket.
//!
//! A console drives a simulated [`Workspace`] with [`WorkerCommand`]s; a
//! ticker turns the workspace into frames at the configured rate, and every
//! connected console receives the session's state and event messages.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crossbeam_channel::bounded;
use log::{debug, info, warn};
use tungstenite::{Message, WebSocket};

use crate::detection::Workspace;
use crate::runtime::{ChannelProvider, Delivery, Engine, Hub, PipelineConfig, RunningSession, Session, Subscription};
use crate::wire::{apply_command, parse_command, Ack, CommandKind, ServerMessage, SessionInfo, UiStateMessage, WorkerCommand};

const POLL: Duration = Duration::from_millis(5);

/// Parameters of the simulated workspace.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceConfig {
    pub width: u32,
    pub height: u32,
    /// Nominal camera rate for timestamps and motion; the ticker itself runs at the pipeline's fps cap.
    pub fps: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self { width: 640, height: 480, fps: 30.0, noise_sigma: 0.002, seed: 1 }
    }
}

struct Running {
    stop: Arc<AtomicBool>,
    ticker: thread::JoinHandle<()>,
    session: RunningSession,
}

struct Shared {
    engine: Engine,
    config: PipelineConfig,
    ws_config: WorkspaceConfig,
    workspace: Mutex<Arc<Mutex<Workspace>>>,
    running: Mutex<Option<Running>>,
    hub: Mutex<Option<Arc<Hub>>>,
    generation: AtomicU64,
    shutdown: AtomicBool,
    read_only: bool,
}

fn new_workspace(c: &WorkspaceConfig) -> Result<Workspace, crate::detection::DetectionError> {
    Workspace::new(c.width, c.height, c.fps, c.noise_sigma, c.seed)
}

impl Shared {
    fn new_workspace(&self) -> Workspace {
        new_workspace(&self.ws_config).expect("validated workspace config")
    }

    fn start(&self) -> bool {
        let mut running = self.running.lock().expect("server state");
        if running.is_some() {
            return false;
        }
        let (tx, rx) = bounded(self.config.queue_capacity);
        let session = Session::new(&self.engine, ChannelProvider::new(rx), &self.config).expect("validated config");
        *self.hub.lock().expect("server state") = Some(session.hub());
        self.generation.fetch_add(1, Ordering::SeqCst);
        let session = session.spawn();

        let stop = Arc::new(AtomicBool::new(false));
        let workspace = self.workspace.lock().expect("server state").clone();
        let interval = Duration::from_secs_f64(1.0 / self.config.fps_cap);
        let ticker_stop = stop.clone();
        let ticker = thread::Builder::new()
            .name("workspace-ticker".into())
            .spawn(move || {
                while !ticker_stop.load(Ordering::SeqCst) {
                    let frame = workspace.lock().expect("workspace").tick();
                    if tx.send(frame).is_err() {
                        break;
                    }
                    thread::sleep(interval);
                }
            })
            .expect("spawning ticker");
        *running = Some(Running { stop, ticker, session });
        true
    }

    /// Ends the current session and prepares a fresh, unstarted workspace.
    fn reset(&self) {
        if let Some(r) = self.running.lock().expect("server state").take() {
            r.stop.store(true, Ordering::SeqCst);
            let _ = r.ticker.join();
            let report = r.session.join();
            info!("session ended: {}/{} steps validated", report.steps_validated, report.steps_total);
        }
        *self.workspace.lock().expect("server state") = Arc::new(Mutex::new(self.new_workspace()));
        *self.hub.lock().expect("server state") = None;
        self.generation.fetch_add(1, Ordering::SeqCst);
    }

    fn handle(&self, cmd: &WorkerCommand) -> Ack {
        if self.read_only {
            return Ack::rejected(cmd.seq, "read-only replay session");
        }
        match cmd.kind {
            CommandKind::Start => {
                if !self.start() {
                    return Ack::rejected(cmd.seq, "session already running");
                }
                Ack { session: Some(SessionInfo::new(&self.engine.scenario)), ..Ack::ok(cmd.seq) }
            }
            CommandKind::Reset => {
                self.reset();
                Ack::ok(cmd.seq)
            }
            _ => {
                let ws = self.workspace.lock().expect("server state").clone();
                let mut ws = ws.lock().expect("workspace");
                apply_command(&mut ws, &self.engine.scenario.vocabulary, cmd)
            }
        }
    }

    fn subscribe(&self) -> (u64, Option<Subscription>) {
        let hub = self.hub.lock().expect("server state");
        (self.generation.load(Ordering::SeqCst), hub.as_ref().map(|h| h.subscribe()))
    }
}

/// Handle to a listening server; dropping it does not stop the server, call [`LiveServer::shutdown`].
pub struct LiveServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<thread::JoinHandle<()>>,
}

impl LiveServer {
    /// Binds `addr` (port 0 picks a free port) and starts accepting consoles.
    pub fn bind(engine: Engine, config: PipelineConfig, ws_config: WorkspaceConfig, addr: &str) -> io::Result<Self> {
        Self::listen(engine, config, ws_config, None, addr)
    }

    /// Serves an already running session read-only; consoles only watch and every command is rejected.
    pub fn broadcast(engine: Engine, hub: Arc<Hub>, addr: &str) -> io::Result<Self> {
        Self::listen(engine, PipelineConfig::default(), WorkspaceConfig::default(), Some(hub), addr)
    }

    fn listen(
        engine: Engine,
        config: PipelineConfig,
        ws_config: WorkspaceConfig,
        hub: Option<Arc<Hub>>,
        addr: &str,
    ) -> io::Result<Self> {
        let invalid = |e: String| io::Error::new(io::ErrorKind::InvalidInput, e);
        let config = PipelineConfig { live: true, ..config };
        config.validate().map_err(|e| invalid(e.to_string()))?;
        let workspace = new_workspace(&ws_config).map_err(|e| invalid(e.to_string()))?;
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            engine,
            config,
            ws_config,
            workspace: Mutex::new(Arc::new(Mutex::new(workspace))),
            running: Mutex::new(None),
            read_only: hub.is_some(),
            hub: Mutex::new(hub),
            generation: AtomicU64::new(0),
            shutdown: AtomicBool::new(false),
        });
        let accept_shared = shared.clone();
        let acceptor = thread::Builder::new()
            .name("console-acceptor".into())
            .spawn(move || accept_loop(listener, accept_shared))?;
        info!("operator console endpoint on ws://{addr}");
        Ok(Self { addr, shared, acceptor: Some(acceptor) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks serving consoles until the process exits.
    pub fn wait(mut self) {
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
    }

    pub fn shutdown(mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        if !self.shared.read_only {
            self.shared.reset();
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let s = shared.clone();
                thread::spawn(move || {
                    if let Err(e) = serve_console(stream, &s) {
                        debug!("console {peer} disconnected: {e}");
                    }
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> tungstenite::Result<()> {
    ws.send(Message::text(msg.to_json()))
}

fn serve_console(stream: TcpStream, shared: &Shared) -> tungstenite::Result<()> {
    stream.set_nonblocking(false)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_mut().set_read_timeout(Some(POLL))?;
    let (mut generation, mut sub) = shared.subscribe();

    while !shared.shutdown.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let ack = match parse_command(&text) {
                    Ok(cmd) => shared.handle(&cmd),
                    Err(reason) => Ack::rejected(0, reason),
                };
                send(&mut ws, &ServerMessage::Ack(ack))?;
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }

        if shared.generation.load(Ordering::SeqCst) != generation {
            (generation, sub) = shared.subscribe();
        }
        let Some(s) = &sub else { continue };
        while let Ok(Some(d)) = s.recv_timeout(Duration::ZERO) {
            let msg = match d {
                Delivery::Frame(r) => ServerMessage::State(Box::new(UiStateMessage::from_result(&shared.engine.scenario, &r))),
                Delivery::Event(e) => ServerMessage::Event(e),
            };
            send(&mut ws, &msg)?;
        }
    }
    ws.close(None).ok();
    Ok(())
}
