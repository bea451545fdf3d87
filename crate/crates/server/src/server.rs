//! Wall-clock pacing and websocket fan-out around a [`Session`].

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::{interval, Instant, MissedTickBehavior};

use swarmlink::{HandTrace, TraceLog};

use crate::protocol::{ServerMessage, PROTOCOL_SCHEMA};
use crate::session::Session;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    /// Wall-clock tick period; the scenario sample time when `None`.
    pub period: Option<Duration>,
    pub heartbeat: Duration,
    /// Frames buffered per client before the oldest are dropped.
    pub channel_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8765)),
            period: None,
            heartbeat: Duration::from_secs(1),
            channel_capacity: 256,
        }
    }
}

enum Command {
    Text(String, oneshot::Sender<Vec<ServerMessage>>),
    Greeting(oneshot::Sender<ServerMessage>),
    Disconnected,
    Trace(oneshot::Sender<(TraceLog, HandTrace)>),
}

#[derive(Default)]
struct Counters {
    overruns: AtomicU64,
    dropped: AtomicU64,
    clients: AtomicUsize,
}

#[derive(Clone)]
struct Shared {
    commands: mpsc::Sender<Command>,
    frames: broadcast::Sender<Arc<str>>,
    counters: Arc<Counters>,
}

pub struct ServerHandle {
    addr: SocketAddr,
    shared: Shared,
    shutdown: Option<oneshot::Sender<()>>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn overruns(&self) -> u64 {
        self.shared.counters.overruns.load(Ordering::Relaxed)
    }

    pub fn dropped_frames(&self) -> u64 {
        self.shared.counters.dropped.load(Ordering::Relaxed)
    }

    /// The live TraceLog and the hand samples it consumed.
    pub async fn trace(&self) -> Option<(TraceLog, HandTrace)> {
        let (tx, rx) = oneshot::channel();
        self.shared.commands.send(Command::Trace(tx)).await.ok()?;
        rx.await.ok()
    }

    /// Stops the loop and listener; returns the final trace.
    pub async fn shutdown(mut self) -> Option<(TraceLog, HandTrace)> {
        let trace = self.trace().await;
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        for t in self.tasks.drain(..) {
            t.abort();
            let _ = t.await;
        }
        trace
    }

    /// Runs until the process is interrupted.
    pub async fn wait(mut self) {
        for t in self.tasks.drain(..) {
            let _ = t.await;
        }
    }
}

pub async fn serve(session: Session, config: ServerConfig) -> std::io::Result<ServerHandle> {
    let listener = TcpListener::bind(config.addr).await?;
    let addr = listener.local_addr()?;
    let (commands, rx) = mpsc::channel(1024);
    let (frames, _) = broadcast::channel(config.channel_capacity.max(1));
    let shared = Shared {
        commands,
        frames,
        counters: Arc::new(Counters::default()),
    };
    let period = config
        .period
        .unwrap_or_else(|| Duration::from_secs_f64(session.scenario().sample_time));
    let sim = tokio::spawn(sim_loop(session, rx, shared.clone(), period, config.heartbeat));

    let app = Router::new()
        .route("/ws", get(upgrade))
        .route("/schema", get(schema))
        .route("/health", get(|| async { "ok" }))
        .with_state(shared.clone());
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let http = tokio::spawn(async move {
        let result = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stop_rx.await;
            })
            .await;
        if let Err(e) = result {
            tracing::error!("listener stopped: {e}");
        }
    });
    tracing::info!(%addr, ?period, "session server listening");
    Ok(ServerHandle {
        addr,
        shared,
        shutdown: Some(stop_tx),
        tasks: vec![http, sim],
    })
}

fn publish(shared: &Shared, msg: &ServerMessage) {
    // Err only means nobody is listening.
    let _ = shared.frames.send(Arc::from(msg.to_json()));
}

async fn sim_loop(
    mut session: Session,
    mut rx: mpsc::Receiver<Command>,
    shared: Shared,
    period: Duration,
    heartbeat: Duration,
) {
    let mut ticker = interval(period);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut beat = interval(heartbeat);
    beat.set_missed_tick_behavior(MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            scheduled = ticker.tick() => {
                let late = Instant::now().saturating_duration_since(scheduled);
                if session.is_running() && late > period {
                    let n = shared.counters.overruns.fetch_add(1, Ordering::Relaxed) + 1;
                    tracing::warn!(tick = session.world().tick(), ?late, overruns = n, "tick overrun");
                }
                for msg in session.tick() {
                    publish(&shared, &msg);
                }
            }
            _ = beat.tick() => {
                publish(&shared, &ServerMessage::Heartbeat {
                    tick: session.world().tick(),
                    running: session.is_running(),
                    overruns: shared.counters.overruns.load(Ordering::Relaxed),
                    dropped_frames: shared.counters.dropped.load(Ordering::Relaxed),
                });
            }
            cmd = rx.recv() => match cmd {
                Some(Command::Text(text, reply)) => {
                    let _ = reply.send(session.handle_text(&text));
                }
                Some(Command::Greeting(reply)) => {
                    let _ = reply.send(session.scenario_frame());
                }
                Some(Command::Disconnected) => {
                    if shared.counters.clients.load(Ordering::SeqCst) == 0 && session.is_running() {
                        tracing::info!("last client left; pausing");
                        session.pause();
                    }
                }
                Some(Command::Trace(reply)) => {
                    let _ = reply.send((session.trace().clone(), session.hand_trace()));
                }
                None => break,
            }
        }
    }
}

async fn schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/schema+json")], PROTOCOL_SCHEMA)
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, shared))
}

async fn client(socket: WebSocket, shared: Shared) {
    shared.counters.clients.fetch_add(1, Ordering::SeqCst);
    let mut frames = shared.frames.subscribe();
    let (mut sink, mut stream) = socket.split();
    let (direct_tx, mut direct_rx) = mpsc::unbounded_channel::<Arc<str>>();

    let (greet_tx, greet_rx) = oneshot::channel();
    if shared.commands.send(Command::Greeting(greet_tx)).await.is_ok() {
        if let Ok(msg) = greet_rx.await {
            let _ = direct_tx.send(Arc::from(msg.to_json()));
        }
    }

    let counters = shared.counters.clone();
    let mut writer = tokio::spawn(async move {
        loop {
            let text = tokio::select! {
                biased;
                direct = direct_rx.recv() => match direct {
                    Some(t) => t,
                    None => break,
                },
                frame = frames.recv() => match frame {
                    Ok(t) => t,
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        counters.dropped.fetch_add(n, Ordering::Relaxed);
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            };
            if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                break;
            }
        }
    });

    loop {
        tokio::select! {
            _ = &mut writer => break,
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    let (tx, rx) = oneshot::channel();
                    if shared.commands.send(Command::Text(text.to_string(), tx)).await.is_err() {
                        break;
                    }
                    if let Ok(replies) = rx.await {
                        for r in replies {
                            let _ = direct_tx.send(Arc::from(r.to_json()));
                        }
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    let err = ServerMessage::error(crate::ErrorCode::MalformedFrame, "binary frames are not supported");
                    let _ = direct_tx.send(Arc::from(err.to_json()));
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            }
        }
    }
    writer.abort();
    shared.counters.clients.fetch_sub(1, Ordering::SeqCst);
    let _ = shared.commands.send(Command::Disconnected).await;
}
