use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, watch};
use tokio_tungstenite::tungstenite::Message;
use wipsim::harness::{Policy, Scenario, Simulation, Status};

use crate::protocol::{error_text, parse_command, Command, ErrorCode, ServerFrame, StateFrame};
use crate::{Result, TeleopError};

/// Physics ticks between telemetry frames at a 1 ms step (50 Hz).
const TELEMETRY_TICKS: u64 = 20;
/// Ticks per real-time budget check.
const BUDGET_WINDOW: u64 = 1000;

#[derive(Clone, Debug)]
pub struct TeleopConfig {
    pub addr: SocketAddr,
    pub scenario: Scenario,
    pub policy: Option<Arc<Policy>>,
}

/// Wall-clock accounting of the physics loop.
#[derive(Debug, Default)]
pub struct LoopStats {
    pub ticks: AtomicU64,
    /// Busy time of the most recent 1000-tick window, in microseconds.
    pub last_window_busy_us: AtomicU64,
    /// Windows whose wall time exceeded their real-time budget.
    pub overruns: AtomicU64,
    pub resets: AtomicU64,
}

/// A running server. Dropping it without [`TeleopHandle::shutdown`] leaves the physics
/// thread running until the process exits.
pub struct TeleopHandle {
    pub local_addr: SocketAddr,
    pub stats: Arc<LoopStats>,
    stop: Arc<AtomicBool>,
    physics: Option<JoinHandle<()>>,
    accept: tokio::task::JoinHandle<()>,
}

impl TeleopHandle {
    pub async fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        self.accept.abort();
        if let Some(h) = self.physics.take() {
            let _ = tokio::task::spawn_blocking(move || h.join()).await;
        }
    }
}

fn build_sim(config: &TeleopConfig) -> wipsim::Result<Simulation> {
    let sim = match &config.policy {
        Some(p) => Simulation::with_policy(&config.scenario, p.clone())?,
        None => Simulation::new(&config.scenario)?,
    };
    Ok(sim.without_recording().unbounded())
}

fn state_text(sim: &Simulation) -> String {
    let truth = sim.truth();
    let radius = sim.design().params.wheel_radius;
    let frame = ServerFrame::State(StateFrame {
        t: sim.time(),
        x: truth.x,
        xdot: truth.xdot,
        theta: truth.theta,
        thetadot: truth.thetadot,
        torque: sim.last_torque(),
        joints: StateFrame::joints_of(sim.pose(), truth.x / radius - truth.theta),
        mode: sim.mode().name().to_string(),
    });
    serde_json::to_string(&frame).expect("state frame serializes")
}

fn physics_loop(
    config: TeleopConfig,
    mut sim: Simulation,
    mut commands: watch::Receiver<Command>,
    telemetry: broadcast::Sender<Arc<str>>,
    stop: Arc<AtomicBool>,
    stats: Arc<LoopStats>,
) {
    let dt = Duration::from_secs_f64(config.scenario.dt);
    let mut deadline = Instant::now();
    let mut window_start = Instant::now();
    let mut busy = Duration::ZERO;
    while !stop.load(Ordering::Relaxed) {
        let started = Instant::now();
        if commands.has_changed().unwrap_or(false) {
            let cmd = commands.borrow_and_update().clone();
            if let Err(e) = sim.set_velocity(cmd.vx) {
                log::warn!("rejected velocity command: {e}");
            }
            if let Some(p) = &cmd.pose {
                if let Err(e) = sim.set_pose(p) {
                    log::warn!("rejected pose command: {e}");
                }
            }
        }
        match sim.step() {
            Ok(Status::Running) => {}
            Ok(_) => {
                log::warn!("robot fell at t = {:.3} s; restarting", sim.time());
                stats.resets.fetch_add(1, Ordering::Relaxed);
                match build_sim(&config) {
                    Ok(fresh) => sim = fresh,
                    Err(e) => {
                        log::error!("cannot restart simulation: {e}");
                        return;
                    }
                }
            }
            Err(e) => {
                log::error!("physics step failed: {e}");
                return;
            }
        }
        let tick = stats.ticks.fetch_add(1, Ordering::Relaxed) + 1;
        if sim.tick_index().is_multiple_of(TELEMETRY_TICKS) {
            // No receivers is fine; frames are simply dropped.
            let _ = telemetry.send(Arc::from(state_text(&sim)));
        }
        busy += started.elapsed();
        if tick.is_multiple_of(BUDGET_WINDOW) {
            let wall = window_start.elapsed();
            stats
                .last_window_busy_us
                .store(busy.as_micros() as u64, Ordering::Relaxed);
            let budget = dt * BUDGET_WINDOW as u32;
            if wall > budget + budget / 10 || busy > budget {
                stats.overruns.fetch_add(1, Ordering::Relaxed);
                log::warn!(
                    "real-time budget exceeded: {BUDGET_WINDOW} ticks took {wall:?} wall, {busy:?} busy (budget {budget:?})"
                );
            } else {
                log::debug!("{BUDGET_WINDOW} ticks: {wall:?} wall, {busy:?} busy");
            }
            window_start = Instant::now();
            busy = Duration::ZERO;
        }
        deadline += dt;
        let now = Instant::now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        } else if now - deadline > dt * 100 {
            // Far behind: resynchronize instead of bursting to catch up.
            deadline = now;
        }
    }
}

/// Connection table entry for the commander seat.
type Seat = Arc<Mutex<Option<u64>>>;

/// Binds the listener and starts the physics thread. With no commands the robot balances
/// in place.
pub async fn serve(config: TeleopConfig) -> Result<TeleopHandle> {
    let sim = build_sim(&config)?;
    let listener = TcpListener::bind(config.addr)
        .await
        .map_err(|e| TeleopError::Bind(config.addr, e))?;
    let local_addr = listener
        .local_addr()
        .map_err(|e| TeleopError::Bind(config.addr, e))?;
    let (cmd_tx, cmd_rx) = watch::channel(Command::default());
    let (tel_tx, _) = broadcast::channel::<Arc<str>>(64);
    let stop = Arc::new(AtomicBool::new(false));
    let stats = Arc::new(LoopStats::default());

    let physics = {
        let (tel_tx, stop, stats) = (tel_tx.clone(), stop.clone(), stats.clone());
        std::thread::Builder::new()
            .name("teleop-physics".into())
            .spawn(move || physics_loop(config, sim, cmd_rx, tel_tx, stop, stats))
            .map_err(TeleopError::Thread)?
    };

    let seat: Seat = Arc::new(Mutex::new(None));
    let cmd_tx = Arc::new(cmd_tx);
    let accept = tokio::spawn(async move {
        let mut next_id = 0u64;
        loop {
            let (stream, peer) = match listener.accept().await {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            next_id += 1;
            let (id, seat, cmd_tx, rx) =
                (next_id, seat.clone(), cmd_tx.clone(), tel_tx.subscribe());
            tokio::spawn(async move {
                if let Err(e) = connection(stream, id, seat, cmd_tx, rx).await {
                    log::debug!("connection {peer} closed: {e}");
                }
            });
        }
    });

    log::info!("teleop server listening on ws://{local_addr}");
    Ok(TeleopHandle {
        local_addr,
        stats,
        stop,
        physics: Some(physics),
        accept,
    })
}

async fn connection(
    stream: TcpStream,
    id: u64,
    seat: Seat,
    commands: Arc<watch::Sender<Command>>,
    mut telemetry: broadcast::Receiver<Arc<str>>,
) -> std::result::Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    let result = loop {
        tokio::select! {
            incoming = source.next() => {
                let msg = match incoming {
                    Some(Ok(m)) => m,
                    Some(Err(e)) => break Err(e),
                    None => break Ok(()),
                };
                let reply = match msg {
                    Message::Text(text) => handle_text(text.as_str(), id, &seat, &commands),
                    Message::Binary(_) => Some(error_text(ErrorCode::Malformed, Some("binary frames are not supported".into()))),
                    Message::Close(_) => break Ok(()),
                    _ => None,
                };
                if let Some(r) = reply {
                    if let Err(e) = sink.send(Message::text(r)).await {
                        break Err(e);
                    }
                }
            }
            frame = telemetry.recv() => {
                match frame {
                    Ok(text) => {
                        if let Err(e) = sink.send(Message::text(text.as_ref())).await {
                            break Err(e);
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        log::debug!("connection {id} skipped {n} frames");
                    }
                    Err(broadcast::error::RecvError::Closed) => break Ok(()),
                }
            }
        }
    };
    let mut holder = seat.lock().expect("seat lock poisoned");
    if *holder == Some(id) {
        *holder = None;
    }
    result
}

/// Applies a client frame; returns an error frame to send back, if any.
fn handle_text(
    text: &str,
    id: u64,
    seat: &Seat,
    commands: &watch::Sender<Command>,
) -> Option<String> {
    let cmd = match parse_command(text) {
        Ok(c) => c,
        Err((code, detail)) => return Some(error_text(code, Some(detail))),
    };
    {
        let mut holder = seat.lock().expect("seat lock poisoned");
        match *holder {
            None => *holder = Some(id),
            Some(h) if h == id => {}
            Some(_) => return Some(error_text(ErrorCode::CommanderOccupied, None)),
        }
    }
    commands.send_replace(cmd);
    None
}
