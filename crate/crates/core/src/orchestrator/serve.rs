//! WebSocket front end. The calling thread owns the [`Runner`]; a listener
//! thread accepts clients and one thread per client shuttles JSON text.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use super::protocol::{ClientMessage, ServerMessage};
use super::{RunLog, Runner};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Simulated seconds per wall-clock second; 0 runs flat out.
    pub speed: f64,
    /// Minimum wall-clock gap between pushed snapshots.
    pub snapshot_interval: Duration,
    pub start_paused: bool,
    /// Set to end the session.
    pub stop: Arc<AtomicBool>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            speed: 1.0,
            snapshot_interval: Duration::from_millis(100),
            start_paused: false,
            stop: Arc::new(AtomicBool::new(false)),
        }
    }
}

type Clients = Arc<Mutex<Vec<(usize, Sender<String>)>>>;

fn client_loop(mut ws: WebSocket<TcpStream>, id: usize, inbound: Sender<(usize, ClientMessage)>, outbound: Receiver<String>, stop: Arc<AtomicBool>) {
    if ws.get_ref().set_read_timeout(Some(Duration::from_millis(10))).is_err() {
        return;
    }
    while !stop.load(Ordering::Relaxed) {
        while let Ok(text) = outbound.try_recv() {
            if ws.send(Message::Text(text)).is_err() {
                return;
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => match ClientMessage::parse(&text) {
                Ok(msg) => {
                    if inbound.send((id, msg)).is_err() {
                        return;
                    }
                }
                Err(message) => {
                    if ws.send(Message::Text(ServerMessage::Error { message }.to_json())).is_err() {
                        return;
                    }
                }
            },
            Ok(Message::Binary(_)) => {
                let message = "binary frames are not supported".to_string();
                if ws.send(Message::Text(ServerMessage::Error { message }.to_json())).is_err() {
                    return;
                }
            }
            Ok(Message::Close(_)) => return,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
}

fn listen(listener: TcpListener, clients: Clients, inbound: Sender<(usize, ClientMessage)>, stop: Arc<AtomicBool>) {
    let mut next_id = 0;
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                if stream.set_nonblocking(false).is_err() {
                    continue;
                }
                let Ok(ws) = tungstenite::accept(stream) else { continue };
                let (tx, rx) = mpsc::channel();
                clients.lock().expect("client list").push((next_id, tx));
                let (inbound, stop) = (inbound.clone(), stop.clone());
                let id = next_id;
                thread::spawn(move || client_loop(ws, id, inbound, rx, stop));
                next_id += 1;
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(5));
            }
        }
    }
}

fn broadcast(clients: &Clients, text: &str) {
    clients
        .lock()
        .expect("client list")
        .retain(|(_, tx)| tx.send(text.to_string()).is_ok());
}

fn reply(clients: &Clients, id: usize, msg: &ServerMessage) {
    if let Some((_, tx)) = clients.lock().expect("client list").iter().find(|(i, _)| *i == id) {
        let _ = tx.send(msg.to_json());
    }
}

/// Serves `runner` on `listener` until `opts.stop` is set, then returns the
/// log so far. Operator commands take effect at the next tick boundary; a
/// finished run keeps answering with snapshots.
pub fn serve(mut runner: Runner, listener: TcpListener, opts: ServeOptions) -> Result<RunLog> {
    listener.set_nonblocking(true)?;
    let clients: Clients = Arc::default();
    let (in_tx, in_rx) = mpsc::channel();
    let listener_thread = {
        let (clients, stop) = (clients.clone(), opts.stop.clone());
        thread::spawn(move || listen(listener, clients, in_tx, stop))
    };

    let mut paused = opts.start_paused;
    let started = Instant::now();
    let mut sim_base = runner.time();
    let mut last_push: Option<Instant> = None;
    let mut result = Ok(());

    while !opts.stop.load(Ordering::Relaxed) {
        while let Ok((id, msg)) = in_rx.try_recv() {
            match msg {
                ClientMessage::Pause => paused = true,
                ClientMessage::Resume => {
                    paused = false;
                    sim_base = runner.time() - started.elapsed().as_secs_f64() * opts.speed;
                }
                ClientMessage::Step { ticks } => {
                    if !paused {
                        let message = "step is only valid while paused".into();
                        reply(&clients, id, &ServerMessage::Error { message });
                        continue;
                    }
                    for _ in 0..ticks {
                        if runner.outcome().is_some() {
                            break;
                        }
                        if let Err(e) = runner.step() {
                            result = Err(e);
                            break;
                        }
                    }
                    broadcast(&clients, &ServerMessage::Snapshot(Box::new(runner.snapshot(paused))).to_json());
                }
                other => {
                    if let Err(message) = runner.submit(other) {
                        reply(&clients, id, &ServerMessage::Error { message });
                    }
                }
            }
        }
        if result.is_err() {
            break;
        }

        if last_push.is_none_or(|t| t.elapsed() >= opts.snapshot_interval) {
            broadcast(&clients, &ServerMessage::Snapshot(Box::new(runner.snapshot(paused))).to_json());
            last_push = Some(Instant::now());
        }
        if paused || runner.outcome().is_some() {
            thread::sleep(Duration::from_millis(2));
            continue;
        }

        if opts.speed > 0.0 {
            let target = sim_base + started.elapsed().as_secs_f64() * opts.speed;
            if runner.time() > target {
                thread::sleep(Duration::from_secs_f64(((runner.time() - target) / opts.speed).min(0.01)));
                continue;
            }
        }
        if let Err(e) = runner.step() {
            result = Err(e);
            break;
        }
    }

    opts.stop.store(true, Ordering::Relaxed);
    let _ = listener_thread.join();
    result.map(|_| runner.into_log())
}
