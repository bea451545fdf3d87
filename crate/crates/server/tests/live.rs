use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

use swarmlink::scenario::{preset, preset_dir};
use swarmlink::sim::run_scenario;
use swarmlink::HandTrace;
use swarmlink_server::{serve, Mode, ServerConfig, ServerHandle, Session, PROTOCOL_SCHEMA};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start_server(name: &str, mode: Mode) -> ServerHandle {
    let session = Session::new(preset(name).unwrap(), mode).unwrap();
    let config = ServerConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        period: Some(Duration::from_millis(2)),
        heartbeat: Duration::from_millis(100),
        ..ServerConfig::default()
    };
    serve(session, config).await.unwrap()
}

async fn connect(h: &ServerHandle) -> Ws {
    let url = format!("ws://{}/ws", h.local_addr());
    connect_async(url).await.unwrap().0
}

async fn send(ws: &mut Ws, v: Value) {
    ws.send(Message::Text(v.to_string().into())).await.unwrap();
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let msg = timeout(Duration::from_secs(5), ws.next()).await.expect("frame within 5 s");
        match msg.unwrap().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            _ => continue,
        }
    }
}

async fn next_of(ws: &mut Ws, kind: &str) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] == kind {
            return v;
        }
    }
}

fn validator(def: &str) -> jsonschema::Validator {
    let mut schema: Value = serde_json::from_str(PROTOCOL_SCHEMA).unwrap();
    let defs = schema["$defs"].clone();
    schema = json!({ "$ref": format!("#/$defs/{def}"), "$defs": defs });
    jsonschema::validator_for(&schema).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn scenario_frame_on_connect_and_heartbeats() {
    let h = start_server("rhombus-4", Mode::Visual).await;
    let mut ws = connect(&h).await;
    let first = next_json(&mut ws).await;
    assert_eq!(first["type"], "scenario");
    assert_eq!(first["name"], "rhombus-4");
    assert_eq!(first["decimation"], 2);
    let beat = next_of(&mut ws, "heartbeat").await;
    assert_eq!(beat["running"], false);
    let server = validator("server");
    assert!(server.is_valid(&first) && server.is_valid(&beat));
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_type_gets_an_error_frame() {
    let h = start_server("rhombus-4", Mode::Visual).await;
    let mut ws = connect(&h).await;
    next_of(&mut ws, "scenario").await;
    send(&mut ws, json!({ "type": "teleport", "x": 1 })).await;
    let err = next_of(&mut ws, "error").await;
    assert_eq!(err["code"], "unknown_type");
    ws.send(Message::Text("{{{".into())).await.unwrap();
    assert_eq!(next_of(&mut ws, "error").await["code"], "malformed_frame");
    assert!(validator("error").is_valid(&err));
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn state_ticks_increase_and_disconnect_pauses() {
    let h = start_server("rhombus-4", Mode::Visual).await;
    let mut ws = connect(&h).await;
    next_of(&mut ws, "scenario").await;
    send(&mut ws, json!({ "type": "control", "action": "start" })).await;
    let state = validator("state");
    let mut last = 0;
    for _ in 0..20 {
        let s = next_of(&mut ws, "state").await;
        assert!(state.is_valid(&s), "{s}");
        let tick = s["tick"].as_u64().unwrap();
        assert!(tick > last && tick % 2 == 0, "{tick} after {last}");
        last = tick;
    }
    ws.close(None).await.unwrap();
    drop(ws);
    tokio::time::sleep(Duration::from_millis(100)).await;
    let a = h.trace().await.unwrap().0.rows.len();
    tokio::time::sleep(Duration::from_millis(100)).await;
    let b = h.trace().await.unwrap().0.rows.len();
    assert_eq!(a, b, "sim kept running after the last client left");
    assert!(a >= 40);
    h.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn blind_frames_carry_no_coordinates() {
    let h = start_server("triangle-3-labyrinth", Mode::Blind).await;
    let mut ws = connect(&h).await;
    let scenario = next_of(&mut ws, "scenario").await;
    assert!(scenario.get("obstacles").is_none());
    send(&mut ws, json!({ "type": "control", "action": "start" })).await;
    let blind = validator("blind_state");
    for k in 0..30 {
        send(&mut ws, json!({ "type": "hand_pose", "t_client": k, "x": -2.0 + 0.01 * k as f64, "y": 0.0 })).await;
        let s = next_of(&mut ws, "state").await;
        assert!(blind.is_valid(&s), "{s}");
        assert!(s["hand"]["x"].is_number());
    }
    send(&mut ws, json!({ "type": "control", "action": "set_mode", "mode": "visual" })).await;
    let visual = next_of(&mut ws, "scenario").await;
    assert_eq!(visual["obstacles"].as_array().unwrap().len(), 3);
    let s = next_of(&mut ws, "state").await;
    assert!(!blind.is_valid(&s));
    h.shutdown().await;
}

/// Drives the labyrinth with the recorded pass over a live socket, then
/// replays the consumed hand samples headlessly.
#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn live_log_replays_bit_identically() {
    let h = start_server("triangle-3-labyrinth", Mode::Visual).await;
    let mut ws = connect(&h).await;
    next_of(&mut ws, "scenario").await;
    let recorded = HandTrace::read(std::fs::File::open(preset_dir().join("labyrinth-pass.csv")).unwrap()).unwrap();
    send(&mut ws, json!({ "type": "control", "action": "start" })).await;
    let mut patterns = 0;
    for _ in 0..120 {
        let s = next_of(&mut ws, "state").await;
        let t = s["t_sim"].as_f64().unwrap() * 4.0;
        let p = recorded.position_at(t).unwrap();
        send(&mut ws, json!({ "type": "hand_pose", "t_client": t, "x": p.x, "y": p.y })).await;
        patterns += s["events"].as_array().unwrap().iter().filter(|e| e["kind"] == "pattern_start").count();
    }
    send(&mut ws, json!({ "type": "control", "action": "pause" })).await;
    next_of(&mut ws, "scenario").await;
    let (live, hand) = h.shutdown().await.unwrap();
    assert!(live.rows.len() >= 240);
    assert_eq!(live.meta.source, "live");

    let headless = run_scenario(&preset("triangle-3-labyrinth").unwrap(), &hand, Some(live.rows.len() as u64)).unwrap();
    assert_eq!(headless.rows, live.rows);
    assert_eq!(headless.rows_csv(), live.rows_csv());
    assert_eq!(headless.meta.scenario_hash, live.meta.scenario_hash);
    let live_starts = live.events.iter().filter(|e| matches!(e.kind, swarmlink::trace::EventKind::PatternStart { .. })).count();
    assert!(patterns <= live_starts);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn silent_client_never_stalls_the_loop() {
    let session = Session::new(preset("rhombus-4").unwrap(), Mode::Visual).unwrap();
    let config = ServerConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        period: Some(Duration::from_millis(1)),
        channel_capacity: 1,
        ..ServerConfig::default()
    };
    let h = serve(session, config).await.unwrap();
    let mut ws = connect(&h).await;
    next_of(&mut ws, "scenario").await;
    send(&mut ws, json!({ "type": "control", "action": "start" })).await;
    // The socket is never read again.
    tokio::time::sleep(Duration::from_millis(400)).await;
    let ticks = h.trace().await.unwrap().0.rows.len();
    assert!(ticks >= 100, "only {ticks} ticks in 400 ms");
    drop(ws);
    h.shutdown().await;
}
