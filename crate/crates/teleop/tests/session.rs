use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};
use wipsim::harness::{ControllerKind, Scenario};
use wipsim_teleop::{serve, TeleopConfig, TeleopHandle};

type Client = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start() -> TeleopHandle {
    let mut scenario = Scenario::default();
    scenario.controller.kind = ControllerKind::Teleop;
    serve(TeleopConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        scenario,
        policy: None,
    })
    .await
    .unwrap()
}

async fn client(handle: &TeleopHandle) -> Client {
    let url = format!("ws://{}", handle.local_addr);
    connect_async(url).await.unwrap().0
}

/// Next JSON frame of the given type, skipping others.
async fn next_of(ws: &mut Client, kind: &str) -> Value {
    tokio::time::timeout(Duration::from_secs(5), async {
        loop {
            let msg = ws.next().await.expect("stream open").expect("frame");
            if let Message::Text(t) = msg {
                let v: Value = serde_json::from_str(t.as_str()).unwrap();
                if v["type"] == kind {
                    return v;
                }
            }
        }
    })
    .await
    .expect("frame arrives in time")
}

async fn send(ws: &mut Client, text: &str) {
    ws.send(Message::text(text)).await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn streams_balanced_state_without_commands() {
    let handle = start().await;
    let mut ws = client(&handle).await;
    let first = next_of(&mut ws, "state").await;
    let second = next_of(&mut ws, "state").await;
    assert!(second["t"].as_f64().unwrap() > first["t"].as_f64().unwrap());
    assert_eq!(second["mode"], "lqr");
    assert!(second["theta"].as_f64().unwrap().abs() < 1e-9);
    assert!(second["joints"]["right"]["hip_pitch"].is_number());
    handle.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn second_commander_is_refused() {
    let handle = start().await;
    let mut a = client(&handle).await;
    let mut b = client(&handle).await;
    send(
        &mut a,
        r#"{"type":"cmd","vx":0.0,"yaw_rate":0.0,"pose":"straight"}"#,
    )
    .await;
    // Let the first command claim the seat before the second arrives.
    next_of(&mut a, "state").await;
    send(
        &mut b,
        r#"{"type":"cmd","vx":0.2,"yaw_rate":0.0,"pose":"straight"}"#,
    )
    .await;
    let err = next_of(&mut b, "error").await;
    assert_eq!(err["code"], "commander_occupied");
    // The observer keeps receiving telemetry.
    next_of(&mut b, "state").await;
    // Once the commander leaves the seat is free again.
    a.close(None).await.unwrap();
    tokio::time::sleep(Duration::from_millis(200)).await;
    send(&mut b, r#"{"type":"cmd","vx":0.0}"#).await;
    for _ in 0..5 {
        next_of(&mut b, "state").await;
    }
    b.send(Message::text(r#"{"type":"cmd","vx":"x"}"#))
        .await
        .unwrap();
    assert_eq!(next_of(&mut b, "error").await["code"], "malformed");
    handle.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_frame_keeps_session_alive() {
    let handle = start().await;
    let mut ws = client(&handle).await;
    send(&mut ws, "{not json").await;
    assert_eq!(next_of(&mut ws, "error").await["code"], "malformed");
    send(&mut ws, r#"{"type":"cmd","vx":0.1,"pose":"moonwalk"}"#).await;
    assert_eq!(next_of(&mut ws, "error").await["code"], "unknown_pose");
    let state = next_of(&mut ws, "state").await;
    assert!(state["t"].as_f64().unwrap() > 0.0);
    handle.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn speed_command_converges_within_two_seconds() {
    let handle = start().await;
    let mut ws = client(&handle).await;
    let start_frame = next_of(&mut ws, "state").await;
    send(&mut ws, r#"{"type":"cmd","vx":0.3,"yaw_rate":0.0}"#).await;
    let t0 = start_frame["t"].as_f64().unwrap();
    let mut last = start_frame;
    while last["t"].as_f64().unwrap() < t0 + 2.2 {
        last = next_of(&mut ws, "state").await;
    }
    let xdot = last["xdot"].as_f64().unwrap();
    assert!((xdot - 0.3).abs() < 0.02, "xdot = {xdot}");
    assert!(
        handle
            .stats
            .ticks
            .load(std::sync::atomic::Ordering::Relaxed)
            >= 2000
    );
    handle.shutdown().await;
}
