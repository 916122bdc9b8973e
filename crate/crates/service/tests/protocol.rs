use std::sync::{Arc, OnceLock};

use futures_util::{SinkExt, StreamExt};
use nalgebra::Vector3;
use tokio_tungstenite::tungstenite::Message;

use reachguide::hand_model::synthetic_default_model;
use reachguide::reach_mdp::{solve, GridSpec, ReachPolicy, SolveConfig};
use reachguide::session::{replay_metrics, EventKind, PlannerMode, SessionEvent, SessionMetrics};
use reachguide::simulator::{run_trial_traced, PoseSample, SimConfig, TrialRecord};
use reachguide_service::{
    AppState, ClientMessage, ServerMessage, ServiceConfig, SessionHandler, PROTOCOL_VERSION,
};

fn policy() -> Arc<ReachPolicy> {
    static P: OnceLock<Arc<ReachPolicy>> = OnceLock::new();
    P.get_or_init(|| {
        let cfg = SolveConfig {
            grid: GridSpec::cuboid(0.05, 0.4).unwrap(),
            ..SolveConfig::default()
        };
        Arc::new(solve(&synthetic_default_model(), &cfg).unwrap())
    })
    .clone()
}

fn recorded(mode: PlannerMode, seed: u64) -> (TrialRecord, Vec<PoseSample>) {
    let offset = Vector3::new(0.22, -0.31, 0.17);
    run_trial_traced(
        mode,
        Some(&policy()),
        &synthetic_default_model(),
        &SimConfig::default(),
        offset,
        seed,
    )
    .unwrap()
}

fn hello(mode: PlannerMode, target: [f64; 3]) -> ClientMessage {
    ClientMessage::Hello {
        version: PROTOCOL_VERSION,
        mode,
        target: Some(target),
        seed: None,
    }
}

fn pose(p: &PoseSample) -> ClientMessage {
    let [x, y, z] = p.position;
    ClientMessage::Pose { t: p.t, x, y, z }
}

/// Events, metrics and transcript from a list of server messages.
fn split(
    msgs: &[ServerMessage],
) -> (
    Vec<SessionEvent>,
    Option<SessionMetrics>,
    Option<Vec<SessionEvent>>,
) {
    let mut events = Vec::new();
    let mut metrics = None;
    let mut transcript = None;
    for m in msgs {
        match m {
            ServerMessage::Event { event } => events.push(event.clone()),
            ServerMessage::Metrics { metrics: x } => metrics = Some(x.clone()),
            ServerMessage::Transcript { events } => transcript = Some(events.clone()),
            _ => {}
        }
    }
    (events, metrics, transcript)
}

#[test]
fn in_process_replay_matches_simulator() {
    for mode in [PlannerMode::Discrete, PlannerMode::Continuous] {
        let (record, trace) = recorded(mode, 9);
        let mut h = SessionHandler::new(Some(policy()), ServiceConfig::default());
        let mut out = h.handle(hello(mode, record.start_offset)).unwrap();
        for p in &trace {
            out.extend(h.handle(pose(p)).unwrap());
        }
        let (events, metrics, transcript) = split(&out);
        assert_eq!(events, record.events, "{mode}");
        let metrics = metrics.expect("metrics after done");
        assert_eq!(metrics, record.metrics);
        assert_eq!(replay_metrics(&transcript.unwrap()).unwrap(), metrics);
        let kinds: Vec<_> = events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds.first(), Some(&EventKind::Overview));
        assert_eq!(
            &kinds[kinds.len() - 2..],
            &[EventKind::GraspPrompt, EventKind::Done]
        );
    }
}

async fn start_server(config: ServiceConfig) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let state = Arc::new(AppState::new(Some(policy()), config, None));
    tokio::spawn(reachguide_service::serve(listener, state));
    format!("ws://{addr}/ws")
}

fn text(m: &ClientMessage) -> Message {
    Message::Text(serde_json::to_string(m).unwrap().into())
}

#[tokio::test]
async fn websocket_replay_matches_simulator() {
    let url = start_server(ServiceConfig::default()).await;
    for mode in [PlannerMode::Discrete, PlannerMode::Continuous] {
        let (record, trace) = recorded(mode, 21);
        let (mut ws, _) = tokio_tungstenite::connect_async(url.as_str())
            .await
            .unwrap();
        ws.send(text(&hello(mode, record.start_offset)))
            .await
            .unwrap();
        for p in &trace {
            ws.send(text(&pose(p))).await.unwrap();
        }
        let mut msgs = Vec::new();
        while let Some(m) = ws.next().await {
            let m: ServerMessage = serde_json::from_str(m.unwrap().to_text().unwrap()).unwrap();
            let last = matches!(m, ServerMessage::Transcript { .. });
            msgs.push(m);
            if last {
                break;
            }
        }
        assert!(matches!(msgs[0], ServerMessage::Scene { .. }));
        let (events, metrics, transcript) = split(&msgs);
        assert_eq!(events, record.events, "{mode}");
        assert_eq!(metrics.unwrap(), record.metrics);
        assert_eq!(transcript.unwrap(), record.events);
    }
}

async fn expect_error(
    ws: &mut tokio_tungstenite::WebSocketStream<
        tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>,
    >,
) -> String {
    while let Some(m) = ws.next().await {
        if let Message::Text(t) = m.unwrap() {
            if let ServerMessage::Error { message } = serde_json::from_str(t.as_str()).unwrap() {
                return message;
            }
        }
    }
    panic!("connection closed without an error message");
}

#[tokio::test]
async fn non_increasing_time_closes_with_error() {
    let url = start_server(ServiceConfig::default()).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(url.as_str())
        .await
        .unwrap();
    ws.send(text(&hello(PlannerMode::Continuous, [0.0, 0.2, 0.0])))
        .await
        .unwrap();
    let p = PoseSample {
        t: 1.0,
        position: [0.0; 3],
    };
    ws.send(text(&pose(&p))).await.unwrap();
    ws.send(text(&pose(&p))).await.unwrap();
    let msg = expect_error(&mut ws).await;
    assert!(msg.contains("does not increase"), "{msg}");
}

#[tokio::test]
async fn idle_connection_times_out() {
    let config = ServiceConfig {
        idle_timeout: 0.2,
        ..ServiceConfig::default()
    };
    let url = start_server(config).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(url.as_str())
        .await
        .unwrap();
    assert_eq!(expect_error(&mut ws).await, "idle timeout");
}

#[tokio::test]
async fn health_endpoint() {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(reachguide_service::serve(
        listener,
        Arc::new(AppState::new(None, ServiceConfig::default(), None)),
    ));
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    s.write_all(b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    assert!(
        buf.starts_with("HTTP/1.1 200") && buf.ends_with("ok"),
        "{buf}"
    );
}
