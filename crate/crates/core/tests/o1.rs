use std::time::Duration;

use ibn_core::o1::wire::{self, Ack, Body, EditConfig, ErrorPayload, GetConfig, PmSubscribe, Subscribed, WireMessage};
use ibn_core::o1::{serve, ErrorCode, O1Client, O1Error, Pacing, ServerHandle};
use ibn_core::sim::{AppliedChange, CellConfig, Network, PmReport, ScenarioConfig};
use ibn_core::intent::NetworkTopology;
use proptest::prelude::*;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

const SHORT: Duration = Duration::from_millis(200);

async fn manual_server() -> ServerHandle {
    let net = Network::new(ScenarioConfig::default()).unwrap();
    serve(net, "127.0.0.1:0", Pacing::Manual).await.unwrap()
}

#[tokio::test]
async fn get_config_on_fresh_network() {
    let server = manual_server().await;
    let client = O1Client::connect(server.local_addr()).await.unwrap();
    let cfg = client.get_config("SubNetwork_1/Cell_1").await.unwrap();
    assert_eq!(
        (cfg.tx_power_dbm, cfg.min_dbm, cfg.max_dbm, cfg.step_dbm),
        (30.0, 10.0, 40.0, 1.0)
    );
    assert_eq!(client.get_config("SubNetwork_1/Cell_1").await.unwrap(), cfg);
    match client.get_config("SubNetwork_1/Cell_99").await {
        Err(O1Error::Remote { code, .. }) => assert_eq!(code, ErrorCode::UnknownCell),
        other => panic!("{other:?}"),
    }
    let alias = client.get_config("SubNetwork_1/Cell_7").await.unwrap();
    assert_eq!(alias.cell_id, "Cell_1");
    let topo = client.get_topology("SubNetwork_1").await.unwrap();
    assert_eq!(topo.cells, ["Cell_1", "Cell_2"]);
}

#[tokio::test]
async fn edit_config_round_trip() {
    let server = manual_server().await;
    let client = O1Client::connect(server.local_addr()).await.unwrap();
    let applied = client.edit_config("SubNetwork_1/Cell_1", "txPower", 20.0).await.unwrap();
    assert_eq!((applied.old_value, applied.new_value), (30.0, 20.0));
    assert_eq!(client.get_config("SubNetwork_1/Cell_1").await.unwrap().tx_power_dbm, 20.0);
    match client.edit_config("SubNetwork_1/Cell_1", "txPower", 9.0).await {
        Err(O1Error::Remote { code, .. }) => assert_eq!(code, ErrorCode::OutOfRange),
        other => panic!("{other:?}"),
    }
    match client.edit_config("SubNetwork_1/Cell_1", "tilt", 2.0).await {
        Err(O1Error::Remote { code, .. }) => assert_eq!(code, ErrorCode::UnknownParameter),
        other => panic!("{other:?}"),
    }
    assert_eq!(client.get_config("SubNetwork_1/Cell_1").await.unwrap().tx_power_dbm, 20.0);
}

#[tokio::test]
async fn occupied_endpoint_is_a_bind_error() {
    let server = manual_server().await;
    let net = Network::new(ScenarioConfig::default()).unwrap();
    assert!(matches!(
        serve(net, server.local_addr(), Pacing::Manual).await,
        Err(O1Error::Bind(_))
    ));
}

#[tokio::test]
async fn filter_delivers_only_requested_cell() {
    let server = manual_server().await;
    let client = O1Client::connect(server.local_addr()).await.unwrap();
    let mut sub = client.pm_subscribe(Some(vec!["Cell_1".into()])).await.unwrap();
    assert_eq!(sub.cells(), ["Cell_1"]);
    server.advance(15).await.unwrap();
    let mut starts = Vec::new();
    for _ in 0..3 {
        let r = sub.next(SHORT).await.unwrap();
        assert_eq!(r.cell_id, "Cell_1");
        starts.push(r.window_start_tick);
    }
    assert_eq!(starts, [0, 5, 10]);
    assert!(matches!(sub.next(SHORT).await, Err(O1Error::Timeout)));
}

#[tokio::test]
async fn unfiltered_reports_interleave_in_window_order() {
    let server = manual_server().await;
    let client = O1Client::connect(server.local_addr()).await.unwrap();
    let mut sub = client.pm_subscribe(None).await.unwrap();
    server.advance(10).await.unwrap();
    let mut got = Vec::new();
    for _ in 0..4 {
        let r = sub.next(SHORT).await.unwrap();
        got.push((r.window_start_tick, r.cell_id));
    }
    assert_eq!(
        got,
        [
            (0, "Cell_1".to_string()),
            (0, "Cell_2".to_string()),
            (5, "Cell_1".to_string()),
            (5, "Cell_2".to_string())
        ]
    );
}

#[tokio::test]
async fn late_subscriber_sees_no_replay() {
    let server = manual_server().await;
    server.advance(25).await.unwrap();
    let client = O1Client::connect(server.local_addr()).await.unwrap();
    let mut sub = client.pm_subscribe(Some(vec!["Cell_1".into()])).await.unwrap();
    server.advance(5).await.unwrap();
    let first = sub.next(SHORT).await.unwrap();
    // Windows are 5 ticks, so the sixth window starts at tick 25.
    assert_eq!(first.window_start_tick / 5 + 1, 6);
}

#[tokio::test]
async fn two_subscribers_see_identical_streams_and_survive_a_dead_peer() {
    let server = manual_server().await;
    let a = O1Client::connect(server.local_addr()).await.unwrap();
    let b = O1Client::connect(server.local_addr()).await.unwrap();
    let c = O1Client::connect(server.local_addr()).await.unwrap();
    let mut sa = a.pm_subscribe(None).await.unwrap();
    let mut sb = b.pm_subscribe(None).await.unwrap();
    let _sc = c.pm_subscribe(None).await.unwrap();
    server.advance(5).await.unwrap();
    drop(_sc);
    drop(c);
    server.advance(10).await.unwrap();
    let mut ra: Vec<PmReport> = Vec::new();
    let mut rb: Vec<PmReport> = Vec::new();
    for _ in 0..6 {
        ra.push(sa.next(SHORT).await.unwrap());
        rb.push(sb.next(SHORT).await.unwrap());
    }
    assert_eq!(ra, rb);
    for cell in ["Cell_1", "Cell_2"] {
        let starts: Vec<u64> = ra.iter().filter(|r| r.cell_id == cell).map(|r| r.window_start_tick).collect();
        assert!(starts.windows(2).all(|w| w[0] < w[1]));
    }
    assert_eq!(a.get_config("SubNetwork_1/Cell_2").await.unwrap().cell_id, "Cell_2");
}

#[tokio::test]
async fn requests_after_server_shutdown_report_disconnect() {
    let server = manual_server().await;
    let client = O1Client::connect(server.local_addr()).await.unwrap();
    server.shutdown().await;
    let r = client.get_config("SubNetwork_1/Cell_1").await;
    assert!(matches!(r, Err(O1Error::Disconnected | O1Error::Io(_))), "{r:?}");
}

#[tokio::test]
async fn connect_to_nothing_fails() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    assert!(matches!(O1Client::connect(addr).await, Err(O1Error::Connect(_))));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn msg_ids_pair_under_three_concurrent_clients() {
    let server = manual_server().await;
    let mut tasks = Vec::new();
    for k in 0..3u32 {
        let client = O1Client::connect(server.local_addr()).await.unwrap();
        tasks.push(tokio::spawn(async move {
            let mut inner = Vec::new();
            for i in 0..40u32 {
                let c = client.clone();
                inner.push(tokio::spawn(async move {
                    let cell = if (i + k) % 2 == 0 { "Cell_1" } else { "Cell_2" };
                    let path = format!("SubNetwork_1/{cell}");
                    if i % 3 == 0 {
                        let value = f64::from(10 + (i + 7 * k) % 31);
                        let a = c.edit_config(&path, "txPower", value).await.unwrap();
                        assert_eq!((a.cell_id.as_str(), a.new_value), (cell, value));
                    } else if i % 3 == 1 {
                        assert_eq!(c.get_config(&path).await.unwrap().cell_id, cell);
                    } else {
                        let bad = f64::from(41 + i);
                        match c.edit_config(&path, "txPower", bad).await {
                            Err(O1Error::Remote { code, message }) => {
                                assert_eq!(code, ErrorCode::OutOfRange);
                                assert!(message.contains(&format!("{bad}")), "{message}");
                            }
                            other => panic!("{other:?}"),
                        }
                    }
                }));
            }
            for t in inner {
                t.await.unwrap();
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
}

#[tokio::test]
async fn pipelined_requests_are_answered_in_order() {
    let server = manual_server().await;
    let stream = TcpStream::connect(server.local_addr()).await.unwrap();
    let (read, mut write) = stream.into_split();
    let mut batch = String::new();
    for id in 1..=30u64 {
        let body = match id % 3 {
            0 => Body::GetConfig(GetConfig {
                object_path: "SubNetwork_1/Cell_2".into(),
            }),
            1 => Body::EditConfig(EditConfig {
                object_path: "SubNetwork_1/Cell_1".into(),
                parameter: "txPower".into(),
                value: 10.0 + id as f64,
            }),
            _ => Body::GetConfig(GetConfig {
                object_path: "SubNetwork_1/Cell_99".into(),
            }),
        };
        batch.push_str(&wire::encode(&WireMessage { msg_id: id, body }));
        batch.push('\n');
    }
    write.write_all(batch.as_bytes()).await.unwrap();
    let mut lines = BufReader::new(read).lines();
    for id in 1..=30u64 {
        let msg = wire::decode(&lines.next_line().await.unwrap().unwrap()).unwrap();
        assert_eq!(msg.msg_id, id);
        match (id % 3, msg.body) {
            (0, Body::Ack(Ack::Config(_))) | (1, Body::Ack(Ack::Applied(_))) | (2, Body::Error(_)) => {}
            (_, other) => panic!("{id}: {other:?}"),
        }
    }
}

#[tokio::test]
async fn oversize_frame_is_rejected() {
    let server = manual_server().await;
    let stream = TcpStream::connect(server.local_addr()).await.unwrap();
    let (read, mut write) = stream.into_split();
    let mut huge = format!("{{\"msgId\":4,\"kind\":\"GET_CONFIG\",\"payload\":{{\"objectPath\":\"{}\"}}}}", "x".repeat(70 * 1024));
    huge.push('\n');
    write.write_all(huge.as_bytes()).await.unwrap();
    let mut lines = BufReader::new(read).lines();
    let msg = wire::decode(&lines.next_line().await.unwrap().unwrap()).unwrap();
    match msg.body {
        Body::Error(e) => assert_eq!(e.code, ErrorCode::FrameTooLarge),
        other => panic!("{other:?}"),
    }
    let end = tokio::time::timeout(Duration::from_secs(2), lines.next_line()).await.unwrap();
    assert!(matches!(end, Ok(None) | Err(_)));
}

#[tokio::test]
async fn garbage_frame_gets_bad_request_and_connection_survives() {
    let server = manual_server().await;
    let stream = TcpStream::connect(server.local_addr()).await.unwrap();
    let (read, mut write) = stream.into_split();
    write.write_all(b"{\"msgId\":3,\"kind\":\"REBOOT\"}\n").await.unwrap();
    let get = wire::encode(&WireMessage {
        msg_id: 4,
        body: Body::GetConfig(GetConfig {
            object_path: "SubNetwork_1/Cell_1".into(),
        }),
    });
    write.write_all(format!("{get}\n").as_bytes()).await.unwrap();
    let mut lines = BufReader::new(read).lines();
    let first = wire::decode(&lines.next_line().await.unwrap().unwrap()).unwrap();
    assert_eq!(first.msg_id, 3);
    assert!(matches!(first.body, Body::Error(ErrorPayload { code: ErrorCode::BadRequest, .. })));
    let second = wire::decode(&lines.next_line().await.unwrap().unwrap()).unwrap();
    assert_eq!(second.msg_id, 4);
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        proptest::num::f64::NORMAL | proptest::num::f64::ZERO | proptest::num::f64::SUBNORMAL,
        (-40i32..=60).prop_map(f64::from),
    ]
}

fn name() -> impl Strategy<Value = String> {
    "\\PC{0,16}"
}

fn cell_config() -> impl Strategy<Value = CellConfig> {
    (name(), finite(), finite(), finite(), finite()).prop_map(|(cell_id, tx_power_dbm, min_dbm, max_dbm, step_dbm)| {
        CellConfig {
            cell_id,
            tx_power_dbm,
            min_dbm,
            max_dbm,
            step_dbm,
        }
    })
}

fn report() -> impl Strategy<Value = PmReport> {
    (name(), any::<u64>(), any::<u64>(), finite(), finite(), finite(), finite()).prop_map(|(cell_id, s, e, ee, bits, j, tx)| {
        PmReport {
            cell_id,
            window_start_tick: s,
            window_end_tick: e,
            energy_efficiency_bits_per_joule: ee,
            throughput_bits: bits,
            energy_joules: j,
            tx_power_dbm_at_window_end: tx,
        }
    })
}

fn ack() -> impl Strategy<Value = Ack> {
    prop_oneof![
        cell_config().prop_map(Ack::Config),
        (name(), name(), finite(), finite(), any::<u64>()).prop_map(|(cell_id, parameter, old_value, new_value, t)| {
            Ack::Applied(AppliedChange {
                cell_id,
                parameter,
                old_value,
                new_value,
                effective_tick: t,
            })
        }),
        (name(), prop::collection::vec(name(), 0..4), prop::collection::btree_map(name(), name(), 0..3)).prop_map(
            |(subnetwork, cells, aliases)| Ack::Topology(NetworkTopology {
                subnetwork,
                cells,
                aliases,
            })
        ),
        prop::collection::vec(name(), 0..4).prop_map(|subscribed_cells| Ack::Subscribed(Subscribed { subscribed_cells })),
    ]
}

fn error_code() -> impl Strategy<Value = ErrorCode> {
    prop::sample::select(vec![
        ErrorCode::UnknownCell,
        ErrorCode::UnknownObject,
        ErrorCode::UnknownParameter,
        ErrorCode::OutOfRange,
        ErrorCode::BadRequest,
        ErrorCode::FrameTooLarge,
    ])
}

fn body() -> impl Strategy<Value = Body> {
    prop_oneof![
        name().prop_map(|object_path| Body::GetConfig(GetConfig { object_path })),
        (name(), name(), finite()).prop_map(|(object_path, parameter, value)| Body::EditConfig(EditConfig {
            object_path,
            parameter,
            value
        })),
        prop::option::of(prop::collection::vec(name(), 0..4)).prop_map(|cells| Body::PmSubscribe(PmSubscribe { cells })),
        report().prop_map(Body::PmReport),
        ack().prop_map(Body::Ack),
        (error_code(), name()).prop_map(|(code, message)| Body::Error(ErrorPayload { code, message })),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn wire_round_trip(msg_id in any::<u64>(), body in body()) {
        let msg = WireMessage { msg_id, body };
        let line = wire::encode(&msg);
        prop_assert!(!line.contains('\n'));
        prop_assert_eq!(wire::decode(&line).unwrap(), msg);
    }
}
