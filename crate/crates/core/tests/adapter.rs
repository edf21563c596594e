use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use fogbench::adapter::{spawn_server, Capabilities, ExternalBinding, InProcessBinding, IngestItem, SutBinding};
use fogbench::records::{AggregateRecord, AnnotatedRecord, EventReport, Interval, Query, QueryKind};
use fogbench::store::TimeSeriesStore;
use fogbench::SutError;
use rand::{Rng, SeedableRng};

const TIMEOUT: Duration = Duration::from_secs(5);

fn store() -> TimeSeriesStore {
    let mut s = TimeSeriesStore::new(&[4_000_000; 3], 1024);
    s.track_threshold(0.9);
    s
}

fn records(n: usize, seed: u64) -> Vec<IngestItem> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            if k % 97 == 96 {
                return IngestItem::EventReport(EventReport {
                    site_id: rng.random_range(0..6),
                    trigger_time: k as u64,
                    exceed_count: 61,
                    dumps: Vec::new(),
                });
            }
            let t = rng.random_range(0..100_000_000_000u64);
            IngestItem::Record(AnnotatedRecord {
                record: AggregateRecord {
                    site_id: rng.random_range(0..6),
                    sensor_id: rng.random_range(0..300),
                    window_seq: k as u64,
                    gen_time: t,
                    created_at: t + 250_000_000,
                    channel_means: [rng.random(), rng.random(), rng.random()],
                    size_bits: 320,
                },
                event_probability: rng.random(),
                inference_time: t + 300_000_000,
            })
        })
        .collect()
}

fn queries(seed: u64) -> Vec<Query> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..60u64)
        .map(|k| {
            let kind = QueryKind::ALL[(k % 3) as usize];
            let start = rng.random_range(0..80_000_000_000u64);
            Query {
                query_id: k,
                client_id: 0,
                kind,
                issue_time: 100_000_000_000,
                interval: (kind != QueryKind::ScanFilter).then_some(Interval { start, end: start + 20_000_000_000 }),
                threshold: (kind == QueryKind::ScanFilter).then_some(0.9),
                lookback_start: None,
            }
        })
        .collect()
}

#[test]
fn reference_binding_state_equals_direct_store_calls() {
    let items = records(1_000, 1);
    let mut direct = store();
    let mut binding = InProcessBinding::new(store());
    for item in &items {
        let via = binding.ingest(item).unwrap();
        let want = fogbench::adapter::apply_ingest(&mut direct, item);
        assert_eq!(via, want);
    }
    for i in 0..3 {
        let a: Vec<_> = direct.instance_records(i).collect();
        let b: Vec<_> = binding.store.instance_records(i).collect();
        assert_eq!(a, b);
    }
    assert_eq!(direct.stats(), binding.store.stats());
    for q in queries(2) {
        assert_eq!(binding.query(&q, true).unwrap(), direct.query(&q, true));
    }
}

#[test]
fn loopback_results_equal_in_process_results() {
    let server = spawn_server("127.0.0.1:0", store()).unwrap();
    let mut ext = ExternalBinding::connect(&server.addr.to_string(), TIMEOUT, Capabilities::default()).unwrap();
    let mut local = InProcessBinding::new(store());
    for item in records(1_000, 3) {
        assert_eq!(ext.ingest(&item).unwrap(), local.ingest(&item).unwrap());
    }
    for q in queries(4) {
        let a = ext.query(&q, true).unwrap();
        let b = local.query(&q, true).unwrap();
        assert_eq!(a.sorted_keys(), b.sorted_keys());
        assert_eq!(a, b);
        let counts = ext.query(&q, false).unwrap();
        assert_eq!(counts.count, b.count);
        assert!(counts.records.is_empty());
    }
    assert_eq!(server.store.lock().unwrap().stats(), local.store.stats());
}

#[test]
fn unreachable_endpoint_is_reported() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = ExternalBinding::connect(&format!("127.0.0.1:{port}"), TIMEOUT, Capabilities::default()).unwrap_err();
    assert!(matches!(err, SutError::Unreachable(..)), "{err}");
}

fn fake_server(reply: &'static [u8]) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for conn in listener.incoming() {
            let mut s = conn.unwrap();
            let mut len = [0u8; 4];
            if s.read_exact(&mut len).is_err() {
                continue;
            }
            let mut body = vec![0u8; u32::from_be_bytes(len) as usize];
            let _ = s.read_exact(&mut body);
            let _ = s.write_all(reply);
        }
    });
    addr
}

#[test]
fn malformed_response_is_a_protocol_error() {
    let q = &queries(5)[0];
    let addr = fake_server(&[0, 0, 0, 4, 0x03, b'x', b'y', b'z']);
    let mut ext = ExternalBinding::connect(&addr, TIMEOUT, Capabilities::default()).unwrap();
    assert!(matches!(ext.query(q, true), Err(SutError::Protocol(_))));

    let addr = fake_server(&[0, 0, 0, 3, 0x04, b'{', b'}']);
    let mut ext = ExternalBinding::connect(&addr, TIMEOUT, Capabilities::default()).unwrap();
    assert!(matches!(ext.query(q, true), Err(SutError::Protocol(_))));
}

#[test]
fn remote_errors_and_timeouts() {
    let addr = fake_server(b"\x00\x00\x00\x11\x05{\"message\":\"no\"}");
    let mut ext = ExternalBinding::connect(&addr, TIMEOUT, Capabilities::default()).unwrap();
    assert!(matches!(ext.query(&queries(6)[0], true), Err(SutError::Remote(m)) if m == "no"));

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let _hold = thread::spawn(move || {
        let conns: Vec<_> = listener.incoming().take(2).collect();
        thread::sleep(Duration::from_secs(3));
        drop(conns);
    });
    let mut ext = ExternalBinding::connect(&addr, Duration::from_millis(200), Capabilities::default()).unwrap();
    assert!(matches!(ext.query(&queries(6)[0], true), Err(SutError::Timeout(_))));
}

#[test]
fn capability_flags_are_enforced_client_side() {
    let server = spawn_server("127.0.0.1:0", store()).unwrap();
    let caps = Capabilities { supports_event_reports: false, supports_scan: false };
    let mut ext = ExternalBinding::connect(&server.addr.to_string(), TIMEOUT, caps).unwrap();
    let report = IngestItem::EventReport(EventReport { site_id: 0, trigger_time: 0, exceed_count: 1, dumps: vec![] });
    assert!(matches!(ext.ingest(&report), Err(SutError::Unsupported(_))));
    let scan = queries(7).into_iter().find(|q| q.kind == QueryKind::ScanFilter).unwrap();
    assert!(matches!(ext.query(&scan, false), Err(SutError::Unsupported(_))));
}
