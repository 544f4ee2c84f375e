use super::*;
use proptest::prelude::*;
use std::collections::BTreeMap;
use std::time::Duration;

/// Independent record-boundary oracle: split the file into lines and take
/// every marker-prefixed line as a record start. Deliberately a different
/// shape from the indexer's byte scan.
fn oracle_spans(bytes: &[u8]) -> Vec<(u64, u64)> {
    let mut starts = Vec::new();
    let mut offset = 0u64;
    for line in bytes.split_inclusive(|&b| b == b'\n') {
        if line.starts_with(RECORD_MARKER) {
            starts.push(offset);
        }
        offset += line.len() as u64;
    }
    starts
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let end = starts.get(i + 1).copied().unwrap_or(bytes.len() as u64);
            (s, end - s)
        })
        .collect()
}

/// A record padded to exactly `len` bytes (marker line + name + filler),
/// always ending in a newline so the next record starts a line.
fn record_of_len(name: &str, len: usize) -> Vec<u8> {
    let mut rec = Vec::with_capacity(len);
    rec.extend_from_slice(RECORD_MARKER);
    rec.push(b'\n');
    rec.extend_from_slice(name.as_bytes());
    rec.push(b'\n');
    assert!(rec.len() < len, "record head longer than requested length");
    while rec.len() < len - 1 {
        // Filler with an embedded '@' not at line start.
        let filler = b"x@y ";
        let want = (len - 1 - rec.len()).min(filler.len());
        rec.extend_from_slice(&filler[..want]);
    }
    rec.push(b'\n');
    rec
}

fn three_record_db() -> Vec<u8> {
    let mut db = Vec::new();
    db.extend_from_slice(&record_of_len("mol_one", 100));
    db.extend_from_slice(&record_of_len("mol_two", 250));
    db.extend_from_slice(&record_of_len("mol_three", 80));
    db
}

#[test]
fn three_records_index_as_expected() {
    let db = three_record_db();
    let index = build_index(&db).unwrap();
    assert_eq!(index.record_count(), 3);
    assert_eq!(
        index.entries,
        vec![
            IndexEntry { offset: 0, length: 100 },
            IndexEntry { offset: 100, length: 250 },
            IndexEntry { offset: 350, length: 80 },
        ]
    );
    let spans: Vec<(u64, u64)> =
        index.entries.iter().map(|e| (e.offset, e.length)).collect();
    assert_eq!(spans, oracle_spans(&db));
}

#[test]
fn no_marker_is_empty_database() {
    assert_eq!(build_index(b"just some text\n"), Err(IndexError::EmptyDatabase));
}

#[test]
fn leading_bytes_counted_but_not_indexed() {
    let mut db = b"junk header\n".to_vec();
    let junk = db.len() as u64;
    db.extend_from_slice(&record_of_len("m", 64));
    let index = build_index(&db).unwrap();
    assert_eq!(index.entries[0].offset, junk);
    assert_eq!(index.source_size, db.len() as u64);
    let total: u64 = index.entries.iter().map(|e| e.length).sum();
    assert_eq!(total, index.source_size - junk);
}

#[test]
fn marker_mid_line_is_not_a_boundary() {
    let mut db = Vec::new();
    db.extend_from_slice(RECORD_MARKER);
    db.extend_from_slice(b"\nname\nbody @<TRIPOS>MOLECULE not at start\n");
    let index = build_index(&db).unwrap();
    assert_eq!(index.record_count(), 1);
}

#[test]
fn two_thousand_records_tile() {
    let mut db = Vec::new();
    for i in 1..=2000 {
        db.extend_from_slice(&record_of_len(&format!("mol_{}", i), 60 + (i % 37)));
    }
    let index = build_index(&db).unwrap();
    assert_eq!(index.record_count(), 2000);
    assert_eq!(
        index.entries.iter().map(|e| (e.offset, e.length)).collect::<Vec<_>>(),
        oracle_spans(&db)
    );
    for w in index.entries.windows(2) {
        assert_eq!(w[0].offset + w[0].length, w[1].offset);
    }
    let last = index.entries.last().unwrap();
    assert_eq!(last.offset + last.length, index.source_size);

    let entry = lookup(&index, 2000).unwrap();
    let bytes = &db[entry.offset as usize..(entry.offset + entry.length) as usize];
    let (off, len) = *oracle_spans(&db).last().unwrap();
    assert_eq!(bytes, &db[off as usize..(off + len) as usize]);
}

#[test]
fn lookup_rejects_out_of_range() {
    let index = build_index(&three_record_db()).unwrap();
    assert_eq!(lookup(&index, 1).unwrap(), IndexEntry { offset: 0, length: 100 });
    assert_eq!(lookup(&index, 4), Err(IndexError::OutOfRange { n: 4, count: 3 }));
    assert_eq!(lookup(&index, 0), Err(IndexError::OutOfRange { n: 0, count: 3 }));
}

#[test]
fn index_round_trips() {
    let index = build_index(&three_record_db()).unwrap();
    let text = write_index(&index).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(read_index(&text).unwrap(), index);
}

#[test]
fn empty_index_rejected_at_write() {
    let index =
        CdbIndex { source_size: 0, source_checksum: "0".repeat(64), entries: vec![] };
    assert_eq!(write_index(&index), Err(IndexError::EmptyIndex));
}

#[test]
fn read_index_rejects_bad_inputs() {
    let good = write_index(&build_index(&three_record_db()).unwrap()).unwrap();
    assert_eq!(
        read_index(&good.replace("CDBIDX 1", "CDBIDX 9")),
        Err(IndexError::VersionMismatch("9".into()))
    );
    let truncated: String = good.lines().take(3).map(|l| format!("{}\n", l)).collect();
    assert_eq!(read_index(&truncated), Err(IndexError::Truncated { expected: 3, actual: 2 }));
    let bad_sum = {
        let mut lines: Vec<String> = good.lines().map(String::from).collect();
        lines[0] = lines[0].rsplit_once(' ').map(|(l, _)| format!("{} zzzz", l)).unwrap();
        lines.join("\n") + "\n"
    };
    assert_eq!(read_index(&bad_sum), Err(IndexError::MalformedChecksum("zzzz".into())));
    // Break the tiling: shrink one record's length.
    let holed = good.replace("2 100 250", "2 100 200");
    assert_eq!(read_index(&holed), Err(IndexError::NonContiguous { n: 2 }));
}

#[test]
fn stale_index_detected_after_mutation() {
    let mut db = three_record_db();
    let index = build_index(&db).unwrap();
    assert_eq!(verify_index(&index, &db), Ok(()));
    let last = db.len() - 1;
    db[last] ^= 0xff;
    assert_eq!(verify_index(&index, &db), Err(IndexError::ChecksumChanged));
    db.push(b'\n');
    assert!(matches!(verify_index(&index, &db), Err(IndexError::SizeChanged { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn index_matches_oracle_on_random_dbs(
        lens in proptest::collection::vec(50usize..600, 1..20),
        junk in proptest::collection::vec(any::<u8>(), 0..40),
    ) {
        let mut db: Vec<u8> = junk.into_iter().filter(|&b| b != b'@').collect();
        // Leading junk must not open with a marker or contain one at a line
        // start; stripping '@' guarantees that.
        if !db.is_empty() && db.last() != Some(&b'\n') {
            db.push(b'\n');
        }
        let first = db.len() as u64;
        for (i, len) in lens.iter().enumerate() {
            db.extend_from_slice(&record_of_len(&format!("m{}", i), *len));
        }
        let index = build_index(&db).unwrap();
        let spans: Vec<(u64, u64)> =
            index.entries.iter().map(|e| (e.offset, e.length)).collect();
        prop_assert_eq!(&spans, &oracle_spans(&db));

        // Tiling: lengths sum to file size minus the first marker offset.
        let total: u64 = index.entries.iter().map(|e| e.length).sum();
        prop_assert_eq!(total, db.len() as u64 - first);

        // Concatenating records reproduces the file from the first marker.
        let mut rebuilt = Vec::new();
        for e in &index.entries {
            rebuilt.extend_from_slice(&db[e.offset as usize..(e.offset + e.length) as usize]);
        }
        prop_assert_eq!(&rebuilt[..], &db[first as usize..]);
    }
}

// ---- server + client ----------------------------------------------------

fn serve_db(db: &[u8], delay: Duration) -> (CdbServer, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let db_path = dir.path().join("testdb.db");
    let idx_path = dir.path().join("testdb.idx");
    std::fs::write(&db_path, db).unwrap();
    let index = build_index(db).unwrap();
    std::fs::write(&idx_path, write_index(&index).unwrap()).unwrap();
    let mut databases = BTreeMap::new();
    databases.insert("testdb".to_string(), (db_path, idx_path));
    let config = ServeConfig { databases, response_delay: delay };
    let server = CdbServer::start("127.0.0.1:0", config).unwrap();
    (server, dir)
}

#[test]
fn server_answers_get_stat_ping_and_errors() {
    let db = three_record_db();
    let (server, _dir) = serve_db(&db, Duration::ZERO);
    let cfg = ClientConfig::default();
    let mut conn = CdbConnection::connect(&server.endpoint(), &cfg).unwrap();

    let rec = conn.fetch("testdb", 2).unwrap();
    assert_eq!(rec.len(), 250);
    assert!(rec.starts_with(RECORD_MARKER));
    assert_eq!(&rec[..], &db[100..350]);

    assert_eq!(conn.stat("testdb").unwrap(), 3);
    assert!(conn.ping().unwrap() > 0.0);

    match conn.fetch("nosuch", 1) {
        Err(CdbClientError::NoDatabase(name)) => assert_eq!(name, "nosuch"),
        other => panic!("expected NODB, got {:?}", other.map(|b| b.len())),
    }
    match conn.fetch("testdb", 9) {
        Err(CdbClientError::NoRecord(9)) => {}
        other => panic!("expected NOREC, got {:?}", other.map(|b| b.len())),
    }
    match conn.stat("bad/name") {
        Err(CdbClientError::BadRequest) => {}
        other => panic!("expected BADREQ, got {:?}", other),
    }
    // The connection survives request-level errors.
    assert_eq!(conn.stat("testdb").unwrap(), 3);
}

#[test]
fn server_refuses_stale_index() {
    let db = three_record_db();
    let dir = tempfile::tempdir().unwrap();
    let db_path = dir.path().join("d.db");
    let idx_path = dir.path().join("d.idx");
    let index = build_index(&db).unwrap();
    std::fs::write(&idx_path, write_index(&index).unwrap()).unwrap();
    let mut mutated = db.clone();
    mutated[10] ^= 0x55;
    std::fs::write(&db_path, &mutated).unwrap();
    let mut databases = BTreeMap::new();
    databases.insert("d".to_string(), (db_path, idx_path));
    match CdbServer::start("127.0.0.1:0", ServeConfig::new(databases)) {
        Err(err) => assert!(matches!(err, ServeError::Index { .. }), "{:?}", err),
        Ok(_) => panic!("stale index should refuse to load"),
    }
}

#[test]
fn concurrent_clients_get_uncorrupted_records() {
    let mut db = Vec::new();
    for i in 1..=64 {
        db.extend_from_slice(&record_of_len(&format!("mol_{}", i), 50 + i * 3));
    }
    let expected: Vec<Vec<u8>> = oracle_spans(&db)
        .iter()
        .map(|&(o, l)| db[o as usize..(o + l) as usize].to_vec())
        .collect();
    let (server, _dir) = serve_db(&db, Duration::ZERO);
    let endpoint = server.endpoint();
    let expected = std::sync::Arc::new(expected);

    let handles: Vec<_> = (0..8)
        .map(|t| {
            let endpoint = endpoint.clone();
            let expected = std::sync::Arc::clone(&expected);
            std::thread::spawn(move || {
                let cfg = ClientConfig::default();
                let mut conn = CdbConnection::connect(&endpoint, &cfg).unwrap();
                for i in 0..20 {
                    let n = (t * 7 + i * 13) % 64 + 1;
                    let rec = conn.fetch("testdb", n as u64).unwrap();
                    assert_eq!(rec, expected[n - 1], "record {} corrupted", n);
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

#[test]
fn fetch_against_stopped_server_is_a_connect_error() {
    let cfg = ClientConfig { connect_timeout: Duration::from_millis(300), ..Default::default() };
    // Bind a listener to learn a free port, then release it.
    let addr = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let err = fetch(&addr.to_string(), "testdb", 1, &cfg).unwrap_err();
    assert!(err.is_connect(), "{:?}", err);
}

// ---- replica selection ---------------------------------------------------

fn info(endpoint: &str, cost: Option<f64>, probe: Option<f64>) -> ReplicaInfo {
    ReplicaInfo { endpoint: endpoint.into(), declared_cost: cost, last_probe: probe }
}

#[test]
fn catalogue_parses_and_rejects_duplicates() {
    let cat = ReplicaCatalogue::parse(
        "# replicas\naldrich_300 10.0.0.5:5001 cost=0.5\naldrich_300 10.0.0.9:5001\n",
    )
    .unwrap();
    let reps = cat.replicas("aldrich_300").unwrap();
    assert_eq!(reps.len(), 2);
    assert_eq!(reps[0].declared_cost, Some(0.5));
    assert_eq!(reps[1].declared_cost, None);

    let err = ReplicaCatalogue::parse("db a:1\ndb a:1\n").unwrap_err();
    assert!(matches!(err, ReplicaError::DuplicateEndpoint { .. }));
}

#[test]
fn singleton_wins_under_every_policy() {
    let mut cat = ReplicaCatalogue::default();
    cat.register("db", info("only:1", None, None));
    for policy in [
        SelectionPolicy::LowestLatency,
        SelectionPolicy::LowestCost,
        SelectionPolicy::Weighted(0.5),
    ] {
        assert_eq!(select_replica(&cat, "db", policy).unwrap().endpoint, "only:1");
    }
}

#[test]
fn lowest_latency_needs_probes() {
    let mut cat = ReplicaCatalogue::default();
    cat.register("db", info("a:1", None, Some(0.005)));
    cat.register("db", info("b:1", None, None));
    let err = select_replica(&cat, "db", SelectionPolicy::LowestLatency).unwrap_err();
    assert_eq!(err, ReplicaError::MissingProbe("b:1".into()));
}

#[test]
fn no_replica_is_an_error() {
    let cat = ReplicaCatalogue::default();
    assert_eq!(
        select_replica(&cat, "db", SelectionPolicy::LowestCost).unwrap_err(),
        ReplicaError::NoReplica("db".into())
    );
}

#[test]
fn weighted_zero_matches_lowest_cost() {
    let mut cat = ReplicaCatalogue::default();
    cat.register("db", info("a:1", Some(3.0), None));
    cat.register("db", info("b:1", Some(1.0), None));
    cat.register("db", info("c:1", Some(2.0), None));
    let by_cost = select_replica(&cat, "db", SelectionPolicy::LowestCost).unwrap();
    let by_weight = select_replica(&cat, "db", SelectionPolicy::Weighted(0.0)).unwrap();
    assert_eq!(by_cost.endpoint, by_weight.endpoint);
    assert_eq!(by_cost.endpoint, "b:1");
}

#[test]
fn probed_latency_selects_the_fast_server() {
    let db = three_record_db();
    let (fast, _d1) = serve_db(&db, Duration::ZERO);
    let (slow, _d2) = serve_db(&db, Duration::from_millis(35));
    let mut cat = ReplicaCatalogue::default();
    cat.register("testdb", info(&fast.endpoint(), None, None));
    cat.register("testdb", info(&slow.endpoint(), None, None));
    cat.probe("testdb", &ClientConfig::default()).unwrap();
    let picked = select_replica(&cat, "testdb", SelectionPolicy::LowestLatency).unwrap();
    assert_eq!(picked.endpoint, fast.endpoint());
}

proptest! {
    #[test]
    fn argmin_invariant_under_affine_latency_scaling(
        probes in proptest::collection::vec(0.001f64..1.0, 2..6),
        scale in 0.1f64..50.0,
        shift in 0.0f64..5.0,
    ) {
        let mut base = ReplicaCatalogue::default();
        let mut scaled = ReplicaCatalogue::default();
        for (i, p) in probes.iter().enumerate() {
            let ep = format!("host{}:1", i);
            base.register("db", info(&ep, None, Some(*p)));
            scaled.register("db", info(&ep, None, Some(*p * scale + shift)));
        }
        let a = select_replica(&base, "db", SelectionPolicy::LowestLatency).unwrap();
        let b = select_replica(&scaled, "db", SelectionPolicy::LowestLatency).unwrap();
        prop_assert_eq!(&a.endpoint, &b.endpoint);
    }
}
