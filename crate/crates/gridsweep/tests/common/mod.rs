//! Shared helpers for integration tests: synthetic MOL2 databases and an
//! independent record-boundary oracle.
#![allow(dead_code)] // each test target uses its own subset

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MARKER: &[u8] = b"@<TRIPOS>MOLECULE";

/// Record spans via line splitting: the oracle deliberately takes a
/// different route than the indexer's byte scan.
pub fn oracle_spans(bytes: &[u8]) -> Vec<(u64, u64)> {
    let mut starts = Vec::new();
    let mut offset = 0u64;
    for line in bytes.split_inclusive(|&b| b == b'\n') {
        if line.starts_with(MARKER) {
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

pub fn oracle_records(bytes: &[u8]) -> Vec<Vec<u8>> {
    oracle_spans(bytes)
        .into_iter()
        .map(|(o, l)| bytes[o as usize..(o + l) as usize].to_vec())
        .collect()
}

/// One record of exactly `len` bytes: marker line, name line, then filler
/// lines of random printable bytes. Always ends with a newline.
pub fn random_record(rng: &mut ChaCha8Rng, name: &str, len: usize) -> Vec<u8> {
    let mut rec = Vec::with_capacity(len);
    rec.extend_from_slice(MARKER);
    rec.push(b'\n');
    rec.extend_from_slice(name.as_bytes());
    rec.push(b'\n');
    assert!(rec.len() < len, "record length {} too small", len);
    let body = len - 1 - rec.len();
    let mut buf = vec![0u8; body];
    rand::RngCore::fill_bytes(rng, &mut buf);
    for (i, b) in buf.iter_mut().enumerate() {
        // Printable bytes with a newline roughly every 60 columns.
        *b = if i % 61 == 60 { b'\n' } else { b' ' + (*b % 94) };
    }
    // Keep '@' off line starts so no fake markers appear mid-record.
    for i in 0..buf.len() {
        let at_line_start = i == 0 || buf[i - 1] == b'\n';
        if at_line_start && buf[i] == b'@' {
            buf[i] = b'a';
        }
    }
    rec.extend_from_slice(&buf);
    rec.push(b'\n');
    rec
}

/// A database of `count` records with sizes drawn log-uniformly from
/// `[min_len, max_len]`, capped at `max_total` bytes (never below 10
/// records).
pub fn random_database(
    rng: &mut ChaCha8Rng,
    count: usize,
    min_len: usize,
    max_len: usize,
    max_total: usize,
) -> Vec<u8> {
    let mut db = Vec::new();
    for i in 0..count {
        if db.len() > max_total && i >= 10 {
            break;
        }
        let log_lo = (min_len as f64).ln();
        let log_hi = (max_len as f64).ln();
        let len = rng.random_range(log_lo..=log_hi).exp() as usize;
        let len = len.clamp(min_len, max_len).max(50);
        db.extend_from_slice(&random_record(rng, &format!("mol_{}", i + 1), len));
    }
    db
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

use gridsweep::cdb::{build_index, write_index, CdbServer, ServeConfig};
use std::collections::BTreeMap;
use std::path::PathBuf;

pub const DOCK_PLAN: &str = include_str!("../../fixtures/dock.plan");
pub const DOCK_BASE: &str = include_str!("../../fixtures/dock_base");

/// A ready-to-run docking setup: home directory with staged inputs and the
/// kernel under `bin/`, a record server, and a plan pointing at it.
pub struct DockHarness {
    pub dir: tempfile::TempDir,
    pub home: PathBuf,
    pub server: CdbServer,
    pub plan_src: String,
}

pub fn dock_harness(records: usize, seed: u64) -> DockHarness {
    let dir = tempfile::tempdir().unwrap();
    let home = dir.path().join("home");
    for sub in ["parameter", "dock_inputs", "bin", "results"] {
        std::fs::create_dir_all(home.join(sub)).unwrap();
    }
    for f in ["vdw.defn", "chem.defn", "chem_score.tbl", "flex.defn", "flex_drive.tbl"] {
        std::fs::write(home.join("parameter").join(f), format!("{} parameters\n", f)).unwrap();
    }
    std::fs::write(home.join("dock_inputs/dock_base"), DOCK_BASE).unwrap();

    let kernel = home.join("bin").join(format!("dock.{}", std::env::consts::OS));
    std::fs::copy(env!("CARGO_BIN_EXE_mock_dock"), &kernel).unwrap();

    let mut rng = seeded_rng(seed);
    let db = random_database(&mut rng, records, 80, 400, 4 << 20);
    let db_path = dir.path().join("aldrich_300.db");
    let idx_path = dir.path().join("aldrich_300.idx");
    std::fs::write(&db_path, &db).unwrap();
    std::fs::write(&idx_path, write_index(&build_index(&db).unwrap()).unwrap()).unwrap();
    let mut databases = BTreeMap::new();
    databases.insert("aldrich_300.db".to_string(), (db_path, idx_path));
    let server = CdbServer::start("127.0.0.1:0", ServeConfig::new(databases)).unwrap();

    let fetch_script = format!(
        "#!/bin/sh\nexec {} fetch $CDB_SERVER:$CDB_PORT_NO ${{database_name}}.db $ligand_number\n",
        env!("CARGO_BIN_EXE_gridsweep")
    );
    std::fs::write(home.join("dock_inputs/get_molecule"), fetch_script).unwrap();

    let plan_src = DOCK_PLAN
        .replace("bezek.dstc.monash.edu.au", &server.addr().ip().to_string())
        .replace("\"5001\"", &format!("\"{}\"", server.addr().port()));

    DockHarness { dir, home, server, plan_src }
}
