//! Desk-scale stand-in for the docking kernel.
//!
//! Invoked as `mock_dock -i <config> -o <outfile>`. Reads the molecule file
//! named by `ligand_atom_file` in the config, checks it carries the MOL2
//! record marker, works for `MOCK_DOCK_SECONDS` (default 1), then writes
//! the outfile (echoed config plus a deterministic `SCORE` line) and the
//! three ligand output files named in the config.
//!
//! Exit codes: 0 ok, 1 unusable arguments or config, 2 missing or invalid
//! molecule file.

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::time::Duration;

const MARKER: &[u8] = b"@<TRIPOS>MOLECULE";

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (config_path, out_path) = match parse_args(&args) {
        Some(paths) => paths,
        None => {
            eprintln!("usage: mock_dock -i <config> -o <outfile>");
            return 1;
        }
    };

    let config_text = match std::fs::read_to_string(&config_path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("mock_dock: cannot read config {}: {}", config_path, e);
            return 1;
        }
    };
    let fields = parse_config(&config_text);
    let ligand_file = match fields.get("ligand_atom_file") {
        Some(f) => f.clone(),
        None => {
            eprintln!("mock_dock: config has no ligand_atom_file");
            return 1;
        }
    };

    let molecule = match std::fs::read(&ligand_file) {
        Ok(bytes) => bytes,
        Err(e) => {
            eprintln!("mock_dock: missing molecule file {}: {}", ligand_file, e);
            return 2;
        }
    };
    if !molecule.starts_with(MARKER) {
        eprintln!("mock_dock: {} does not start with the MOL2 record marker", ligand_file);
        return 2;
    }

    let seconds: f64 = std::env::var("MOCK_DOCK_SECONDS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1.0);
    if seconds > 0.0 {
        std::thread::sleep(Duration::from_secs_f64(seconds));
    }

    let score = hex::encode(Sha256::digest(&molecule));
    let mut out = config_text.clone();
    if !out.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&format!("SCORE {}\n", score));
    if let Err(e) = std::fs::write(&out_path, out) {
        eprintln!("mock_dock: cannot write {}: {}", out_path, e);
        return 1;
    }

    for key in ["ligand_contact_file", "ligand_chemical_file", "ligand_energy_file"] {
        let name = fields.get(key).cloned().unwrap_or_else(|| default_output(key));
        let body = format!(
            "{}\n{}\nsource {}\nscore {}\n",
            String::from_utf8_lossy(MARKER),
            key,
            ligand_file,
            score
        );
        if let Err(e) = std::fs::write(&name, body) {
            eprintln!("mock_dock: cannot write {}: {}", name, e);
            return 1;
        }
    }
    0
}

fn parse_args(args: &[String]) -> Option<(String, String)> {
    let mut config = None;
    let mut out = None;
    let mut i = 0;
    while i < args.len() {
        match args[i].as_str() {
            "-i" => {
                config = Some(args.get(i + 1)?.clone());
                i += 2;
            }
            "-o" => {
                out = Some(args.get(i + 1)?.clone());
                i += 2;
            }
            _ => return None,
        }
    }
    Some((config?, out?))
}

/// Key/value config lines; first whitespace splits key from the rest.
fn parse_config(text: &str) -> BTreeMap<String, String> {
    let mut fields = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some((key, value)) = line.split_once(char::is_whitespace) {
            fields.insert(key.to_string(), value.trim().to_string());
        }
    }
    fields
}

fn default_output(key: &str) -> String {
    match key {
        "ligand_contact_file" => "dock_cnt.mol2".to_string(),
        "ligand_chemical_file" => "dock_chm.mol2".to_string(),
        _ => "dock_nrg.mol2".to_string(),
    }
}
