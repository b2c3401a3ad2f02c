//! Reference subprocess evaluator.
//!
//! Speaks the one-line JSON protocol: reads a single request object from
//! stdin, writes a single response object to stdout, exits. Objective values
//! are a deterministic hash of the architecture string, so any driver can
//! check round trips bit-for-bit. Failure modes for driver testing are
//! switchable from the command line.
//!
//!   archopt-ref-eval [--sleep-ms N] [--mode MODE] [--flaky-marker PATH]
//!
//! Modes: normal (default), malformed, nan, mismatch, fail.
//! With --flaky-marker, the first invocation (marker absent) responds with
//! garbage and creates the marker; later invocations respond normally.

use std::collections::BTreeMap;
use std::io::Read;

use archopt::oracle::{WireRequest, WireResponse};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn hash_value(arch: &str, objective: &str) -> f64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in arch.bytes().chain(b"::".iter().copied()).chain(objective.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let unit = (splitmix64(h) >> 11) as f64 / (1u64 << 53) as f64;
    (unit * 100.0 * 1e9).round() / 1e9
}

fn main() {
    let mut sleep_ms: u64 = 0;
    let mut mode = String::from("normal");
    let mut flaky_marker: Option<String> = None;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--sleep-ms" => sleep_ms = args.next().and_then(|v| v.parse().ok()).unwrap_or(0),
            "--mode" => mode = args.next().unwrap_or_default(),
            "--flaky-marker" => flaky_marker = args.next(),
            other => {
                eprintln!("unknown argument `{other}`");
                std::process::exit(2);
            }
        }
    }

    let mut input = String::new();
    if std::io::stdin().read_to_string(&mut input).is_err() {
        std::process::exit(2);
    }
    let line = input.lines().next().unwrap_or("");
    let request: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("bad request: {e}");
            std::process::exit(2);
        }
    };

    if sleep_ms > 0 {
        std::thread::sleep(std::time::Duration::from_millis(sleep_ms));
    }

    if let Some(marker) = &flaky_marker {
        if !std::path::Path::new(marker).exists() {
            let _ = std::fs::write(marker, "seen");
            println!("this is not json");
            return;
        }
    }

    match mode.as_str() {
        "malformed" => {
            println!("{{\"oops\": tru");
        }
        "nan" => {
            // Hand-built payload: JSON has no NaN literal, so emit a token
            // the driver must reject.
            println!(
                "{{\"request_id\":\"{}\",\"values\":{{\"tafid\":null}}}}",
                request.request_id
            );
        }
        "mismatch" => {
            let mut values = BTreeMap::new();
            values.insert("tafid".to_owned(), 1.0);
            let response = WireResponse {
                request_id: format!("{}-wrong", request.request_id),
                values,
            };
            println!("{}", serde_json::to_string(&response).unwrap());
        }
        "fail" => {
            eprintln!("synthetic evaluator failure");
            std::process::exit(7);
        }
        _ => {
            let mut values = BTreeMap::new();
            for objective in &request.objectives_requested {
                values.insert(objective.clone(), hash_value(&request.arch, objective));
            }
            let response = WireResponse {
                request_id: request.request_id,
                values,
            };
            println!("{}", serde_json::to_string(&response).unwrap());
        }
    }
}
