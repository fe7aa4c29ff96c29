//! Source-level layering checks. Only the gateway may open outbound
//! connections; only the HTTP surface and the binary may listen; the
//! analytic modules stay synchronous and I/O free.

use std::path::{Path, PathBuf};

const SRC: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/src");

fn sources(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            sources(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs") {
            out.push(path);
        }
    }
}

/// Non-test source files, relative to src/, containing any of `needles`.
/// Line comments are ignored.
fn offenders(needles: &[&str], allowed: impl Fn(&str) -> bool) -> Vec<String> {
    let mut files = Vec::new();
    sources(Path::new(SRC), &mut files);
    let mut out = Vec::new();
    for f in files {
        let rel = f.strip_prefix(SRC).unwrap().to_string_lossy().replace('\\', "/");
        if allowed(&rel) || rel.ends_with("tests.rs") {
            continue;
        }
        let text = std::fs::read_to_string(&f).unwrap();
        for (i, line) in text.lines().enumerate() {
            let code = line.split("//").next().unwrap();
            if let Some(n) = needles.iter().find(|n| code.contains(*n)) {
                out.push(format!("{rel}:{}: {n}", i + 1));
            }
        }
    }
    out
}

#[test]
fn outbound_network_only_in_the_gateway() {
    let bad = offenders(&["ureq", "reqwest", "TcpStream", "UdpSocket", "hyper::client"], |f| f.starts_with("gateway/"));
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn listening_only_in_the_http_surface() {
    let bad = offenders(&["TcpListener", "axum"], |f| f == "service/http.rs" || f == "main.rs");
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn analytic_modules_have_no_runtime_or_file_io() {
    let analytic = ["graph", "import", "insight", "distill", "reflection", "transcript", "text"];
    let bad = offenders(&["tokio", "std::fs", "std::net", "std::env"], |f| !analytic.iter().any(|m| f.starts_with(&format!("{m}/")) || f == format!("{m}.rs")));
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn secrets_come_from_the_environment_only() {
    // token values are resolved from variable names; nothing else reads env
    let bad = offenders(&["env::var"], |f| f == "service/auth.rs" || f == "service/config.rs" || f == "gateway/mod.rs" || f == "main.rs");
    assert!(bad.is_empty(), "{bad:#?}");
}
