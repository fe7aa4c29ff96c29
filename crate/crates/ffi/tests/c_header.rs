//! Compiles a C program against the generated header and runs it.

use std::path::PathBuf;
use std::process::Command;

#[test]
fn c_program_links_against_the_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(|deps| deps.parent()).unwrap().to_path_buf();
    if !lib_dir.join("libdelib_ffi.so").exists() && !lib_dir.join("libdelib_ffi.dylib").exists() {
        eprintln!("shared library not found in {}; skipping", lib_dir.display());
        return;
    }
    let out_dir = tempfile::tempdir().unwrap();
    let bin = out_dir.path().join("smoke");
    let compiled = Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-ldelib_ffi")
        .arg("-o")
        .arg(&bin)
        .status();
    let Ok(status) = compiled else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success(), "C compile failed");
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "smoke exited with {:?}", run.status.code());
    assert_eq!(String::from_utf8(run.stdout).unwrap().trim(), format!("{} 1", env!("CARGO_PKG_VERSION")));
}
