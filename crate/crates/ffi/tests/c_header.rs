//! Compiles a C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libotsieve_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let out_dir = tempfile_dir();
    let exe = out_dir.join("smoke");
    let status = Command::new("cc")
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler is available as `cc`");
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "smoke program failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.starts_with("ok "), "{stdout}");
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("otsieve-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
