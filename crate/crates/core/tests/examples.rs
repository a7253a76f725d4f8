//! Every example under `examples/` runs to completion.

use std::path::PathBuf;
use std::process::Command;

fn examples_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(|deps| deps.parent()).unwrap().join("examples")
}

#[test]
fn all_examples_run() {
    let sources = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples");
    let mut names: Vec<String> = std::fs::read_dir(&sources)
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            if p.extension()? != "rs" {
                return None;
            }
            Some(p.file_stem()?.to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    assert!(names.len() >= 10);

    let dir = examples_dir();
    if names.iter().any(|n| !dir.join(n).exists()) {
        // Only a subset of targets was built; build the examples in this profile.
        let mut cmd = Command::new(env!("CARGO"));
        cmd.args(["build", "--examples", "-p", env!("CARGO_PKG_NAME")]);
        if dir.parent().and_then(|p| p.file_name()).is_some_and(|n| n == "release") {
            cmd.arg("--release");
        }
        assert!(cmd.status().unwrap().success());
    }
    for name in &names {
        let out = Command::new(dir.join(name)).output().unwrap();
        assert!(
            out.status.success(),
            "example {name} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stdout.is_empty(), "example {name} printed nothing");
    }
}
