#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const NOW: &str = "2016-03-01T09:00:00Z";

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/store")
}

pub fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &dest);
        } else {
            fs::copy(entry.path(), dest).unwrap();
        }
    }
}

/// A scratch copy of the fixture store.
pub fn fixture_store() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("store");
    copy_dir(&fixture_dir(), &root);
    (tmp, root)
}

/// `aiq` with a clean environment apart from `AIQ_NOW`.
pub fn aiq(store: &Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_aiq"));
    cmd.env_remove("AIQ_STORE")
        .env_remove("AIQ_PORT")
        .env_remove("AIQ_HTTP_TIMEOUT_MS")
        .env("AIQ_NOW", NOW)
        .arg("--store")
        .arg(store);
    cmd
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Subprocess adapter that answers every item with `x`.
pub const ECHO_X: &str = r#"{"kind":"Subprocess","command":"sh","args":["-c","read l; echo x"]}"#;

/// Starts and runs a reference-battery session for `Google` through the CLI.
/// Every machine item is scored; the human-rubric items stay pending.
pub fn awaiting_session(store: &Path) -> String {
    let out = aiq(store)
        .args([
            "session",
            "start",
            "--battery",
            "reference",
            "--subject",
            "Google",
            "--adapter",
            ECHO_X,
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let id = stdout(&out).trim().to_string();
    let out = aiq(store).args(["session", "run", &id]).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("AwaitingGrades"), "{}", stdout(&out));
    id
}

pub const RUBRIC_ITEMS: [&str; 5] = [
    "cr-assoc-2",
    "cr-pattern-3",
    "cr-imagine-2",
    "cr-invent-1",
    "cr-story-1",
];
