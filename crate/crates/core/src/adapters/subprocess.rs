use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use super::Reply;
use crate::battery::TestItem;

/// Prompts travel as a single line; embedded line breaks are escaped.
pub(crate) fn encode_line(prompt: &str) -> String {
    prompt
        .replace('\\', "\\\\")
        .replace('\r', "\\r")
        .replace('\n', "\\n")
}

fn spawn(command: &str, args: &[String], env: &BTreeMap<String, String>) -> std::io::Result<Child> {
    Command::new(command)
        .args(args)
        .envs(env)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
}

fn reap(mut child: Child) {
    let _ = child.kill();
    let _ = child.wait();
}

pub(super) fn exchange(
    command: &str,
    args: &[String],
    env: &BTreeMap<String, String>,
    item: &TestItem,
    timeout: Duration,
) -> Reply {
    let mut child = match spawn(command, args, env) {
        Ok(c) => c,
        Err(e) => return Reply::Failed(format!("cannot start {command:?}: {e}")),
    };
    let stdout = child.stdout.take().expect("stdout is piped");
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut line = String::new();
        let result = BufReader::new(stdout).read_line(&mut line).map(|n| (n, line));
        let _ = tx.send(result);
    });

    if let Some(mut stdin) = child.stdin.take() {
        let line = encode_line(&item.prompt.content);
        // a subject that exits without reading is reported through stdout
        let _ = writeln!(stdin, "{line}").and_then(|_| stdin.flush());
    }

    let reply = match rx.recv_timeout(timeout) {
        Ok(Ok((0, _))) => {
            let status = child
                .wait()
                .map(|s| s.to_string())
                .unwrap_or_else(|e| e.to_string());
            return Reply::Failed(format!("subject closed stdout without replying ({status})"));
        }
        Ok(Ok((_, line))) => Reply::Text(line.trim_end_matches(['\r', '\n']).to_string()),
        Ok(Err(e)) => Reply::Failed(format!("reading stdout: {e}")),
        Err(mpsc::RecvTimeoutError::Timeout) => Reply::Timeout,
        Err(mpsc::RecvTimeoutError::Disconnected) => Reply::Failed("reader thread vanished".into()),
    };
    reap(child);
    reply
}

/// Reachable iff the command can be started. The child is killed at once.
pub(super) fn probe(command: &str, args: &[String], env: &BTreeMap<String, String>) -> Result<(), String> {
    let child = spawn(command, args, env).map_err(|e| format!("cannot start {command:?}: {e}"))?;
    reap(child);
    Ok(())
}
