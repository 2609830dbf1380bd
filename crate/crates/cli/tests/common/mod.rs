//! Helpers for driving the `trilogy` binary from tests.

#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trilogy")
}

/// Runs one command to completion with an isolated config lookup.
pub fn trilogy(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("TRILOGY_CONFIG")
        .stdin(Stdio::null())
        .output()
        .expect("run trilogy")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A daemon child process, killed on drop.
pub struct Daemon {
    child: Child,
    pub addr: String,
}

impl Daemon {
    /// Starts `trilogy <args>` and waits for its `listening <addr>` line.
    pub fn start(args: &[&str]) -> Daemon {
        let mut child = Command::new(bin())
            .args(args)
            .env_remove("TRILOGY_CONFIG")
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn daemon");
        let out = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut line = String::new();
            let _ = BufReader::new(out).read_line(&mut line);
            let _ = tx.send(line);
        });
        let line = match rx.recv_timeout(Duration::from_secs(20)) {
            Ok(l) => l,
            Err(_) => {
                let _ = child.kill();
                panic!("daemon {args:?} did not report its address");
            }
        };
        let Some(addr) = line.trim().strip_prefix("listening ") else {
            let _ = child.kill();
            let status = child.wait().ok();
            panic!("daemon {args:?} exited early ({status:?}): {line:?}");
        };
        Daemon {
            addr: addr.to_string(),
            child,
        }
    }

    pub fn stop(mut self) {
        self.terminate();
    }

    fn terminate(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        self.terminate();
    }
}

pub fn mediator() -> Daemon {
    Daemon::start(&["mediator", "serve", "--listen", "127.0.0.1:0"])
}

/// Polls until `check` holds or the deadline passes.
pub fn eventually(what: &str, deadline: Duration, mut check: impl FnMut() -> bool) {
    let start = Instant::now();
    while !check() {
        assert!(start.elapsed() < deadline, "timed out waiting for {what}");
        std::thread::sleep(Duration::from_millis(25));
    }
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}
