use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Command, Output};

fn smpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smpc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn fixtures() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").display().to_string()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn headless_run_with_yaml_config() {
    let out = smpc(&["-cp", &fixtures(), "-cn", "example", "--headless", "--duration", "1", "--threads", "2"]);
    let stdout = text(&out.stdout);
    assert!(out.status.success(), "stderr: {}", text(&out.stderr));
    assert!(stdout.contains("running headless"));
    assert!(stdout.contains("task: my_task, optimizer: ps"));
    let updates: u64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("stopped after "))
        .and_then(|l| l.split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .expect("summary line");
    assert!(updates > 0);
}

#[test]
fn serves_websocket_and_prints_url() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = smpc(&["--port", &port.to_string(), "--duration", "0.5", "--threads", "1"]);
    assert!(out.status.success(), "stderr: {}", text(&out.stderr));
    assert!(text(&out.stdout).contains(&format!("ws://127.0.0.1:{port}")));
}

#[test]
fn unknown_yaml_key_fails_with_one_line() {
    let out = smpc(&["-cp", &fixtures(), "-cn", "typo", "--headless", "--duration", "0.1"]);
    assert!(!out.status.success());
    let stderr = text(&out.stderr);
    assert_eq!(stderr.trim().lines().count(), 1, "{stderr}");
    assert!(stderr.contains("controler_config_overrides"));
}

#[test]
fn missing_config_fails() {
    let out = smpc(&["-cp", &fixtures(), "-cn", "absent", "--headless", "--duration", "0.1"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("absent"));
}

#[test]
fn port_in_use_fails() {
    let held = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let out = smpc(&["--port", &port, "--duration", "0.1"]);
    assert!(!out.status.success());
    assert_eq!(text(&out.stderr).trim().lines().count(), 1);
}

#[test]
fn bench_csv() {
    let out = smpc(&["bench", "--optimizer", "ps,mppi", "--threads", "1", "--iters", "10", "--csv"]);
    assert!(out.status.success(), "stderr: {}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "task,optimizer,threads,num_rollouts,horizon_s,mean_ms,std_ms,rollouts_per_s");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("cartpole,ps,1,32,0.75,"));
    assert!(lines[2].starts_with("cartpole,mppi,1,32,0.75,"));
}

#[test]
fn bench_table_and_errors() {
    let out = smpc(&["bench", "--task", "double_integrator", "--threads", "2", "--iters", "10"]);
    assert!(out.status.success());
    assert!(text(&out.stdout).contains("±"));

    let out = smpc(&["bench", "--iters", "5"]);
    assert!(!out.status.success());
    let out = smpc(&["bench", "--task", "nope", "--iters", "10"]);
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("nope"));
}
