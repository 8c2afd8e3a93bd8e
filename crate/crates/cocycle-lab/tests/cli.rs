use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cocycle-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cocycle-lab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn scratch_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cocycle-lab-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn decompose_quarter_turn() {
    let o = run(&["decompose", "--l1", "1000", "--l2", "1000", "--phi", "1.5707963267948966"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let head = text.lines().next().unwrap();
    assert!(head.starts_with("# {"));
    let meta: serde_json::Value = serde_json::from_str(&head[2..]).unwrap();
    assert_eq!(meta["command"], "decompose");
    assert_eq!(meta["config_sha256"].as_str().unwrap().len(), 64);
    let rows = data_rows(&text);
    let mu: f64 = rows[0][2].parse().unwrap();
    let chi: f64 = rows[0][1].parse().unwrap();
    assert!((mu - 1.0).abs() < 1e-9 && chi.abs() < 1e-9);
}

#[test]
fn rotation_cf_is_fibonacci() {
    let o = run(&["rotation", "cf", "--depth", "20"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = data_rows(&stdout(&o));
    let q: Vec<u64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(q.len(), 20);
    for i in 2..q.len() {
        assert_eq!(q[i], q[i - 1] + q[i - 2]);
    }
}

#[test]
fn collisions_table_default_model() {
    let o = run(&["collisions"]);
    assert_eq!(o.status.code(), Some(0));
    let rows = data_rows(&stdout(&o));
    let tau01 = rows.iter().find(|r| r[0] == "0" && r[1] == "1").unwrap();
    assert_eq!(tau01[2], "1");
}

#[test]
fn usage_and_refusal_exit_codes() {
    assert_eq!(run(&[]).status.code(), Some(64));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(64));
    assert_eq!(run(&["validate-lemma", "9"]).status.code(), Some(2));
    assert_eq!(run(&["validate-lemma", "3", "--l1", "10", "--l2", "10"]).status.code(), Some(2));
    assert_eq!(run(&["decompose", "--l1", "0.5", "--l2", "10", "--phi", "1"]).status.code(), Some(2));
}

#[test]
fn seeded_runs_are_identical() {
    let args = ["--seed", "7", "decompose", "--l1", "10", "--l2", "20", "--phi", "0.3", "--samples", "50"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn resonance_scan_writes_window() {
    let dir = scratch_dir("scan");
    let o = run(&["resonance-scan", "--grid", "2048", "--steps", "0", "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("resonance_window.json")).unwrap()).unwrap();
    let w = &json["report"];
    let t_res = w["t_res"].as_f64().unwrap();
    assert!(t_res.abs() < 0.1);
    assert!(w["h"].as_f64().unwrap() > 0.0);
    assert!(dir.join("resonance_scan.csv").exists());
    let _ = std::fs::remove_dir_all(&dir);
}
