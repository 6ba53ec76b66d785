//! End-to-end runs of the `dcsnn` binary.

use std::path::Path;
use std::process::{Command, Output};

use dcsnn::harness::checkpoint;
use dcsnn::harness::config::{bars_network, load_toml, task1_config, Profile, Task1Config};
use dcsnn::plasticity::Rule;
use dcsnn::Network;

fn dcsnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcsnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bars_reports_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = dcsnn(&["bars", "--seeds", "3", "--seed", "5", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("/3 seeds solved the task"));
    let csv = std::fs::read_to_string(dir.path().join("bars.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("seed,success,iterations,converged"));
    assert!(rows[1].starts_with("5,"));
}

#[test]
fn dumped_config_round_trips_and_honours_the_seed() {
    let o = dcsnn(&["task1-train", "--dump-config", "--seed", "7"]);
    assert!(o.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t1.toml");
    std::fs::write(&path, stdout(&o)).unwrap();
    let cfg: Task1Config = load_toml(&path).unwrap();
    let mut want = task1_config(Profile::Desk);
    want.task1.seed = 7;
    assert_eq!(cfg, want);

    // The dumped file is accepted back as --config.
    let o = dcsnn(&["task1-train", "--dump-config", "--config", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), std::fs::read_to_string(&path).unwrap());
}

fn pgm_size(path: &Path) -> (usize, usize, usize) {
    let bytes = std::fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes[..bytes.len().min(20)]).into_owned();
    let mut parts = text.split_whitespace();
    assert_eq!(parts.next(), Some("P5"));
    let w: usize = parts.next().unwrap().parse().unwrap();
    let h: usize = parts.next().unwrap().parse().unwrap();
    (w, h, bytes.len())
}

#[test]
fn reconstruct_writes_one_pgm_per_map() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    let net = Network::new(bars_network(Rule::Stdp), 1).unwrap();
    checkpoint::save(&ckpt, &net, 0, None).unwrap();
    let out = dir.path().join("pgm");
    let o = dcsnn(&[
        "reconstruct",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--layer",
        "S1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for m in 0..3 {
        let (w, h, len) = pgm_size(&out.join(format!("S1_map{m:03}.pgm")));
        assert_eq!((w, h), (3, 3));
        assert_eq!(len, "P5\n3 3\n255\n".len() + 9);
    }
    assert!(!out.join("S1_map003.pgm").exists());

    let bad = dcsnn(&["reconstruct", "--checkpoint", ckpt.to_str().unwrap(), "--layer", "S7"]);
    assert!(!bad.status.success());
}

#[test]
fn missing_mnist_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcsnn(&[
        "task1-eval",
        "--mnist-dir",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("mnist"));
}
