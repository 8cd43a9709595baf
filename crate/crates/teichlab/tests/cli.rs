use std::path::PathBuf;
use std::process::Command;

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("teichlab-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(args: &[&str], out: &PathBuf) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_teichlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

#[test]
fn exit_codes() {
    let d = scratch("codes");
    assert_eq!(run(&["tt-dilatation"], &d.join("ok")), 0);
    assert_eq!(run(&["cross-ratio"], &d.join("fail")), 2);
    assert_eq!(run(&["orbit-count", "--budget", "5"], &d.join("trunc")), 3);
    let report = std::fs::read_to_string(d.join("trunc/report.json")).unwrap();
    assert!(report.contains("\"truncated\": true"));
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn config_file_and_reproducible_output() {
    let d = scratch("config");
    std::fs::create_dir_all(&d).unwrap();
    let cfg = d.join("cfg.json");
    std::fs::write(&cfg, r#"{"radius_ladder": [2, 4, 6, 8, 10], "samples": 4096}"#).unwrap();
    let c = cfg.to_str().unwrap();
    let codes: Vec<i32> = ["a", "b"]
        .iter()
        .map(|t| run(&["mixing", "--config", c, "--seed", "3"], &d.join(t)))
        .collect();
    assert_eq!(codes[0], codes[1]);
    assert_ne!(codes[0], 3);
    let read = |t: &str, f: &str| std::fs::read(d.join(t).join(f)).unwrap();
    assert_eq!(read("a", "report.json"), read("b", "report.json"));
    assert_eq!(read("a", "mixing.csv"), read("b", "mixing.csv"));
    std::fs::write(&cfg, r#"{"radius_ladder": [3, 2]}"#).unwrap();
    assert_eq!(run(&["exponent", "--config", c], &d.join("bad")), 1);
    std::fs::remove_dir_all(&d).unwrap();
}
