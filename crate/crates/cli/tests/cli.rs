use std::process::Command;

fn hssp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hssp"))
}

#[test]
fn gen_then_attack_instance() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    let report = dir.path().join("report.json");
    let st = hssp()
        .args(["gen", "--rows", "120", "--batch", "6", "--dim", "12", "--seed", "4", "--out"])
        .arg(&inst)
        .status()
        .unwrap();
    assert!(st.success());
    let st = hssp().args(["attack", "--instance"]).arg(&inst).arg("--report").arg(&report).status().unwrap();
    assert!(st.success());
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["success"], true);
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"data":{"kind":"synthetic","samples":100,"classes":5,"seed":1},"layer_sizes":[20,40,5],"trials":2}"#,
    )
    .unwrap();
    let out = dir.path().join("sweep.csv");
    let st = hssp()
        .args(["bench", "--sweep", "b", "--values", "2,3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("param,mean_runtime_ms,success_rate,trials"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn invalid_config_exits_nonzero() {
    let out = hssp().args(["attack", "--batch", "0"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
