use std::process::Command;

use wormscreen_pipeline::config::PipelineConfig;
use wormscreen_pipeline::record::read_log;

fn wormscreen(ws: &std::path::Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_wormscreen"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn config_overrides_show_in_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = wormscreen(dir.path(), &["--set", "segmenter.boost.rounds=12", "config"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = PipelineConfig::from_toml(&String::from_utf8(out.stdout).unwrap(), &[]).unwrap();
    assert_eq!(cfg.segmenter.boost.rounds, 12);
}

#[test]
fn synth_then_missing_model_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let set = ["--set", "synth.wells=2", "--set", "synth.base.width=96", "--set", "synth.base.height=80", "--set", "synth.base.worm_count=1", "--set", "synth.base.worm_length=[40.0, 50.0]"];
    let mut args = set.to_vec();
    args.push("synth");
    let out = wormscreen(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("plate").join("manifest.csv").exists());

    let out = wormscreen(dir.path(), &["segment"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("segmenter"));

    let log = read_log(&dir.path().join("runs.jsonl")).unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[0].command, "synth");
    assert_eq!(log[0].status, "ok");
    assert!(log[1].status.starts_with("error"));
}
