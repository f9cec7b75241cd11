use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csft::locate::search_rounds;
use csft::signal::{validate_separation, SignalFile};
use serde_json::Value;
use tempfile::TempDir;

fn csft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csft")).args(args).output().expect("spawn csft")
}

fn ok(args: &[&str]) -> Output {
    let out = csft(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn gen(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let out = path(dir, name);
    let mut args = vec!["gen", "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

#[test]
fn gen_is_reproducible_and_separated() {
    let dir = TempDir::new().unwrap();
    let flags = ["--k", "5", "--d", "2", "--F", "2", "--eta", "0.5", "--T", "1000", "--seed", "9", "--noise", "gaussian:0.1"];
    let a = gen(&dir, "a.json", &flags);
    let b = gen(&dir, "b.json", &flags);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let file: SignalFile = serde_json::from_str(&std::fs::read_to_string(&a).unwrap()).unwrap();
    let (signal, _) = file.into_parts().unwrap();
    assert_eq!(signal.k(), 5);
    assert!(validate_separation(&signal.tones, 0.5));
    for t in &signal.tones {
        assert!((1.0..=2.0).contains(&t.v.norm()));
    }
}

#[test]
fn gen_single_tone_and_rejections() {
    let dir = TempDir::new().unwrap();
    gen(&dir, "one.json", &["--k", "1", "--d", "3", "--F", "0.1", "--eta", "5", "--T", "10"]);
    let x = path(&dir, "x.json");
    let packed = csft(&["gen", "--k", "50", "--d", "1", "--F", "1", "--eta", "1", "--T", "10", "--out", s(&x)]);
    assert_eq!(packed.status.code(), Some(2));
    let noise = csft(&["gen", "--k", "1", "--d", "1", "--F", "1", "--eta", "1", "--T", "10", "--noise", "pink", "--out", s(&x)]);
    assert_eq!(noise.status.code(), Some(2));
}

#[test]
fn recover_planted_signal_with_sample_ceiling() {
    let dir = TempDir::new().unwrap();
    let sig = gen(&dir, "s.json", &["--k", "3", "--d", "1", "--F", "1", "--eta", "0.5", "--T", "3000", "--seed", "4"]);
    let tones = path(&dir, "t.json");
    ok(&["recover", "--signal", s(&sig), "--seed", "5", "--out", s(&tones)]);
    let metrics = path(&dir, "m.json");
    ok(&["eval", "--truth", s(&sig), "--recovered", s(&tones), "--out", s(&metrics)]);
    let m = json(&metrics);
    assert_eq!(m["matched"], 3);
    for t in m["per_tone"].as_array().unwrap() {
        assert!(t["freq_err_l2"].as_f64().unwrap() <= 1.0 / 3000.0, "{t}");
    }

    let manifest = json(&path(&dir, "t.manifest.json"));
    assert_eq!(manifest["duration_violated"], false);
    let cfg = &manifest["config_echo"];
    let n = |v: &Value| v.as_f64().unwrap();
    let (r_merge, r_vote, r_reg) = (n(&cfg["r_merge"]), n(&cfg["locate"]["r_vote"]), n(&cfg["locate"]["r_reg"]));
    let bd = n(&cfg["filter"]["B"]) * n(&cfg["filter"]["D"]);
    let rounds = search_rounds(1, 1.0, 3000.0) as f64;
    let ceiling = 2.0 * r_merge * (r_vote * rounds + r_reg + 1.0) * 2.0 * bd * 2.0;
    let samples = n(&manifest["samples"]);
    assert!(samples > 0.0 && samples <= ceiling, "{samples} vs {ceiling}");
}

#[test]
fn recover_is_deterministic_up_to_wall_time() {
    let dir = TempDir::new().unwrap();
    let sig = gen(&dir, "s.json", &["--k", "2", "--d", "1", "--F", "1", "--eta", "0.5", "--T", "2000", "--seed", "1", "--noise", "gaussian:0.05"]);
    let (a, b) = (path(&dir, "a.json"), path(&dir, "b.json"));
    ok(&["recover", "--signal", s(&sig), "--seed", "3", "--out", s(&a)]);
    ok(&["recover", "--signal", s(&sig), "--seed", "3", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let strip = |p: PathBuf| {
        let mut v = json(&p);
        v.as_object_mut().unwrap().remove("wall_time_s");
        v
    };
    assert_eq!(strip(path(&dir, "a.manifest.json")), strip(path(&dir, "b.manifest.json")));
}

#[test]
fn short_duration_needs_force() {
    let dir = TempDir::new().unwrap();
    let sig = gen(&dir, "s.json", &["--k", "1", "--d", "1", "--F", "1", "--eta", "0.5", "--T", "50"]);
    let t = path(&dir, "t.json");
    assert_eq!(csft(&["recover", "--signal", s(&sig), "--out", s(&t)]).status.code(), Some(3));
    ok(&["recover", "--signal", s(&sig), "--out", s(&t), "--force"]);
    assert_eq!(json(&t)["duration_violated"], true);
    let manifest = json(&path(&dir, "t.manifest.json"));
    assert_eq!(manifest["duration_violated"], true);
    assert!(manifest["sampled_duration"].as_f64().unwrap() > 50.0);
}

#[test]
fn invalid_recovery_flags_exit_two() {
    let dir = TempDir::new().unwrap();
    let sig = gen(&dir, "s.json", &["--k", "1", "--d", "1", "--F", "1", "--eta", "0.5", "--T", "3000"]);
    let t = path(&dir, "t.json");
    assert_eq!(csft(&["recover", "--signal", s(&sig), "--out", s(&t), "--rmerge", "0"]).status.code(), Some(2));
    assert_eq!(csft(&["recover", "--signal", s(&sig), "--out", s(&t), "--C", "10"]).status.code(), Some(2));
    assert_eq!(csft(&["recover", "--signal", s(&sig), "--out", s(&t), "--B", "3", "--profile", "desk"]).status.code(), Some(0));
    let bad = path(&dir, "bad.json");
    std::fs::write(&bad, "{").unwrap();
    assert_eq!(csft(&["recover", "--signal", s(&bad), "--out", s(&t)]).status.code(), Some(2));
}

#[test]
fn eval_of_truth_against_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let sig = gen(&dir, "s.json", &["--k", "4", "--d", "2", "--F", "2", "--eta", "0.5", "--T", "100", "--seed", "2"]);
    let m = path(&dir, "m.json");
    ok(&["eval", "--truth", s(&sig), "--recovered", s(&sig), "--out", s(&m)]);
    let v = json(&m);
    assert_eq!(v["matched"], 4);
    assert_eq!(v["tone_err_total"], 0.0);
    assert_eq!(v["signal_err"], 0.0);
    let keys = ["matched", "per_tone", "tone_err_total", "signal_err", "noise_level", "snr", "unmatched_truth"];
    let text = std::fs::read_to_string(&m).unwrap();
    let mut last = 0;
    for k in keys {
        let at = text.find(&format!("\"{k}\":")).unwrap();
        assert!(at >= last);
        last = at;
    }
}

#[test]
fn filter_dump_is_normalised() {
    let out = ok(&["filter-dump", "--domain", "freq", "--points", "11"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = text.lines();
    assert_eq!(rows.next(), Some("f,G_hat,filt_hat"));
    let centre = rows.find(|r| r.starts_with("0.0,")).unwrap();
    let g0: f64 = centre.split(',').nth(1).unwrap().parse().unwrap();
    assert!((g0 - 1.0).abs() < 1e-8);
    let time = ok(&["filter-dump", "--domain", "time", "--points", "7"]);
    assert_eq!(String::from_utf8(time.stdout).unwrap().lines().count(), 8);
}

#[test]
fn hash_stats_offset_rate() {
    let out = ok(&["hash-stats", "--d", "2", "--B", "16", "--trials", "20000", "--seed", "3"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let audits = v["audits"].as_array().unwrap();
    let off = &audits[0];
    assert_eq!(off["event"], "large_offset");
    let alpha = v["alpha"].as_f64().unwrap();
    let exact = 1.0 - (1.0 - alpha).powi(2);
    assert!((off["exact_or_bound"].as_f64().unwrap() - exact).abs() < 1e-12);
    let z = (off["empirical"].as_f64().unwrap() - exact) / off["stderr"].as_f64().unwrap();
    assert!(z.abs() < 4.0, "z = {z}");
    for a in &audits[1..] {
        assert_eq!(a["empirical"], 0.0);
    }
}
