use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pulsectl::output::{CsvTable, HASH_PREFIX};
use pulsectl::ExperimentConfig;
use pulsectl_agents::{Checkpoint, TensorData};

const TINY: &str = r#"
seed = 7
[dr]
kind = "doraemon"
updates = 4
min_episodes = 2
[agent]
kind = "mini-sac"
hidden = [16, 16]
batch_size = 16
warmup_steps = 40
replay_capacity = 1000
[train]
total_steps = 100
checkpoint_interval = 50
[eval]
episodes = 4
"#;

fn pulsectl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pulsectl")).args(args).env("RUST_LOG", "warn").output().expect("spawn pulsectl")
}

fn ok(args: &[&str]) {
    let out = pulsectl(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(args: &[&str]) -> i32 {
    pulsectl(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Temporary directory with the tiny config written to `tiny.toml` and a
/// trained run under `run/`.
fn trained() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&run)]);
    (dir, cfg, run)
}

fn rows(path: &Path) -> CsvTable {
    CsvTable::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn train_writes_periodic_and_final_checkpoints() {
    let (_d, _cfg, run) = trained();
    for name in ["ckpt_00000050.bin", "ckpt_00000100.bin", "final.bin", "train_log.csv", "config.toml"] {
        assert!(run.join(name).is_file(), "missing {name}");
    }
    let log = rows(&run.join("train_log.csv"));
    assert_eq!(log.rows.len(), 5, "100 steps at horizon 20");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (d, _cfg, run) = trained();
    let resumed = d.path().join("resumed");
    ok(&["train", "--checkpoint", s(&run.join("ckpt_00000050.bin")), "--out", s(&resumed)]);
    assert_eq!(std::fs::read(run.join("final.bin")).unwrap(), std::fs::read(resumed.join("final.bin")).unwrap());
    assert_eq!(
        std::fs::read_to_string(run.join("train_log.csv")).unwrap(),
        std::fs::read_to_string(resumed.join("train_log.csv")).unwrap()
    );
}

#[test]
fn resume_rejects_a_different_config() {
    let (d, cfg, run) = trained();
    let other = d.path().join("other.toml");
    std::fs::write(&other, TINY.replace("seed = 7", "seed = 8")).unwrap();
    let ckpt = run.join("ckpt_00000050.bin");
    assert_eq!(code(&["train", "--checkpoint", s(&ckpt), "--config", s(&other), "--out", s(&d.path().join("x"))]), 2);
    ok(&["train", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--out", s(&d.path().join("y"))]);
}

#[test]
fn curriculum_log_has_one_row_per_update() {
    let (_d, _cfg, run) = trained();
    let t = rows(&run.join("curriculum.csv"));
    assert_eq!(t.header, ["k", "a", "b", "entropy", "success_estimate", "kl", "status"]);
    assert_eq!(t.rows.len(), 4);
    for v in t.f64s("a").unwrap().into_iter().chain(t.f64s("b").unwrap()) {
        assert!(v > 0.0 && v.is_finite());
    }
}

#[test]
fn cancelling_policy_is_perfect_without_nonlinearity() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("eval");
    ok(&["eval", "--policy", "cancel", "--b", "0", "--episodes", "6", "--out", s(&out)]);
    let t = rows(&out.join("eval_summary.csv"));
    assert_eq!(t.rows.len(), 1);
    assert!(t.f64s("mean").unwrap()[0] >= 0.999);
    assert!(t.f64s("std").unwrap()[0] < 1e-3);
    for c in ["success_0.70", "success_0.75", "success_0.80"] {
        assert_eq!(t.f64s(c).unwrap(), vec![1.0], "{c}");
    }
    assert_eq!(rows(&out.join("eval_episodes.csv")).rows.len(), 6);
    assert_eq!(rows(&out.join("eval_trajectories.csv")).rows.len(), 6 * 21);
}

#[test]
fn agent_eval_reports_every_b_value() {
    let (d, _cfg, run) = trained();
    let out = d.path().join("eval");
    ok(&["eval", "--checkpoint", s(&run.join("final.bin")), "--b", "0.5,2.17,3.83", "--out", s(&out)]);
    let t = rows(&out.join("eval_summary.csv"));
    assert_eq!(t.f64s("b").unwrap(), vec![0.5, 2.17, 3.83]);
    assert_eq!(t.f64s("episodes").unwrap(), vec![4.0; 3]);
    for v in t.f64s("mean").unwrap() {
        assert!((0.0..=1.0).contains(&v));
    }

    // The summary is recomputable from the per-episode rows.
    let eps = rows(&out.join("eval_episodes.csv"));
    let (eb, em) = (eps.f64s("b").unwrap(), eps.f64s("max_ratio").unwrap());
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    for (k, b) in t.f64s("b").unwrap().into_iter().enumerate() {
        let v: Vec<f64> = eb.iter().zip(&em).filter(|(x, _)| **x == b).map(|(_, m)| *m).collect();
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(close(t.f64s("mean").unwrap()[k], mean));
        assert!(close(t.f64s("std").unwrap()[k], std));
        assert_eq!(t.f64s("max").unwrap()[k], v.iter().cloned().fold(0.0, f64::max));
        assert_eq!(t.f64s("min").unwrap()[k], v.iter().cloned().fold(1.0, f64::min));
        let rate = v.iter().filter(|&&x| x >= 0.75).count() as f64 / n;
        assert_eq!(t.f64s("success_0.75").unwrap()[k], rate);
    }
}

#[test]
fn sweep_rows_follow_the_b_grid() {
    let (d, _cfg, run) = trained();
    let out = d.path().join("sweep");
    let bs: Vec<String> = (0..10).map(|i| format!("{}", 0.4 * i as f64)).collect();
    ok(&["sweep-b", "--checkpoint", s(&run.join("final.bin")), "--b", &bs.join(","), "--out", s(&out)]);
    let t = rows(&out.join("sweep_b.csv"));
    assert_eq!(t.header, ["b", "mean", "std"]);
    let b = t.f64s("b").unwrap();
    assert_eq!(b.len(), 10);
    assert!(b.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn default_sweep_spans_the_configured_grid() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("sweep");
    ok(&["sweep-b", "--policy", "cancel", "--episodes", "3", "--out", s(&out)]);
    let t = rows(&out.join("sweep_b.csv"));
    let (b, mean) = (t.f64s("b").unwrap(), t.f64s("mean").unwrap());
    assert_eq!((b[0], *b.last().unwrap(), b.len()), (0.0, 4.0, 17));
    assert!(mean[0] >= 0.999 && mean[16] < mean[0], "{mean:?}");
}

#[test]
fn compare_bo_contrasts_step_bounds() {
    let (d, _cfg, run) = trained();
    let out = d.path().join("cmp");
    ok(&["compare-bo", "--checkpoint", s(&run.join("final.bin")), "--out", s(&out)]);
    let t = rows(&out.join("compare_bo.csv"));
    assert_eq!(t.rows.len(), 40);
    let (m, w) = (t.column("method").unwrap(), t.column("within_step_bound").unwrap());
    let rl: Vec<&Vec<String>> = t.rows.iter().filter(|r| r[m] == "rl").collect();
    let bo: Vec<&Vec<String>> = t.rows.iter().filter(|r| r[m] == "bo").collect();
    assert_eq!((rl.len(), bo.len()), (20, 20));
    assert!(rl.iter().all(|r| r[w] == "1"));
    assert!(bo.iter().any(|r| r[w] == "0"));
}

#[test]
fn render_writes_one_frame_per_step() {
    let (d, _cfg, run) = trained();
    let ckpt = run.join("final.bin");
    let out = d.path().join("render");
    ok(&["render", "--checkpoint", s(&ckpt), "--b", "1.5", "--out", s(&out)]);
    for t in 1..=20 {
        let p = out.join(format!("step_{t:03}.png"));
        let (w, h, px) = pulsectl_core::frog::read_png(&p).unwrap();
        assert_eq!((w, h, px.len()), (64, 64, 64 * 64), "{}", p.display());
    }
    assert!(!out.join("step_000.png").exists() && !out.join("step_021.png").exists());
    let metrics = rows(&out.join("metrics.csv"));
    let reward = *metrics.f64s("reward").unwrap().last().unwrap();

    let ev = d.path().join("eval");
    ok(&["eval", "--checkpoint", s(&ckpt), "--b", "1.5", "--episodes", "1", "--out", s(&ev)]);
    let eps = rows(&ev.join("eval_episodes.csv"));
    assert_eq!(eps.f64s("final_ratio").unwrap()[0], reward);
}

#[test]
fn render_of_a_fixed_setting_writes_a_single_frame() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("psi.toml");
    std::fs::write(&cfg, "[render]\nb = 0.0\npsi = [2.0e5, -1.0e6, -2.0e6]\n").unwrap();
    let out = d.path().join("frame");
    ok(&["render", "--config", s(&cfg), "--out", s(&out)]);
    assert!(out.join("step_000.png").is_file());
    assert_eq!(rows(&out.join("metrics.csv")).rows.len(), 1);
}

#[test]
fn baselines_write_histories() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("b.toml");
    std::fs::write(&cfg, "[baseline]\nbo_budget = 15\ngrid_resolution = 10\n[baseline.bo]\ninit_points = 5\n").unwrap();
    let g = d.path().join("grid");
    ok(&["baseline-grid", "--config", s(&cfg), "--b", "0", "--out", s(&g)]);
    assert_eq!(rows(&g.join("grid_evaluations.csv")).rows.len(), 30);
    assert_eq!(rows(&g.join("grid_best.csv")).rows.len(), 1);
    let b = d.path().join("bo");
    ok(&["baseline-bo", "--config", s(&cfg), "--out", s(&b)]);
    let h = rows(&b.join("bo_history.csv"));
    assert_eq!(h.rows.len(), 15);
    let best = h.f64s("best_so_far").unwrap();
    assert!(best.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn outputs_carry_the_config_hash_and_reruns_are_identical() {
    let (d, cfg, run) = trained();
    let again = d.path().join("again");
    ok(&["train", "--config", s(&cfg), "--out", s(&again)]);
    let stored = ExperimentConfig::load(&run.join("config.toml")).unwrap();
    for name in ["train_log.csv", "curriculum.csv", "final.bin", "ckpt_00000050.bin"] {
        assert_eq!(std::fs::read(run.join(name)).unwrap(), std::fs::read(again.join(name)).unwrap(), "{name}");
    }
    for name in ["train_log.csv", "curriculum.csv"] {
        let text = std::fs::read_to_string(run.join(name)).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, format!("{HASH_PREFIX}{}", stored.hash()));
    }
    let e1 = d.path().join("e1");
    let e2 = d.path().join("e2");
    for e in [&e1, &e2] {
        ok(&["eval", "--checkpoint", s(&run.join("final.bin")), "--out", s(e)]);
    }
    for name in ["eval_summary.csv", "eval_episodes.csv", "eval_trajectories.csv"] {
        let a = std::fs::read(e1.join(name)).unwrap();
        assert_eq!(a, std::fs::read(e2.join(name)).unwrap(), "{name}");
        assert!(a.starts_with(HASH_PREFIX.as_bytes()));
    }
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let (d, _cfg, run) = trained();
    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, "[env]\nalpha = -1.0\n").unwrap();
    assert_eq!(code(&["eval", "--config", s(&bad), "--policy", "cancel"]), 2);
    assert_eq!(code(&["eval", "--policy", "agent"]), 2);
    assert_eq!(code(&["eval", "--policy", "cancel", "--b", "-1"]), 2);

    let mut ckpt = Checkpoint::read(&run.join("final.bin")).unwrap();
    for (name, t) in ckpt.tensors.iter_mut() {
        if name.starts_with("agent.actor.") {
            if let TensorData::F64(v) = &mut t.data {
                v.iter_mut().for_each(|x| *x = f64::NAN);
            }
        }
    }
    let nan = d.path().join("nan.bin");
    ckpt.write_atomic(&nan).unwrap();
    assert_eq!(code(&["eval", "--checkpoint", s(&nan), "--out", s(&d.path().join("n"))]), 3);

    let blocker = d.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    assert_eq!(code(&["eval", "--policy", "cancel", "--out", s(&blocker.join("sub"))]), 4);
    assert_eq!(code(&["eval", "--checkpoint", s(&d.path().join("missing.bin"))]), 4);
}

#[test]
#[ignore = "with the default compressor the chain ratio at -psi_c rises again for B above about 3.1"]
fn cancelling_policy_degrades_monotonically_with_b() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("sweep");
    ok(&["sweep-b", "--policy", "cancel", "--episodes", "3", "--out", s(&out)]);
    let mean = rows(&out.join("sweep_b.csv")).f64s("mean").unwrap();
    assert!(mean.windows(2).all(|w| w[1] <= w[0]), "{mean:?}");
}
