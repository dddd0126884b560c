use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use vmrec_cli::{main_with, Cli};

/// 160 users over 120 items in four taste groups, one event per second.
fn write_dataset(dir: &Path) -> PathBuf {
    let mut lines = String::new();
    let mut t = 0i64;
    for u in 0..160u64 {
        let group = u % 4;
        let len = 6 + (u * 7 % 9) as usize;
        for j in 0..len {
            // mostly in-group items, ordered so early items repeat across users
            let item = if j % 5 == 4 {
                (u * 13 + j as u64) % 120
            } else {
                group * 30 + (j as u64 * 3 + u / 4 % 3) % 30
            };
            t += 1;
            lines.push_str(&format!("{u}\t{item}\t{}\n", 1_000 + u as i64 * 500 + t % 97));
        }
    }
    let path = dir.join("events.tsv");
    fs::write(&path, lines).unwrap();
    path
}

fn write_config(dir: &Path, data: &Path, out: &str) -> PathBuf {
    let cfg = format!(
        "[run]\nseed = 11\nout = \"{out}\"\n\
         [data]\npath = \"{}\"\n\
         [base.train]\ndim = 8\nepochs = 5\nbatch_size = 256\nlearning_rate = 0.01\n\
         [mapper]\nlr_grid = [0.01]\nmax_epochs = 2\nheads = 2\nattn_width = 8\nhidden = 16\nval_negatives = 20\n\
         [eval]\nks = [1, 2]\nnegatives = 20\n\
         [ablate]\nkind = \"gaussian\"\n\
         [diagnose]\nbetas = [1e-10, 1e-2]\nproportions = [0.5]\n",
        data.display()
    );
    let path = dir.join("run.toml");
    fs::write(&path, cfg).unwrap();
    path
}

fn vmrec(args: &[&str]) -> anyhow::Result<String> {
    let mut all = vec!["vmrec"];
    all.extend_from_slice(args);
    main_with(&Cli::try_parse_from(all).unwrap())
}

fn pipeline(config: &Path) {
    let c = config.to_str().unwrap();
    vmrec(&["prepare", "--config", c]).unwrap();
    vmrec(&["train-base", "--config", c]).unwrap();
    vmrec(&["train-mapper", "--config", c]).unwrap();
    let table = vmrec(&["evaluate", "--config", c]).unwrap();
    assert!(table.contains("vmrec-deterministic"), "{table}");
    assert!(table.contains("1-shot") && table.contains("2-shot"), "{table}");
}

fn primary_outputs(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.json" {
                files.push((
                    p.strip_prefix(out).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    pipeline(&write_config(dir.path(), &data, "a"));
    pipeline(&write_config(dir.path(), &data, "b"));
    let a = primary_outputs(&dir.path().join("a"));
    let b = primary_outputs(&dir.path().join("b"));
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    for expected in [
        "base/bpr/users.vmeb",
        "base/bpr/items.vmeb",
        "mapper/bpr/generator.vmpg",
        "split/split.json",
    ] {
        assert!(names.contains(&expected), "{names:?}");
    }
    assert!(names.iter().any(|n| n.ends_with(".records.jsonl")));
    assert_eq!(a, b);

    // same directory, second time: identical again
    let before = primary_outputs(&dir.path().join("a"));
    pipeline(&write_config(dir.path(), &data, "a"));
    assert_eq!(before, primary_outputs(&dir.path().join("a")));
}

#[test]
fn stages_refuse_missing_and_stale_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let cfg = write_config(dir.path(), &data, "out");
    let c = cfg.to_str().unwrap();
    let err = format!("{:#}", vmrec(&["train-base", "--config", c]).unwrap_err());
    assert!(err.contains("vmrec prepare"), "{err}");
    vmrec(&["prepare", "--config", c]).unwrap();
    let err = format!("{:#}", vmrec(&["train-mapper", "--config", c]).unwrap_err());
    assert!(err.contains("vmrec train-base"), "{err}");
    vmrec(&["train-base", "--config", c]).unwrap();
    // a different seed makes the base model stale
    let err = format!(
        "{:#}",
        vmrec(&["train-mapper", "--config", c, "--seed", "12"]).unwrap_err()
    );
    assert!(err.contains("stale") && err.contains("train-base"), "{err}");
    let err = format!("{:#}", vmrec(&["evaluate", "--config", c]).unwrap_err());
    assert!(err.contains("vmrec train-mapper"), "{err}");
    // baselines only need the base model
    let table = vmrec(&["evaluate", "--config", c, "--method", "random"]).unwrap();
    assert!(table.contains("random"));
}

#[test]
fn baselines_ablation_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let cfg = write_config(dir.path(), &data, "out");
    let c = cfg.to_str().unwrap();
    pipeline(&cfg);
    let out = dir.path().join("out");

    let table = vmrec(&["evaluate", "--config", c, "--method", "rm_init", "--subset", "easy"]).unwrap();
    assert!(table.contains("rm_init") && table.contains("easy"), "{table}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval/bpr/rm_init/easy/rm_init.k1.summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["abstained"], 0);
    assert_eq!(summary["subset"], "easy");

    let table = vmrec(&["ablate", "--config", c]).unwrap();
    assert!(table.contains("vmrec-spike_slab-deterministic"), "{table}");
    assert!(table.contains("vmrec-gaussian-deterministic"), "{table}");
    assert!(out.join("ablate/bpr/gaussian/generator.vmpg").exists());

    let report: serde_json::Value = serde_json::from_str(&vmrec(&["diagnose", "--config", c]).unwrap()).unwrap();
    assert_eq!(report["clusters"]["mean_distance"].as_array().unwrap().len(), 4);
    assert_eq!(report["beta_sweep"].as_array().unwrap().len(), 2);
    assert_eq!(report["proportion_sweep"].as_array().unwrap().len(), 1);
    assert!(out.join("diagnose/bpr/diagnose.json").exists());

    let prep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("split/summary.json")).unwrap()).unwrap();
    assert_eq!(prep["users_total"], 160);
    assert!(prep["easy_fraction"]["1"].as_f64().unwrap() > 0.0);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_vmrec"))
        .args(["prepare", "--out"])
        .arg(dir.path().join("o"))
        .env("RUST_LOG", "off")
        .env("VMREC_SEED", "3")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ml-100k.tsv"), "{err}");

    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[mapper]\nbetta = 1\n").unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_vmrec"))
        .args(["config", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("betta"));

    let out = Process::new(env!("CARGO_BIN_EXE_vmrec"))
        .args(["config", "--beta", "0.5"])
        .env("VMREC_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("seed = 42") && text.contains("beta = 0.5"), "{text}");
}
