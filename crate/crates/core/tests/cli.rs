//! End-to-end command tests driving `cli::run` in process, plus two
//! subprocess checks of the installed binary.

use ptr_core::cli::run;
use ptr_core::config::RunConfig;
use std::path::Path;

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.world.trajs_per_pair = 2;
    cfg.world.n_tasks = 2;
    cfg.world.episode_steps = 24;
    cfg.world.chunk_len = 8;
    cfg.world.chunk_stride = 8;
    cfg.world.deltas = vec![8, 12];
    cfg.model.enc_hidden = 6;
    cfg.model.d_y = 5;
    cfg.model.trunk_hidden = 6;
    cfg.model.h_dim = 4;
    cfg.model.instr_dim = 3;
    cfg.model.state_emb = 3;
    cfg.model.flow_hidden = 6;
    cfg.model.query_hidden = 5;
    cfg.tokenizer.n_tokens = 2;
    cfg.tokenizer.token_dim = 4;
    cfg.pool.queue_capacity = 32;
    cfg.pool.max_queue_draws = 8;
    cfg.train.steps = 12;
    cfg.train.nce_warmup = 4;
    cfg.train.lr_warmup = 4;
    cfg.train.segments_per_batch = 3;
    cfg.controller.log_interval = 5;
    cfg.eval.episodes = 6;
    cfg.eval.horizon_chunks = 2;
    cfg.validate().unwrap();
    cfg
}

fn write_config(cfg: &RunConfig, path: &Path) {
    std::fs::write(path, cfg.resolved_json().unwrap()).unwrap();
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn train_echoes_config_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.json");
    write_config(&tiny_config(), &cfg_path);

    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let code = run([
            "ptr",
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    for artifact in ["config.json", "metrics.csv", "summary.json", "weights.csv"] {
        assert_eq!(
            read(&out_a.join(artifact)),
            read(&out_b.join(artifact)),
            "{artifact} differs between identical runs"
        );
    }
    // the echoed config reproduces the run when loaded back
    let echoed = RunConfig::load(&out_a.join("config.json")).unwrap();
    assert_eq!(echoed.config_hash(), tiny_config().config_hash());
    let metrics = read(&out_a.join("metrics.csv"));
    assert!(metrics.starts_with("step,loss_total,"));
    assert_eq!(metrics.lines().count(), 1 + 12 / 5);
}

#[test]
fn train_seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.json");
    write_config(&tiny_config(), &cfg_path);
    let out = dir.path().join("seeded");
    let code = run([
        "ptr",
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let summary: serde_json::Value =
        serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary["seed"], 9);
}

#[test]
fn resume_completes_a_finished_run_without_changing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.json");
    write_config(&tiny_config(), &cfg_path);
    let out = dir.path().join("run");
    let base = [
        "ptr",
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    assert_eq!(run(base), 0);
    let before: Vec<String> = ["metrics.csv", "summary.json", "weights.csv"]
        .iter()
        .map(|a| read(&out.join(a)))
        .collect();

    let mut resume_args = base.to_vec();
    resume_args.push("--resume");
    assert_eq!(run(resume_args), 0);
    let after: Vec<String> = ["metrics.csv", "summary.json", "weights.csv"]
        .iter()
        .map(|a| read(&out.join(a)))
        .collect();
    assert_eq!(before, after);
}

#[test]
fn resume_refuses_a_mismatched_config_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.json");
    write_config(&tiny_config(), &cfg_path);
    let out = dir.path().join("run");
    assert_eq!(
        run([
            "ptr",
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        0
    );

    let mut other = tiny_config();
    other.train.lr *= 2.0;
    let other_path = dir.path().join("other.json");
    write_config(&other, &other_path);
    assert_eq!(
        run([
            "ptr",
            "train",
            "--config",
            other_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--resume",
        ]),
        2
    );
}

#[test]
fn missing_config_and_unknown_key_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(["ptr", "train", "--config", "/nonexistent/nope.json"]),
        2
    );
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"train": {"learning_rate_typo": 1.0}}"#).unwrap();
    assert_eq!(
        run(["ptr", "train", "--config", bad.to_str().unwrap()]),
        2
    );
}

#[test]
fn sweep_emits_one_row_per_value_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.json");
    write_config(&tiny_config(), &cfg_path);
    let out = dir.path().join("sweep");
    let code = run([
        "ptr",
        "sweep",
        "--config",
        cfg_path.to_str().unwrap(),
        "--param",
        "alpha",
        "--values",
        "0.0,0.5,1.0",
        "--seed",
        "0,1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let csv = read(&out.join("sweep.csv"));
    assert!(csv.starts_with("param,value,seed,"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2);

    assert_eq!(
        run([
            "ptr",
            "sweep",
            "--config",
            cfg_path.to_str().unwrap(),
            "--param",
            "momentum",
            "--values",
            "0.5",
            "--out",
            out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn report_pairs_runs_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("runs");
    std::fs::create_dir_all(&root).unwrap();

    // missing runs -> usage error
    assert_eq!(run(["ptr", "report", "--out", root.to_str().unwrap()]), 2);

    let mut ptr_cfg = tiny_config();
    ptr_cfg.corruption.mode = ptr_core::bench::corrupt::CorruptionMode::Combined;
    let mut sft_cfg = ptr_cfg.clone();
    sft_cfg.train.force_uniform = true;
    for (cfg, name) in [(&ptr_cfg, "ptr-s0"), (&sft_cfg, "sft-s0")] {
        let cfg_path = dir.path().join(format!("{name}.json"));
        write_config(cfg, &cfg_path);
        assert_eq!(
            run([
                "ptr",
                "train",
                "--config",
                cfg_path.to_str().unwrap(),
                "--out",
                root.join(name).to_str().unwrap(),
            ]),
            0
        );
    }

    assert_eq!(run(["ptr", "report", "--out", root.to_str().unwrap()]), 0);
    let table = read(&root.join("comparison.csv"));
    assert!(table.starts_with("seed,ptr_success,sft_success,delta"));
    assert_eq!(table.lines().count(), 2);
    let hist = read(&root.join("weights_histogram.csv"));
    assert_eq!(hist.lines().count(), 41);
    let total: u64 = hist
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert!(total > 0, "histogram counted no weights");

    assert_eq!(run(["ptr", "report", "--out", root.to_str().unwrap()]), 0);
    assert_eq!(read(&root.join("comparison.csv")), table);
    assert_eq!(read(&root.join("weights_histogram.csv")), hist);
}

#[test]
fn verify_fails_with_exit_one_when_tolerance_is_tightened_100x() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.seed = 1;
    cfg.verify.prop2_tol /= 100.0;
    let cfg_path = dir.path().join("tight.json");
    write_config(&cfg, &cfg_path);
    let code = run([
        "ptr",
        "verify",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().join("v").to_str().unwrap(),
    ]);
    assert_eq!(code, 1, "Monte Carlo noise must trip a 100x tighter tolerance");
    let report = read(&dir.path().join("v").join("verify_report.json"));
    assert!(report.contains("\"pass\": false"));
}

#[test]
fn quickstart_renders_checked_numbers_and_detects_drift() {
    let dir = tempfile::tempdir().unwrap();
    let docs = dir.path().join("docs");
    let started = std::time::Instant::now();
    assert_eq!(
        run(["ptr", "quickstart", "--out", docs.to_str().unwrap()]),
        0
    );
    assert!(
        started.elapsed().as_secs() < 180,
        "quickstart must finish inside three minutes"
    );
    let doc_path = docs.join("QUICKSTART.md");
    let doc = read(&doc_path);
    assert!(doc.contains("2.7726"), "the KL budget figure must be embedded");
    assert!(doc.contains("pass (identical parameters)"));
    assert!(!doc.contains("FAIL"));

    // unchanged output verifies cleanly; a stale document is a failure
    assert_eq!(
        run(["ptr", "quickstart", "--out", docs.to_str().unwrap()]),
        0
    );
    std::fs::write(&doc_path, doc.replace("2.7726", "2.9999")).unwrap();
    assert_eq!(
        run(["ptr", "quickstart", "--out", docs.to_str().unwrap()]),
        1
    );
}

#[test]
fn binary_maps_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_ptr");
    let help = std::process::Command::new(exe).arg("--help").output().unwrap();
    assert!(help.status.success());
    let stdout = String::from_utf8_lossy(&help.stdout);
    for sub in ["verify", "train", "sweep", "report", "quickstart"] {
        assert!(stdout.contains(sub), "--help must list `{sub}`");
    }
    let bad = std::process::Command::new(exe).arg("frobnicate").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
