use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seeds = [0, 1]
[model]
d_model = 16
n_layers = 1
n_heads = 2
n_z = 4
d_z = 4
dropout = 0.1
[train]
batch_size = 32
epochs = 2
lr = 1e-3
[corpus]
n_train = 120
n_test = 30
[eval]
t_dec = 12
ppl_samples = 2
"#;

fn advae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advae"))
        .args(args)
        .arg("--run-dir")
        .arg(dir)
        .env_remove("ADVAE_RUN_ROOT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn advae")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = advae(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn tiny_run() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.toml"), TINY).unwrap();
    dir
}

const PIPELINE: [&str; 9] = [
    "gen-corpus",
    "train",
    "perturb",
    "annotate",
    "eval-dec",
    "eval-enc",
    "eval-struct",
    "pb",
    "ppl",
];

/// Run-level commands take no seed.
fn seeded<'a>(cmd: &'a str, seed: &'a str) -> Vec<&'a str> {
    match cmd {
        "gen-corpus" | "pb" => vec![cmd],
        _ => vec![cmd, "--seed", seed],
    }
}

#[test]
fn unknown_subcommand_exits_with_usage() {
    let out = Command::new(env!("CARGO_BIN_EXE_advae")).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn end_to_end_on_synthetic_corpus() {
    let run = tiny_run();
    let d = run.path();
    for cmd in PIPELINE {
        ok(d, &[cmd]);
    }
    let table = ok(d, &["report"]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4, "{table}");
    assert!(lines[0].contains("D_enc") && lines[0].contains("N_dec"));
    assert!(lines[2].starts_with("| PB"));
    assert!(lines[3].starts_with("| advae-4") && lines[3].contains("0.3"));
    // mean(std) cells over two seeds
    assert_eq!(lines[3].matches('(').count(), 4, "{}", lines[3]);
    let json: serde_json::Value = serde_json::from_slice(&read(d.join("report.json"))).unwrap();
    assert_eq!(json["rows"][1]["seeds"], serde_json::json!([0, 1]));

    for seed in ["seed_0", "seed_1"] {
        for f in ["model.ckpt", "train_log.jsonl", "pairs.jsonl", "pairs.conllu", "dec.csv", "enc.csv", "struct.csv", "ppl.json", "run_info.json"] {
            assert!(d.join(seed).join(f).exists(), "{seed}/{f}");
        }
    }
    let pairs = String::from_utf8(read(d.join("seed_0/pairs.jsonl"))).unwrap();
    assert_eq!(pairs.lines().count(), 12 * 5);
    let enc = String::from_utf8(read(d.join("seed_0/enc.csv"))).unwrap();
    assert_eq!(enc.lines().next().unwrap(), "role,z0,z1,z2,z3");
    assert_eq!(enc.lines().count(), 5);

    // manipulation on top of the trained run
    let r = ok(d, &["resample", "--role", "subj", "--sentence", "the man holds the ball ."]);
    assert_eq!(r.lines().count(), 1);
    assert_eq!(r, ok(d, &["resample", "--role", "subj", "--sentence", "the man holds the ball ."]));
    let s = ok(d, &["swap", "--role", "verb", "--first", "the man sits .", "--second", "a dog runs ."]);
    assert_eq!(s.lines().count(), 2);
    let bad = advae(d, &["resample", "--role", "adverb", "--sentence", "the man sits ."]);
    assert_eq!(bad.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&bad.stderr);
    assert!(msg.contains("adverb") && msg.contains("subj, dobj"), "{msg}");
}

#[test]
fn subcommands_are_idempotent() {
    let run = tiny_run();
    let d = run.path();
    let tracked = [
        "corpus/train.txt",
        "corpus/test.conllu",
        "seed_0/model.ckpt",
        "seed_0/train_log.jsonl",
        "seed_0/checkpoints/epoch_001.ckpt",
        "seed_0/pairs.jsonl",
        "seed_0/pairs.conllu",
        "seed_0/dec.json",
        "seed_0/enc.csv",
        "seed_0/struct_counts.csv",
        "seed_0/ppl.json",
        "pb.json",
    ];
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        for cmd in PIPELINE {
            ok(d, &seeded(cmd, "0"));
        }
        snapshots.push(tracked.map(|f| read(d.join(f))));
    }
    for (k, f) in tracked.iter().enumerate() {
        assert!(snapshots[0][k] == snapshots[1][k], "{f} differs between runs");
    }
    assert!(!d.join("seed_1").exists());
}

#[test]
fn repl_reads_commands_and_leaves_checkpoint_alone() {
    use std::io::Write;
    use std::process::Stdio;
    let run = tiny_run();
    let d = run.path();
    for cmd in ["gen-corpus", "train", "eval-enc"] {
        ok(d, &seeded(cmd, "1"));
    }
    let before = read(d.join("seed_1/model.ckpt"));
    let mut child = Command::new(env!("CARGO_BIN_EXE_advae"))
        .args(["repl", "--seed", "1", "--run-dir"])
        .arg(d)
        .env("RUST_LOG", "warn")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"roles\nresample subj the man sits .\nswap verb the man sits . | a dog runs .\nnonsense\nresample pronoun x\nquit\nroles\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // banner, roles, resample, swap (2), two errors; nothing after quit
    assert_eq!(lines.len(), 7, "{text}");
    assert!(lines[0].starts_with("roles (from enc):"));
    assert_eq!(lines[0], lines[1]);
    assert!(lines[5].starts_with("error: unknown command"));
    assert!(lines[6].starts_with("error: role `pronoun`"));
    assert_eq!(read(d.join("seed_1/model.ckpt")), before);
    let map: serde_json::Value = serde_json::from_slice(&read(d.join("seed_1/role_map.json"))).unwrap();
    assert_eq!(map["source"], "enc");
    assert_eq!(map["checkpoint"].as_str().unwrap().len(), 64);
}

#[test]
fn config_errors_fail_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("config.toml"), "[model]\nn_z = 4\nwidth = 3\n").unwrap();
    let out = advae(d, &["gen-corpus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width"));
    assert!(!d.join("corpus").exists());

    std::fs::write(d.join("config.toml"), "[eval]\nlayer_mode = \"layer_9\"\n").unwrap();
    assert_eq!(advae(d, &["gen-corpus"]).status.code(), Some(1));

    std::fs::write(d.join("config.toml"), TINY).unwrap();
    let out = advae(d, &["perturb"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `train` first"));
}

#[test]
fn relative_run_dirs_resolve_against_run_root() {
    let root = tempfile::tempdir().unwrap();
    std::fs::create_dir(root.path().join("exp")).unwrap();
    std::fs::write(root.path().join("exp/config.toml"), TINY).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_advae"))
        .args(["gen-corpus", "--run-dir", "exp"])
        .env("ADVAE_RUN_ROOT", root.path())
        .current_dir(std::env::temp_dir())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(read(root.path().join("exp/corpus/train.txt"))).unwrap().lines().count(), 120);
}
