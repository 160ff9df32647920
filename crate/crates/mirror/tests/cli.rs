use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn mirror(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirror"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MIRROR_DATA_DIR")
        .output()
        .expect("spawn mirror")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mirror(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(mirror(&["train", "--strategy", "wide"], dir.path()).status.code(), Some(2));
    assert_eq!(mirror(&["preprocess"], dir.path()).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = mirror(&["generate", "--checkpoint", "missing.mirr", "--out", "o.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.mirr"));
    let out = mirror(&["verify", "--set", "colour=blue"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn end_to_end_on_the_small_toy_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    // The data directory comes from the environment when not given.
    let out = Command::new(env!("CARGO_BIN_EXE_mirror"))
        .args(["preprocess", "--toy", "toy8"])
        .current_dir(root)
        .env("MIRROR_DATA_DIR", root.join("d"))
        .output()
        .unwrap();
    ok(&out);
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "vocab.txt"] {
        assert!(root.join("d").join(f).exists(), "{}", f);
    }

    std::fs::write(root.join("run.conf"), "# tiny run\nbatch_size = 4\nlr = 0.003 # faster\n").unwrap();
    let cfg = ["--config", "run.conf"];
    let report = ok(&mirror(
        &[&["train", "--data", "d", "--out", "r", "--epochs", "2"][..], &cfg[..]].concat(),
        root,
    ));
    assert!(report.contains("\"epochs\": 2"), "{}", report);
    let lines = std::fs::read_to_string(root.join("r/report.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);

    let ckpt = "r/checkpoint.mirr";
    ok(&mirror(&["generate", "--checkpoint", ckpt, "--data", "d", "--out", "greedy.jsonl"], root));
    ok(&mirror(
        &["generate", "--checkpoint", ckpt, "--data", "d", "--out", "beam1.jsonl", "--strategy", "beam", "--k", "1"],
        root,
    ));
    let strip = |p: &str| -> Vec<String> {
        std::fs::read_to_string(root.join(p))
            .unwrap()
            .lines()
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                format!("{}\t{}", v["dialogue_index"], v["response_text"])
            })
            .collect()
    };
    let greedy = strip("greedy.jsonl");
    assert_eq!(greedy.len(), 8);
    assert_eq!(greedy, strip("beam1.jsonl"));

    let metrics = ok(&mirror(
        &["eval", "--checkpoint", ckpt, "--data", "d", "--outputs", "greedy.jsonl", "--out", "m.json"],
        root,
    ));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("m.json")).unwrap()).unwrap();
    assert_eq!(m, serde_json::from_str::<serde_json::Value>(&metrics).unwrap());
    assert!(m.to_string().contains("perplexity"));

    let mut child = Command::new(env!("CARGO_BIN_EXE_mirror"))
        .args(["chat", "--checkpoint", ckpt, "--strategy", "sample", "--seed", "3"])
        .current_dir(root)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"hello there\n:seed 5\n:help\n:reset\nhow are you ?\n:quit\nnever read\n")
        .unwrap();
    let chat = ok(&child.wait_with_output().unwrap());
    assert!(chat.contains("(seed 5)"));
    assert!(chat.contains("(history cleared)"));
    assert!(chat.contains("commands:"));
    assert_eq!(chat.matches("> ").count(), 6, "{}", chat);
}
