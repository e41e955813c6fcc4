use std::path::Path;
use std::process::{Command, Output};

use cakit_cli::{parse_layers, split_list, CliError};

fn ca_kit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ca-kit"))
        .args(args)
        .current_dir(dir)
        .env_remove("CA_KIT_SEED")
        .output()
        .unwrap()
}

#[test]
fn layer_selection_syntax() {
    assert_eq!(parse_layers("all", 4).unwrap(), vec![0, 1, 2, 3]);
    assert_eq!(parse_layers("2", 4).unwrap(), vec![2]);
    assert_eq!(parse_layers("1-3", 4).unwrap(), vec![1, 2, 3]);
    assert_eq!(parse_layers("0,2-3", 4).unwrap(), vec![0, 2, 3]);
    for bad in ["4", "3-1", "x", "", "1-", "-2"] {
        assert!(
            matches!(parse_layers(bad, 4), Err(CliError::Usage(_))),
            "{bad:?}"
        );
    }
    assert_eq!(split_list(" cat, dog ,,sky"), vec!["cat", "dog", "sky"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(ca_kit(d, &["--help"]).status.code(), Some(0));
    assert_eq!(ca_kit(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(ca_kit(d, &["gen-weights"]).status.code(), Some(1));
    let gen = ca_kit(d, &["gen-weights", "--out", "w.caw", "--seed", "1"]);
    assert_eq!(gen.status.code(), Some(0));
    assert_eq!(String::from_utf8(gen.stdout).unwrap().trim().len(), 16);

    let base = [
        "run",
        "--weights",
        "w.caw",
        "--prompt",
        "a cat",
        "--concepts",
        "cat,sky",
        "--out",
        "o",
    ];
    let with = |extra: &[&str]| {
        let mut a: Vec<&str> = base.to_vec();
        a.extend_from_slice(extra);
        ca_kit(d, &a).status.code()
    };
    assert_eq!(with(&["--space", "nope"]), Some(1));
    assert_eq!(with(&["--softmax", "maybe"]), Some(1));
    assert_eq!(with(&["--layers", "9"]), Some(1));
    assert_eq!(with(&["--timestep", "5000"]), Some(1));
    let mut unknown = base.to_vec();
    unknown[6] = "zebra-ish";
    assert_eq!(ca_kit(d, &unknown).status.code(), Some(2));
    assert_eq!(with(&["--image", "missing.pgm"]), Some(2));
    assert_eq!(with(&[]), Some(0));
    assert!(d.join("o/scores.cas1").exists() && d.join("o/saliency_cat.pgm").exists());

    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    assert_eq!(
        ca_kit(d, &["eval", "--manifest", "empty.jsonl", "--out", "e"])
            .status
            .code(),
        Some(2)
    );
    std::fs::write(d.join("garbage.caw"), b"nope").unwrap();
    let mut bad = base.to_vec();
    bad[2] = "garbage.caw";
    assert_eq!(ca_kit(d, &bad).status.code(), Some(2));
    assert_eq!(
        ca_kit(d, &["ablate", "--sweep", "timesteps", "--out", "a"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        ca_kit(d, &["demo-planted", "--sigma", "-1", "--out", "x"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |env: Option<&str>, args: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_ca-kit"));
        c.args(args).current_dir(d).env_remove("CA_KIT_SEED");
        if let Some(v) = env {
            c.env("CA_KIT_SEED", v);
        }
        assert!(c.output().unwrap().status.success());
    };
    run(Some("12"), &["gen-weights", "--out", "env.caw"]);
    run(None, &["gen-weights", "--out", "flag.caw", "--seed", "12"]);
    run(None, &["gen-weights", "--out", "zero.caw"]);
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("env.caw"), read("flag.caw"));
    assert_ne!(read("env.caw"), read("zero.caw"));
}

#[test]
fn image_input_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(ca_kit(d, &["gen-weights", "--out", "w.caw"])
        .status
        .success());
    let px: Vec<u8> = (0..256)
        .map(|i| if (i % 16) < 8 { 30 } else { 220 })
        .collect();
    std::fs::write(d.join("img.pgm"), cakit::segeval::write_pgm(16, 16, &px)).unwrap();
    std::fs::write(
        d.join("small.pgm"),
        cakit::segeval::write_pgm(4, 4, &[0; 16]),
    )
    .unwrap();
    let args = |img: &'static str, out: &'static str| {
        vec![
            "run",
            "--weights",
            "w.caw",
            "--prompt",
            "a dog",
            "--concepts",
            "dog,grass",
            "--image",
            img,
            "--out",
            out,
        ]
    };
    assert!(ca_kit(d, &args("img.pgm", "a")).status.success());
    assert_eq!(ca_kit(d, &args("small.pgm", "b")).status.code(), Some(2));
    let map = cakit::SaliencyMap::load_cas1(d.join("a/scores.cas1")).unwrap();
    assert_eq!(map.vocabulary().concepts(), ["dog", "grass"]);
    assert_eq!(map.provenance.layers, (0..6).collect::<Vec<_>>());
    assert_eq!(map.provenance.timestep, 500);
}

#[test]
fn eval_reports_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let demo = cakit_cli::cmd_demo_planted(3, 0.05, &d.join("demo")).unwrap();
    let out = ca_kit(
        d,
        &[
            "eval",
            "--manifest",
            "demo/manifest.jsonl",
            "--mode",
            "multi",
            "--out",
            "ev",
        ],
    );
    assert!(out.status.success());
    let report: cakit::segeval::MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(d.join("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report, demo.metrics);
    let csv = std::fs::read_to_string(d.join("ev/report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "n_samples,acc,miou,map");
}

#[test]
fn ablate_reads_images_from_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let px: Vec<u8> = (0..256).map(|i| if i < 128 { 40 } else { 200 }).collect();
    let gt: Vec<u8> = (0..256).map(|i| u8::from(i >= 128)).collect();
    std::fs::write(d.join("img.pgm"), cakit::segeval::write_pgm(16, 16, &px)).unwrap();
    std::fs::write(d.join("gt.pgm"), cakit::segeval::write_pgm(16, 16, &gt)).unwrap();
    std::fs::write(
        d.join("m.jsonl"),
        "{\"id\":\"a\",\"image_path\":\"img.pgm\",\"mask_path\":\"gt.pgm\",\"target_concept\":\"cat\"}\n",
    )
    .unwrap();
    let out = ca_kit(
        d,
        &[
            "ablate",
            "--sweep",
            "space-softmax",
            "--manifest",
            "m.jsonl",
            "--out",
            "ab",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(d.join("ab/ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("space,softmax,acc,miou,map"));

    std::fs::write(
        d.join("bad.jsonl"),
        "{\"id\":\"a\",\"mask_path\":\"gt.pgm\",\"target_concept\":\"cat\"}\n",
    )
    .unwrap();
    let out = ca_kit(
        d,
        &[
            "ablate",
            "--sweep",
            "layers",
            "--manifest",
            "bad.jsonl",
            "--out",
            "ab2",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}
