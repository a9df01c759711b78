use std::path::Path;
use std::process::{Command, Output};

use hat_core::dataio::{FeatureStore, Space};
use hat_core::nets::{load_model, ModelFile};
use hat_core::sdt::SnippetIndex;

fn hat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hat")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn world(dir: &Path) {
    let out = hat(&["synth-gen", "--out", p(dir), "--set", "identities=16", "--set", "feature_dim=24"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let o = p(tmp.path());
    for args in [
        vec!["bogus"],
        vec!["synth-gen"],
        vec!["synth-gen", "--out", o, "--set", "nope=1"],
        vec!["synth-gen", "--out", o, "--set", "identities=many"],
        vec!["synth-gen", "--out", o, "--set", "identities"],
        vec!["sdt-query", "--exemplar", o],
    ] {
        assert_eq!(hat(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn synth_gen_writes_stores_manifest_and_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("world.toml");
    std::fs::write(&cfg, "identities = 9\nseed = 3\nfamily = \"rotation\"\n").unwrap();
    let out = tmp.path().join("w");
    let o = hat(&["synth-gen", "--config", p(&cfg), "--set", "seed=8", "--out", p(&out)]);
    assert!(o.status.success());
    let features = FeatureStore::read_expecting(&out.join("features.hatf"), Space::Feature, 128).unwrap();
    let semantic = FeatureStore::read_expecting(&out.join("semantic.hatf"), Space::Semantic, 64).unwrap();
    assert_eq!(features.len(), semantic.len());
    assert_eq!(features.snippets().len(), 9);
    let resolved: toml::Table = std::fs::read_to_string(out.join("config.toml")).unwrap().parse().unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(8));
    assert_eq!(resolved["family"].as_str(), Some("rotation"));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("identities = 9"), "{manifest}");
}

#[test]
fn train_query_and_audit_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let w = tmp.path().join("w");
    world(&w);
    let m = tmp.path().join("m");
    let o = hat(&["train-ah", "--features", p(&w.join("features.hatf")), "--out", p(&m), "--iters", "30", "--lambda-def", "2.5", "--lr", "1e-3", "--set", "train.log_interval=10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("lambda_def=2.5") && stdout.contains("lr=0.001"), "{stdout}");
    assert!(matches!(load_model(&m.join("generator.hatm")).unwrap(), ModelFile::Hallucinator(_)));
    assert!(matches!(load_model(&m.join("discriminator.hatm")).unwrap(), ModelFile::Discriminator(_)));
    let report = std::fs::read_to_string(m.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3);

    let index = tmp.path().join("idx.hati");
    assert!(hat(&["sdt-index", "--semantic-features", p(&w.join("semantic.hatf")), "--out", p(&index)]).status.success());
    assert_eq!(SnippetIndex::read(&index).unwrap().len(), 16);

    let q = hat(&["sdt-query", "--index", p(&index), "--exemplar", p(&w.join("semantic.hatf")), "--top", "4"]);
    assert!(q.status.success());
    let csv = String::from_utf8_lossy(&q.stdout);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "rank,snippet_id,distance");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,0,"), "record 0 belongs to snippet 0: {csv}");
    assert!(String::from_utf8_lossy(&q.stderr).contains("ms"));

    let direct = hat(&["sdt-query", "--semantic-features", p(&w.join("semantic.hatf")), "--exemplar", p(&w.join("semantic.hatf")), "--top", "4"]);
    assert_eq!(direct.stdout, q.stdout);

    let too_many = hat(&["sdt-query", "--index", p(&index), "--exemplar", p(&w.join("semantic.hatf")), "--top", "17"]);
    assert_eq!(too_many.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&too_many.stderr).contains("17"));

    let audit = hat(&["audit", "--model", p(&m.join("generator.hatm")), "--pool", p(&w.join("features.hatf")), "--samples", "6"]);
    assert!(audit.status.success());
    let csv = String::from_utf8_lossy(&audit.stdout);
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.starts_with("sample,source_identity,exemplar_identity,nearest_identity,nearest_frame,distance\n"));

    let wrong = hat(&["audit", "--model", p(&m.join("discriminator.hatm")), "--pool", p(&w.join("features.hatf"))]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn corrupt_inputs_fail_with_named_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let w = tmp.path().join("w");
    world(&w);
    let bad = tmp.path().join("bad.hatf");
    let mut bytes = std::fs::read(w.join("features.hatf")).unwrap();
    bytes[0] = b'X';
    std::fs::write(&bad, &bytes).unwrap();
    let o = hat(&["sdt-index", "--semantic-features", p(&bad), "--out", p(&tmp.path().join("i.hati"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad magic"));
    let o = hat(&["train-ah", "--features", p(&w.join("semantic.hatf")), "--out", p(&tmp.path().join("m"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Feature"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn track_and_ablate_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let small = [
        "world.identities=30",
        "offline.iterations=20",
        "video.frames=4",
        "track.init_iterations=2",
        "track.update_iterations=1",
    ];
    let mut args = vec!["track".to_string(), "--out-dir".into(), p(&tmp.path().join("t")).into()];
    for s in small {
        args.extend(["--set".into(), format!("suite.{s}")]);
    }
    args.extend(["--set".into(), "variant=hat_r23_nosdt_up".into(), "--set".into(), "videos=2".into()]);
    let o = hat(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let frames = std::fs::read_to_string(tmp.path().join("t/frames.csv")).unwrap();
    assert_eq!(frames.lines().count(), 1 + 2 * 3);
    let videos = std::fs::read_to_string(tmp.path().join("t/videos.csv")).unwrap();
    assert_eq!(videos.lines().count(), 3);
    assert!(videos.lines().nth(1).unwrap().starts_with("hat_r23_nosdt_up,0,0,"));

    let mut args = vec!["ablate".to_string(), "--out-dir".into(), p(&tmp.path().join("a")).into()];
    for s in small {
        args.extend(["--set".into(), s.into()]);
    }
    args.extend(["--set".into(), "seeds=[3]".into(), "--set".into(), "videos=2".into()]);
    args.extend(["--set".into(), "variants=[\"base_r13\", \"hat_r11_sdt_noup\"]".into()]);
    let o = hat(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(tmp.path().join("a/rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2);
    let summary = std::fs::read_to_string(tmp.path().join("a/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let resolved: toml::Table = std::fs::read_to_string(tmp.path().join("a/config.toml")).unwrap().parse().unwrap();
    assert_eq!(resolved["seeds"].as_array().unwrap().len(), 1);

    let bad = hat(&["ablate", "--out-dir", p(&tmp.path().join("x")), "--set", "variants=[\"hat_r12_sdt_up\"]"]);
    assert_eq!(bad.status.code(), Some(2));
}
