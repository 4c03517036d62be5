use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posedit_core::blend::{parse_attention_stack, run_blend_schedule, BlendConfig};
use posedit_core::retrieval::{build_index, parse_database_manifest, parse_embedding, query};
use posedit_core::{parse_pose_video, serialize_pose_video};

fn fixtures() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures"))
}

fn posedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posedit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
    }
    out
}

fn edit_args(bundle: &str, out: &Path) -> Vec<String> {
    let b = fixtures().join("bundles").join(bundle);
    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    vec![
        "edit".into(),
        "--source".into(),
        s(b.join("source.json")),
        "--detections".into(),
        s(b.join("detections.json")),
        "--answer".into(),
        s(b.join("answer.txt")),
        "--db".into(),
        s(fixtures().join("pose_db/manifest.json")),
        "--query-embedding".into(),
        s(b.join("query_embedding.json")),
        "--out-dir".into(),
        s(out.to_path_buf()),
    ]
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    posedit(&refs)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn edit_bundles_match_goldens() {
    for bundle in ["e2e_girl_dance", "e2e_boy_sit", "e2e_crowd_fall"] {
        let tmp = tempfile::tempdir().unwrap();
        let out = run(&edit_args(bundle, tmp.path()));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let golden = fixtures().join("bundles").join(bundle).join("expected");
        assert_eq!(
            std::fs::read(tmp.path().join("edited_pose_video.json")).unwrap(),
            std::fs::read(golden.join("edited_pose_video.json")).unwrap(),
            "{bundle}"
        );
        let summary = json(&golden.join("summary.json"));
        let report = json(&tmp.path().join("report.json"));
        assert_eq!(report["results"][0]["entry_id"], summary["retrieved"]);
        let pairs: Vec<serde_json::Value> = report["assignment"]["pairs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| serde_json::json!([p["detection"], p["instance_id"]]))
            .collect();
        assert_eq!(serde_json::Value::Array(pairs), summary["pairs"]);
        assert!(!report["answer"]["subject"].as_str().unwrap().is_empty());
    }
}

#[test]
fn manifest_lists_every_output_with_hash() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&edit_args("e2e_girl_dance", tmp.path())).status.success());
    let m = json(&tmp.path().join("manifest.json"));
    let listed: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert_eq!(listed, ["edited_pose_video.json", "report.json"]);
    for f in m["files"].as_array().unwrap() {
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn empty_detections_pass_source_through() {
    let tmp = tempfile::tempdir().unwrap();
    let dets = tmp.path().join("none.json");
    std::fs::write(&dets, r#"{"frame_index": 0, "detections": []}"#).unwrap();
    let mut args = edit_args("e2e_girl_dance", &tmp.path().join("out"));
    args[4] = dets.to_string_lossy().into_owned();
    let out = run(&args);
    assert!(out.status.success());
    let source = std::fs::read_to_string(fixtures().join("bundles/e2e_girl_dance/source.json")).unwrap();
    let edited = std::fs::read_to_string(tmp.path().join("out/edited_pose_video.json")).unwrap();
    assert_eq!(edited, source);
    let report = json(&tmp.path().join("out/report.json"));
    assert!(report["notes"].as_array().unwrap().iter().any(|n| n == "no individuals matched"));
}

#[test]
fn top_k_two_writes_ranked_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = edit_args("e2e_girl_dance", tmp.path());
    args.extend(["--top-k".into(), "2".into()]);
    assert!(run(&args).status.success());
    let files = tree(tmp.path());
    assert!(files.contains_key("edited_pose_video_rank1.json"));
    assert!(files.contains_key("edited_pose_video_rank2.json"));
    assert!(!files.contains_key("edited_pose_video.json"));

    let report = json(&tmp.path().join("report.json"));
    let ids: Vec<&str> = report["results"].as_array().unwrap().iter().map(|r| r["entry_id"].as_str().unwrap()).collect();
    let db = build_index(
        parse_database_manifest(&std::fs::read_to_string(fixtures().join("pose_db/manifest.json")).unwrap()).unwrap(),
    )
    .unwrap();
    let q = parse_embedding(
        &std::fs::read_to_string(fixtures().join("bundles/e2e_girl_dance/query_embedding.json")).unwrap(),
    )
    .unwrap();
    let expected: Vec<String> = query(&db, &q, 2).unwrap().into_iter().map(|m| m.entry_id).collect();
    assert_eq!(ids, expected);
    let s: Vec<f64> = report["results"].as_array().unwrap().iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(s[0] >= s[1]);
    // rank 1 equals the single-result edit
    let single = tempfile::tempdir().unwrap();
    assert!(run(&edit_args("e2e_girl_dance", single.path())).status.success());
    assert_eq!(files["edited_pose_video_rank1.json"], tree(single.path())["edited_pose_video.json"]);
}

#[test]
fn frames_flag_controls_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = edit_args("e2e_crowd_fall", tmp.path());
    args.extend(["--frames".into(), "24".into()]);
    assert!(run(&args).status.success());
    let v = parse_pose_video(&std::fs::read_to_string(tmp.path().join("edited_pose_video.json")).unwrap()).unwrap();
    assert_eq!(v.frames.len(), 20);
    let mut args = edit_args("e2e_crowd_fall", tmp.path());
    args.extend(["--frames".into(), "5".into()]);
    assert!(run(&args).status.success());
    let v = parse_pose_video(&std::fs::read_to_string(tmp.path().join("edited_pose_video.json")).unwrap()).unwrap();
    let idx: Vec<u32> = v.frames.iter().map(|f| f.frame_index).collect();
    assert_eq!(idx, [0, 10, 20, 28, 38]);
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let b = fixtures().join("bundles/e2e_girl_dance");
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "top_k = 3\nsource = {:?}\ndetections = {:?}\nanswer = {:?}\ndb = {:?}\nquery_embedding = {:?}\nout_dir = \"from_config\"\n",
            b.join("source.json"),
            b.join("detections.json"),
            b.join("answer.txt"),
            fixtures().join("pose_db/manifest.json"),
            b.join("query_embedding.json"),
        ),
    )
    .unwrap();
    let out = posedit(&["edit", "--config", cfg.to_str().unwrap(), "--top-k", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("from_config");
    assert_eq!(
        std::fs::read(dir.join("edited_pose_video.json")).unwrap(),
        std::fs::read(b.join("expected/edited_pose_video.json")).unwrap()
    );
}

#[cfg(unix)]
#[test]
fn embedder_command_hook() {
    use std::os::unix::fs::PermissionsExt;
    let tmp = tempfile::tempdir().unwrap();
    let script = tmp.path().join("embed.sh");
    let q = std::fs::read_to_string(fixtures().join("bundles/e2e_girl_dance/query_embedding.json")).unwrap();
    std::fs::write(&script, format!("#!/bin/sh\n[ \"$1\" = dance ] || exit 9\ncat <<'EOF'\n{q}EOF\n")).unwrap();
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, format!("embedder_command = {:?}\n", script.to_string_lossy())).unwrap();

    let mut args = edit_args("e2e_girl_dance", &tmp.path().join("out"));
    let qi = args.iter().position(|a| a == "--query-embedding").unwrap();
    args.drain(qi..qi + 2);
    args.extend(["--config".into(), cfg.to_string_lossy().into_owned()]);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(tmp.path().join("out/edited_pose_video.json")).unwrap(),
        std::fs::read(fixtures().join("bundles/e2e_girl_dance/expected/edited_pose_video.json")).unwrap()
    );
}

#[test]
fn exit_codes_distinguish_failures() {
    let tmp = tempfile::tempdir().unwrap();
    // usage
    assert_eq!(posedit(&["edit", "--top-k", "many"]).status.code(), Some(2));
    // malformed input
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{\"frames\": 3}").unwrap();
    let mut args = edit_args("e2e_girl_dance", &tmp.path().join("o1"));
    args[2] = bad.to_string_lossy().into_owned();
    let out = run(&args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[source]"));
    // structurally fine answer missing a field
    let ans = tmp.path().join("answer.txt");
    std::fs::write(&ans, "subject: the girl\n").unwrap();
    let mut args = edit_args("e2e_girl_dance", &tmp.path().join("o2"));
    args[6] = ans.to_string_lossy().into_owned();
    let out = run(&args);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("structured form"));
    // stage rejection: detections for a frame other than the first
    let dets = tmp.path().join("dets.json");
    std::fs::write(&dets, r#"{"frame_index": 5, "detections": []}"#).unwrap();
    let mut args = edit_args("e2e_girl_dance", &tmp.path().join("o3"));
    args[4] = dets.to_string_lossy().into_owned();
    let out = run(&args);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[assign]"));
    // missing file
    let mut args = edit_args("e2e_girl_dance", &tmp.path().join("o4"));
    args[2] = tmp.path().join("nope.json").to_string_lossy().into_owned();
    assert_eq!(run(&args).status.code(), Some(5));
    // invalid threshold
    let mut args = edit_args("e2e_girl_dance", &tmp.path().join("o5"));
    args.extend(["--iou-threshold".into(), "1.5".into()]);
    assert_eq!(run(&args).status.code(), Some(3));
}

#[test]
fn blend_demo_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let stack = fixtures().join("blend_sched_01.json");
    let out = posedit(&[
        "blend-demo",
        "--attention",
        stack.to_str().unwrap(),
        "--tokens",
        "0",
        "--blend-ratio",
        "0.3",
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let lib = run_blend_schedule(
        &parse_attention_stack(&std::fs::read_to_string(&stack).unwrap()).unwrap(),
        &BlendConfig::new(vec![0], 0.3),
    )
    .unwrap();
    let mut expected = serde_json::to_string_pretty(&lib).unwrap();
    expected.push('\n');
    assert_eq!(std::fs::read_to_string(tmp.path().join("blended.json")).unwrap(), expected);
}

#[test]
fn metrics_command_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixtures().join("metrics_small/manifest.json");
    let out = posedit(&["metrics", "--manifest", manifest.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&tmp.path().join("metrics.json"));
    assert_eq!(report["cases"].as_array().unwrap().len(), 3);
    assert!(report["cases"][1].get("gt_con").is_none());
    assert!(report["aggregate"]["gt_con"].is_number());
    let text = std::fs::read_to_string(tmp.path().join("metrics.json")).unwrap();
    // every real printed with exactly six decimals
    for tok in text.split([' ', ',', '}', '\n']) {
        if tok.contains('.') && !tok.contains('"') {
            assert_eq!(tok.split('.').nth(1).unwrap().len(), 6, "{tok}");
        }
    }
    let table = std::fs::read_to_string(tmp.path().join("metrics.txt")).unwrap();
    assert!(table.lines().next().unwrap().contains("gt_con"));
}

#[test]
fn metrics_without_ground_truth_drop_gt_column() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fixtures().join("metrics_small");
    let mut cases = json(&src.join("manifest.json"));
    let abs = |s: &serde_json::Value| serde_json::Value::String(src.join(s.as_str().unwrap()).to_string_lossy().into_owned());
    for c in cases.as_array_mut().unwrap() {
        c.as_object_mut().unwrap().remove("ground_truth");
        for key in ["edited", "source"] {
            let v = &mut c[key];
            v["video_embedding"] = abs(&v["video_embedding"]);
            v["frame_embeddings"] = serde_json::Value::Array(v["frame_embeddings"].as_array().unwrap().iter().map(abs).collect());
        }
        for key in ["target_prompt_embedding", "source_prompt_embedding"] {
            c[key] = serde_json::Value::String(src.join(c[key].as_str().unwrap()).to_string_lossy().into_owned());
        }
    }
    let manifest = tmp.path().join("m.json");
    std::fs::write(&manifest, serde_json::to_string(&cases).unwrap()).unwrap();
    let out_dir = tmp.path().join("out");
    let out = posedit(&["metrics", "--manifest", manifest.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!std::fs::read_to_string(out_dir.join("metrics.txt")).unwrap().contains("gt_con"));
    assert!(!std::fs::read_to_string(out_dir.join("metrics.json")).unwrap().contains("gt_con"));
}

#[test]
fn align_and_retrieve_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = posedit(&[
        "align",
        "--input",
        fixtures().join("align_noisy_01.json").to_str().unwrap(),
        "--out-dir",
        tmp.path().join("a").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let t = json(&tmp.path().join("a/transform.json"));
    assert_eq!(t["points_used"], 15);

    let out = posedit(&[
        "retrieve",
        "--db",
        fixtures().join("pose_db/manifest.json").to_str().unwrap(),
        "--query-embedding",
        fixtures().join("bundles/e2e_boy_sit/query_embedding.json").to_str().unwrap(),
        "--top-k",
        "6",
        "--out-dir",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let r = json(&tmp.path().join("r/retrieval.json"));
    assert_eq!(r.as_array().unwrap().len(), 6);
    assert_eq!(r[0]["entry_id"], "sit_down");
}

#[test]
fn ddim_demo_command() {
    let tmp = tempfile::tempdir().unwrap();
    let out = posedit(&["ddim-demo", "--out-dir", tmp.path().to_str().unwrap()]);
    assert!(out.status.success());
    let t = json(&tmp.path().join("trajectory.json"));
    assert!(t["roundtrip_max_abs_error"].as_f64().unwrap() < 1e-6);
    let s = json(&tmp.path().join("schedule.json"));
    assert_eq!(s["T"], 50);
    assert_eq!(s["alphas"].as_array().unwrap().len(), 51);
}

#[test]
fn edited_output_reparses_canonically() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run(&edit_args("e2e_boy_sit", tmp.path())).status.success());
    let text = std::fs::read_to_string(tmp.path().join("edited_pose_video.json")).unwrap();
    assert_eq!(serialize_pose_video(&parse_pose_video(&text).unwrap()), text);
}
