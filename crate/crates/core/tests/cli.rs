//! The `scenetex` binary end to end on small fixtures.

mod common;

use common::{path_str, scenetex, scenetex_ok};
use scenetex::scene::load_scene;
use scenetex::scene::synth::load_manifest;

fn gen(dir: &std::path::Path, kind: &str) -> std::path::PathBuf {
    let out = dir.join(kind.replace(':', "-"));
    scenetex_ok(&["gen-scene", "--kind", kind, "--out", path_str(&out), "--cameras", "6", "--texture-res", "64"]);
    out
}

#[test]
fn generated_scenes_load_back() {
    let dir = tempfile::tempdir().unwrap();
    for (kind, triangles, instances) in [("quad", Some(2), 1), ("box-room", None, 6), ("multi-object:3", None, 9)] {
        let out = gen(dir.path(), kind);
        let manifest = load_manifest(&out).unwrap();
        let (scene, summary) = load_scene(&out.join(&manifest.mesh), &out.join(&manifest.instance_map)).unwrap();
        assert_eq!(scene.instance_count(), instances, "{kind}");
        if let Some(t) = triangles {
            assert_eq!(scene.triangles.len(), t);
        }
        assert_eq!(manifest.instance_uv_area.len(), summary.instance_uv_area.len());
        for (declared, loaded) in manifest.instance_uv_area.iter().zip(&summary.instance_uv_area) {
            assert!((declared - loaded).abs() <= 1e-9, "{kind}: {declared} vs {loaded}");
        }
    }
}

#[test]
fn usage_and_config_errors_exit_2_before_any_compute() {
    let dir = tempfile::tempdir().unwrap();
    let bad_kind = scenetex(&["gen-scene", "--kind", "torus", "--out", path_str(&dir.path().join("t"))]);
    assert_eq!(bad_kind.status.code(), Some(2));

    let scene = gen(dir.path(), "quad");
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"train": {"iterations": 5, "learning_rate": 0.1}}"#).unwrap();
    let out = dir.path().join("never");
    let run = scenetex(&["fit", "--config", path_str(&config), "--scene", path_str(&scene), "--out", path_str(&out)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("learning_rate"));
    assert!(!out.exists());

    let bad_component = scenetex(&["gradcheck", "--component", "optim"]);
    assert_eq!(bad_component.status.code(), Some(2));
}

#[test]
fn fit_bake_eval_on_the_box_room() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path(), "box-room");
    let run = dir.path().join("run");
    scenetex_ok(&[
        "--threads", "1", "fit", "--scene", path_str(&scene), "--out", path_str(&run), "--iterations", "12",
        "--anneal-at", "4", "--resolution", "32", "--n-ref", "32", "--checkpoint-every", "6",
    ]);
    for f in ["config.json", "metrics.csv", "ckpt_6.bin", "ckpt_12.bin"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("iter,loss,grad_norm_field,grad_norm_lora,psnr,t,camera_idx"));
    assert_eq!(csv.lines().count(), 13);

    let baked = dir.path().join("baked.png");
    scenetex_ok(&["bake", "--checkpoint", path_str(&run.join("ckpt_12.bin")), "--resolution", "64", "--out", path_str(&baked)]);
    let table = dir.path().join("eval.csv");
    let stdout = scenetex_ok(&[
        "eval", "--baked", path_str(&baked), "--ground-truth", path_str(&scene.join("texture.png")),
        "--mask", path_str(&dir.path().join("baked_mask.png")), "--scene", path_str(&scene), "--out", path_str(&table),
    ]);
    assert_eq!(std::fs::read_to_string(&table).unwrap(), stdout);
    let rows: Vec<&str> = stdout.lines().collect();
    assert_eq!(rows[0], "instance,name,texels,psnr");
    assert!(rows[1].starts_with("all,,"));
    assert_eq!(rows.len(), 2 + 6);
    assert!(rows[2].starts_with("0,floor,"));
    for row in &rows[1..] {
        let psnr: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(psnr > 5.0 && psnr < 60.0, "{row}");
    }
}

#[test]
fn distill_runs_with_and_without_cross_attention() {
    let dir = tempfile::tempdir().unwrap();
    let scene = gen(dir.path(), "quad");
    for (name, extra) in [("vsd", vec!["--critic", "vsd"]), ("plain", vec!["--critic", "sds", "--no-cross-attn"])] {
        let out = dir.path().join(name);
        let mut args = vec![
            "--threads", "1", "distill", "--scene", path_str(&scene), "--out", path_str(&out), "--iterations", "6",
            "--anneal-at", "3", "--resolution", "32", "--n-ref", "16",
        ];
        args.extend(extra);
        scenetex_ok(&args);
        let config: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
        assert_eq!(config["train"]["critic"], name.replace("plain", "sds"));
        assert_eq!(config["decoder"]["cross_attention"], name == "vsd");
        assert!(out.join("ckpt_6.bin").exists());
    }
}

#[test]
fn gradcheck_command_reports_every_case() {
    let stdout = scenetex_ok(&["gradcheck", "--component", "critic", "--seed", "3"]);
    assert!(stdout.lines().filter(|l| l.starts_with("PASS critic/")).count() >= 2);
    assert!(stdout.trim_end().ends_with("0 failed"));
}
