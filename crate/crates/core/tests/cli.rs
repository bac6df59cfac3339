//! The `morphofuse` binary: exit codes, flag and config handling.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

use common::read_json;
use morphofuse::mesh::{channel, load_mesh, MeshFormat};
use morphofuse::phantom::{self, PhantomKind, DEFAULT_SEED, WRIST_ERODED_ID};
use morphofuse::volume::{load_mvol, write_mvol, MvolDtype};

fn morphofuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphofuse"))
        .args(args)
        .env_remove("MORPHOFUSE_THREADS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("killed by a signal")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn wrist(root: &Path) -> PathBuf {
    let dir = root.join("wrist");
    let out = morphofuse(&["phantom", "wrist-pair", "--seed", "7", "-o", s(&dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

/// Remove label `id` from an exam, mask and stored mesh alike.
fn drop_label(exam: &Path, id: i32) {
    let path = exam.join("volume.mvol");
    let grid = load_mvol(&path).unwrap();
    let labels = grid
        .labels()
        .unwrap()
        .iter()
        .map(|&l| if l == id { 0 } else { l })
        .collect();
    let grid = grid.with_labels(labels).unwrap();
    write_mvol(&path, &grid, MvolDtype::F32).unwrap();
    let _ = fs::remove_file(exam.join(format!("meshes/bone_{id}.ply")));
}

#[test]
fn phantom_followup_export_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = wrist(tmp.path());
    let bundle = tmp.path().join("bundle");
    let out = morphofuse(&[
        "followup",
        s(&data.join("baseline")),
        s(&data.join("followup")),
        "-o",
        s(&bundle),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "manifest.json",
        "followup_report.json",
        "meshes/bone_1.ply",
        "registration/bone_1.json",
    ] {
        assert!(bundle.join(f).exists(), "{f}");
    }
    let viewer = tmp.path().join("viewer");
    let out = morphofuse(&["export-viewer", s(&bundle), "-o", s(&viewer)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&viewer.join("manifest.json"));
    assert_eq!(manifest["kind"], json!("followup"));
    assert_eq!(manifest["meshes"].as_array().unwrap().len(), 5);
}

#[test]
fn missing_follow_up_bone_is_a_partial_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = wrist(tmp.path());
    drop_label(&data.join("followup"), 3);
    let bundle = tmp.path().join("bundle");
    let out = morphofuse(&[
        "followup",
        s(&data.join("baseline")),
        s(&data.join("followup")),
        "-o",
        s(&bundle),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    let report = read_json(&bundle.join("followup_report.json"));
    assert_eq!(report["skipped"].as_array().unwrap().len(), 1);
    assert_eq!(report["skipped"][0]["bone_id"], json!(3));
    let ids: Vec<i64> = report["bones"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["bone_id"].as_i64().unwrap())
        .collect();
    assert_eq!(ids, vec![1, 2, 4, 5]);
    assert!(!bundle.join("meshes/bone_3.ply").exists());

    // The partial bundle is still complete enough to export.
    let viewer = tmp.path().join("viewer");
    assert_eq!(code(&morphofuse(&["export-viewer", s(&bundle), "-o", s(&viewer)])), 0);
}

#[test]
fn errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    let out = morphofuse(&["followup", s(&missing), s(&missing), "-o", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // Usage errors too, not clap's default of 2.
    assert_eq!(code(&morphofuse(&["followup"])), 1);
    assert_eq!(code(&morphofuse(&["phantom", "knee", "-o", s(tmp.path())])), 1);
    assert_eq!(code(&morphofuse(&["--help"])), 0);

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[followup]\nsearch_radius = 3.0\n").unwrap();
    let out = morphofuse(&[
        "--config",
        s(&cfg),
        "export-viewer",
        s(tmp.path()),
        "-o",
        s(&tmp.path().join("v")),
    ]);
    assert_eq!(code(&out), 1);

    let data = wrist(tmp.path());
    let out = morphofuse(&[
        "followup",
        s(&data.join("baseline")),
        s(&data.join("followup")),
        "--sweep",
        "1,-0.5",
        "-o",
        s(&tmp.path().join("o2")),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn config_file_keys_override_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = wrist(tmp.path());
    let cfg = tmp.path().join("run.toml");
    fs::write(
        &cfg,
        "[followup]\nepsilon_sweep = [0.3]\n\n[followup.icp]\nmax_iters = 40\n",
    )
    .unwrap();
    let bundle = tmp.path().join("bundle");
    let out = morphofuse(&[
        "--config",
        s(&cfg),
        "followup",
        s(&data.join("baseline")),
        s(&data.join("followup")),
        "--sweep",
        "1,0.5",
        "--icp-max-iters",
        "10",
        "--radius",
        "2.5",
        "--criterion",
        "internal",
        "-o",
        s(&bundle),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let params = &read_json(&bundle.join("manifest.json"))["params"];
    assert_eq!(params["epsilon_sweep"], json!([0.3]));
    assert_eq!(params["icp"]["max_iters"], json!(40));
    // Flags the file leaves alone still apply.
    assert_eq!(params["search_radius_mm"], json!(2.5));
    assert_eq!(params["criterion"], json!("internal"));

    let mesh = load_mesh(&bundle.join("meshes/bone_1.ply"), MeshFormat::Ply).unwrap();
    assert!(mesh.has_channel("fused_eps_0.3"));
    assert!(!mesh.has_channel("fused_eps_1"));
}

#[test]
fn thread_count_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let data = wrist(tmp.path());
    let run = |threads: &str, out: &Path| {
        let o = Command::new(env!("CARGO_BIN_EXE_morphofuse"))
            .args([
                "followup",
                s(&data.join("baseline")),
                s(&data.join("followup")),
                "-o",
                s(out),
            ])
            .env("MORPHOFUSE_THREADS", threads)
            .output()
            .unwrap();
        code(&o)
    };
    let one = tmp.path().join("one");
    let three = tmp.path().join("three");
    assert_eq!(run("1", &one), 0);
    assert_eq!(run("3", &three), 0);
    assert_eq!(run("lots", &tmp.path().join("bad")), 1);
    for f in ["followup_report.json", "meshes/bone_2.ply"] {
        assert_eq!(fs::read(one.join(f)).unwrap(), fs::read(three.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn map_and_fuse_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = wrist(tmp.path());
    let baseline = data.join("baseline");

    let mapped = tmp.path().join("mapped.ply");
    let id = WRIST_ERODED_ID.to_string();
    let out = morphofuse(&[
        "map",
        s(&baseline),
        "--label",
        &id,
        "--criterion",
        "internal",
        "-o",
        s(&mapped),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mesh = load_mesh(&mapped, MeshFormat::Ply).unwrap();
    let tex = mesh.channel("tex_internal").unwrap().values();
    // Internal mapping only ever reads voxels of the bone itself.
    let grid = load_mvol(&baseline.join("volume.mvol")).unwrap();
    let inside: Vec<f64> = grid
        .intensities()
        .iter()
        .zip(grid.labels().unwrap())
        .filter(|(_, &l)| l == WRIST_ERODED_ID)
        .map(|(v, _)| *v)
        .collect();
    assert!(tex.iter().all(|v| inside.contains(v)));
    let mean = tex.iter().sum::<f64>() / tex.len() as f64;
    assert!((mean - phantom::BONE).abs() < 0.01, "{mean}");
    let report = read_json(&tmp.path().join("mapped.json"));
    assert_eq!(report["bone_id"], json!(WRIST_ERODED_ID));
    assert_eq!(report["unmapped_count"], json!(0));

    assert_eq!(
        code(&morphofuse(&["map", s(&baseline), "--label", "99", "-o", s(&mapped)])),
        1
    );

    let bundle = tmp.path().join("bundle");
    let out = morphofuse(&["followup", s(&baseline), s(&data.join("followup")), "-o", s(&bundle)]);
    assert_eq!(code(&out), 0);
    let src = bundle.join(format!("meshes/bone_{id}.ply"));
    let src_mesh = load_mesh(&src, MeshFormat::Ply).unwrap();
    let d1 = src_mesh.channel(channel::D1).unwrap().values();
    let d2 = src_mesh.channel(channel::D2).unwrap().values();

    let linear = tmp.path().join("linear.ply");
    let out = morphofuse(&[
        "fuse",
        s(&src),
        "--mode",
        "linear",
        "--sweep",
        "0.7,0.25",
        "-o",
        s(&linear),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fused = load_mesh(&linear, MeshFormat::Ply).unwrap();
    for (name, eps) in [("fused_eps_0.7", 0.7), ("fused_eps_0.25", 0.25)] {
        let f = fused.channel(name).unwrap().values();
        for i in 0..f.len() {
            assert!((f[i] - (d1[i] + eps * d2[i])).abs() < 1e-6, "{name}[{i}]");
        }
    }

    let product = tmp.path().join("product.ply");
    assert_eq!(code(&morphofuse(&["fuse", s(&src), "-o", s(&product)])), 0);
    let f = load_mesh(&product, MeshFormat::Ply).unwrap();
    let f = f.channel(channel::FUSED).unwrap().values();
    for i in 0..f.len() {
        assert!((f[i] - d1[i] * d2[i]).abs() < 1e-6, "fused[{i}]");
    }
}

#[test]
fn single_vertebra_has_no_cohort_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("spine");
    phantom::generate(PhantomKind::SpineHealthy, &data, DEFAULT_SEED).unwrap();
    let grid = load_mvol(&data.join("volume.mvol")).unwrap();
    let ids = grid.label_ids();
    let keep = ids[0];
    for &id in &ids[1..] {
        drop_label(&data, id);
    }

    let bundle = tmp.path().join("bundle");
    let out = morphofuse(&["spine", s(&data), "-o", s(&bundle)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&bundle.join("spine_report.json"));
    assert_eq!(report["vertebrae"].as_array().unwrap().len(), 1);
    assert_eq!(report["vertebrae"][0]["vertebra_id"], json!(keep));
    assert_eq!(report["outliers"], json!([]));
    let records = report["records"].as_array().unwrap();
    assert_eq!(records.len(), 9);
    assert!(records.iter().all(|r| r["outlier_flag"] == json!(false)));
    assert!(bundle.join("spine_report.csv").exists());
}

#[test]
fn point_to_triangle_distances_never_exceed_vertex_distances() {
    let tmp = tempfile::tempdir().unwrap();
    let data = wrist(tmp.path());
    let (base, follow) = (data.join("baseline"), data.join("followup"));
    let vertex = tmp.path().join("vertex");
    let surface = tmp.path().join("surface");
    assert_eq!(
        code(&morphofuse(&["followup", s(&base), s(&follow), "-o", s(&vertex)])),
        0
    );
    let out = morphofuse(&[
        "followup",
        s(&base),
        s(&follow),
        "--point-to-triangle",
        "-o",
        s(&surface),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        read_json(&surface.join("manifest.json"))["params"]["distance"],
        json!("point_to_triangle")
    );
    let mut strictly_shorter = 0;
    for id in 1..=5 {
        let f = format!("meshes/bone_{id}.ply");
        let a = load_mesh(&vertex.join(&f), MeshFormat::Ply).unwrap();
        let b = load_mesh(&surface.join(&f), MeshFormat::Ply).unwrap();
        let (a, b) = (a.channel(channel::D2_MM).unwrap(), b.channel(channel::D2_MM).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!(y <= x, "bone {id}: {y} > {x}");
            strictly_shorter += usize::from(y < x);
        }
    }
    assert!(strictly_shorter > 0);
}
