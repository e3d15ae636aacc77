use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use panoforge::grid::{OccupancyGrid, WorldPoint};
use panoforge::image::ColorImage;
use panoforge::projection::EquirectCamera;
use panoforge::renderer::{render_reference, SamplingConfig};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn panoforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panoforge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Builds the fixture room into `dir`, returning (grid, topdown) paths.
fn build_fixture_room(dir: &Path) -> (PathBuf, PathBuf) {
    let grid = dir.join("room.occ");
    let top = dir.join("room_top.png");
    let out = panoforge(&[
        "boxroom", "--spec", p(&fixture("boxroom.json")), "--mpp", "0.05", "--n", "16",
        "--out", p(&grid), "--topdown", p(&top),
    ]);
    stdout_json(&out);
    (grid, top)
}

const GOLDEN_CAM: [f64; 3] = [0.9, 1.1, 1.3];

fn golden_config() -> SamplingConfig {
    SamplingConfig::default().with_samples(64).with_ray_length(6.0)
}

#[test]
fn render_matches_reference_goldens() {
    let dir = tempfile::tempdir().unwrap();
    let (grid_path, top_path) = build_fixture_room(dir.path());
    let prefix = dir.path().join("view");
    let out = panoforge(&[
        "render", "--grid", p(&grid_path), "--topdown", p(&top_path), "--cam", "0.9,1.1,1.3",
        "--pano", "64x32", "--samples", "64", "--ray-depth", "6", "--out-prefix", p(&prefix),
    ]);
    stdout_json(&out);
    let depth = std::fs::read(dir.path().join("view_depth.png")).unwrap();
    let color = std::fs::read(dir.path().join("view_color.png")).unwrap();
    let meta: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("view_meta.json")).unwrap()).unwrap();

    // Goldens come from the sequential reference renderer.
    let grid = OccupancyGrid::load(&grid_path).unwrap();
    let top = ColorImage::load(&top_path).unwrap();
    let [x, y, z] = GOLDEN_CAM;
    let cam = EquirectCamera::new(WorldPoint::new(x, y, z), 64, 32).unwrap();
    let (ref_depth, ref_color) = render_reference(&cam, &grid, &top, &golden_config()).unwrap();
    let (ref_depth, ref_color) = (ref_depth.to_png().unwrap(), ref_color.to_png().unwrap());

    if std::env::var_os("PANOFORGE_BLESS").is_some() {
        std::fs::write(fixture("golden_depth.png"), &ref_depth).unwrap();
        std::fs::write(fixture("golden_color.png"), &ref_color).unwrap();
    }
    let golden_depth = std::fs::read(fixture("golden_depth.png")).unwrap();
    let golden_color = std::fs::read(fixture("golden_color.png")).unwrap();
    assert_eq!(ref_depth, golden_depth, "reference renderer drifted from the goldens");
    assert_eq!(ref_color, golden_color, "reference renderer drifted from the goldens");
    assert_eq!(depth, golden_depth);
    assert_eq!(color, golden_color);

    assert_eq!(meta["grid_checksum"], grid.checksum());
    assert_eq!(meta["sampling"]["samples"], 64);
    assert_eq!(meta["sampling"]["ray_length_color"], 3.0);
    assert_eq!(meta["camera"]["pano_width"], 64);
}

#[test]
fn render_defaults_eye_height() {
    let dir = tempfile::tempdir().unwrap();
    let (grid, top) = build_fixture_room(dir.path());
    let prefix = dir.path().join("eye");
    let out = panoforge(&[
        "render", "--grid", p(&grid), "--topdown", p(&top), "--cam", "1.2,0.9", "--pano", "16x8",
        "--samples", "16", "--out-prefix", p(&prefix),
    ]);
    stdout_json(&out);
    let meta: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("eye_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["camera"]["position"]["z"], 1.6);
}

#[test]
fn render_validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (grid, top) = build_fixture_room(dir.path());
    let prefix = dir.path().join("x");
    let missing = dir.path().join("missing.occ");
    let run = |grid: &Path, pano: &str, cam: &str| {
        panoforge(&[
            "render", "--grid", p(grid), "--topdown", p(&top), "--cam", cam, "--pano", pano,
            "--samples", "8", "--out-prefix", p(&prefix),
        ])
        .status
        .code()
    };
    assert_eq!(run(&missing, "16x8", "1,1,1"), Some(2));
    assert_eq!(run(&grid, "16x16", "1,1,1"), Some(2));
    assert_eq!(run(&grid, "16x8", "1,1,-1"), Some(2));
    assert_eq!(run(&grid, "16x8", "9,1,1"), Some(2));
    assert_eq!(run(&grid, "16x8", "1;1"), Some(2));
    assert_eq!(run(&grid, "16x8", "1,1,1"), Some(0));
}

#[test]
fn metrics_on_identical_images() {
    let out = panoforge(&["metrics", p(&fixture("golden_color.png")), p(&fixture("golden_color.png"))]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), r#"{"psnr":100.0,"ssim":1.0}"#);
}

#[test]
fn floors_on_two_floor_fixture() {
    let v = stdout_json(&panoforge(&["floors", p(&fixture("two_floors.csv")), "--eps", "0.8", "--min-pts", "3"]));
    assert_eq!(v["clusters"], 2);
    assert_eq!(v["noise"], 1);
    let labels: Vec<i64> = serde_json::from_value(v["labels"].clone()).unwrap();
    assert_eq!(labels, [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, -1]);
}

#[test]
fn reinforce_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("g.occ");
    let walls = dir.path().join("walls.png");
    stdout_json(&panoforge(&[
        "boxroom", "--spec", p(&fixture("boxroom.json")), "--n", "8", "--out", p(&grid),
        "--walls", p(&walls),
    ]));
    let once = dir.path().join("once.occ");
    let twice = dir.path().join("twice.occ");
    stdout_json(&panoforge(&["reinforce", "--grid", p(&grid), "--walls", p(&walls), "--floor", "--out", p(&once)]));
    stdout_json(&panoforge(&["reinforce", "--grid", p(&once), "--walls", p(&walls), "--floor", "--out", p(&twice)]));
    assert_eq!(std::fs::read(&once).unwrap(), std::fs::read(&twice).unwrap());
    // The box room already has solid walls and floor.
    assert_eq!(std::fs::read(&grid).unwrap(), std::fs::read(&once).unwrap());
}

#[test]
fn losses_report() {
    let dir = tempfile::tempdir().unwrap();
    let depth = fixture("golden_depth.png");
    let color = fixture("golden_color.png");
    let v = stdout_json(&panoforge(&[
        "losses", "--pred", p(&color), "--gt", p(&color), "--depth-pred", p(&depth), "--depth-gt", p(&depth),
    ]));
    assert_eq!(v["diff"], Value::Null);
    assert_eq!(v["alignment"], 0.0);
    assert_eq!(v["color"], 0.0);
    assert_eq!(v["total"], 0.0);

    let noise = dir.path().join("n.json");
    let pred = dir.path().join("np.json");
    std::fs::write(&noise, "[0.0, 1.0, 2.0, 3.0]").unwrap();
    std::fs::write(&pred, "[1.0, 1.0, 2.0, 1.0]").unwrap();
    let v = stdout_json(&panoforge(&[
        "losses", "--pred", p(&color), "--gt", p(&color), "--depth-pred", p(&depth), "--depth-gt", p(&depth),
        "--noise", p(&noise), "--noise-pred", p(&pred),
    ]));
    assert_eq!(v["diff"], 1.25);
    assert_eq!(v["total"], 1.25);
}

#[test]
fn missing_inputs_and_io_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = panoforge(&["metrics", "/nonexistent/a.png", "/nonexistent/b.png"]);
    assert_eq!(out.status.code(), Some(2));
    let (grid, _) = build_fixture_room(dir.path());
    let out = panoforge(&["reinforce", "--grid", p(&grid), "--floor", "--out", "/nonexistent/dir/out.occ"]);
    assert_eq!(out.status.code(), Some(1));
    let bad = dir.path().join("bad.occ");
    std::fs::write(&bad, b"OCCGRID1 but not really").unwrap();
    let out = panoforge(&["reinforce", "--grid", p(&bad), "--floor", "--out", p(&dir.path().join("o.occ"))]);
    assert_eq!(out.status.code(), Some(2));
}
