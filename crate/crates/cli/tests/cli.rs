use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const QUICK: &str = r#"
seed = 3
[synthetic]
frame_width = 192
frame_height = 128
frame_crabs = 6
train_scenes = 2
crabs_per_scene = 3
[tiling]
window = 64
stride = 48
edge_policy = "pad_reflect"
[srr]
architectures = ["srcnn"]
magnification = 2
sweep = [2, 3]
[srr.train]
max_epochs = 2
batch_size = 8
patch_size = 16
[detector]
input_side = 64
[detector.train]
epochs = 2
[density]
cell_size = 64.0
"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("quick.toml"), QUICK).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_crabwatch"))
            .current_dir(self.dir.path())
            .arg("--config")
            .arg("quick.toml")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn manifest_outputs(dir: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["outputs"].as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}

#[test]
fn report_then_tile_merge_density() {
    let sb = Sandbox::new();
    let stdout = sb.ok(&["--out", "rep", "report"]);
    assert!(stdout.contains("tiles"));
    let outputs = manifest_outputs(&sb.path("rep"));
    for f in ["frame.png", "detections.csv", "density.csv", "table_iq.csv", "manifest.json"] {
        assert!(outputs.iter().any(|o| o == f), "{f} missing from manifest");
    }

    sb.ok(&["--out", "tl", "tile", "--frame", "rep/frame.png", "--labels", "rep/frame_labels.txt"]);
    let tiles = std::fs::read_to_string(sb.path("tl/tiles.csv")).unwrap();
    assert!(tiles.starts_with("source_id,x0,y0,side,tile_path\n"));
    let n_tiles = tiles.lines().count() - 1;
    assert_eq!(n_tiles, 12);

    // Ground-truth tile labels stand in for predictions.
    std::fs::create_dir(sb.path("preds")).unwrap();
    for i in 0..n_tiles {
        let labels = std::fs::read_to_string(sb.path(&format!("tl/tiles/frame_{i:04}.txt"))).unwrap();
        let preds: String = labels.lines().map(|l| format!("{l} 0.9\n")).collect();
        std::fs::write(sb.path(&format!("preds/frame_{i:04}.txt")), preds).unwrap();
    }
    sb.ok(&["--out", "mg", "merge", "--tiles", "tl/tiles.csv", "--predictions", "preds"]);
    let merged = std::fs::read_to_string(sb.path("mg/detections.csv")).unwrap().lines().count() - 1;
    assert!(merged > 0);

    let stdout = sb.ok(&["--out", "dn", "density", "--detections", "mg/detections.csv", "--width", "192", "--height", "128"]);
    assert!(stdout.contains(&format!("density: {merged} detections")), "{stdout}");
    let density = std::fs::read_to_string(sb.path("dn/density.csv")).unwrap();
    let total: u64 = density.lines().skip(1).map(|l| l.split(',').nth(8).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total as usize, merged);
    assert!(sb.path("dn/density.png").exists());
}

#[test]
fn training_and_evaluation_commands() {
    let sb = Sandbox::new();
    sb.ok(&["--out", "det", "train-det", "--synthetic", "2", "--variant", "crab-yolo"]);
    assert!(sb.path("det/detector.ckpt").exists());
    sb.ok(&["--out", "ed", "eval-det", "--synthetic", "2", "--detector", "det/detector.ckpt"]);
    let csv = std::fs::read_to_string(sb.path("ed/eval.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("YOLOv8s-1-2-3 (Crab-YOLO),test,"));

    sb.ok(&["--out", "s2", "train-sr", "--synthetic", "2", "--arch", "srcnn", "-m", "2"]);
    sb.ok(&["--out", "s3", "train-sr", "--synthetic", "2", "--arch", "rdn", "-m", "3"]);
    sb.ok(&["--out", "es", "eval-sr", "--synthetic", "2", "--sr", "s2/sr_srcnn_x2.ckpt"]);
    let iq = std::fs::read_to_string(sb.path("es/table_iq.csv")).unwrap();
    assert!(iq.starts_with("Metrics,Bicubic,SRCNN\n"), "{iq}");

    let out = sb.ok(&[
        "--out", "sw", "sweep", "--synthetic", "2", "--lr-factor", "2", "--detector", "det/detector.ckpt", "--sr",
        "s2/sr_srcnn_x2.ckpt", "s3/sr_rdn_x3.ckpt",
    ]);
    assert!(out.contains("x1-LR"));
    let sweep = std::fs::read_to_string(sb.path("sw/table_sweep.csv")).unwrap();
    assert!(sweep.contains("Size (px),32x32,64x64,96x96"), "{sweep}");

    let missing = sb.run(&["--out", "sw2", "sweep", "--synthetic", "2", "--detector", "det/detector.ckpt", "--sr", "s2/sr_srcnn_x2.ckpt"]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn data_commands_write_labelled_sets() {
    let sb = Sandbox::new();
    sb.ok(&["--out", "aug", "augment", "--synthetic", "1"]);
    let pngs = std::fs::read_dir(sb.path("aug/augmented")).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")
    });
    assert_eq!(pngs.count(), 30);
    sb.ok(&["--out", "lr", "degrade", "--data", "aug/augmented", "-m", "2"]);
    let lr = load_png_dims(&sb.path("lr/lr/scene_0000_identity_1.png"));
    assert_eq!(lr, (32, 32));
    assert_eq!(manifest_outputs(&sb.path("lr")).len(), 61);
}

#[test]
fn exit_codes() {
    let sb = Sandbox::new();
    std::fs::write(sb.path("bad.toml"), "bogus = 1\n").unwrap();
    let bad = Command::new(env!("CARGO_BIN_EXE_crabwatch"))
        .current_dir(sb.path(""))
        .args(["--config", "bad.toml", "report"])
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
    assert_eq!(code(&sb.run(&["--out", "x", "eval-det", "--synthetic", "1", "--detector", "nope.ckpt"])), 3);
    assert_eq!(code(&sb.run(&["--out", "x", "tile", "--frame", "nope.png"])), 3);
    assert_eq!(code(&sb.run(&["--out", "x", "train-det"])), 2);
    assert_eq!(code(&sb.run(&["--out", "x", "train-sr", "--synthetic", "1", "--arch", "vdsr"])), 2);

    std::fs::write(sb.path("div.toml"), QUICK.replace("[detector.train]\nepochs = 2", "[detector.train]\nepochs = 2\nlearning_rate = 1e30")).unwrap();
    let div = Command::new(env!("CARGO_BIN_EXE_crabwatch"))
        .current_dir(sb.path(""))
        .args(["--config", "div.toml", "--out", "d", "train-det", "--synthetic", "2"])
        .output()
        .unwrap();
    assert_eq!(code(&div), 4, "{}", String::from_utf8_lossy(&div.stderr));
}

fn load_png_dims(path: &Path) -> (usize, usize) {
    let img = crabwatch::imaging::load_image::<f32>(path).unwrap();
    (img.width(), img.height())
}
