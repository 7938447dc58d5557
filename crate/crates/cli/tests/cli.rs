use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lwdd_core::bundle::{ModelBundle, Provenance};
use lwdd_core::data::{write_idx, IdxFile};
use lwdd_core::fixed::QFormat;
use lwdd_core::frame::{GrayImage, RgbImage};
use lwdd_core::nn::{build_lwdd, WeightSet};
use lwdd_core::pnm::{parse_pnm, write_pgm, write_ppm, PnmImage};
use lwdd_core::quant::{quantize, ReductionProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lwdd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lwdd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("run lwdd")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn prov() -> Provenance {
    Provenance {
        seed: 0,
        source: "cli test".into(),
    }
}

/// Tiny MNIST-shaped dataset under `dir` (both splits).
fn write_fake_mnist(dir: &Path, n: usize) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for prefix in ["train", "t10k"] {
        let images: Vec<Vec<u8>> = (0..n).map(|_| (0..784).map(|_| rng.gen()).collect()).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let img = IdxFile::Images {
            rows: 28,
            cols: 28,
            images,
        };
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), write_idx(&img)).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), write_idx(&IdxFile::Labels(labels))).unwrap();
    }
}

fn random_float_bundle(dir: &Path) {
    let model = build_lwdd(10).unwrap();
    let w = WeightSet::he_init(&model, &mut ChaCha8Rng::seed_from_u64(4));
    ModelBundle::from_float(&model, &w, prov()).unwrap().save(dir).unwrap();
}

#[test]
fn cycles_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lwdd(&["cycles", "--conv-blocks", "1"], tmp.path());
    assert!(o.status.success());
    let total: u64 = stdout(&o)
        .lines()
        .find(|l| l.starts_with("Total"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!(total.abs_diff(236_746) <= 5);
    let o = lwdd(&["cycles", "--conv-blocks", "4", "--csv", "c.csv"], tmp.path());
    assert!(o.status.success());
    let csv = fs::read_to_string(tmp.path().join("c.csv")).unwrap();
    assert!(csv.starts_with("stage,cycles\n"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(lwdd(&["--help"], tmp.path()).status.code(), Some(0));
    assert_eq!(lwdd(&["cycles", "--frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(lwdd(&[], tmp.path()).status.code(), Some(1));
    assert_eq!(
        lwdd(&["quantize", "--model", "m", "--bits", "12", "--profile", "median", "--out", "q"], tmp.path())
            .status
            .code(),
        Some(1)
    );
    let o = lwdd(&["export-packed", "--model", "missing", "--out", "x"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing"));
    assert_eq!(lwdd(&["cycles", "--conv-blocks", "0"], tmp.path()).status.code(), Some(1));
}

#[test]
fn infer_black_image_with_zero_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let model = build_lwdd(10).unwrap();
    let qm = quantize(
        &model,
        &WeightSet::zeros(&model),
        &ReductionProfile::identity(&model),
        QFormat::new(12).unwrap(),
    )
    .unwrap();
    ModelBundle::from_quantized(&qm, prov()).unwrap().save(&tmp.path().join("zero")).unwrap();
    write_pgm(&tmp.path().join("black.pgm"), &GrayImage::filled(28, 28, 0)).unwrap();
    let o = lwdd(&["infer", "--model", "zero", "--image", "black.pgm", "--dump", "d.txt"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("class 0\n"));
    assert!(out.contains("overflow 0\n"));
    let dump = fs::read_to_string(tmp.path().join("d.txt")).unwrap();
    assert!(dump.starts_with("# layer 0 (4,28,28)\n0\n"));
    assert_eq!(dump.lines().filter(|l| l.starts_with("# layer")).count(), 10);
}

#[test]
fn preprocess_camera_frame() {
    let tmp = tempfile::tempdir().unwrap();
    write_ppm(&tmp.path().join("f.ppm"), &RgbImage::filled(320, 240, [50, 100, 200])).unwrap();
    let o = lwdd(&["preprocess", "--image", "f.ppm", "--out", "o.pgm"], tmp.path());
    assert!(o.status.success());
    let PnmImage::Gray(g) = parse_pnm(&fs::read(tmp.path().join("o.pgm")).unwrap()).unwrap() else {
        panic!("expected a graymap")
    };
    assert_eq!((g.width, g.height), (28, 28));
    assert!(g.data.iter().all(|&v| v == 103));
    write_pgm(&tmp.path().join("odd.pgm"), &GrayImage::filled(30, 30, 0)).unwrap();
    assert_eq!(
        lwdd(&["preprocess", "--image", "odd.pgm", "--out", "x.pgm"], tmp.path()).status.code(),
        Some(2)
    );
}

#[test]
fn quantize_export_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    write_fake_mnist(&p.join("mnist"), 6);
    random_float_bundle(&p.join("float"));

    let o = lwdd(&["quantize", "--model", "float", "--bits", "12", "--out", "q12"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = lwdd(
        &[
            "quantize",
            "--model",
            "float",
            "--bits",
            "12",
            "--profile",
            "percent:0.05",
            "--calib",
            "mnist/train-images-idx3-ubyte",
            "--out",
            "qcal",
        ],
        p,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        lwdd(&["quantize", "--model", "float", "--bits", "12", "--profile", "three-sigma", "--out", "x"], p)
            .status
            .code(),
        Some(1)
    );

    let o = lwdd(&["export-packed", "--model", "q12", "--out", "w.hex"], p);
    assert!(o.status.success());
    let text = fs::read_to_string(p.join("w.hex")).unwrap();
    let words: Vec<&str> = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("layer")).collect();
    assert_eq!(words.len(), 520);
    assert!(words.iter().all(|w| w.len() == 32));
    assert!(text.lines().nth(1).unwrap() == "layer 0 blocks 4");

    let args = [
        "sweep",
        "--model",
        "float",
        "--bits-from",
        "10",
        "--bits-to",
        "18",
        "--strategy",
        "both",
        "--data-dir",
        "mnist",
    ];
    let a = lwdd(&args, p);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let csv = stdout(&a);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "bit_width,per_operation_pct,at_end_pct");
    assert_eq!(lines.len(), 10);
    assert!(lines[1].starts_with("10,"));
    assert!(lines[9].starts_with("18,"));
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 3));
    // deterministic output
    assert_eq!(stdout(&lwdd(&args, p)), csv);
    assert_eq!(
        lwdd(&["sweep", "--model", "float", "--bits-from", "18", "--bits-to", "10"], p).status.code(),
        Some(1)
    );
}

#[test]
fn train_and_gradcheck() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    write_fake_mnist(&p.join("mnist"), 40);
    let args = [
        "train",
        "--data-dir",
        "mnist",
        "--epochs",
        "1",
        "--out",
        "m",
        "--trace",
        "t.csv",
        "--seed",
        "5",
    ];
    let o = lwdd(&args, p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(p.join("t.csv")).unwrap();
    assert!(trace.starts_with("epoch,train_acc,test_acc\n1,"));
    let first = ModelBundle::load(&p.join("m")).unwrap();
    assert!(lwdd(&args, p).status.success());
    assert_eq!(ModelBundle::load(&p.join("m")).unwrap(), first);

    let o = lwdd(&["gradcheck", "--models", "3", "--seed", "2"], p);
    assert!(o.status.success());
    let err: f64 = stdout(&o).trim().rsplit(' ').next().unwrap().parse().unwrap();
    assert!(err < 1e-4);
}
