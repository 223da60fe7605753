use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use teledepth::data::{
    load_depth, load_pfm, save_depth, save_ppm, synth_scene, synth_stereo_pair, to_log_depth,
    SceneSpec,
};
use teledepth::{depth_metrics, DepthMap, HierarchyConfig, HierarchyModel, Tensor};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_teledepth"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

const TINY: &str = "base_channels = 4\nlevels = 2\nsynth_height = 16\nsynth_width = 24\nwindow_radius = 2\n";

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.cfg");
    fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn zero_epochs_writes_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = run(
        &["train", "--synthetic", "2", "--epochs", "0", "--seed", "3", "--config", cfg.to_str().unwrap(), "-o", "m.hhd"],
        dir.path(),
    );
    ok(&out);
    let hc = HierarchyConfig { base_channels: 4, levels: 2, ..HierarchyConfig::default() };
    let init = HierarchyModel::new(&hc, 3).unwrap();
    let mut expected = Vec::new();
    init.write_to(&mut expected).unwrap();
    assert_eq!(fs::read(dir.path().join("m.hhd")).unwrap(), expected);
    let log = fs::read_to_string(dir.path().join("m.loss.csv")).unwrap();
    assert_eq!(log.trim(), "epoch,l1,l2,l3,total");
}

#[test]
fn training_log_has_one_finite_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    ok(&run(
        &["train", "--synthetic", "3", "--epochs", "2", "--config", cfg.to_str().unwrap(), "-o", "m.hhd", "--log", "l.csv"],
        dir.path(),
    ));
    let log = fs::read_to_string(dir.path().join("l.csv")).unwrap();
    let rows: Vec<&str> = log.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r.split(',').skip(1).all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["train", "-o", "m.hhd"], dir.path())), 2);
    fs::write(dir.path().join("bad.cfg"), "epoch = 3\n").unwrap();
    let out = run(&["train", "--synthetic", "1", "--config", "bad.cfg", "-o", "m.hhd"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));
    assert_eq!(code(&run(&["frobnicate"], dir.path())), 2);
}

fn write_sample(dir: &Path, id: &str, seed: u64) -> teledepth::Sample {
    let spec = SceneSpec { levels: 2, ..SceneSpec::new(seed, 16, 24) };
    let s = synth_scene(&spec).unwrap().sample;
    save_ppm(&s.wide_rgb, dir.join(format!("{id}_rgb.ppm"))).unwrap();
    save_depth(&s.gt_depth, dir.join(format!("{id}_depth.pfm"))).unwrap();
    s
}

#[test]
fn infer_writes_all_stages_and_final_beats_initial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    fs::write(&cfg, "base_channels = 8\nloss = combined\n").unwrap();
    ok(&run(
        &["train", "--synthetic", "32", "--epochs", "12", "--seed", "1", "--config", cfg.to_str().unwrap(), "-o", "toy.hhd"],
        dir.path(),
    ));

    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    let s = synth_scene(&SceneSpec::new(4242, 48, 64)).unwrap().sample;
    save_ppm(&s.wide_rgb, data.join("a_rgb.ppm")).unwrap();
    save_depth(&s.gt_depth, data.join("a_depth.pfm")).unwrap();
    let tele = s.gt_depth.crop(&s.region).unwrap();
    save_depth(&tele, dir.path().join("tele.pfm")).unwrap();
    ok(&run(
        &["infer", "toy.hhd", "data/a_rgb.ppm", "--tele-depth", "tele.pfm", "-o", "pred"],
        dir.path(),
    ));
    for stage in ["initial", "propagated", "final"] {
        assert!(dir.path().join(format!("pred_{stage}.ppm")).exists());
        let m = load_depth(dir.path().join(format!("pred_{stage}.pfm"))).unwrap();
        assert_eq!(m.dims(), (48, 64));
    }
    let gt = load_depth(data.join("a_depth.pfm")).unwrap();
    let rmse = |stage: &str| {
        let m = load_depth(dir.path().join(format!("pred_{stage}.pfm"))).unwrap();
        depth_metrics(&m, &gt).unwrap().rmse
    };
    let (initial, fin) = (rmse("initial"), rmse("final"));
    assert!(fin <= initial, "final {fin} vs initial {initial}");
}

#[test]
fn infer_with_tele_pair_runs_stereo_first() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    ok(&run(
        &["train", "--synthetic", "1", "--epochs", "0", "--config", cfg.to_str().unwrap(), "-o", "m.hhd"],
        dir.path(),
    ));
    let spec = SceneSpec { levels: 2, stereo: true, ..SceneSpec::new(5, 32, 48) };
    let scene = synth_scene(&spec).unwrap();
    let pair = scene.tele_pair.unwrap();
    save_ppm(&scene.sample.wide_rgb, dir.path().join("wide.ppm")).unwrap();
    save_ppm(&pair.left, dir.path().join("l.ppm")).unwrap();
    save_ppm(&pair.right, dir.path().join("r.ppm")).unwrap();
    fs::write(dir.path().join("s.cfg"), format!("{TINY}d_max = 14\n")).unwrap();
    ok(&run(
        &["--config", "s.cfg", "infer", "m.hhd", "wide.ppm", "--tele-pair", "l.ppm", "r.ppm", "-o", "p"],
        dir.path(),
    ));
    let t = load_depth(dir.path().join("p_telestereo.pfm")).unwrap();
    assert_eq!(t.dims(), (16, 24));
    assert!(dir.path().join("p_final.pfm").exists());
}

#[test]
fn infer_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    ok(&run(
        &["train", "--synthetic", "1", "--epochs", "0", "--config", cfg.to_str().unwrap(), "-o", "m.hhd"],
        dir.path(),
    ));
    let s = write_sample(dir.path(), "a", 1);
    save_depth(&s.gt_depth.crop(&s.region).unwrap(), dir.path().join("tele.pfm")).unwrap();

    let bytes = fs::read(dir.path().join("m.hhd")).unwrap();
    fs::write(dir.path().join("bad.hhd"), &bytes[..bytes.len() / 2]).unwrap();
    let out = run(&["infer", "bad.hhd", "a_rgb.ppm", "--tele-depth", "tele.pfm", "-o", "p"], dir.path());
    assert_eq!(code(&out), 3);

    // 18 rows is not a multiple of 4, as a 2-level model needs
    save_ppm(&Tensor::full([3, 18, 24], 0.5), dir.path().join("odd.ppm")).unwrap();
    let out = run(&["infer", "m.hhd", "odd.ppm", "--tele-depth", "tele.pfm", "-o", "p"], dir.path());
    assert_eq!(code(&out), 4);

    save_depth(&DepthMap::full(3, 3, 1.0), dir.path().join("small.pfm")).unwrap();
    let out = run(&["infer", "m.hhd", "a_rgb.ppm", "--tele-depth", "small.pfm", "-o", "p"], dir.path());
    assert_eq!(code(&out), 4);
}

fn eval_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("name,"))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn eval_oracle_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let c = cfg.to_str().unwrap();
    ok(&run(&["eval", "--oracle", "--synthetic", "3", "--config", c, "-o", "o.csv"], dir.path()));
    let text = fs::read_to_string(dir.path().join("o.csv")).unwrap();
    assert!(text.starts_with('#'));
    assert!(text.contains("\nname,rmse,rel,d1,d2,d3\n"));
    let rows = eval_rows(&dir.path().join("o.csv"));
    assert_eq!(rows.len(), 3 * 3 + 3);
    for r in &rows {
        let v: Vec<f64> = r[1..].iter().map(|x| x.parse().unwrap()).collect();
        assert_eq!(v, vec![0.0, 0.0, 100.0, 100.0, 100.0]);
    }

    ok(&run(&["train", "--synthetic", "1", "--epochs", "0", "--config", c, "-o", "m.hhd"], dir.path()));
    for name in ["e1.csv", "e2.csv"] {
        ok(&run(&["eval", "--checkpoint", "m.hhd", "--synthetic", "2", "--seed", "4", "--config", c, "-o", name], dir.path()));
    }
    assert_eq!(fs::read(dir.path().join("e1.csv")).unwrap(), fs::read(dir.path().join("e2.csv")).unwrap());
    assert_eq!(eval_rows(&dir.path().join("e1.csv")).len(), 2 * 3 + 3);
}

#[test]
fn eval_reads_dataset_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    for (i, id) in ["x", "y"].iter().enumerate() {
        write_sample(dir.path(), id, i as u64);
    }
    ok(&run(&["eval", "--oracle", ".", "--config", cfg.to_str().unwrap(), "-o", "o.csv"], dir.path()));
    let rows = eval_rows(&dir.path().join("o.csv"));
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[0][0], "x/initial");
}

#[test]
fn correlate_linear_family_and_too_few_maps() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w) = (12, 16);
    let base: Vec<f64> = (0..h * w).map(|i| 1.0 + ((i * 7919) % 13) as f64 * 0.25).collect();
    for (i, c) in [0.5, 1.0, 1.7, 3.0].iter().enumerate() {
        let m = DepthMap::dense(h, w, base.iter().map(|b| c * b).collect()).unwrap();
        save_depth(&m, dir.path().join(format!("s{i}_depth.pfm"))).unwrap();
        save_ppm(&Tensor::full([3, h, w], 0.5), dir.path().join(format!("s{i}_rgb.ppm"))).unwrap();
    }
    ok(&run(&["correlate", ".", "--resize", "16x12", "--crop", "8x8", "-o", "c"], dir.path()));
    let (gh, gw, grid) = load_pfm(dir.path().join("c_corr.pfm")).unwrap();
    assert_eq!((gh, gw), (8, 8));
    assert!(grid.iter().all(|v| (v - 1.0).abs() < 1e-6), "{grid:?}");
    assert!(dir.path().join("c_corr.ppm").exists());

    for i in 2..4 {
        fs::remove_file(dir.path().join(format!("s{i}_rgb.ppm"))).unwrap();
    }
    assert_eq!(code(&run(&["correlate", ".", "-o", "c2"], dir.path())), 4);
}

#[test]
fn correlate_default_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    ok(&run(&["correlate", "--synthetic", "3", "--config", cfg.to_str().unwrap(), "-o", "c"], dir.path()));
    let (h, w, _) = load_pfm(dir.path().join("c_corr.pfm")).unwrap();
    assert_eq!((h, w), (240, 240));
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn stereo_command() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.cfg"), "d_max = 16\n").unwrap();
    let spec = SceneSpec { objects: 0, ..SceneSpec::new(2, 32, 48) };
    let pair = synth_stereo_pair(&spec).unwrap();
    save_ppm(&pair.left, dir.path().join("l.ppm")).unwrap();
    save_ppm(&pair.right, dir.path().join("r.ppm")).unwrap();
    ok(&run(&["stereo", "l.ppm", "r.ppm", "--config", "s.cfg", "-o", "d"], dir.path()));
    let (_, _, disp) = load_pfm(dir.path().join("d_disparity.pfm")).unwrap();
    let err: Vec<f64> = disp.iter().zip(&pair.disparity).map(|(a, b)| (a - b).abs()).collect();
    assert!(median(err) <= 1.0);
    assert!(dir.path().join("d_logdepth.pfm").exists());
    assert!(dir.path().join("d_disparity.ppm").exists());

    ok(&run(&["stereo", "l.ppm", "l.ppm", "--config", "s.cfg", "-o", "z"], dir.path()));
    let (_, _, zero) = load_pfm(dir.path().join("z_disparity.pfm")).unwrap();
    assert!(median(zero.iter().map(|d| d.abs()).collect()) < 0.5);

    save_ppm(&Tensor::full([3, 32, 40], 0.2), dir.path().join("narrow.ppm")).unwrap();
    assert_eq!(code(&run(&["stereo", "l.ppm", "narrow.ppm", "-o", "m"], dir.path())), 4);
}

#[test]
fn log_depth_of_tele_file_matches_crop() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_sample(dir.path(), "a", 9);
    let crop = s.gt_depth.crop(&s.region).unwrap();
    save_depth(&crop, dir.path().join("t.pfm")).unwrap();
    let back = to_log_depth(&load_depth(dir.path().join("t.pfm")).unwrap());
    for (a, b) in back.values().iter().zip(s.tele_depth.values()) {
        assert!((a - b).abs() < 1e-6);
    }
}
