use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ndarray::Array2;

use n2n_seismic::io::grid_file::sidecar_path;
use n2n_seismic::io::report::read_eval_csv;
use n2n_seismic::io::{read_grid, write_grid, Dtype};
use n2n_seismic::SeismicSection;

const BIN: &str = env!("CARGO_BIN_EXE_n2n-seismic");

const TINY: &str = "seed = 2
[model]
feature_dim = 8
n_residual_units = 2
steps_per_epoch = 4
batch_size = 4
patch_size = 16
max_epochs = 2
learning_rate = 0.001
validation_pairs = 8
[corpus]
procedural_count = 3
procedural_size = 40
";

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("N2N_SEISMIC_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = cli(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn grid(dir: &Path, name: &str) -> SeismicSection {
    read_grid(&dir.join(name)).unwrap()
}

#[test]
fn wedge_gen_defaults_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["wedge-gen", "--out", "w.grid"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("200x51"));
    assert_eq!(grid(d, "w.grid").dim(), (200, 51));

    fs::write(d.join("ten.toml"), "[wedge]\nn_traces = 10\n").unwrap();
    ok(d, &["wedge-gen", "--out", "t.grid", "--config", "ten.toml"]);
    assert_eq!(grid(d, "t.grid").dim(), (200, 10));
}

#[test]
fn config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("ten.toml"), "[wedge]\nn_traces = 12\n").unwrap();
    let out = Command::new(BIN)
        .current_dir(d)
        .env("N2N_SEISMIC_CONFIG", d.join("ten.toml"))
        .args(["wedge-gen", "--out", "e.grid"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(grid(d, "e.grid").dim(), (200, 12));
}

#[test]
fn invalid_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[wedge]\nn_tracez = 10\n").unwrap();
    let out = cli(d, &["wedge-gen", "--out", "w.grid", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n_tracez"));
    assert!(!d.join("w.grid").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(dir.path(), &["wedge-gen"]).status.code(), Some(1));
    assert_eq!(cli(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(cli(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["fxdecon", "--in", "absent.grid", "--out", "x.grid"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_zero_sigma_keeps_payload() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["wedge-gen", "--out", "w.grid"]);
    ok(d, &["corrupt", "--in", "w.grid", "--out", "z.grid", "--sigma", "0"]);
    assert_eq!(fs::read(d.join("w.grid")).unwrap(), fs::read(d.join("z.grid")).unwrap());
    let prov = grid(d, "z.grid").provenance;
    assert_eq!(prov.len(), 2);
    assert!(prov[1].starts_with("corrupt:") && prov[1].contains("sigma=0"));
}

#[test]
fn corrupt_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["wedge-gen", "--out", "w.grid"]);
    for (name, seed) in [("a.grid", "4"), ("b.grid", "4"), ("c.grid", "5")] {
        ok(d, &["corrupt", "--in", "w.grid", "--out", name, "--sigma", "0.05", "--seed", seed]);
    }
    let read = |n: &str| fs::read(d.join(n)).unwrap();
    assert_eq!(read("a.grid"), read("b.grid"));
    assert_ne!(read("a.grid"), read("c.grid"));
}

#[test]
fn corrupt_from_row_and_renormalize() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["wedge-gen", "--out", "w.grid"]);
    ok(d, &["corrupt", "--in", "w.grid", "--out", "r.grid", "--sigma", "0.1", "--from-row", "150", "--renormalize"]);
    let clean = grid(d, "w.grid");
    let noisy = grid(d, "r.grid");
    assert_eq!(noisy.max_abs(), 1.0);
    let scale = clean.data()[(60, 25)] / noisy.data()[(60, 25)];
    for i in 0..150 {
        for j in 0..51 {
            assert!((noisy.data()[(i, j)] * scale - clean.data()[(i, j)]).abs() < 1e-12);
        }
    }
    assert!(noisy.provenance.last().unwrap().starts_with("normalize:"));
}

#[test]
fn denoise_schedules_follow_t() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["wedge-gen", "--out", "w.grid"]);
    ok(d, &["denoise", "--in", "w.grid", "--out", "t2.grid", "--identity", "--t", "2"]);
    ok(d, &["denoise", "--in", "w.grid", "--out", "t5.grid", "--identity", "--t", "5"]);
    ok(d, &["denoise", "--in", "w.grid", "--out", "s.grid", "--identity", "--schedule", "0.3,0.9"]);
    let find = |name: &str| {
        grid(d, name)
            .provenance
            .into_iter()
            .find(|p| p.starts_with("clip-denoise:"))
            .unwrap()
    };
    assert!(find("t2.grid").contains("[0.5, 1.0]"), "{}", find("t2.grid"));
    assert!(find("t5.grid").contains("[0.2, 0.4, 0.6, 0.8, 1.0]"), "{}", find("t5.grid"));
    assert!(find("s.grid").contains("[0.3, 0.9]"));
}

#[test]
fn identity_denoise_returns_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["wedge-gen", "--out", "w.grid"]);
    ok(d, &["corrupt", "--in", "w.grid", "--out", "n.grid", "--sigma", "0.1", "--seed", "1"]);
    for mode in ["n2n-seismic", "n2n-image"] {
        ok(d, &["denoise", "--in", "n.grid", "--out", "o.grid", "--identity", "--mode", mode]);
        let (a, b) = (grid(d, "n.grid"), grid(d, "o.grid"));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12, "{mode}");
        }
    }
}

#[test]
fn denoise_needs_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["wedge-gen", "--out", "w.grid"]);
    assert_eq!(cli(d, &["denoise", "--in", "w.grid", "--out", "o.grid"]).status.code(), Some(1));
    let out = cli(d, &["denoise", "--in", "w.grid", "--out", "o.grid", "--checkpoint", "missing.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fxdecon_zeros_and_too_few_traces() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let zeros = SeismicSection::from_time(Array2::zeros((128, 20)), 0.002).unwrap();
    write_grid(&d.join("z.grid"), &zeros, Dtype::F64).unwrap();
    ok(d, &["fxdecon", "--in", "z.grid", "--out", "zf.grid"]);
    assert!(grid(d, "zf.grid").data().iter().all(|&v| v == 0.0));

    let narrow = SeismicSection::from_time(Array2::ones((128, 5)), 0.002).unwrap();
    write_grid(&d.join("n.grid"), &narrow, Dtype::F64).unwrap();
    let out = cli(d, &["fxdecon", "--in", "n.grid", "--out", "nf.grid"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("traces"));
}

#[test]
fn eval_self_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["wedge-gen", "--out", "w.grid"]);
    ok(d, &["eval", "--clean", "w.grid", "--test", "w.grid", "--out-csv", "e.csv"]);
    let text = fs::read_to_string(d.join("e.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "label,mse,snr_db,corrcoef,phase_0_10,phase_10_20,phase_20_30,phase_30_40,phase_40_50,phase_50_60"
    );
    assert_eq!(text.lines().nth(1).unwrap(), "w.grid,0,inf,1,1,1,1,1,1,1");
    let reports = read_eval_csv(text.as_bytes()).unwrap();
    assert_eq!(reports[0].snr_db, f64::INFINITY);

    ok(d, &["eval", "--clean", "w.grid", "--test", "w.grid", "--out-csv", "again.csv"]);
    assert_eq!(text, fs::read_to_string(d.join("again.csv")).unwrap());
}

#[test]
fn eval_custom_bands_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["wedge-gen", "--out", "w.grid"]);
    ok(d, &["corrupt", "--in", "w.grid", "--out", "n.grid", "--sigma", "0.05"]);
    let out = ok(d, &["eval", "--clean", "w.grid", "--test", "n.grid", "w.grid", "--bands", "5-25,25-45"]);
    let reports = read_eval_csv(out.stdout.as_slice()).unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[0].phase_band_corr.len(), 2);
    assert!(reports[0].snr_db.is_finite() && reports[0].mse > 0.0);
}

#[test]
fn csv_input_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut text = String::from("a,b,c\n");
    for i in 0..20 {
        text.push_str(&format!("{},{},{}\n", i, -i, i * 2));
    }
    fs::write(d.join("g.csv"), text).unwrap();
    ok(d, &["corrupt", "--in", "g.csv", "--csv-interval", "0.004", "--out", "g.grid", "--sigma", "0"]);
    let s = grid(d, "g.grid");
    assert_eq!(s.dim(), (20, 3));
    assert_eq!(s.sample_interval, 0.004);
    assert_eq!(s.data()[(19, 2)], 38.0);
}

#[test]
fn render_constant_and_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let flat = SeismicSection::from_time(Array2::from_elem((30, 12), 0.25), 0.002).unwrap();
    write_grid(&d.join("c.grid"), &flat, Dtype::F32).unwrap();
    ok(d, &["render", "--in", "c.grid", "--out-png", "c.png"]);
    let img = image::open(d.join("c.png")).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (12, 30));
    assert!(img.pixels().all(|p| p.0[0] == 128));

    ok(d, &["wedge-gen", "--out", "w.grid"]);
    ok(d, &["render", "--in", "w.grid", "--out-png", "a.png", "--cmap", "seismic", "--clip-percentile", "95"]);
    ok(d, &["render", "--in", "w.grid", "--out-png", "b.png", "--cmap", "seismic", "--clip-percentile", "95"]);
    assert_eq!(fs::read(d.join("a.png")).unwrap(), fs::read(d.join("b.png")).unwrap());
    assert_eq!(image::open(d.join("a.png")).unwrap().to_rgb8().dimensions(), (51, 200));
}

#[test]
fn train_resume_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    ok(d, &["train", "--procedural", "--out-checkpoint", "full.ckpt", "--config", "tiny.toml"]);
    ok(d, &["train", "--procedural", "--out-checkpoint", "half.ckpt", "--config", "tiny.toml", "--epochs", "1"]);
    ok(d, &["train", "--resume", "half.ckpt", "--out-checkpoint", "rest.ckpt", "--config", "tiny.toml"]);
    assert_eq!(fs::read(d.join("full.ckpt")).unwrap(), fs::read(d.join("rest.ckpt")).unwrap());
    let log = fs::read_to_string(d.join("full.ckpt.log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "epoch,train_loss,val_mse,wall_time_s");
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn train_from_image_directory() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::create_dir(d.join("imgs")).unwrap();
    for k in 0..3u32 {
        image::GrayImage::from_fn(40, 36, |x, y| image::Luma([((x * 7 + y * (k + 3)) % 256) as u8]))
            .save(d.join("imgs").join(format!("{k}.png")))
            .unwrap();
    }
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    ok(d, &["train", "--corpus-dir", "imgs", "--out-checkpoint", "m.ckpt", "--config", "tiny.toml"]);
    assert!(d.join("m.ckpt").exists());

    let out = cli(d, &["train", "--corpus-dir", "nowhere", "--out-checkpoint", "x.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere"));
}

#[test]
fn divergence_exits_three_and_keeps_partial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("hot.toml"), TINY.replace("learning_rate = 0.001", "learning_rate = 1e20")).unwrap();
    let out = cli(d, &["train", "--procedural", "--out-checkpoint", "m.ckpt", "--config", "hot.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("divergence"));
    assert!(d.join("m.ckpt.diverged").exists());
    assert!(!d.join("m.ckpt").exists());
}

#[test]
fn trained_checkpoint_denoises_with_lineage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    ok(d, &["wedge-gen", "--out", "w.grid"]);
    ok(d, &["corrupt", "--in", "w.grid", "--out", "n.grid", "--sigma", "0.07"]);
    ok(d, &["train", "--procedural", "--out-checkpoint", "m.ckpt", "--config", "tiny.toml"]);
    ok(d, &["denoise", "--in", "n.grid", "--out", "o.grid", "--checkpoint", "m.ckpt"]);
    let out = grid(d, "o.grid");
    assert_eq!(out.dim(), (200, 51));
    let side = fs::read_to_string(sidecar_path(&d.join("o.grid"))).unwrap();
    for stage in ["wedge-gen", "corrupt", "train", "clip-denoise", "denoise"] {
        assert!(side.contains(&format!("\"{stage}:")), "{stage} missing from {side}");
    }
}
