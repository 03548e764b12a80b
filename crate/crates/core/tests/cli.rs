//! End-to-end runs of the `hwformer` binary.

use std::path::Path;
use std::process::{Command, Output};

use hwformer::eval::image::{Colorspace, ImageBuffer};
use hwformer::eval::pnm::write_image;
use hwformer::model::{Model, ModelConfig};
use hwformer::train::Checkpoint;

fn hwformer(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hwformer"))
        .args(args)
        .current_dir(dir)
        .env_remove("HWF_THREADS")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn selftest_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = hwformer(&["selftest"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stdout));
    assert!(text(&o.stdout).contains("6 passed, 0 failed"));
}

#[test]
fn bench_rows_follow_the_window_list() {
    let dir = tempfile::tempdir().unwrap();
    let o = hwformer(&["bench", "--windows", "4,6,8,48,96", "--image", "96", "--format", "csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = text(&o.stdout);
    let flops: Vec<u64> = out
        .lines()
        .filter(|l| l.starts_with("sweep,"))
        .map(|l| l.split(',').nth(9).unwrap().parse().unwrap())
        .collect();
    assert_eq!(flops.len(), 5);
    assert!(flops.windows(2).all(|w| w[0] <= w[1]), "{flops:?}");
}

#[test]
fn zero_checkpoint_denoise_returns_input() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::<f32>::zeros(ModelConfig::toy()).unwrap();
    Checkpoint::from_model(&model, None, None).save(dir.path().join("zero.hwf")).unwrap();
    let pixels: Vec<u8> = (0..37 * 23).map(|i| (i * 97 % 256) as u8).collect();
    let img = ImageBuffer::from_u8(37, 23, Colorspace::Gray, pixels).unwrap();
    write_image(&img, dir.path().join("in.pgm")).unwrap();
    for extra in [&[][..], &["--tile", "16", "--overlap", "4"][..]] {
        let mut args = vec!["denoise", "--checkpoint", "zero.hwf", "--input", "in.pgm", "--out", "out.pgm"];
        args.extend_from_slice(extra);
        let o = hwformer(&args, dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
        let a = std::fs::read(dir.path().join("in.pgm")).unwrap();
        let b = std::fs::read(dir.path().join("out.pgm")).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn training_is_reproducible_single_threaded() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let o = hwformer(
            &["train", "--preset", "toy", "--synthetic", "6", "--max-steps", "6", "--threads", "1", "--seed", "3", "--out", name],
            dir.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
        (std::fs::read(dir.path().join(name)).unwrap(), text(&o.stdout))
    };
    let (a, log_a) = run("a.hwf");
    let (b, log_b) = run("b.hwf");
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    assert!(log_a.starts_with("epoch,step,lr,loss,val_psnr\n"));
    assert!(dir.path().join("a.hwf.best").exists());
}

#[test]
fn resume_continues_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["--synthetic", "4", "--threads", "1"];
    let mut first = vec!["train", "--preset", "toy", "--max-steps", "2", "--out", "a.hwf"];
    first.extend_from_slice(&base);
    assert_eq!(hwformer(&first, dir.path()).status.code(), Some(0));
    let mut second = vec!["train", "--checkpoint", "a.hwf", "--max-steps", "4", "--out", "b.hwf"];
    second.extend_from_slice(&base);
    let o = hwformer(&second, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    assert!(text(&o.stderr).contains("# steps=4"), "{}", text(&o.stderr));
    let mut arch = second.clone();
    arch.extend_from_slice(&["--set", "model.channels=16"]);
    assert_eq!(hwformer(&arch, dir.path()).status.code(), Some(1));
}

#[test]
fn eval_reports_csv_and_counts_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    hwformer::eval::synth::write_corpus(&data, 3, 24, 1).unwrap();
    std::fs::write(data.join("broken.pgm"), b"P5\n4 4\n255\n").unwrap();
    let o = hwformer(&["eval", "--preset", "toy", "--data", "data", "--sigma", "15", "--format", "csv", "--out", "r.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.starts_with("name,sigma,psnr_noisy,psnr_denoised,ssim_denoised\n"));
    assert_eq!(out.lines().count(), 5);
    assert!(text(&o.stderr).contains("warning: skipping"));
    assert_eq!(std::fs::read_to_string(dir.path().join("r.csv")).unwrap(), out);
    let again = hwformer(&["eval", "--preset", "toy", "--data", "data", "--sigma", "15", "--format", "csv"], dir.path());
    assert_eq!(text(&again.stdout), out);
}

#[test]
fn exit_codes_by_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.hwf"), b"not a checkpoint").unwrap();
    std::fs::write(dir.path().join("x.pgm"), b"P5\n1 1\n255\n\x00").unwrap();
    let cases: [(&[&str], i32); 5] = [
        (&["frobnicate"], 1),
        (&["bench", "--set", "model.heads=5"], 1),
        (&["denoise", "--checkpoint", "bad.hwf", "--input", "x.pgm", "--out", "y.pgm"], 2),
        (&["eval", "--preset", "toy", "--data", "missing-dir"], 2),
        (&["train", "--preset", "toy", "--synthetic", "4", "--lr", "1e30", "--max-steps", "8", "--out", "n.hwf"], 3),
    ];
    for (args, code) in cases {
        let o = hwformer(args, dir.path());
        let err = text(&o.stderr);
        assert_eq!(o.status.code(), Some(code), "{args:?}: {err}");
        let last = err.lines().last().unwrap();
        assert!(last.starts_with("error kind=") && last.contains(&format!("exit={code}:")), "{last}");
    }
}

#[test]
fn config_file_feeds_settings_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "# bench settings\nmodel.channels = 16\nmodel.heads=2\n").unwrap();
    let o = hwformer(&["bench", "--preset", "toy", "--config", "run.cfg", "--image", "32"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    assert!(text(&o.stderr).contains("# model.channels=16"));
    let o = hwformer(&["bench", "--config", "missing.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}
