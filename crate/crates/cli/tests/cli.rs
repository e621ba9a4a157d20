use std::path::Path;
use std::process::Command;

fn ddt(args: &[&str], dir: &Path) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_ddt")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "ddt {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn generate_train_evaluate_bench() {
    let dir = std::env::temp_dir().join(format!("ddt_cli_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let gen = ["gen-data", "--out", "d.bin", "--sequences", "6", "--frames", "4", "--seed", "3", "--noise", "0.1"];
    let dims = ["--joints", "3", "--vertices", "6", "--d-feat", "8"];
    ddt(&[&gen[..], &dims[..]].concat(), &dir);
    std::fs::write(dir.join("c.txt"), "d_model=8\nheads=2\nblocks=1\nenc_hidden=8\nepochs=1\nbatch_size=2\n").unwrap();

    let log = ddt(&["train", "--data", "d.bin", "--config", "c.txt", "--out", "m.ckpt"], &dir);
    assert!(log.starts_with("epoch=1 "), "{log}");
    let report = ddt(&["eval", "--ckpt", "m.ckpt", "--data", "d.bin", "--report", "r.txt"], &dir);
    assert_eq!(std::fs::read_to_string(dir.join("r.txt")).unwrap(), report);
    assert!(report.contains("frames_evaluated=24"), "{report}");

    let bench = ddt(&["bench", "--ckpt", "m.ckpt", "--mode", "m2o", "--repeats", "2"], &dir);
    assert!(bench.contains("passes=4") && bench.contains("decoder_invocations=40"), "{bench}");

    let bad = Command::new(env!("CARGO_BIN_EXE_ddt"))
        .args(["train", "--data", "d.bin", "--set", "precision=f32", "--out", "x.ckpt"])
        .current_dir(&dir)
        .output()
        .unwrap();
    assert!(!bad.status.success());
    std::fs::remove_dir_all(&dir).ok();
}
