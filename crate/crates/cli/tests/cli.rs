use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphnet")).args(args).current_dir(root()).output().expect("spawn morphnet")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn morph_fixture(dir: &str, op: &str, miss: &str) -> Output {
    let f = |name: &str| format!("fixtures/{dir}/{name}");
    run(&["morph", "--op", op, "--image", &f("image.pgm"), "--se", &f("hit.se"), "--miss-se", &f(miss), "--ascii"])
}

#[test]
fn fixtures_match_expected_grids() {
    let mut dirs = vec![("binary".to_string(), "binary-hitmiss")];
    dirs.extend((1..=6).map(|i| (format!("gray-{i}"), "hitmiss")));
    for (dir, op) in dirs {
        let o = morph_fixture(&dir, op, "miss.se");
        assert_eq!(code(&o), 0, "{dir}: {}", String::from_utf8_lossy(&o.stderr));
        let want = fs::read_to_string(root().join("fixtures").join(&dir).join("expected.txt")).unwrap();
        assert_eq!(stdout(&o), want, "{dir}");
    }
}

#[test]
fn intersecting_binary_pair_exits_2() {
    let o = morph_fixture("binary", "binary-hitmiss", "miss-intersecting.se");
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("intersect"));
}

#[test]
fn forced_intersecting_pair_runs() {
    let f = |name: &str| format!("fixtures/binary/{name}");
    let args = ["morph", "--op", "binary-hitmiss", "--image", &f("image.pgm"), "--se", &f("hit.se")];
    let o = run(&[&args[..], &["--miss-se", &f("miss-intersecting.se"), "--force", "--ascii"]].concat());
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("forced"));
}

#[test]
fn missing_input_exits_1() {
    let o = run(&["morph", "--op", "erode", "--image", "no/such/file.pgm", "--se", "fixtures/gray-1/hit.se"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn negative_alpha_is_a_config_error() {
    assert_eq!(code(&run(&["gradcheck", "--layer", "shm", "--alpha", "-1"])), 1);
    assert_eq!(code(&run(&["gradcheck", "--layer", "gc1"])), 1);
}

#[test]
fn gradcheck_passes_and_catches_a_fault() {
    let o = run(&["gradcheck", "--layer", "hm-dual", "--trials", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("pass"));
    let o = run(&["gradcheck", "--layer", "hm-dual", "--trials", "3", "--inject-fault"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn generate_train_eval_export() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |name: &str| tmp.path().join(name).to_str().unwrap().to_owned();
    let gen = ["gen-synthetic", "--out", &t("data"), "--per-class", "8", "--test-per-class", "4"];
    assert_eq!(code(&run(&gen)), 0);

    let train = |out: &str, epochs: &str, extra: &[&str]| {
        let base = ["train", "--config", "configs/synthetic.toml", "--data", &t("data"), "--out", out, "--epochs", epochs];
        let o = run(&[&base[..], extra].concat());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        o
    };
    train(&t("full.ckpt"), "4", &[]);
    let hist = fs::read_to_string(t("full.history.csv")).unwrap();
    let rows: Vec<&str> = hist.lines().collect();
    assert_eq!(rows[0], "epoch,train_loss,train_acc,test_acc");
    assert_eq!(rows.len(), 5);
    for row in &rows[1..] {
        for cell in row.split(',').take(3) {
            cell.parse::<f64>().unwrap();
        }
    }

    // interrupted after two epochs, then resumed to four
    train(&t("half.ckpt"), "2", &[]);
    train(&t("resumed.ckpt"), "4", &["--resume", &t("half.ckpt")]);
    assert_eq!(fs::read(t("full.ckpt")).unwrap(), fs::read(t("resumed.ckpt")).unwrap());

    let o = run(&["eval", "--checkpoint", &t("full.ckpt"), "--data", &t("data")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("acc"));

    let o = run(&["export-filters", "--checkpoint", &t("full.ckpt"), "--layer-name", "layer0", "--out", &t("filters"), "--format", "csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_dir(t("filters")).unwrap().count() > 0);

    let o = run(&["export-filters", "--checkpoint", &t("full.ckpt"), "--layer-name", "layer9", "--out", &t("f2")]);
    assert_ne!(code(&o), 0);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = tmp.path().join("bad.ckpt");
    fs::write(&ck, b"MRPH\x01\x00").unwrap();
    let o = run(&["eval", "--checkpoint", ck.to_str().unwrap(), "--config", "configs/synthetic.toml"]);
    assert_ne!(code(&o), 0);
}
