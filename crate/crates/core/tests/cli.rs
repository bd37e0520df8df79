use std::path::Path;
use std::process::{Command, Output};

fn maol(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maol"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = maol(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], dir: &Path) -> i32 {
    maol(args, dir).status.code().expect("exit code")
}

const LEARN: &[&str] = &[
    "learn",
    "--train-vol",
    "clean.vol",
    "--patch",
    "3,3,3",
    "--shape",
    "4x3,4x3,4x3",
    "--T",
    "400",
    "--max-iters",
    "20",
    "--seed",
    "5",
    "--out",
    "op.txt",
];

fn prepare(dir: &Path) {
    ok(&["gen", "--dims", "16,16,12", "--seed", "3", "--out", "clean.vol"], dir);
    ok(LEARN, dir);
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    let op_first = std::fs::read(d.join("op.txt")).unwrap();
    ok(LEARN, d);
    assert_eq!(op_first, std::fs::read(d.join("op.txt")).unwrap());
    assert!(d.join("op.txt.log").exists());

    let denoise = [
        "denoise",
        "--in",
        "clean.vol",
        "--sigma",
        "15",
        "--noise-seed",
        "2",
        "--ref",
        "clean.vol",
        "--op",
        "op.txt",
        "--max-iters",
        "15",
        "--out",
        "den.vol",
        "--csv",
        "-",
    ];
    let a = ok(&denoise, d);
    let b = ok(&denoise, d);
    assert_eq!(a, b);
    let rows: Vec<&str> = a.lines().filter(|l| l.starts_with("denoise,")).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("denoise,noisy,"));
    assert!(rows[1].starts_with("denoise,denoised,"));

    let cs = [
        "cs",
        "--in",
        "clean.vol",
        "--rate",
        "0.3",
        "--op",
        "op.txt",
        "--max-iters",
        "10",
        "--out",
        "cs.vol",
        "--zero-filled-out",
        "zf.vol",
        "--mask-out",
        "mask.txt",
        "--csv",
        "cs.csv",
    ];
    ok(&cs, d);
    let first = std::fs::read_to_string(d.join("cs.csv")).unwrap();
    ok(&cs, d);
    assert_eq!(first, std::fs::read_to_string(d.join("cs.csv")).unwrap());
    assert!(first.starts_with("command,label,psnr_db,mssim\ncs,zero-filled,"));
    assert!(d.join("mask.txt").exists() && d.join("zf.vol").exists());

    let same = ok(&["eval", "--ref", "clean.vol", "--test", "clean.vol", "--csv", "-"], d);
    assert!(same.contains("eval,test,inf,1.0"), "{same}");
}

#[test]
fn config_file_supplies_options() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "dims = [12, 12, 10]\nseed = 9\nout = \"from_cfg.vol\"\n",
    )
    .unwrap();
    ok(&["--config", "run.toml", "gen"], d);
    assert!(d.join("from_cfg.vol").exists());
    // Flags win over the file.
    ok(&["--config", "run.toml", "gen", "--out", "flag.vol"], d);
    assert!(d.join("flag.vol").exists());

    std::fs::write(d.join("bad.toml"), "lamda = 3.0\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "gen"], d), 1);
}

#[test]
fn invalid_arguments_exit_one_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);
    let before: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();

    let cases: &[&[&str]] = &[
        &["gen", "--dims", "4,16,16", "--out", "x.vol"],
        &["gen", "--dims", "16,16", "--out", "x.vol"],
        &[
            "learn",
            "--train-vol",
            "clean.vol",
            "--patch",
            "3,3,3",
            "--shape",
            "2x3,4x3,4x3",
            "--out",
            "x.txt",
        ],
        &["learn", "--train-vol", "missing.vol", "--out", "x.txt"],
        &["learn", "--train-vol", "clean.vol", "--nu", "-1", "--out", "x.txt"],
        &["denoise", "--in", "clean.vol", "--op", "missing.txt", "--out", "x.vol"],
        &[
            "denoise",
            "--in",
            "clean.vol",
            "--op",
            "op.txt",
            "--lambda",
            "-2",
            "--out",
            "x.vol",
        ],
        &["denoise", "--in", "clean.vol", "--op", "op.txt", "--out", "nodir/x.vol"],
        &[
            "cs",
            "--in",
            "clean.vol",
            "--op",
            "op.txt",
            "--rate",
            "1.5",
            "--out",
            "x.vol",
        ],
        &[
            "cs",
            "--in",
            "clean.vol",
            "--op",
            "op.txt",
            "--rate",
            "0",
            "--out",
            "x.vol",
        ],
        &["eval", "--ref", "clean.vol", "--test", "op.txt"],
        &["eval", "--ref", "clean.vol"],
        &["frobnicate"],
    ];
    for args in cases {
        assert_eq!(code(args, d), 1, "{args:?}");
    }
    let after: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(before, after);

    assert_eq!(code(&["--help"], d), 0);
}

#[test]
fn import_reads_raw_grids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bytes: Vec<u8> = (0..8 * 8 * 8).map(|i| (i % 200) as u8).collect();
    std::fs::write(d.join("grid.raw"), &bytes).unwrap();
    ok(
        &[
            "import", "--raw", "grid.raw", "--dims", "8,8,8", "--sample", "u8", "--out", "grid.vol",
        ],
        d,
    );
    let same = ok(&["eval", "--ref", "grid.vol", "--test", "grid.vol", "--csv", "-"], d);
    assert!(same.contains("eval,test,inf,nan"), "{same}");
    ok(
        &[
            "import",
            "--raw",
            "grid.raw",
            "--dims",
            "8,8,8",
            "--sample",
            "u8",
            "--crop-start",
            "0,2,1",
            "--crop-dims",
            "4,4,4",
            "--out",
            "crop.vol",
        ],
        d,
    );
    let header = std::fs::read_to_string(d.join("crop.vol.json")).unwrap();
    assert!(header.contains("[4,4,4]"), "{header}");
    assert_eq!(
        code(
            &[
                "import",
                "--raw",
                "grid.raw",
                "--dims",
                "8,8,8",
                "--sample",
                "u8",
                "--crop-start",
                "6,0,0",
                "--crop-dims",
                "4,4,4",
                "--out",
                "bad.vol"
            ],
            d
        ),
        1
    );
    assert_eq!(
        code(
            &["import", "--raw", "grid.raw", "--dims", "8,8,9", "--sample", "u8", "--out", "g2.vol"],
            d
        ),
        1
    );
}
