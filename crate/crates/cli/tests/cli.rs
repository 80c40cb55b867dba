use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn asrz(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asrz"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env("ASR_NUM_THREADS", "1")
        .output()
        .expect("spawn asrz")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = asrz(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Shortens the generated configs so the whole flow runs in seconds.
fn shorten(conf: &Path, epochs: u32) {
    let text = fs::read_to_string(conf).unwrap();
    let text: String = text
        .lines()
        .map(|l| match l.split('=').next().map(str::trim) {
            Some("epochs") => format!("epochs = {epochs}\n"),
            Some("hidden") => "hidden = 16\n".to_string(),
            _ => format!("{l}\n"),
        })
        .collect();
    fs::write(conf, text).unwrap();
}

#[test]
fn end_to_end_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "synth-data",
            "--out-dir",
            ".",
            "--seed",
            "2",
            "--source-utterances",
            "20",
            "--target-utterances",
            "20",
        ],
    );
    assert!(d.join("source/train.csv").is_file() && d.join("target/alphabet.txt").is_file());
    shorten(&d.join("source.conf"), 2);
    shorten(&d.join("target.conf"), 1);

    ok(d, &["train", "--config", "source.conf"]);
    let src = "runs/source/best.ckpt";
    assert!(d.join(src).is_file());
    assert!(d.join("runs/source/curve.csv").is_file());

    ok(
        d,
        &[
            "finetune",
            "--config",
            "target.conf",
            "--init",
            src,
            "--freeze",
            "4",
        ],
    );
    assert!(d.join("runs/target/epoch_001.ckpt").is_file());

    let lm_out = ok(
        d,
        &[
            "lm-train",
            "--corpus",
            "target/lm_corpus.txt",
            "--order",
            "3",
            "--out",
            "lm.arpa",
            "--alphabet",
            "target/alphabet.txt",
        ],
    );
    assert!(lm_out.contains("3-grams"));
    assert!(fs::read_to_string(d.join("lm.arpa"))
        .unwrap()
        .starts_with("\\data\\"));

    let csv = ok(
        d,
        &[
            "eval",
            "--checkpoint",
            "runs/target/best.ckpt",
            "--manifest",
            "target/test.csv",
            "--lm",
            "lm.arpa",
            "--alpha",
            "0.5",
            "--beta",
            "1.0",
            "--beam-width",
            "8",
            "--out",
            "eval.csv",
            "--method",
            "4 Frozen Layers",
        ],
    );
    assert!(csv.starts_with("method,wer,cer\n4 Frozen Layers,"));
    let row = csv.lines().nth(1).unwrap();
    assert!(
        row.split(',')
            .skip(1)
            .all(|x| x.split('.').nth(1).is_some_and(|frac| frac.len() == 4)),
        "{row}"
    );
    assert_eq!(fs::read_to_string(d.join("eval.csv")).unwrap(), csv);

    let wav = fs::read_to_string(d.join("target/test.csv"))
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .to_string();
    let wav = format!("target/{wav}");
    ok(
        d,
        &[
            "decode",
            "--checkpoint",
            "runs/target/best.ckpt",
            "--wav",
            &wav,
        ],
    );
    ok(
        d,
        &[
            "decode",
            "--checkpoint",
            "runs/target/best.ckpt",
            "--wav",
            &wav,
            "--lm",
            "lm.arpa",
        ],
    );

    let table = ok(
        d,
        &[
            "suite",
            "--config",
            "target.conf",
            "--source-checkpoint",
            src,
        ],
    );
    assert_eq!(table.lines().count(), 7);
    for slug in [
        "reference",
        "frozen0",
        "frozen1",
        "frozen2",
        "frozen3",
        "frozen4",
    ] {
        assert!(d.join(format!("runs/target/curves/{slug}.csv")).is_file());
    }

    // The source model's alphabet lacks the umlauts, so evaluating it on target
    // transcripts that use them is refused.
    let uses_umlauts = fs::read_to_string(d.join("target/test.csv"))
        .unwrap()
        .chars()
        .any(|c| "äöü".contains(c));
    if uses_umlauts {
        let out = asrz(
            d,
            &["eval", "--checkpoint", src, "--manifest", "target/test.csv"],
        );
        assert!(!out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).contains("alphabet mismatch"));
    }
}

#[test]
fn rejects_bad_arguments() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert!(!asrz(
        d,
        &["finetune", "--config", "x.conf", "--init", "x.ckpt", "--freeze", "5"]
    )
    .status
    .success());
    assert!(!asrz(d, &["train", "--config", "missing.conf"])
        .status
        .success());
    assert!(!asrz(
        d,
        &[
            "eval",
            "--checkpoint",
            "nope.ckpt",
            "--manifest",
            "nope.csv"
        ]
    )
    .status
    .success());
    fs::write(d.join("junk.ckpt"), b"not a checkpoint").unwrap();
    let out = asrz(
        d,
        &["decode", "--checkpoint", "junk.ckpt", "--wav", "x.wav"],
    );
    assert!(!out.status.success());
}
