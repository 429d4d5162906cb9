use std::path::Path;
use std::process::{Command, Output};

use splice_core::model_io::{read_gmm, read_transform_file};

fn splice(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splice"))
        .current_dir(dir)
        .args(["--no-cms", "--seed", "3"])
        .args(args)
        .output()
        .expect("run splice")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// `key=value` lookup in the last line that has `key`.
fn field(text: &str, key: &str) -> Option<String> {
    text.lines().rev().find_map(|l| {
        l.split(' ').find_map(|kv| kv.strip_prefix(&format!("{key}=")).map(str::to_string))
    })
}

fn corpus(dir: &Path, channel: &str) {
    let spec = format!(
        "d = 2\nm = 2\nseparation = 10.0\nresidual_sigma = 0.0\nn_frames = 2000\nseed = 11\n\
         frames_per_utterance = 500\n{channel}"
    );
    std::fs::write(dir.join("spec.toml"), spec).unwrap();
    let o = splice(dir, &["synth", "--spec", "spec.toml", "--out", "corpus"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn trained(dir: &Path) {
    let o = splice(dir, &["train-gmm", "--manifest", "corpus/noisy.tsv", "--mixtures", "2", "--iters", "10", "--out", "noisy.gmm"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = splice(dir.path(), &["train-gmm", "--manifest", "absent.tsv", "--out", "g.gmm"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.tsv"));
}

#[test]
fn malformed_model_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.gmm"), "splice-gmm 1\nnonsense\n").unwrap();
    let o = splice(dir.path(), &["inspect", "bad.gmm"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn unreadable_feature_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.tsv"), "id\tpath\na\tgone.htk\n").unwrap();
    let o = splice(dir.path(), &["train-gmm", "--manifest", "m.tsv", "--mixtures", "1", "--out", "g.gmm"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn identity_channel_gives_identity_transform() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), "[channel]\nkind = \"identity\"\n");
    trained(dir.path());
    let o = splice(dir.path(), &["estimate", "splice", "--gmm", "noisy.gmm", "--manifest", "corpus/stereo.tsv", "--out", "s.t"]);
    assert!(o.status.success());
    let t = read_transform_file(dir.path().join("s.t")).unwrap();
    for (a, b) in t.base().matrices().iter().zip(t.base().biases()) {
        let d = a.nrows();
        assert!((a - nalgebra::DMatrix::<f64>::identity(d, d)).norm() < 1e-9);
        assert!(b.norm() < 1e-8);
    }
}

#[test]
fn enhancement_rejects_a_foreign_gmm_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p, "");
    trained(p);
    assert!(splice(p, &["estimate", "msplice", "--gmm", "noisy.gmm", "--manifest", "corpus/stereo.tsv", "--out", "m.t"])
        .status
        .success());
    let o = splice(p, &["train-gmm", "--manifest", "corpus/noisy.tsv", "--mixtures", "2", "--iters", "1", "--out", "other.gmm"]);
    assert!(o.status.success());

    let args = ["enhance", "--transform", "m.t", "--gmm", "other.gmm", "--manifest", "corpus/stereo.tsv", "--out-dir", "e"];
    let o = splice(p, &args);
    assert_eq!(o.status.code(), Some(2));
    assert!(!p.join("e").exists());

    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(splice(p, &forced).status.success());
}

#[test]
fn enhancement_reports_an_mse_drop() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p, "");
    trained(p);
    splice(p, &["estimate", "msplice", "--gmm", "noisy.gmm", "--manifest", "corpus/stereo.tsv", "--out", "m.t"]);
    let o = splice(p, &["enhance", "--transform", "m.t", "--gmm", "noisy.gmm", "--manifest", "corpus/stereo.tsv", "--out-dir", "e"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let before: f64 = field(&text, "mse_before").unwrap().parse().unwrap();
    let after: f64 = field(&text, "mse_after").unwrap().parse().unwrap();
    assert!(after < 0.1 * before, "{text}");
    assert!(p.join("e/u00000.noisy.htk").exists());
}

#[test]
fn csv_corpora_work_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("spec.toml"), "d = 2\nm = 2\nn_frames = 600\nframes_per_utterance = 300\n").unwrap();
    assert!(splice(p, &["synth", "--spec", "spec.toml", "--out", "corpus", "--format", "csv"]).status.success());
    assert!(p.join("corpus/noisy/u00000.csv").exists());
    trained(p);
    let gmm = read_gmm(p.join("noisy.gmm")).unwrap();
    assert_eq!((gmm.n_mixtures(), gmm.dim()), (2, 2));
}

#[test]
fn adaptation_needs_condition_labels() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p, "");
    trained(p);
    splice(p, &["estimate", "msplice", "--gmm", "noisy.gmm", "--manifest", "corpus/stereo.tsv", "--out", "m.t"]);
    let manifest = std::fs::read_to_string(p.join("corpus/noisy.tsv")).unwrap();
    let stripped: String = manifest
        .lines()
        .map(|l| l.split('\t').take(2).collect::<Vec<_>>().join("\t") + "\n")
        .collect();
    std::fs::write(p.join("corpus/bare.tsv"), stripped).unwrap();
    let o = splice(p, &["adapt", "--transform", "m.t", "--gmm", "noisy.gmm", "--manifest", "corpus/bare.tsv", "--out-dir", "a"]);
    assert_eq!(o.status.code(), Some(2));

    let o = splice(
        p,
        &["adapt", "--transform", "m.t", "--gmm", "noisy.gmm", "--manifest", "corpus/bare.tsv", "--out-dir", "a", "--condition-key", "directory"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(p.join("a/noisy.adapted").exists());
    let adapted = read_transform_file(p.join("a/noisy.adapted")).unwrap();
    assert!(matches!(adapted, splice_core::model_io::TransformFile::Adapted(_)));
}

#[test]
fn verify_fails_on_a_tight_oracle_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p, "");
    trained(p);
    splice(p, &["estimate", "splice", "--gmm", "noisy.gmm", "--manifest", "corpus/stereo.tsv", "--out", "s.t"]);
    let base = ["verify", "--gmm", "noisy.gmm", "--transform", "s.t", "--against-oracle", "corpus/oracle.txt"];
    let loose = splice(p, &[&base[..], &["--oracle-tolerance", "1e-6"]].concat());
    assert!(loose.status.success(), "{}", stdout(&loose));
    let tight = splice(p, &[&base[..], &["--oracle-tolerance", "0"]].concat());
    // noise-free data recovers the oracle to rounding, never exactly
    assert_eq!(tight.status.code(), Some(4));
    assert!(stdout(&tight).contains("status=fail"));
}

#[test]
fn pipeline_validates_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("a.toml"), "output_dir = \"o\"\nkinds = [\"msplice\"]\n").unwrap();
    assert_eq!(splice(p, &["run-pipeline", "--config", "a.toml"]).status.code(), Some(2));
    std::fs::write(p.join("b.toml"), "output_dir = \"o\"\nstereo_manifest = \"m.tsv\"\nmixtures = 0\n").unwrap();
    assert_eq!(splice(p, &["run-pipeline", "--config", "b.toml"]).status.code(), Some(2));
    std::fs::write(p.join("c.toml"), "output_dir = \"o\"\nunknown_key = 1\n").unwrap();
    assert_eq!(splice(p, &["run-pipeline", "--config", "c.toml"]).status.code(), Some(3));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p, "");
    let mut models = Vec::new();
    for jobs in ["1", "3"] {
        let out = format!("g{jobs}.gmm");
        let o = splice(p, &["--jobs", jobs, "train-gmm", "--manifest", "corpus/noisy.tsv", "--mixtures", "2", "--out", &out]);
        assert!(o.status.success());
        models.push(std::fs::read(p.join(out)).unwrap());
    }
    assert_eq!(models[0], models[1]);
}

#[test]
fn identity_transform_reproduces_input_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p, "");
    trained(p);
    let gmm = read_gmm(p.join("noisy.gmm")).unwrap();
    let t = splice_core::PiecewiseTransform::identity(&gmm, splice_core::TransformKind::Splice);
    splice_core::model_io::write_transform(&t, p.join("id.t")).unwrap();
    let o = splice(p, &["enhance", "--transform", "id.t", "--gmm", "noisy.gmm", "--manifest", "corpus/noisy.tsv", "--out-dir", "e"]);
    assert!(o.status.success());
    for u in ["u00000", "u00003"] {
        let input = std::fs::read(p.join(format!("corpus/noisy/{u}.htk"))).unwrap();
        let output = std::fs::read(p.join(format!("e/{u}.noisy.htk"))).unwrap();
        assert_eq!(input, output, "{u}");
    }
}

#[test]
fn missing_partners_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p, "");
    trained(p);
    let text = std::fs::read_to_string(p.join("corpus/stereo.tsv")).unwrap().replace("u00001.clean\n", "gone\n");
    std::fs::write(p.join("corpus/broken.tsv"), text).unwrap();
    let o = splice(p, &["estimate", "splice", "--gmm", "noisy.gmm", "--manifest", "corpus/broken.tsv", "--out", "s.t"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("u00001.noisy -> gone"));
}

#[test]
fn adaptation_writes_one_transform_per_condition_and_tolerates_tiny_ones() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p, "");
    trained(p);
    splice(p, &["estimate", "msplice", "--gmm", "noisy.gmm", "--manifest", "corpus/stereo.tsv", "--out", "m.t"]);
    let tiny = splice_core::FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
    splice_core::io::write_features(&tiny, p.join("tiny.htk")).unwrap();
    let manifest = "id\tpath\tcondition\n\
                    a\tcorpus/noisy/u00000.htk\tcar\n\
                    b\tcorpus/noisy/u00001.htk\tcar\n\
                    t\ttiny.htk\tstreet\n";
    std::fs::write(p.join("test.tsv"), manifest).unwrap();
    let o = splice(p, &["adapt", "--transform", "m.t", "--gmm", "noisy.gmm", "--manifest", "test.tsv", "--out-dir", "a"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("adaptation frames"));
    for (cond, id) in [("car", "a"), ("street", "t")] {
        match read_transform_file(p.join(format!("a/{cond}.adapted"))).unwrap() {
            splice_core::model_io::TransformFile::Adapted(t) => assert_eq!(t.condition(), cond),
            other => panic!("{other:?}"),
        }
        assert!(p.join(format!("a/{cond}/{id}.htk")).exists());
    }
}

#[test]
fn vmatrix_of_a_model_with_itself_is_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p, "");
    trained(p);
    let manifest = "id\tpath\tpartner\nn\tcorpus/noisy/u00000.htk\tc\nc\tcorpus/noisy/u00000.htk\t\n";
    std::fs::write(p.join("self.tsv"), manifest).unwrap();
    for mode in ["hard", "soft"] {
        let o = splice(
            p,
            &["vmatrix", "--clean-gmm", "noisy.gmm", "--noisy-gmm", "noisy.gmm", "--manifest", "self.tsv", "--mode", mode, "--out", "v.txt"],
        );
        assert!(o.status.success());
        let text = stdout(&o);
        let total: f64 = field(&text, "total").unwrap().parse().unwrap();
        assert!((total - 500.0).abs() <= 1e-6, "{text}");
        if mode == "hard" {
            assert_eq!(field(&text, "off_diagonal").unwrap(), "0");
        }
        assert!(std::fs::read_to_string(p.join("v.txt")).unwrap().starts_with(&format!("# mixtures=2 mode={mode}")));
    }
}

#[test]
fn identity_synth_pairs_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p, "[channel]\nkind = \"identity\"\n");
    for u in ["u00000", "u00002"] {
        let clean = std::fs::read(p.join(format!("corpus/clean/{u}.htk"))).unwrap();
        let noisy = std::fs::read(p.join(format!("corpus/noisy/{u}.htk"))).unwrap();
        assert_eq!(clean, noisy);
    }
}

#[test]
fn training_log_never_decreases() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    corpus(p, "");
    let o = splice(p, &["train-gmm", "--manifest", "corpus/noisy.tsv", "--mixtures", "4", "--iters", "12", "--out", "g.gmm", "--log", "train.log"]);
    assert!(o.status.success());
    let log = std::fs::read_to_string(p.join("train.log")).unwrap();
    let ll: Vec<f64> = log.lines().map(|l| field(l, "loglik").unwrap().parse().unwrap()).collect();
    assert_eq!(ll.len(), 13);
    assert!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-8), "{ll:?}");
}
