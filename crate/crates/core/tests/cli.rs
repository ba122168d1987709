//! End-to-end runs of the `vqpool` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use vqpool::dataset::{labels_path, read_embeddings, write_dataset, DatasetShape, UtteranceRecord};

fn vqpool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqpool"))
        .args(args)
        .env_remove("VQPOOL_THREADS")
        .output()
        .expect("spawn vqpool")
}

fn ok(args: &[&str]) -> String {
    let out = vqpool(args);
    assert!(
        out.status.success(),
        "vqpool {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn key<'a>(stdout: &'a str, name: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {name}= in {stdout}"))
}

/// Small synthetic pair in `dir`; extra flags go to `gen`.
fn generate(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let train = dir.join("train.spd");
    let test = dir.join("test.spd");
    let mut args = vec![
        "gen",
        "--train",
        s(&train),
        "--test",
        s(&test),
        "--train-per-class",
        "10",
        "--test-per-class",
        "5",
    ];
    if !extra.contains(&"--classes") {
        args.extend_from_slice(&["--classes", "4"]);
    }
    args.extend_from_slice(extra);
    ok(&args);
    (train, test)
}

/// Two utterances, F=2, G=2, V=4.
fn hand_dataset(dir: &Path) -> PathBuf {
    let shape = DatasetShape {
        dim: 2,
        groups: 2,
        codebook_size: 4,
        num_labels: 2,
    };
    let a = UtteranceRecord::new(
        "a",
        0,
        2,
        2,
        vec![1.0, 0.0, 3.0, 0.0, 5.0, 2.0, 7.0, 2.0],
        vec![0, 1, 0, 1, 2, 3, 0, 0],
    )
    .unwrap();
    let b = UtteranceRecord::new("b", 1, 2, 2, vec![0.0, 1.0, 0.0, 3.0], vec![1, 1, 2, 2]).unwrap();
    let path = dir.join("hand.spd");
    write_dataset(fs::File::create(&path).unwrap(), shape, &[a, b]).unwrap();
    path
}

#[test]
fn missing_input_exits_2_and_names_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.spd");
    let out = vqpool(&["counts", s(&missing), "-o", s(&dir.path().join("c.spc"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.spd"));
}

#[test]
fn counts_methods_need_counts_flag() {
    let dir = TempDir::new().unwrap();
    let data = hand_dataset(dir.path());
    for method in ["gp", "bp", "sif"] {
        let out = vqpool(&[
            "pool",
            s(&data),
            "--method",
            method,
            "-o",
            s(&dir.path().join("e.spe")),
        ]);
        assert_eq!(out.status.code(), Some(2), "{method}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("--counts"));
    }
}

#[test]
fn bad_flag_values_exit_2() {
    let dir = TempDir::new().unwrap();
    let data = hand_dataset(dir.path());
    let out = vqpool(&[
        "pool",
        s(&data),
        "--method",
        "sif",
        "--sif-a",
        "0",
        "--counts",
        "x",
        "-o",
        "y",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = vqpool(&["--threads", "0", "counts", s(&data), "-o", "y"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_and_counts_are_deterministic() {
    let one = TempDir::new().unwrap();
    let two = TempDir::new().unwrap();
    let (tr1, te1) = generate(one.path(), &["--seed", "11"]);
    let (tr2, te2) = generate(two.path(), &["--seed", "11"]);
    assert_eq!(fs::read(&tr1).unwrap(), fs::read(&tr2).unwrap());
    assert_eq!(fs::read(&te1).unwrap(), fs::read(&te2).unwrap());
    assert_eq!(
        fs::read(labels_path(&tr1)).unwrap(),
        fs::read(labels_path(&tr2)).unwrap()
    );

    let c1 = one.path().join("c1.spc");
    let c2 = one.path().join("c2.spc");
    let first = ok(&["counts", s(&tr1), "-o", s(&c1)]);
    let second = ok(&["--threads", "1", "counts", s(&tr1), "-o", s(&c2)]);
    assert_eq!(first, second);
    assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap());
    assert!(key(&first, "total_frames").parse::<u64>().unwrap() > 0);

    let (tr3, _) = generate(two.path(), &["--seed", "12"]);
    assert_ne!(fs::read(&tr1).unwrap(), fs::read(&tr3).unwrap());
}

#[test]
fn counts_ignore_the_test_split() {
    let dir = TempDir::new().unwrap();
    let (train, test) = generate(dir.path(), &[]);
    let before = dir.path().join("before.spc");
    let after = dir.path().join("after.spc");
    ok(&["counts", s(&train), "-o", s(&before)]);
    fs::remove_file(&test).unwrap();
    ok(&["counts", s(&train), "-o", s(&after)]);
    assert_eq!(fs::read(&before).unwrap(), fs::read(&after).unwrap());
}

#[test]
fn transforms_fit_on_train_only() {
    let dir = TempDir::new().unwrap();
    let (train, test) = generate(dir.path(), &["--dim", "8"]);
    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    let (_, test2) = generate(&other, &["--dim", "8", "--seed", "99"]);
    for transform in ["whiten", "softdecay"] {
        let pool = |data: &Path, out: &str| {
            let out = dir.path().join(out);
            ok(&[
                "pool",
                s(data),
                "--transform",
                transform,
                "--fit-on",
                s(&train),
                "-o",
                s(&out),
            ]);
            read_embeddings(fs::File::open(out).unwrap())
                .unwrap()
                .read_all()
                .unwrap()
        };
        // the same utterance embeds identically whatever else is in its split
        let a = pool(&test, "a.spe");
        let b = pool(&train, "b.spe");
        let c = pool(&test2, "c.spe");
        assert_ne!(a, c);
        let again = pool(&test, "d.spe");
        assert_eq!(a, again);
        let self_fit = dir.path().join("self.spe");
        ok(&[
            "pool",
            s(&train),
            "--transform",
            transform,
            "-o",
            s(&self_fit),
        ]);
        let own = read_embeddings(fs::File::open(&self_fit).unwrap())
            .unwrap()
            .read_all()
            .unwrap();
        assert_eq!(own, b);
    }
}

#[test]
fn bench_on_its_own_training_set_is_perfect() {
    let dir = TempDir::new().unwrap();
    let (train, _) = generate(dir.path(), &[]);
    let out = ok(&[
        "bench",
        "--train",
        s(&train),
        "--test",
        s(&train),
        "--method",
        "ap",
    ]);
    assert_eq!(key(&out, "accuracy"), "1.000000");
    assert_eq!(key(&out, "n_test"), "40");
    assert_eq!(key(&out, "method"), "ap");
    assert_eq!(key(&out, "index"), "exact");
}

#[test]
fn bench_k_larger_than_train_fails() {
    let dir = TempDir::new().unwrap();
    let data = hand_dataset(dir.path());
    let out = vqpool(&["bench", "--train", s(&data), "--test", s(&data), "--k", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k=3"));
}

#[test]
fn single_class_is_always_right() {
    let dir = TempDir::new().unwrap();
    let (train, test) = generate(dir.path(), &["--classes", "1"]);
    for method in ["ap", "gp", "bp"] {
        let out = ok(&[
            "bench",
            "--train",
            s(&train),
            "--test",
            s(&test),
            "--method",
            method,
            "--k",
            "3",
        ]);
        assert_eq!(key(&out, "accuracy"), "1.000000", "{method}");
    }
}

#[test]
fn bench_writes_confusion_and_runs_ann() {
    let dir = TempDir::new().unwrap();
    let (train, test) = generate(dir.path(), &[]);
    let confusion = dir.path().join("conf.tsv");
    let out = ok(&[
        "bench",
        "--train",
        s(&train),
        "--test",
        s(&test),
        "--method",
        "bp",
        "--index",
        "ann",
        "--trees",
        "4",
        "--confusion",
        s(&confusion),
        "--summary",
    ]);
    assert_eq!(key(&out, "index"), "ann");
    let recall: f64 = key(&out, "ann_recall_at_1").parse().unwrap();
    assert!((0.0..=1.0).contains(&recall));
    let tsv = fs::read_to_string(&confusion).unwrap();
    let rows: Vec<&str> = tsv.lines().collect();
    assert_eq!(rows.len(), 5);
    let total: u64 = rows[1..]
        .iter()
        .flat_map(|r| r.split('\t').skip(1))
        .map(|v| v.parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 20);
}

#[test]
fn statistics_pooling_doubles_the_dimension() {
    let dir = TempDir::new().unwrap();
    let data = hand_dataset(dir.path());
    let out = dir.path().join("sp.spe");
    ok(&["pool", s(&data), "--method", "sp", "-o", s(&out)]);
    let reader = read_embeddings(fs::File::open(&out).unwrap()).unwrap();
    assert_eq!(reader.header().dim, 4);
    let e = reader.read_all().unwrap();
    // a: mean (4, 1), population std (sqrt 5, 1)
    assert_eq!(e[0].vector[..2], [4.0, 1.0]);
    assert!((e[0].vector[2] - 5f32.sqrt()).abs() < 1e-5);
    assert!((e[0].vector[3] - 1.0).abs() < 1e-5);
}

#[test]
fn export_and_compare_weights() {
    let dir = TempDir::new().unwrap();
    let data = hand_dataset(dir.path());
    let ap = dir.path().join("ap.tsv");
    let lp = dir.path().join("lp.tsv");
    ok(&["export-weights", s(&data), "--method", "ap", "-o", s(&ap)]);
    ok(&["export-weights", s(&data), "--method", "lp", "-o", s(&lp)]);
    let text = fs::read_to_string(&ap).unwrap();
    assert_eq!(
        text,
        "a\t4\t0.250000000\t0.250000000\t0.250000000\t0.250000000\n\
         b\t2\t0.500000000\t0.500000000\n"
    );

    let same = ok(&["compare-weights", s(&ap), s(&ap)]);
    assert_eq!(key(&same, "n"), "2");
    assert_eq!(key(&same, "mean_kl"), "0.000000000");

    let per = dir.path().join("kl.tsv");
    let diff = ok(&["compare-weights", s(&ap), s(&lp), "--out", s(&per)]);
    assert!(key(&diff, "mean_kl").parse::<f64>().unwrap() > 0.0);
    assert_eq!(fs::read_to_string(&per).unwrap().lines().count(), 2);

    let out = vqpool(&["export-weights", s(&data), "--method", "sp", "-o", s(&ap)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn export_embeddings_from_dataset_and_spe_agree() {
    let dir = TempDir::new().unwrap();
    let data = hand_dataset(dir.path());
    let spe = dir.path().join("e.spe");
    let from_data = dir.path().join("a.tsv");
    let from_spe = dir.path().join("b.tsv");
    ok(&[
        "export-embeddings",
        s(&data),
        "--method",
        "ap",
        "--spe",
        s(&spe),
        "-o",
        s(&from_data),
    ]);
    ok(&["export-embeddings", s(&spe), "-o", s(&from_spe)]);
    let text = fs::read_to_string(&from_data).unwrap();
    assert_eq!(text, fs::read_to_string(&from_spe).unwrap());
    assert_eq!(text, "a\t0\t4\t1\nb\t1\t0\t2\n");

    let junk = dir.path().join("junk");
    fs::write(&junk, b"nothing useful").unwrap();
    let out = vqpool(&["export-embeddings", s(&junk), "-o", s(&from_spe)]);
    assert!(!out.status.success());
}
