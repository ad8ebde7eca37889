use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geofuse::cli::Manifest;
use geofuse::io::write_ply;
use geofuse::nn::Tensor;
use geofuse::PointCloud;

fn geofuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geofuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path → bytes for every file below `root`.
fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const SMALL_MODEL: &str = r#"
[branch]
widths = [4, 4]
radii = [0.4]
k = 4
filter_hidden = 4

[optimizer]
epochs = 2
batch_size = 4

[fusion]
fused_dim = 4

[fusion.optimizer]
epochs = 2
batch_size = 4
"#;

fn synth(out: &Path, counts: (&str, &str), extra: &[&str]) {
    let mut args = vec![
        "synth-gen",
        "--seed",
        "7",
        "--train",
        counts.0,
        "--test",
        counts.1,
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    let o = geofuse(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_gen_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, ("8", "4"), &[]);
    synth(&b, ("8", "4"), &[]);
    let snap = snapshot(&a);
    assert_eq!(snap.iter().filter(|(p, _)| p.ends_with("depth.png")).count(), 12);
    assert_eq!(snap, snapshot(&b));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(geofuse(&["synth-gen", "--bogus"]).status.code(), Some(2));
    assert_eq!(geofuse(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(geofuse(&["grad-check"]).status.code(), Some(2), "missing --out");
}

#[test]
fn data_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    let o = geofuse(&["train-3d", "--train", s(&missing), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error (data)"));
}

#[test]
fn grad_check_reports_every_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let o = geofuse(&["grad-check", "--preset", "desk", "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let table = fs::read_to_string(tmp.path().join("gradcheck.tsv")).unwrap();
    for layer in [
        "branch.conv0",
        "branch.conv1",
        "branch.conv2",
        "fusion.geometric",
        "fusion.texture",
    ] {
        let line = table
            .lines()
            .find(|l| l.starts_with(layer))
            .unwrap_or_else(|| panic!("{layer} missing"));
        let err: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert!(err <= 1e-5, "{line}");
    }
    assert!(tmp.path().join("manifest.toml").exists());
}

#[test]
fn bench_pool_nearest_voxel_drops_stranded_voxel() {
    let tmp = tempfile::tempdir().unwrap();
    // The middle voxel holds 0.051 and 0.099; each is closer to the centroid
    // of a neighbouring voxel than to its own, so that group empties.
    let xs = [0.049, 0.051, 0.099, 0.101];
    let positions = xs.iter().map(|&x| [x, 0.02, 0.02]).collect::<Vec<_>>();
    let cloud = PointCloud::new(positions, Tensor::zeros(&[xs.len(), 0])).unwrap();
    let ply = tmp.path().join("fixture.ply");
    write_ply(&cloud, &ply).unwrap();
    let o = geofuse(&[
        "bench-pool",
        "--in",
        s(&ply),
        "--r",
        "0.05",
        "--out",
        s(&tmp.path().join("out")),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(tmp.path().join("out/pooling.tsv")).unwrap();
    let groups = |m: &str| -> usize {
        let line = table.lines().find(|l| l.starts_with(&format!("{m}\t"))).unwrap();
        line.split('\t').nth(1).unwrap().parse().unwrap()
    };
    assert_eq!((groups("vp"), groups("nvp")), (3, 2), "{table}");
}

#[test]
fn preprocess_then_dump_graph() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, ("2", "1"), &[]);
    let clouds = tmp.path().join("clouds");
    let o = geofuse(&["preprocess", "--in", s(&data.join("train")), "--out", s(&clouds)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ply = clouds.join("00000.ply");
    let cloud = geofuse::io::read_ply(&ply).unwrap();
    assert_eq!(cloud.feature_dim(), 3);
    assert_eq!(cloud.label, Some(0));

    let graph_dir = tmp.path().join("graph");
    let o = geofuse(&["dump-graph", "--in", s(&ply), "--k", "5", "--out", s(&graph_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(graph_dir.join("edges.txt")).unwrap();
    let edges: Vec<(usize, usize)> = text
        .lines()
        .map(|l| {
            let mut it = l.split(' ').map(|v| v.parse::<usize>().ok());
            let (j, i) = (it.next().unwrap().unwrap(), it.next().unwrap().unwrap());
            (i, j)
        })
        .collect();
    assert_eq!(edges.len(), cloud.len() * 5);
    assert!(edges.windows(2).all(|w| w[0] < w[1]), "ordered by target, then source");
}

#[test]
fn train_fusion_and_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, ("8", "4"), &["--variant", "xor"]);
    let config = tmp.path().join("small.toml");
    fs::write(&config, SMALL_MODEL).unwrap();
    let (train, test) = (data.join("train"), data.join("test"));

    let run = |dir: &Path, workers: &str| {
        let o = geofuse(&[
            "train-3d",
            "--config",
            s(&config),
            "--train",
            s(&train),
            "--test",
            s(&test),
            "--workers",
            workers,
            "--out",
            s(dir),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let (geo1, geo2) = (tmp.path().join("geo1"), tmp.path().join("geo2"));
    run(&geo1, "1");
    run(&geo2, "3");
    for f in ["best.ckpt", "last.ckpt", "metrics.tsv", "config.toml"] {
        assert_eq!(fs::read(geo1.join(f)).unwrap(), fs::read(geo2.join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(geo1.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 2);
    let manifest = Manifest::load(&geo1).unwrap();
    assert_eq!(manifest.command, "train-3d");
    assert!(!manifest.args.iter().any(|a| a.contains("geo1")));
    assert_eq!(manifest.model.as_ref().unwrap().classes, 4);

    let fused = tmp.path().join("fused");
    let o = geofuse(&[
        "train-fusion",
        "--config",
        s(&config),
        "--geometric",
        s(&geo1),
        "--train",
        s(&train),
        "--test",
        s(&test),
        "--out",
        s(&fused),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    // Evaluating a run on its own test split reproduces the best epoch's accuracy.
    for model in [&geo1, &fused] {
        let out = tmp.path().join("eval");
        let o = geofuse(&["eval", "--model", s(model), "--data", s(&test), "--out", s(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let eval = fs::read_to_string(out.join("eval.tsv")).unwrap();
        let acc = eval.lines().find_map(|l| l.strip_prefix("mean_acc\t")).unwrap().to_string();
        let best = Manifest::load(model).unwrap().model.unwrap().best_epoch;
        let recorded = fs::read_to_string(model.join("metrics.tsv")).unwrap();
        let line = recorded
            .lines()
            .find(|l| l.starts_with(&format!("{best}\ttest\t")))
            .unwrap()
            .to_string();
        assert_eq!(line.split('\t').nth(3).unwrap(), acc, "{}", model.display());
    }
}
