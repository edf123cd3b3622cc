use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().unwrap()
}

fn probenids(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probenids")).args(args).output().unwrap()
}

fn small_config(dir: &Path, scenarios: &str) -> PathBuf {
    let f = fixtures();
    let scenario = dir.join("attack.toml");
    fs::write(&scenario, scenarios).unwrap();
    let path = dir.join("experiment.toml");
    fs::write(
        &path,
        format!(
            "topology = {:?}\nscenarios = [{:?}]\nseed = 5\nwarmup_tu = 20\nduration_tu = 400\n\n[split]\nmin_train_rows = 20\n",
            f.join("topologies/synth30.topo"),
            scenario,
        ),
    )
    .unwrap();
    path
}

const DISTORTION: &str = "kind = \"link-weight-distortion\"\nattacker = \"R07\"\nvictims = [\"R01-R02\"]\nwindows = [[300, 400]]\n";

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn run_matches_chained_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), DISTORTION);
    let cfg = cfg.to_str().unwrap();
    let whole = tmp.path().join("whole");
    let staged = tmp.path().join("staged");
    let out = probenids(&["run", "-c", cfg, "-o", whole.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for stage in ["partition", "probe-scheme", "simulate", "train", "detect", "evaluate"] {
        let out = probenids(&[stage, "-c", cfg, "-o", staged.to_str().unwrap()]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let (a, b) = (tree(&whole), tree(&staged));
    assert!(a.len() > 10);
    assert_eq!(a.iter().map(|x| &x.0).collect::<Vec<_>>(), b.iter().map(|x| &x.0).collect::<Vec<_>>());
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        assert!(x == y, "{} differs", name.display());
    }
    let report = probenids(&["report", "-c", cfg, "-o", whole.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&report.stdout).contains("recall"));
}

#[test]
fn no_attack_run_raises_no_alarm() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "kind = \"none\"\n");
    let out_dir = tmp.path().join("out");
    let out = probenids(&["run", "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json = probenids(&["report", "--json", "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    let text = String::from_utf8(json.stdout).unwrap();
    assert!(text.contains("\"tp\": 0") && text.contains("\"fp\": 0"), "{text}");
    assert!(text.contains("\"tn\": 100"), "{text}");
}

#[test]
fn exit_codes_separate_config_and_runtime_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = probenids(&["run", "-c", "/nonexistent/experiment.toml"]);
    assert_eq!(missing.status.code(), Some(1));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "topology = \"x.topo\"\nseed = 1\nwarmup_tu = 0\nduration_tu = 10\nbogus = 3\n").unwrap();
    assert_eq!(probenids(&["run", "-c", bad.to_str().unwrap()]).status.code(), Some(1));

    assert_eq!(probenids(&["frobnicate"]).status.code(), Some(1));

    let cfg = small_config(tmp.path(), DISTORTION);
    let out_dir = tmp.path().join("out");
    let early = probenids(&["detect", "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert_eq!(early.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&early.stderr).contains("detect failed"));

    let no_out = probenids(&["run", "-c", cfg.to_str().unwrap()]);
    assert_eq!(no_out.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_row_per_intensity_and_feature_set() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(
        tmp.path(),
        "kind = \"dns-cache-poisoning\"\nattacker = \"R20\"\nvictims = [\"R01\", \"R02\"]\nwindows = [[300, 400]]\n",
    );
    let out_dir = tmp.path().join("out");
    let out = probenids(&[
        "sweep",
        "-c",
        cfg.to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
        "--intensities",
        "0.5,1.0",
        "--feature-set",
        "probes",
        "--feature-set",
        "links+mibs",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("reports/sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5, "{csv}");
    assert!(lines[0].starts_with("intensity,features,auc"));
    assert!(lines[2].starts_with("0.5,links+mibs,"));
}
