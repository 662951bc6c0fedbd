use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const QD_CONFIG: &str = r#"
seed = 5
pulses = 200000

[source]
kind = "qd"
prep_prob = 0.85
eps_x = 0.002
eps_xx = 0.004

[chain]
x1 = { efficiency = 0.3, dark_rate_hz = 100.0, jitter_sigma_ps = 15.0 }
x2 = { efficiency = 0.3, dark_rate_hz = 100.0, jitter_sigma_ps = 15.0 }
xx1 = { efficiency = 0.3, dark_rate_hz = 100.0, jitter_sigma_ps = 15.0 }
xx2 = { efficiency = 0.3, dark_rate_hz = 100.0, jitter_sigma_ps = 15.0 }

[analysis]
windows_ns = [0.16, 0.28, 0.8, 2.0]
"#;

const SPDC_CONFIG: &str = r#"
seed = 3
pulses = 1000000

[source]
kind = "spdc"
mu = 0.1

[chain]
x1 = { efficiency = 0.3 }
x2 = { efficiency = 0.3 }
xx1 = { efficiency = 0.3 }
xx2 = { efficiency = 0.3 }

[analysis]
windows_ns = [0.28, 1.0]
"#;

fn qngpair(args: &[&str]) -> Output {
    qngpair_env(args, &[])
}

fn qngpair_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qngpair"));
    cmd.args(args).env_remove("QNGPAIR_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: TempDir::new().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> String {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    }

    fn simulate(&self, config: &str, out: &str, extra: &[&str]) -> Output {
        let out_path = self.path(out);
        let mut args = vec![
            "simulate",
            "--config",
            config,
            "--out",
            out_path.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        qngpair(&args)
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_readable_stream_and_prints_seed() {
    let ws = Workspace::new();
    let cfg = ws.write("qd.toml", QD_CONFIG);
    let out = ws.simulate(&cfg, "a.qtt", &["--pulses", "10000"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("seed: 5"));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["pulses"], 10000);
    let fold = qngpair(&[
        "analyze",
        "fold",
        "--stream",
        s(&ws.path("a.qtt")),
        "--config",
        &cfg,
    ]);
    assert_eq!(code(&fold), 0, "{}", stderr(&fold));
    let v: serde_json::Value = serde_json::from_str(&stdout(&fold)).unwrap();
    assert_eq!(v["n_pulses"], 10000);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let ws = Workspace::new();
    let cfg = ws.write("qd.toml", QD_CONFIG);
    assert_eq!(code(&ws.simulate(&cfg, "a.qtt", &[])), 0);
    assert_eq!(code(&ws.simulate(&cfg, "b.qtt", &[])), 0);
    assert_eq!(code(&ws.simulate(&cfg, "c.qtt", &["--seed", "6"])), 0);
    let a = fs::read(ws.path("a.qtt")).unwrap();
    assert_eq!(a, fs::read(ws.path("b.qtt")).unwrap());
    assert_ne!(a, fs::read(ws.path("c.qtt")).unwrap());
}

#[test]
fn thread_count_does_not_change_output() {
    let ws = Workspace::new();
    let cfg = ws.write("qd.toml", QD_CONFIG);
    let run = |name: &str, threads: &str| {
        let p = ws.path(name);
        let out = qngpair_env(
            &["simulate", "--config", &cfg, "--out", s(&p)],
            &[("QNGPAIR_THREADS", threads)],
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::read(p).unwrap()
    };
    assert_eq!(run("one.qtt", "1"), run("four.qtt", "4"));
}

#[test]
fn certify_reference_statistics() {
    let ws = Workspace::new();
    let stats = ws.write("p.json", r#"{"ps": 5.74e-4, "pe": 8.55e-7}"#);
    let report = ws.path("report.json");
    let out = qngpair(&["certify", "pairs", "--stats", &stats, "--json", s(&report)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("0.940"), "{}", stdout(&out));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    let row = &v["rows"][0]["report"];
    let t = row["t_coin_db"]["finite"].as_f64().unwrap();
    assert!((t - 0.9394).abs() < 0.01, "{t}");
    assert!((row["threshold"].as_f64().unwrap() - 4.6265e-4).abs() < 1e-7);
    assert_eq!(v["certified"], true);
}

#[test]
fn certify_below_threshold_exits_four() {
    let ws = Workspace::new();
    let stats = ws.write("p.json", r#"{"ps": 1e-4, "pe": 8.55e-7}"#);
    let out = qngpair(&["certify", "pairs", "--stats", &stats]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("not violated"));
}

#[test]
fn certify_sps_ideal_source_is_unbounded() {
    let ws = Workspace::new();
    let stats = ws.write("s.json", r#"{"p1": 0.6, "p2plus": 0.0}"#);
    let out = qngpair(&["certify", "sps", "--stats", &stats]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("inf"));
}

#[test]
fn certify_consumes_analyze_output() {
    let ws = Workspace::new();
    let cfg = ws.write("qd.toml", QD_CONFIG);
    assert_eq!(code(&ws.simulate(&cfg, "a.qtt", &[])), 0);
    let stream = ws.path("a.qtt");
    let pairs = qngpair(&["analyze", "pairs", "--stream", s(&stream), "--config", &cfg]);
    assert_eq!(code(&pairs), 0, "{}", stderr(&pairs));
    let stats = ws.write("pairs.json", &stdout(&pairs));
    let out = qngpair(&["certify", "pairs", "--stats", &stats]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let hbt = qngpair(&[
        "analyze",
        "hbt",
        "--stream",
        s(&stream),
        "--config",
        &cfg,
        "--herald",
        "xx",
    ]);
    assert_eq!(code(&hbt), 0, "{}", stderr(&hbt));
    let stats = ws.write("hbt.json", &stdout(&hbt));
    assert_eq!(code(&qngpair(&["certify", "sps", "--stats", &stats])), 0);
}

#[test]
fn certify_stream_reports_every_window() {
    let ws = Workspace::new();
    let cfg = ws.write("qd.toml", QD_CONFIG);
    assert_eq!(code(&ws.simulate(&cfg, "a.qtt", &[])), 0);
    let report = ws.path("r.json");
    let out = qngpair(&[
        "certify",
        "pairs",
        "--stream",
        s(&ws.path("a.qtt")),
        "--config",
        &cfg,
        "--json",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    // wider windows collect more coincidences
    let ps: Vec<f64> = rows
        .iter()
        .map(|r| r["stats"]["ps"].as_f64().unwrap())
        .collect();
    assert!(ps.windows(2).all(|w| w[0] <= w[1]), "{ps:?}");
    assert_eq!(stdout(&out).matches("<- best").count(), 1);
}

#[test]
fn gaussian_source_is_not_certified() {
    let ws = Workspace::new();
    let cfg = ws.write("spdc.toml", SPDC_CONFIG);
    assert_eq!(code(&ws.simulate(&cfg, "s.qtt", &[])), 0);
    let out = qngpair(&[
        "certify",
        "pairs",
        "--stream",
        s(&ws.path("s.qtt")),
        "--config",
        &cfg,
    ]);
    assert_eq!(code(&out), 4, "{}", stdout(&out));
}

#[test]
fn exit_codes_distinguish_failures() {
    let ws = Workspace::new();
    let bad = ws.write("bad.toml", "[source]\nkind = \"qd\"\nprep = 0.5\n");
    let out = ws.simulate(&bad, "x.qtt", &[]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    let out = qngpair(&["analyze", "fold", "--stream", s(&ws.path("missing.qtt"))]);
    assert_eq!(code(&out), 3);

    let garbage = ws.write("garbage.qtt", "not a stream at all");
    let out = qngpair(&["analyze", "pairs", "--stream", &garbage]);
    assert_eq!(code(&out), 3);

    let out = qngpair(&["simulate"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn empty_stream_is_no_data() {
    let ws = Workspace::new();
    let cfg = ws.write(
        "dark.toml",
        "pulses = 1000\n[source]\nkind = \"qd\"\n[chain]\nx1 = { efficiency = 0.0 }\nx2 = { efficiency = 0.0 }\nxx1 = { efficiency = 0.0 }\nxx2 = { efficiency = 0.0 }\n",
    );
    assert_eq!(code(&ws.simulate(&cfg, "e.qtt", &[])), 0);
    let dir = ws.path("report");
    let out = qngpair(&["report", "--stream", s(&ws.path("e.qtt")), "--out", s(&dir)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("no data"));
    assert!(!dir.exists());
}

fn header_lines(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines().take(2).map(|l| format!("{l}\n")).collect()
}

#[test]
fn report_bundles_match_golden_headers() {
    let ws = Workspace::new();
    let cfg = ws.write("qd.toml", QD_CONFIG);
    assert_eq!(code(&ws.simulate(&cfg, "a.qtt", &[])), 0);
    let dir = ws.path("report");
    let out = qngpair(&[
        "report",
        "--stream",
        s(&ws.path("a.qtt")),
        "--config",
        &cfg,
        "--out",
        s(&dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let golden = fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/golden/report_headers.txt"
    ))
    .unwrap();
    let mut expected = golden.lines();
    let mut files = 0;
    while let Some(name) = expected.next() {
        let want = format!(
            "{}\n{}\n",
            expected.next().unwrap(),
            expected.next().unwrap()
        );
        assert_eq!(header_lines(&dir.join(name)), want, "{name}");
        let rows = fs::read_to_string(dir.join(name)).unwrap().lines().count();
        assert!(rows > 2, "{name} has no rows");
        files += 1;
    }
    assert_eq!(files, 13);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert!(summary["g2_x"]["value"].as_f64().is_some());
}

#[test]
fn oracle_grid_header_and_rows() {
    let ws = Workspace::new();
    let csv = ws.path("grid.csv");
    let out = qngpair(&[
        "oracle",
        "--mu",
        "0.01,0.1",
        "--modes",
        "1,10",
        "--eta",
        "0.1,0.5",
        "--dark",
        "0",
        "--out",
        s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let golden = fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/golden/oracle_header.txt"
    ))
    .unwrap();
    assert_eq!(header_lines(&csv), golden);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2 + 8);
    assert!(stderr(&out).contains("violations: 0"));
}

#[test]
fn tomography_and_chsh_from_count_files() {
    let ws = Workspace::new();
    let mut tomo = String::from("x,xx,count\n");
    // ideal |Φ+⟩ at 1000 counts per setting
    for x in ["H", "V", "D", "R"] {
        for xx in ["H", "V", "D", "R"] {
            let p = match (x, xx) {
                ("H", "H") | ("V", "V") | ("D", "D") => 0.5,
                ("H", "V") | ("V", "H") | ("R", "R") => 0.0,
                _ => 0.25,
            };
            tomo.push_str(&format!("{x},{xx},{}\n", p * 1000.0));
        }
    }
    let path = ws.write("tomo.csv", &tomo);
    let out = qngpair(&["analyze", "tomography", "--counts", &path]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["fidelity_phi_plus"].as_f64().unwrap() > 0.999);

    let chsh = ws.write(
        "chsh.csv",
        "setting,pp,pm,mp,mm\n0,4268,732,732,4268\n1,4268,732,732,4268\n2,4268,732,732,4268\n3,732,4268,4268,732\n",
    );
    let out = qngpair(&["analyze", "chsh", "--counts", &chsh]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["s_value"].as_f64().unwrap() - 2.8288).abs() < 1e-9);

    let empty = ws.write("empty.csv", "setting,pp,pm,mp,mm\n");
    assert_eq!(code(&qngpair(&["analyze", "chsh", "--counts", &empty])), 3);
}

#[test]
fn histogram_and_sweep_tables() {
    let ws = Workspace::new();
    let cfg = ws.write("qd.toml", QD_CONFIG);
    assert_eq!(code(&ws.simulate(&cfg, "a.qtt", &[])), 0);
    let stream = ws.path("a.qtt");
    let out = qngpair(&[
        "analyze",
        "correlate",
        "--stream",
        s(&stream),
        "--a",
        "x1,x2",
        "--b",
        "xx1,xx2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("# qngpair correlation v1\ndelay_ps,count\n"));

    let out = qngpair(&["analyze", "sweep", "--stream", s(&stream), "--config", &cfg]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 2 + 4);

    let out = qngpair(&["analyze", "g2", "--stream", s(&stream), "--arm", "xx"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["g2"]["value"].as_f64().unwrap() < 0.1);

    let out = qngpair(&["analyze", "prep", "--stream", s(&stream)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let prep = v["prep"]["near"]["value"].as_f64().unwrap();
    assert!((prep - 0.85).abs() < 0.05, "{prep}");
}
