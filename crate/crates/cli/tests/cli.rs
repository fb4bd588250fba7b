use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_systolic-sim");
const HEADER: &str = "Layer Name,IFMAP Height,IFMAP Width,Filter Height,Filter Width,Channels,Num Filter,Strides";

fn sim(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env_remove("SYSTOLIC_SIM_OUT")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn one_run_dir(root: &Path) -> PathBuf {
    let dirs: Vec<_> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

fn default_config_with(dir: &Path, topology: &str, dataflow: &str) -> PathBuf {
    let text = systolic_sim::workloads::DEFAULT_CONFIG
        .replace("Topology = resnet50.csv", &format!("Topology = {topology}"))
        .replace("DataFlow = os", &format!("DataFlow = {dataflow}"));
    write(dir, "arch.cfg", &text)
}

#[test]
fn one_layer_run_writes_five_traces_and_two_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "one.csv", &format!("{HEADER}\nconv1,20,20,3,3,8,32,1\n"));
    let cfg = default_config_with(tmp.path(), "one.csv", "os");
    let out = sim(&["run", "--config", cfg.to_str().unwrap(), "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = one_run_dir(&tmp.path().join("o"));
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(
        files,
        [
            "conv1_dram_read.csv",
            "conv1_dram_write.csv",
            "conv1_filter_sram_read.csv",
            "conv1_ifmap_sram_read.csv",
            "conv1_ofmap_sram_write.csv",
            "manifest.json",
            "network.csv",
            "summary.csv",
        ]
    );
    let trace = fs::read_to_string(dir.join("conv1_ifmap_sram_read.csv")).unwrap();
    let mut prev = (0i64, 0u64);
    for line in trace.lines().skip(1) {
        let (c, a) = line.split_once(',').unwrap();
        let cur = (c.parse().unwrap(), a.parse().unwrap());
        assert!(cur >= prev);
        prev = cur;
    }
}

#[test]
fn dataflow_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = default_config_with(tmp.path(), "ncf", "os");
    let out = sim(
        &["run", "--config", cfg.to_str().unwrap(), "--dataflow", "ws", "--no-traces", "--out", "o"],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(one_run_dir(&tmp.path().join("o")).join("summary.csv")).unwrap();
    let rows: Vec<_> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("ws")));
}

#[test]
fn rerun_is_byte_identical_and_report_regenerates() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "run", "--topology", "transformer", "--rows", "16", "--cols", "16", "--sram-ifmap", "4",
        "--sram-filter", "4", "--sram-ofmap", "2", "--dataflow", "is",
    ];
    let mut dirs = Vec::new();
    for id in ["a", "b"] {
        let mut a = args.to_vec();
        a.extend(["--out", "o", "--run-id", id]);
        assert!(sim(&a, tmp.path()).status.success());
        dirs.push(tmp.path().join("o").join(id));
    }
    let names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    for n in names.iter().filter(|n| *n != "manifest.json") {
        assert_eq!(fs::read(dirs[0].join(n)).unwrap(), fs::read(dirs[1].join(n)).unwrap(), "{n:?}");
    }
    let summary = fs::read(dirs[0].join("summary.csv")).unwrap();
    fs::remove_file(dirs[0].join("summary.csv")).unwrap();
    fs::remove_file(dirs[0].join("network.csv")).unwrap();
    let out = sim(&["report", dirs[0].to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(dirs[0].join("summary.csv")).unwrap(), summary);
    assert!(dirs[0].join("network.csv").is_file());
}

#[test]
fn exit_codes_are_distinct() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_df = default_config_with(tmp.path(), "ncf", "rs");
    let out = sim(&["run", "--config", bad_df.to_str().unwrap(), "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(10));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));

    write(tmp.path(), "bad.csv", &format!("{HEADER}\nconv1,20,20,3,3,8,32,0\n"));
    let out = sim(&["run", "--topology", "bad.csv", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(11));
    assert!(String::from_utf8_lossy(&out.stderr).contains("topology error at line 2"));

    // 128 rows of 16-byte words do not fit a 1 KB working set
    let cfg = default_config_with(tmp.path(), "ncf", "os").to_str().unwrap().to_string();
    let text = fs::read_to_string(&cfg).unwrap().replace("WordBytes = 1", "WordBytes = 16");
    fs::write(&cfg, text).unwrap();
    let out = sim(&["run", "--config", &cfg, "--sram-ifmap", "1", "--no-traces", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(12));
    assert!(String::from_utf8_lossy(&out.stderr).contains("underflow"));

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = sim(&["report", empty.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(13));
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["run", "--topology", "ncf", "--no-traces", "--rows", "8", "--cols", "8"])
        .current_dir(tmp.path())
        .env("SYSTOLIC_SIM_OUT", tmp.path().join("envroot"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(one_run_dir(&tmp.path().join("envroot")).join("summary.csv").is_file());
}

fn sweep_rows(tmp: &Path, args: &[&str]) -> Vec<Vec<String>> {
    let mut a = vec!["sweep"];
    a.extend_from_slice(args);
    a.extend(["--csv", "s.csv"]);
    let out = sim(&a, tmp);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    fs::read_to_string(tmp.join("s.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn dataflow_sweep_defaults_give_fifteen_cells_per_workload() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "t.csv", &format!("{HEADER}\nc,12,12,3,3,4,16,1\nfc,8,1,1,1,32,8,1\n"));
    let rows = sweep_rows(tmp.path(), &["dataflow", "--workload", "t.csv"]);
    assert_eq!(rows.len(), 1 + 15);
    assert!(rows[1..].iter().all(|r| r.last().unwrap() == "ok"));
}

#[test]
fn memory_sweep_single_size() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = sweep_rows(tmp.path(), &["memory", "--axis", "64", "--workload", "ncf,W7", "--dataflows", "os"]);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.len() == rows[0].len()));
    assert_eq!(rows[1][0], "ncf");
    assert_eq!(rows[2][0], "transformer");
}

#[test]
fn scale_sweep_single_rung_has_unit_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let rows = sweep_rows(tmp.path(), &["scale", "--axis", "64", "--workload", "ncf"]);
    let col = rows[0].iter().position(|h| h == "runtime_ratio").unwrap();
    let mode = rows[0].iter().position(|h| h == "mode").unwrap();
    let ratios: Vec<_> = rows[1..].iter().filter(|r| r[mode] == "ratio").collect();
    assert!(!ratios.is_empty());
    assert!(ratios.iter().all(|r| r[col] == "1.000000"));
}

#[test]
fn sweep_with_no_valid_cell_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = default_config_with(tmp.path(), "ncf", "os");
    let text = fs::read_to_string(&cfg).unwrap().replace("WordBytes = 1", "WordBytes = 64");
    fs::write(&cfg, text).unwrap();
    let out = sim(
        &["sweep", "memory", "--config", cfg.to_str().unwrap(), "--axis", "1", "--workload", "ncf", "--csv", "s.csv"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(12));
    assert!(tmp.path().join("s.csv").is_file());
}
