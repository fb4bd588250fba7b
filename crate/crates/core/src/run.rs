//! End-to-end runs: resolve a configuration, simulate a topology, and write
//! traces, summaries and a manifest into a fresh run directory. Also the
//! inverse: rebuild the summaries from the trace files of a finished run.
//!
//! Layout of `<out>/<run_id>/`:
//!
//! ```text
//! manifest.json
//! <layer>_ifmap_sram_read.csv   <layer>_filter_sram_read.csv
//! <layer>_ofmap_sram_write.csv  <layer>_dram_read.csv  <layer>_dram_write.csv
//! summary.csv                   network.csv
//! ```
//!
//! Every trace file is `cycle,address` sorted by cycle then address, one
//! line per word access. DRAM cycles can be negative (prefetch before the
//! layer starts).

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{parse_config_with_warnings, parse_topology, ArchConfig, Dataflow, LayerSpec};
use crate::engine::{AddressMap, TraceSink};
use crate::error::{Result, SimError};
use crate::mapping::{fold_schedule, workload_counts};
use crate::memory::{gen_dram_read_trace, DramDemand, Epochizer};
use crate::metrics::{parse_energy_table, summarize_network, LayerReport, NetworkReport, SramCounts};
use crate::simulate::{simulate_layer_with, LayerOutcome};
use crate::sweep::{sweep_csv, SweepSpec};
use crate::workloads;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const NETWORK_FILE: &str = "network.csv";
pub const TRACE_HEADER: &str = "cycle,address";
/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SYSTOLIC_SIM_OUT";

pub const TRACE_KINDS: [&str; 5] = [
    "ifmap_sram_read",
    "filter_sram_read",
    "ofmap_sram_write",
    "dram_read",
    "dram_write",
];

/// Values that replace the corresponding config-file settings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArchOverrides {
    pub dataflow: Option<Dataflow>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub sram_ifmap_kb: Option<u64>,
    pub sram_filter_kb: Option<u64>,
    pub sram_ofmap_kb: Option<u64>,
    pub energy_table: Option<PathBuf>,
}

impl ArchOverrides {
    pub fn apply(&self, arch: &mut ArchConfig) -> Result<()> {
        if let Some(d) = self.dataflow {
            arch.dataflow = d;
        }
        if let Some(r) = self.rows {
            arch.array_rows = r;
        }
        if let Some(c) = self.cols {
            arch.array_cols = c;
        }
        if let Some(kb) = self.sram_ifmap_kb {
            arch.ifmap_sram_kb = kb;
        }
        if let Some(kb) = self.sram_filter_kb {
            arch.filter_sram_kb = kb;
        }
        if let Some(kb) = self.sram_ofmap_kb {
            arch.ofmap_sram_kb = kb;
        }
        if let Some(p) = &self.energy_table {
            arch.energy = parse_energy_table(&read_text(p)?)?;
        }
        arch.validate()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| SimError::io(path, e))
}

/// Loads the config file, or the built-in default when `path` is `None`,
/// and applies the overrides. Returns the directory relative topology
/// paths are resolved against.
pub fn resolve_arch(path: Option<&Path>, overrides: &ArchOverrides) -> Result<(ArchConfig, Option<PathBuf>)> {
    let (text, base) = match path {
        Some(p) => (read_text(p)?, p.parent().map(Path::to_path_buf)),
        None => (workloads::DEFAULT_CONFIG.to_string(), None),
    };
    let (mut arch, warnings) = parse_config_with_warnings(&text)?;
    for w in warnings {
        log::warn!("{w}");
    }
    overrides.apply(&mut arch)?;
    Ok((arch, base))
}

/// Reads a topology from a file, falling back to a bundled workload with
/// that id or name. Returns (label, csv text).
pub fn load_topology(spec: &str, base: Option<&Path>) -> Result<(String, String)> {
    let path = match base {
        Some(b) if Path::new(spec).is_relative() => b.join(spec),
        _ => PathBuf::from(spec),
    };
    if path.is_file() {
        return Ok((path.display().to_string(), read_text(&path)?));
    }
    let stem = Path::new(spec)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(spec);
    if let Some(w) = workloads::find(stem) {
        return Ok((format!("bundled:{}", w.name), w.csv.to_string()));
    }
    Err(SimError::io(
        path,
        std::io::Error::new(std::io::ErrorKind::NotFound, "topology not found"),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created: String,
    /// SHA-256 of the resolved config text followed by the topology text.
    pub input_hash: String,
    pub arch: ArchConfig,
    pub workload: String,
    pub layers: Vec<LayerSpec>,
    pub output_dir: PathBuf,
    pub traces: bool,
    /// File stem used for each layer's trace files, in layer order.
    pub layer_files: Vec<String>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = read_text(&path)?;
        serde_json::from_str(&text).map_err(|e| SimError::Trace {
            path,
            msg: e.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub topology: Option<String>,
    pub overrides: ArchOverrides,
    pub out_root: PathBuf,
    pub traces: bool,
    pub jobs: Option<usize>,
    pub run_id: Option<String>,
}

impl RunOptions {
    pub fn new(out_root: impl Into<PathBuf>) -> Self {
        RunOptions {
            config: None,
            topology: None,
            overrides: ArchOverrides::default(),
            out_root: out_root.into(),
            traces: true,
            jobs: None,
            run_id: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub network: NetworkReport,
}

/// File stems for layer names: unsafe characters become `_` and repeated
/// names get their layer index appended.
pub fn layer_file_stems(layers: &[LayerSpec]) -> Vec<String> {
    let clean: Vec<String> = layers
        .iter()
        .map(|l| {
            l.name
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
                .collect()
        })
        .collect();
    let mut seen = HashSet::new();
    clean
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let dup = clean.iter().filter(|o| *o == s).count() > 1;
            let mut stem = if dup { format!("{s}_{i}") } else { s.clone() };
            while !seen.insert(stem.clone()) {
                stem.push_str(&format!("_{i}"));
            }
            stem
        })
        .collect()
}

pub fn trace_file(stem: &str, kind: &str) -> String {
    format!("{stem}_{kind}.csv")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| SimError::io(path, e))
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| SimError::Config(format!("cannot start worker pool: {e}")))
}

fn fresh_dir(root: &Path, id: &str) -> Result<(String, PathBuf)> {
    fs::create_dir_all(root).map_err(|e| SimError::io(root, e))?;
    let mut n = 0;
    loop {
        let candidate = if n == 0 { id.to_string() } else { format!("{id}-{n}") };
        let dir = root.join(&candidate);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((candidate, dir)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(SimError::io(dir, e)),
        }
    }
}

/// Simulates a topology and writes the run directory.
pub fn cmd_run(opts: &RunOptions) -> Result<RunOutput> {
    let (arch, base) = resolve_arch(opts.config.as_deref(), &opts.overrides)?;
    let spec = opts.topology.clone().unwrap_or_else(|| arch.topology_path.clone());
    let (label, topo_text) = load_topology(&spec, base.as_deref())?;
    let layers = parse_topology(&topo_text)?;
    if layers.is_empty() {
        return Err(SimError::Topology {
            line: 1,
            msg: "topology has no layers".into(),
        });
    }

    let mut hasher = Sha256::new();
    hasher.update(arch.to_config_string().as_bytes());
    hasher.update(topo_text.as_bytes());
    let input_hash: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let now = chrono::Utc::now();
    let id = opts
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}_{}", now.format("%Y%m%dT%H%M%SZ"), &input_hash[..12]));
    let (run_id, dir) = fresh_dir(&opts.out_root, &id)?;

    let stems = layer_file_stems(&layers);
    let mut files = vec![MANIFEST_FILE.to_string()];
    if opts.traces {
        for s in &stems {
            files.extend(TRACE_KINDS.iter().map(|k| trace_file(s, k)));
        }
    }
    files.push(SUMMARY_FILE.into());
    files.push(NETWORK_FILE.into());
    let manifest = RunManifest {
        run_id,
        created: now.to_rfc3339(),
        input_hash,
        arch: arch.clone(),
        workload: label,
        layers: layers.clone(),
        output_dir: dir.clone(),
        traces: opts.traces,
        layer_files: stems.clone(),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join(MANIFEST_FILE), &json)?;

    let pool = thread_pool(opts.jobs)?;
    let reports = pool.install(|| {
        layers
            .par_iter()
            .zip(&stems)
            .map(|(layer, stem)| {
                let outcome = if opts.traces {
                    run_layer_with_traces(layer, &arch, &dir, stem)?
                } else {
                    simulate_layer_with(layer, &arch, false, &mut NoTraces)?
                };
                log::info!("{}: {} cycles", layer.name, outcome.report.total_cycles);
                Ok(outcome.report)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let network = summarize_network(reports)?;
    write_file(&dir.join(SUMMARY_FILE), &network.summary_csv())?;
    write_file(&dir.join(NETWORK_FILE), &network.network_csv())?;
    Ok(RunOutput { dir, manifest, network })
}

struct NoTraces;
impl TraceSink for NoTraces {}

/// Streams SRAM events straight into the three trace files.
struct TraceWriter {
    files: [(PathBuf, BufWriter<File>); 3],
    error: Option<SimError>,
}

impl TraceWriter {
    fn create(dir: &Path, stem: &str) -> Result<Self> {
        let open = |kind: &str| -> Result<(PathBuf, BufWriter<File>)> {
            let path = dir.join(trace_file(stem, kind));
            let mut w = BufWriter::new(File::create(&path).map_err(|e| SimError::io(&path, e))?);
            writeln!(w, "{TRACE_HEADER}").map_err(|e| SimError::io(&path, e))?;
            Ok((path, w))
        };
        Ok(TraceWriter {
            files: [open(TRACE_KINDS[0])?, open(TRACE_KINDS[1])?, open(TRACE_KINDS[2])?],
            error: None,
        })
    }

    fn emit(&mut self, which: usize, cycle: u64, addrs: &[u64]) {
        if self.error.is_some() {
            return;
        }
        let (path, w) = &mut self.files[which];
        for a in addrs {
            if let Err(e) = writeln!(w, "{cycle},{a}") {
                self.error = Some(SimError::io(path.clone(), e));
                return;
            }
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(e) = self.error {
            return Err(e);
        }
        for (path, mut w) in self.files {
            w.flush().map_err(|e| SimError::io(path, e))?;
        }
        Ok(())
    }
}

impl TraceSink for TraceWriter {
    fn ifmap_read(&mut self, cycle: u64, addrs: &[u64]) {
        self.emit(0, cycle, addrs);
    }

    fn filter_read(&mut self, cycle: u64, addrs: &[u64]) {
        self.emit(1, cycle, addrs);
    }

    fn ofmap_write(&mut self, cycle: u64, addrs: &[u64], _final_values: bool) {
        self.emit(2, cycle, addrs);
    }
}

fn write_dram(path: &Path, entries: &[(i64, u64)]) -> Result<()> {
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| SimError::io(path, e);
    writeln!(w, "{TRACE_HEADER}").map_err(io)?;
    for (c, a) in entries {
        writeln!(w, "{c},{a}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn run_layer_with_traces(layer: &LayerSpec, arch: &ArchConfig, dir: &Path, stem: &str) -> Result<LayerOutcome> {
    let mut writer = TraceWriter::create(dir, stem)?;
    let outcome = simulate_layer_with(layer, arch, true, &mut writer)?;
    writer.finish()?;
    write_dram(&dir.join(trace_file(stem, TRACE_KINDS[3])), &outcome.dram.read_trace)?;
    write_dram(&dir.join(trace_file(stem, TRACE_KINDS[4])), &outcome.dram.write_trace)?;
    Ok(outcome)
}

/// Iterates `(cycle, address)` pairs of a trace file.
fn read_trace(path: &Path, mut each: impl FnMut(i64, u64)) -> Result<()> {
    let file = File::open(path).map_err(|e| SimError::io(path, e))?;
    let corrupt = |line: usize, msg: &str| SimError::Trace {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    };
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == TRACE_HEADER => {}
        Some(Err(e)) => return Err(SimError::io(path, e)),
        _ => return Err(corrupt(1, "missing `cycle,address` header")),
    }
    let mut last = i64::MIN;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| SimError::io(path, e))?;
        let n = i + 2;
        let (c, a) = line.split_once(',').ok_or_else(|| corrupt(n, "expected two fields"))?;
        let c: i64 = c.trim().parse().map_err(|_| corrupt(n, "bad cycle"))?;
        let a: u64 = a.trim().parse().map_err(|_| corrupt(n, "bad address"))?;
        if c < last {
            return Err(corrupt(n, "cycles out of order"));
        }
        last = c;
        each(c, a);
    }
    Ok(())
}

/// Rebuilds one layer's report from its trace files. MAC count and fold
/// plan come from the layer shape recorded in the manifest.
pub fn report_layer(dir: &Path, stem: &str, layer: &LayerSpec, arch: &ArchConfig) -> Result<LayerReport> {
    let path = |kind: &str| dir.join(trace_file(stem, kind));
    let counts = workload_counts(layer)?;
    let plan = fold_schedule(&counts, arch);
    let map = AddressMap::new(layer, arch)?;
    let word = arch.word_bytes;
    let [ifmap_region, filter_region, ofmap_region] = map.regions();

    // SRAM reads: counts, first use and the epoch prefetch requirement
    let read_side = |kind: &str, cap: u64, region: (u64, u64)| -> Result<(u64, Option<i64>, f64)> {
        let mut ep = Epochizer::new(cap, word, Some((region.0, (region.1 - region.0) / word)), false)?;
        let (mut n, mut first, mut cur, mut buf) = (0u64, None, None, Vec::new());
        let flush = |c: Option<i64>, buf: &mut Vec<u64>, ep: &mut Epochizer| {
            if let Some(c) = c {
                ep.feed(c as u64, buf);
                buf.clear();
            }
        };
        read_trace(&path(kind), |c, a| {
            n += 1;
            first.get_or_insert(c);
            if cur != Some(c) {
                flush(cur, &mut buf, &mut ep);
                cur = Some(c);
            }
            buf.push(a);
        })?;
        flush(cur, &mut buf, &mut ep);
        let epochs = ep.finish().map_err(|e| SimError::sim(&layer.name, e.to_string()))?;
        Ok((n, first, gen_dram_read_trace(&epochs, word).required_bw))
    };
    let (ifmap_reads, ifmap_first, ifmap_req) =
        read_side(TRACE_KINDS[0], arch.ifmap_capacity_bytes(), ifmap_region)?;
    let (filter_reads, filter_first, filter_req) =
        read_side(TRACE_KINDS[1], arch.filter_capacity_bytes(), filter_region)?;

    let mut writes = 0u64;
    let mut last_write = None;
    let mut written = vec![false; ((ofmap_region.1 - ofmap_region.0) / word) as usize];
    let mut distinct = 0u64;
    read_trace(&path(TRACE_KINDS[2]), |c, a| {
        writes += 1;
        last_write = Some(c);
        if let Some(slot) = a
            .checked_sub(ofmap_region.0)
            .and_then(|o| written.get_mut((o / word) as usize))
        {
            if !*slot {
                *slot = true;
                distinct += 1;
            }
        }
    })?;
    let total_cycles = last_write
        .map(|c| c as u64 + 1)
        .ok_or_else(|| SimError::Trace {
            path: path(TRACE_KINDS[2]),
            msg: "no OFMAP writes".into(),
        })?;

    // DRAM side: split by region, cold = before the partition's first use
    let in_region = |a: u64, r: (u64, u64)| a >= r.0 && a < r.1;
    let (mut ifmap_words, mut filter_words, mut cold_words) = (0u64, 0u64, 0u64);
    let mut peak = PeakCounter::default();
    read_trace(&path(TRACE_KINDS[3]), |c, a| {
        peak.add(c);
        if in_region(a, ifmap_region) {
            ifmap_words += 1;
            cold_words += u64::from(ifmap_first.is_some_and(|f| c < f));
        } else if in_region(a, filter_region) {
            filter_words += 1;
            cold_words += u64::from(filter_first.is_some_and(|f| c < f));
        }
    })?;
    let peak_read = peak.finish();
    let mut write_words = 0u64;
    let mut peak = PeakCounter::default();
    read_trace(&path(TRACE_KINDS[4]), |c, _| {
        write_words += 1;
        peak.add(c);
    })?;
    let peak_write = peak.finish();

    let reads = (ifmap_words + filter_words) * word;
    let cycles = total_cycles as f64;
    let dram = DramDemand {
        read_trace: Vec::new(),
        write_trace: Vec::new(),
        total_dram_reads: reads,
        total_dram_writes: write_words * word,
        cold_read_bytes: cold_words * word,
        avg_read_bw: reads as f64 / cycles,
        peak_read_bw: (peak_read * word) as f64,
        avg_write_bw: (write_words * word) as f64 / cycles,
        peak_write_bw: (peak_write * word) as f64,
        steady_read_bw: (reads - cold_words * word) as f64 / cycles,
        required_read_bw: ifmap_req + filter_req,
    };
    let sram = SramCounts {
        total_cycles,
        macs: counts.macs_total,
        ifmap_reads,
        filter_reads,
        ofmap_writes: writes,
        ofmap_partial_reads: writes - distinct,
    };
    Ok(LayerReport::assemble(
        &layer.name,
        arch,
        &plan,
        &sram,
        &dram,
        (ifmap_words * word, filter_words * word),
    ))
}

#[derive(Default)]
struct PeakCounter {
    cycle: Option<i64>,
    run: u64,
    max: u64,
}

impl PeakCounter {
    fn add(&mut self, c: i64) {
        if self.cycle != Some(c) {
            self.cycle = Some(c);
            self.run = 0;
        }
        self.run += 1;
        self.max = self.max.max(self.run);
    }

    fn finish(self) -> u64 {
        self.max
    }
}

/// Recomputes `summary.csv` and `network.csv` of a run from its traces.
pub fn cmd_report(dir: &Path, jobs: Option<usize>) -> Result<NetworkReport> {
    let manifest = RunManifest::load(dir)?;
    if !manifest.traces {
        return Err(SimError::Trace {
            path: dir.to_path_buf(),
            msg: "run was made without traces".into(),
        });
    }
    let pool = thread_pool(jobs)?;
    let reports = pool.install(|| {
        manifest
            .layers
            .par_iter()
            .zip(&manifest.layer_files)
            .map(|(l, stem)| report_layer(dir, stem, l, &manifest.arch))
            .collect::<Result<Vec<_>>>()
    })?;
    let network = summarize_network(reports)?;
    write_file(&dir.join(SUMMARY_FILE), &network.summary_csv())?;
    write_file(&dir.join(NETWORK_FILE), &network.network_csv())?;
    Ok(network)
}

/// Runs a sweep and writes its CSV. Fails only when no cell succeeded.
pub fn cmd_sweep(spec: &SweepSpec, out: &Path, jobs: Option<usize>) -> Result<Vec<crate::sweep::SweepRow>> {
    let rows = thread_pool(jobs)?.install(|| spec.run())?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| SimError::io(parent, e))?;
    }
    write_file(out, &sweep_csv(&rows))?;
    if !rows.iter().any(|r| r.is_ok()) {
        return Err(SimError::Simulation {
            layer: spec.study.to_string(),
            msg: "no sweep cell succeeded".into(),
        });
    }
    Ok(rows)
}
