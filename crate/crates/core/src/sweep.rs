//! Design-space studies: dataflow vs array size, scratchpad size, array
//! aspect ratio, and scale-up vs scale-out.
//!
//! Every study produces rows in one CSV schema. Cells run in parallel and
//! are sorted by their key afterwards, so output order never depends on
//! scheduling. A failing cell becomes a row with an error status instead
//! of aborting the sweep.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::{ArchConfig, Dataflow, LayerSpec};
use crate::error::{Result, SimError};
use crate::metrics::{summarize_network, LayerReport};
use crate::simulate::{simulate_layer, simulate_layer_capacities, Capacities};

pub const DEFAULT_ARRAY_SIZES: [u64; 5] = [8, 16, 32, 64, 128];
pub const DEFAULT_SRAM_KB: [u64; 7] = [32, 64, 128, 256, 512, 1024, 2048];
pub const DEFAULT_ASPECT_PES: u64 = 16384;
pub const DEFAULT_ASPECT_MIN_DIM: u64 = 8;
pub const DEFAULT_PE_LADDER: [u64; 5] = [64, 256, 1024, 4096, 16384];
/// Side of one scale-out node.
pub const NODE_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Study {
    DataflowVsSize,
    MemorySweep,
    AspectRatio,
    ScaleUpVsOut,
}

impl Study {
    pub fn as_str(self) -> &'static str {
        match self {
            Study::DataflowVsSize => "dataflow",
            Study::MemorySweep => "memory",
            Study::AspectRatio => "aspect",
            Study::ScaleUpVsOut => "scale",
        }
    }

    pub fn default_axis(self) -> Vec<u64> {
        match self {
            Study::DataflowVsSize => DEFAULT_ARRAY_SIZES.to_vec(),
            Study::MemorySweep => DEFAULT_SRAM_KB.to_vec(),
            Study::AspectRatio => vec![DEFAULT_ASPECT_PES],
            Study::ScaleUpVsOut => DEFAULT_PE_LADDER.to_vec(),
        }
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Study {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dataflow" => Ok(Study::DataflowVsSize),
            "memory" => Ok(Study::MemorySweep),
            "aspect" => Ok(Study::AspectRatio),
            "scale" => Ok(Study::ScaleUpVsOut),
            _ => Err(SimError::Config(format!(
                "unknown study `{s}`; expected dataflow, memory, aspect or scale"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedWorkload {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub study: Study,
    /// Array sides, SRAM sizes in KB, total PE counts (aspect) or the PE
    /// ladder, depending on the study.
    pub axis: Vec<u64>,
    pub workloads: Vec<NamedWorkload>,
    pub dataflows: Vec<Dataflow>,
    /// Settings not varied by the study.
    pub base: ArchConfig,
}

impl SweepSpec {
    pub fn new(study: Study, workloads: Vec<NamedWorkload>, base: ArchConfig) -> Self {
        SweepSpec {
            study,
            axis: study.default_axis(),
            workloads,
            dataflows: Dataflow::ALL.to_vec(),
            base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis.is_empty() || self.axis.contains(&0) {
            return Err(SimError::Config("sweep axis must be nonempty and positive".into()));
        }
        if self.workloads.is_empty() || self.dataflows.is_empty() {
            return Err(SimError::Config("sweep needs at least one workload and dataflow".into()));
        }
        if let Some(w) = self.workloads.iter().find(|w| w.layers.is_empty()) {
            return Err(SimError::Config(format!("workload `{}` has no layers", w.name)));
        }
        Ok(())
    }

    pub fn run(&self) -> Result<Vec<SweepRow>> {
        self.validate()?;
        match self.study {
            Study::DataflowVsSize => {
                run_dataflow_study(&self.workloads, &self.axis, &self.dataflows, &self.base)
            }
            Study::MemorySweep => run_memory_sweep(&self.workloads, &self.axis, &self.dataflows, &self.base),
            Study::AspectRatio => {
                let mut rows = Vec::new();
                for &pes in &self.axis {
                    rows.extend(run_aspect_ratio_study(
                        &self.workloads,
                        pes,
                        DEFAULT_ASPECT_MIN_DIM,
                        &self.dataflows,
                        &self.base,
                    )?);
                }
                Ok(rows)
            }
            Study::ScaleUpVsOut => run_scale_study(&self.workloads, &self.axis, &self.dataflows, &self.base),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mode {
    /// One array, whole workload.
    Single,
    ScaleUp,
    ScaleOut,
    Ratio,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::ScaleUp => "up",
            Mode::ScaleOut => "out",
            Mode::Ratio => "ratio",
        }
    }
}

/// Layer column value for rows that aggregate a whole workload.
pub const ALL_LAYERS: &str = "*";

pub const SWEEP_HEADER: &str = "workload,layer,dataflow,rows,cols,sram_kb,pe_count,mode,\
cycles,macs,energy,dram_rd_bytes,avg_rd_bw,steady_rd_bw,peak_rd_bw,required_rd_bw,\
filter_dram_bw,runtime_ratio,filter_bw_ratio,status";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub cycles: Option<u64>,
    pub macs: Option<u64>,
    pub energy: Option<f64>,
    pub dram_read_bytes: Option<u64>,
    pub avg_read_bw: Option<f64>,
    pub steady_read_bw: Option<f64>,
    pub peak_read_bw: Option<f64>,
    pub required_read_bw: Option<f64>,
    /// Average filter bytes per cycle fetched from DRAM.
    pub filter_dram_bw: Option<f64>,
    pub runtime_ratio: Option<f64>,
    pub filter_bw_ratio: Option<f64>,
}

impl Metrics {
    fn from_report(r: &LayerReport) -> Self {
        Metrics {
            cycles: Some(r.total_cycles),
            macs: Some(r.macs),
            energy: Some(r.energy),
            dram_read_bytes: Some(r.dram_read_bytes),
            avg_read_bw: Some(r.avg_read_bw),
            steady_read_bw: Some(r.steady_read_bw),
            peak_read_bw: Some(r.peak_read_bw),
            required_read_bw: Some(r.required_read_bw),
            filter_dram_bw: Some(filter_bw(r)),
            runtime_ratio: None,
            filter_bw_ratio: None,
        }
    }
}

fn filter_bw(r: &LayerReport) -> f64 {
    r.dram_filter_read_bytes as f64 / r.total_cycles as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub workload: String,
    pub layer: String,
    pub dataflow: Dataflow,
    pub rows: usize,
    pub cols: usize,
    pub sram_kb: u64,
    pub pe_count: u64,
    pub mode: Mode,
    pub metrics: Metrics,
    /// `ok`, `skipped: ...` or `error: ...`.
    pub status: String,
    order: (usize, usize),
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status.starts_with("ok")
    }

    fn sort_key(&self) -> impl Ord + '_ {
        (
            self.order.0,
            self.order.1,
            self.dataflow,
            self.pe_count,
            self.rows,
            self.sram_kb,
            self.mode,
        )
    }

    pub fn csv_row(&self, out: &mut String) {
        fn opt<T: fmt::Display>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        fn optf(v: Option<f64>) -> String {
            v.map(|x| format!("{x:.6}")).unwrap_or_default()
        }
        let m = &self.metrics;
        let status = if self.status.contains(',') || self.status.contains('"') {
            format!("\"{}\"", self.status.replace('"', "\"\""))
        } else {
            self.status.clone()
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.workload,
            self.layer,
            self.dataflow,
            self.rows,
            self.cols,
            self.sram_kb,
            self.pe_count,
            self.mode.as_str(),
            opt(m.cycles),
            opt(m.macs),
            m.energy.map(|e| format!("{e:.3}")).unwrap_or_default(),
            opt(m.dram_read_bytes),
            optf(m.avg_read_bw),
            optf(m.steady_read_bw),
            optf(m.peak_read_bw),
            optf(m.required_read_bw),
            optf(m.filter_dram_bw),
            optf(m.runtime_ratio),
            optf(m.filter_bw_ratio),
            status,
        );
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        r.csv_row(&mut out);
    }
    out
}

fn sorted(mut rows: Vec<SweepRow>) -> Vec<SweepRow> {
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    rows
}

struct Cell<'a> {
    wi: usize,
    workload: &'a NamedWorkload,
    arch: ArchConfig,
}

impl Cell<'_> {
    fn row(&self, layer: (usize, &str), mode: Mode, outcome: Result<Metrics>) -> SweepRow {
        let (metrics, status) = match outcome {
            Ok(m) => (m, "ok".to_string()),
            Err(e) => (Metrics::default(), format!("error: {e}")),
        };
        SweepRow {
            workload: self.workload.name.clone(),
            layer: layer.1.to_string(),
            dataflow: self.arch.dataflow,
            rows: self.arch.array_rows,
            cols: self.arch.array_cols,
            sram_kb: self.arch.ifmap_sram_kb,
            pe_count: (self.arch.array_rows * self.arch.array_cols) as u64,
            mode,
            metrics,
            status,
            order: (self.wi, layer.0),
        }
    }
}

fn network_total(layers: &[LayerSpec], arch: &ArchConfig) -> Result<LayerReport> {
    let reports = layers
        .iter()
        .map(|l| simulate_layer(l, arch).map(|o| o.report))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_network(reports)?.total)
}

fn network_rows(cells: Vec<Cell<'_>>) -> Vec<SweepRow> {
    let rows = cells
        .par_iter()
        .map(|c| {
            let total = network_total(&c.workload.layers, &c.arch);
            c.row((0, ALL_LAYERS), Mode::Single, total.map(|t| Metrics::from_report(&t)))
        })
        .collect();
    sorted(rows)
}

/// Runtime and energy of every workload on square arrays of each side.
pub fn run_dataflow_study(
    workloads: &[NamedWorkload],
    sizes: &[u64],
    dataflows: &[Dataflow],
    base: &ArchConfig,
) -> Result<Vec<SweepRow>> {
    let shapes: Vec<_> = sizes.iter().map(|&s| (s as usize, s as usize)).collect();
    Ok(network_rows(shape_cells(workloads, &shapes, dataflows, base)))
}

fn shape_cells<'a>(
    workloads: &'a [NamedWorkload],
    shapes: &[(usize, usize)],
    dataflows: &[Dataflow],
    base: &ArchConfig,
) -> Vec<Cell<'a>> {
    let mut cells = Vec::new();
    for (wi, workload) in workloads.iter().enumerate() {
        for &(rows, cols) in shapes {
            for &df in dataflows {
                let mut arch = base.clone();
                arch.array_rows = rows;
                arch.array_cols = cols;
                arch.dataflow = df;
                cells.push(Cell { wi, workload, arch });
            }
        }
    }
    cells
}

/// All `2^k x total/2^k` shapes whose sides are at least `min_dim`.
pub fn aspect_shapes(total_pes: u64, min_dim: u64) -> Result<Vec<(usize, usize)>> {
    if !total_pes.is_power_of_two() || min_dim == 0 {
        return Err(SimError::Config(format!(
            "aspect study needs a power-of-two PE count, got {total_pes}"
        )));
    }
    let mut shapes = Vec::new();
    let mut rows = 1u64;
    while rows <= total_pes {
        let cols = total_pes / rows;
        if rows >= min_dim && cols >= min_dim {
            shapes.push((rows as usize, cols as usize));
        }
        rows *= 2;
    }
    Ok(shapes)
}

/// Runtime of every workload on each array shape with `total_pes` PEs.
pub fn run_aspect_ratio_study(
    workloads: &[NamedWorkload],
    total_pes: u64,
    min_dim: u64,
    dataflows: &[Dataflow],
    base: &ArchConfig,
) -> Result<Vec<SweepRow>> {
    let shapes = aspect_shapes(total_pes, min_dim)?;
    Ok(network_rows(shape_cells(workloads, &shapes, dataflows, base)))
}

/// DRAM demand of every workload as the IFMAP and filter scratchpads grow.
/// Each layer is simulated once per dataflow; all capacities are evaluated
/// in the same pass.
pub fn run_memory_sweep(
    workloads: &[NamedWorkload],
    sram_kb: &[u64],
    dataflows: &[Dataflow],
    base: &ArchConfig,
) -> Result<Vec<SweepRow>> {
    let caps: Vec<Capacities> = sram_kb
        .iter()
        .map(|&kb| Capacities {
            ifmap: kb * 1024,
            filter: kb * 1024,
            ofmap: base.ofmap_capacity_bytes(),
        })
        .collect();
    let mut jobs = Vec::new();
    for (wi, w) in workloads.iter().enumerate() {
        for &df in dataflows {
            let mut arch = base.clone();
            arch.dataflow = df;
            jobs.push((wi, w, arch));
        }
    }
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .flat_map_iter(|(wi, w, arch)| {
            // per layer: one result per capacity, or one error for all
            let per_layer: Vec<Result<Vec<Result<LayerReport>>>> = w
                .layers
                .par_iter()
                .map(|l| simulate_layer_capacities(l, arch, &caps))
                .collect();
            sram_kb
                .iter()
                .enumerate()
                .map(|(ci, &kb)| {
                    let mut a = arch.clone();
                    a.ifmap_sram_kb = kb;
                    a.filter_sram_kb = kb;
                    let cell = Cell {
                        wi: *wi,
                        workload: w,
                        arch: a,
                    };
                    let reports = per_layer
                        .iter()
                        .map(|r| match r {
                            Ok(v) => match &v[ci] {
                                Ok(rep) => Ok(rep.clone()),
                                Err(e) => Err(SimError::Invalid(e.to_string())),
                            },
                            Err(e) => Err(SimError::Invalid(e.to_string())),
                        })
                        .collect::<Result<Vec<_>>>();
                    let total = reports.and_then(summarize_network).map(|n| Metrics::from_report(&n.total));
                    cell.row((0, ALL_LAYERS), Mode::Single, total)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(sorted(rows))
}

/// Splits the filters of `layer` over `k` shards, sizes differing by at
/// most one with the larger shards first.
pub fn partition_output_channels(layer: &LayerSpec, k: usize) -> Result<Vec<LayerSpec>> {
    if k == 0 || k > layer.num_filters {
        return Err(SimError::sim(
            &layer.name,
            format!("cannot split {} filters over {k} shards", layer.num_filters),
        ));
    }
    if k == 1 {
        return Ok(vec![layer.clone()]);
    }
    let (base, extra) = (layer.num_filters / k, layer.num_filters % k);
    Ok((0..k)
        .map(|i| LayerSpec {
            name: format!("{}_shard{i}", layer.name),
            num_filters: base + usize::from(i < extra),
            ..layer.clone()
        })
        .collect())
}

struct ScaleOutcome {
    up: LayerReport,
    out: Vec<LayerReport>,
}

impl ScaleOutcome {
    fn out_cycles(&self) -> u64 {
        self.out.iter().map(|r| r.total_cycles).max().unwrap_or(0)
    }

    fn out_metrics(&self) -> Metrics {
        let sum = |f: fn(&LayerReport) -> u64| self.out.iter().map(f).sum::<u64>();
        let cycles = self.out_cycles();
        let bytes = sum(|r| r.dram_read_bytes);
        let cold = sum(|r| r.cold_read_bytes);
        Metrics {
            cycles: Some(cycles),
            macs: Some(sum(|r| r.macs)),
            energy: Some(self.out.iter().map(|r| r.energy).sum()),
            dram_read_bytes: Some(bytes),
            avg_read_bw: Some(bytes as f64 / cycles as f64),
            steady_read_bw: Some((bytes - cold) as f64 / cycles as f64),
            peak_read_bw: Some(self.out.iter().map(|r| r.peak_read_bw).sum()),
            required_read_bw: Some(self.out.iter().map(|r| r.required_read_bw).sum()),
            filter_dram_bw: Some(self.out_filter_bw()),
            runtime_ratio: None,
            filter_bw_ratio: None,
        }
    }

    fn out_filter_bw(&self) -> f64 {
        self.out.iter().map(filter_bw).sum()
    }
}

fn ladder_rung(pes: u64) -> Result<(usize, usize)> {
    let side = (pes as f64).sqrt().round() as u64;
    let node = (NODE_DIM * NODE_DIM) as u64;
    if side * side != pes || pes % node != 0 {
        return Err(SimError::Config(format!(
            "PE count {pes} must be a perfect square and a multiple of {node}"
        )));
    }
    Ok((side as usize, (pes / node) as usize))
}

/// Compares one `sqrt(P) x sqrt(P)` array against `P/64` nodes of 8x8
/// arrays that split every layer along its filters. Per layer the
/// scale-out runtime is the slowest shard and its filter bandwidth the sum
/// over shards. Layers with fewer filters than nodes are skipped and
/// flagged. Each node keeps the full scratchpad configuration.
pub fn run_scale_study(
    workloads: &[NamedWorkload],
    ladder: &[u64],
    dataflows: &[Dataflow],
    base: &ArchConfig,
) -> Result<Vec<SweepRow>> {
    let rungs = ladder.iter().map(|&p| ladder_rung(p)).collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for (wi, w) in workloads.iter().enumerate() {
        for (&pes, &(side, nodes)) in ladder.iter().zip(&rungs) {
            for &df in dataflows {
                for (li, layer) in w.layers.iter().enumerate() {
                    jobs.push((wi, w, pes, side, nodes, df, li, layer));
                }
            }
        }
    }
    let per_layer: Vec<_> = jobs
        .par_iter()
        .map(|&(wi, w, pes, side, nodes, df, li, layer)| {
            let mut up_arch = base.clone();
            up_arch.array_rows = side;
            up_arch.array_cols = side;
            up_arch.dataflow = df;
            let mut node_arch = up_arch.clone();
            node_arch.array_rows = NODE_DIM;
            node_arch.array_cols = NODE_DIM;
            let outcome = if nodes > layer.num_filters {
                None
            } else {
                Some(scale_layer(layer, &up_arch, &node_arch, nodes))
            };
            (wi, w, pes, df, li, layer, up_arch, outcome)
        })
        .collect();

    let mut rows = Vec::new();
    // network aggregates keyed by (workload, pes, dataflow)
    let mut agg: Vec<((usize, u64, Dataflow), (u64, u64, usize, usize, usize, ArchConfig))> = Vec::new();
    for (wi, w, pes, df, li, layer, up_arch, outcome) in per_layer {
        let cell = |arch: &ArchConfig| Cell {
            wi,
            workload: w,
            arch: arch.clone(),
        };
        let up_cell = cell(&up_arch);
        let row = |mode: Mode, m: Result<Metrics>| {
            let mut r = up_cell.row((li + 1, &layer.name), mode, m);
            r.pe_count = pes;
            if mode == Mode::ScaleOut {
                r.rows = NODE_DIM;
                r.cols = NODE_DIM;
            }
            r
        };
        let key = (wi, pes, df);
        let slot = match agg.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                agg.push((key, (0, 0, 0, 0, 0, up_arch.clone())));
                agg.len() - 1
            }
        };
        let entry = &mut agg[slot].1;
        match outcome {
            None => {
                let mut r = row(Mode::Ratio, Ok(Metrics::default()));
                r.status = format!(
                    "skipped: {} filters cannot be split over {} nodes",
                    layer.num_filters,
                    pes as usize / (NODE_DIM * NODE_DIM)
                );
                rows.push(r);
                entry.3 += 1;
            }
            Some(Err(e)) => {
                rows.push(row(Mode::Ratio, Err(e)));
                entry.4 += 1;
            }
            Some(Ok(o)) => {
                let up = Metrics::from_report(&o.up);
                let out = o.out_metrics();
                let ratio = Metrics {
                    runtime_ratio: Some(o.up.total_cycles as f64 / o.out_cycles() as f64),
                    filter_bw_ratio: Some(filter_bw(&o.up) / o.out_filter_bw()),
                    ..Metrics::default()
                };
                entry.0 += o.up.total_cycles;
                entry.1 += o.out_cycles();
                entry.2 += 1;
                rows.push(row(Mode::ScaleUp, Ok(up)));
                rows.push(row(Mode::ScaleOut, Ok(out)));
                rows.push(row(Mode::Ratio, Ok(ratio)));
            }
        }
    }
    for ((wi, pes, _), (up, out, done, skipped, errors, arch)) in agg {
        let cell = Cell {
            wi,
            workload: &workloads[wi],
            arch,
        };
        let m = if errors > 0 {
            Err(SimError::Invalid(format!("{errors} layers failed")))
        } else if done == 0 {
            Ok(Metrics::default())
        } else {
            Ok(Metrics {
                cycles: Some(up),
                runtime_ratio: Some(up as f64 / out as f64),
                ..Metrics::default()
            })
        };
        let mut r = cell.row((0, ALL_LAYERS), Mode::Ratio, m);
        r.pe_count = pes;
        if r.is_ok() && done == 0 {
            r.status = "skipped: no layer has enough filters for this many nodes".into();
        } else if r.is_ok() && skipped > 0 {
            r.status = format!("ok: {skipped} layers skipped");
        }
        rows.push(r);
    }
    Ok(sorted(rows))
}

fn scale_layer(layer: &LayerSpec, up: &ArchConfig, node: &ArchConfig, nodes: usize) -> Result<ScaleOutcome> {
    let up = simulate_layer(layer, up)?.report;
    let out = partition_output_channels(layer, nodes)?
        .iter()
        .map(|s| simulate_layer(s, node).map(|o| o.report))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScaleOutcome { up, out })
}
