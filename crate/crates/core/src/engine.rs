//! Cycle-accurate SRAM trace generation for the three dataflows.
//!
//! The array is fed under the stall-free contract: every operand arrives
//! at its PE exactly when the PE is scheduled to use it. Neighbor links
//! are store-and-forward, so edge inputs are skewed by one cycle per row
//! (left edge) or per column (top edge). Folds run back to back and cycle
//! numbering starts at 0 for each layer.
//!
//! Per-fold schedules, with `ru`/`cu` the rows/columns in use:
//!
//! * OS: row `i` streams its window and column `j` its filter, element `k`
//!   entering at `i + k` / `j + k`. PE(i,j) reduces in place and writes its
//!   output at `i + j + W_sz - 1`. Span `ru + cu + W_sz - 2`.
//! * WS: `ru` fill cycles load one filter element per column per cycle
//!   (deepest row first), then window `w` enters row `r` at
//!   `ru + w + r`. Partial sums flow down and column `j` emits window `w`
//!   at `ru + w + ru - 1 + j`. Span `2 ru + N_w + cu - 2`.
//! * IS: WS with windows pinned to columns and filters streamed from the
//!   left. Span `2 ru + M + cu - 2`.
//!
//! When the reduction does not fit in one fold (WS/IS), non-final
//! reduction folds write partial sums to the OFMAP scratchpad and the next
//! reduction fold reads them back as the column's incoming partial sum.

use crate::config::{ArchConfig, Dataflow, LayerSpec};
use crate::error::{Result, SimError};
use crate::mapping::{fold_schedule, workload_counts, Fold, FoldPlan, WorkloadCounts};

/// Operand layout in the three address regions: row-major, channel
/// innermost, `word_bytes` per element.
#[derive(Debug, Clone)]
pub struct AddressMap {
    word: u64,
    ifmap_offset: u64,
    filter_offset: u64,
    ofmap_offset: u64,
    ifmap_h: usize,
    ifmap_w: usize,
    channels: usize,
    filter_h: usize,
    filter_w: usize,
    num_filters: usize,
    ofmap_w: usize,
    stride: usize,
    window_size: usize,
    n_windows: usize,
    /// Word offset of window element k relative to the window's origin.
    elem_offsets: Vec<u64>,
}

impl AddressMap {
    pub fn new(layer: &LayerSpec, arch: &ArchConfig) -> Result<Self> {
        let counts = workload_counts(layer)?;
        let c = layer.channels;
        let mut elem_offsets = Vec::with_capacity(counts.window_size);
        for r in 0..layer.filter_h {
            for s in 0..layer.filter_w {
                for ch in 0..c {
                    elem_offsets.push(((r * layer.ifmap_w + s) * c + ch) as u64);
                }
            }
        }
        let map = AddressMap {
            word: arch.word_bytes,
            ifmap_offset: arch.ifmap_offset,
            filter_offset: arch.filter_offset,
            ofmap_offset: arch.ofmap_offset,
            ifmap_h: layer.ifmap_h,
            ifmap_w: layer.ifmap_w,
            channels: c,
            filter_h: layer.filter_h,
            filter_w: layer.filter_w,
            num_filters: layer.num_filters,
            ofmap_w: counts.ofmap_w,
            stride: layer.stride,
            window_size: counts.window_size,
            n_windows: counts.n_windows,
            elem_offsets,
        };
        map.check_regions(&layer.name)?;
        Ok(map)
    }

    pub fn ifmap_words(&self) -> u64 {
        (self.ifmap_h * self.ifmap_w * self.channels) as u64
    }

    pub fn filter_words(&self) -> u64 {
        (self.num_filters * self.window_size) as u64
    }

    pub fn ofmap_words(&self) -> u64 {
        (self.n_windows * self.num_filters) as u64
    }

    pub fn word_bytes(&self) -> u64 {
        self.word
    }

    /// Byte ranges `[start, end)` of the IFMAP, filter and OFMAP regions.
    pub fn regions(&self) -> [(u64, u64); 3] {
        [
            (self.ifmap_offset, self.ifmap_offset + self.ifmap_words() * self.word),
            (self.filter_offset, self.filter_offset + self.filter_words() * self.word),
            (self.ofmap_offset, self.ofmap_offset + self.ofmap_words() * self.word),
        ]
    }

    fn check_regions(&self, layer: &str) -> Result<()> {
        let names = ["IFMAP", "filter", "OFMAP"];
        let regions = self.regions();
        for a in 0..3 {
            for b in a + 1..3 {
                let (s1, e1) = regions[a];
                let (s2, e2) = regions[b];
                if s1 < e2 && s2 < e1 {
                    return Err(SimError::sim(
                        layer,
                        format!(
                            "{} region [{s1}, {e1}) overlaps {} region [{s2}, {e2}); raise the offsets",
                            names[a], names[b]
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn ifmap(&self, h: usize, w: usize, c: usize) -> Result<u64> {
        if h >= self.ifmap_h || w >= self.ifmap_w || c >= self.channels {
            return Err(SimError::Invalid(format!(
                "IFMAP coordinate ({h},{w},{c}) outside {}x{}x{}",
                self.ifmap_h, self.ifmap_w, self.channels
            )));
        }
        Ok(self.ifmap_offset + (((h * self.ifmap_w + w) * self.channels + c) as u64) * self.word)
    }

    pub fn filter(&self, f: usize, r: usize, s: usize, c: usize) -> Result<u64> {
        if f >= self.num_filters || r >= self.filter_h || s >= self.filter_w || c >= self.channels
        {
            return Err(SimError::Invalid(format!(
                "filter coordinate ({f},{r},{s},{c}) out of range"
            )));
        }
        let idx = ((f * self.filter_h + r) * self.filter_w + s) * self.channels + c;
        Ok(self.filter_offset + idx as u64 * self.word)
    }

    pub fn ofmap(&self, pixel: usize, f: usize) -> Result<u64> {
        if pixel >= self.n_windows || f >= self.num_filters {
            return Err(SimError::Invalid(format!(
                "OFMAP coordinate ({pixel},{f}) out of range"
            )));
        }
        Ok(self.ofmap_elem(pixel, f))
    }

    #[inline]
    fn window_elem(&self, window: usize, k: usize) -> u64 {
        let oh = window / self.ofmap_w;
        let ow = window % self.ofmap_w;
        let origin = ((oh * self.stride * self.ifmap_w + ow * self.stride) * self.channels) as u64;
        self.ifmap_offset + (origin + self.elem_offsets[k]) * self.word
    }

    #[inline]
    fn filter_elem(&self, f: usize, k: usize) -> u64 {
        self.filter_offset + ((f * self.window_size + k) as u64) * self.word
    }

    #[inline]
    fn ofmap_elem(&self, pixel: usize, f: usize) -> u64 {
        self.ofmap_offset + ((pixel * self.num_filters + f) as u64) * self.word
    }

    /// Inverse of the OFMAP layout: `(pixel, filter)` for an address.
    pub fn ofmap_coord(&self, addr: u64) -> Option<(usize, usize)> {
        let rel = addr.checked_sub(self.ofmap_offset)?;
        if rel % self.word != 0 {
            return None;
        }
        let idx = (rel / self.word) as usize;
        (idx < self.n_windows * self.num_filters)
            .then(|| (idx / self.num_filters, idx % self.num_filters))
    }
}

pub fn addr_ifmap(h: usize, w: usize, c: usize, layer: &LayerSpec, arch: &ArchConfig) -> Result<u64> {
    AddressMap::new(layer, arch)?.ifmap(h, w, c)
}

pub fn addr_filter(
    f: usize,
    r: usize,
    s: usize,
    c: usize,
    layer: &LayerSpec,
    arch: &ArchConfig,
) -> Result<u64> {
    AddressMap::new(layer, arch)?.filter(f, r, s, c)
}

pub fn addr_ofmap(pixel: usize, f: usize, layer: &LayerSpec, arch: &ArchConfig) -> Result<u64> {
    AddressMap::new(layer, arch)?.ofmap(pixel, f)
}

/// Receiver for the per-cycle event stream of one layer.
///
/// For each event kind the engine calls the method at most once per
/// cycle, with strictly increasing cycles, a non-empty slice, and
/// addresses sorted ascending (duplicates are distinct port accesses).
pub trait TraceSink {
    fn ifmap_read(&mut self, _cycle: u64, _addrs: &[u64]) {}
    fn filter_read(&mut self, _cycle: u64, _addrs: &[u64]) {}
    /// `final_values` is false for WS/IS partial sums that a later
    /// reduction fold reads back.
    fn ofmap_write(&mut self, _cycle: u64, _addrs: &[u64], _final_values: bool) {}
    fn ofmap_partial_read(&mut self, _cycle: u64, _addrs: &[u64]) {}
    /// Number of MACs fired this cycle.
    fn compute(&mut self, _cycle: u64, _macs: u64) {}
}

impl<A: TraceSink, B: TraceSink> TraceSink for (A, B) {
    fn ifmap_read(&mut self, cycle: u64, addrs: &[u64]) {
        self.0.ifmap_read(cycle, addrs);
        self.1.ifmap_read(cycle, addrs);
    }
    fn filter_read(&mut self, cycle: u64, addrs: &[u64]) {
        self.0.filter_read(cycle, addrs);
        self.1.filter_read(cycle, addrs);
    }
    fn ofmap_write(&mut self, cycle: u64, addrs: &[u64], final_values: bool) {
        self.0.ofmap_write(cycle, addrs, final_values);
        self.1.ofmap_write(cycle, addrs, final_values);
    }
    fn ofmap_partial_read(&mut self, cycle: u64, addrs: &[u64]) {
        self.0.ofmap_partial_read(cycle, addrs);
        self.1.ofmap_partial_read(cycle, addrs);
    }
    fn compute(&mut self, cycle: u64, macs: u64) {
        self.0.compute(cycle, macs);
        self.1.compute(cycle, macs);
    }
}

impl<S: TraceSink + ?Sized> TraceSink for &mut S {
    fn ifmap_read(&mut self, cycle: u64, addrs: &[u64]) {
        (**self).ifmap_read(cycle, addrs)
    }
    fn filter_read(&mut self, cycle: u64, addrs: &[u64]) {
        (**self).filter_read(cycle, addrs)
    }
    fn ofmap_write(&mut self, cycle: u64, addrs: &[u64], final_values: bool) {
        (**self).ofmap_write(cycle, addrs, final_values)
    }
    fn ofmap_partial_read(&mut self, cycle: u64, addrs: &[u64]) {
        (**self).ofmap_partial_read(cycle, addrs)
    }
    fn compute(&mut self, cycle: u64, macs: u64) {
        (**self).compute(cycle, macs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub addresses: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn push(&mut self, cycle: u64, addrs: &[u64]) {
        self.events.push(TraceEvent {
            cycle,
            addresses: addrs.to_vec(),
        });
    }

    pub fn access_count(&self) -> u64 {
        self.events.iter().map(|e| e.addresses.len() as u64).sum()
    }

    pub fn last_cycle(&self) -> Option<u64> {
        self.events.last().map(|e| e.cycle)
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Flattened `(cycle, address)` pairs in trace order.
    pub fn pairs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.events
            .iter()
            .flat_map(|e| e.addresses.iter().map(move |&a| (e.cycle, a)))
    }
}

/// Fully materialized traces for one layer. Only suitable for small
/// layers; large runs stream through a [`TraceSink`] instead.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceSet {
    pub ifmap_reads: Trace,
    pub filter_reads: Trace,
    pub ofmap_writes: Trace,
    /// Parallel to `ofmap_writes.events`: whether the event holds final values.
    pub ofmap_write_final: Vec<bool>,
    pub ofmap_partial_reads: Trace,
    /// `(cycle, macs fired)` for every cycle with at least one MAC.
    pub compute: Vec<(u64, u64)>,
    pub total_cycles: u64,
}

impl TraceSink for TraceSet {
    fn ifmap_read(&mut self, cycle: u64, addrs: &[u64]) {
        self.ifmap_reads.push(cycle, addrs);
    }
    fn filter_read(&mut self, cycle: u64, addrs: &[u64]) {
        self.filter_reads.push(cycle, addrs);
    }
    fn ofmap_write(&mut self, cycle: u64, addrs: &[u64], final_values: bool) {
        self.ofmap_writes.push(cycle, addrs);
        self.ofmap_write_final.push(final_values);
    }
    fn ofmap_partial_read(&mut self, cycle: u64, addrs: &[u64]) {
        self.ofmap_partial_reads.push(cycle, addrs);
    }
    fn compute(&mut self, cycle: u64, macs: u64) {
        self.compute.push((cycle, macs));
    }
}

impl TraceSet {
    pub fn total_macs(&self) -> u64 {
        self.compute.iter().map(|&(_, m)| m).sum()
    }

    /// Final OFMAP write addresses, in trace order.
    pub fn final_writes(&self) -> impl Iterator<Item = u64> + '_ {
        self.ofmap_writes
            .events
            .iter()
            .zip(&self.ofmap_write_final)
            .filter(|(_, &fin)| fin)
            .flat_map(|(e, _)| e.addresses.iter().copied())
    }
}

/// Static facts about a generated layer.
#[derive(Debug, Clone)]
pub struct LayerSchedule {
    pub counts: WorkloadCounts,
    pub plan: FoldPlan,
    pub total_cycles: u64,
}

/// Per-fold span in cycles for the closed-form schedules above.
pub fn fold_span(dataflow: Dataflow, fold: &Fold) -> u64 {
    let (ru, cu, n) = (fold.rows_used as u64, fold.cols_used as u64, fold.stream_len as u64);
    match dataflow {
        Dataflow::OutputStationary => ru + cu + n - 2,
        Dataflow::WeightStationary | Dataflow::InputStationary => 2 * ru + n + cu - 2,
    }
}

/// Runtime of a layer without generating its traces.
pub fn layer_cycles(layer: &LayerSpec, arch: &ArchConfig) -> Result<u64> {
    let counts = workload_counts(layer)?;
    let plan = fold_schedule(&counts, arch);
    Ok(plan.folds.iter().map(|f| fold_span(arch.dataflow, f)).sum())
}

struct Emitter<'a, S: TraceSink> {
    sink: &'a mut S,
    buf: Vec<u64>,
}

impl<S: TraceSink> Emitter<'_, S> {
    fn sorted(&mut self) -> &[u64] {
        if !self.buf.is_sorted() {
            self.buf.sort_unstable();
        }
        &self.buf
    }

    fn ifmap(&mut self, cycle: u64) {
        if !self.buf.is_empty() {
            self.sorted();
            self.sink.ifmap_read(cycle, &self.buf);
        }
        self.buf.clear();
    }

    fn filter(&mut self, cycle: u64) {
        if !self.buf.is_empty() {
            self.sorted();
            self.sink.filter_read(cycle, &self.buf);
        }
        self.buf.clear();
    }

    fn partial(&mut self, cycle: u64) {
        if !self.buf.is_empty() {
            self.sorted();
            self.sink.ofmap_partial_read(cycle, &self.buf);
        }
        self.buf.clear();
    }

    fn write(&mut self, cycle: u64, final_values: bool) {
        if !self.buf.is_empty() {
            self.sorted();
            self.sink.ofmap_write(cycle, &self.buf, final_values);
        }
        self.buf.clear();
    }

    fn macs(&mut self, cycle: u64, n: u64) {
        if n > 0 {
            self.sink.compute(cycle, n);
        }
    }
}

/// Inclusive range of lanes `l < lanes` for which `t - l` lies in `[0, len)`.
#[inline]
fn active_lanes(t: usize, lanes: usize, len: usize) -> std::ops::Range<usize> {
    let lo = (t + 1).saturating_sub(len);
    let hi = lanes.min(t + 1);
    lo..hi.max(lo)
}

/// Number of PE pairs (i < ru, j < cu) whose diagonal offset `t - i - j`
/// lies in `[0, len)`.
#[inline]
fn active_pairs(t: usize, ru: usize, cu: usize, len: usize) -> u64 {
    active_lanes(t, ru, len + cu - 1)
        .map(|i| active_lanes(t - i, cu, len).len() as u64)
        .sum()
}

/// Generates the traces of one layer into `sink` using `arch.dataflow`.
pub fn generate<S: TraceSink>(layer: &LayerSpec, arch: &ArchConfig, sink: &mut S) -> Result<LayerSchedule> {
    arch.validate()?;
    let counts = workload_counts(layer)?;
    let map = AddressMap::new(layer, arch)?;
    let plan = fold_schedule(&counts, arch);
    let mut em = Emitter {
        sink,
        buf: Vec::with_capacity(arch.array_rows.max(arch.array_cols)),
    };
    let mut base = 0u64;
    for fold in &plan.folds {
        match arch.dataflow {
            Dataflow::OutputStationary => os_fold(&map, arch, fold, base, &mut em),
            Dataflow::WeightStationary => {
                stationary_fold(&map, arch, &plan, fold, base, Role::Weights, &mut em)
            }
            Dataflow::InputStationary => {
                stationary_fold(&map, arch, &plan, fold, base, Role::Inputs, &mut em)
            }
        }
        base += fold_span(arch.dataflow, fold);
    }
    Ok(LayerSchedule {
        counts,
        plan,
        total_cycles: base,
    })
}

fn os_fold<S: TraceSink>(map: &AddressMap, arch: &ArchConfig, fold: &Fold, base: u64, em: &mut Emitter<S>) {
    let (ru, cu, wsz) = (fold.rows_used, fold.cols_used, fold.stream_len);
    let win0 = fold.row_block * arch.array_rows;
    let f0 = fold.col_block * arch.array_cols;
    let span = ru + cu + wsz - 2;
    for t in 0..span {
        let cycle = base + t as u64;
        for i in active_lanes(t, ru, wsz) {
            em.buf.push(map.window_elem(win0 + i, t - i));
        }
        em.ifmap(cycle);
        for j in active_lanes(t, cu, wsz) {
            em.buf.push(map.filter_elem(f0 + j, t - j));
        }
        em.filter(cycle);
        em.macs(cycle, active_pairs(t, ru, cu, wsz));
        if t + 1 >= wsz {
            let d = t + 1 - wsz;
            for i in active_lanes(d, ru, cu) {
                em.buf.push(map.ofmap_elem(win0 + i, f0 + (d - i)));
            }
            em.write(cycle, true);
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    /// Filters pinned to columns, windows streamed from the left.
    Weights,
    /// Windows pinned to columns, filters streamed from the left.
    Inputs,
}

fn stationary_fold<S: TraceSink>(
    map: &AddressMap,
    arch: &ArchConfig,
    plan: &FoldPlan,
    fold: &Fold,
    base: u64,
    role: Role,
    em: &mut Emitter<S>,
) {
    let (ru, cu, n) = (fold.rows_used, fold.cols_used, fold.stream_len);
    let k0 = fold.row_block * arch.array_rows;
    let c0 = fold.col_block * arch.array_cols;
    let final_values = fold.row_block + 1 == plan.grid_rows;
    let reads_partials = fold.row_block > 0;

    // (pinned column j, streamed index s) -> OFMAP element
    let out = |j: usize, s: usize| match role {
        Role::Weights => map.ofmap_elem(s, c0 + j),
        Role::Inputs => map.ofmap_elem(c0 + j, s),
    };

    for t in 0..ru {
        let cycle = base + t as u64;
        let k = k0 + ru - 1 - t;
        for j in 0..cu {
            em.buf.push(match role {
                Role::Weights => map.filter_elem(c0 + j, k),
                Role::Inputs => map.window_elem(c0 + j, k),
            });
        }
        match role {
            Role::Weights => em.filter(cycle),
            Role::Inputs => em.ifmap(cycle),
        }
    }

    let stream_base = base + ru as u64;
    for t in 0..(ru + n + cu - 2) {
        let cycle = stream_base + t as u64;
        for r in active_lanes(t, ru, n) {
            em.buf.push(match role {
                Role::Weights => map.window_elem(t - r, k0 + r),
                Role::Inputs => map.filter_elem(t - r, k0 + r),
            });
        }
        match role {
            Role::Weights => em.ifmap(cycle),
            Role::Inputs => em.filter(cycle),
        }
        if reads_partials {
            for j in active_lanes(t, cu, n) {
                em.buf.push(out(j, t - j));
            }
            em.partial(cycle);
        }
        em.macs(cycle, active_pairs(t, ru, cu, n));
        if t + 1 >= ru {
            let d = t + 1 - ru;
            for j in active_lanes(d, cu, n) {
                em.buf.push(out(j, d - j));
            }
            em.write(cycle, final_values);
        }
    }
}

fn with_dataflow(arch: &ArchConfig, expected: Dataflow) -> Result<()> {
    if arch.dataflow != expected {
        return Err(SimError::Invalid(format!(
            "engine for {expected} called with dataflow {}",
            arch.dataflow
        )));
    }
    Ok(())
}

/// Materializes the traces of one layer under the configured dataflow.
pub fn gen_traces(layer: &LayerSpec, arch: &ArchConfig) -> Result<TraceSet> {
    let mut set = TraceSet::default();
    let sched = generate(layer, arch, &mut set)?;
    set.total_cycles = sched.total_cycles;
    Ok(set)
}

pub fn gen_traces_os(layer: &LayerSpec, arch: &ArchConfig) -> Result<TraceSet> {
    with_dataflow(arch, Dataflow::OutputStationary)?;
    gen_traces(layer, arch)
}

pub fn gen_traces_ws(layer: &LayerSpec, arch: &ArchConfig) -> Result<TraceSet> {
    with_dataflow(arch, Dataflow::WeightStationary)?;
    gen_traces(layer, arch)
}

pub fn gen_traces_is(layer: &LayerSpec, arch: &ArchConfig) -> Result<TraceSet> {
    with_dataflow(arch, Dataflow::InputStationary)?;
    gen_traces(layer, arch)
}
