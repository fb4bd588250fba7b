//! Brute-force PE-grid simulator used to check the trace engine.
//!
//! Every PE is modeled with explicit registers and every link with
//! one-cycle store-and-forward delay. Operands carry a tag (reduction
//! index, window or filter id) and synthetic integer values, so the grid
//! checks both that operands meet where they should and that the final
//! OFMAP equals a direct convolution. Fold boundaries are found by
//! stepping until every output of the fold has been produced; nothing
//! here uses the engine's closed-form spans.
//!
//! Verification-only: intended for small layers, not workloads.

use std::collections::{BTreeMap, HashMap};

use crate::config::{ArchConfig, Dataflow, LayerSpec};
use crate::engine::{AddressMap, TraceSet};
use crate::error::{Result, SimError};

pub const MAX_ORACLE_PES: usize = 4096;
pub const MAX_ORACLE_MACS: u64 = 1_000_000;

pub fn ifmap_value(h: usize, w: usize, c: usize) -> i64 {
    ((h * 31 + w * 17 + c * 7) % 11) as i64 - 5
}

pub fn filter_value(f: usize, r: usize, s: usize, c: usize) -> i64 {
    ((f * 13 + r * 5 + s * 3 + c) % 7) as i64 - 3
}

fn ofmap_dims(layer: &LayerSpec) -> (usize, usize) {
    (
        (layer.ifmap_h - layer.filter_h) / layer.stride + 1,
        (layer.ifmap_w - layer.filter_w) / layer.stride + 1,
    )
}

/// Direct convolution over the synthetic operands: `(pixel, filter) -> value`.
pub fn direct_convolution(layer: &LayerSpec) -> BTreeMap<(usize, usize), i64> {
    let (oh, ow) = ofmap_dims(layer);
    let mut out = BTreeMap::new();
    for y in 0..oh {
        for x in 0..ow {
            for f in 0..layer.num_filters {
                let mut acc = 0;
                for r in 0..layer.filter_h {
                    for s in 0..layer.filter_w {
                        for c in 0..layer.channels {
                            acc += ifmap_value(y * layer.stride + r, x * layer.stride + s, c)
                                * filter_value(f, r, s, c);
                        }
                    }
                }
                out.insert((y * ow + x, f), acc);
            }
        }
    }
    out
}

/// Per-cycle edge demands and outputs, keyed by cycle. Address lists are
/// sorted ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeSchedule {
    pub ifmap_reads: BTreeMap<u64, Vec<u64>>,
    pub filter_reads: BTreeMap<u64, Vec<u64>>,
    /// `(address, final)` pairs.
    pub ofmap_writes: BTreeMap<u64, Vec<(u64, bool)>>,
    pub ofmap_partial_reads: BTreeMap<u64, Vec<u64>>,
    pub macs: BTreeMap<u64, u64>,
}

impl EdgeSchedule {
    pub fn from_traces(t: &TraceSet) -> Self {
        let collect = |tr: &crate::engine::Trace| {
            tr.events
                .iter()
                .map(|e| {
                    let mut a = e.addresses.clone();
                    a.sort_unstable();
                    (e.cycle, a)
                })
                .collect::<BTreeMap<_, _>>()
        };
        let ofmap_writes = t
            .ofmap_writes
            .events
            .iter()
            .zip(&t.ofmap_write_final)
            .map(|(e, &fin)| {
                let mut a: Vec<_> = e.addresses.iter().map(|&x| (x, fin)).collect();
                a.sort_unstable();
                (e.cycle, a)
            })
            .collect();
        EdgeSchedule {
            ifmap_reads: collect(&t.ifmap_reads),
            filter_reads: collect(&t.filter_reads),
            ofmap_writes,
            ofmap_partial_reads: collect(&t.ofmap_partial_reads),
            macs: t.compute.iter().copied().collect(),
        }
    }

    fn finish(&mut self) {
        for v in self.ifmap_reads.values_mut() {
            v.sort_unstable();
        }
        for v in self.filter_reads.values_mut() {
            v.sort_unstable();
        }
        for v in self.ofmap_partial_reads.values_mut() {
            v.sort_unstable();
        }
        for v in self.ofmap_writes.values_mut() {
            v.sort_unstable();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleRun {
    pub cycles: u64,
    pub outputs: BTreeMap<(usize, usize), i64>,
    pub schedule: EdgeSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Token {
    tag: usize,
    value: i64,
}

/// Operand source feeding one edge port: element `n` enters at `start + n`.
struct Feeder {
    start: u64,
    items: Vec<(Token, u64)>,
}

impl Feeder {
    fn at(&self, t: u64) -> Option<(Token, u64)> {
        t.checked_sub(self.start)
            .and_then(|n| self.items.get(n as usize).copied())
    }
}

struct Layout<'a> {
    layer: &'a LayerSpec,
    map: AddressMap,
    ofmap_w: usize,
}

impl Layout<'_> {
    /// Coordinates of element `k` of window `p`: (h, w, c) with c innermost.
    fn window_elem(&self, p: usize, k: usize) -> (usize, usize, usize) {
        let l = self.layer;
        let (y, x) = (p / self.ofmap_w, p % self.ofmap_w);
        let c = k % l.channels;
        let s = (k / l.channels) % l.filter_w;
        let r = k / (l.channels * l.filter_w);
        (y * l.stride + r, x * l.stride + s, c)
    }

    fn ifmap_operand(&self, p: usize, k: usize, tag: usize) -> (Token, u64) {
        let (h, w, c) = self.window_elem(p, k);
        let addr = self.map.ifmap(h, w, c).expect("window inside IFMAP");
        (
            Token {
                tag,
                value: ifmap_value(h, w, c),
            },
            addr,
        )
    }

    fn filter_operand(&self, f: usize, k: usize, tag: usize) -> (Token, u64) {
        let l = self.layer;
        let c = k % l.channels;
        let s = (k / l.channels) % l.filter_w;
        let r = k / (l.channels * l.filter_w);
        let addr = self.map.filter(f, r, s, c).expect("filter element in range");
        (
            Token {
                tag,
                value: filter_value(f, r, s, c),
            },
            addr,
        )
    }
}

fn chunks(total: usize, size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < total {
        let len = size.min(total - start);
        out.push((start, len));
        start += len;
    }
    out
}

struct Grid<'a> {
    layout: Layout<'a>,
    sched: EdgeSchedule,
    memory: HashMap<u64, i64>,
    cycle: u64,
}

fn stall(cycle: u64, i: usize, j: usize, what: &str) -> SimError {
    SimError::Invalid(format!("oracle: PE({i},{j}) at cycle {cycle}: {what}"))
}

impl Grid<'_> {
    fn record(map: &mut BTreeMap<u64, Vec<u64>>, cycle: u64, addr: u64) {
        map.entry(cycle).or_default().push(addr);
    }

    fn mac(&mut self, cycle: u64) {
        *self.sched.macs.entry(cycle).or_default() += 1;
    }

    /// Output stationary fold: windows on rows, filters on columns.
    fn os_fold(&mut self, windows: (usize, usize), filters: (usize, usize), wsz: usize) -> Result<()> {
        let (ru, cu) = (windows.1, filters.1);
        let left: Vec<Feeder> = (0..ru)
            .map(|i| Feeder {
                start: i as u64,
                items: (0..wsz)
                    .map(|k| self.layout.ifmap_operand(windows.0 + i, k, k))
                    .collect(),
            })
            .collect();
        let top: Vec<Feeder> = (0..cu)
            .map(|j| Feeder {
                start: j as u64,
                items: (0..wsz)
                    .map(|k| self.layout.filter_operand(filters.0 + j, k, k))
                    .collect(),
            })
            .collect();

        let mut h = vec![vec![None::<Token>; cu]; ru];
        let mut v = vec![vec![None::<Token>; cu]; ru];
        let mut acc = vec![vec![0i64; cu]; ru];
        let mut fired = vec![vec![0usize; cu]; ru];
        let mut remaining = ru * cu;
        let mut t = 0u64;
        while remaining > 0 {
            let cycle = self.cycle + t;
            let mut nh = vec![vec![None; cu]; ru];
            let mut nv = vec![vec![None; cu]; ru];
            for i in 0..ru {
                if let Some((tok, addr)) = left[i].at(t) {
                    Self::record(&mut self.sched.ifmap_reads, cycle, addr);
                    nh[i][0] = Some(tok);
                }
                for j in 1..cu {
                    nh[i][j] = h[i][j - 1];
                }
            }
            for j in 0..cu {
                if let Some((tok, addr)) = top[j].at(t) {
                    Self::record(&mut self.sched.filter_reads, cycle, addr);
                    nv[0][j] = Some(tok);
                }
                for i in 1..ru {
                    nv[i][j] = v[i - 1][j];
                }
            }
            for i in 0..ru {
                for j in 0..cu {
                    match (nh[i][j], nv[i][j]) {
                        (Some(a), Some(b)) => {
                            if a.tag != b.tag {
                                return Err(stall(cycle, i, j, "operands from different reduction steps"));
                            }
                            acc[i][j] += a.value * b.value;
                            fired[i][j] += 1;
                            self.mac(cycle);
                            if fired[i][j] == wsz {
                                let addr = self.layout.map.ofmap(windows.0 + i, filters.0 + j)?;
                                self.sched.ofmap_writes.entry(cycle).or_default().push((addr, true));
                                self.memory.insert(addr, acc[i][j]);
                                remaining -= 1;
                            }
                        }
                        (None, None) => {}
                        _ => return Err(stall(cycle, i, j, "only one operand arrived")),
                    }
                }
            }
            h = nh;
            v = nv;
            t += 1;
        }
        self.cycle += t;
        Ok(())
    }

    /// WS/IS fold. Column `j` holds stationary operand `pinned.0 + j`
    /// (a filter for WS, a window for IS); `stream` operands enter from the
    /// left, partial sums flow down and leave at the bottom row.
    fn stationary_fold(
        &mut self,
        dataflow: Dataflow,
        reduction: (usize, usize),
        pinned: (usize, usize),
        stream: usize,
        first_pass: bool,
        last_pass: bool,
    ) -> Result<()> {
        let (ru, cu) = (reduction.1, pinned.1);
        let ws = dataflow == Dataflow::WeightStationary;
        let stationary = |l: &Layout, col: usize, k: usize| {
            if ws {
                l.filter_operand(col, k, k)
            } else {
                l.ifmap_operand(col, k, k)
            }
        };
        let streamed = |l: &Layout, s: usize, k: usize| {
            if ws {
                l.ifmap_operand(s, k, s)
            } else {
                l.filter_operand(s, k, s)
            }
        };
        let out_addr = |l: &Layout, col: usize, s: usize| {
            if ws {
                l.map.ofmap(s, col)
            } else {
                l.map.ofmap(col, s)
            }
        };

        // Fill: a shift chain per column; the value for the deepest row
        // has to enter first.
        let mut chain = vec![vec![None::<Token>; cu]; ru];
        for t in 0..ru {
            let cycle = self.cycle + t as u64;
            let mut next = vec![vec![None; cu]; ru];
            let row = ru - 1 - t;
            for j in 0..cu {
                let (tok, addr) = stationary(&self.layout, pinned.0 + j, reduction.0 + row);
                let reads = if ws {
                    &mut self.sched.filter_reads
                } else {
                    &mut self.sched.ifmap_reads
                };
                Self::record(reads, cycle, addr);
                next[0][j] = Some(tok);
                for i in 1..ru {
                    next[i][j] = chain[i - 1][j];
                }
            }
            chain = next;
        }
        for (i, row) in chain.iter().enumerate() {
            for (j, slot) in row.iter().enumerate() {
                match slot {
                    Some(tok) if tok.tag == reduction.0 + i => {}
                    _ => return Err(stall(self.cycle, i, j, "stationary operand misplaced after fill")),
                }
            }
        }
        self.cycle += ru as u64;

        let left: Vec<Feeder> = (0..ru)
            .map(|r| Feeder {
                start: r as u64,
                items: (0..stream)
                    .map(|s| streamed(&self.layout, s, reduction.0 + r))
                    .collect(),
            })
            .collect();
        let mut h = vec![vec![None::<Token>; cu]; ru];
        // partial sum leaving PE(i,j), tagged with the streamed index
        let mut psum = vec![vec![None::<(usize, i64)>; cu]; ru];
        let mut remaining = stream * cu;
        let mut t = 0u64;
        while remaining > 0 {
            let cycle = self.cycle + t;
            let mut nh = vec![vec![None; cu]; ru];
            let mut np = vec![vec![None; cu]; ru];
            for i in 0..ru {
                if let Some((tok, addr)) = left[i].at(t) {
                    let reads = if ws {
                        &mut self.sched.ifmap_reads
                    } else {
                        &mut self.sched.filter_reads
                    };
                    Self::record(reads, cycle, addr);
                    nh[i][0] = Some(tok);
                }
                for j in 1..cu {
                    nh[i][j] = h[i][j - 1];
                }
            }
            for j in 0..cu {
                for i in 0..ru {
                    let from_above = if i == 0 { None } else { psum[i - 1][j] };
                    let Some(a) = nh[i][j] else {
                        if from_above.is_some() {
                            return Err(stall(cycle, i, j, "partial sum arrived without input"));
                        }
                        continue;
                    };
                    let incoming = if i == 0 {
                        if first_pass {
                            0
                        } else {
                            let addr = out_addr(&self.layout, pinned.0 + j, a.tag)?;
                            Self::record(&mut self.sched.ofmap_partial_reads, cycle, addr);
                            *self.memory.get(&addr).ok_or_else(|| {
                                stall(cycle, i, j, "partial sum read before it was written")
                            })?
                        }
                    } else {
                        match from_above {
                            Some((tag, v)) if tag == a.tag => v,
                            _ => return Err(stall(cycle, i, j, "partial sum missing or mismatched")),
                        }
                    };
                    let weight = chain[i][j].expect("filled");
                    let value = incoming + a.value * weight.value;
                    self.mac(cycle);
                    np[i][j] = Some((a.tag, value));
                    if i == ru - 1 {
                        let addr = out_addr(&self.layout, pinned.0 + j, a.tag)?;
                        self.sched
                            .ofmap_writes
                            .entry(cycle)
                            .or_default()
                            .push((addr, last_pass));
                        self.memory.insert(addr, value);
                        remaining -= 1;
                    }
                }
            }
            h = nh;
            psum = np;
            t += 1;
        }
        self.cycle += t;
        Ok(())
    }
}

/// Runs the grid simulation for `layer` under `arch.dataflow`.
pub fn simulate_grid(layer: &LayerSpec, arch: &ArchConfig) -> Result<OracleRun> {
    layer.validate().map_err(|m| SimError::sim(&layer.name, m))?;
    let (oh, ow) = ofmap_dims(layer);
    let n_windows = oh * ow;
    let wsz = layer.filter_h * layer.filter_w * layer.channels;
    let m = layer.num_filters;
    let macs = (n_windows * wsz * m) as u64;
    if arch.array_rows * arch.array_cols > MAX_ORACLE_PES || macs > MAX_ORACLE_MACS {
        return Err(SimError::Invalid(format!(
            "oracle scale bound exceeded: {}x{} array, {macs} MACs",
            arch.array_rows, arch.array_cols
        )));
    }
    let mut grid = Grid {
        layout: Layout {
            layer,
            map: AddressMap::new(layer, arch)?,
            ofmap_w: ow,
        },
        sched: EdgeSchedule::default(),
        memory: HashMap::new(),
        cycle: 0,
    };
    let (rows, cols) = (arch.array_rows, arch.array_cols);
    match arch.dataflow {
        Dataflow::OutputStationary => {
            for w in chunks(n_windows, rows) {
                for f in chunks(m, cols) {
                    grid.os_fold(w, f, wsz)?;
                }
            }
        }
        df => {
            let pinned_total = if df == Dataflow::WeightStationary { m } else { n_windows };
            let stream = if df == Dataflow::WeightStationary { n_windows } else { m };
            let passes = chunks(wsz, rows);
            for (pass, &red) in passes.iter().enumerate() {
                for pin in chunks(pinned_total, cols) {
                    grid.stationary_fold(df, red, pin, stream, pass == 0, pass + 1 == passes.len())?;
                }
            }
        }
    }
    grid.sched.finish();
    let mut outputs = BTreeMap::new();
    for p in 0..n_windows {
        for f in 0..m {
            let addr = grid.layout.map.ofmap(p, f)?;
            let v = grid
                .memory
                .get(&addr)
                .copied()
                .ok_or_else(|| SimError::Invalid(format!("oracle: output ({p},{f}) never written")))?;
            outputs.insert((p, f), v);
        }
    }
    Ok(OracleRun {
        cycles: grid.cycle,
        outputs,
        schedule: grid.sched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::lower_gemm;

    fn naive_matmul(m: usize, k: usize, n: usize) -> BTreeMap<(usize, usize), i64> {
        let mut out = BTreeMap::new();
        for i in 0..m {
            for j in 0..n {
                let v = (0..k).map(|x| ifmap_value(i, 0, x) * filter_value(j, 0, 0, x)).sum();
                out.insert((i, j), v);
            }
        }
        out
    }

    #[test]
    fn gemm2_on_2x2_os() {
        let arch = ArchConfig::with_array(2, 2, Dataflow::OutputStationary);
        let run = simulate_grid(&lower_gemm(2, 2, 2).unwrap(), &arch).unwrap();
        assert_eq!(run.cycles, 4);
        assert_eq!(run.outputs, naive_matmul(2, 2, 2));
    }

    #[test]
    fn single_pe_is_fully_serial() {
        // 1x1 array: OS runs one fold per (window, filter) of W_sz cycles;
        // WS/IS add one fill cycle per fold.
        let layer = LayerSpec::new("l", (3, 3), (2, 2), 2, 3, 1);
        let macs = 4 * 8 * 3;
        let arch = |df| ArchConfig::with_array(1, 1, df);
        let os = simulate_grid(&layer, &arch(Dataflow::OutputStationary)).unwrap();
        assert_eq!(os.cycles, macs);
        let ws = simulate_grid(&layer, &arch(Dataflow::WeightStationary)).unwrap();
        assert_eq!(ws.cycles, macs + 8 * 3);
        let is = simulate_grid(&layer, &arch(Dataflow::InputStationary)).unwrap();
        assert_eq!(is.cycles, macs + 8 * 4);
    }

    #[test]
    fn all_dataflows_compute_the_convolution() {
        let layer = LayerSpec::new("l", (6, 5), (3, 2), 3, 4, 2);
        let expect = direct_convolution(&layer);
        for df in Dataflow::ALL {
            for (r, c) in [(1, 1), (2, 3), (4, 4), (8, 2)] {
                let run = simulate_grid(&layer, &ArchConfig::with_array(r, c, df)).unwrap();
                assert_eq!(run.outputs, expect, "{df} on {r}x{c}");
            }
        }
    }

    #[test]
    fn scale_bound() {
        let arch = ArchConfig::with_array(128, 128, Dataflow::OutputStationary);
        assert!(simulate_grid(&lower_gemm(2, 2, 2).unwrap(), &arch).is_err());
        let arch = ArchConfig::with_array(8, 8, Dataflow::OutputStationary);
        assert!(simulate_grid(&lower_gemm(200, 100, 100).unwrap(), &arch).is_err());
    }

    #[test]
    fn engine_schedule_matches_grid() {
        let layers = [
            LayerSpec::new("a", (6, 5), (3, 2), 3, 4, 2),
            LayerSpec::new("b", (4, 4), (1, 1), 1, 1, 1),
            lower_gemm(5, 7, 3).unwrap(),
        ];
        for layer in &layers {
            for df in Dataflow::ALL {
                for (r, c) in [(1, 1), (2, 3), (3, 2), (8, 8)] {
                    let arch = ArchConfig::with_array(r, c, df);
                    let run = simulate_grid(layer, &arch).unwrap();
                    let traces = crate::engine::gen_traces(layer, &arch).unwrap();
                    assert_eq!(run.cycles, traces.total_cycles, "{} {df} {r}x{c}", layer.name);
                    assert_eq!(
                        run.schedule,
                        EdgeSchedule::from_traces(&traces),
                        "{} {df} {r}x{c}",
                        layer.name
                    );
                }
            }
        }
    }
}
