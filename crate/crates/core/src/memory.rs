//! Double-buffered scratchpad model and DRAM traffic derivation.
//!
//! Each partition (IFMAP, filter, OFMAP) has one working-set buffer of the
//! configured size plus an idle twin. On the read side the SRAM trace is
//! cut into epochs: maximal runs of cycles whose distinct addresses fit in
//! the working set. While epoch `k` is in use, epoch `k+1` is prefetched
//! into the idle buffer, spread uniformly over epoch `k`'s use span. The
//! first epoch is fetched in a prologue before cycle `first_use` of the
//! same length as its own span (so DRAM cycles may be negative); the
//! prologue is not part of the layer runtime.
//!
//! On the write side final OFMAP values fill the working buffer; a full
//! buffer drains to DRAM spread over the interval in which the next
//! buffer fills. The last buffer drains after the layer ends over an
//! epilogue as long as its own fill interval. Partial sums never leave
//! the chip.

use std::collections::{HashMap, HashSet};

use crate::engine::Trace;
use crate::error::{Result, SimError};

/// Regions larger than this many words are tracked with a hash set
/// instead of a stamp array.
const DENSE_LIMIT_WORDS: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Epoch {
    pub index: usize,
    /// Distinct addresses in first-use order. Empty when the epochizer was
    /// built without address retention.
    pub address_set: Vec<u64>,
    pub words: u64,
    pub first_use_cycle: u64,
    pub last_use_cycle: u64,
    pub bytes: u64,
}

impl Epoch {
    pub fn span(&self) -> u64 {
        self.last_use_cycle - self.first_use_cycle + 1
    }
}

enum Residency {
    /// `stamps[(addr - base) / word] == epoch_stamp` marks residency.
    Dense { base: u64, stamps: Vec<u32> },
    Sparse(HashSet<u64>),
}

/// Streaming epochizer for one SRAM read trace.
pub struct Epochizer {
    capacity_words: u64,
    word_bytes: u64,
    capacity_bytes: u64,
    residency: Residency,
    retain: bool,
    open: bool,
    epoch_stamp: u32,
    cur: Epoch,
    epochs: Vec<Epoch>,
    uniq: Vec<u64>,
    error: Option<SimError>,
}

impl Epochizer {
    /// `region` is the `(base address, words)` extent the trace can touch;
    /// it only selects the residency representation.
    pub fn new(capacity_bytes: u64, word_bytes: u64, region: Option<(u64, u64)>, retain: bool) -> Result<Self> {
        if word_bytes == 0 || capacity_bytes < word_bytes {
            return Err(SimError::Invalid(format!(
                "buffer capacity {capacity_bytes} B is smaller than one {word_bytes} B word"
            )));
        }
        let residency = match region {
            Some((base, words)) if words <= DENSE_LIMIT_WORDS => Residency::Dense {
                base,
                stamps: vec![0; words as usize],
            },
            _ => Residency::Sparse(HashSet::new()),
        };
        Ok(Epochizer {
            capacity_words: capacity_bytes / word_bytes,
            word_bytes,
            capacity_bytes,
            residency,
            retain,
            open: false,
            epoch_stamp: 1,
            cur: empty_epoch(0),
            epochs: Vec::new(),
            uniq: Vec::new(),
            error: None,
        })
    }

    #[inline]
    fn resident(&self, addr: u64) -> bool {
        match &self.residency {
            Residency::Dense { base, stamps } => {
                let idx = ((addr - base) / self.word_bytes) as usize;
                stamps[idx] == self.epoch_stamp
            }
            Residency::Sparse(set) => set.contains(&addr),
        }
    }

    #[inline]
    fn admit(&mut self, addr: u64) {
        match &mut self.residency {
            Residency::Dense { base, stamps } => {
                let idx = ((addr - *base) / self.word_bytes) as usize;
                stamps[idx] = self.epoch_stamp;
            }
            Residency::Sparse(set) => {
                set.insert(addr);
            }
        }
        self.cur.words += 1;
        if self.retain {
            self.cur.address_set.push(addr);
        }
    }

    fn close(&mut self) {
        if self.open {
            let mut done = std::mem::replace(&mut self.cur, empty_epoch(self.epochs.len() + 1));
            done.bytes = done.words * self.word_bytes;
            self.epochs.push(done);
        }
        self.epoch_stamp += 1;
        if let Residency::Sparse(set) = &mut self.residency {
            set.clear();
        }
        self.open = false;
    }

    /// Feeds one cycle's reads; `addrs` must be sorted ascending.
    pub fn feed(&mut self, cycle: u64, addrs: &[u64]) {
        if self.error.is_some() || addrs.is_empty() {
            return;
        }
        self.uniq.clear();
        let mut prev = None;
        for &a in addrs {
            if prev != Some(a) {
                self.uniq.push(a);
                prev = Some(a);
            }
        }
        let new = self.uniq.iter().filter(|&&a| !self.resident(a)).count() as u64;
        if self.open && self.cur.words + new > self.capacity_words {
            self.close();
        }
        if !self.open {
            if self.uniq.len() as u64 > self.capacity_words {
                self.error = Some(SimError::WorkingSetUnderflow {
                    cycle,
                    needed: self.uniq.len() as u64 * self.word_bytes,
                    capacity: self.capacity_bytes,
                });
                return;
            }
            self.open = true;
            self.cur.first_use_cycle = cycle;
        }
        let uniq = std::mem::take(&mut self.uniq);
        for &a in &uniq {
            if !self.resident(a) {
                self.admit(a);
            }
        }
        self.uniq = uniq;
        self.cur.last_use_cycle = cycle;
    }

    pub fn finish(mut self) -> Result<Vec<Epoch>> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.close();
        Ok(self.epochs)
    }
}

fn empty_epoch(index: usize) -> Epoch {
    Epoch {
        index,
        address_set: Vec::new(),
        words: 0,
        first_use_cycle: 0,
        last_use_cycle: 0,
        bytes: 0,
    }
}

/// Cuts an SRAM read trace into working-set epochs.
pub fn epochize(trace: &Trace, capacity_bytes: u64, word_bytes: u64) -> Result<Vec<Epoch>> {
    let mut ep = Epochizer::new(capacity_bytes, word_bytes, None, true)?;
    for e in &trace.events {
        if e.addresses.is_sorted() {
            ep.feed(e.cycle, &e.addresses);
        } else {
            let mut sorted = e.addresses.clone();
            sorted.sort_unstable();
            ep.feed(e.cycle, &sorted);
        }
    }
    ep.finish()
}

/// `words` transfers spread uniformly over `cycles` cycles from `start`:
/// transfer `i` happens at `start + floor(i * cycles / words)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Spread {
    pub start: i64,
    pub cycles: u64,
    pub words: u64,
}

impl Spread {
    #[inline]
    pub fn cycle_of(&self, i: u64) -> i64 {
        self.start + ((i as u128 * self.cycles as u128) / self.words as u128) as i64
    }

    /// `(cycle, transfers)` for every cycle with at least one transfer.
    pub fn per_cycle(&self) -> Box<dyn Iterator<Item = (i64, u64)> + '_> {
        let (w, c) = (self.words as u128, self.cycles as u128);
        if self.words == 0 {
            Box::new(std::iter::empty())
        } else if self.words <= self.cycles {
            Box::new((0..self.words).map(move |i| (self.cycle_of(i), 1)))
        } else {
            let ceil = move |d: u128| (d * w).div_ceil(c);
            Box::new((0..self.cycles).map(move |d| {
                let d = d as u128;
                (self.start + d as i64, (ceil(d + 1) - ceil(d)) as u64)
            }))
        }
    }
}

/// DRAM traffic for one partition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DramFragment {
    pub word_bytes: u64,
    pub spreads: Vec<Spread>,
    /// `(cycle, address)` pairs; empty unless addresses were retained.
    pub entries: Vec<(i64, u64)>,
    pub words: u64,
    /// Words moved outside the layer's runtime (read prologue or write epilogue).
    pub cold_words: u64,
    /// Read side: max over epochs of `bytes(k+1) / span(k)`.
    /// Write side: max over drains of `bytes / drain cycles`.
    pub required_bw: f64,
}

impl DramFragment {
    pub fn bytes(&self) -> u64 {
        self.words * self.word_bytes
    }
}

fn spread_entries(spread: &Spread, addrs: &[u64], out: &mut Vec<(i64, u64)>) {
    for (i, &a) in addrs.iter().enumerate() {
        out.push((spread.cycle_of(i as u64), a));
    }
}

/// DRAM read traffic implied by a sequence of epochs.
pub fn gen_dram_read_trace(epochs: &[Epoch], word_bytes: u64) -> DramFragment {
    let mut frag = DramFragment {
        word_bytes,
        ..DramFragment::default()
    };
    let Some(first) = epochs.first() else {
        return frag;
    };
    let prologue = Spread {
        start: first.first_use_cycle as i64 - first.span() as i64,
        cycles: first.span(),
        words: first.words,
    };
    frag.cold_words = first.words;
    frag.spreads.push(prologue);
    spread_entries(&prologue, &first.address_set, &mut frag.entries);
    for pair in epochs.windows(2) {
        let (cur, next) = (&pair[0], &pair[1]);
        let s = Spread {
            start: cur.first_use_cycle as i64,
            cycles: cur.span(),
            words: next.words,
        };
        frag.required_bw = frag.required_bw.max(next.bytes as f64 / cur.span() as f64);
        frag.spreads.push(s);
        spread_entries(&s, &next.address_set, &mut frag.entries);
    }
    frag.words = epochs.iter().map(|e| e.words).sum();
    frag
}

#[derive(Debug, Clone)]
struct Drain {
    words: u64,
    addrs: Vec<u64>,
    fill_start: u64,
    fill_end: u64,
}

/// Streaming OFMAP write-buffer model. Feed only final values.
pub struct DrainModel {
    capacity_words: u64,
    word_bytes: u64,
    retain: bool,
    cur: Option<Drain>,
    drains: Vec<Drain>,
}

impl DrainModel {
    pub fn new(capacity_bytes: u64, word_bytes: u64, retain: bool) -> Result<Self> {
        if word_bytes == 0 || capacity_bytes < word_bytes {
            return Err(SimError::Invalid(format!(
                "buffer capacity {capacity_bytes} B is smaller than one {word_bytes} B word"
            )));
        }
        Ok(DrainModel {
            capacity_words: capacity_bytes / word_bytes,
            word_bytes,
            retain,
            cur: None,
            drains: Vec::new(),
        })
    }

    pub fn feed(&mut self, cycle: u64, addrs: &[u64]) {
        for &a in addrs {
            let d = self.cur.get_or_insert_with(|| Drain {
                words: 0,
                addrs: Vec::new(),
                fill_start: cycle,
                fill_end: cycle,
            });
            d.words += 1;
            d.fill_end = cycle;
            if self.retain {
                d.addrs.push(a);
            }
            if d.words == self.capacity_words {
                self.drains.push(self.cur.take().expect("open buffer"));
            }
        }
    }

    pub fn finish(mut self) -> DramFragment {
        if let Some(d) = self.cur.take() {
            self.drains.push(d);
        }
        let mut frag = DramFragment {
            word_bytes: self.word_bytes,
            ..DramFragment::default()
        };
        let n = self.drains.len();
        for (k, d) in self.drains.iter().enumerate() {
            let cycles = if k + 1 < n {
                (self.drains[k + 1].fill_end - d.fill_end).max(1)
            } else {
                frag.cold_words = d.words;
                d.fill_end - d.fill_start + 1
            };
            let s = Spread {
                start: d.fill_end as i64 + 1,
                cycles,
                words: d.words,
            };
            frag.required_bw = frag
                .required_bw
                .max((d.words * self.word_bytes) as f64 / cycles as f64);
            frag.spreads.push(s);
            spread_entries(&s, &d.addrs, &mut frag.entries);
            frag.words += d.words;
        }
        frag
    }
}

/// Addresses of the final value of every OFMAP element, in write order:
/// an element's last write is final, earlier ones are partial sums.
pub fn final_write_events(trace: &Trace) -> Vec<(u64, Vec<u64>)> {
    let mut last: HashMap<u64, (usize, usize)> = HashMap::new();
    for (ei, e) in trace.events.iter().enumerate() {
        for (ai, &a) in e.addresses.iter().enumerate() {
            last.insert(a, (ei, ai));
        }
    }
    let mut out = Vec::new();
    for (ei, e) in trace.events.iter().enumerate() {
        let finals: Vec<u64> = e
            .addresses
            .iter()
            .enumerate()
            .filter(|&(ai, a)| last[a] == (ei, ai))
            .map(|(_, &a)| a)
            .collect();
        if !finals.is_empty() {
            out.push((e.cycle, finals));
        }
    }
    out
}

/// DRAM write traffic for an OFMAP SRAM write trace.
pub fn gen_dram_write_trace(ofmap_writes: &Trace, capacity_bytes: u64, word_bytes: u64) -> Result<DramFragment> {
    let mut model = DrainModel::new(capacity_bytes, word_bytes, true)?;
    for (cycle, addrs) in final_write_events(ofmap_writes) {
        model.feed(cycle, &addrs);
    }
    Ok(model.finish())
}

/// Peak transfers in any single cycle across all spreads.
pub fn peak_words_per_cycle<'a>(spreads: impl IntoIterator<Item = &'a Spread>) -> u64 {
    let mut streams: Vec<_> = spreads
        .into_iter()
        .map(|s| s.per_cycle().peekable())
        .collect();
    let mut peak = 0;
    loop {
        let Some(cycle) = streams
            .iter_mut()
            .filter_map(|s| s.peek().map(|&(c, _)| c))
            .min()
        else {
            break;
        };
        let mut total = 0;
        for s in streams.iter_mut() {
            while let Some(&(c, n)) = s.peek() {
                if c != cycle {
                    break;
                }
                total += n;
                s.next();
            }
        }
        peak = peak.max(total);
    }
    peak
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DramDemand {
    /// Sorted `(cycle, address)`; empty unless addresses were retained.
    pub read_trace: Vec<(i64, u64)>,
    pub write_trace: Vec<(i64, u64)>,
    pub total_dram_reads: u64,
    pub total_dram_writes: u64,
    /// Bytes read outside the runtime (first-epoch prologues).
    pub cold_read_bytes: u64,
    pub avg_read_bw: f64,
    pub peak_read_bw: f64,
    pub avg_write_bw: f64,
    pub peak_write_bw: f64,
    /// Read bandwidth excluding the cold prologue, averaged over the runtime.
    pub steady_read_bw: f64,
    /// Sum over partitions of the per-epoch prefetch requirement.
    pub required_read_bw: f64,
}

pub fn bandwidth_report(reads: &[&DramFragment], writes: &[&DramFragment], total_cycles: u64) -> Result<DramDemand> {
    if total_cycles == 0 {
        return Err(SimError::Invalid("bandwidth over zero cycles".into()));
    }
    let bytes = |fs: &[&DramFragment]| fs.iter().map(|f| f.bytes()).sum::<u64>();
    // every fragment of one layer shares the word size
    let word = reads
        .iter()
        .chain(writes)
        .map(|f| f.word_bytes)
        .find(|&w| w > 0)
        .unwrap_or(1);
    let merged = |fs: &[&DramFragment]| {
        let mut v: Vec<(i64, u64)> = fs.iter().flat_map(|f| f.entries.iter().copied()).collect();
        v.sort_unstable();
        v
    };
    let cycles = total_cycles as f64;
    let total_dram_reads = bytes(reads);
    let total_dram_writes = bytes(writes);
    let cold_read_bytes: u64 = reads.iter().map(|f| f.cold_words * f.word_bytes).sum();
    Ok(DramDemand {
        read_trace: merged(reads),
        write_trace: merged(writes),
        total_dram_reads,
        total_dram_writes,
        cold_read_bytes,
        avg_read_bw: total_dram_reads as f64 / cycles,
        peak_read_bw: (peak_words_per_cycle(reads.iter().flat_map(|f| &f.spreads)) * word) as f64,
        avg_write_bw: total_dram_writes as f64 / cycles,
        peak_write_bw: (peak_words_per_cycle(writes.iter().flat_map(|f| &f.spreads)) * word) as f64,
        steady_read_bw: (total_dram_reads - cold_read_bytes) as f64 / cycles,
        required_read_bw: reads.iter().map(|f| f.required_bw).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_per_cycle(addrs: impl IntoIterator<Item = u64>) -> Trace {
        let mut t = Trace::default();
        for (c, a) in addrs.into_iter().enumerate() {
            t.push(c as u64, &[a]);
        }
        t
    }

    #[test]
    fn splits_reuse_free_trace() {
        let epochs = epochize(&one_per_cycle(0..100), 50, 1).unwrap();
        assert_eq!(epochs.len(), 2);
        assert!(epochs.iter().all(|e| e.words == 50 && e.span() == 50));
        assert_eq!(epochs[1].address_set, (50..100).collect::<Vec<_>>());
    }

    #[test]
    fn full_reuse_in_one_epoch() {
        let epochs = epochize(&one_per_cycle((0..50).chain(0..50)), 50, 1).unwrap();
        assert_eq!(epochs.len(), 1);
        let frag = gen_dram_read_trace(&epochs, 1);
        assert_eq!(frag.bytes(), 50);
        assert_eq!(frag.required_bw, 0.0);
        assert_eq!(frag.cold_words, 50);
    }

    #[test]
    fn large_capacity_single_epoch() {
        let t = one_per_cycle((0..30).chain(5..70).chain(0..10));
        assert_eq!(epochize(&t, 1 << 20, 1).unwrap().len(), 1);
    }

    #[test]
    fn underflow_when_one_cycle_exceeds_buffer() {
        let mut t = Trace::default();
        t.push(0, &[0, 1, 2, 3]);
        let err = epochize(&t, 3, 1).unwrap_err();
        assert!(matches!(err, SimError::WorkingSetUnderflow { .. }), "{err}");
    }

    #[test]
    fn steady_prefetch_rate() {
        let epochs = epochize(&one_per_cycle(0..100), 50, 1).unwrap();
        let frag = gen_dram_read_trace(&epochs, 1);
        assert_eq!(frag.required_bw, 1.0);
        // prologue then epoch-2 prefetch over epoch 1's span
        assert_eq!(frag.spreads[0], Spread { start: -50, cycles: 50, words: 50 });
        assert_eq!(frag.spreads[1], Spread { start: 0, cycles: 50, words: 50 });
        // address `a` is first read at cycle `a`
        assert!(frag.entries.iter().all(|&(c, a)| c < a as i64));
    }

    #[test]
    fn halving_capacity_on_reuse_free_trace() {
        let t = one_per_cycle(0..400);
        let big = epochize(&t, 100, 1).unwrap();
        let small = epochize(&t, 50, 1).unwrap();
        assert_eq!(small.len(), 2 * big.len());
        let bytes = |e: &[Epoch]| gen_dram_read_trace(e, 1).bytes();
        assert_eq!(bytes(&big), bytes(&small));
    }

    #[test]
    fn word_size_scales_capacity() {
        let t = one_per_cycle((0..20).map(|a| a * 4));
        let epochs = epochize(&t, 40, 4).unwrap();
        assert_eq!(epochs.len(), 2);
        assert_eq!(epochs[0].bytes, 40);
    }

    #[test]
    fn dense_and_sparse_residency_agree() {
        let t = one_per_cycle((0..300).map(|i| (i * 7 % 97) as u64));
        let sparse = epochize(&t, 20, 1).unwrap();
        let mut dense = Epochizer::new(20, 1, Some((0, 97)), true).unwrap();
        for e in &t.events {
            dense.feed(e.cycle, &e.addresses);
        }
        assert_eq!(dense.finish().unwrap(), sparse);
    }

    #[test]
    fn single_drain_when_outputs_fit() {
        let t = one_per_cycle(0..64);
        let frag = gen_dram_write_trace(&t, 1024, 1).unwrap();
        assert_eq!(frag.bytes(), 64);
        assert_eq!(frag.spreads.len(), 1);
        assert_eq!(frag.spreads[0].start, 64);
    }

    #[test]
    fn two_drains_at_half_capacity() {
        let t = one_per_cycle(0..64);
        let frag = gen_dram_write_trace(&t, 32, 1).unwrap();
        assert_eq!(frag.spreads.len(), 2);
        assert_eq!(frag.bytes(), 64);
        assert_eq!(frag.spreads[0], Spread { start: 32, cycles: 32, words: 32 });
    }

    #[test]
    fn partial_sums_do_not_drain() {
        let mut t = Trace::default();
        t.push(0, &[0, 1]);
        t.push(1, &[2, 3]);
        t.push(5, &[0, 1]);
        t.push(6, &[2, 3]);
        let frag = gen_dram_write_trace(&t, 1024, 1).unwrap();
        assert_eq!(frag.bytes(), 4);
        assert_eq!(frag.spreads[0].start, 7);
    }

    #[test]
    fn report_averages_and_additivity() {
        let r1 = gen_dram_read_trace(&epochize(&one_per_cycle(0..600), 1000, 1).unwrap(), 1);
        let r2 = gen_dram_read_trace(&epochize(&one_per_cycle(1000..1400), 1000, 1).unwrap(), 1);
        let d = bandwidth_report(&[&r1, &r2], &[], 500).unwrap();
        assert_eq!(d.total_dram_reads, 1000);
        assert_eq!(d.avg_read_bw, 2.0);
        assert_eq!(d.total_dram_reads, r1.bytes() + r2.bytes());
        assert_eq!(d.avg_write_bw, 0.0);
        assert_eq!(d.peak_write_bw, 0.0);
        assert!(bandwidth_report(&[&r1], &[], 0).is_err());
    }

    #[test]
    fn peak_from_spreads_matches_entries() {
        let r1 = gen_dram_read_trace(&epochize(&one_per_cycle((0..500).map(|i| i % 170)), 37, 1).unwrap(), 1);
        let mut t = Trace::default();
        for c in 0..90u64 {
            t.push(c, &[1000 + 3 * c, 1001 + 3 * c, 1002 + 3 * c]);
        }
        let r2 = gen_dram_read_trace(&epochize(&t, 40, 1).unwrap(), 1);
        let d = bandwidth_report(&[&r1, &r2], &[], 500).unwrap();
        let mut per_cycle: HashMap<i64, u64> = HashMap::new();
        for &(c, _) in &d.read_trace {
            *per_cycle.entry(c).or_default() += 1;
        }
        assert_eq!(d.peak_read_bw, *per_cycle.values().max().unwrap() as f64);
        assert_eq!(d.read_trace.len() as u64, d.total_dram_reads);
    }

    #[test]
    fn dense_spread_counts() {
        let s = Spread { start: 10, cycles: 3, words: 10 };
        let v: Vec<_> = s.per_cycle().collect();
        assert_eq!(v, vec![(10, 4), (11, 3), (12, 3)]);
        let total: u64 = v.iter().map(|&(_, n)| n).sum();
        assert_eq!(total, 10);
        for i in 0..10 {
            let c = s.cycle_of(i);
            assert!((10..13).contains(&c));
        }
    }
}
