//! One-pass layer simulation: trace generation feeding the counters and
//! the scratchpad models without materializing SRAM traces.

use rayon::prelude::*;

use crate::config::{ArchConfig, LayerSpec};
use crate::engine::{generate, AddressMap, LayerSchedule, TraceSink};
use crate::error::{Result, SimError};
use crate::memory::{bandwidth_report, gen_dram_read_trace, DramDemand, DrainModel, Epochizer};
use crate::metrics::{LayerReport, SramCounts};

/// Working-set capacities in bytes for the three partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capacities {
    pub ifmap: u64,
    pub filter: u64,
    pub ofmap: u64,
}

impl Capacities {
    pub fn of(arch: &ArchConfig) -> Self {
        Capacities {
            ifmap: arch.ifmap_capacity_bytes(),
            filter: arch.filter_capacity_bytes(),
            ofmap: arch.ofmap_capacity_bytes(),
        }
    }
}

struct MemoryModels {
    ifmap: Epochizer,
    filter: Epochizer,
    ofmap: DrainModel,
}

struct LayerSink {
    counts: SramCounts,
    models: Vec<MemoryModels>,
}

impl TraceSink for LayerSink {
    fn ifmap_read(&mut self, cycle: u64, addrs: &[u64]) {
        self.counts.ifmap_reads += addrs.len() as u64;
        for m in &mut self.models {
            m.ifmap.feed(cycle, addrs);
        }
    }

    fn filter_read(&mut self, cycle: u64, addrs: &[u64]) {
        self.counts.filter_reads += addrs.len() as u64;
        for m in &mut self.models {
            m.filter.feed(cycle, addrs);
        }
    }

    fn ofmap_write(&mut self, cycle: u64, addrs: &[u64], final_values: bool) {
        self.counts.ofmap_writes += addrs.len() as u64;
        if final_values {
            for m in &mut self.models {
                m.ofmap.feed(cycle, addrs);
            }
        }
    }

    fn ofmap_partial_read(&mut self, _cycle: u64, addrs: &[u64]) {
        self.counts.ofmap_partial_reads += addrs.len() as u64;
    }

    fn compute(&mut self, _cycle: u64, macs: u64) {
        self.counts.macs += macs;
    }
}

#[derive(Debug, Clone)]
pub struct LayerOutcome {
    pub report: LayerReport,
    pub dram: DramDemand,
}

fn models_for(map: &AddressMap, arch: &ArchConfig, caps: &Capacities, retain: bool) -> Result<MemoryModels> {
    let [ifmap_region, filter_region, _] = map.regions();
    let word = arch.word_bytes;
    let region = |(start, end): (u64, u64)| Some((start, (end - start) / word));
    Ok(MemoryModels {
        ifmap: Epochizer::new(caps.ifmap, word, region(ifmap_region), retain)?,
        filter: Epochizer::new(caps.filter, word, region(filter_region), retain)?,
        ofmap: DrainModel::new(caps.ofmap, word, retain)?,
    })
}

fn finish_models(
    layer: &LayerSpec,
    arch: &ArchConfig,
    sched: &LayerSchedule,
    counts: &SramCounts,
    models: MemoryModels,
) -> Result<LayerOutcome> {
    let tag = |e: SimError| match e {
        SimError::WorkingSetUnderflow { .. } => SimError::sim(&layer.name, e.to_string()),
        other => other,
    };
    let word = arch.word_bytes;
    let ifmap = gen_dram_read_trace(&models.ifmap.finish().map_err(tag)?, word);
    let filter = gen_dram_read_trace(&models.filter.finish().map_err(tag)?, word);
    let ofmap = models.ofmap.finish();
    let dram = bandwidth_report(&[&ifmap, &filter], &[&ofmap], counts.total_cycles)?;
    let report = LayerReport::assemble(
        &layer.name,
        arch,
        &sched.plan,
        counts,
        &dram,
        (ifmap.bytes(), filter.bytes()),
    );
    Ok(LayerOutcome { report, dram })
}

/// Simulates one layer, forwarding every SRAM event to `extra` as well.
/// DRAM traces are kept in the outcome only when `retain_dram` is set.
pub fn simulate_layer_with<S: TraceSink>(
    layer: &LayerSpec,
    arch: &ArchConfig,
    retain_dram: bool,
    extra: &mut S,
) -> Result<LayerOutcome> {
    arch.validate()?;
    let map = AddressMap::new(layer, arch)?;
    let mut sink = LayerSink {
        counts: SramCounts::default(),
        models: vec![models_for(&map, arch, &Capacities::of(arch), retain_dram)?],
    };
    let sched = generate(layer, arch, &mut (&mut sink, extra))?;
    sink.counts.total_cycles = sched.total_cycles;
    let models = sink.models.pop().expect("one model set");
    finish_models(layer, arch, &sched, &sink.counts, models)
}

pub fn simulate_layer(layer: &LayerSpec, arch: &ArchConfig) -> Result<LayerOutcome> {
    struct Nothing;
    impl TraceSink for Nothing {}
    simulate_layer_with(layer, arch, false, &mut Nothing)
}

/// Simulates one layer once and evaluates the scratchpad model at every
/// capacity in `caps`. Each capacity gets its own result so one working-set
/// underflow does not hide the others.
pub fn simulate_layer_capacities(
    layer: &LayerSpec,
    arch: &ArchConfig,
    caps: &[Capacities],
) -> Result<Vec<Result<LayerReport>>> {
    arch.validate()?;
    let map = AddressMap::new(layer, arch)?;
    let models = caps
        .iter()
        .map(|c| models_for(&map, arch, c, false))
        .collect::<Result<Vec<_>>>()?;
    let mut sink = LayerSink {
        counts: SramCounts::default(),
        models,
    };
    let sched = generate(layer, arch, &mut sink)?;
    sink.counts.total_cycles = sched.total_cycles;
    let counts = sink.counts;
    Ok(sink
        .models
        .into_iter()
        .map(|m| finish_models(layer, arch, &sched, &counts, m).map(|o| o.report))
        .collect())
}

/// Simulates every layer (in parallel) and returns the reports in layer order.
pub fn simulate_network(layers: &[LayerSpec], arch: &ArchConfig) -> Result<Vec<LayerReport>> {
    layers
        .par_iter()
        .map(|l| simulate_layer(l, arch).map(|o| o.report))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{lower_gemm, Dataflow};
    use crate::engine::gen_traces;
    use crate::memory::{epochize, gen_dram_write_trace};

    #[test]
    fn streaming_matches_materialized_models() {
        let layer = LayerSpec::new("c", (30, 30), (3, 3), 3, 40, 1);
        for df in Dataflow::ALL {
            let mut arch = ArchConfig::with_array(4, 3, df);
            arch.ifmap_sram_kb = 1;
            arch.filter_sram_kb = 1;
            arch.ofmap_sram_kb = 1;
            // 1 KB is below both operand footprints
            let word = 1;
            let t = gen_traces(&layer, &arch).unwrap();
            let out = simulate_layer(&layer, &arch).unwrap();
            let ifmap = gen_dram_read_trace(&epochize(&t.ifmap_reads, 1024, word).unwrap(), word);
            let filter = gen_dram_read_trace(&epochize(&t.filter_reads, 1024, word).unwrap(), word);
            let ofmap = gen_dram_write_trace(&t.ofmap_writes, 1024, word).unwrap();
            assert_eq!(out.report.dram_read_bytes, ifmap.bytes() + filter.bytes());
            assert_eq!(out.report.dram_write_bytes, ofmap.bytes());
            assert_eq!(out.report.total_cycles, t.total_cycles);
            assert_eq!(out.report.macs, t.total_macs());
        }
    }

    #[test]
    fn capacities_pass_agrees_with_single_runs() {
        let layer = lower_gemm(40, 70, 30).unwrap();
        let mut arch = ArchConfig::with_array(8, 8, Dataflow::OutputStationary);
        arch.ofmap_sram_kb = 1;
        let caps: Vec<_> = [1u64, 2, 4]
            .iter()
            .map(|&kb| Capacities {
                ifmap: kb * 1024,
                filter: kb * 1024,
                ofmap: 1024,
            })
            .collect();
        let multi = simulate_layer_capacities(&layer, &arch, &caps).unwrap();
        for (cap, got) in caps.iter().zip(multi) {
            arch.ifmap_sram_kb = cap.ifmap / 1024;
            arch.filter_sram_kb = cap.filter / 1024;
            assert_eq!(got.unwrap(), simulate_layer(&layer, &arch).unwrap().report);
        }
    }
}
