//! Per-layer and per-network reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{ini_pairs, ArchConfig, Dataflow};
use crate::engine::TraceSet;
use crate::error::{Result, SimError};
use crate::mapping::FoldPlan;
use crate::memory::DramDemand;

/// Linear energy model. Units are arbitrary; the defaults only encode the
/// usual ordering MAC < SRAM access << DRAM access.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCostTable {
    /// Per MAC.
    pub e_mac: f64,
    /// Per SRAM word read.
    pub e_sram_read: f64,
    /// Per SRAM word written.
    pub e_sram_write: f64,
    /// Per DRAM byte moved in either direction.
    pub e_dram_access: f64,
}

impl Default for EnergyCostTable {
    fn default() -> Self {
        EnergyCostTable {
            e_mac: 1.0,
            e_sram_read: 6.0,
            e_sram_write: 6.0,
            e_dram_access: 200.0,
        }
    }
}

impl EnergyCostTable {
    pub const ZERO: EnergyCostTable = EnergyCostTable {
        e_mac: 0.0,
        e_sram_read: 0.0,
        e_sram_write: 0.0,
        e_dram_access: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.e_mac, self.e_sram_read, self.e_sram_write, self.e_dram_access];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SimError::Config(format!(
                "energy costs must be finite and non-negative, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Applies one `Key = value` pair; returns false if the key is not an
    /// energy key.
    pub(crate) fn set_key(&mut self, key: &str, value: &str) -> Result<bool> {
        let slot = match key.to_ascii_lowercase().as_str() {
            "macenergy" => &mut self.e_mac,
            "sramreadenergy" => &mut self.e_sram_read,
            "sramwriteenergy" => &mut self.e_sram_write,
            "dramaccessenergy" => &mut self.e_dram_access,
            _ => return Ok(false),
        };
        *slot = value
            .parse()
            .map_err(|_| SimError::Config(format!("{key}: `{value}` is not a number")))?;
        Ok(true)
    }
}

/// Parses a standalone cost-table file (same INI syntax as the config).
/// Keys that are absent keep their default value.
pub fn parse_energy_table(text: &str) -> Result<EnergyCostTable> {
    let mut table = EnergyCostTable::default();
    for (line, key, value) in ini_pairs(text)? {
        if !table.set_key(&key, &value)? {
            return Err(SimError::Config(format!(
                "line {line}: unknown energy key `{key}`"
            )));
        }
    }
    table.validate()?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessCounts {
    pub macs: u64,
    pub sram_reads: u64,
    pub sram_writes: u64,
    pub dram_bytes: u64,
}

pub fn energy(counts: &AccessCounts, table: &EnergyCostTable) -> f64 {
    counts.macs as f64 * table.e_mac
        + counts.sram_reads as f64 * table.e_sram_read
        + counts.sram_writes as f64 * table.e_sram_write
        + counts.dram_bytes as f64 * table.e_dram_access
}

/// Layer runtime: one past the cycle of the last OFMAP write.
pub fn compute_runtime(traces: &TraceSet) -> Result<u64> {
    traces
        .ofmap_writes
        .last_cycle()
        .map(|c| c + 1)
        .ok_or_else(|| SimError::Invalid("empty OFMAP write trace".into()))
}

/// SRAM-side totals of one layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SramCounts {
    pub total_cycles: u64,
    pub macs: u64,
    pub ifmap_reads: u64,
    pub filter_reads: u64,
    pub ofmap_writes: u64,
    pub ofmap_partial_reads: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub dataflow: Dataflow,
    pub rows: usize,
    pub cols: usize,
    pub total_cycles: u64,
    pub macs: u64,
    pub folds: u64,
    pub pe_slots_used: u64,
    pub mapping_efficiency: f64,
    pub compute_utilization: f64,
    pub sram_reads_ifmap: u64,
    pub sram_reads_filter: u64,
    pub sram_writes_ofmap: u64,
    pub sram_reads_ofmap_partials: u64,
    pub dram_read_bytes: u64,
    pub dram_ifmap_read_bytes: u64,
    pub dram_filter_read_bytes: u64,
    pub dram_write_bytes: u64,
    pub cold_read_bytes: u64,
    pub avg_read_bw: f64,
    pub peak_read_bw: f64,
    pub avg_write_bw: f64,
    pub peak_write_bw: f64,
    pub steady_read_bw: f64,
    pub required_read_bw: f64,
    pub energy: f64,
}

impl LayerReport {
    /// Assembles a report from SRAM counts and DRAM demand.
    /// `dram_split` is the (IFMAP, filter) share of DRAM read bytes.
    pub fn assemble(
        name: &str,
        arch: &ArchConfig,
        plan: &FoldPlan,
        sram: &SramCounts,
        dram: &DramDemand,
        dram_split: (u64, u64),
    ) -> Self {
        let pes = (arch.array_rows * arch.array_cols) as u64;
        let folds = plan.num_folds() as u64;
        let pe_slots_used = plan.pe_slots_used();
        let access = AccessCounts {
            macs: sram.macs,
            sram_reads: sram.ifmap_reads + sram.filter_reads + sram.ofmap_partial_reads,
            sram_writes: sram.ofmap_writes,
            dram_bytes: dram.total_dram_reads + dram.total_dram_writes,
        };
        LayerReport {
            name: name.to_string(),
            dataflow: arch.dataflow,
            rows: arch.array_rows,
            cols: arch.array_cols,
            total_cycles: sram.total_cycles,
            macs: sram.macs,
            folds,
            pe_slots_used,
            mapping_efficiency: ratio(pe_slots_used, folds * pes),
            compute_utilization: ratio(sram.macs, sram.total_cycles * pes),
            sram_reads_ifmap: sram.ifmap_reads,
            sram_reads_filter: sram.filter_reads,
            sram_writes_ofmap: sram.ofmap_writes,
            sram_reads_ofmap_partials: sram.ofmap_partial_reads,
            dram_read_bytes: dram.total_dram_reads,
            dram_ifmap_read_bytes: dram_split.0,
            dram_filter_read_bytes: dram_split.1,
            dram_write_bytes: dram.total_dram_writes,
            cold_read_bytes: dram.cold_read_bytes,
            avg_read_bw: dram.avg_read_bw,
            peak_read_bw: dram.peak_read_bw,
            avg_write_bw: dram.avg_write_bw,
            peak_write_bw: dram.peak_write_bw,
            steady_read_bw: dram.steady_read_bw,
            required_read_bw: dram.required_read_bw,
            energy: energy(&access, &arch.energy),
        }
    }

    pub fn sram_reads_total(&self) -> u64 {
        self.sram_reads_ifmap + self.sram_reads_filter + self.sram_reads_ofmap_partials
    }

    fn csv_row(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.3}",
            self.name,
            self.dataflow,
            self.rows,
            self.cols,
            self.total_cycles,
            self.mapping_efficiency,
            self.compute_utilization,
            self.sram_reads_ifmap,
            self.sram_reads_filter,
            self.sram_writes_ofmap,
            self.dram_read_bytes,
            self.dram_write_bytes,
            self.avg_read_bw,
            self.peak_read_bw,
            self.avg_write_bw,
            self.peak_write_bw,
            self.energy,
        );
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub const SUMMARY_HEADER: &str = "layer,dataflow,rows,cols,total_cycles,mapping_eff,compute_util,\
sram_rd_ifmap,sram_rd_filter,sram_wr_ofmap,dram_rd_bytes,dram_wr_bytes,avg_rd_bw,peak_rd_bw,\
avg_wr_bw,peak_wr_bw,energy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkReport {
    pub layers: Vec<LayerReport>,
    pub total: LayerReport,
}

/// Totals across serially executed layers. Counts, cycles and energy add;
/// averages are recomputed from the totals and peaks take the maximum.
pub fn summarize_network(layers: Vec<LayerReport>) -> Result<NetworkReport> {
    let first = layers
        .first()
        .ok_or_else(|| SimError::Invalid("network has no layers".into()))?;
    let pes = (first.rows * first.cols) as u64;
    let sum = |f: fn(&LayerReport) -> u64| layers.iter().map(f).sum::<u64>();
    let max = |f: fn(&LayerReport) -> f64| layers.iter().map(f).fold(0.0, f64::max);

    let total_cycles = sum(|l| l.total_cycles);
    let macs = sum(|l| l.macs);
    let folds = sum(|l| l.folds);
    let pe_slots_used = sum(|l| l.pe_slots_used);
    let dram_read_bytes = sum(|l| l.dram_read_bytes);
    let dram_write_bytes = sum(|l| l.dram_write_bytes);
    let cold_read_bytes = sum(|l| l.cold_read_bytes);
    let cycles = total_cycles as f64;
    let total = LayerReport {
        name: "total".into(),
        dataflow: first.dataflow,
        rows: first.rows,
        cols: first.cols,
        total_cycles,
        macs,
        folds,
        pe_slots_used,
        mapping_efficiency: ratio(pe_slots_used, folds * pes),
        compute_utilization: ratio(macs, total_cycles * pes),
        sram_reads_ifmap: sum(|l| l.sram_reads_ifmap),
        sram_reads_filter: sum(|l| l.sram_reads_filter),
        sram_writes_ofmap: sum(|l| l.sram_writes_ofmap),
        sram_reads_ofmap_partials: sum(|l| l.sram_reads_ofmap_partials),
        dram_read_bytes,
        dram_ifmap_read_bytes: sum(|l| l.dram_ifmap_read_bytes),
        dram_filter_read_bytes: sum(|l| l.dram_filter_read_bytes),
        dram_write_bytes,
        cold_read_bytes,
        avg_read_bw: dram_read_bytes as f64 / cycles,
        peak_read_bw: max(|l| l.peak_read_bw),
        avg_write_bw: dram_write_bytes as f64 / cycles,
        peak_write_bw: max(|l| l.peak_write_bw),
        steady_read_bw: (dram_read_bytes - cold_read_bytes) as f64 / cycles,
        required_read_bw: max(|l| l.required_read_bw),
        energy: layers.iter().map(|l| l.energy).sum(),
    };
    Ok(NetworkReport { layers, total })
}

impl NetworkReport {
    /// Per-layer summary CSV.
    pub fn summary_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for l in &self.layers {
            l.csv_row(&mut out);
        }
        out
    }

    /// One-row network total CSV.
    pub fn network_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        self.total.csv_row(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::lower_gemm;
    use crate::engine::gen_traces;

    fn sample(name: &str, cycles: u64) -> LayerReport {
        LayerReport {
            name: name.into(),
            dataflow: Dataflow::OutputStationary,
            rows: 4,
            cols: 4,
            total_cycles: cycles,
            macs: 64,
            folds: 1,
            pe_slots_used: 16,
            mapping_efficiency: 1.0,
            compute_utilization: 64.0 / (cycles * 16) as f64,
            sram_reads_ifmap: 16,
            sram_reads_filter: 16,
            sram_writes_ofmap: 16,
            sram_reads_ofmap_partials: 0,
            dram_read_bytes: 32,
            dram_ifmap_read_bytes: 16,
            dram_filter_read_bytes: 16,
            dram_write_bytes: 16,
            cold_read_bytes: 32,
            avg_read_bw: 32.0 / cycles as f64,
            peak_read_bw: 2.0,
            avg_write_bw: 16.0 / cycles as f64,
            peak_write_bw: 2.0,
            steady_read_bw: 0.0,
            required_read_bw: 0.0,
            energy: 1000.0,
        }
    }

    #[test]
    fn linear_energy() {
        let counts = AccessCounts {
            macs: 64,
            sram_reads: 32,
            sram_writes: 16,
            dram_bytes: 8,
        };
        let table = EnergyCostTable {
            e_mac: 1.0,
            e_sram_read: 2.0,
            e_sram_write: 2.0,
            e_dram_access: 100.0,
        };
        assert_eq!(energy(&counts, &table), 960.0);
        assert_eq!(energy(&counts, &EnergyCostTable::ZERO), 0.0);
        let doubled = AccessCounts {
            macs: 128,
            sram_reads: 64,
            sram_writes: 32,
            dram_bytes: 16,
        };
        assert_eq!(energy(&doubled, &table), 1920.0);
    }

    #[test]
    fn runtime_from_last_write() {
        let mut t = TraceSet::default();
        assert!(compute_runtime(&t).is_err());
        t.ofmap_writes.push(0, &[7]);
        assert_eq!(compute_runtime(&t).unwrap(), 1);
        let a = ArchConfig::with_array(4, 4, Dataflow::OutputStationary);
        let t = gen_traces(&lower_gemm(4, 4, 4).unwrap(), &a).unwrap();
        assert_eq!(compute_runtime(&t).unwrap(), 10);
        assert_eq!(compute_runtime(&t).unwrap(), t.total_cycles);
    }

    #[test]
    fn network_totals() {
        assert!(summarize_network(vec![]).is_err());
        let one = summarize_network(vec![sample("a", 10)]).unwrap();
        assert_eq!(one.total.total_cycles, 10);
        assert_eq!(one.total.energy, 1000.0);
        assert_eq!(one.total.avg_read_bw, 3.2);
        let two = summarize_network(vec![sample("a", 10), sample("b", 10)]).unwrap();
        assert_eq!(two.total.total_cycles, 20);
        assert_eq!(two.total.macs, 128);
        assert_eq!(two.total.dram_read_bytes, 64);
        assert_eq!(two.total.energy, 2000.0);
        assert_eq!(two.total.compute_utilization, one.total.compute_utilization);
    }

    #[test]
    fn summary_csv_shape() {
        let net = summarize_network(vec![sample("a", 10), sample("b", 12)]).unwrap();
        let csv = net.summary_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), 17);
        assert!(lines[1].starts_with("a,os,4,4,10,1.000000,"));
        assert_eq!(net.network_csv().lines().count(), 2);
    }

    #[test]
    fn energy_table_file() {
        let t = parse_energy_table("MacEnergy = 2\nDramAccessEnergy=50\n").unwrap();
        assert_eq!(t.e_mac, 2.0);
        assert_eq!(t.e_sram_read, 6.0);
        assert_eq!(t.e_dram_access, 50.0);
        assert!(parse_energy_table("Foo = 1").is_err());
        assert!(parse_energy_table("MacEnergy = -1").is_err());
    }
}
