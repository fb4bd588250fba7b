//! Workload counts and fold schedules.
//!
//! A convolution is viewed as `N_w` windows (one per output pixel) of
//! `W_sz = filter_h * filter_w * channels` elements each, reduced against
//! `M` filters. A fold is one mapping of a slice of that work onto the
//! physical array; folds run back to back.

use serde::{Deserialize, Serialize};

use crate::config::{ArchConfig, Dataflow, LayerSpec};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadCounts {
    pub ofmap_h: usize,
    pub ofmap_w: usize,
    /// N_w: number of convolution windows, one per output pixel.
    pub n_windows: usize,
    /// W_sz: elements per window.
    pub window_size: usize,
    /// M: number of filters (output channels).
    pub n_filters: usize,
    pub macs_total: u64,
}

pub fn workload_counts(layer: &LayerSpec) -> Result<WorkloadCounts> {
    let err = |msg: String| SimError::sim(&layer.name, msg);
    if layer.stride == 0 {
        return Err(err("stride must be at least 1".into()));
    }
    if layer.filter_h > layer.ifmap_h || layer.filter_w > layer.ifmap_w {
        return Err(err(format!(
            "derived OFMAP is empty: filter {}x{} exceeds IFMAP {}x{}",
            layer.filter_h, layer.filter_w, layer.ifmap_h, layer.ifmap_w
        )));
    }
    let ofmap_h = (layer.ifmap_h - layer.filter_h) / layer.stride + 1;
    let ofmap_w = (layer.ifmap_w - layer.filter_w) / layer.stride + 1;
    let n_windows = ofmap_h * ofmap_w;
    let window_size = layer.filter_h * layer.filter_w * layer.channels;
    let n_filters = layer.num_filters;
    if window_size == 0 || n_filters == 0 {
        return Err(err("window size and filter count must be positive".into()));
    }
    Ok(WorkloadCounts {
        ofmap_h,
        ofmap_w,
        n_windows,
        window_size,
        n_filters,
        macs_total: n_windows as u64 * n_filters as u64 * window_size as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    /// Position in the fold grid: (row-dimension block, column-dimension block).
    pub row_block: usize,
    pub col_block: usize,
    pub rows_used: usize,
    pub cols_used: usize,
    /// Operands streamed through the array per fold: W_sz (OS), N_w (WS), M (IS).
    pub stream_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub dataflow: Dataflow,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn num_folds(&self) -> usize {
        self.folds.len()
    }

    /// Σ rows_used·cols_used·stream_len, which must equal `macs_total`.
    pub fn mapped_macs(&self) -> u64 {
        self.folds
            .iter()
            .map(|f| (f.rows_used * f.cols_used) as u64 * f.stream_len as u64)
            .sum()
    }

    /// Σ rows_used·cols_used over folds.
    pub fn pe_slots_used(&self) -> u64 {
        self.folds
            .iter()
            .map(|f| (f.rows_used * f.cols_used) as u64)
            .sum()
    }
}

/// The (row-dimension, column-dimension, stream) extents a dataflow maps
/// onto the array.
pub fn mapped_dims(counts: &WorkloadCounts, dataflow: Dataflow) -> (usize, usize, usize) {
    match dataflow {
        Dataflow::OutputStationary => (counts.n_windows, counts.n_filters, counts.window_size),
        Dataflow::WeightStationary => (counts.window_size, counts.n_filters, counts.n_windows),
        Dataflow::InputStationary => (counts.window_size, counts.n_windows, counts.n_filters),
    }
}

pub fn fold_schedule(counts: &WorkloadCounts, arch: &ArchConfig) -> FoldPlan {
    let (row_dim, col_dim, stream_len) = mapped_dims(counts, arch.dataflow);
    let rows = arch.array_rows;
    let cols = arch.array_cols;
    let grid_rows = row_dim.div_ceil(rows);
    let grid_cols = col_dim.div_ceil(cols);
    let mut folds = Vec::with_capacity(grid_rows * grid_cols);
    for row_block in 0..grid_rows {
        let rows_used = rows.min(row_dim - row_block * rows);
        for col_block in 0..grid_cols {
            folds.push(Fold {
                row_block,
                col_block,
                rows_used,
                cols_used: cols.min(col_dim - col_block * cols),
                stream_len,
            });
        }
    }
    FoldPlan {
        dataflow: arch.dataflow,
        grid_rows,
        grid_cols,
        folds,
    }
}

pub fn mapping_efficiency(plan: &FoldPlan, arch: &ArchConfig) -> f64 {
    let slots = plan.num_folds() as u64 * (arch.array_rows * arch.array_cols) as u64;
    if slots == 0 {
        return 0.0;
    }
    plan.pe_slots_used() as f64 / slots as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::lower_gemm;

    #[test]
    fn counts_small_conv() {
        let c = workload_counts(&LayerSpec::new("c", (5, 5), (3, 3), 1, 1, 1)).unwrap();
        assert_eq!((c.ofmap_h, c.ofmap_w), (3, 3));
        assert_eq!((c.n_windows, c.window_size, c.n_filters), (9, 9, 1));
    }

    #[test]
    fn counts_resnet_conv1() {
        let c = workload_counts(&LayerSpec::new("conv1", (230, 230), (7, 7), 3, 64, 2)).unwrap();
        assert_eq!((c.ofmap_h, c.ofmap_w), (112, 112));
        assert_eq!((c.n_windows, c.window_size, c.n_filters), (12544, 147, 64));
    }

    #[test]
    fn counts_gemm() {
        let c = workload_counts(&lower_gemm(4, 4, 4).unwrap()).unwrap();
        assert_eq!((c.n_windows, c.window_size, c.n_filters, c.macs_total), (4, 4, 4, 64));
        let c = workload_counts(&lower_gemm(128, 256, 64).unwrap()).unwrap();
        assert_eq!((c.n_windows, c.window_size, c.n_filters), (128, 256, 64));
    }

    #[test]
    fn empty_ofmap_is_error() {
        let l = LayerSpec::new("bad", (2, 2), (3, 3), 1, 1, 1);
        assert!(workload_counts(&l).is_err());
    }

    #[test]
    fn os_folds_on_small_array() {
        let c = workload_counts(&LayerSpec::new("c", (5, 5), (3, 3), 1, 1, 1)).unwrap();
        let arch = ArchConfig::with_array(4, 4, Dataflow::OutputStationary);
        let plan = fold_schedule(&c, &arch);
        let rows: Vec<_> = plan.folds.iter().map(|f| f.rows_used).collect();
        assert_eq!(rows, vec![4, 4, 1]);
        assert!(plan.folds.iter().all(|f| f.cols_used == 1 && f.stream_len == 9));
        assert!((mapping_efficiency(&plan, &arch) - 0.1875).abs() < 1e-12);
    }

    #[test]
    fn ws_folds_resnet_conv1() {
        let c = workload_counts(&LayerSpec::new("conv1", (230, 230), (7, 7), 3, 64, 2)).unwrap();
        let arch = ArchConfig::with_array(128, 128, Dataflow::WeightStationary);
        let plan = fold_schedule(&c, &arch);
        assert_eq!((plan.grid_rows, plan.grid_cols), (2, 1));
        assert_eq!(plan.folds[0].rows_used, 128);
        assert_eq!(plan.folds[1].rows_used, 19);
        assert_eq!(plan.folds[0].stream_len, 12544);
    }

    #[test]
    fn is_perfect_fit() {
        let c = workload_counts(&lower_gemm(4, 4, 4).unwrap()).unwrap();
        let arch = ArchConfig::with_array(4, 4, Dataflow::InputStationary);
        let plan = fold_schedule(&c, &arch);
        assert_eq!(plan.num_folds(), 1);
        assert_eq!((plan.folds[0].rows_used, plan.folds[0].cols_used), (4, 4));
        assert_eq!(mapping_efficiency(&plan, &arch), 1.0);
    }

    #[test]
    fn single_pe_mapping_efficiency() {
        let c = workload_counts(&lower_gemm(1, 5, 1).unwrap()).unwrap();
        for k in [1usize, 2, 7, 16] {
            let arch = ArchConfig::with_array(k, k, Dataflow::OutputStationary);
            let eff = mapping_efficiency(&fold_schedule(&c, &arch), &arch);
            assert!((eff - 1.0 / (k * k) as f64).abs() < 1e-15);
        }
    }
}
