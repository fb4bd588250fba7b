//! Architecture config and topology file parsing.
//!
//! The config file is INI-style: `Key = value` lines, optionally grouped
//! under `[section]` headers (section names are informational only).
//! `#` and `;` start comments. Keys are matched case-insensitively.
//!
//! The topology file is a CSV with a header row followed by one row per
//! layer: name, IFMAP height, IFMAP width, filter height, filter width,
//! channels, number of filters, stride. Padding is not modeled, so IFMAP
//! dimensions are expected to be pre-padded.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::metrics::EnergyCostTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dataflow {
    #[serde(rename = "os")]
    OutputStationary,
    #[serde(rename = "ws")]
    WeightStationary,
    #[serde(rename = "is")]
    InputStationary,
}

impl Dataflow {
    pub const ALL: [Dataflow; 3] = [
        Dataflow::OutputStationary,
        Dataflow::WeightStationary,
        Dataflow::InputStationary,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dataflow::OutputStationary => "os",
            Dataflow::WeightStationary => "ws",
            Dataflow::InputStationary => "is",
        }
    }
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataflow {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "os" => Ok(Dataflow::OutputStationary),
            "ws" => Ok(Dataflow::WeightStationary),
            "is" => Ok(Dataflow::InputStationary),
            other => Err(SimError::Config(format!(
                "unsupported dataflow `{other}`; legal values are 'os', 'ws' and 'is'"
            ))),
        }
    }
}

/// Hardware description for one simulation run.
///
/// SRAM sizes are the size of ONE working-set buffer per partition; the
/// idle half of each double buffer is not counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub array_rows: usize,
    pub array_cols: usize,
    pub ifmap_sram_kb: u64,
    pub filter_sram_kb: u64,
    pub ofmap_sram_kb: u64,
    pub ifmap_offset: u64,
    pub filter_offset: u64,
    pub ofmap_offset: u64,
    pub dataflow: Dataflow,
    pub word_bytes: u64,
    pub topology_path: String,
    #[serde(default)]
    pub energy: EnergyCostTable,
}

impl Default for ArchConfig {
    /// 128x128 array, 512 KB IFMAP/filter buffers, 1-byte words.
    fn default() -> Self {
        ArchConfig {
            array_rows: 128,
            array_cols: 128,
            ifmap_sram_kb: 512,
            filter_sram_kb: 512,
            ofmap_sram_kb: 256,
            ifmap_offset: 0,
            filter_offset: 1_000_000_000,
            ofmap_offset: 2_000_000_000,
            dataflow: Dataflow::OutputStationary,
            word_bytes: 1,
            topology_path: String::new(),
            energy: EnergyCostTable::default(),
        }
    }
}

impl ArchConfig {
    /// Convenience constructor used by sweeps and tests.
    pub fn with_array(rows: usize, cols: usize, dataflow: Dataflow) -> Self {
        ArchConfig {
            array_rows: rows,
            array_cols: cols,
            dataflow,
            ..ArchConfig::default()
        }
    }

    pub fn ifmap_capacity_bytes(&self) -> u64 {
        self.ifmap_sram_kb * 1024
    }

    pub fn filter_capacity_bytes(&self) -> u64 {
        self.filter_sram_kb * 1024
    }

    pub fn ofmap_capacity_bytes(&self) -> u64 {
        self.ofmap_sram_kb * 1024
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ArrayHeight", self.array_rows as u64),
            ("ArrayWidth", self.array_cols as u64),
            ("IfmapSRAMSz", self.ifmap_sram_kb),
            ("FilterSRAMSz", self.filter_sram_kb),
            ("OfmapSRAMSz", self.ofmap_sram_kb),
            ("WordBytes", self.word_bytes),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(SimError::Config(format!("{key} must be positive")));
            }
        }
        self.energy.validate()
    }

    /// Renders the config in the same format [`parse_config`] accepts.
    pub fn to_config_string(&self) -> String {
        let e = &self.energy;
        format!(
            "[architecture]\n\
             ArrayHeight = {}\n\
             ArrayWidth = {}\n\
             IfmapSRAMSz = {}\n\
             FilterSRAMSz = {}\n\
             OfmapSRAMSz = {}\n\
             IfmapOffset = {}\n\
             FilterOffset = {}\n\
             OfmapOffset = {}\n\
             DataFlow = {}\n\
             WordBytes = {}\n\
             Topology = {}\n\
             \n\
             [energy]\n\
             MacEnergy = {}\n\
             SramReadEnergy = {}\n\
             SramWriteEnergy = {}\n\
             DramAccessEnergy = {}\n",
            self.array_rows,
            self.array_cols,
            self.ifmap_sram_kb,
            self.filter_sram_kb,
            self.ofmap_sram_kb,
            self.ifmap_offset,
            self.filter_offset,
            self.ofmap_offset,
            self.dataflow,
            self.word_bytes,
            self.topology_path,
            e.e_mac,
            e.e_sram_read,
            e.e_sram_write,
            e.e_dram_access,
        )
    }
}

const REQUIRED_KEYS: [&str; 10] = [
    "ArrayHeight",
    "ArrayWidth",
    "IfmapSRAMSz",
    "FilterSRAMSz",
    "OfmapSRAMSz",
    "IfmapOffset",
    "FilterOffset",
    "OfmapOffset",
    "DataFlow",
    "Topology",
];

/// Splits INI text into `(line_no, key, value)` triples, skipping section
/// headers, blank lines and comments.
pub(crate) fn ini_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw
            .split(['#', ';'])
            .next()
            .unwrap_or_default()
            .trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let Some(pos) = line.find(['=', ':']) else {
            return Err(SimError::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                idx + 1
            )));
        };
        let key = line[..pos].trim().to_string();
        let value = line[pos + 1..].trim().trim_matches('"').to_string();
        out.push((idx + 1, key, value));
    }
    Ok(out)
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| SimError::Config(format!("{key}: `{value}` is not a non-negative integer")))
}

/// Parses a config file, returning the config together with warnings for
/// keys that were not recognized.
pub fn parse_config_with_warnings(text: &str) -> Result<(ArchConfig, Vec<String>)> {
    let mut cfg = ArchConfig::default();
    let mut seen = Vec::new();
    let mut warnings = Vec::new();

    for (line, key, value) in ini_pairs(text)? {
        let canonical = REQUIRED_KEYS
            .iter()
            .chain(["WordBytes"].iter())
            .find(|k| k.eq_ignore_ascii_case(&key))
            .copied();
        match canonical {
            Some("ArrayHeight") => cfg.array_rows = parse_num(&key, &value)?,
            Some("ArrayWidth") => cfg.array_cols = parse_num(&key, &value)?,
            Some("IfmapSRAMSz") => cfg.ifmap_sram_kb = parse_num(&key, &value)?,
            Some("FilterSRAMSz") => cfg.filter_sram_kb = parse_num(&key, &value)?,
            Some("OfmapSRAMSz") => cfg.ofmap_sram_kb = parse_num(&key, &value)?,
            Some("IfmapOffset") => cfg.ifmap_offset = parse_num(&key, &value)?,
            Some("FilterOffset") => cfg.filter_offset = parse_num(&key, &value)?,
            Some("OfmapOffset") => cfg.ofmap_offset = parse_num(&key, &value)?,
            Some("DataFlow") => cfg.dataflow = value.parse()?,
            Some("WordBytes") => cfg.word_bytes = parse_num(&key, &value)?,
            Some("Topology") => cfg.topology_path = value.clone(),
            _ => {
                if !cfg.energy.set_key(&key, &value)? {
                    warnings.push(format!("line {line}: unknown key `{key}` ignored"));
                }
            }
        }
        if let Some(k) = canonical {
            seen.push(k);
        }
    }

    if let Some(missing) = REQUIRED_KEYS.iter().find(|k| !seen.contains(k)) {
        return Err(SimError::Config(format!("missing required key `{missing}`")));
    }
    cfg.validate()?;
    Ok((cfg, warnings))
}

pub fn parse_config(text: &str) -> Result<ArchConfig> {
    let (cfg, warnings) = parse_config_with_warnings(text)?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(cfg)
}

/// One row of the topology file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub ifmap_h: usize,
    pub ifmap_w: usize,
    pub filter_h: usize,
    pub filter_w: usize,
    pub channels: usize,
    pub num_filters: usize,
    pub stride: usize,
}

impl LayerSpec {
    pub fn new(
        name: impl Into<String>,
        ifmap: (usize, usize),
        filter: (usize, usize),
        channels: usize,
        num_filters: usize,
        stride: usize,
    ) -> Self {
        LayerSpec {
            name: name.into(),
            ifmap_h: ifmap.0,
            ifmap_w: ifmap.1,
            filter_h: filter.0,
            filter_w: filter.1,
            channels,
            num_filters,
            stride,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let dims = [
            ("IFMAP height", self.ifmap_h),
            ("IFMAP width", self.ifmap_w),
            ("filter height", self.filter_h),
            ("filter width", self.filter_w),
            ("channels", self.channels),
            ("num filters", self.num_filters),
            ("stride", self.stride),
        ];
        if let Some((what, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{what} must be at least 1"));
        }
        if self.filter_h > self.ifmap_h || self.filter_w > self.ifmap_w {
            return Err(format!(
                "filter {}x{} larger than IFMAP {}x{}",
                self.filter_h, self.filter_w, self.ifmap_h, self.ifmap_w
            ));
        }
        Ok(())
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.name,
            self.ifmap_h,
            self.ifmap_w,
            self.filter_h,
            self.filter_w,
            self.channels,
            self.num_filters,
            self.stride
        )
    }
}

pub const TOPOLOGY_HEADER: &str =
    "Layer Name,IFMAP Height,IFMAP Width,Filter Height,Filter Width,Channels,Num Filter,Strides";

pub fn topology_to_csv(layers: &[LayerSpec]) -> String {
    let mut out = String::from(TOPOLOGY_HEADER);
    out.push('\n');
    for l in layers {
        out.push_str(&l.to_csv_row());
        out.push('\n');
    }
    out
}

/// Parses a topology CSV. The first non-blank line is the header.
pub fn parse_topology(text: &str) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    let mut header_seen = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let err = |msg: String| SimError::Topology { line: line_no, msg };

        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        // rows exported by spreadsheets often end in a trailing comma
        while fields.len() > 8 && fields.last() == Some(&"") {
            fields.pop();
        }
        if fields.len() != 8 {
            return Err(err(format!("expected 8 columns, found {}", fields.len())));
        }
        if fields[0].is_empty() {
            return Err(err("empty layer name".into()));
        }
        let mut nums = [0usize; 7];
        for (slot, field) in nums.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse()
                .map_err(|_| err(format!("`{field}` is not a non-negative integer")))?;
        }
        let layer = LayerSpec {
            name: fields[0].to_string(),
            ifmap_h: nums[0],
            ifmap_w: nums[1],
            filter_h: nums[2],
            filter_w: nums[3],
            channels: nums[4],
            num_filters: nums[5],
            stride: nums[6],
        };
        layer
            .validate()
            .map_err(|msg| err(format!("layer `{}`: {msg}", layer.name)))?;
        layers.push(layer);
    }
    Ok(layers)
}

/// Lowers an `(m x k) * (k x n)` matrix product to a 1x1 convolution:
/// `m` windows of size `k` against `n` filters.
pub fn lower_gemm(m: usize, k: usize, n: usize) -> Result<LayerSpec> {
    if m == 0 || k == 0 || n == 0 {
        return Err(SimError::Invalid(format!(
            "GEMM dimensions must be positive, got {m}x{k}x{n}"
        )));
    }
    Ok(LayerSpec {
        name: format!("gemm_{m}x{k}x{n}"),
        ifmap_h: m,
        ifmap_w: 1,
        filter_h: 1,
        filter_w: 1,
        channels: k,
        num_filters: n,
        stride: 1,
    })
}
