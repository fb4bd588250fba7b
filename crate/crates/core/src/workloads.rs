//! Bundled benchmark topologies.
//!
//! Layer shapes come from the public descriptions of each network. Convs
//! are pre-padded and fully-connected or recurrent layers are lowered to
//! GEMMs. They are fixtures for sweeps and smoke runs, not reference data.

use crate::config::{parse_topology, LayerSpec};
use crate::error::Result;

pub struct Workload {
    pub id: &'static str,
    pub name: &'static str,
    pub csv: &'static str,
}

pub const WORKLOADS: [Workload; 7] = [
    Workload {
        id: "W1",
        name: "alphagozero",
        csv: include_str!("../workloads/alphagozero.csv"),
    },
    Workload {
        id: "W2",
        name: "deepspeech2",
        csv: include_str!("../workloads/deepspeech2.csv"),
    },
    Workload {
        id: "W3",
        name: "fasterrcnn",
        csv: include_str!("../workloads/fasterrcnn.csv"),
    },
    Workload {
        id: "W4",
        name: "ncf",
        csv: include_str!("../workloads/ncf.csv"),
    },
    Workload {
        id: "W5",
        name: "resnet50",
        csv: include_str!("../workloads/resnet50.csv"),
    },
    Workload {
        id: "W6",
        name: "sentiment_cnn",
        csv: include_str!("../workloads/sentiment_cnn.csv"),
    },
    Workload {
        id: "W7",
        name: "transformer",
        csv: include_str!("../workloads/transformer.csv"),
    },
];

pub const DEFAULT_CONFIG: &str = include_str!("../workloads/default.cfg");

impl Workload {
    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        parse_topology(self.csv)
    }
}

/// Looks a bundled workload up by id (`W3`) or name (`fasterrcnn`),
/// case-insensitively.
pub fn find(key: &str) -> Option<&'static Workload> {
    let key = key.trim_end_matches(".csv");
    WORKLOADS
        .iter()
        .find(|w| w.id.eq_ignore_ascii_case(key) || w.name.eq_ignore_ascii_case(key))
}
