#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use codesign::config::LoadedConfig;
use codesign::perf::{AccelMode, PlatformModel};
use codesign::space::{parse_space_str, OpCandidate, OpKind, PfRange, SearchSpace};

/// Two bundles over four slots: a downsampling MBConv bundle and a plain
/// conv bundle.
pub const SMALL_SPACE: &str = r#"
[space]
num_blocks = 4
ops_per_block = 3
quant_choices = 3
quant_bits = [4, 8, 16]
replications = [2, 3, 4]
channel_choices = [[8, 16], [16, 32], [16, 32], [32, 64]]
pool_positions = [0, 1, 2]
input_shape = [32, 32, 3]
num_classes = 10

[[space.bundles]]
id = "mb"
downsample_capable = true
ops = [
    { kind = "mb_conv", kernel_size = 3, expansion_ratio = 1.0, allowed_quant_bits = [4, 8, 16], pf_range = [0, 6] },
    { kind = "mb_conv", kernel_size = 5, expansion_ratio = 2.0, allowed_quant_bits = [4, 8, 16], pf_range = [0, 6] },
    { kind = "pool2x2", allowed_quant_bits = [8], pf_range = [0, 0] },
]

[[space.bundles]]
id = "conv"
ops = [
    { kind = "conv1x1", allowed_quant_bits = [4, 8, 16], pf_range = [1, 5] },
    { kind = "dw_conv", kernel_size = 3, allowed_quant_bits = [4, 8, 16], pf_range = [0, 4] },
]
"#;

pub fn small_space() -> SearchSpace {
    parse_space_str(SMALL_SPACE, false).expect("fixture space parses")
}

pub fn platform(bw: f64, overhead: u64, mode: AccelMode) -> PlatformModel {
    PlatformModel {
        clock_mhz: 100.0,
        dsp_budget: 360,
        bram_budget_kbit: 4320,
        lut_budget: 70_000,
        bw_bytes_per_cycle: bw,
        dsp_per_lane: BTreeMap::from([(4, 0.25), (8, 0.5), (16, 1.0)]),
        lut_per_lane: 40.0,
        overhead_cycles_per_op: overhead,
        accel_mode: mode,
        smooth_sharpness: 2.0,
        buffer_kbit: 512.0,
    }
}

pub fn op(kind: OpKind, k: u32, e: f64, pf: (u32, u32)) -> OpCandidate {
    OpCandidate {
        kind,
        kernel_size: k,
        expansion_ratio: e,
        allowed_quant_bits: vec![4, 8, 16],
        pf_range: PfRange::new(pf.0, pf.1),
    }
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn load_config(name: &str) -> LoadedConfig {
    LoadedConfig::load(&configs_dir().join(name)).expect("shipped config loads")
}
