//! Clock-cycle model of the FPGA pipeline.
//!
//! Convolution and weight-loading stages are parametric; image loading,
//! pooling, the dense layer and the result write-back use constants
//! measured on the reference design. With several convolution blocks the
//! convolution and pooling work is split across blocks (bounded by the
//! stage's channel parallelism); loading stays serial.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, ModelConfig, Shape};

/// Calibration constants of the cycle model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleConstants {
    pub cycles_per_dot9: u64,
    pub per_channel_pair_overhead: u64,
    pub stage_initial_penalty: u64,
    pub load_cycles_per_block: u64,
    pub load_fixed_overhead: u64,
    pub image_load: u64,
    /// Per max-pooling stage, in network order. Missing entries fall back
    /// to one cycle per input element.
    pub maxpool_stages: Vec<u64>,
    /// `(load, process)` per dense layer, in network order. Missing entries
    /// fall back to [`load_cycles`] and one cycle per dot-9 block per output.
    pub dense_stages: Vec<(u64, u64)>,
    pub result_save: u64,
}

impl Default for CycleConstants {
    fn default() -> Self {
        Self {
            cycles_per_dot9: 4,
            per_channel_pair_overhead: 15,
            stage_initial_penalty: 1,
            load_cycles_per_block: 18,
            load_fixed_overhead: 4,
            image_load: 1570,
            maxpool_stages: vec![3164, 1623],
            dense_stages: vec![(356, 244)],
            result_save: 16,
        }
    }
}

/// Cycles to run one 3×3 convolution layer on a single block.
pub fn conv_cycles(
    height: usize,
    width: usize,
    c_in: usize,
    c_out: usize,
    stage_initial: bool,
    consts: &CycleConstants,
) -> u64 {
    let pairs = (c_in * c_out) as u64;
    consts.cycles_per_dot9 * (height * width) as u64 * pairs
        + consts.per_channel_pair_overhead * pairs
        + if stage_initial {
            consts.stage_initial_penalty
        } else {
            0
        }
}

/// Cycles to move `n_weights` into on-chip memory, nine per word.
pub fn load_cycles(n_weights: usize, consts: &CycleConstants) -> u64 {
    consts.load_cycles_per_block * pack_layout(n_weights).blocks as u64 + consts.load_fixed_overhead
}

/// Nine-weight word layout of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackLayout {
    pub blocks: usize,
    pub pad_slots: usize,
}

pub fn pack_layout(n_weights: usize) -> PackLayout {
    let blocks = n_weights.div_ceil(9);
    PackLayout {
        blocks,
        pad_slots: blocks * 9 - n_weights,
    }
}

/// Word layout of a whole layer. Conv kernels are one word each; dense
/// rows are packed separately so every word feeds one output neuron.
pub fn layer_pack_layout(layer: &LayerSpec) -> PackLayout {
    match *layer {
        LayerSpec::Dense { n_in, n_out } => {
            let row = pack_layout(n_in);
            PackLayout {
                blocks: row.blocks * n_out,
                pad_slots: row.pad_slots * n_out,
            }
        }
        _ => pack_layout(layer.weight_count()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    ImageLoad,
    WeightLoad,
    Conv,
    MaxPool,
    DenseLoad,
    Dense,
    Save,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub kind: StageKind,
    /// Cycles on a single convolution block.
    pub serial_cycles: u64,
    /// How many blocks the stage can use; 1 for serial stages.
    pub parallelism: usize,
    /// Cycles with the report's block count.
    pub cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub conv_blocks: usize,
    pub stages: Vec<Stage>,
    pub total: u64,
    /// Single-block total divided by this total.
    pub speedup: f64,
}

impl CycleReport {
    pub fn fps(&self, clock_mhz: f64) -> Result<f64> {
        fps(self.total, clock_mhz)
    }

    /// Two-column text table: stage name and cycle count.
    pub fn to_table(&self) -> String {
        let width = self
            .stages
            .iter()
            .map(|s| s.name.len())
            .max()
            .unwrap_or(0)
            .max("Stage of processing".len());
        let mut out = format!("{:<width$}  {:>12}\n", "Stage of processing", "Clock cycles");
        for s in &self.stages {
            out.push_str(&format!("{:<width$}  {:>12}\n", s.name, s.cycles));
        }
        out.push_str(&format!("{:<width$}  {:>12}\n", "Total", self.total));
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stage", "cycles"])?;
        for s in &self.stages {
            w.write_record([s.name.as_str(), &s.cycles.to_string()])?;
        }
        w.write_record(["Total", &self.total.to_string()])?;
        w.flush().map_err(|e| Error::io("<cycles>", e))?;
        Ok(())
    }
}

pub fn fps(total_cycles: u64, clock_mhz: f64) -> Result<f64> {
    if !clock_mhz.is_finite() || clock_mhz <= 0.0 || total_cycles == 0 {
        return Err(Error::Parse(format!(
            "need a positive clock and cycle count, got {clock_mhz} MHz / {total_cycles} cycles"
        )));
    }
    Ok(clock_mhz * 1e6 / total_cycles as f64)
}

fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

/// Per-stage breakdown and total for `n_conv_blocks` parallel blocks.
pub fn total_cycles(model: &ModelConfig, n_conv_blocks: usize, consts: &CycleConstants) -> Result<CycleReport> {
    if n_conv_blocks == 0 {
        return Err(Error::Parse("at least one convolution block is required".into()));
    }
    let single = stage_list(model, consts)?;
    let serial_total: u64 = single.iter().map(|s| s.serial_cycles).sum();
    let stages: Vec<Stage> = single
        .into_iter()
        .map(|mut s| {
            let used = n_conv_blocks.min(s.parallelism).max(1) as u64;
            s.cycles = s.serial_cycles.div_ceil(used);
            s
        })
        .collect();
    let total = stages.iter().map(|s| s.cycles).sum();
    Ok(CycleReport {
        conv_blocks: n_conv_blocks,
        stages,
        total,
        speedup: serial_total as f64 / total as f64,
    })
}

fn stage_list(model: &ModelConfig, consts: &CycleConstants) -> Result<Vec<Stage>> {
    let chain = model.shape_chain()?;
    let serial = |name: String, kind, cycles| Stage {
        name,
        kind,
        serial_cycles: cycles,
        parallelism: 1,
        cycles,
    };
    let mut stages = vec![serial("Initial image loading".into(), StageKind::ImageLoad, consts.image_load)];
    let mut number = 0;
    let mut stage_initial = true;
    let mut pools = 0;
    let mut denses = 0;
    for (k, layer) in model.layers.iter().enumerate() {
        let input = chain[k];
        if matches!(layer, LayerSpec::GlobalMaxPool) {
            // computed on the fly by the preceding convolution
            if let Some(last) = stages.iter_mut().rev().find(|s| s.kind == StageKind::Conv) {
                last.name.push_str(" (+GlobalMaxPooling)");
            }
            continue;
        }
        number += 1;
        let nth = ordinal(number);
        match *layer {
            LayerSpec::Conv3x3 { c_in, c_out, .. } => {
                let Shape::Map { height, width, .. } = chain[k + 1] else {
                    unreachable!("conv output is a map")
                };
                stages.push(serial(
                    format!("Loading weights for the {nth} conv layer"),
                    StageKind::WeightLoad,
                    load_cycles(layer.weight_count(), consts),
                ));
                let cycles = conv_cycles(height, width, c_in, c_out, stage_initial, consts);
                stages.push(Stage {
                    name: format!("Processing {nth} conv layer"),
                    kind: StageKind::Conv,
                    serial_cycles: cycles,
                    parallelism: c_out,
                    cycles,
                });
                stage_initial = false;
            }
            LayerSpec::MaxPool2 => {
                let cycles = consts
                    .maxpool_stages
                    .get(pools)
                    .copied()
                    .unwrap_or(input.len() as u64);
                let Shape::Map { channels, .. } = input else {
                    unreachable!("pool input is a map")
                };
                stages.push(Stage {
                    name: format!("Processing {nth} maxpooling layer"),
                    kind: StageKind::MaxPool,
                    serial_cycles: cycles,
                    parallelism: channels,
                    cycles,
                });
                pools += 1;
                stage_initial = true;
            }
            LayerSpec::Dense { n_in, n_out } => {
                let (load, process) = consts.dense_stages.get(denses).copied().unwrap_or((
                    load_cycles(layer.weight_count(), consts),
                    (n_in.div_ceil(9) * n_out) as u64,
                ));
                stages.push(serial(
                    format!("Loading weights for the {nth} dense layer"),
                    StageKind::DenseLoad,
                    load,
                ));
                stages.push(serial(format!("Processing {nth} dense layer"), StageKind::Dense, process));
                denses += 1;
            }
            LayerSpec::GlobalMaxPool => unreachable!(),
        }
    }
    stages.push(serial("Saving result".into(), StageKind::Save, consts.result_save));
    Ok(stages)
}
