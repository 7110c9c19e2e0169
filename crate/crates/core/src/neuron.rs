// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;

use serde::{Deserialize, Serialize};

/// Address of a neuron: a channel (conv) or unit (dense) at a probe layer.
///
/// Ordering is `(probe_layer, channel)`, which every module relies on for
/// deterministic iteration and canonical output ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronRef {
    #[serde(rename = "layer")]
    pub probe_layer: usize,
    pub channel: usize,
}

impl NeuronRef {
    pub const fn new(probe_layer: usize, channel: usize) -> Self {
        Self {
            probe_layer,
            channel,
        }
    }
}

impl fmt::Display for NeuronRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:C{}", self.probe_layer, self.channel)
    }
}
