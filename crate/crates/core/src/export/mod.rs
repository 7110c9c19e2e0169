// SPDX-License-Identifier: MIT OR Apache-2.0

//! Circuit artifacts: Sankey documents (JSON and a static HTML page),
//! Graphviz DOT text, and activation-region boxes with PBM masks.

mod dot;
mod region;
mod sankey;

pub use dot::{to_dot, PEN_SCALE};
pub use region::{activation_region, mask_file_name, BitMask, RegionBox, RegionConfig};
pub use sankey::{to_sankey, SankeyDoc, SankeyLink, SankeyNode, EXEMPLAR_POOL};
