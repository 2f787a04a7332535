#![no_std]
#![warn(missing_docs)]

//! Group window attention scheduling for masked hierarchical vision transformers.
//!
//! Masked image modeling hides most of the input, so after masking the local
//! attention windows of a hierarchical backbone hold uneven numbers of visible
//! tokens. This crate packs those uneven windows into equal-sized groups and runs
//! attention on the groups with a block-diagonal mask, which is exactly
//! equivalent to attending inside each window independently.
//!
//! The pipeline, bottom-up:
//!
//! - [`masking`]: one seeded random mask per batch at mask-unit resolution,
//!   projected to token resolution per stage.
//! - [`windowing`]: (optionally shifted) window tilings and per-window visible
//!   counts.
//! - [`grouping`]: subset-sum knapsack, repeated-knapsack partition, the FLOPs
//!   cost model and the group-size sweep that picks the cheapest plan.
//! - [`attention`]: gather, masked group attention with relative position bias,
//!   scatter, and the per-window reference used as an oracle.
//! - [`simulation`]: cost-vs-group-size curves over many random masks and
//!   grouped-vs-dense FLOPs comparisons.
//!
//! The crate is `no_std` and only needs `alloc`. Enable the `serde` feature to
//! derive `Serialize`/`Deserialize` on the report types.

extern crate alloc;

pub mod attention;
pub mod error;
pub mod grouping;
pub mod masking;
pub mod simulation;
pub mod windowing;

pub use crate::attention::{
    gather_groups, masked_group_attention, reference_window_attention, relative_bias_lookup,
    scatter_groups, AttentionParams, GroupedTokens, TokenArray, PAD_WINDOW,
};
pub use crate::error::{Error, Result};
pub use crate::grouping::{
    attention_cost, knapsack, optimal_grouping, optimal_grouping_with, partition, Candidate,
    Candidates, CostReport, GroupPlan,
};
pub use crate::masking::{expand_to_tokens, gen_batch_mask, Mask, TokenVisibility};
pub use crate::simulation::{
    flops_comparison, sweep_cost_curve, FlopsReport, StageFlops, StageProfile, StageSpec,
    SweepPoint, SweepStats, TrialOutcome,
};
pub use crate::windowing::{
    partition_windows, visible_counts, StageGeometry, TokenPos, VisibleCounts, Window, WindowLayout,
};
