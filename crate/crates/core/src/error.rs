//! Error type shared by every stage of the pipeline.

use alloc::string::String;

/// Convenience alias.
pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Everything that can go wrong while building masks, layouts, plans or
/// running attention.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    /// Mask ratio outside `[0, 1)` (or not a number).
    #[error("mask ratio must lie in [0, 1), got {0}")]
    InvalidRatio(String),

    /// A dimension, span, window size or channel count that must be positive was zero.
    #[error("{0} must be at least 1")]
    ZeroDimension(&'static str),

    /// Unshifted grid that the window size does not divide.
    #[error("token grid {tokens_h}x{tokens_w} is not divisible by window size {window}")]
    IndivisibleGrid {
        /// Grid rows.
        tokens_h: usize,
        /// Grid columns.
        tokens_w: usize,
        /// Window side.
        window: usize,
    },

    /// Shift component not in `[0, window)`.
    #[error("shift ({dy}, {dx}) must satisfy 0 <= shift < window size {window}")]
    InvalidShift {
        /// Row shift.
        dy: usize,
        /// Column shift.
        dx: usize,
        /// Window side.
        window: usize,
    },

    /// Two grids that must agree in shape do not.
    #[error("dimension mismatch: expected {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    DimensionMismatch {
        /// Expected rows.
        expected_h: usize,
        /// Expected columns.
        expected_w: usize,
        /// Actual rows.
        got_h: usize,
        /// Actual columns.
        got_w: usize,
    },

    /// Grouping was asked to work on an empty window list.
    #[error("window size list is empty")]
    EmptySizes,

    /// A window with no visible tokens reached the grouping stage.
    #[error("window {0} has zero visible tokens; drop empty windows before grouping")]
    ZeroSize(usize),

    /// Group size smaller than the largest window, so some window can never be placed.
    #[error("group size {group_size} is smaller than the largest window ({max_size})")]
    CapacityBelowMax {
        /// Requested group size.
        group_size: usize,
        /// Largest window.
        max_size: usize,
    },

    /// No candidate group size survived filtering.
    #[error("no candidate group size is feasible (all below {0})")]
    NoFeasibleCandidate(usize),

    /// Cost arithmetic exceeded `u64`.
    #[error("FLOPs count overflows u64")]
    Overflow,

    /// A matrix or table has the wrong number of elements.
    #[error("{what}: expected {expected} elements, got {got}")]
    ShapeMismatch {
        /// Which buffer.
        what: &'static str,
        /// Expected length.
        expected: usize,
        /// Actual length.
        got: usize,
    },

    /// Channel count not divisible by the head count.
    #[error("channels ({channels}) not divisible by heads ({heads})")]
    HeadMismatch {
        /// Channel width.
        channels: usize,
        /// Number of heads.
        heads: usize,
    },

    /// NaN or infinity in attention inputs.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Plan does not match the tokens/layout it is applied to.
    #[error("plan does not match tokens: {0}")]
    PlanMismatch(String),

    /// Group index maps are inconsistent.
    #[error("corrupted group index map: {0}")]
    CorruptIndexMap(String),

    /// A relative offset inside one window exceeded the bias table.
    #[error("relative offset ({drow}, {dcol}) exceeds bias table radius {radius}")]
    BiasOutOfRange {
        /// Row offset.
        drow: isize,
        /// Column offset.
        dcol: isize,
        /// `window - 1`.
        radius: usize,
    },

    /// Stage id outside the profile.
    #[error("unknown stage {0}")]
    UnknownStage(usize),

    /// Simulation needs at least one trial.
    #[error("number of trials must be at least 1")]
    NoTrials,
}
