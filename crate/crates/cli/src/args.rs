//! Command-line surface. Every argument struct is also serialized into the
//! `meta.params` block of the output, so defaults are echoed verbatim.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Group window attention scheduling: masks, windows, grouping, verification
/// and cost simulation.
#[derive(Debug, Parser)]
#[command(name = "gwa", version, about, propagate_version = true)]
pub struct Cli {
    /// Print a JSON description of every subcommand and flag, then exit.
    #[arg(long, global = true)]
    pub help_json: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a batch-wise random mask.
    Mask(MaskArgs),
    /// Tile a token grid into windows and count visible tokens per window.
    Windows(WindowsArgs),
    /// Find the cheapest group size and the resulting window groups.
    Group(GroupArgs),
    /// Check grouped attention against independent per-window attention.
    Verify(VerifyArgs),
    /// Sweep group sizes over many random masks and report the cost curve.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Ascii,
}

/// Mask drawing flags shared by several subcommands.
#[derive(Debug, Clone, Args, Serialize)]
pub struct MaskFlags {
    /// RNG seed for the mask.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of mask units hidden, in [0, 1).
    #[arg(long, default_value_t = 0.75, value_parser = parse_ratio)]
    pub ratio: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MaskArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub mask: MaskFlags,
    /// Mask grid height in units.
    #[arg(long, default_value_t = 7, value_parser = parse_positive)]
    pub units_h: usize,
    /// Mask grid width in units.
    #[arg(long, default_value_t = 7, value_parser = parse_positive)]
    pub units_w: usize,
    /// Tokens per mask unit along each axis.
    #[arg(long, default_value_t = 1, value_parser = parse_positive)]
    pub unit_span: usize,
    /// Output format; `ascii` prints a token-level grid (`#` visible, `.` hidden).
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

/// Token grid and window tiling flags.
#[derive(Debug, Clone, Args, Serialize)]
pub struct GeometryFlags {
    /// Token grid height.
    #[arg(long, default_value_t = 56, value_parser = parse_positive)]
    pub tokens_h: usize,
    /// Token grid width.
    #[arg(long, default_value_t = 56, value_parser = parse_positive)]
    pub tokens_w: usize,
    /// Window side length in tokens.
    #[arg(long, default_value_t = 7, value_parser = parse_positive)]
    pub window: usize,
    /// Window grid offset as `dy,dx`, each below the window size.
    #[arg(long, default_value = "0,0", value_parser = parse_shift)]
    pub shift: Shift,
    /// Tokens per mask unit along each axis.
    #[arg(long, default_value_t = 8, value_parser = parse_positive)]
    pub unit_span: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WindowsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub geometry: GeometryFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub mask: MaskFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GroupArgs {
    /// Visible-token count of each window, comma separated. Without it the
    /// sizes are derived from the geometry and mask flags.
    #[arg(long, value_delimiter = ',', value_parser = parse_positive,
          conflicts_with_all = ["tokens_h", "tokens_w", "window", "shift", "unit_span", "seed", "ratio"])]
    pub sizes: Option<Vec<usize>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub geometry: GeometryFlags,
    #[command(flatten)]
    #[serde(flatten)]
    pub mask: MaskFlags,
    /// Channel width used by the cost model.
    #[arg(long, default_value_t = 128, value_parser = parse_positive)]
    pub channels: usize,
    /// Evaluate only this group size.
    #[arg(long, value_parser = parse_positive, conflicts_with = "candidates")]
    pub gs: Option<usize>,
    /// Evaluate only these group sizes, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_positive)]
    pub candidates: Option<Vec<usize>>,
    /// Write every evaluated `g_s,n_g,flops` row to this CSV file.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    /// Stage geometry to test (1-4).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub stage: u8,
    #[command(flatten)]
    #[serde(flatten)]
    pub mask: MaskFlags,
    /// Window grid offset as `dy,dx`.
    #[arg(long, default_value = "0,0", value_parser = parse_shift)]
    pub shift: Shift,
    /// Attention heads.
    #[arg(long, default_value_t = 4, value_parser = parse_positive)]
    pub heads: usize,
    /// Channel width of the random instance.
    #[arg(long, default_value_t = 32, value_parser = parse_positive)]
    pub channels: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
}

/// `--stage` of `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageSelect {
    One(u8),
    All,
}

impl Serialize for StageSelect {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            StageSelect::One(n) => s.serialize_u8(*n),
            StageSelect::All => s.serialize_str("all"),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Stage to simulate: 1, 2, 3, 4 or `all`.
    #[arg(long, default_value = "all", value_parser = parse_stage)]
    pub stage: StageSelect,
    /// Fraction of mask units hidden, in [0, 1).
    #[arg(long, default_value_t = 0.75, value_parser = parse_ratio)]
    pub ratio: f64,
    /// Number of random masks per stage.
    #[arg(long, default_value_t = 100, value_parser = parse_positive)]
    pub trials: usize,
    /// Base seed; trial `t` uses `seed + t`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override every stage's channel width.
    #[arg(long, value_parser = parse_positive)]
    pub channels: Option<usize>,
    /// Cost-curve CSV path. With `--stage all` each stage gets its own file
    /// with `_stage<N>` inserted before the extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the JSON summary here instead of stdout.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Worker threads for the trials; results do not depend on it.
    #[arg(long, default_value_t = 1, value_parser = parse_positive)]
    pub threads: usize,
}

/// A `(dy, dx)` window offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Shift(pub usize, pub usize);

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err(format!("`{s}` must be at least 1")),
        Ok(v) => Ok(v),
        Err(e) => Err(format!("`{s}` is not a positive integer: {e}")),
    }
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let r: f64 = s
        .trim()
        .parse()
        .map_err(|e| format!("`{s}` is not a number: {e}"))?;
    if (0.0..1.0).contains(&r) {
        Ok(r)
    } else {
        Err(format!("`{s}` is outside [0, 1)"))
    }
}

fn parse_shift(s: &str) -> Result<Shift, String> {
    let (dy, dx) = s
        .split_once(',')
        .ok_or_else(|| format!("`{s}` is not of the form dy,dx"))?;
    let part = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("`{v}` in `{s}` is not an offset: {e}"))
    };
    Ok(Shift(part(dy)?, part(dx)?))
}

fn parse_stage(s: &str) -> Result<StageSelect, String> {
    match s.trim() {
        "all" => Ok(StageSelect::All),
        v => match v.parse::<u8>() {
            Ok(n @ 1..=4) => Ok(StageSelect::One(n)),
            _ => Err(format!("`{s}` is not one of 1, 2, 3, 4, all")),
        },
    }
}
