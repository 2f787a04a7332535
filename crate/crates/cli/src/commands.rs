//! Subcommand bodies. Each returns the document to print; file outputs are
//! written as a side effect.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gwa_core::attention::group_window_attention;
use gwa_core::simulation::{aggregate, run_trial, trial_seed};
use gwa_core::{
    expand_to_tokens, flops_comparison, gen_batch_mask, optimal_grouping, optimal_grouping_with,
    partition_windows, reference_window_attention, visible_counts, AttentionParams, Candidates,
    CostReport, FlopsReport, GroupPlan, Mask, StageGeometry, StageProfile, StageSpec, SweepPoint,
    TokenArray, TokenVisibility, VisibleCounts, WindowLayout,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{
    Format, GeometryFlags, GroupArgs, MaskArgs, MaskFlags, SimulateArgs, StageSelect, VerifyArgs,
    WindowsArgs,
};

/// Provenance block heading every JSON document.
#[derive(Debug, Serialize)]
pub struct Meta<'a, P: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub params: &'a P,
}

impl<'a, P: Serialize> Meta<'a, P> {
    pub fn new(command: &'static str, params: &'a P) -> Self {
        Meta {
            tool: "gwa",
            version: env!("CARGO_PKG_VERSION"),
            command,
            params,
        }
    }
}

/// Result of `verify`: the document plus whether the check passed.
pub struct Verdict {
    pub output: String,
    pub pass: bool,
}

pub fn to_json<T: Serialize>(doc: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(doc).context("serializing output")?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

// ---------------------------------------------------------------- mask

#[derive(Serialize)]
struct MaskSummary<'a> {
    units_h: usize,
    units_w: usize,
    ratio: f64,
    hidden: usize,
    visible_count: usize,
    visible: &'a [bool],
}

impl<'a> MaskSummary<'a> {
    fn of(mask: &'a Mask) -> Self {
        MaskSummary {
            units_h: mask.units_h(),
            units_w: mask.units_w(),
            ratio: mask.ratio(),
            hidden: mask.hidden_count(),
            visible_count: mask.visible_count(),
            visible: mask.visible(),
        }
    }
}

#[derive(Serialize)]
struct TokenSummary<'a> {
    tokens_h: usize,
    tokens_w: usize,
    unit_span: usize,
    visible_count: usize,
    visible: &'a [bool],
}

#[derive(Serialize)]
struct MaskDoc<'a> {
    meta: Meta<'a, MaskArgs>,
    mask: MaskSummary<'a>,
    tokens: TokenSummary<'a>,
}

pub fn mask(args: &MaskArgs) -> Result<String> {
    let mask = gen_batch_mask(args.mask.seed, args.units_h, args.units_w, args.mask.ratio)?;
    let vis = expand_to_tokens(&mask, args.unit_span)?;
    match args.format {
        Format::Ascii => Ok(ascii_grid(&vis)),
        Format::Json => {
            let doc = MaskDoc {
                meta: Meta::new("mask", args),
                mask: MaskSummary::of(&mask),
                tokens: TokenSummary {
                    tokens_h: vis.tokens_h(),
                    tokens_w: vis.tokens_w(),
                    unit_span: args.unit_span,
                    visible_count: vis.popcount(),
                    visible: vis.visible(),
                },
            };
            to_json(&doc)
        }
    }
}

fn ascii_grid(vis: &TokenVisibility) -> String {
    let mut s = String::with_capacity((vis.tokens_w() + 1) * vis.tokens_h());
    for row in 0..vis.tokens_h() {
        for col in 0..vis.tokens_w() {
            s.push(if vis.is_visible(row, col) { '#' } else { '.' });
        }
        s.push('\n');
    }
    s
}

// ---------------------------------------------------------------- windows

fn geometry(flags: &GeometryFlags) -> Result<StageGeometry> {
    // channels do not affect tiling or counting
    let geom = StageGeometry::new(
        flags.tokens_h,
        flags.tokens_w,
        flags.window,
        1,
        flags.unit_span,
    )
    .with_shift(flags.shift.0, flags.shift.1);
    geom.validate()?;
    Ok(geom)
}

/// Tiles the grid and counts visible tokens under the drawn mask.
fn masked_layout(geom: &StageGeometry, flags: &MaskFlags) -> Result<Masked> {
    let Some((uh, uw)) = geom.mask_units() else {
        bail!(
            "token grid {}x{} is not a whole number of {}-token mask units",
            geom.tokens_h,
            geom.tokens_w,
            geom.unit_span
        );
    };
    let mask = gen_batch_mask(flags.seed, uh, uw, flags.ratio)?;
    let vis = expand_to_tokens(&mask, geom.unit_span)?;
    let layout = partition_windows(geom)?;
    let counts = visible_counts(&layout, &vis)?;
    Ok(Masked {
        mask,
        vis,
        layout,
        counts,
    })
}

struct Masked {
    mask: Mask,
    vis: TokenVisibility,
    layout: WindowLayout,
    counts: VisibleCounts,
}

#[derive(Serialize)]
struct WindowEntry {
    id: usize,
    origin: [usize; 2],
    height: usize,
    width: usize,
    visible: usize,
}

#[derive(Serialize)]
struct MaskBrief {
    units_h: usize,
    units_w: usize,
    hidden: usize,
    visible_count: usize,
}

#[derive(Serialize)]
struct WindowsDoc<'a> {
    meta: Meta<'a, WindowsArgs>,
    mask: MaskBrief,
    windows: Vec<WindowEntry>,
    total_visible: usize,
    nonempty_windows: usize,
}

pub fn windows(args: &WindowsArgs) -> Result<String> {
    let geom = geometry(&args.geometry)?;
    let Masked {
        mask,
        layout,
        counts,
        ..
    } = masked_layout(&geom, &args.mask)?;
    let windows = layout
        .windows
        .iter()
        .map(|w| WindowEntry {
            id: w.id,
            origin: [w.origin.row, w.origin.col],
            height: w.height,
            width: w.width,
            visible: counts.counts[w.id],
        })
        .collect();
    let doc = WindowsDoc {
        meta: Meta::new("windows", args),
        mask: MaskBrief {
            units_h: mask.units_h(),
            units_w: mask.units_w(),
            hidden: mask.hidden_count(),
            visible_count: mask.visible_count(),
        },
        windows,
        total_visible: counts.total(),
        nonempty_windows: counts.nonempty_ids().len(),
    };
    to_json(&doc)
}

// ---------------------------------------------------------------- group

#[derive(Serialize)]
struct GroupDoc<'a> {
    meta: Meta<'a, GroupArgs>,
    source: &'static str,
    sizes: Vec<usize>,
    window_ids: Vec<usize>,
    plan: GroupPlan,
    report: CostReport,
}

pub fn group(args: &GroupArgs) -> Result<String> {
    let (source, sizes, window_ids) = match &args.sizes {
        Some(sizes) => ("sizes", sizes.clone(), (0..sizes.len()).collect::<Vec<_>>()),
        None => {
            let geom = geometry(&args.geometry)?;
            let counts = masked_layout(&geom, &args.mask)?.counts;
            ("mask", counts.nonempty_sizes(), counts.nonempty_ids())
        }
    };
    if sizes.is_empty() {
        bail!("every window is empty; nothing to group");
    }
    let candidates = match (&args.gs, &args.candidates) {
        (Some(gs), _) => Candidates::List(vec![*gs]),
        (None, Some(list)) => Candidates::List(list.clone()),
        (None, None) => Candidates::Full,
    };
    let (plan, report) = optimal_grouping_with(&sizes, args.channels, &candidates)?;
    let plan = plan.remap(&window_ids)?;

    if let Some(path) = &args.csv {
        let mut w = csv_writer(path)?;
        w.write_record(["g_s", "n_g", "flops"])
            .with_context(|| format!("cannot write {}", path.display()))?;
        for c in &report.candidates {
            w.serialize((c.group_size, c.num_groups, c.flops))
                .with_context(|| format!("cannot write {}", path.display()))?;
        }
        w.flush()
            .with_context(|| format!("cannot write {}", path.display()))?;
    }

    let doc = GroupDoc {
        meta: Meta::new("group", args),
        source,
        sizes,
        window_ids,
        plan,
        report,
    };
    to_json(&doc)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))
}

// ---------------------------------------------------------------- verify

#[derive(Serialize)]
struct VerifyDoc<'a> {
    meta: Meta<'a, VerifyArgs>,
    windows: usize,
    nonempty_windows: usize,
    visible_tokens: usize,
    group_size: Option<usize>,
    num_groups: usize,
    max_abs_error: f64,
    max_relative_error: f64,
    tolerance: f64,
    pass: bool,
}

/// Builds the seeded instance for `verify`. The mask uses `seed`; token
/// values are standard normal draws from a ChaCha8 stream seeded with `seed`;
/// the attention weights use `seed + 1`.
fn verify_instance(
    args: &VerifyArgs,
) -> Result<(
    TokenArray<f64>,
    WindowLayout,
    VisibleCounts,
    AttentionParams<f64>,
)> {
    let profile = StageProfile::swin_base().with_channels(&[args.channels; 4]);
    let stage = profile.stage(args.stage as usize)?;
    let geom = stage.geometry.with_shift(args.shift.0, args.shift.1);
    geom.validate()?;
    let Masked {
        vis,
        layout,
        counts,
        ..
    } = masked_layout(&geom, &args.mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.mask.seed);
    let values = (0..counts.total() * args.channels)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let tokens = TokenArray::from_layout(&layout, &vis, args.channels, values)?;
    let params = AttentionParams::random(
        args.mask.seed.wrapping_add(1),
        args.channels,
        args.heads,
        geom.window,
    )?;
    Ok((tokens, layout, counts, params))
}

pub fn verify(args: &VerifyArgs) -> Result<Verdict> {
    if args.tolerance.is_nan() || args.tolerance < 0.0 {
        bail!(
            "tolerance `{}` must be a non-negative number",
            args.tolerance
        );
    }
    let (tokens, layout, counts, params) = verify_instance(args)?;
    let sizes = counts.nonempty_sizes();
    let (group_size, num_groups, max_abs, max_rel) = if sizes.is_empty() {
        (None, 0, 0.0, 0.0)
    } else {
        let (plan, _) = optimal_grouping(&sizes, args.channels)?;
        let plan = plan.remap(&counts.nonempty_ids())?;
        let grouped = group_window_attention(&tokens, &layout, &plan, &params)?;
        let reference = reference_window_attention(&tokens, &layout, &params)?;
        if grouped.positions() != reference.positions() {
            bail!("grouped and reference outputs list tokens in different orders");
        }
        let (abs, rel) = relative_error(grouped.values(), reference.values());
        (Some(plan.group_size), plan.num_groups(), abs, rel)
    };
    let pass = max_rel <= args.tolerance;
    let doc = VerifyDoc {
        meta: Meta::new("verify", args),
        windows: layout.len(),
        nonempty_windows: sizes.len(),
        visible_tokens: counts.total(),
        group_size,
        num_groups,
        max_abs_error: max_abs,
        max_relative_error: max_rel,
        tolerance: args.tolerance,
        pass,
    };
    Ok(Verdict {
        output: to_json(&doc)?,
        pass,
    })
}

/// Largest absolute difference, and that difference over the largest
/// reference magnitude.
fn relative_error(got: &[f64], want: &[f64]) -> (f64, f64) {
    let abs = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rel = if scale > 0.0 { abs / scale } else { abs };
    (abs, rel)
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize)]
struct StageSummary {
    stage: usize,
    tokens_h: usize,
    tokens_w: usize,
    window: usize,
    channels: usize,
    trials: usize,
    skipped: usize,
    single_window: bool,
    note: Option<&'static str>,
    mean_argmin: Option<usize>,
    argmins: Vec<usize>,
    csv: Option<PathBuf>,
    points: Vec<SweepPoint>,
}

#[derive(Serialize)]
struct SimulateDoc<'a> {
    meta: Meta<'a, SimulateArgs>,
    stages: Vec<StageSummary>,
    flops: FlopsReport,
}

const SINGLE_WINDOW_NOTE: &str = "the stage is a single window, so grouping is not necessary";

pub fn simulate(args: &SimulateArgs) -> Result<String> {
    let mut profile = StageProfile::swin_base();
    if let Some(c) = args.channels {
        profile = profile.with_channels(&[c; 4]);
    }
    let selected: Vec<&StageSpec> = match args.stage {
        StageSelect::All => profile.stages.iter().collect(),
        StageSelect::One(n) => vec![profile.stage(n as usize)?],
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .context("cannot start the worker pool")?;

    let mut stages = Vec::with_capacity(selected.len());
    for stage in selected {
        // collect keeps trial order, so aggregation is thread-count independent
        let outcomes = pool.install(|| {
            (0..args.trials)
                .into_par_iter()
                .map(|t| run_trial(stage, args.ratio, trial_seed(args.seed, t)))
                .collect::<gwa_core::Result<Vec<_>>>()
        })?;
        let stats = aggregate(stage, &outcomes)?;
        let csv = match &args.out {
            Some(path) => {
                let path = match args.stage {
                    StageSelect::All => stage_path(path, stage.id),
                    StageSelect::One(_) => path.clone(),
                };
                write_curve(&path, &stats.points)?;
                Some(path)
            }
            None => None,
        };
        let g = &stage.geometry;
        stages.push(StageSummary {
            stage: stage.id,
            tokens_h: g.tokens_h,
            tokens_w: g.tokens_w,
            window: g.window,
            channels: stats.channels,
            trials: stats.trials,
            skipped: stats.skipped,
            single_window: stats.single_window,
            note: stats.single_window.then_some(SINGLE_WINDOW_NOTE),
            mean_argmin: stats.mean_argmin,
            argmins: stats.argmins,
            csv,
            points: stats.points,
        });
    }
    let flops = flops_comparison(&profile, args.ratio, args.seed)?;
    let doc = SimulateDoc {
        meta: Meta::new("simulate", args),
        stages,
        flops,
    };
    let json = to_json(&doc)?;
    match &args.json {
        Some(path) => {
            write_file(path, &json)?;
            Ok(String::new())
        }
        None => Ok(json),
    }
}

/// `curve.csv` -> `curve_stage2.csv`.
fn stage_path(path: &Path, stage: usize) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_stage{stage}.{}", ext.to_string_lossy()),
        None => format!("{stem}_stage{stage}"),
    };
    path.with_file_name(name)
}

fn write_curve(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let ctx = || format!("cannot write {}", path.display());
    let mut w = csv_writer(path)?;
    w.write_record(["g_s", "mean_flops", "std_flops", "trials_valid"])
        .with_context(ctx)?;
    for p in points {
        w.serialize((p.group_size, p.mean, p.std, p.trials_valid))
            .with_context(ctx)?;
    }
    w.flush().with_context(ctx)?;
    Ok(())
}

/// Writes `text` to stdout.
pub fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .context("cannot write to stdout")?;
    out.flush().context("cannot write to stdout")
}
