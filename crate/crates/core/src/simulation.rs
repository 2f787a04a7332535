//! Analytical experiments: cost-vs-group-size curves over random masks and
//! grouped-vs-dense attention FLOPs.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::grouping::{attention_cost, optimal_grouping};
use crate::masking::{expand_to_tokens, gen_batch_mask, Mask};
use crate::windowing::{partition_windows, visible_counts, StageGeometry, VisibleCounts};

/// One encoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageSpec {
    /// 1-based stage number.
    pub id: usize,
    /// Grid, window, channels and unit span.
    pub geometry: StageGeometry,
}

impl StageSpec {
    /// Mask-unit grid this stage expects.
    pub fn mask_units(&self) -> Result<(usize, usize)> {
        self.geometry
            .mask_units()
            .ok_or(Error::ZeroDimension("unit_span"))
    }

    fn counts(&self, mask: &Mask) -> Result<VisibleCounts> {
        let vis = expand_to_tokens(mask, self.geometry.unit_span)?;
        let layout = partition_windows(&self.geometry)?;
        visible_counts(&layout, &vis)
    }
}

/// A four-stage hierarchical encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageProfile {
    /// Stages in order.
    pub stages: Vec<StageSpec>,
}

impl Default for StageProfile {
    fn default() -> Self {
        Self::swin_base()
    }
}

impl StageProfile {
    /// 224x224 input with 4x4 patches: token grids 56, 28, 14, 7; window 7;
    /// a 32-pixel mask unit spans 8, 4, 2, 1 tokens; channels 128..1024.
    pub fn swin_base() -> Self {
        let stages = [(56, 8, 128), (28, 4, 256), (14, 2, 512), (7, 1, 1024)]
            .into_iter()
            .enumerate()
            .map(|(i, (side, span, channels))| StageSpec {
                id: i + 1,
                geometry: StageGeometry::new(side, side, 7, channels, span),
            })
            .collect();
        Self { stages }
    }

    /// Overrides the channel width of every stage.
    pub fn with_channels(mut self, channels: &[usize]) -> Self {
        for (stage, &c) in self.stages.iter_mut().zip(channels) {
            stage.geometry.channels = c;
        }
        self
    }

    /// Stage by 1-based id.
    pub fn stage(&self, id: usize) -> Result<&StageSpec> {
        self.stages
            .iter()
            .find(|s| s.id == id)
            .ok_or(Error::UnknownStage(id))
    }
}

/// Cost curve of a single random mask.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TrialOutcome {
    /// Every window was empty.
    Skipped,
    /// Costs for `first_group_size ..` in steps of one.
    Curve {
        /// Smallest swept group size (largest window).
        first_group_size: usize,
        /// Attention FLOPs per group size.
        costs: Vec<u64>,
        /// Cheapest group size (smallest among ties).
        argmin: usize,
    },
}

/// Runs the full group-size sweep for the mask drawn from `seed`.
pub fn run_trial(stage: &StageSpec, ratio: f64, seed: u64) -> Result<TrialOutcome> {
    let (uh, uw) = stage.mask_units()?;
    let mask = gen_batch_mask(seed, uh, uw, ratio)?;
    let sizes = stage.counts(&mask)?.nonempty_sizes();
    if sizes.is_empty() {
        return Ok(TrialOutcome::Skipped);
    }
    let (_, report) = optimal_grouping(&sizes, stage.geometry.channels)?;
    Ok(TrialOutcome::Curve {
        first_group_size: report.candidates[0].group_size,
        costs: report.candidates.iter().map(|c| c.flops).collect(),
        argmin: report.optimum.group_size,
    })
}

/// Mean and spread of the cost at one group size.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPoint {
    /// `g_s`.
    pub group_size: usize,
    /// Mean FLOPs over the trials that reach this size.
    pub mean: f64,
    /// Unbiased standard deviation (0 with a single trial).
    pub std: f64,
    /// Trials contributing.
    pub trials_valid: usize,
}

/// Aggregated cost curve of one stage.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepStats {
    /// Stage id.
    pub stage: usize,
    /// Channel width used.
    pub channels: usize,
    /// Trials requested.
    pub trials: usize,
    /// Trials skipped because every window was empty.
    pub skipped: usize,
    /// The stage has a single window, so grouping is unnecessary.
    pub single_window: bool,
    /// Curve, ascending group size.
    pub points: Vec<SweepPoint>,
    /// Per-trial cheapest group size, skipped trials omitted.
    pub argmins: Vec<usize>,
    /// Minimum of the mean curve over the group sizes every valid trial reaches.
    pub mean_argmin: Option<usize>,
}

/// Combines per-trial curves in trial order.
pub fn aggregate(stage: &StageSpec, outcomes: &[TrialOutcome]) -> Result<SweepStats> {
    if outcomes.is_empty() {
        return Err(Error::NoTrials);
    }
    let single_window = partition_windows(&stage.geometry)?.len() == 1;
    let curves: Vec<(usize, &[u64])> = outcomes
        .iter()
        .filter_map(|o| match o {
            TrialOutcome::Curve {
                first_group_size,
                costs,
                ..
            } => Some((*first_group_size, costs.as_slice())),
            TrialOutcome::Skipped => None,
        })
        .collect();
    let argmins = outcomes
        .iter()
        .filter_map(|o| match o {
            TrialOutcome::Curve { argmin, .. } => Some(*argmin),
            TrialOutcome::Skipped => None,
        })
        .collect();

    let mut points = Vec::new();
    if let (Some(lo), Some(hi)) = (
        curves.iter().map(|(f, _)| *f).min(),
        curves.iter().map(|(f, c)| f + c.len() - 1).max(),
    ) {
        let mut samples = Vec::with_capacity(curves.len());
        for g in lo..=hi {
            samples.clear();
            samples.extend(
                curves.iter().filter_map(|(f, c)| {
                    g.checked_sub(*f).and_then(|k| c.get(k)).map(|&x| x as f64)
                }),
            );
            if samples.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(&samples);
            points.push(SweepPoint {
                group_size: g,
                mean,
                std,
                trials_valid: samples.len(),
            });
        }
    }

    let full = curves.len();
    let mut best: Option<SweepPoint> = None;
    for p in points.iter().filter(|p| p.trials_valid == full) {
        if best.is_none_or(|b| p.mean < b.mean) {
            best = Some(*p);
        }
    }

    Ok(SweepStats {
        stage: stage.id,
        channels: stage.geometry.channels,
        trials: outcomes.len(),
        skipped: outcomes.len() - full,
        single_window,
        points,
        argmins,
        mean_argmin: best.map(|p| p.group_size),
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, Float::sqrt(ss / (n - 1.0)))
}

/// Per-trial seed: trial `t` uses `seed + t` (wrapping).
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add(trial as u64)
}

/// Sweeps `n_trials` random masks and aggregates the cost curves.
pub fn sweep_cost_curve(
    stage: &StageSpec,
    ratio: f64,
    n_trials: usize,
    seed: u64,
) -> Result<SweepStats> {
    if n_trials == 0 {
        return Err(Error::NoTrials);
    }
    let outcomes = (0..n_trials)
        .map(|t| run_trial(stage, ratio, trial_seed(seed, t)))
        .collect::<Result<Vec<_>>>()?;
    aggregate(stage, &outcomes)
}

/// Dense vs grouped attention FLOPs of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageFlops {
    /// Stage id.
    pub stage: usize,
    /// All windows.
    pub windows: usize,
    /// Windows with a visible token.
    pub nonempty_windows: usize,
    /// Visible tokens.
    pub visible_tokens: usize,
    /// Every window at `p * p` tokens.
    pub dense_flops: u64,
    /// Optimal grouped plan (0 if nothing is visible).
    pub grouped_flops: u64,
    /// Chosen group size.
    pub group_size: Option<usize>,
    /// Groups in the chosen plan.
    pub num_groups: usize,
    /// `grouped / dense`.
    pub ratio: f64,
}

/// Per-stage and total FLOPs comparison.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlopsReport {
    /// Mask ratio.
    pub ratio: f64,
    /// Mask seed.
    pub seed: u64,
    /// One entry per stage.
    pub stages: Vec<StageFlops>,
    /// Sum of dense FLOPs.
    pub total_dense: u64,
    /// Sum of grouped FLOPs.
    pub total_grouped: u64,
    /// `total_grouped / total_dense`.
    pub total_ratio: f64,
}

/// Compares dense window attention with the optimal grouped plan on every
/// stage, all stages sharing the mask drawn from `seed`.
pub fn flops_comparison(profile: &StageProfile, ratio: f64, seed: u64) -> Result<FlopsReport> {
    let mut stages = Vec::with_capacity(profile.stages.len());
    let mut masks: Vec<((usize, usize), Mask)> = vec![];
    for stage in &profile.stages {
        let units = stage.mask_units()?;
        let mask = match masks.iter().find(|(u, _)| *u == units) {
            Some((_, m)) => m.clone(),
            None => {
                let m = gen_batch_mask(seed, units.0, units.1, ratio)?;
                masks.push((units, m.clone()));
                m
            }
        };
        let counts = stage.counts(&mask)?;
        let geom = &stage.geometry;
        let dense = attention_cost(
            geom.window * geom.window,
            counts.counts.len(),
            geom.channels,
        )?;
        let sizes = counts.nonempty_sizes();
        let (grouped, group_size, num_groups) = if sizes.is_empty() {
            (0, None, 0)
        } else {
            let (plan, report) = optimal_grouping(&sizes, geom.channels)?;
            (
                report.optimum.flops,
                Some(plan.group_size),
                plan.num_groups(),
            )
        };
        stages.push(StageFlops {
            stage: stage.id,
            windows: counts.counts.len(),
            nonempty_windows: sizes.len(),
            visible_tokens: counts.total(),
            dense_flops: dense,
            grouped_flops: grouped,
            group_size,
            num_groups,
            ratio: grouped as f64 / dense as f64,
        });
    }
    let total_dense: u64 = stages.iter().map(|s| s.dense_flops).sum();
    let total_grouped: u64 = stages.iter().map(|s| s.grouped_flops).sum();
    Ok(FlopsReport {
        ratio,
        seed,
        stages,
        total_dense,
        total_grouped,
        total_ratio: total_grouped as f64 / total_dense as f64,
    })
}
