//! Masked group attention on gathered windows.
//!
//! Visible tokens of the windows in one group are laid out contiguously in
//! `g_s` slots (trailing slots padded), attention is computed over the whole
//! group and every score between tokens of different windows, or involving a
//! pad slot, is masked before the softmax. Relative position bias is looked up
//! from the stored absolute token positions, so windows from anywhere in the
//! grid can share a group. Scattering the outputs back restores the original
//! token order.
//!
//! [`reference_window_attention`] computes the same quantity window by window
//! with no grouping or masking and serves as the correctness oracle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grouping::GroupPlan;
use crate::masking::TokenVisibility;
use crate::windowing::{TokenPos, WindowLayout};

/// Window id carried by pad slots.
pub const PAD_WINDOW: usize = usize::MAX;

/// Visible tokens of one stage: an `L x C` row-major matrix plus the absolute
/// position and owning window of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenArray<T> {
    channels: usize,
    values: Vec<T>,
    positions: Vec<TokenPos>,
    window_ids: Vec<usize>,
}

impl<T: Float> TokenArray<T> {
    /// Wraps raw buffers. Positions must be unique.
    pub fn new(
        channels: usize,
        values: Vec<T>,
        positions: Vec<TokenPos>,
        window_ids: Vec<usize>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::ZeroDimension("channels"));
        }
        let len = positions.len();
        if window_ids.len() != len {
            return Err(Error::ShapeMismatch {
                what: "window ids",
                expected: len,
                got: window_ids.len(),
            });
        }
        if values.len() != len * channels {
            return Err(Error::ShapeMismatch {
                what: "token values",
                expected: len * channels,
                got: values.len(),
            });
        }
        let mut sorted = positions.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::PlanMismatch("duplicate token position".into()));
        }
        Ok(Self {
            channels,
            values,
            positions,
            window_ids,
        })
    }

    /// Visible tokens of `vis` in canonical order (window by window, row-major
    /// inside each window) with the given values.
    pub fn from_layout(
        layout: &WindowLayout,
        vis: &TokenVisibility,
        channels: usize,
        values: Vec<T>,
    ) -> Result<Self> {
        let per_window = layout.visible_tokens(vis)?;
        let mut positions = Vec::new();
        let mut window_ids = Vec::new();
        for (id, tokens) in per_window.into_iter().enumerate() {
            window_ids.extend(core::iter::repeat_n(id, tokens.len()));
            positions.extend(tokens);
        }
        Self::new(channels, values, positions, window_ids)
    }

    /// Number of tokens `L`.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// True when there are no tokens.
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Channel width `C`.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Row-major values.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Mutable row-major values.
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Row `i`.
    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    /// Absolute positions.
    pub fn positions(&self) -> &[TokenPos] {
        &self.positions
    }

    /// Owning window per token.
    pub fn window_ids(&self) -> &[usize] {
        &self.window_ids
    }
}

/// Tokens packed into `num_groups` groups of `group_size` slots.
///
/// `shuffle[s]` is the token index held by slot `s` (`None` for pad slots) and
/// `unshuffle[t]` is the slot holding token `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedTokens<T> {
    /// Slots per group.
    pub group_size: usize,
    /// Number of groups.
    pub num_groups: usize,
    /// Channel width.
    pub channels: usize,
    /// `num_groups * group_size` rows of `channels` values.
    pub values: Vec<T>,
    /// Absolute position per slot (origin for pad slots).
    pub positions: Vec<TokenPos>,
    /// Window per slot, [`PAD_WINDOW`] for pads.
    pub window_ids: Vec<usize>,
    /// Pad flag per slot.
    pub pad: Vec<bool>,
    /// Slot to token.
    pub shuffle: Vec<Option<usize>>,
    /// Token to slot.
    pub unshuffle: Vec<usize>,
}

impl<T: Float> GroupedTokens<T> {
    /// Total slots.
    pub fn slots(&self) -> usize {
        self.num_groups * self.group_size
    }

    /// Overwrites every pad slot with `value`.
    pub fn fill_padding(&mut self, value: T) {
        let c = self.channels;
        for (s, _) in self.pad.iter().enumerate().filter(|(_, p)| **p) {
            self.values[s * c..(s + 1) * c].fill(value);
        }
    }
}

/// Projection weights and relative position bias of one attention layer.
///
/// Projections act on row vectors (`y = x W`), each `C x C` row-major. Head `h`
/// uses channels `h * C/heads .. (h + 1) * C/heads` of Q, K and V. The bias
/// table holds `heads` blocks of `(2p - 1) x (2p - 1)` entries indexed by
/// `(drow + p - 1, dcol + p - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    channels: usize,
    heads: usize,
    window: usize,
    w_q: Vec<T>,
    w_k: Vec<T>,
    w_v: Vec<T>,
    w_o: Vec<T>,
    bias: Vec<T>,
}

impl<T: Float> AttentionParams<T> {
    /// Builds parameters from explicit buffers.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        channels: usize,
        heads: usize,
        window: usize,
        w_q: Vec<T>,
        w_k: Vec<T>,
        w_v: Vec<T>,
        w_o: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::ZeroDimension("channels"));
        }
        if heads == 0 {
            return Err(Error::ZeroDimension("heads"));
        }
        if window == 0 {
            return Err(Error::ZeroDimension("window"));
        }
        if !channels.is_multiple_of(heads) {
            return Err(Error::HeadMismatch { channels, heads });
        }
        let cc = channels * channels;
        for (what, m) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v), ("w_o", &w_o)] {
            if m.len() != cc {
                return Err(Error::ShapeMismatch {
                    what,
                    expected: cc,
                    got: m.len(),
                });
            }
        }
        let side = 2 * window - 1;
        if bias.len() != heads * side * side {
            return Err(Error::ShapeMismatch {
                what: "bias table",
                expected: heads * side * side,
                got: bias.len(),
            });
        }
        let params = Self {
            channels,
            heads,
            window,
            w_q,
            w_k,
            w_v,
            w_o,
            bias,
        };
        for buf in [
            &params.w_q,
            &params.w_k,
            &params.w_v,
            &params.w_o,
            &params.bias,
        ] {
            check_finite(buf, "attention parameters")?;
        }
        Ok(params)
    }

    /// Seeded random parameters: projections drawn from `N(0, 1/C)` and bias
    /// entries from `N(0, 1)`, all from one ChaCha8 stream.
    pub fn random(seed: u64, channels: usize, heads: usize, window: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / libm::sqrt(channels.max(1) as f64);
        let mut draw = |n: usize, scale: f64| -> Vec<T> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    cast(z * scale)
                })
                .collect()
        };
        let cc = channels * channels;
        let w_q = draw(cc, scale);
        let w_k = draw(cc, scale);
        let w_v = draw(cc, scale);
        let w_o = draw(cc, scale);
        let side = (2 * window).saturating_sub(1);
        let bias = draw(heads * side * side, 1.0);
        Self::new(channels, heads, window, w_q, w_k, w_v, w_o, bias)
    }

    /// Same projections with every bias entry set to zero.
    pub fn without_bias(mut self) -> Self {
        self.bias.fill(T::zero());
        self
    }

    /// Channel width.
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Head count.
    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Window side the bias table was built for.
    pub fn window(&self) -> usize {
        self.window
    }

    /// Per-head width.
    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Query projection.
    pub fn w_q(&self) -> &[T] {
        &self.w_q
    }

    /// Key projection.
    pub fn w_k(&self) -> &[T] {
        &self.w_k
    }

    /// Value projection.
    pub fn w_v(&self) -> &[T] {
        &self.w_v
    }

    /// Output projection.
    pub fn w_o(&self) -> &[T] {
        &self.w_o
    }

    /// Raw bias table.
    pub fn bias_table(&self) -> &[T] {
        &self.bias
    }

    /// Mutable bias table.
    pub fn bias_table_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }
}

fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("f64 converts to any Float")
}

fn check_finite<T: Float>(buf: &[T], what: &'static str) -> Result<()> {
    if buf.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Bias for query at `a` attending to key at `b` in head `head`:
/// `table[a.row - b.row + p - 1][a.col - b.col + p - 1]`.
pub fn relative_bias_lookup<T: Float>(
    params: &AttentionParams<T>,
    head: usize,
    a: TokenPos,
    b: TokenPos,
) -> Result<T> {
    let radius = params.window - 1;
    let drow = a.row as isize - b.row as isize;
    let dcol = a.col as isize - b.col as isize;
    if drow.unsigned_abs() > radius || dcol.unsigned_abs() > radius {
        return Err(Error::BiasOutOfRange { drow, dcol, radius });
    }
    let side = 2 * params.window - 1;
    let r = (drow + radius as isize) as usize;
    let c = (dcol + radius as isize) as usize;
    Ok(params.bias[head * side * side + r * side + c])
}

/// `rows x C` times `C x C`.
fn project<T: Float>(x: &[T], channels: usize, w: &[T]) -> Vec<T> {
    let rows = x.len() / channels;
    let mut out = vec![T::zero(); rows * channels];
    for r in 0..rows {
        let xr = &x[r * channels..(r + 1) * channels];
        let yr = &mut out[r * channels..(r + 1) * channels];
        for (k, &xv) in xr.iter().enumerate() {
            let wk = &w[k * channels..(k + 1) * channels];
            for (y, &wv) in yr.iter_mut().zip(wk) {
                *y = *y + xv * wv;
            }
        }
    }
    out
}

fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Softmax weights for one query row; `None` scores are masked. Returns all
/// zeros if every entry is masked.
fn softmax_masked<T: Float>(scores: &[Option<T>]) -> Vec<T> {
    let neg = T::min_value();
    let filled: Vec<T> = scores.iter().map(|s| s.unwrap_or(neg)).collect();
    if scores.iter().all(Option::is_none) {
        return vec![T::zero(); scores.len()];
    }
    let max = filled.iter().fold(neg, |m, &s| m.max(s));
    let exps: Vec<T> = filled.iter().map(|&s| (s - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |acc, &e| acc + e);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Attention probabilities of one group and head, `g_s x g_s` row-major.
/// Inter-window and pad entries are exactly zero; pad rows are all zero.
pub fn group_attention_probs<T: Float>(
    grouped: &GroupedTokens<T>,
    params: &AttentionParams<T>,
    group: usize,
    head: usize,
) -> Result<Vec<T>> {
    check_group_shapes(grouped, params)?;
    if group >= grouped.num_groups || head >= params.heads {
        return Err(Error::PlanMismatch(format!(
            "group {group} / head {head} out of range"
        )));
    }
    let gs = grouped.group_size;
    let base = group * gs;
    let x = &grouped.values[base * params.channels..(base + gs) * params.channels];
    let q = project(x, params.channels, &params.w_q);
    let k = project(x, params.channels, &params.w_k);
    let mut probs = Vec::with_capacity(gs * gs);
    for a in 0..gs {
        probs.extend(group_row_probs(grouped, params, &q, &k, base, a, head)?);
    }
    Ok(probs)
}

fn group_row_probs<T: Float>(
    grouped: &GroupedTokens<T>,
    params: &AttentionParams<T>,
    q: &[T],
    k: &[T],
    base: usize,
    a: usize,
    head: usize,
) -> Result<Vec<T>> {
    let gs = grouped.group_size;
    let c = params.channels;
    let d = params.head_dim();
    let scale = T::one() / cast::<T>(d as f64).sqrt();
    let hs = head * d;
    let sa = base + a;
    let mut scores = Vec::with_capacity(gs);
    for b in 0..gs {
        let sb = base + b;
        let same_window = !grouped.pad[sa]
            && !grouped.pad[sb]
            && grouped.window_ids[sa] == grouped.window_ids[sb];
        if !same_window {
            scores.push(None);
            continue;
        }
        let qa = &q[a * c + hs..a * c + hs + d];
        let kb = &k[b * c + hs..b * c + hs + d];
        let bias =
            relative_bias_lookup(params, head, grouped.positions[sa], grouped.positions[sb])?;
        scores.push(Some(dot(qa, kb) * scale + bias));
    }
    Ok(softmax_masked(&scores))
}

fn check_group_shapes<T: Float>(
    grouped: &GroupedTokens<T>,
    params: &AttentionParams<T>,
) -> Result<()> {
    if grouped.channels != params.channels {
        return Err(Error::ShapeMismatch {
            what: "channels",
            expected: params.channels,
            got: grouped.channels,
        });
    }
    let slots = grouped.slots();
    for (what, len) in [
        (
            "slot values",
            grouped.values.len() / grouped.channels.max(1),
        ),
        ("slot positions", grouped.positions.len()),
        ("slot window ids", grouped.window_ids.len()),
        ("pad flags", grouped.pad.len()),
    ] {
        if len != slots {
            return Err(Error::ShapeMismatch {
                what,
                expected: slots,
                got: len,
            });
        }
    }
    Ok(())
}

/// Attention over every group with the block-diagonal window mask. Pad-slot
/// outputs are zero.
pub fn masked_group_attention<T: Float>(
    grouped: &GroupedTokens<T>,
    params: &AttentionParams<T>,
) -> Result<GroupedTokens<T>> {
    check_group_shapes(grouped, params)?;
    check_finite(&grouped.values, "grouped token values")?;
    let c = params.channels;
    let d = params.head_dim();
    let gs = grouped.group_size;
    let mut out_values = vec![T::zero(); grouped.values.len()];

    for group in 0..grouped.num_groups {
        let base = group * gs;
        let x = &grouped.values[base * c..(base + gs) * c];
        let q = project(x, c, &params.w_q);
        let k = project(x, c, &params.w_k);
        let v = project(x, c, &params.w_v);
        let mut heads_out = vec![T::zero(); gs * c];
        for head in 0..params.heads {
            let hs = head * d;
            for a in 0..gs {
                if grouped.pad[base + a] {
                    continue;
                }
                let probs = group_row_probs(grouped, params, &q, &k, base, a, head)?;
                let row = &mut heads_out[a * c + hs..a * c + hs + d];
                for (b, &p) in probs.iter().enumerate() {
                    let vb = &v[b * c + hs..b * c + hs + d];
                    for (o, &vv) in row.iter_mut().zip(vb) {
                        *o = *o + p * vv;
                    }
                }
            }
        }
        let projected = project(&heads_out, c, &params.w_o);
        for a in 0..gs {
            if !grouped.pad[base + a] {
                out_values[(base + a) * c..(base + a + 1) * c]
                    .copy_from_slice(&projected[a * c..(a + 1) * c]);
            }
        }
    }

    Ok(GroupedTokens {
        values: out_values,
        ..grouped.clone()
    })
}

/// Packs tokens into groups following `plan`. Windows of a group are
/// concatenated in plan order, tokens of a window in row-major position order,
/// and trailing slots are zero-valued pads.
pub fn gather_groups<T: Float>(
    tokens: &TokenArray<T>,
    layout: &WindowLayout,
    plan: &GroupPlan,
) -> Result<GroupedTokens<T>> {
    let c = tokens.channels;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); layout.len()];
    for (t, &w) in tokens.window_ids.iter().enumerate() {
        buckets
            .get_mut(w)
            .ok_or_else(|| Error::PlanMismatch(format!("token {t} belongs to unknown window {w}")))?
            .push(t);
    }
    for bucket in &mut buckets {
        bucket.sort_by_key(|&t| tokens.positions[t]);
    }

    let mut seen = vec![false; layout.len()];
    for (j, group) in plan.groups.iter().enumerate() {
        let mut fill = 0;
        for &w in group {
            let slot = seen.get_mut(w).ok_or_else(|| {
                Error::PlanMismatch(format!("plan references unknown window {w}"))
            })?;
            if *slot {
                return Err(Error::PlanMismatch(format!(
                    "window {w} appears twice in the plan"
                )));
            }
            *slot = true;
            if buckets[w].is_empty() {
                return Err(Error::PlanMismatch(format!("window {w} has no tokens")));
            }
            fill += buckets[w].len();
        }
        if plan.fill.get(j) != Some(&fill) || fill > plan.group_size {
            return Err(Error::PlanMismatch(format!(
                "group {j} holds {fill} tokens, plan expects {:?} within {}",
                plan.fill.get(j),
                plan.group_size
            )));
        }
    }
    if let Some(w) = (0..layout.len()).find(|&w| !seen[w] && !buckets[w].is_empty()) {
        return Err(Error::PlanMismatch(format!(
            "window {w} has tokens but is not in the plan"
        )));
    }

    let gs = plan.group_size;
    let slots = gs * plan.num_groups();
    let mut grouped = GroupedTokens {
        group_size: gs,
        num_groups: plan.num_groups(),
        channels: c,
        values: vec![T::zero(); slots * c],
        positions: vec![TokenPos::new(0, 0); slots],
        window_ids: vec![PAD_WINDOW; slots],
        pad: vec![true; slots],
        shuffle: vec![None; slots],
        unshuffle: vec![0; tokens.len()],
    };
    for (j, group) in plan.groups.iter().enumerate() {
        let mut s = j * gs;
        for &w in group {
            for &t in &buckets[w] {
                grouped.values[s * c..(s + 1) * c].copy_from_slice(tokens.row(t));
                grouped.positions[s] = tokens.positions[t];
                grouped.window_ids[s] = w;
                grouped.pad[s] = false;
                grouped.shuffle[s] = Some(t);
                grouped.unshuffle[t] = s;
                s += 1;
            }
        }
    }
    Ok(grouped)
}

/// Restores the original token order from grouped slots.
pub fn scatter_groups<T: Float>(grouped: &GroupedTokens<T>) -> Result<TokenArray<T>> {
    let c = grouped.channels;
    let slots = grouped.slots();
    if grouped.shuffle.len() != slots
        || grouped.pad.len() != slots
        || grouped.values.len() != slots * c
    {
        return Err(Error::CorruptIndexMap(format!(
            "slot buffers do not match {slots} slots"
        )));
    }
    let real = grouped.pad.iter().filter(|p| !**p).count();
    if real != grouped.unshuffle.len() {
        return Err(Error::CorruptIndexMap(format!(
            "{real} occupied slots for {} tokens",
            grouped.unshuffle.len()
        )));
    }
    let mut values = Vec::with_capacity(real * c);
    let mut positions = Vec::with_capacity(real);
    let mut window_ids = Vec::with_capacity(real);
    for (t, &s) in grouped.unshuffle.iter().enumerate() {
        if s >= slots || grouped.pad[s] || grouped.shuffle[s] != Some(t) {
            return Err(Error::CorruptIndexMap(format!(
                "token {t} maps to slot {s}"
            )));
        }
        values.extend_from_slice(&grouped.values[s * c..(s + 1) * c]);
        positions.push(grouped.positions[s]);
        window_ids.push(grouped.window_ids[s]);
    }
    TokenArray::new(c, values, positions, window_ids)
}

/// Gather, masked group attention, scatter.
pub fn group_window_attention<T: Float>(
    tokens: &TokenArray<T>,
    layout: &WindowLayout,
    plan: &GroupPlan,
    params: &AttentionParams<T>,
) -> Result<TokenArray<T>> {
    let grouped = gather_groups(tokens, layout, plan)?;
    let attended = masked_group_attention(&grouped, params)?;
    scatter_groups(&attended)
}

/// Plain multi-head attention over the tokens of a single window.
fn dense_window<T: Float>(
    x: &[T],
    positions: &[TokenPos],
    params: &AttentionParams<T>,
) -> Result<Vec<T>> {
    let c = params.channels;
    let d = params.head_dim();
    let n = positions.len();
    let scale = T::one() / cast::<T>(d as f64).sqrt();
    let q = project(x, c, &params.w_q);
    let k = project(x, c, &params.w_k);
    let v = project(x, c, &params.w_v);
    let mut heads_out = vec![T::zero(); n * c];
    for head in 0..params.heads {
        let hs = head * d;
        for a in 0..n {
            let qa = &q[a * c + hs..a * c + hs + d];
            let mut scores = Vec::with_capacity(n);
            for b in 0..n {
                let kb = &k[b * c + hs..b * c + hs + d];
                let bias = relative_bias_lookup(params, head, positions[a], positions[b])?;
                scores.push(dot(qa, kb) * scale + bias);
            }
            let max = scores.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
            let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
            let sum = exps.iter().fold(T::zero(), |acc, &e| acc + e);
            let row = &mut heads_out[a * c + hs..a * c + hs + d];
            for (b, e) in exps.into_iter().enumerate() {
                let p = e / sum;
                let vb = &v[b * c + hs..b * c + hs + d];
                for (o, &vv) in row.iter_mut().zip(vb) {
                    *o = *o + p * vv;
                }
            }
        }
    }
    Ok(project(&heads_out, c, &params.w_o))
}

/// Window attention computed independently in every window of `layout`, over
/// that window's visible tokens only.
pub fn reference_window_attention<T: Float>(
    tokens: &TokenArray<T>,
    layout: &WindowLayout,
    params: &AttentionParams<T>,
) -> Result<TokenArray<T>> {
    if tokens.channels != params.channels {
        return Err(Error::ShapeMismatch {
            what: "channels",
            expected: params.channels,
            got: tokens.channels,
        });
    }
    check_finite(&tokens.values, "token values")?;
    let c = tokens.channels;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); layout.len()];
    for (t, &w) in tokens.window_ids.iter().enumerate() {
        members
            .get_mut(w)
            .ok_or_else(|| Error::PlanMismatch(format!("token {t} belongs to unknown window {w}")))?
            .push(t);
    }
    let mut out = tokens.clone();
    for idx in members.iter().filter(|m| !m.is_empty()) {
        let mut x = Vec::with_capacity(idx.len() * c);
        for &t in idx {
            x.extend_from_slice(tokens.row(t));
        }
        let positions: Vec<TokenPos> = idx.iter().map(|&t| tokens.positions[t]).collect();
        let y = dense_window(&x, &positions, params)?;
        for (r, &t) in idx.iter().enumerate() {
            out.values[t * c..(t + 1) * c].copy_from_slice(&y[r * c..(r + 1) * c]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::{optimal_grouping, partition};
    use crate::masking::{expand_to_tokens, gen_batch_mask};
    use crate::windowing::{partition_windows, visible_counts, StageGeometry, Window};

    /// Layout of single-row windows `[0, n)` laid out on a 1 x total grid.
    fn strip_layout(sizes: &[usize], window: usize) -> WindowLayout {
        let mut windows = Vec::new();
        let mut col = 0;
        for (id, &s) in sizes.iter().enumerate() {
            windows.push(Window {
                id,
                origin: TokenPos::new(0, col),
                height: 1,
                width: s,
            });
            col += s;
        }
        WindowLayout {
            tokens_h: 1,
            tokens_w: col,
            window,
            windows,
        }
    }

    fn normal_values(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn strip_tokens(sizes: &[usize], channels: usize, seed: u64) -> TokenArray<f64> {
        let layout = strip_layout(sizes, *sizes.iter().max().unwrap());
        let vis = TokenVisibility::all_visible(1, layout.tokens_w);
        let n: usize = sizes.iter().sum();
        TokenArray::from_layout(&layout, &vis, channels, normal_values(seed, n * channels)).unwrap()
    }

    #[test]
    fn gather_single_full_window_is_identity() {
        let tokens = strip_tokens(&[5], 4, 1);
        let layout = strip_layout(&[5], 5);
        let plan = partition(5, &[5]).unwrap();
        let g = gather_groups(&tokens, &layout, &plan).unwrap();
        assert_eq!(g.num_groups, 1);
        assert!(g.pad.iter().all(|p| !p));
        assert_eq!(g.unshuffle, vec![0, 1, 2, 3, 4]);
        assert_eq!(&g.values[..], tokens.values());
    }

    #[test]
    fn gather_two_windows_in_order() {
        let tokens = strip_tokens(&[3, 2], 2, 2);
        let layout = strip_layout(&[3, 2], 3);
        let plan = partition(5, &[3, 2]).unwrap();
        let g = gather_groups(&tokens, &layout, &plan).unwrap();
        assert_eq!(g.num_groups, 1);
        assert_eq!(g.window_ids, vec![0, 0, 0, 1, 1]);
        assert_eq!(g.shuffle, vec![Some(0), Some(1), Some(2), Some(3), Some(4)]);
    }

    #[test]
    fn gather_pads_and_round_trips() {
        let sizes = [7, 3, 5, 6, 3];
        let tokens = strip_tokens(&sizes, 3, 3);
        let layout = strip_layout(&sizes, 7);
        let plan = partition(13, &sizes).unwrap();
        let g = gather_groups(&tokens, &layout, &plan).unwrap();
        for (j, &fill) in plan.fill.iter().enumerate() {
            for s in 0..13 {
                assert_eq!(g.pad[j * 13 + s], s >= fill);
                if s >= fill {
                    assert_eq!(g.window_ids[j * 13 + s], PAD_WINDOW);
                }
            }
        }
        assert_eq!(scatter_groups(&g).unwrap(), tokens);
    }

    #[test]
    fn gather_rejects_mismatched_plan() {
        let tokens = strip_tokens(&[3, 2], 2, 2);
        let layout = strip_layout(&[3, 2], 3);
        let plan = partition(3, &[3, 3]).unwrap();
        assert!(matches!(
            gather_groups(&tokens, &layout, &plan),
            Err(Error::PlanMismatch(_))
        ));
        let missing = GroupPlan {
            group_size: 5,
            groups: vec![vec![0]],
            fill: vec![3],
            padding: vec![2],
        };
        assert!(matches!(
            gather_groups(&tokens, &layout, &missing),
            Err(Error::PlanMismatch(_))
        ));
    }

    #[test]
    fn scatter_detects_corruption() {
        let tokens = strip_tokens(&[3, 2], 2, 2);
        let layout = strip_layout(&[3, 2], 3);
        let plan = partition(4, &[3, 2]).unwrap();
        let mut g = gather_groups(&tokens, &layout, &plan).unwrap();
        g.unshuffle.swap(0, 1);
        assert!(matches!(scatter_groups(&g), Err(Error::CorruptIndexMap(_))));
        let mut g = gather_groups(&tokens, &layout, &plan).unwrap();
        g.unshuffle[0] = 3; // a pad slot
        assert!(matches!(scatter_groups(&g), Err(Error::CorruptIndexMap(_))));
    }

    #[test]
    fn bias_lookup_indexing() {
        let window = 3;
        let mut params = AttentionParams::<f64>::random(0, 4, 2, window).unwrap();
        for (i, b) in params.bias_table_mut().iter_mut().enumerate() {
            *b = i as f64;
        }
        let o = TokenPos::new(5, 5);
        // center of head 0 and head 1
        assert_eq!(relative_bias_lookup(&params, 0, o, o).unwrap(), 12.0);
        assert_eq!(relative_bias_lookup(&params, 1, o, o).unwrap(), 37.0);
        let a = TokenPos::new(6, 4);
        assert_eq!(
            relative_bias_lookup(&params, 0, a, o).unwrap(),
            (3 * 5 + 1) as f64
        );
        assert_eq!(
            relative_bias_lookup(&params, 0, o, a).unwrap(),
            (5 + 3) as f64
        );
        assert!(matches!(
            relative_bias_lookup(&params, 0, TokenPos::new(8, 5), o),
            Err(Error::BiasOutOfRange {
                drow: 3,
                dcol: 0,
                radius: 2
            })
        ));
    }

    #[test]
    fn single_token_passes_through_value_and_output() {
        let c = 4;
        let params = AttentionParams::<f64>::random(9, c, 2, 2).unwrap();
        let x = vec![0.3, -1.2, 0.7, 2.0];
        let tokens = TokenArray::new(c, x.clone(), vec![TokenPos::new(0, 0)], vec![0]).unwrap();
        let layout = strip_layout(&[1], 2);
        let y = reference_window_attention(&tokens, &layout, &params).unwrap();
        let expected = project(&project(&x, c, params.w_v()), c, params.w_o());
        for (a, b) in y.values().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_layout_gives_empty_output() {
        let params = AttentionParams::<f64>::random(0, 4, 1, 2).unwrap();
        let tokens = TokenArray::<f64>::new(4, vec![], vec![], vec![]).unwrap();
        let layout = WindowLayout {
            tokens_h: 0,
            tokens_w: 0,
            window: 2,
            windows: vec![],
        };
        assert!(reference_window_attention(&tokens, &layout, &params)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn rejects_non_finite() {
        let params = AttentionParams::<f64>::random(0, 2, 1, 2).unwrap();
        let tokens =
            TokenArray::new(2, vec![f64::NAN, 0.0], vec![TokenPos::new(0, 0)], vec![0]).unwrap();
        let layout = strip_layout(&[1], 2);
        assert_eq!(
            reference_window_attention(&tokens, &layout, &params),
            Err(Error::NonFinite("token values"))
        );
        let plan = partition(1, &[1]).unwrap();
        let g = gather_groups(&tokens, &layout, &plan).unwrap();
        assert!(matches!(
            masked_group_attention(&g, &params),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn param_validation() {
        assert_eq!(
            AttentionParams::<f64>::random(0, 6, 4, 2),
            Err(Error::HeadMismatch {
                channels: 6,
                heads: 4
            })
        );
    }

    fn stage_instance(
        seed: u64,
    ) -> (
        TokenArray<f64>,
        WindowLayout,
        GroupPlan,
        AttentionParams<f64>,
    ) {
        let geom = StageGeometry::new(14, 14, 7, 8, 2).with_shift(3, 3);
        let mask = gen_batch_mask(seed, 7, 7, 0.5).unwrap();
        let vis = expand_to_tokens(&mask, 2).unwrap();
        let layout = partition_windows(&geom).unwrap();
        let counts = visible_counts(&layout, &vis).unwrap();
        let (plan, _) = optimal_grouping(&counts.nonempty_sizes(), 8).unwrap();
        let plan = plan.remap(&counts.nonempty_ids()).unwrap();
        let n = counts.total();
        let tokens =
            TokenArray::from_layout(&layout, &vis, 8, normal_values(seed + 100, n * 8)).unwrap();
        let params = AttentionParams::random(seed + 200, 8, 4, 7).unwrap();
        (tokens, layout, plan, params)
    }

    #[test]
    fn grouped_matches_reference_exactly() {
        for seed in 0..4 {
            let (tokens, layout, plan, params) = stage_instance(seed);
            let grouped = group_window_attention(&tokens, &layout, &plan, &params).unwrap();
            let reference = reference_window_attention(&tokens, &layout, &params).unwrap();
            assert_eq!(grouped, reference);
        }
    }

    #[test]
    fn probability_rows_sum_to_one() {
        let (tokens, layout, plan, params) = stage_instance(7);
        let g = gather_groups(&tokens, &layout, &plan).unwrap();
        let gs = g.group_size;
        for group in 0..g.num_groups {
            let probs = group_attention_probs(&g, &params, group, 1).unwrap();
            for a in 0..gs {
                let row = &probs[a * gs..(a + 1) * gs];
                let s: f64 = row.iter().sum();
                if g.pad[group * gs + a] {
                    assert_eq!(s, 0.0);
                } else {
                    assert!((s - 1.0).abs() < 1e-12);
                    for (b, p) in row.iter().enumerate() {
                        if g.window_ids[group * gs + b] != g.window_ids[group * gs + a] {
                            assert_eq!(*p, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pad_values_do_not_matter() {
        let (tokens, layout, plan, params) = stage_instance(3);
        let g = gather_groups(&tokens, &layout, &plan).unwrap();
        assert!(g.pad.iter().any(|p| *p));
        let base = masked_group_attention(&g, &params).unwrap();
        let mut g2 = g.clone();
        g2.fill_padding(123.5);
        let other = masked_group_attention(&g2, &params).unwrap();
        for s in (0..g.slots()).filter(|&s| !g.pad[s]) {
            let c = g.channels;
            let a = &base.values[s * c..(s + 1) * c];
            let b = &other.values[s * c..(s + 1) * c];
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
