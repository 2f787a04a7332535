//! Window tilings of a stage's token grid.
//!
//! Unshifted tilings are the regular `p x p` partition. A nonzero shift `(dy, dx)`
//! moves the window boundaries to rows `dy + k*p` and columns `dx + k*p`, which
//! leaves irregular (smaller) windows along the borders. No cyclic shift is
//! applied: grouping handles windows of any size, so the border windows are kept
//! as they are.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::masking::TokenVisibility;

/// Absolute token coordinate inside a stage grid. Orders row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenPos {
    /// Row.
    pub row: usize,
    /// Column.
    pub col: usize,
}

impl TokenPos {
    /// Shorthand constructor.
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Geometry of one encoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageGeometry {
    /// Token grid rows.
    pub tokens_h: usize,
    /// Token grid columns.
    pub tokens_w: usize,
    /// Window side `p`, in tokens.
    pub window: usize,
    /// Window offset `(dy, dx)` in tokens.
    pub shift: (usize, usize),
    /// Attention channel width `C`.
    pub channels: usize,
    /// Tokens per mask unit along each axis.
    pub unit_span: usize,
}

impl StageGeometry {
    /// Unshifted geometry.
    pub fn new(
        tokens_h: usize,
        tokens_w: usize,
        window: usize,
        channels: usize,
        unit_span: usize,
    ) -> Self {
        Self {
            tokens_h,
            tokens_w,
            window,
            shift: (0, 0),
            channels,
            unit_span,
        }
    }

    /// Same geometry with a different shift.
    pub fn with_shift(mut self, dy: usize, dx: usize) -> Self {
        self.shift = (dy, dx);
        self
    }

    /// Checks the geometry invariants.
    pub fn validate(&self) -> Result<()> {
        if self.tokens_h == 0 {
            return Err(Error::ZeroDimension("tokens_h"));
        }
        if self.tokens_w == 0 {
            return Err(Error::ZeroDimension("tokens_w"));
        }
        if self.window == 0 {
            return Err(Error::ZeroDimension("window"));
        }
        if self.channels == 0 {
            return Err(Error::ZeroDimension("channels"));
        }
        if self.unit_span == 0 {
            return Err(Error::ZeroDimension("unit_span"));
        }
        let (dy, dx) = self.shift;
        if dy >= self.window || dx >= self.window {
            return Err(Error::InvalidShift {
                dy,
                dx,
                window: self.window,
            });
        }
        if self.shift == (0, 0)
            && (!self.tokens_h.is_multiple_of(self.window)
                || !self.tokens_w.is_multiple_of(self.window))
        {
            return Err(Error::IndivisibleGrid {
                tokens_h: self.tokens_h,
                tokens_w: self.tokens_w,
                window: self.window,
            });
        }
        Ok(())
    }

    /// Mask-unit grid that expands onto this stage, if the span divides the grid.
    pub fn mask_units(&self) -> Option<(usize, usize)> {
        if self.unit_span == 0
            || !self.tokens_h.is_multiple_of(self.unit_span)
            || !self.tokens_w.is_multiple_of(self.unit_span)
        {
            return None;
        }
        Some((
            self.tokens_h / self.unit_span,
            self.tokens_w / self.unit_span,
        ))
    }
}

/// One (possibly irregular) window: a rectangle of the token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Window {
    /// Index in row-major window order.
    pub id: usize,
    /// Top-left token.
    pub origin: TokenPos,
    /// Rows covered.
    pub height: usize,
    /// Columns covered.
    pub width: usize,
}

impl Window {
    /// Number of tokens (visible or not).
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    /// Always false for windows produced by [`partition_windows`].
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether `pos` lies inside this window.
    pub fn contains(&self, pos: TokenPos) -> bool {
        pos.row >= self.origin.row
            && pos.row < self.origin.row + self.height
            && pos.col >= self.origin.col
            && pos.col < self.origin.col + self.width
    }

    /// Absolute token coordinates, row-major.
    pub fn tokens(&self) -> impl Iterator<Item = TokenPos> + '_ {
        let (r0, c0) = (self.origin.row, self.origin.col);
        (r0..r0 + self.height)
            .flat_map(move |r| (c0..c0 + self.width).map(move |c| TokenPos::new(r, c)))
    }
}

/// Window tiling of one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindowLayout {
    /// Token grid rows.
    pub tokens_h: usize,
    /// Token grid columns.
    pub tokens_w: usize,
    /// Nominal window side `p`.
    pub window: usize,
    /// Windows in row-major order of their origins.
    pub windows: Vec<Window>,
}

impl WindowLayout {
    /// Number of windows.
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    /// True when the layout has no windows.
    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Window owning `pos`.
    pub fn window_of(&self, pos: TokenPos) -> Option<usize> {
        self.windows.iter().position(|w| w.contains(pos))
    }

    /// Visible token coordinates per window, canonical order.
    pub fn visible_tokens(&self, vis: &TokenVisibility) -> Result<Vec<Vec<TokenPos>>> {
        self.check_dims(vis)?;
        Ok(self
            .windows
            .iter()
            .map(|w| {
                w.tokens()
                    .filter(|p| vis.is_visible(p.row, p.col))
                    .collect()
            })
            .collect())
    }

    fn check_dims(&self, vis: &TokenVisibility) -> Result<()> {
        if vis.tokens_h() != self.tokens_h || vis.tokens_w() != self.tokens_w {
            return Err(Error::DimensionMismatch {
                expected_h: self.tokens_h,
                expected_w: self.tokens_w,
                got_h: vis.tokens_h(),
                got_w: vis.tokens_w(),
            });
        }
        Ok(())
    }
}

/// Splits `[0, len)` at `offset + k * p`.
fn bands(len: usize, window: usize, offset: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut end = if offset == 0 { window } else { offset };
    while start < len {
        let stop = end.min(len);
        out.push((start, stop - start));
        start = stop;
        end = stop + window;
    }
    out
}

/// Tiles the stage grid with windows, row-major by origin.
pub fn partition_windows(geom: &StageGeometry) -> Result<WindowLayout> {
    geom.validate()?;
    let rows = bands(geom.tokens_h, geom.window, geom.shift.0);
    let cols = bands(geom.tokens_w, geom.window, geom.shift.1);
    let mut windows = Vec::with_capacity(rows.len() * cols.len());
    for &(r0, h) in &rows {
        for &(c0, w) in &cols {
            windows.push(Window {
                id: windows.len(),
                origin: TokenPos::new(r0, c0),
                height: h,
                width: w,
            });
        }
    }
    Ok(WindowLayout {
        tokens_h: geom.tokens_h,
        tokens_w: geom.tokens_w,
        window: geom.window,
        windows,
    })
}

/// Visible-token count `w_i` for every window, empty windows included.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VisibleCounts {
    /// Counts in window order.
    pub counts: Vec<usize>,
}

impl VisibleCounts {
    /// Whether window `id` has no visible token.
    pub fn is_empty_window(&self, id: usize) -> bool {
        self.counts[id] == 0
    }

    /// Total visible tokens.
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Ids of windows with at least one visible token.
    pub fn nonempty_ids(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Counts of windows with at least one visible token, in window order.
    pub fn nonempty_sizes(&self) -> Vec<usize> {
        self.counts.iter().copied().filter(|c| *c > 0).collect()
    }
}

/// Counts visible tokens per window.
pub fn visible_counts(layout: &WindowLayout, vis: &TokenVisibility) -> Result<VisibleCounts> {
    layout.check_dims(vis)?;
    let counts = layout
        .windows
        .iter()
        .map(|w| w.tokens().filter(|p| vis.is_visible(p.row, p.col)).count())
        .collect();
    Ok(VisibleCounts { counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{expand_to_tokens, Mask};
    use alloc::vec;

    #[test]
    fn stage_one_regular_tiling() {
        let layout = partition_windows(&StageGeometry::new(56, 56, 7, 128, 8)).unwrap();
        assert_eq!(layout.len(), 64);
        assert!(layout.windows.iter().all(|w| w.len() == 49));
    }

    #[test]
    fn stage_three_and_four() {
        assert_eq!(
            partition_windows(&StageGeometry::new(14, 14, 7, 512, 2))
                .unwrap()
                .len(),
            4
        );
        assert_eq!(
            partition_windows(&StageGeometry::new(7, 7, 7, 1024, 1))
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn shifted_eight_by_eight() {
        let layout =
            partition_windows(&StageGeometry::new(8, 8, 4, 8, 1).with_shift(2, 2)).unwrap();
        let sizes: Vec<usize> = layout.windows.iter().map(Window::len).collect();
        assert_eq!(sizes, vec![4, 8, 4, 8, 16, 8, 4, 8, 4]);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(matches!(
            partition_windows(&StageGeometry::new(10, 14, 7, 8, 1)),
            Err(Error::IndivisibleGrid { .. })
        ));
        assert!(matches!(
            partition_windows(&StageGeometry::new(14, 14, 7, 8, 1).with_shift(7, 0)),
            Err(Error::InvalidShift { .. })
        ));
        // irregular border windows are fine once shifted
        let layout =
            partition_windows(&StageGeometry::new(10, 14, 7, 8, 1).with_shift(3, 3)).unwrap();
        assert_eq!(layout.windows.iter().map(Window::len).sum::<usize>(), 140);
    }

    #[test]
    fn counts_without_masking() {
        let layout = partition_windows(&StageGeometry::new(56, 56, 7, 128, 8)).unwrap();
        let counts = visible_counts(&layout, &TokenVisibility::all_visible(56, 56)).unwrap();
        assert!(counts.counts.iter().all(|&c| c == 49));
        let hidden = TokenVisibility::from_grid(56, 56, vec![false; 56 * 56]).unwrap();
        let counts = visible_counts(&layout, &hidden).unwrap();
        assert!(counts.counts.iter().all(|&c| c == 0));
        assert!(counts.nonempty_sizes().is_empty());
    }

    #[test]
    fn single_unit_overlaps_four_windows() {
        let mut grid = vec![false; 49];
        grid[0] = true;
        let mask = Mask::from_grid(7, 7, grid, 0.75).unwrap();
        let vis = expand_to_tokens(&mask, 8).unwrap();
        let layout = partition_windows(&StageGeometry::new(56, 56, 7, 128, 8)).unwrap();
        let counts = visible_counts(&layout, &vis).unwrap();
        for (i, &c) in counts.counts.iter().enumerate() {
            let expected = match i {
                0 => 49,
                1 | 8 => 7,
                9 => 1,
                _ => 0,
            };
            assert_eq!(c, expected, "window {i}");
        }
        assert_eq!(counts.nonempty_ids(), vec![0, 1, 8, 9]);
        assert!(counts.is_empty_window(2));
    }

    #[test]
    fn dimension_mismatch() {
        let layout = partition_windows(&StageGeometry::new(14, 14, 7, 8, 2)).unwrap();
        let vis = TokenVisibility::all_visible(7, 7);
        assert!(matches!(
            visible_counts(&layout, &vis),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
