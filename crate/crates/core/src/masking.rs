//! Batch-wise random masking.
//!
//! A single mask is drawn per micro-batch on the mask-unit grid (the unit is as
//! large as the coarsest patch stride of the encoder), so every stage sees whole
//! units and every sample in the batch shares the same group structure.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Visibility of each mask unit, row-major. `true` means visible.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mask {
    units_h: usize,
    units_w: usize,
    visible: Vec<bool>,
    ratio: f64,
}

impl Mask {
    /// Builds a mask from an explicit row-major grid.
    pub fn from_grid(
        units_h: usize,
        units_w: usize,
        visible: Vec<bool>,
        ratio: f64,
    ) -> Result<Self> {
        if units_h == 0 {
            return Err(Error::ZeroDimension("units_h"));
        }
        if units_w == 0 {
            return Err(Error::ZeroDimension("units_w"));
        }
        check_ratio(ratio)?;
        if visible.len() != units_h * units_w {
            return Err(Error::ShapeMismatch {
                what: "mask grid",
                expected: units_h * units_w,
                got: visible.len(),
            });
        }
        Ok(Self {
            units_h,
            units_w,
            visible,
            ratio,
        })
    }

    /// Mask units vertically.
    pub fn units_h(&self) -> usize {
        self.units_h
    }

    /// Mask units horizontally.
    pub fn units_w(&self) -> usize {
        self.units_w
    }

    /// Nominal mask ratio.
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Row-major visibility grid.
    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    /// Whether unit `(row, col)` is visible.
    pub fn is_visible(&self, row: usize, col: usize) -> bool {
        self.visible[row * self.units_w + col]
    }

    /// Number of visible units.
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// Number of hidden units.
    pub fn hidden_count(&self) -> usize {
        self.visible.len() - self.visible_count()
    }
}

/// Token-resolution visibility for one stage.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenVisibility {
    tokens_h: usize,
    tokens_w: usize,
    visible: Vec<bool>,
}

impl TokenVisibility {
    /// Builds a visibility grid directly (row-major).
    pub fn from_grid(tokens_h: usize, tokens_w: usize, visible: Vec<bool>) -> Result<Self> {
        if visible.len() != tokens_h * tokens_w {
            return Err(Error::ShapeMismatch {
                what: "token grid",
                expected: tokens_h * tokens_w,
                got: visible.len(),
            });
        }
        Ok(Self {
            tokens_h,
            tokens_w,
            visible,
        })
    }

    /// All tokens visible.
    pub fn all_visible(tokens_h: usize, tokens_w: usize) -> Self {
        Self {
            tokens_h,
            tokens_w,
            visible: alloc::vec![true; tokens_h * tokens_w],
        }
    }

    /// Grid rows.
    pub fn tokens_h(&self) -> usize {
        self.tokens_h
    }

    /// Grid columns.
    pub fn tokens_w(&self) -> usize {
        self.tokens_w
    }

    /// Row-major visibility.
    pub fn visible(&self) -> &[bool] {
        &self.visible
    }

    /// Whether token `(row, col)` is visible.
    pub fn is_visible(&self, row: usize, col: usize) -> bool {
        self.visible[row * self.tokens_w + col]
    }

    /// Number of visible tokens.
    pub fn popcount(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::InvalidRatio(format!("{ratio}")));
    }
    Ok(())
}

/// Number of hidden units for `n` units at ratio `r`: `floor(r * n)`.
pub fn hidden_units(n: usize, ratio: f64) -> usize {
    // non-negative, so truncation is floor
    (ratio * n as f64) as usize
}

/// Draws the batch mask: a ChaCha8 stream seeded with `seed` shuffles the unit
/// indices (Fisher-Yates) and the first `floor(r * n)` of them are hidden.
pub fn gen_batch_mask(seed: u64, units_h: usize, units_w: usize, ratio: f64) -> Result<Mask> {
    if units_h == 0 {
        return Err(Error::ZeroDimension("units_h"));
    }
    if units_w == 0 {
        return Err(Error::ZeroDimension("units_w"));
    }
    check_ratio(ratio)?;

    let n = units_h * units_w;
    let n_mask = hidden_units(n, ratio);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut visible = alloc::vec![true; n];
    for &idx in &order[..n_mask] {
        visible[idx] = false;
    }
    Ok(Mask {
        units_h,
        units_w,
        visible,
        ratio,
    })
}

/// Expands each mask unit to a `unit_span x unit_span` block of tokens.
pub fn expand_to_tokens(mask: &Mask, unit_span: usize) -> Result<TokenVisibility> {
    if unit_span == 0 {
        return Err(Error::ZeroDimension("unit_span"));
    }
    let tokens_h = mask.units_h * unit_span;
    let tokens_w = mask.units_w * unit_span;
    let mut visible = Vec::with_capacity(tokens_h * tokens_w);
    for row in 0..tokens_h {
        for col in 0..tokens_w {
            visible.push(mask.is_visible(row / unit_span, col / unit_span));
        }
    }
    Ok(TokenVisibility {
        tokens_h,
        tokens_w,
        visible,
    })
}
