//! Overlap and shift-recovery scores.

use crate::error::{Error, Result};
use crate::mask::{self, check_same_grid, BinaryMask};

/// Dice similarity coefficient `2|A ∩ B| / (|A| + |B|)`.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_same_grid(a, b)?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Err(Error::EmptyMask("dice of two empty masks".into()));
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Componentwise absolute error in mm.
pub fn shift_error(estimated_mm: [f64; 3], truth_mm: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|a| (estimated_mm[a] - truth_mm[a]).abs())
}

/// Organ overlap before and after correcting the moving mask by `shift_mm`.
///
/// The moving mask is resampled onto the fixed mask's grid; the corrected
/// version is translated by `-shift_mm` first.
pub fn dsc_before_after(
    fixed_mask: &BinaryMask,
    moving_mask: &BinaryMask,
    shift_mm: [f64; 3],
) -> Result<(f64, f64)> {
    let target = fixed_mask.grid();
    let before = mask::resample_mask(moving_mask, target, [0.0; 3]);
    let back = shift_mm.map(|s| -s);
    let after = mask::resample_mask(moving_mask, target, back);
    Ok((dice(fixed_mask, &before)?, dice(fixed_mask, &after)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub dsc_before: f64,
    pub dsc_after: f64,
    pub shift_error_mm: Option<[f64; 3]>,
    pub runtime_seconds: f64,
}

impl EvalReport {
    /// `key: value` lines, appended to the registration report.
    pub fn report_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("dsc_before: {:.6}", self.dsc_before),
            format!("dsc_after: {:.6}", self.dsc_after),
        ];
        if let Some(e) = self.shift_error_mm {
            lines.push(format!("shift_error_x_mm: {}", e[0]));
            lines.push(format!("shift_error_y_mm: {}", e[1]));
            lines.push(format!("shift_error_z_mm: {}", e[2]));
        }
        lines
    }
}
