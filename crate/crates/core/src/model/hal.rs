use rand::Rng;

use crate::corpus::Language;
use crate::error::{Error, Result};
use crate::numerics::Scalar;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("mixing coefficient {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// `h_A = α·h_H + (1−α)·h_L`, `y_A = α·y_H + (1−α)·y_L`.
pub fn hal_mix<T: Scalar>(h_hrl: &[T], h_lrl: &[T], y_hrl: &[T], y_lrl: &[T], alpha: T) -> Result<(Vec<T>, Vec<T>)> {
    check_alpha(alpha.to_f64_lossy())?;
    if h_hrl.len() != h_lrl.len() || y_hrl.len() != y_lrl.len() {
        return Err(Error::Dimension(format!(
            "hal_mix: hidden {} vs {}, labels {} vs {}",
            h_hrl.len(),
            h_lrl.len(),
            y_hrl.len(),
            y_lrl.len()
        )));
    }
    let beta = T::one() - alpha;
    let mix = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| alpha * x + beta * y).collect();
    Ok((mix(h_hrl, h_lrl), mix(y_hrl, y_lrl)))
}

/// Per-position mixing for labeling tasks. Rows are positions; a position
/// is mixed and kept for the loss only where both sides are valid, and
/// otherwise keeps the LRL row with its loss flag cleared.
pub fn hal_mix_positions<T: Scalar>(
    h_hrl: &[T],
    h_lrl: &[T],
    y_hrl: &[T],
    y_lrl: &[T],
    valid_hrl: &[bool],
    valid_lrl: &[bool],
    alpha: T,
) -> Result<(Vec<T>, Vec<T>, Vec<bool>)> {
    let s = valid_lrl.len();
    if valid_hrl.len() != s || s == 0 || h_hrl.len() != h_lrl.len() || y_hrl.len() != y_lrl.len() {
        return Err(Error::Dimension("hal_mix_positions: mismatched position counts".into()));
    }
    let (d, cdim) = (h_hrl.len() / s, y_hrl.len() / s);
    let (mut h, mut y) = hal_mix(h_hrl, h_lrl, y_hrl, y_lrl, alpha)?;
    let mut keep = vec![false; s];
    for p in 0..s {
        keep[p] = valid_hrl[p] && valid_lrl[p];
        if !keep[p] {
            h[p * d..(p + 1) * d].copy_from_slice(&h_lrl[p * d..(p + 1) * d]);
            y[p * cdim..(p + 1) * cdim].copy_from_slice(&y_lrl[p * cdim..(p + 1) * cdim]);
        }
    }
    Ok((h, y, keep))
}

/// Linear schedule from 1 at step 0 to 0 at step `total`.
pub fn dynamic_alpha(step: usize, total: usize) -> Result<f64> {
    if total == 0 || step > total {
        return Err(Error::Contract(format!("dynamic alpha needs 0 ≤ step ≤ total > 0, got {step}/{total}")));
    }
    Ok((total - step) as f64 / total as f64)
}

/// Pairs every LRL member of a batch with a uniformly drawn HRL member.
/// Returns `(lrl index, hrl index)` pairs in batch order.
pub fn pair_for_mixing<R: Rng>(languages: &[Language], rng: &mut R) -> Vec<(usize, usize)> {
    let hrl: Vec<usize> = (0..languages.len()).filter(|&i| languages[i] == Language::Hrl).collect();
    if hrl.is_empty() {
        return Vec::new();
    }
    (0..languages.len())
        .filter(|&i| languages[i] == Language::Lrl)
        .map(|i| (i, hrl[rng.gen_range(0..hrl.len())]))
        .collect()
}
