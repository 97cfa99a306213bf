//! Bracketed root finding and bounded scalar maximization.

use rayon::prelude::*;

use crate::error::{MarketError, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub x: f64,
    pub value: f64,
}

/// Bisection on `[lo, hi]`; `f(lo)` and `f(hi)` must not share a sign.
/// Stops when the bracket is narrower than `xtol`, when the midpoint no longer
/// splits it, or after `max_iter` halvings.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let f_lo = f(lo);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    let f_hi = f(hi);
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(MarketError::NoSignChange { lo, hi, f_lo, f_hi });
    }
    let lo_negative = f_lo < 0.0;
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= xtol || mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Golden-section search for a maximum of a unimodal `f` on `[lo, hi]`.
pub fn golden_max<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Maximum
where
    F: FnMut(f64) -> f64,
{
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if hi - lo <= xtol {
            break;
        }
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        Maximum { x: x1, value: f1 }
    } else {
        Maximum { x: x2, value: f2 }
    }
}

/// Index of the first largest value; NaN never wins.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}

fn grid_point(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if i + 1 == n {
        hi
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// Refines a grid maximum at index `best` inside its neighbouring cells.
/// When `slope` is given and changes sign from positive to negative across the
/// cell, its root is located by bisection; otherwise golden section is used.
#[allow(clippy::too_many_arguments)]
fn refine<F, D>(f: &F, slope: Option<&D>, lo: f64, hi: f64, n: usize, best: usize, grid_best: f64, xtol: f64) -> Maximum
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let grid = Maximum {
        x: grid_point(lo, hi, n, best),
        value: grid_best,
    };
    if n < 2 || hi <= lo {
        return grid;
    }
    let a = grid_point(lo, hi, n, best.saturating_sub(1));
    let b = grid_point(lo, hi, n, (best + 1).min(n - 1));
    let mut candidate = None;
    if let Some(d) = slope {
        let (da, db) = (d(a), d(b));
        if da > 0.0 && db < 0.0 {
            if let Ok(x) = bisect(d, a, b, 0.0, 200) {
                candidate = Some(Maximum { x, value: f(x) });
            }
        }
    }
    let refined = candidate.unwrap_or_else(|| golden_max(f, a, b, xtol));
    // Rounding can leave the refined value a few ulps under the grid value at
    // a flat top.
    let slack = 1e-13 * (1.0 + grid.value.abs());
    if refined.value >= grid.value - slack && refined.value.is_finite() {
        refined
    } else {
        grid
    }
}

/// Maximizes `f` on `[lo, hi]`: `n`-point grid scan, then refinement on the
/// cells around the best grid point.
pub fn grid_golden_max<F>(f: F, lo: f64, hi: f64, n: usize, xtol: f64) -> Maximum
where
    F: Fn(f64) -> f64,
{
    grid_refined_max(&f, None::<&fn(f64) -> f64>, lo, hi, n, xtol)
}

/// As [`grid_golden_max`], but a derivative of `f` is used to place interior
/// maxima to machine precision.
pub fn grid_refined_max<F, D>(f: &F, slope: Option<&D>, lo: f64, hi: f64, n: usize, xtol: f64) -> Maximum
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let n = n.max(2);
    if hi <= lo {
        return Maximum { x: lo, value: f(lo) };
    }
    let values: Vec<f64> = (0..n).map(|i| f(grid_point(lo, hi, n, i))).collect();
    let best = argmax(&values);
    refine(f, slope, lo, hi, n, best, values[best], xtol)
}

/// Parallel grid scan for expensive objectives; the refinement is sequential.
/// Returns the maximum together with the grid values.
pub fn grid_golden_max_par<F>(f: F, lo: f64, hi: f64, n: usize, xtol: f64) -> (Maximum, Vec<f64>)
where
    F: Fn(f64) -> f64 + Sync,
{
    let n = n.max(2);
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| f(grid_point(lo, hi, n, i)))
        .collect();
    let best = argmax(&values);
    let m = refine(&f, None::<&fn(f64) -> f64>, lo, hi, n, best, values[best], xtol);
    (m, values)
}

/// Uniform grid of `n` points on `[lo, hi]` with exact endpoints.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| grid_point(lo, hi, n, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14, 200).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn bisect_rejects_same_sign() {
        let e = bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 200).unwrap_err();
        assert!(matches!(e, MarketError::NoSignChange { .. }));
    }

    #[test]
    fn golden_on_parabola() {
        let m = golden_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-10);
        assert!((m.x - 0.3).abs() < 1e-7);
    }

    #[test]
    fn grid_handles_multimodal_and_endpoints() {
        // Global peak at 0.8 beats the local one at 0.2.
        let f = |x: f64| (-(x - 0.2).powi(2) * 200.0).exp() + 1.5 * (-(x - 0.8).powi(2) * 200.0).exp();
        let m = grid_golden_max(f, 0.0, 1.0, 101, 1e-12);
        assert!((m.x - 0.8).abs() < 1e-6);
        let m = grid_golden_max(|x| x, 0.0, 2.0, 11, 1e-12);
        assert!((m.x - 2.0).abs() < 1e-9);
    }

    #[test]
    fn slope_refinement_is_exact() {
        let f = |x: f64| x * (4.1 - 5.0 * x);
        let d = |x: f64| 4.1 - 10.0 * x;
        let m = grid_refined_max(&f, Some(&d), 0.0, 1.0, 2001, 1e-12);
        assert!((m.x - 0.41).abs() < 1e-15);
    }

    #[test]
    fn parallel_matches_serial() {
        let f = |x: f64| (3.0 * x).sin() * x;
        let (p, vals) = grid_golden_max_par(f, 0.0, 3.0, 201, 1e-12);
        let s = grid_golden_max(f, 0.0, 3.0, 201, 1e-12);
        assert_eq!(p, s);
        assert_eq!(vals.len(), 201);
    }
}
