//! One-dimensional searches over a common success probability.

use crate::config::grid_values;

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const REFINE_TOL: f64 = 1e-5;

/// Extremum of a scalar function of `p` together with every evaluation made.
#[derive(Debug, Clone)]
pub struct Extremum {
    pub p: f64,
    pub value: f64,
    pub trace: Vec<(f64, f64)>,
}

/// Golden-section search for the maximum of `f` on `[a, b]`.
pub fn golden_max(
    f: &mut dyn FnMut(f64) -> f64,
    mut a: f64,
    mut b: f64,
    trace: &mut Vec<(f64, f64)>,
) -> (f64, f64) {
    let mut eval = |x: f64, t: &mut Vec<(f64, f64)>| {
        let v = f(x);
        t.push((x, v));
        v
    };
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = eval(c, trace);
    let mut fd = eval(d, trace);
    while b - a > REFINE_TOL {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = eval(c, trace);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = eval(d, trace);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Maximum of `f` over the grid `lo, lo+step, ..., hi`, optionally refined by
/// golden-section search on the two cells around the best grid point.
pub fn grid_max(
    f: &mut dyn FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    step: f64,
    refine: bool,
) -> Extremum {
    let mut trace = Vec::new();
    let mut best = (lo, f64::NEG_INFINITY);
    for p in grid_values(lo, hi, step) {
        let v = f(p);
        trace.push((p, v));
        if v > best.1 {
            best = (p, v);
        }
    }
    if refine && hi > lo {
        let a = (best.0 - step).max(lo);
        let b = (best.0 + step).min(hi);
        let (p, v) = golden_max(f, a, b, &mut trace);
        if v > best.1 {
            best = (p, v);
        }
    }
    Extremum {
        p: best.0,
        value: best.1,
        trace,
    }
}

/// Minimum counterpart of [`grid_max`].
pub fn grid_min(
    f: &mut dyn FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    step: f64,
    refine: bool,
) -> Extremum {
    let mut neg = |p: f64| -f(p);
    let e = grid_max(&mut neg, lo, hi, step, refine);
    Extremum {
        p: e.p,
        value: -e.value,
        trace: e.trace.into_iter().map(|(p, v)| (p, -v)).collect(),
    }
}

/// Checks `f(p) >= threshold` on the grid (and the refined minimum), visiting
/// `hint` first so that failing designs are rejected after few evaluations.
/// Returns the failing point, or `None` if the constraint holds everywhere.
pub fn first_violation_below(
    f: &mut dyn FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    step: f64,
    refine: bool,
    threshold: f64,
    hint: Option<f64>,
) -> Option<(f64, f64)> {
    let grid = grid_values(lo, hi, step);
    let mut values = vec![f64::NAN; grid.len()];
    if let Some(h) = hint {
        if let Some(i) = grid.iter().position(|&g| (g - h).abs() < 1e-9) {
            let v = f(grid[i]);
            values[i] = v;
            if v < threshold {
                return Some((grid[i], v));
            }
        }
    }
    let mut best = (lo, f64::INFINITY);
    for (i, &p) in grid.iter().enumerate() {
        if values[i].is_nan() {
            values[i] = f(p);
        }
        if values[i] < threshold {
            return Some((p, values[i]));
        }
        if values[i] < best.1 {
            best = (p, values[i]);
        }
    }
    if refine && hi > lo {
        let mut neg = |p: f64| -f(p);
        let mut trace = Vec::new();
        let (p, v) = golden_max(
            &mut neg,
            (best.0 - step).max(lo),
            (best.0 + step).min(hi),
            &mut trace,
        );
        if -v < threshold {
            return Some((p, -v));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refines_off_grid_peak() {
        let mut f = |p: f64| -(p - 0.503_7f64).powi(2);
        let coarse = grid_max(&mut f, 0.0, 1.0, 0.01, false);
        assert!((coarse.p - 0.5).abs() < 1e-12);
        let fine = grid_max(&mut f, 0.0, 1.0, 0.01, true);
        assert!((fine.p - 0.5037).abs() < 1e-4);
        assert!(fine.value >= coarse.value);
    }

    #[test]
    fn minimum_and_violation() {
        let mut f = |p: f64| (p - 0.3).abs() + 0.5;
        let m = grid_min(&mut f, 0.0, 0.85, 0.01, true);
        assert!((m.value - 0.5).abs() < 1e-4);
        assert!(first_violation_below(&mut f, 0.0, 0.85, 0.01, true, 0.49, None).is_none());
        let v = first_violation_below(&mut f, 0.0, 0.85, 0.01, true, 0.6, Some(0.3)).unwrap();
        assert!((v.0 - 0.3).abs() < 1e-12);
    }
}
