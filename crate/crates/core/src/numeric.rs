//! Small numerical kernels shared by the model and analysis code.

/// `log Σ exp(x_i)` evaluated with a max shift. Returns `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| x - lse).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean and variance of `values` under the probability vector `weights`.
///
/// The variance is formed as `E[(X-c)^2] - (E[X]-c)^2` with `c` the weighted
/// mean from a first pass, which keeps the subtraction well conditioned when
/// the spread is small next to the magnitude.
pub fn weighted_mean_var(weights: &[f64], values: &[f64]) -> (f64, f64) {
    debug_assert_eq!(weights.len(), values.len());
    let mean: f64 = weights.iter().zip(values).map(|(w, x)| w * x).sum();
    let (m1, m2) = weights
        .iter()
        .zip(values)
        .fold((0.0, 0.0), |(m1, m2), (w, x)| {
            let d = x - mean;
            (m1 + w * d, m2 + w * d * d)
        });
    (mean, (m2 - m1 * m1).max(0.0))
}

/// Composite Simpson rule on `[a, b]` with `intervals` sub-intervals
/// (rounded up to an even count).
pub fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2);
    let n = if n % 2 == 1 { n + 1 } else { n };
    if a == b {
        return 0.0;
    }
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        acc += if i % 2 == 1 { 4.0 * f(x) } else { 2.0 * f(x) };
    }
    acc * h / 3.0
}

/// Outcome of [`bisect_increasing`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bisection {
    pub root: f64,
    pub residual: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// Solve `f(x) = target` for a strictly increasing `f` with
/// `f(lo) < target < f(hi)`.
///
/// Stops once `|f(mid) - target| < tol`, the bracket stops shrinking in
/// floating point, or `max_iter` is reached; the point with the smallest
/// residual seen is returned.
pub fn bisect_increasing<F: FnMut(f64) -> f64>(
    mut f: F,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> Bisection {
    let bracket = (lo, hi);
    let mut best = (lo, (f(lo) - target).abs());
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = f(mid) - target;
        if r.abs() < best.1 {
            best = (mid, r.abs());
        }
        if r.abs() < tol {
            break;
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Bisection {
        root: best.0,
        residual: best.1,
        iterations,
        bracket,
    }
}

/// Least-squares polynomial fit of the given degree; returns coefficients
/// from the constant term upward.
pub fn polyfit(xs: &[f64], ys: &[f64], degree: usize) -> Vec<f64> {
    use nalgebra::{DMatrix, DVector};
    let cols = degree + 1;
    let a = DMatrix::from_fn(xs.len(), cols, |i, k| xs[i].powi(k as i32));
    let b = DVector::from_column_slice(ys);
    // Columns are rescaled to unit norm; powers of small |x| differ by
    // orders of magnitude otherwise.
    let scale: Vec<f64> = (0..cols)
        .map(|k| a.column(k).norm().max(f64::MIN_POSITIVE))
        .collect();
    let a_scaled = DMatrix::from_fn(xs.len(), cols, |i, k| a[(i, k)] / scale[k]);
    let svd = a_scaled.svd(true, true);
    let sol = svd
        .solve(&b, 1e-14)
        .expect("SVD with both factors computed");
    (0..cols).map(|k| sol[k] / scale[k]).collect()
}

/// Formats a double with 17 significant digits, dot decimal.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // Avoid "-0.0000000000000000e0" for negative zero.
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}
