//! Natural-log probability arithmetic.
//!
//! All scores in the engine are natural logarithms. Zero probability is
//! represented by the finite sentinel [`LOG_ZERO`] so that sums of scores
//! never produce NaN.

/// Log-probability used in place of `ln 0`.
pub const LOG_ZERO: f64 = -1.0e9;

/// Anything at or below this is treated as zero probability. Sums of a few
/// sentinels stay below it while the smallest positive `f64` (ln ≈ -745)
/// stays far above.
const LOG_ZERO_THRESHOLD: f64 = LOG_ZERO / 2.0;

#[inline]
pub fn is_log_zero(x: f64) -> bool {
    x <= LOG_ZERO_THRESHOLD
}

/// `ln p`, mapping `p <= 0` to [`LOG_ZERO`].
#[inline]
pub fn safe_ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln().max(LOG_ZERO)
    } else {
        LOG_ZERO
    }
}

/// `exp(x)`, mapping sentinel values to exactly zero.
#[inline]
pub fn safe_exp(x: f64) -> f64 {
    if is_log_zero(x) {
        0.0
    } else {
        x.exp()
    }
}

/// `ln(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ exp(x_i)`.
///
/// The terms are summed in descending order so the result does not depend
/// on the order of `values`. An empty slice yields [`LOG_ZERO`].
pub fn log_sum_exp(values: &[f64]) -> f64 {
    match values.len() {
        0 => LOG_ZERO,
        1 => values[0],
        _ => {
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let max = sorted[0];
            let sum: f64 = sorted.iter().map(|&v| (v - max).exp()).sum();
            max + sum.ln()
        }
    }
}

/// Normalizes raw log-weights into a log-distribution.
pub fn log_normalize(values: &mut [f64]) {
    let z = log_sum_exp(values);
    for v in values.iter_mut() {
        if !is_log_zero(*v) {
            *v -= z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let ps = [0.1_f64, 0.2, 0.3, 0.4];
        let logs: Vec<f64> = ps.iter().map(|p| p.ln()).collect();
        assert!((log_sum_exp(&logs) - 1.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_large_magnitudes() {
        let v = [-1000.0, -1000.0];
        assert!((log_sum_exp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_is_order_free() {
        let a = [-0.3, -2.1, -0.7, -5.5, -1.0];
        let mut b = a;
        b.reverse();
        assert_eq!(log_sum_exp(&a).to_bits(), log_sum_exp(&b).to_bits());
    }

    #[test]
    fn sentinel_behaves_like_zero() {
        assert_eq!(safe_ln(0.0), LOG_ZERO);
        assert_eq!(safe_exp(LOG_ZERO), 0.0);
        assert!(is_log_zero(LOG_ZERO + 2f64.ln()));
        assert!(!is_log_zero(f64::MIN_POSITIVE.ln()));
        let v = [0.5f64.ln(), LOG_ZERO];
        assert!((log_sum_exp(&v) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_add_agrees_with_log_sum_exp() {
        let (a, b) = (-1.25, -0.5);
        assert!((log_add(a, b) - log_sum_exp(&[a, b])).abs() < 1e-14);
    }
}
