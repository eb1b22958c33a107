//! Stylization strength: the residual gate and the training grid.

/// Largest value on the training grid.
pub const ALPHA_MAX: f64 = 10.0;

/// Number of points on the training grid `0.0, 0.1, ..., 10.0`.
pub const GRID_LEN: usize = 101;

/// Residual-branch gate `2|ab| / (1 + |ab|)` for strength `alpha` and block
/// coefficient `beta`. Always in `[0, 2)`. Negative strengths behave like
/// their absolute value.
pub fn gamma(alpha: f64, beta: f64) -> f64 {
    let t = (alpha * beta).abs();
    if t.is_infinite() {
        return GAMMA_SUP;
    }
    // For |ab| beyond ~1e16 the quotient rounds to 2.0; keep it below.
    (2.0 * t / (1.0 + t)).min(GAMMA_SUP)
}

/// Largest `f64` below 2, the saturation value of [`gamma`].
pub const GAMMA_SUP: f64 = 2.0 - f64::EPSILON;

/// Partial derivative of [`gamma`] with respect to `beta`, taken as 0 at the
/// kink `alpha * beta == 0`.
pub fn gamma_grad_beta(alpha: f64, beta: f64) -> f64 {
    let ab = alpha * beta;
    if ab == 0.0 {
        return 0.0;
    }
    let denom = 1.0 + ab.abs();
    2.0 * alpha * ab.signum() / (denom * denom)
}

/// The `k`-th grid value, computed as `k / 10` so every value is the
/// correctly rounded tenth.
pub fn grid_value(k: usize) -> f64 {
    debug_assert!(k < GRID_LEN);
    k as f64 / 10.0
}

pub fn alpha_grid() -> Vec<f64> {
    (0..GRID_LEN).map(grid_value).collect()
}

/// Whether `alpha` is exactly one of the grid values.
pub fn on_grid(alpha: f64) -> bool {
    let k = (alpha * 10.0).round();
    (0.0..=100.0).contains(&k) && grid_value(k as usize) == alpha
}
