//! Central finite differences.

pub fn first(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn second(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

/// Mixed partial ∂²f/∂x∂y.
pub fn mixed(f: impl Fn(f64, f64) -> f64, x: f64, y: f64, h: f64) -> f64 {
    (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4.0 * h * h)
}

/// Relative error, with `floor` guarding the denominator near exact zeros.
pub fn rel_err(approx: f64, exact: f64, floor: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(floor)
}

/// Richardson-extrapolated central first difference, O(h⁴).
pub fn first_extrapolated(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (4.0 * first(&f, x, h / 2.0) - first(&f, x, h)) / 3.0
}

/// Richardson-extrapolated central second difference, O(h⁴).
pub fn second_extrapolated(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (4.0 * second(&f, x, h / 2.0) - second(&f, x, h)) / 3.0
}

pub fn mixed_extrapolated(f: impl Fn(f64, f64) -> f64, x: f64, y: f64, h: f64) -> f64 {
    (4.0 * mixed(&f, x, y, h / 2.0) - mixed(&f, x, y, h)) / 3.0
}
