/// Upper tail P(Z ≥ x) of a standard normal variable.
pub fn normal_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}
