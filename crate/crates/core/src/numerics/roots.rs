use num_complex::Complex;

use crate::Scalar;

/// Evaluates c[0]·z^d + … + c[d] by Horner's rule.
pub fn poly_eval<T: Scalar>(coefficients: &[T], z: Complex<T>) -> Complex<T> {
    coefficients
        .iter()
        .fold(Complex::new(T::zero(), T::zero()), |acc, &c| acc * z + c)
}

/// Roots of the monic quadratic z² + b·z + c, using the cancellation-free form.
pub fn quadratic_roots<T: Scalar>(b: T, c: T) -> [Complex<T>; 2] {
    let two = T::of(2.0);
    let disc = b * b - T::of(4.0) * c;
    if disc >= T::zero() {
        let sign = if b >= T::zero() { T::one() } else { -T::one() };
        let q = -(b + sign * disc.sqrt()) / two;
        let other = if q != T::zero() { c / q } else { T::zero() };
        [Complex::new(q, T::zero()), Complex::new(other, T::zero())]
    } else {
        let re = -b / two;
        let im = (-disc).sqrt() / two;
        [Complex::new(re, -im), Complex::new(re, im)]
    }
}

/// All three roots of c[0]·z³ + c[1]·z² + c[2]·z + c[3], c[0] ≠ 0.
///
/// Cardano / trigonometric form on the depressed cubic, deflation for the
/// complex pair, then a few Newton polishing steps on the original polynomial.
/// Output is sorted by real part, then imaginary part.
pub fn cubic_roots<T: Scalar>(c: [T; 4]) -> [Complex<T>; 3] {
    assert!(c[0] != T::zero(), "leading coefficient must be nonzero");
    let a = c[1] / c[0];
    let b = c[2] / c[0];
    let d = c[3] / c[0];
    let three = T::of(3.0);
    let two = T::of(2.0);
    let shift = a / three;
    let p = b - a * a / three;
    let q = two * a * a * a / T::of(27.0) - a * b / three + d;
    let half_q = q / two;
    let third_p = p / three;
    let disc = half_q * half_q + third_p * third_p * third_p;

    let mut roots: [Complex<T>; 3] = if p == T::zero() && q == T::zero() {
        let r = Complex::new(-shift, T::zero());
        [r, r, r]
    } else if disc > T::zero() {
        let sign = if half_q >= T::zero() { T::one() } else { -T::one() };
        let u = (-half_q - sign * disc.sqrt()).cbrt();
        let v = if u != T::zero() { -third_p / u } else { T::zero() };
        let r = u + v - shift;
        let b1 = a + r;
        let b0 = b + r * b1;
        let [z1, z2] = quadratic_roots(b1, b0);
        [Complex::new(r, T::zero()), z1, z2]
    } else {
        let m = two * (-third_p).sqrt();
        let arg = (three * q / (two * p) * (-three / p).sqrt())
            .max(-T::one())
            .min(T::one());
        let phi = arg.acos() / three;
        let tau = two * T::PI() / three;
        let mk = |k: T| Complex::new(m * (phi - tau * k).cos() - shift, T::zero());
        [mk(T::zero()), mk(T::one()), mk(two)]
    };

    for root in roots.iter_mut() {
        *root = polish(&c, *root);
    }
    roots.sort_by(|x, y| {
        x.re.partial_cmp(&y.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.im.partial_cmp(&y.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    roots
}

fn polish<T: Scalar>(c: &[T; 4], mut z: Complex<T>) -> Complex<T> {
    let derivative = [T::of(3.0) * c[0], T::of(2.0) * c[1], c[2]];
    let mut residual = poly_eval(c, z).norm();
    for _ in 0..4 {
        let slope = poly_eval(&derivative, z);
        if slope.norm() == T::zero() {
            break;
        }
        let candidate = z - poly_eval(c, z) / slope;
        let r = poly_eval(c, candidate).norm();
        if !(r < residual) {
            break;
        }
        z = candidate;
        residual = r;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_root() {
        let r = cubic_roots([1.0, -3.0, 3.0, -1.0]);
        for z in r {
            assert!((z - Complex::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn cube_roots_of_unity() {
        let r = cubic_roots([1.0, 0.0, 0.0, -1.0]);
        let h = 3f64.sqrt() / 2.0;
        let expected = [Complex::new(-0.5, -h), Complex::new(-0.5, h), Complex::new(1.0, 0.0)];
        for (z, e) in r.iter().zip(&expected) {
            assert!((z - e).norm() < 1e-12, "{z} vs {e}");
        }
    }

    #[test]
    fn three_distinct_real_roots() {
        // (z - 1)(z - 2)(z + 3) = z³ - 7z + 6
        let r = cubic_roots([1.0f64, 0.0, -7.0, 6.0]);
        let expected = [-3.0, 1.0, 2.0];
        for (z, e) in r.iter().zip(expected) {
            assert!((z.re - e).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_complex_pair() {
        let [z1, z2] = quadratic_roots(2.0_f64, 5.0);
        assert_eq!(z1, Complex::new(-1.0, -2.0));
        assert_eq!(z2, Complex::new(-1.0, 2.0));
    }

    proptest::proptest! {
        #[test]
        fn random_monic_cubic_residuals(a in -10.0f64..10.0, b in -10.0f64..10.0, d in -10.0f64..10.0) {
            let c = [1.0, a, b, d];
            let scale = 1.0 + a.abs() + b.abs() + d.abs();
            for z in cubic_roots(c) {
                let zn = z.norm().max(1.0);
                let r = poly_eval(&c, z).norm() / (scale * zn.powi(3));
                proptest::prop_assert!(r < 1e-10, "residual {} at {}", r, z);
            }
        }
    }
}
