//! The Gauss hypergeometric family behind the covariance closed forms.

use super::AccuracyPolicy;
use crate::{Error, Result};

/// 2F1(1, b; c; -1/lambda) for c > 0 and lambda > 0.
///
/// The defining series at argument -1/lambda diverges for lambda < 1, so
/// the evaluation runs through the Pfaff transformation
///
/// ```text
/// 2F1(1, b; c; -1/lambda)
///   = (lambda / (1 + lambda))^b 2F1(c - 1, b; c; 1 / (1 + lambda))
/// ```
///
/// whose argument lies in (0, 1) for every positive lambda. Terms follow a
/// two-term recurrence; the geometric tail bound below decides convergence,
/// and a nonpositive integer b terminates the series exactly.
pub fn hypergeom_h(b: f64, c: f64, lambda: f64, policy: &AccuracyPolicy) -> Result<f64> {
    if !(c > 0.0) || !(lambda > 0.0) || !b.is_finite() {
        return Err(Error::domain(
            "hypergeom_h",
            format!("requires c > 0 and lambda > 0, got b={b}, c={c}, lambda={lambda}"),
        ));
    }
    policy.validate()?;
    let w = 1.0 / (1.0 + lambda);
    let prefactor = (lambda / (1.0 + lambda)).powf(b);
    let mut sum = 1.0f64;
    let mut term = 1.0f64;
    for r in 0..policy.max_series_terms {
        let rf = r as f64;
        term *= (c - 1.0 + rf) * (b + rf) / ((c + rf) * (1.0 + rf)) * w;
        if term == 0.0 {
            // (b)_r or (c-1)_r hit zero: the series is a polynomial.
            return Ok(prefactor * sum);
        }
        sum += term;
        // Beyond the sign changes of (b + j) the step ratio is at most
        // w * max(1, (b + r + 1) / (r + 2)), so a geometric bound controls
        // the tail.
        if rf >= b.abs() + 2.0 {
            let rho = w * ((b + rf + 1.0) / (rf + 2.0)).max(1.0);
            if rho < 1.0 {
                let tail = term.abs() * rho / (1.0 - rho);
                if tail <= (policy.rel_tol * sum.abs()).max(0.1 * policy.abs_tol) {
                    return Ok(prefactor * sum);
                }
            }
        }
    }
    Err(Error::Accuracy {
        context: "hypergeom_h",
        best_estimate: prefactor * sum,
    })
}

#[cfg(test)]
mod tests {
    use super::super::integrate;
    use super::*;

    fn assert_close(got: f64, want: f64, tol: f64) {
        assert!(
            (got - want).abs() <= tol,
            "got {got}, want {want} (tol {tol})"
        );
    }

    fn h(b: f64, c: f64, lambda: f64) -> f64 {
        hypergeom_h(b, c, lambda, &AccuracyPolicy::default()).unwrap()
    }

    #[test]
    fn equal_parameters_collapse_to_geometric_series() {
        // 2F1(1, b; b; z) = 1 / (1 - z), so the value is lambda / (1 + lambda).
        for &b in &[0.5, 1.0, 3.7] {
            for &lambda in &[0.5, 1.0, 2.0] {
                assert_close(h(b, b, lambda), lambda / (1.0 + lambda), 1e-12);
            }
        }
    }

    #[test]
    fn log_and_rational_special_values() {
        // 2F1(1, 1; 2; z) = -ln(1 - z) / z gives ln 2 at z = -1.
        assert_close(h(1.0, 2.0, 1.0), 2f64.ln(), 1e-12);
        // 2F1(1, b; 1; z) = (1 - z)^(-b).
        assert_close(h(2.0, 1.0, 1.0), 0.25, 1e-12);
        // Series algebra: sum (r + 2)/2 z^r = (z/(1-z)^2 + 2/(1-z)) / 2,
        // which is 3/8 at z = -1.
        assert_close(h(3.0, 2.0, 1.0), 0.375, 1e-12);
        assert_close(h(3.0, 2.0, 1.0), 3.0 / 8.0, 1e-12);
        assert_close(h(4.0, 3.0, 1.0), 5.0 / 12.0, 1e-12);
    }

    #[test]
    fn abel_summation_cross_check() {
        // The alternating series sum (-1)^r (r + 2)/2 x^r is Abel summable
        // to 2F1(1, 3; 2; -1); its closed form at x slightly below 1
        // approaches 3/8.
        let partial = |x: f64| {
            let mut s = 0.0;
            let mut term: f64;
            let mut r = 0u32;
            loop {
                term = (if r % 2 == 0 { 1.0 } else { -1.0 }) * (r as f64 + 2.0) / 2.0
                    * x.powi(r as i32);
                s += term;
                if term.abs() < 1e-13 {
                    break;
                }
                r += 1;
            }
            s
        };
        assert_close(partial(0.999), 0.375, 2e-3);
        assert_close(h(3.0, 2.0, 1.0), 0.375, 1e-12);
    }

    #[test]
    fn nonpositive_integer_b_terminates() {
        // 2F1(1, -2; 2; -1) = 1 + 1 + 1/3 from the three surviving terms.
        assert_close(h(-2.0, 2.0, 1.0), 7.0 / 3.0, 1e-13);
    }

    #[test]
    fn rejects_bad_parameters() {
        let policy = AccuracyPolicy::default();
        assert!(hypergeom_h(1.0, 0.0, 1.0, &policy).is_err());
        assert!(hypergeom_h(1.0, 2.0, -1.0, &policy).is_err());
    }

    #[test]
    fn small_lambda_still_converges() {
        // w = 1/(1+lambda) close to 1 slows the series; the budget must
        // still absorb lambda = 0.05.
        let got = h(2.0, 2.0, 0.05);
        assert_close(got, 0.05 / 1.05, 1e-11);
    }

    #[test]
    fn power_integral_identity() {
        // int_0^1 x^a (x + lambda)^b dx
        //   = (lambda + 1)^(b+1) / (lambda (a + 1)) H(a + b + 2, a + 2).
        let policy = AccuracyPolicy::default();
        for &a in &[0.0, 1.0, 2.0, 4.0, 6.0] {
            for &b in &[-4.0, -3.0, -2.5, -1.3, -0.5, 0.0, 1.5] {
                for &lambda in &[0.5, 1.0, 2.0] {
                    let direct =
                        integrate(|x: f64| x.powf(a) * (x + lambda).powf(b), 0.0, 1.0, &policy)
                            .unwrap();
                    let closed = (lambda + 1.0).powf(b + 1.0) / (lambda * (a + 1.0))
                        * h(a + b + 2.0, a + 2.0, lambda);
                    assert_close(direct, closed, 1e-10);
                }
            }
        }
    }
}
