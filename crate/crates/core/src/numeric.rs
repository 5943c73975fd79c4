//! Special functions and distribution tails.
//!
//! Everything here is hand-rolled from the regularized incomplete gamma and
//! beta functions (series + continued fractions, Lentz's method) so the crate
//! carries no statistical dependency. Target accuracy ≥ 1e-10 absolute.

const EPS: f64 = 1e-15;
const MAX_ITER: usize = 500;

/// Natural log of the gamma function (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().abs().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x).
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_p domain: a={a}, x={x}");
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cont_frac(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 − P(a, x).
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_q domain: a={a}, x={x}");
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cont_frac(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_cont_frac(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Regularized incomplete beta I_x(a, b) via Lentz's continued fraction.
pub fn regularized_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(
        a > 0.0 && b > 0.0 && (0.0..=1.0).contains(&x),
        "beta domain: a={a}, b={b}, x={x}"
    );
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let front =
        (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cont_frac(a, b, x) / a
    } else {
        1.0 - front * beta_cont_frac(b, a, 1.0 - x) / b
    }
}

fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Upper-tail probability of a chi-square distribution with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    assert!(df > 0.0, "chi_square_sf: df must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    regularized_gamma_q(df / 2.0, x / 2.0)
}

/// Two-sided p-value of a Student t statistic with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    assert!(df > 0.0, "student_t_two_sided_p: df must be positive");
    if t == 0.0 {
        return 1.0;
    }
    if !t.is_finite() {
        return 0.0;
    }
    regularized_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Error function, via the regularized incomplete gamma.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        -erf(-x)
    } else if x == 0.0 {
        0.0
    } else {
        regularized_gamma_p(0.5, x * x)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Quantile of the Student t distribution: the value q with CDF(q) = p.
///
/// Solved by bisection on the (monotone) CDF; adequate for interval
/// construction where a handful of evaluations per call is irrelevant.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "student_t_quantile: p must be in (0,1)");
    assert!(df > 0.0, "student_t_quantile: df must be positive");
    if (p - 0.5).abs() < 1e-16 {
        return 0.0;
    }
    if p < 0.5 {
        return -student_t_quantile(1.0 - p, df);
    }
    // CDF(q) = 1 − two_sided(q)/2 for q ≥ 0; bracket then bisect.
    let target_two_sided = 2.0 * (1.0 - p);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while student_t_two_sided_p(hi, df) > target_two_sided {
        hi *= 2.0;
        if hi > 1e12 {
            break;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_two_sided_p(mid, df) > target_two_sided {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Solve the linear system `a`·x = rhs (row-major n×n) by Gaussian elimination
/// with partial pivoting. Returns `None` when the matrix is singular.
pub(crate) fn solve_linear(a: &[f64], rhs: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(rhs.len(), n);
    let mut aug = vec![0.0; n * (n + 1)];
    for i in 0..n {
        aug[i * (n + 1)..i * (n + 1) + n].copy_from_slice(&a[i * n..(i + 1) * n]);
        aug[i * (n + 1) + n] = rhs[i];
    }
    for col in 0..n {
        let mut piv = col;
        for row in col + 1..n {
            if aug[row * (n + 1) + col].abs() > aug[piv * (n + 1) + col].abs() {
                piv = row;
            }
        }
        if aug[piv * (n + 1) + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for j in 0..=n {
                aug.swap(col * (n + 1) + j, piv * (n + 1) + j);
            }
        }
        let pivot = aug[col * (n + 1) + col];
        for row in col + 1..n {
            let factor = aug[row * (n + 1) + col] / pivot;
            for j in col..=n {
                let upper = aug[col * (n + 1) + j];
                aug[row * (n + 1) + j] -= factor * upper;
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = aug[i * (n + 1) + n];
        for j in i + 1..n {
            sum -= aug[i * (n + 1) + j] * x[j];
        }
        x[i] = sum / aug[i * (n + 1) + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Reference values computed with SciPy.

    #[test]
    fn ln_gamma_reference() {
        assert_abs_diff_eq!(ln_gamma(0.5), 0.5723649429247, epsilon = 1e-11);
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(3.7), 1.428072326665388, epsilon = 1e-11);
        assert_abs_diff_eq!(ln_gamma(10.0), 12.801827480081469, epsilon = 1e-10);
        assert_abs_diff_eq!(ln_gamma(142.5), 562.6460872862025, epsilon = 1e-9);
    }

    #[test]
    fn gamma_p_reference() {
        assert_abs_diff_eq!(regularized_gamma_p(0.5, 0.25), 0.5204998778130466, epsilon = 1e-11);
        assert_abs_diff_eq!(regularized_gamma_p(2.0, 1.0), 0.2642411176571153, epsilon = 1e-11);
        assert_abs_diff_eq!(regularized_gamma_p(5.0, 12.0), 0.992399609318933, epsilon = 1e-11);
        assert_abs_diff_eq!(regularized_gamma_p(9.0, 3.0), 0.003802992061675955, epsilon = 1e-11);
    }

    #[test]
    fn gamma_p_q_complementary() {
        for &(a, x) in &[(0.3, 0.1), (1.0, 1.0), (7.5, 3.0), (20.0, 40.0)] {
            let s = regularized_gamma_p(a, x) + regularized_gamma_q(a, x);
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn beta_reference() {
        assert_abs_diff_eq!(regularized_beta(0.5, 0.5, 0.3), 0.36901011956554536, epsilon = 1e-11);
        assert_abs_diff_eq!(regularized_beta(2.0, 3.0, 0.4), 0.5247999999999999, epsilon = 1e-11);
        assert_abs_diff_eq!(regularized_beta(4.5, 1.5, 0.8), 0.5493044928742802, epsilon = 1e-11);
    }

    #[test]
    fn chi_square_sf_reference() {
        assert_abs_diff_eq!(chi_square_sf(2.882, 1.0), 0.08957470329017465, epsilon = 1e-11);
        assert_abs_diff_eq!(chi_square_sf(0.5, 3.0), 0.9188914116546758, epsilon = 1e-11);
        assert_abs_diff_eq!(chi_square_sf(10.0, 4.0), 0.04042768199451279, epsilon = 1e-11);
        assert_abs_diff_eq!(chi_square_sf(-1.0, 2.0), 1.0, epsilon = 0.0);
    }

    #[test]
    fn student_t_reference() {
        assert_abs_diff_eq!(student_t_two_sided_p(2.0, 4.0), 0.1161165235168155, epsilon = 1e-11);
        assert_abs_diff_eq!(student_t_two_sided_p(1.5, 10.0), 0.16450732644544017, epsilon = 1e-11);
        assert_abs_diff_eq!(student_t_two_sided_p(-3.2, 7.0), 0.015065811342489297, epsilon = 1e-11);
        assert_abs_diff_eq!(student_t_two_sided_p(0.0, 5.0), 1.0, epsilon = 0.0);
    }

    #[test]
    fn normal_cdf_reference() {
        assert_abs_diff_eq!(normal_cdf(-3.0), 0.0013498980316300933, epsilon = 1e-11);
        assert_abs_diff_eq!(normal_cdf(-0.5), 0.3085375387259869, epsilon = 1e-11);
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(normal_cdf(1.0), 0.8413447460685429, epsilon = 1e-11);
        assert_abs_diff_eq!(normal_cdf(2.5), 0.9937903346742238, epsilon = 1e-11);
    }

    #[test]
    fn t_quantile_reference() {
        assert_abs_diff_eq!(student_t_quantile(0.975, 4.0), 2.7764451051977987, epsilon = 1e-8);
        assert_abs_diff_eq!(student_t_quantile(0.975, 1.0), 12.706204736432095, epsilon = 1e-6);
        assert_abs_diff_eq!(student_t_quantile(0.95, 9.0), 1.8331129326536335, epsilon = 1e-8);
        assert_abs_diff_eq!(student_t_quantile(0.6, 2.0), 0.28867513459481275, epsilon = 1e-9);
        assert_abs_diff_eq!(
            student_t_quantile(0.025, 4.0),
            -2.7764451051977987,
            epsilon = 1e-8
        );
    }

    #[test]
    fn solve_linear_small_system() {
        let a = [2.0, 1.0, 1.0, 3.0];
        let b = [5.0, 10.0];
        let x = solve_linear(&a, &b, 2).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn solve_linear_singular() {
        let a = [1.0, 2.0, 2.0, 4.0];
        let b = [1.0, 2.0];
        assert!(solve_linear(&a, &b, 2).is_none());
    }
}
