//! Upper quantiles of the F distribution via the regularized incomplete beta
//! function: continued-fraction evaluation (Lentz) and a bracketed
//! Newton/bisection inversion.

use crate::error::{Error, Result};

/// Query for an F-distribution quantile: the `level` quantile of
/// F(df1, df2), i.e. the upper (1 - level) point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FQuantileQuery {
    pub df1: u32,
    pub df2: u32,
    pub level: f64,
}

impl FQuantileQuery {
    pub fn new(df1: u32, df2: u32, level: f64) -> Result<Self> {
        if df1 == 0 {
            return Err(Error::Domain("df1 must be at least 1".into()));
        }
        if df2 == 0 {
            return Err(Error::Domain(
                "df2 must be at least 1; a design with d = 0 must be mapped to an \
                 infinite criterion value before quantile evaluation"
                    .into(),
            ));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Domain(format!(
                "level must lie strictly in (0, 1), got {level}"
            )));
        }
        Ok(FQuantileQuery { df1, df2, level })
    }
}

/// Lanczos approximation of ln Gamma(x) for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let tmp = x + 5.5 - (x + 0.5) * (x + 5.5).ln();
    let mut ser = 1.000000000190015;
    for (j, c) in COEFFS.iter().enumerate() {
        ser += c / (x + 1.0 + j as f64);
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta function (Lentz's algorithm),
/// converged to a 1e-12 relative step.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-12;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
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

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - (b * (1.0 - x).ln() + a * x.ln() - ln_beta(a, b)).exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Invert I_x(a, b) = p by a bracketed Newton/bisection hybrid on x in (0, 1).
fn inv_reg_inc_beta(a: f64, b: f64, p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let ln_beta_ab = ln_beta(a, b);
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    let mut x = a / (a + b);
    for _ in 0..200 {
        let f = reg_inc_beta(a, b, x) - p;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        // density of the beta distribution at x
        let ln_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta_ab;
        let step = f / ln_pdf.exp();
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) {
            return next;
        }
        x = next;
    }
    x
}

/// CDF of the F distribution with `df1`, `df2` degrees of freedom.
pub fn f_cdf(x: f64, df1: u32, df2: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let d1 = df1 as f64;
    let d2 = df2 as f64;
    let w = d1 * x / (d1 * x + d2);
    reg_inc_beta(d1 / 2.0, d2 / 2.0, w)
}

/// `level` quantile of the F distribution, e.g. level = 1 - alpha gives the
/// upper alpha point used by the pure-error criteria.
pub fn f_quantile(query: FQuantileQuery) -> Result<f64> {
    let FQuantileQuery { df1, df2, level } = query;
    let d1 = df1 as f64;
    let d2 = df2 as f64;
    let w = inv_reg_inc_beta(d1 / 2.0, d2 / 2.0, level);
    if w >= 1.0 {
        return Err(Error::Domain(format!(
            "F quantile overflow at level {level} for df ({df1}, {df2})"
        )));
    }
    Ok(d2 * w / (d1 * (1.0 - w)))
}

/// Convenience wrapper validating its arguments.
pub fn f_upper_quantile(df1: u32, df2: u32, level: f64) -> Result<f64> {
    f_quantile(FQuantileQuery::new(df1, df2, level)?)
}
