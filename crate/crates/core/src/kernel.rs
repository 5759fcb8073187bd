//! The odd change of variable `f` defined by `f'(t) = (1 + 2 f(t)^2)^{-1/2}`,
//! `f(0) = 0`, together with a certificate of the scalar inequalities it obeys.
//!
//! `f` is not evaluated by integrating its ODE. Its inverse has the closed form
//!
//! ```text
//! f^{-1}(s) = s sqrt(1 + 2 s^2) / 2 + asinh(sqrt(2) s) / (2 sqrt(2))
//! ```
//!
//! and `f(t)` is recovered by a safeguarded Newton solve on that expression.

use serde::Serialize;

use crate::error::{Error, Result};

/// 2^{1/4}: the growth constant in `f(t) ~ 2^{1/4} sqrt(t)`.
pub const GROWTH_CONSTANT: f64 = 1.189_207_115_002_721;
const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Values of `f`, `f'` and `f''` at one argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformSample {
    pub t: f64,
    pub f: f64,
    pub fp: f64,
    pub fpp: f64,
}

impl TransformSample {
    /// Evaluates at a finite `t`. Callers in hot loops use this directly;
    /// [`f_of`] is the checked entry point.
    #[inline]
    pub fn at(t: f64) -> Self {
        let f = solve_f(t);
        let fp = 1.0 / (1.0 + 2.0 * f * f).sqrt();
        let fp2 = fp * fp;
        TransformSample {
            t,
            f,
            fp,
            fpp: -2.0 * f * fp2 * fp2,
        }
    }
}

/// asinh with a log1p form near zero so the sum in [`inv_f`] stays monotone.
#[inline]
fn asinh_stable(x: f64) -> f64 {
    let a = x.abs();
    let r = if a < 0.5 {
        let a2 = a * a;
        (a + a2 / (1.0 + (1.0 + a2).sqrt())).ln_1p()
    } else if a < 1e150 {
        (a + (a * a + 1.0).sqrt()).ln()
    } else {
        std::f64::consts::LN_2 + a.ln()
    };
    r.copysign(x)
}

#[inline]
fn inv_f_unchecked(s: f64) -> f64 {
    0.5 * s * (1.0 + 2.0 * s * s).sqrt() + asinh_stable(SQRT2 * s) / (2.0 * SQRT2)
}

/// Inverse of the change of variable.
pub fn inv_f(s: f64) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::Domain(format!("inv_f: non-finite argument {s}")));
    }
    Ok(inv_f_unchecked(s))
}

/// Checked evaluation of `f`, `f'`, `f''`.
pub fn f_of(t: f64) -> Result<TransformSample> {
    if !t.is_finite() {
        return Err(Error::Domain(format!("f_of: non-finite argument {t}")));
    }
    Ok(TransformSample::at(t))
}

/// Starting point for the Newton solve of `inv_f(s) = a`, `a > 0`.
#[inline]
fn seed(a: f64) -> f64 {
    if a < 0.5 {
        let a2 = a * a;
        a * (1.0 - a2 / 3.0 + 13.0 * a2 * a2 / 30.0)
    } else if a > 64.0 {
        let upper = GROWTH_CONSTANT * a.sqrt();
        let s2 = SQRT2 * a - 0.25 - 0.5 * asinh_stable(SQRT2 * upper);
        s2.max(1.0).sqrt()
    } else {
        a.min(GROWTH_CONSTANT * a.sqrt())
    }
}

/// Solves `inv_f(s) = |t|` for `s >= 0` and restores the sign.
#[inline]
fn solve_f(t: f64) -> f64 {
    let a = t.abs();
    if a == 0.0 {
        return 0.0;
    }
    let mut lo = 0.0_f64;
    let mut hi = a.max(GROWTH_CONSTANT * a.sqrt()) + 1.0;
    let mut s = seed(a).clamp(lo, hi);
    let mut last_step = f64::INFINITY;
    for _ in 0..200 {
        let r = inv_f_unchecked(s) - a;
        if r > 0.0 {
            hi = s;
        } else if r < 0.0 {
            lo = s;
        } else {
            break;
        }
        let dr = (1.0 + 2.0 * s * s).sqrt();
        let mut next = s - r / dr;
        let step = (next - s).abs();
        if step <= 4.0 * f64::EPSILON * s {
            s = next;
            break;
        }
        // Newton must stay in the bracket and keep contracting; otherwise bisect.
        if !(next > lo && next < hi) || step > 0.5 * last_step {
            next = 0.5 * (lo + hi);
        }
        last_step = (next - s).abs();
        s = next;
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    s.copysign(t)
}

// ---------------------------------------------------------------------------
// Inequality certificate
// ---------------------------------------------------------------------------

/// Default tolerance on relative margins.
pub const MARGIN_TOLERANCE: f64 = 1e-12;

/// Sample grids for [`certify_inequalities`].
#[derive(Debug, Clone, Serialize)]
pub struct SampleGrids {
    pub t: Vec<f64>,
    pub lambda: Vec<f64>,
    pub p: Vec<f64>,
}

impl SampleGrids {
    /// Log-spaced `t` over `±[1e-8, 1e8]` plus zero, `λ` over `[0, 10]`,
    /// and `p` in {4.5, 6, 9, 11.5}.
    pub fn standard() -> Self {
        let n = 1001;
        let mut t = Vec::with_capacity(2 * n + 1);
        for i in 0..n {
            let e = -8.0 + 16.0 * i as f64 / (n - 1) as f64;
            let x = 10f64.powf(e);
            t.push(x);
            t.push(-x);
        }
        t.push(0.0);
        let mut lambda: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        lambda.extend((1..=36).map(|i| 1.0 + 9.0 * i as f64 / 36.0));
        SampleGrids {
            t,
            lambda,
            p: vec![4.5, 6.0, 9.0, 11.5],
        }
    }
}

/// Evaluation knobs. `bias` adds a constant to every `f` value; it exists only
/// to exercise the failure path.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertifyOptions {
    pub tolerance: f64,
    pub bias: f64,
    /// How many positive `t` samples (evenly strided) enter the λ-dependent checks.
    pub lambda_t_samples: usize,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            tolerance: MARGIN_TOLERANCE,
            bias: 0.0,
            lambda_t_samples: 80,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SamplePoint {
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateRecord {
    pub id: &'static str,
    pub sample: SamplePoint,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalitySummary {
    pub id: &'static str,
    pub statement: &'static str,
    pub samples: usize,
    pub failures: usize,
    pub worst_margin: f64,
    pub worst_sample: Option<SamplePoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub schema_version: u32,
    pub tolerance: f64,
    pub bias: f64,
    /// Constant of the two-sided lower bound, pinned to `f(1)`.
    pub lower_bound_constant: f64,
    /// `lim f(t)/sqrt(t)`; obtained from the closed-form inverse, not quoted.
    pub growth_constant: f64,
    pub growth_constant_provenance: &'static str,
    pub total_samples: usize,
    pub all_pass: bool,
    pub summaries: Vec<InequalitySummary>,
    pub records: Vec<CertificateRecord>,
}

impl Certificate {
    /// The summary with the most negative margin, if any check failed.
    pub fn worst_offender(&self) -> Option<&InequalitySummary> {
        self.summaries
            .iter()
            .filter(|s| s.failures > 0)
            .min_by(|a, b| a.worst_margin.total_cmp(&b.worst_margin))
    }
}

/// Relative margin of `lhs <= rhs`.
fn le_margin(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (rhs - lhs) / scale
    }
}

/// Relative margin of `a >= b` for nonnegative quantities given as logs.
fn ge_margin_log(ln_a: f64, ln_b: f64) -> f64 {
    if ln_a == f64::NEG_INFINITY && ln_b == f64::NEG_INFINITY {
        return 0.0;
    }
    let d = ln_a - ln_b;
    if d >= 0.0 {
        -(-d).exp_m1()
    } else {
        d.exp_m1()
    }
}

struct Builder {
    tolerance: f64,
    records: Vec<CertificateRecord>,
    summaries: Vec<InequalitySummary>,
}

impl Builder {
    fn begin(&mut self, id: &'static str, statement: &'static str) {
        self.summaries.push(InequalitySummary {
            id,
            statement,
            samples: 0,
            failures: 0,
            worst_margin: f64::INFINITY,
            worst_sample: None,
        });
    }

    fn push(&mut self, sample: SamplePoint, margin: f64) {
        let summary = self.summaries.last_mut().expect("begin() first");
        let pass = margin >= -self.tolerance && !margin.is_nan();
        summary.samples += 1;
        if !pass {
            summary.failures += 1;
        }
        if margin < summary.worst_margin || margin.is_nan() || summary.worst_sample.is_none() {
            summary.worst_margin = margin;
            summary.worst_sample = Some(sample);
        }
        self.records.push(CertificateRecord {
            id: summary.id,
            sample,
            margin,
            pass,
        });
    }
}

fn pt(t: f64) -> SamplePoint {
    SamplePoint {
        t,
        t2: None,
        lambda: None,
        exponent: None,
    }
}

/// Checks every scalar inequality satisfied by `f` on the given samples and
/// returns one record per (inequality, sample) with its relative margin.
///
/// Monotonicity statements are certified as order checks between consecutive
/// entries of the sorted positive samples.
pub fn certify_inequalities(grids: &SampleGrids, options: CertifyOptions) -> Result<Certificate> {
    if grids.t.is_empty() || grids.lambda.is_empty() || grids.p.is_empty() {
        return Err(Error::Usage("sample lists must be non-empty".into()));
    }
    if grids.t.iter().chain(&grids.lambda).chain(&grids.p).any(|x| !x.is_finite()) {
        return Err(Error::Usage("samples must be finite".into()));
    }
    if grids.lambda.iter().any(|&l| l < 0.0) {
        return Err(Error::Usage("lambda samples must be nonnegative".into()));
    }
    if grids.p.iter().any(|&p| p <= 4.0) {
        return Err(Error::Usage("exponent samples must exceed 4".into()));
    }

    let bias = options.bias;
    let eval = |t: f64| {
        let mut s = TransformSample::at(t);
        s.f += bias;
        s
    };
    let c_lower = eval(1.0).f;

    let mut b = Builder {
        tolerance: options.tolerance,
        records: Vec::new(),
        summaries: Vec::new(),
    };

    let samples: Vec<TransformSample> = grids.t.iter().map(|&t| eval(t)).collect();

    b.begin("derivative_bounded", "|f'(t)| <= 1");
    for s in &samples {
        b.push(pt(s.t), le_margin(s.fp.abs(), 1.0));
    }

    b.begin("f_below_identity", "|f(t)| <= |t|");
    for s in &samples {
        b.push(pt(s.t), le_margin(s.f.abs(), s.t.abs()));
    }

    b.begin("small_t_ratio", "0 <= 1 - f(t)/t <= t^2/3 (so f(t)/t -> 1 as t -> 0)");
    for s in samples.iter().filter(|s| s.t != 0.0) {
        // the gap is a difference from 1, so it is measured on that scale
        let gap = 1.0 - s.f / s.t;
        let m = gap.min(s.t * s.t / 3.0 - gap);
        b.push(pt(s.t), m);
    }

    b.begin("sqrt_growth", "|f(t)| <= 2^{1/4} |t|^{1/2}");
    for s in &samples {
        b.push(pt(s.t), le_margin(s.f.abs(), GROWTH_CONSTANT * s.t.abs().sqrt()));
    }

    b.begin("derivative_sandwich", "f(t)/2 <= t f'(t) <= f(t) for t > 0, reversed for t < 0");
    for s in samples.iter().filter(|s| s.t != 0.0) {
        let (lo, mid, hi) = if s.t > 0.0 {
            (0.5 * s.f, s.t * s.fp, s.f)
        } else {
            (-0.5 * s.f, -s.t * s.fp, -s.f)
        };
        b.push(pt(s.t), le_margin(lo, mid).min(le_margin(mid, hi)));
    }

    b.begin(
        "growth_limit",
        "0 <= 2^{1/4} - f(t)/sqrt(t) <= 2^{1/4} delta(t) for t >= 1 (derived limit constant)",
    );
    for s in samples.iter().filter(|s| s.t >= 1.0) {
        let ratio = s.f / s.t.sqrt();
        let gap = GROWTH_CONSTANT - ratio;
        let delta = (0.25 + 0.5 * (1.0 + 2.0 * SQRT2 * GROWTH_CONSTANT * s.t.sqrt()).ln())
            / (SQRT2 * s.t);
        let m = le_margin(ratio, GROWTH_CONSTANT).min(le_margin(gap, GROWTH_CONSTANT * delta));
        b.push(pt(s.t), m);
    }

    b.begin(
        "two_sided_lower_bound",
        "|f(t)| >= C|t| for |t| <= 1 and |f(t)| >= C|t|^{1/2} for |t| >= 1, C = f(1)",
    );
    for s in &samples {
        let a = s.t.abs();
        let bound = if a <= 1.0 { c_lower * a } else { c_lower * a.sqrt() };
        b.push(pt(s.t), le_margin(bound, s.f.abs()));
    }

    b.begin("product_bounded", "|f(t) f'(t)| <= 2^{-1/2}");
    for s in &samples {
        b.push(pt(s.t), le_margin((s.f * s.fp).abs(), std::f64::consts::FRAC_1_SQRT_2));
    }

    b.begin("energy_sandwich", "f(t)^2/2 <= f'(t) f(t) t <= f(t)^2");
    for s in &samples {
        let f2 = s.f * s.f;
        let mid = s.fp * s.f * s.t;
        b.push(pt(s.t), le_margin(0.5 * f2, mid).min(le_margin(mid, f2)));
    }

    // Order checks on sorted positive samples.
    let mut pos: Vec<TransformSample> = samples.iter().copied().filter(|s| s.t > 0.0).collect();
    pos.sort_by(|a, b| a.t.total_cmp(&b.t));
    pos.dedup_by(|a, b| a.t == b.t);
    let pair = |a: &TransformSample, bb: &TransformSample| SamplePoint {
        t: a.t,
        t2: Some(bb.t),
        lambda: None,
        exponent: None,
    };

    b.begin("ratio_decreasing", "f(t) f'(t) / t is decreasing for t > 0");
    for w in pos.windows(2) {
        let g = |s: &TransformSample| s.f * s.fp / s.t;
        b.push(pair(&w[0], &w[1]), le_margin(g(&w[1]), g(&w[0])));
    }

    b.begin("cubic_ratio_increasing", "f(t)^3 f'(t) / t is increasing for t > 0");
    for w in pos.windows(2) {
        // log form avoids underflow of f^3 at t ~ 1e-8
        let g = |s: &TransformSample| 3.0 * s.f.ln() + s.fp.ln() - s.t.ln();
        b.push(pair(&w[0], &w[1]), ge_margin_log(g(&w[1]), g(&w[0])));
    }

    b.begin("power_ratio_increasing", "|f(t)|^{p-2} f(t) f'(t) / t is increasing for t > 0, p > 4");
    for &p in &grids.p {
        for w in pos.windows(2) {
            let g = |s: &TransformSample| (p - 1.0) * s.f.ln() + s.fp.ln() - s.t.ln();
            let mut sp = pair(&w[0], &w[1]);
            sp.exponent = Some(p);
            b.push(sp, ge_margin_log(g(&w[1]), g(&w[0])));
        }
    }

    b.begin("product_increasing", "f(t) f'(t) is increasing for t >= 0");
    for w in pos.windows(2) {
        let g = |s: &TransformSample| s.f * s.fp;
        b.push(pair(&w[0], &w[1]), le_margin(g(&w[0]), g(&w[1])));
    }

    // λ-dependent checks on a strided subset of t >= 0.
    let stride = (pos.len() / options.lambda_t_samples.max(1)).max(1);
    let mut t_lam: Vec<TransformSample> = pos.iter().step_by(stride).copied().collect();
    t_lam.insert(0, eval(0.0));
    let alphas: Vec<f64> = [1.0, 2.0].iter().chain(&grids.p).copied().collect();
    let lam_pt = |t: f64, lambda: f64, exponent: Option<f64>| SamplePoint {
        t,
        t2: None,
        lambda: Some(lambda),
        exponent,
    };

    b.begin(
        "product_scaling",
        "f(lt)f'(lt) lt <= l f(t)f'(t) t for l in [0,1]; >= for l >= 1",
    );
    for s in &t_lam {
        for &l in &grids.lambda {
            let sl = eval(l * s.t);
            let lhs = sl.f * sl.fp * l * s.t;
            let rhs = l * s.f * s.fp * s.t;
            let m = if l <= 1.0 {
                le_margin(lhs, rhs)
            } else {
                le_margin(rhs, lhs)
            };
            b.push(lam_pt(s.t, l, None), m);
        }
    }

    // compare f(lt)^a against l^a f(t)^a and l^{a/2} f(t)^a, in logs.
    let scaling: [(&'static str, &'static str, bool, f64, bool); 4] = [
        ("scaling_small_lower", "f(lt)^a >= l^a f(t)^a for l in [0,1]", false, 1.0, true),
        ("scaling_small_upper", "f(lt)^a <= l^{a/2} f(t)^a for l in [0,1]", false, 0.5, false),
        ("scaling_large_upper", "f(lt)^a <= l^a f(t)^a for l >= 1", true, 1.0, false),
        ("scaling_large_lower", "f(lt)^a >= l^{a/2} f(t)^a for l >= 1", true, 0.5, true),
    ];
    for (id, statement, large, power, ge) in scaling {
        b.begin(id, statement);
        for s in &t_lam {
            for &l in grids.lambda.iter().filter(|&&l| if large { l >= 1.0 } else { l <= 1.0 }) {
                let sl = eval(l * s.t);
                for &a in &alphas {
                    let ln_lhs = a * sl.f.ln();
                    let ln_rhs = a * power * l.ln() + a * s.f.ln();
                    let m = if ge {
                        ge_margin_log(ln_lhs, ln_rhs)
                    } else {
                        ge_margin_log(ln_rhs, ln_lhs)
                    };
                    // ln of a negative (biased) value is NaN, which fails.
                    b.push(lam_pt(s.t, l, Some(a)), m);
                }
            }
        }
    }

    let total_samples = b.records.len();
    let all_pass = b.summaries.iter().all(|s| s.failures == 0);
    Ok(Certificate {
        schema_version: 1,
        tolerance: options.tolerance,
        bias,
        lower_bound_constant: c_lower,
        growth_constant: GROWTH_CONSTANT,
        growth_constant_provenance: "derived: inv_f(s) = s^2/sqrt(2) + O(log s)",
        total_samples,
        all_pass,
        summaries: b.summaries,
        records: b.records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson quadrature of sqrt(1 + 2u^2) on [0, s].
    fn simpson_inv_f(s: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = s / n as f64;
        let g = |u: f64| (1.0 + 2.0 * u * u).sqrt();
        let mut acc = g(0.0) + g(s);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * g(i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn inv_f_matches_quadrature() {
        // frozen from high-precision quadrature
        assert_eq!(inv_f(0.0).unwrap(), 0.0);
        assert!((inv_f(1.0).unwrap() - 1.271_273_898_522_815_5).abs() < 1e-15);
        for &s in &[1e-3, 0.3, 1.0, 2.5, 17.0] {
            let q = simpson_inv_f(s, 20_000);
            let c = inv_f(s).unwrap();
            assert!((q - c).abs() <= 1e-11 * c.max(1.0), "s={s}: {q} vs {c}");
            assert_eq!(inv_f(-s).unwrap(), -c);
        }
    }

    #[test]
    fn inv_f_rejects_non_finite() {
        assert!(inv_f(f64::NAN).is_err());
        assert!(inv_f(f64::INFINITY).is_err());
        assert!(f_of(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn f_of_reference_values() {
        let z = f_of(0.0).unwrap();
        assert_eq!((z.f, z.fp, z.fpp), (0.0, 1.0, 0.0));
        // reference values from an independent high-precision root solve
        for (t, f) in [
            (0.5, 0.467_821_659_070_568_3),
            (1.0, 0.834_424_741_483_279_3),
            (2.0, 1.372_790_812_137_726_5),
            (10.0, 3.568_442_273_449_436_5),
        ] {
            let s = f_of(t).unwrap();
            assert!((s.f - f).abs() <= 2e-15 * f, "t={t}: {} vs {f}", s.f);
            let n = f_of(-t).unwrap();
            assert_eq!(n.f, -s.f);
            assert_eq!(n.fp, s.fp);
            assert_eq!(n.fpp, -s.fpp);
        }
    }

    #[test]
    fn limits_at_zero_and_infinity() {
        let s = f_of(1e-8).unwrap();
        assert!((s.f / 1e-8 - 1.0).abs() < 1e-6);
        let big = f_of(1e8).unwrap();
        let ratio = big.f / 1e4;
        assert!((ratio - GROWTH_CONSTANT).abs() < 1e-4);
        // high-precision quadrature root gives f(1e8)/1e4 = 1.18920709203921...
        assert!((ratio - 1.189_207_092_039_210_6).abs() < 1e-13);
    }

    #[test]
    fn growth_constant_by_quadrature() {
        // inv_f at s = a * sqrt(T) computed by brute quadrature should be ~T.
        let t: f64 = 1e6;
        let s = GROWTH_CONSTANT * t.sqrt();
        let q = simpson_inv_f(s, 400_000);
        assert!((q / t - 1.0).abs() < 1e-4, "{q}");
        assert!((GROWTH_CONSTANT - 2f64.powf(0.25)).abs() < 1e-15);
    }

    #[test]
    fn root_solve_accuracy() {
        for e in -80..=80 {
            let t = 10f64.powf(e as f64 / 10.0);
            let s = TransformSample::at(t);
            let back = inv_f(s.f).unwrap();
            assert!((back - t).abs() <= 1e-12 * t.max(1.0), "t={t}");
            assert!((s.fpp + 2.0 * s.f * s.fp.powi(4)).abs() <= 1e-15 * s.fpp.abs().max(1e-300));
        }
    }

    #[test]
    fn stable_asinh_agrees_with_std() {
        for &x in &[1e-300, 1e-9, 0.1, 0.49, 0.5, 3.0, 1e10, -2.0] {
            let a = asinh_stable(x);
            assert!((a - x.asinh()).abs() <= 4.0 * f64::EPSILON * a.abs(), "x={x}");
        }
    }

    #[test]
    fn energy_sandwich_at_one() {
        let s = f_of(1.0).unwrap();
        assert!(s.f * s.f / 2.0 <= s.f * s.fp && s.f * s.fp <= s.f * s.f);
    }

    #[test]
    fn power_ratio_example() {
        // p = 5: |f|^{3} f f' / t compared at t = 0.5 and 2
        let g = |t: f64| {
            let s = f_of(t).unwrap();
            s.f.abs().powi(3) * s.f * s.fp / t
        };
        assert!(g(0.5) < g(2.0));
    }

    #[test]
    fn certificate_passes_on_standard_grid() {
        let cert = certify_inequalities(&SampleGrids::standard(), CertifyOptions::default()).unwrap();
        for s in &cert.summaries {
            assert_eq!(s.failures, 0, "{} worst {:?} at {:?}", s.id, s.worst_margin, s.worst_sample);
        }
        assert!(cert.total_samples >= 10_000);
        assert_eq!(cert.lower_bound_constant, f_of(1.0).unwrap().f);
        // λ = 1 is an equality case of scaling_small_lower
        let eq = cert
            .records
            .iter()
            .filter(|r| r.id == "scaling_small_lower" && r.sample.lambda == Some(1.0))
            .all(|r| r.margin.abs() < 1e-15);
        assert!(eq);
    }

    #[test]
    fn bias_makes_certificate_fail() {
        let opts = CertifyOptions {
            bias: 1e-3,
            ..Default::default()
        };
        let cert = certify_inequalities(&SampleGrids::standard(), opts).unwrap();
        assert!(!cert.all_pass);
        assert!(cert.worst_offender().is_some());
    }

    #[test]
    fn empty_samples_are_usage_errors() {
        let mut g = SampleGrids::standard();
        g.t.clear();
        assert!(matches!(
            certify_inequalities(&g, CertifyOptions::default()),
            Err(Error::Usage(_))
        ));
    }
}
