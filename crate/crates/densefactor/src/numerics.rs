//! Shared numerical kernels.
//!
//! Gaussian expectations are taken with Gauss–Hermite quadrature by default;
//! integrands built from ratios of the Gaussian tail function `H` are not
//! polynomial-like and go through adaptive Simpson on a finite window instead
//! (the standard normal weight makes tails beyond |z| = 10 negligible at the
//! 1e-14 level). The tail function ratio H'(x)/H(x) is evaluated through a
//! scaled complementary error function so that it stays accurate far into the
//! right tail where both numerator and denominator underflow.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Clamp keeping iterates strictly inside [0, 1): guards denominators of the
/// form 1 - m^p.
pub const EPS_CLAMP: f64 = 1e-12;
/// Floor for cavity variances Σ.
pub const SIGMA_MIN: f64 = 1e-12;
/// Floor for output-channel variances V.
pub const V_MIN: f64 = 1e-12;

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// How Gaussian expectations are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Gauss–Hermite node count.
    pub node_count: usize,
    /// Symmetric window for the adaptive fallback path.
    pub fallback_interval: (f64, f64),
    /// Absolute tolerance of the adaptive path.
    pub abs_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { node_count: 101, fallback_interval: (-10.0, 10.0), abs_tol: 1e-10 }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.node_count < 3 {
            return Err(Error::Config("node_count must be >= 3".into()));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::Config("abs_tol must be > 0".into()));
        }
        let (a, b) = self.fallback_interval;
        if !(a < b) || (a + b).abs() > 1e-12 * (b - a) {
            return Err(Error::Config("fallback interval must be symmetric about 0".into()));
        }
        Ok(())
    }
}

/// Gauss–Hermite nodes/weights for E_{z~N(0,1)}, via the Golub–Welsch
/// eigendecomposition of the Jacobi matrix. Returned pairs are (z_i, w_i)
/// with Σ w_i = 1 and E[f] ≈ Σ w_i f(z_i). Cached per node count.
pub fn hermite_rule(n: usize) -> Arc<Vec<(f64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&n) {
        return Arc::clone(rule);
    }
    let mut jacobi = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(jacobi);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            // Physicists' weight √π v0²; normalizing by √π and substituting
            // z = √2 x yields the probabilists' rule directly.
            (std::f64::consts::SQRT_2 * x, v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let arc = Arc::new(rule);
    cache.lock().unwrap().insert(n, Arc::clone(&arc));
    arc
}

/// E_{z~N(0,1)}[f(z)] by Gauss–Hermite quadrature.
pub fn std_gauss_expect(f: impl Fn(f64) -> f64, spec: &QuadratureSpec) -> Result<f64> {
    spec.validate()?;
    let rule = hermite_rule(spec.node_count);
    let mut acc = 0.0;
    for &(z, w) in rule.iter() {
        let fz = f(z);
        if !fz.is_finite() {
            return Err(Error::NonFinite {
                context: "std_gauss_expect",
                detail: format!("f({z}) = {fz}"),
            });
        }
        acc += w * fz;
    }
    Ok(acc)
}

/// E_{z~N(0,1)}[f(z)] by adaptive Simpson on the fallback window. Used for
/// integrands containing H-function ratios and as the independent oracle in
/// tests.
pub fn gauss_expect_adaptive(f: impl Fn(f64) -> f64, spec: &QuadratureSpec) -> Result<f64> {
    spec.validate()?;
    let (a, b) = spec.fallback_interval;
    adaptive_simpson(|z| f(z) * (-0.5 * z * z).exp() / SQRT_2PI, a, b, spec.abs_tol)
}

/// Adaptive Simpson integration of `f` over [a, b] to absolute tolerance.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_DEPTH: u32 = 48;
    const MIN_DEPTH: u32 = 8;
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        if !flm.is_finite() || !frm.is_finite() {
            return Err(Error::NonFinite {
                context: "adaptive_simpson",
                detail: format!("f({lm}) = {flm}, f({rm}) = {frm}"),
            });
        }
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        // The first levels are forced: on a wide window a coarse Simpson pair
        // can agree at zero while straddling a narrow bump.
        if depth == 0 || (depth <= MAX_DEPTH - MIN_DEPTH && delta.abs() <= 15.0 * tol) {
            return Ok(left + right + delta / 15.0);
        }
        let l = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
        let r = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
        Ok(l + r)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    if !fa.is_finite() || !fm.is_finite() || !fb.is_finite() {
        return Err(Error::NonFinite {
            context: "adaptive_simpson",
            detail: "endpoint or midpoint evaluation".into(),
        });
    }
    let whole = simpson(fa, fm, fb, a, b);
    recurse(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

/// Scaled complementary error function e^{t²} erfc(t) for t ≥ 0, by the
/// Laplace continued fraction √π e^{t²} erfc(t) = 1/(t+ (1/2)/(t+ 1/(t+ ...))).
/// Accurate for t ≳ 2; callers branch to plain erfc below that.
fn erfcx_large(t: f64) -> f64 {
    // Modified Lentz evaluation of the continued fraction.
    let tiny = 1e-300;
    let mut c = tiny;
    let mut d = 0.0_f64;
    let mut h = tiny;
    let mut n = 0u32;
    loop {
        let (an, bn) = if n == 0 { (1.0, t) } else { (n as f64 / 2.0, t) };
        d = bn + an * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = bn + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        h *= delta;
        n += 1;
        if (delta - 1.0).abs() < 1e-16 || n > 300 {
            break;
        }
    }
    FRAC_1_SQRT_PI * h
}

fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Gaussian tail function H(x) = ½ erfc(x/√2) = P(z > x).
pub fn h_func(x: f64) -> f64 {
    let h = 0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2);
    if h > 0.0 {
        h
    } else {
        // erfc underflowed (x ≳ 38); return the smallest positive value so the
        // codomain (0, 1) is preserved. Log-scale callers use ln_h instead.
        f64::MIN_POSITIVE
    }
}

/// ln H(x), stable for large positive x.
pub fn ln_h(x: f64) -> f64 {
    if x <= 4.0 {
        h_func(x).ln()
    } else {
        // H(x) = φ(x) / (-h_log_deriv(x))
        -0.5 * x * x - SQRT_2PI.ln() - (-h_log_deriv(x)).ln()
    }
}

/// H'(x)/H(x) = -φ(x)/H(x), strictly negative and decreasing.
pub fn h_log_deriv(x: f64) -> f64 {
    if x <= 4.0 {
        -phi_pdf(x) / h_func(x)
    } else {
        // -φ/H = -√(2/π) / erfcx(x/√2); erfcx via continued fraction keeps the
        // ratio accurate where φ and H individually underflow.
        -(2.0 / std::f64::consts::PI).sqrt() / erfcx_large(x / std::f64::consts::SQRT_2)
    }
}

/// Outcome of a damped fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointResult {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

/// Iterate x ← x + η (map(x) - x), with iterates clamped to [0, 1 - EPS_CLAMP].
/// Residual is |map(x) - x| at the returned point.
pub fn damped_fixed_point(
    map: impl Fn(f64) -> f64,
    x0: f64,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointResult> {
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::Config(format!("damping {damping} not in (0, 1]")));
    }
    let clamp = |x: f64| x.clamp(0.0, 1.0 - EPS_CLAMP);
    let mut x = clamp(x0);
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let fx = map(x);
        if !fx.is_finite() {
            return Err(Error::NonFinite {
                context: "damped_fixed_point",
                detail: format!("map({x}) = {fx} at iteration {it}"),
            });
        }
        residual = (fx - x).abs();
        if residual <= tol {
            return Ok(FixedPointResult { value: x, iterations: it, converged: true, residual });
        }
        x = clamp(x + damping * (fx - x));
    }
    Ok(FixedPointResult { value: x, iterations: max_iter, converged: false, residual })
}

/// Bisection root finder. Requires a sign change over [lo, hi]; the returned
/// midpoint satisfies interval-width < tol (or an exact zero was hit).
pub fn bracket_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let (mut fa, fb) = (f(a), f(b));
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::NonFinite {
            context: "bracket_root",
            detail: format!("f({a}) = {fa}, f({b}) = {fb}"),
        });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::Bracket { lo: a, hi: b, f_lo: fa, f_hi: fb });
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a).abs() < tol || m == a || m == b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fa * fm < 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    Ok(0.5 * (a + b))
}
