//! The analytic layer: equations of state for the macroscopic overlap m,
//! free-energy comparisons between coexisting branches, paramagnet stability,
//! spinodal and first-order transition lines, phase classification, and the
//! channel-capacity limit of the p → ∞ regime.
//!
//! All equations are at the Bayes-optimal point (student overlap q equals
//! teacher overlap m, and self-overlap Q at its fixed value), where the state
//! of the system reduces to the single scalar m.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    bracket_root, damped_fixed_point, gauss_expect_adaptive, EPS_CLAMP, QuadratureSpec,
};

/// Model family: prior/output-channel pair with interaction order(s).
/// The mixed family couples two edge cardinalities on the same variables; its
/// first species carries its own density `alpha1` while the `alpha` argument
/// of the operations below refers to the second species.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelFamily {
    /// ±1 prior, additive unit-variance Gaussian observation noise.
    IsingGauss { p: usize },
    /// Standard Gaussian prior, additive unit-variance Gaussian noise.
    GaussGauss { p: usize },
    /// Standard Gaussian prior, sign observations. All quantities are
    /// independent of the signal strength λ, which sgn() discards exactly.
    GaussSign { p: usize },
    /// Gaussian prior, additive noise, two species of interaction order.
    MixedGaussGauss { p1: usize, alpha1: f64, p2: usize },
}

impl ModelFamily {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ModelFamily::IsingGauss { p }
            | ModelFamily::GaussGauss { p }
            | ModelFamily::GaussSign { p } => p >= 2,
            ModelFamily::MixedGaussGauss { p1, alpha1, p2 } => p1 >= 2 && p2 >= 2 && alpha1 >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid model family {self:?}")))
        }
    }

    /// (p, density) per species, with `alpha` filling the unspecified slot.
    pub fn species(&self, alpha: f64) -> Vec<(usize, f64)> {
        match *self {
            ModelFamily::IsingGauss { p }
            | ModelFamily::GaussGauss { p }
            | ModelFamily::GaussSign { p } => vec![(p, alpha)],
            ModelFamily::MixedGaussGauss { p1, alpha1, p2 } => vec![(p1, alpha1), (p2, alpha)],
        }
    }

    pub fn leading_p(&self) -> usize {
        match *self {
            ModelFamily::IsingGauss { p }
            | ModelFamily::GaussGauss { p }
            | ModelFamily::GaussSign { p }
            | ModelFamily::MixedGaussGauss { p1: p, .. } => p,
        }
    }

    pub fn is_sign(&self) -> bool {
        matches!(self, ModelFamily::GaussSign { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchKind {
    Paramagnet,
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EosBranch {
    pub m: f64,
    /// Free energy relative to the paramagnet, f(m) − f(0); the dominant
    /// branch minimizes it. (Constant offsets drop out of every comparison.)
    pub free_energy: f64,
    pub kind: BranchKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EosBranches {
    /// Sorted by m; m = 0 always present.
    pub solutions: Vec<EosBranch>,
    /// Index of the minimal-free-energy solution.
    pub dominant: usize,
}

impl EosBranches {
    pub fn nonzero(&self) -> impl Iterator<Item = &EosBranch> {
        self.solutions.iter().filter(|b| b.m > 0.0)
    }

    pub fn highest(&self) -> Option<&EosBranch> {
        self.nonzero().last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionLines {
    pub lambda_star: Option<f64>,
    pub lambda_d: Option<f64>,
    pub lambda_c: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseRegion {
    /// Paramagnet locally stable (coexisting high branch possible).
    I,
    /// Paramagnet unstable; low and high branches coexist.
    II,
    /// Only the high branch survives past the low-branch spinodal.
    III,
    /// Unique magnetized branch connecting continuously to the paramagnet.
    IV,
    /// Unique (low) branch; a high branch appears only at larger λ.
    V,
    Impossible,
    Hard,
    Easy,
}

impl PhaseRegion {
    pub fn label(&self) -> &'static str {
        match self {
            PhaseRegion::I => "I",
            PhaseRegion::II => "II",
            PhaseRegion::III => "III",
            PhaseRegion::IV => "IV",
            PhaseRegion::V => "V",
            PhaseRegion::Impossible => "impossible",
            PhaseRegion::Hard => "hard",
            PhaseRegion::Easy => "easy",
        }
    }
}

fn powm(m: f64, p: usize) -> f64 {
    m.powi(p as i32)
}

fn default_quad() -> QuadratureSpec {
    QuadratureSpec { abs_tol: 1e-12, ..QuadratureSpec::default() }
}

/// Fast, lower-accuracy spec for phase scans (classification only).
fn scan_quad() -> QuadratureSpec {
    QuadratureSpec { abs_tol: 1e-8, ..QuadratureSpec::default() }
}

/// (∫Dz tanh(a + z√b), ∫Dz tanh²(a + z√b)). Shared by the equation of state
/// and the state-evolution update so the two layers agree to quadrature
/// precision, not just modeling precision.
pub(crate) fn tanh_moments(a: f64, b: f64, quad: &QuadratureSpec) -> Result<(f64, f64)> {
    if b < 0.0 {
        return Err(Error::Domain(format!("negative tanh field variance {b}")));
    }
    let s = b.sqrt();
    let m = gauss_expect_adaptive(|z| (a + s * z).tanh(), quad)?;
    let q = gauss_expect_adaptive(|z| (a + s * z).tanh().powi(2), quad)?;
    Ok((m, q))
}

fn ln_cosh(x: f64) -> f64 {
    let ax = x.abs();
    ax + (1.0 + (-2.0 * ax).exp()).ln() - std::f64::consts::LN_2
}

/// ∫Dz (H'(X))²/H(X) with X = −κz, κ = √(r/(1−r)), r = m^p: the
/// information-gain integral of sign observations at overlap m.
pub(crate) fn sign_overlap_integral(m: f64, p: usize, quad: &QuadratureSpec) -> Result<f64> {
    let r = powm(m, p);
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Domain(format!("overlap power {r} outside [0,1)")));
    }
    let kappa = (r / (1.0 - r)).sqrt();
    if kappa < 1e-12 {
        // X ≡ 0: (H'(0))²/H(0) = (1/2π)/(1/2) = 1/π.
        return Ok(std::f64::consts::FRAC_1_PI);
    }
    let integrand = |x: f64| {
        // (H'(X))²/H(X) = e^{-X²}/(2π H(X))
        (-x * x).exp() / (2.0 * std::f64::consts::PI * crate::numerics::h_func(x))
    };
    if kappa <= 12.0 {
        gauss_expect_adaptive(|z| integrand(-kappa * z), quad)
    } else {
        // Sharply peaked in z; integrate in X = −κz instead. The e^{-X²}/H(X)
        // factor decays by X ≈ ±9 and the z-Gaussian is ≈ flat there.
        let w = 10.0;
        let c = 1.0 / (kappa * (2.0 * std::f64::consts::PI).sqrt());
        crate::numerics::adaptive_simpson(
            |x| c * (-0.5 * (x / kappa).powi(2)).exp() * integrand(x),
            -w,
            w,
            quad.abs_tol,
        )
    }
}

/// ∫Dz H(X) ln H(X), X = −κz as above: observation-entropy integral of the
/// sign channel.
pub(crate) fn sign_entropy_integral(m: f64, p: usize, quad: &QuadratureSpec) -> Result<f64> {
    let r = powm(m, p);
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Domain(format!("overlap power {r} outside [0,1)")));
    }
    let kappa = (r / (1.0 - r)).sqrt();
    gauss_expect_adaptive(
        |z| {
            let x = -kappa * z;
            crate::numerics::h_func(x) * crate::numerics::ln_h(x)
        },
        quad,
    )
}

/// Effective field strength of the Ising equation of state,
/// A(m) = Σ_s α_s λ² m^{p_s−1} / (1 + λ²(1 − m^{p_s})).
fn ising_field(family: &ModelFamily, m: f64, alpha: f64, lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    family
        .species(alpha)
        .iter()
        .map(|&(p, a)| a * l2 * powm(m, p - 1) / (1.0 + l2 * (1.0 - powm(m, p))))
        .sum()
}

/// Right-hand side of the Bayes-optimal equation of state m = RHS(m).
pub fn eos_rhs(
    family: &ModelFamily,
    m: f64,
    alpha: f64,
    lambda: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    family.validate()?;
    let m = m.clamp(0.0, 1.0 - EPS_CLAMP);
    match family {
        ModelFamily::IsingGauss { .. } => {
            let a = ising_field(family, m, alpha, lambda);
            Ok(tanh_moments(a, a, quad)?.0)
        }
        ModelFamily::GaussGauss { .. } | ModelFamily::MixedGaussGauss { .. } => {
            // m/(1−m) = Σ_s α_s λ² m^{p_s−1}/(1+λ²(1−m^{p_s}))
            let s = ising_field(family, m, alpha, lambda);
            Ok(s / (1.0 + s))
        }
        ModelFamily::GaussSign { p } => {
            // m/(1−m) = 2α m^{p−1} I(m)/(1−m^p); λ-free.
            let i = sign_overlap_integral(m, *p, quad)?;
            let s = 2.0 * alpha * powm(m, p - 1) * i / (1.0 - powm(m, *p));
            Ok(s / (1.0 + s))
        }
    }
}

/// Free energy per variable component at overlap m, in the convention used by
/// each family's closed form: Ising and sign report the free energy itself
/// (Ising omits its m-independent −ln2), the Gaussian families report
/// Δf(m) = f(0) − f(m) (positive when the magnetized branch dominates).
pub fn free_energy(family: &ModelFamily, m: f64, alpha: f64, lambda: f64) -> Result<f64> {
    family.validate()?;
    if !(0.0..1.0).contains(&m) {
        return Err(Error::Domain(format!("m = {m} outside [0, 1)")));
    }
    let quad = default_quad();
    match family {
        ModelFamily::IsingGauss { p } => {
            let l2 = lambda * lambda;
            let a = ising_field(family, m, alpha, lambda);
            let s = a.max(0.0).sqrt();
            // For a − 10√a > 0 the field a + s·z is positive over the whole
            // quadrature window. Split off the linear part analytically:
            // ln cosh x = x − ln2 + ln(1 + e^{−2x}) for x > 0. The remainder
            // is O(e^{−2(a−10√a)}), so the adaptive quadrature works at its
            // absolute tolerance instead of chasing sub-epsilon relative
            // precision on an O(a) integrand.
            let entropy = if a > 110.0 {
                let rem =
                    gauss_expect_adaptive(|z| (-2.0 * (a + s * z)).exp().ln_1p(), &quad)?;
                a - std::f64::consts::LN_2 + rem
            } else {
                gauss_expect_adaptive(|z| ln_cosh(a + s * z), &quad)?
            };
            Ok(0.5 * a * (1.0 + m) - entropy
                + alpha / (2.0 * *p as f64) * (1.0 + l2 * (1.0 - powm(m, *p))).ln())
        }
        ModelFamily::GaussGauss { .. } | ModelFamily::MixedGaussGauss { .. } => {
            let l2 = lambda * lambda;
            // Coefficient α/2p: the unique choice whose stationary points
            // reproduce the equation of state, and the one consistent with
            // the Ising channel term ln((1+λ²(1−m^p))/(1+λ²)).
            let channel_term: f64 = family
                .species(alpha)
                .iter()
                .map(|&(p, a)| a / (2.0 * p as f64) * (1.0 - l2 / (1.0 + l2) * powm(m, p)).ln())
                .sum();
            Ok(0.5 * (1.0 - m).ln() + 0.5 * m - channel_term)
        }
        ModelFamily::GaussSign { p } => {
            let g = sign_entropy_integral(m, *p, &quad)?;
            Ok(-0.5 * (m + (1.0 - m).ln()) - 2.0 * alpha / *p as f64 * g)
        }
    }
}

/// f(m) − f(0) in a single convention across families: negative means the
/// magnetized branch dominates the paramagnet.
pub fn rel_free_energy(family: &ModelFamily, m: f64, alpha: f64, lambda: f64) -> Result<f64> {
    match family {
        ModelFamily::GaussGauss { .. } | ModelFamily::MixedGaussGauss { .. } => {
            Ok(-free_energy(family, m, alpha, lambda)?)
        }
        _ => Ok(free_energy(family, m, alpha, lambda)? - free_energy(family, 0.0, alpha, lambda)?),
    }
}

/// All fixed points of m = RHS(m) in [0, 1), with relative free energies.
pub fn solve_eos(family: &ModelFamily, alpha: f64, lambda: f64) -> Result<EosBranches> {
    solve_eos_with(family, alpha, lambda, &default_quad())
}

pub fn solve_eos_with(
    family: &ModelFamily,
    alpha: f64,
    lambda: f64,
    quad: &QuadratureSpec,
) -> Result<EosBranches> {
    family.validate()?;
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("alpha must be > 0, got {alpha}")));
    }
    if !(lambda > 0.0) && !family.is_sign() {
        return Err(Error::Domain(format!("lambda must be > 0, got {lambda}")));
    }
    let residual = |m: f64| eos_rhs(family, m, alpha, lambda, quad).map(|r| r - m);

    let mut roots: Vec<f64> = vec![0.0];
    // 200-point sign scan for brackets.
    let n_scan = 200usize;
    let grid: Vec<f64> =
        (0..=n_scan).map(|i| 1e-9 + (1.0 - EPS_CLAMP - 2e-9) * i as f64 / n_scan as f64).collect();
    let mut prev = residual(grid[0])?;
    for w in grid.windows(2) {
        let cur = residual(w[1])?;
        if prev == 0.0 {
            roots.push(w[0]);
        } else if prev * cur < 0.0 {
            let root = bracket_root(|m| residual(m).unwrap_or(f64::NAN), w[0], w[1], 1e-12)?;
            roots.push(root);
        }
        prev = cur;
    }
    // Saturated branch: at very large λ the map pushes m → 1 with no interior
    // sign change, leaving the fixed point at the clamp boundary.
    if prev > 0.0 {
        roots.push(1.0 - EPS_CLAMP);
    }
    // Damped iteration catches attractive points a coarse scan can miss
    // (near-tangent branches). Only needed when the scan came up empty: with
    // a bracketed nonzero root in hand the iteration can only rediscover it,
    // at critical-slowing cost near a continuous onset. Iterates that fall
    // under 1e-7 are flowing to the paramagnet (already a root) and are
    // snapped there so the iteration exits instead of crawling.
    if !roots.iter().any(|&m| m > 0.0) {
        for start in [1e-6, 0.5, 1.0 - 1e-6] {
            let fx = damped_fixed_point(
                |m| {
                    if m < 1e-7 {
                        0.0
                    } else {
                        eos_rhs(family, m, alpha, lambda, quad).unwrap_or(f64::NAN)
                    }
                },
                start,
                0.5,
                1e-13,
                20_000,
            );
            if let Ok(r) = fx {
                if r.converged {
                    roots.push(r.value);
                }
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-8);
    // Drop spurious near-zero duplicates of the paramagnet.
    roots.retain(|&m| m == 0.0 || m > 1e-7);

    let mut solutions = Vec::with_capacity(roots.len());
    let nonzero_count = roots.iter().filter(|&&m| m > 0.0).count();
    let mut seen_nonzero = 0usize;
    for &m in &roots {
        let kind = if m == 0.0 {
            BranchKind::Paramagnet
        } else {
            seen_nonzero += 1;
            if nonzero_count >= 2 && seen_nonzero == nonzero_count {
                BranchKind::High
            } else {
                BranchKind::Low
            }
        };
        let f = rel_free_energy(family, m, alpha, lambda)?;
        if !f.is_finite() {
            continue; // never fabricate a free energy for a failed branch
        }
        solutions.push(EosBranch { m, free_energy: f, kind });
    }
    let dominant = solutions
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.free_energy.partial_cmp(&b.1.free_energy).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(EosBranches { solutions, dominant })
}

/// Local stability of m = 0 and, when applicable, the instability line λ*(α).
pub fn paramagnet_stability(
    family: &ModelFamily,
    alpha: f64,
    lambda: f64,
) -> Result<(bool, Option<f64>)> {
    family.validate()?;
    match family {
        ModelFamily::GaussSign { p } => {
            // Linear coefficient of the EOS at m=0 is 2α/π for p=2.
            if *p == 2 {
                Ok((2.0 * alpha / std::f64::consts::PI < 1.0, None))
            } else {
                Ok((true, None))
            }
        }
        _ => {
            // Only a p = 2 species destabilizes the paramagnet; its
            // coefficient is α₂λ²/(1+λ²) < 1.
            let a2: f64 = family
                .species(alpha)
                .iter()
                .filter(|&&(p, _)| p == 2)
                .map(|&(_, a)| a)
                .sum();
            if a2 == 0.0 {
                return Ok((true, None));
            }
            let l2 = lambda * lambda;
            let stable = a2 * l2 / (1.0 + l2) < 1.0;
            let lambda_star = if a2 > 1.0 { Some(1.0 / (a2 - 1.0).sqrt()) } else { None };
            Ok((stable, lambda_star))
        }
    }
}

/// Largest equation-of-state residual over m ∈ (0, 1): positive iff a
/// magnetized solution exists. Coarse scan plus golden-section refinement.
fn max_residual(
    family: &ModelFamily,
    alpha: f64,
    lambda: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let res = |m: f64| eos_rhs(family, m, alpha, lambda, quad).map(|r| r - m);
    let n = 160usize;
    let mut best = f64::NEG_INFINITY;
    let mut best_i = 0usize;
    for i in 1..n {
        let m = i as f64 / n as f64 * (1.0 - EPS_CLAMP);
        let r = res(m)?;
        if r > best {
            best = r;
            best_i = i;
        }
    }
    // Golden-section around the best grid point.
    let (mut a, mut b) = (
        (best_i.saturating_sub(1)) as f64 / n as f64 * (1.0 - EPS_CLAMP),
        ((best_i + 1).min(n) as f64 / n as f64 * (1.0 - EPS_CLAMP)).min(1.0 - EPS_CLAMP),
    );
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (res(x1)?, res(x2)?);
    for _ in 0..80 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = res(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = res(x1)?;
        }
        if b - a < 1e-12 {
            break;
        }
    }
    Ok(best.max(f1.max(f2)))
}

/// Spinodal λ_d(α): smallest λ at which a magnetized solution exists.
pub fn spinodal(family: &ModelFamily, alpha: f64) -> Result<Option<f64>> {
    family.validate()?;
    if family.is_sign() {
        return Ok(None); // λ-free family: no line in the (α, λ) plane
    }
    if let ModelFamily::GaussGauss { p: 3 } = family {
        // Closed forms: m_d(α) = (α − √(α(α−3)))/3 and λ(m, α) from the
        // inverted equation of state.
        if alpha <= 3.0 {
            return Ok(None);
        }
        let md = (alpha - (alpha * (alpha - 3.0)).sqrt()) / 3.0;
        let denom = md.powi(3) - alpha * md * md + alpha * md - 1.0;
        if denom <= 0.0 {
            return Ok(None);
        }
        return Ok(Some(1.0 / denom.sqrt()));
    }
    let quad = default_quad();
    let g = |lambda: f64| max_residual(family, alpha, lambda, &quad);
    let (mut lo, mut hi) = (1e-3, 1e-3);
    if g(lo)? > 0.0 {
        return Ok(Some(0.0));
    }
    loop {
        hi *= 2.0;
        if hi > 1e6 {
            return Ok(None);
        }
        if g(hi)? > 0.0 {
            break;
        }
        lo = hi;
    }
    let root = bracket_root(|l| g(l).unwrap_or(f64::NAN), lo, hi, 1e-9)?;
    Ok(Some(root))
}

/// Thermodynamic first-order line λ_c(α): where the high branch's free energy
/// crosses the paramagnet's. Absent when the transition is continuous.
pub fn critical_line(family: &ModelFamily, alpha: f64) -> Result<Option<f64>> {
    family.validate()?;
    if family.is_sign() {
        return Ok(None);
    }
    let Some(lambda_d) = spinodal(family, alpha)? else {
        return Ok(None);
    };
    if lambda_d <= 0.0 {
        return Ok(None);
    }
    let high_rel_f = |lambda: f64| -> Result<Option<f64>> {
        let branches = solve_eos(family, alpha, lambda)?;
        Ok(branches.highest().map(|b| b.free_energy))
    };
    // Just past the spinodal the first-order high branch is metastable
    // (rel f > 0); a continuous branch is dominant immediately (rel f ≤ 0).
    let probe = lambda_d * 1.001;
    let Some(f_probe) = high_rel_f(probe)? else {
        return Ok(None);
    };
    if f_probe <= 0.0 {
        return Ok(None);
    }
    let mut hi = 10.0 * lambda_d;
    loop {
        match high_rel_f(hi)? {
            Some(f) if f < 0.0 => break,
            _ if hi > 1e6 => return Ok(None),
            _ => hi *= 2.0,
        }
    }
    let root = bracket_root(
        |l| high_rel_f(l).ok().flatten().unwrap_or(f64::NAN),
        probe,
        hi,
        1e-9 * hi.max(1.0),
    )?;
    Ok(Some(root))
}

/// Rate–capacity limit of the Ising family at p → ∞ with R = p/α fixed: the
/// first-order transition sits where the two surviving free energies cross,
/// λ_c = √(4^R − 1), at which point ½log₂(1+λ_c²) recovers R exactly.
pub fn shannon_code_limit(rate: f64) -> Result<(f64, f64)> {
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("rate must be > 0, got {rate}")));
    }
    // Crossing of f(m=0) and f(m=1): ln2 = ln(1+λ²)/(2R).
    let cross = |l: f64| std::f64::consts::LN_2 - (1.0 + l * l).ln() / (2.0 * rate);
    let hi = (4.0f64.powf(rate)).sqrt() * 2.0 + 1.0;
    let lambda_c = bracket_root(cross, 0.0, hi, 1e-13 * hi)?;
    let capacity = 0.5 * (1.0 + lambda_c * lambda_c).log2();
    Ok((lambda_c, capacity))
}

/// Does (α, λ') show low/high coexistence (≥ 2 magnetized solutions)?
fn has_coexistence(family: &ModelFamily, alpha: f64, lambda: f64) -> bool {
    solve_eos_with(family, alpha, lambda, &scan_quad())
        .map(|b| b.nonzero().count() >= 2)
        .unwrap_or(false)
}

/// Phase label at one (α, λ) point. The p = 2 Ising family uses the
/// five-region taxonomy; every other family reports
/// impossible / hard / easy.
pub fn classify_phase(family: &ModelFamily, alpha: f64, lambda: f64) -> Result<PhaseRegion> {
    family.validate()?;
    let (pm_stable, _) = paramagnet_stability(family, alpha, lambda)?;
    if matches!(family, ModelFamily::IsingGauss { p: 2 }) {
        if pm_stable {
            return Ok(PhaseRegion::I);
        }
        let branches = solve_eos_with(family, alpha, lambda, &scan_quad())?;
        if branches.nonzero().count() >= 2 {
            return Ok(PhaseRegion::II);
        }
        // Unique magnetized branch: locate any coexistence window at this α.
        let below = (1..=40).map(|i| lambda * (0.94f64).powi(i)).find(|&l| {
            !paramagnet_stability(family, alpha, l).map(|s| s.0).unwrap_or(true)
                && has_coexistence(family, alpha, l)
        });
        if below.is_some() {
            return Ok(PhaseRegion::III);
        }
        let above =
            (1..=40).map(|i| lambda * (1.25f64).powi(i)).find(|&l| has_coexistence(family, alpha, l));
        if above.is_some() {
            return Ok(PhaseRegion::V);
        }
        return Ok(PhaseRegion::IV);
    }
    if !pm_stable {
        return Ok(PhaseRegion::Easy);
    }
    let branches = solve_eos_with(family, alpha, lambda, &scan_quad())?;
    if branches.nonzero().next().is_some() {
        Ok(PhaseRegion::Hard)
    } else {
        Ok(PhaseRegion::Impossible)
    }
}

/// Threshold density of the p = 2 Ising family in the λ → ∞ limit: the fold
/// point where the low branch of the limiting equation of state
/// m = ∫Dz tanh(A+√A z), A = αm/(1−m²), disappears. Computed as the interior
/// local maximum of α(m) = A(m)(1−m²)/m with A(m) the inverse tanh map.
pub fn ising_p2_limit_threshold() -> Result<f64> {
    let quad = default_quad();
    // Invert m = ∫Dz tanh(A+√A z) for A (monotone in A).
    let field_for = |m: f64| -> Result<f64> {
        bracket_root(
            |a| tanh_moments(a, a, &quad).map(|t| t.0 - m).unwrap_or(f64::NAN),
            0.0,
            2000.0,
            1e-12,
        )
    };
    let alpha_of = |m: f64| -> Result<f64> { Ok(field_for(m)? * (1.0 - m * m) / m) };
    // Locate the first interior local maximum by coarse scan.
    let n = 200usize;
    let mut best = (0.0f64, f64::NEG_INFINITY);
    let mut prev = f64::NEG_INFINITY;
    for i in 1..n {
        let m = 0.02 + 0.9 * i as f64 / n as f64;
        let a = alpha_of(m)?;
        if a < prev {
            // passed the peak
            best = (m - 0.9 / n as f64, prev);
            break;
        }
        prev = a;
    }
    if best.1 == f64::NEG_INFINITY {
        return Err(Error::Domain("no interior maximum of the limit map".into()));
    }
    // Golden-section refine around the peak.
    let (mut a, mut b) = (best.0 - 0.05, best.0 + 0.05);
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (alpha_of(x1)?, alpha_of(x2)?);
    for _ in 0..60 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = alpha_of(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = alpha_of(x1)?;
        }
    }
    alpha_of(0.5 * (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub alpha: f64,
    pub lambda: f64,
    pub region: PhaseRegion,
    pub m_para: f64,
    pub m_low: Option<f64>,
    pub m_high: Option<f64>,
    pub f_low_minus_f_para: Option<f64>,
    pub f_high_minus_f_para: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDiagram {
    pub points: Vec<PhasePoint>,
    /// One row of transition lines per α column.
    pub lines: Vec<(f64, TransitionLines)>,
}

pub fn trace_phase_diagram(
    family: &ModelFamily,
    alpha_grid: &[f64],
    lambda_grid: &[f64],
) -> Result<PhaseDiagram> {
    family.validate()?;
    let mut points = Vec::with_capacity(alpha_grid.len() * lambda_grid.len());
    for &alpha in alpha_grid {
        for &lambda in lambda_grid {
            let region = classify_phase(family, alpha, lambda)?;
            let branches = solve_eos_with(family, alpha, lambda, &scan_quad())?;
            let nonzero: Vec<&EosBranch> = branches.nonzero().collect();
            let (low, high) = match nonzero.len() {
                0 => (None, None),
                1 => (Some(nonzero[0]), None),
                _ => (Some(nonzero[0]), Some(*nonzero.last().unwrap())),
            };
            points.push(PhasePoint {
                alpha,
                lambda,
                region,
                m_para: 0.0,
                m_low: low.map(|b| b.m),
                m_high: high.map(|b| b.m),
                f_low_minus_f_para: low.map(|b| b.free_energy),
                f_high_minus_f_para: high.map(|b| b.free_energy),
            });
        }
    }
    let mut lines = Vec::with_capacity(alpha_grid.len());
    for &alpha in alpha_grid {
        let lambda_mid = lambda_grid.get(lambda_grid.len() / 2).copied().unwrap_or(1.0);
        let (_, lambda_star) = paramagnet_stability(family, alpha, lambda_mid)?;
        let lambda_d = spinodal(family, alpha)?;
        let lambda_c = critical_line(family, alpha)?;
        lines.push((alpha, TransitionLines { lambda_star, lambda_d, lambda_c }));
    }
    Ok(PhaseDiagram { points, lines })
}

fn opt_sig(x: Option<f64>) -> String {
    x.map(crate::trajectory::sig12).unwrap_or_default()
}

impl PhaseDiagram {
    pub fn write_points_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "alpha,lambda,region,m_para,m_low,m_high,f_low_minus_f_para,f_high_minus_f_para")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                crate::trajectory::sig12(p.alpha),
                crate::trajectory::sig12(p.lambda),
                p.region.label(),
                crate::trajectory::sig12(p.m_para),
                opt_sig(p.m_low),
                opt_sig(p.m_high),
                opt_sig(p.f_low_minus_f_para),
                opt_sig(p.f_high_minus_f_para),
            )?;
        }
        Ok(())
    }

    pub fn write_lines_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "alpha,lambda_star,lambda_d,lambda_c")?;
        for (alpha, l) in &self.lines {
            writeln!(
                w,
                "{},{},{},{}",
                crate::trajectory::sig12(*alpha),
                opt_sig(l.lambda_star),
                opt_sig(l.lambda_d),
                opt_sig(l.lambda_c),
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_p2_closed_form_branch() {
        // m* = α/2 − ½√((α−2)² + 4/λ²) at α=1.5, λ=2.
        let fam = ModelFamily::GaussGauss { p: 2 };
        let b = solve_eos(&fam, 1.5, 2.0).unwrap();
        let ms: Vec<f64> = b.solutions.iter().map(|s| s.m).collect();
        assert_eq!(ms.len(), 2, "{ms:?}");
        assert_eq!(ms[0], 0.0);
        assert!((ms[1] - 0.190_983_005_625_052_6).abs() < 1e-9, "{}", ms[1]);
    }

    #[test]
    fn gaussian_p3_below_threshold_paramagnetic_only() {
        let fam = ModelFamily::GaussGauss { p: 3 };
        for lambda in [0.5, 2.0, 10.0, 100.0] {
            let b = solve_eos(&fam, 2.9, lambda).unwrap();
            assert_eq!(b.solutions.len(), 1, "λ={lambda}: {:?}", b.solutions);
        }
    }

    #[test]
    fn ising_large_lambda_polarizes() {
        // λ → ∞ with α comfortably above threshold: solutions approach {0, 1}.
        let fam = ModelFamily::IsingGauss { p: 2 };
        let b = solve_eos(&fam, 1.6, 1e3).unwrap();
        let high = b.highest().unwrap();
        assert!(high.m > 0.999, "high branch {high:?}");
    }

    #[test]
    fn ising_free_energy_values() {
        let fam = ModelFamily::IsingGauss { p: 2 };
        // m=0: f = (α/2p)ln(1+λ²).
        let f0 = free_energy(&fam, 0.0, 1.6, 2.0).unwrap();
        assert!((f0 - 1.6 / 4.0 * 5.0f64.ln()).abs() < 1e-12);
        // Easy-region magnetized branch must dominate.
        let b = solve_eos(&fam, 1.6, 2.0).unwrap();
        let high = b.highest().unwrap();
        assert!(high.free_energy < 0.0, "{high:?}");
        assert!((b.solutions[b.dominant].m - high.m).abs() < 1e-12);
    }

    #[test]
    fn gaussian_free_energy_convention() {
        let fam = ModelFamily::GaussGauss { p: 3 };
        assert_eq!(free_energy(&fam, 0.0, 5.0, 2.0).unwrap(), 0.0);
        assert!(free_energy(&fam, 1.0, 5.0, 2.0).is_err());
    }

    #[test]
    fn paramagnet_stability_lines() {
        let ig = ModelFamily::IsingGauss { p: 2 };
        let (_, ls) = paramagnet_stability(&ig, 2.0, 1.5).unwrap();
        assert!((ls.unwrap() - 1.0).abs() < 1e-14);
        let (stable_low, _) = paramagnet_stability(&ig, 2.0, 0.9).unwrap();
        let (stable_high, _) = paramagnet_stability(&ig, 2.0, 1.1).unwrap();
        assert!(stable_low && !stable_high);

        let g3 = ModelFamily::GaussGauss { p: 3 };
        assert_eq!(paramagnet_stability(&g3, 10.0, 50.0).unwrap(), (true, None));

        let mixed = ModelFamily::MixedGaussGauss { p1: 2, alpha1: 2.0, p2: 3 };
        let (_, ls) = paramagnet_stability(&mixed, 3.0, 2.0).unwrap();
        assert!((ls.unwrap() - 1.0).abs() < 1e-14);

        let sign = ModelFamily::GaussSign { p: 2 };
        let (s1, _) = paramagnet_stability(&sign, 1.5, 1.0).unwrap();
        let (s2, _) = paramagnet_stability(&sign, 1.6, 1.0).unwrap();
        assert!(s1 && !s2); // threshold π/2 ≈ 1.5708
    }

    #[test]
    fn gauss_p3_spinodal_closed_forms() {
        let fam = ModelFamily::GaussGauss { p: 3 };
        assert_eq!(spinodal(&fam, 2.5).unwrap(), None);
        let ld4 = spinodal(&fam, 4.0).unwrap().unwrap();
        assert!((ld4 - (27.0f64 / 5.0).sqrt()).abs() < 1e-12, "{ld4}");
        // √(8/(2α−7)) is the large-α approximation; its error at α=10 is
        // itself of the order of 0.5%.
        let ld10 = spinodal(&fam, 10.0).unwrap().unwrap();
        let approx = (8.0f64 / 13.0).sqrt();
        assert!((ld10 - approx).abs() / approx < 6e-3, "{ld10} vs {approx}");
    }

    #[test]
    fn gauss_p3_first_order_ordering() {
        let fam = ModelFamily::GaussGauss { p: 3 };
        let ld = spinodal(&fam, 5.0).unwrap().unwrap();
        let lc = critical_line(&fam, 5.0).unwrap().unwrap();
        assert!(ld < lc, "λ_d = {ld}, λ_c = {lc}");
        // Metastable below λ_c, dominant above.
        let below = solve_eos(&fam, 5.0, 0.5 * (ld + lc)).unwrap();
        assert!(below.highest().unwrap().free_energy > 0.0);
        let above = solve_eos(&fam, 5.0, 2.0 * lc).unwrap();
        assert!(above.highest().unwrap().free_energy < 0.0);
    }

    #[test]
    fn continuous_transition_has_no_critical_line() {
        let fam = ModelFamily::GaussGauss { p: 2 };
        assert_eq!(critical_line(&fam, 2.0).unwrap(), None);
        // ... and its spinodal coincides with the instability line 1/√(α−1).
        let ld = spinodal(&fam, 2.0).unwrap().unwrap();
        assert!((ld - 1.0).abs() < 1e-6, "{ld}");
    }

    #[test]
    fn code_limit_examples() {
        let (l1, c1) = shannon_code_limit(1.0).unwrap();
        assert!((l1 - 3.0f64.sqrt()).abs() < 1e-10);
        assert!((c1 - 1.0).abs() < 1e-10);
        let (l2, c2) = shannon_code_limit(2.0).unwrap();
        assert!((l2 - 15.0f64.sqrt()).abs() < 1e-9);
        assert!((c2 - 2.0).abs() < 1e-10);
        let (l0, _) = shannon_code_limit(1e-4).unwrap();
        assert!(l0 < 0.02);
    }

    #[test]
    fn sign_family_lambda_invariance() {
        let fam = ModelFamily::GaussSign { p: 2 };
        let a = solve_eos(&fam, 2.0, 0.5).unwrap();
        let b = solve_eos(&fam, 2.0, 1.0).unwrap();
        let c = solve_eos(&fam, 2.0, 4.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        assert!(a.nonzero().next().is_some());
    }

    #[test]
    fn sign_p2_continuous_threshold() {
        // Linear coefficient 2α/π ⇒ onset at α = π/2.
        let fam = ModelFamily::GaussSign { p: 2 };
        let just_below = solve_eos(&fam, std::f64::consts::FRAC_PI_2 * 0.98, 1.0).unwrap();
        assert_eq!(just_below.nonzero().count(), 0, "{:?}", just_below.solutions);
        let just_above = solve_eos(&fam, std::f64::consts::FRAC_PI_2 * 1.02, 1.0).unwrap();
        assert_eq!(just_above.nonzero().count(), 1);
        assert!(just_above.highest().unwrap().m < 0.1);
    }

    #[test]
    fn mixed_reduces_to_pure() {
        let mixed = ModelFamily::MixedGaussGauss { p1: 2, alpha1: 1e-300, p2: 3 };
        let pure = ModelFamily::GaussGauss { p: 3 };
        for m in [0.0, 0.3, 0.7, 0.95] {
            let quad = QuadratureSpec::default();
            let a = eos_rhs(&mixed, m, 5.0, 2.0, &quad).unwrap();
            let b = eos_rhs(&pure, m, 5.0, 2.0, &quad).unwrap();
            assert!((a - b).abs() < 1e-12, "m={m}: {a} vs {b}");
        }
    }

    #[test]
    fn ising_map_identity_tanh_vs_tanh_sq() {
        // ∫Dz tanh(A+√A z) = ∫Dz tanh²(A+√A z) on the self-consistent field.
        let quad = QuadratureSpec { abs_tol: 1e-13, ..QuadratureSpec::default() };
        for a in [0.1, 1.0, 5.0] {
            let (m1, m2) = tanh_moments(a, a, &quad).unwrap();
            assert!((m1 - m2).abs() < 1e-10, "A={a}: {m1} vs {m2}");
        }
    }

    #[test]
    fn eos_roots_survive_tighter_quadrature() {
        let fam = ModelFamily::IsingGauss { p: 2 };
        let b = solve_eos(&fam, 1.6, 2.0).unwrap();
        let tight = QuadratureSpec { abs_tol: 1e-14, ..QuadratureSpec::default() };
        for s in b.nonzero() {
            let r = eos_rhs(&fam, s.m, 1.6, 2.0, &tight).unwrap();
            assert!((r - s.m).abs() < 1e-9, "m={}: residual {}", s.m, r - s.m);
        }
    }

    #[test]
    fn pm_stability_matches_free_energy_curvature() {
        // Second derivative of f at m→0 changes sign with αλ²/(1+λ²) − 1.
        let fam = ModelFamily::IsingGauss { p: 2 };
        for (alpha, lambda) in [(2.0, 0.8), (2.0, 1.3), (1.2, 2.0), (0.8, 5.0)] {
            let (stable, _) = paramagnet_stability(&fam, alpha, lambda).unwrap();
            let h = 1e-4;
            let f0 = free_energy(&fam, 0.0, alpha, lambda).unwrap();
            let f1 = free_energy(&fam, h, alpha, lambda).unwrap();
            let f2 = free_energy(&fam, 2.0 * h, alpha, lambda).unwrap();
            let curv = (f2 - 2.0 * f1 + f0) / (h * h);
            assert_eq!(curv > 0.0, stable, "α={alpha} λ={lambda}: curvature {curv}");
        }
    }

    #[test]
    fn classify_phase_examples() {
        let ig = ModelFamily::IsingGauss { p: 2 };
        assert_eq!(classify_phase(&ig, 0.5, 3.0).unwrap(), PhaseRegion::I);
        let g2 = ModelFamily::GaussGauss { p: 2 };
        assert_eq!(classify_phase(&g2, 2.0, 0.5).unwrap(), PhaseRegion::Impossible);
        assert_eq!(classify_phase(&g2, 2.0, 1.5).unwrap(), PhaseRegion::Easy);
        let g3 = ModelFamily::GaussGauss { p: 3 };
        let ld = spinodal(&g3, 5.0).unwrap().unwrap();
        assert_eq!(classify_phase(&g3, 5.0, 1.3 * ld).unwrap(), PhaseRegion::Hard);
        assert_eq!(classify_phase(&g3, 5.0, 0.7 * ld).unwrap(), PhaseRegion::Impossible);
    }

    #[test]
    fn phase_diagram_csv_shapes() {
        let fam = ModelFamily::GaussGauss { p: 2 };
        let pd = trace_phase_diagram(&fam, &[1.5, 2.0], &[0.5, 1.5]).unwrap();
        assert_eq!(pd.points.len(), 4);
        assert_eq!(pd.lines.len(), 2);
        let mut buf = Vec::new();
        pd.write_points_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text
            .starts_with("alpha,lambda,region,m_para,m_low,m_high,f_low_minus_f_para,f_high_minus_f_para"));
        let mut buf = Vec::new();
        pd.write_lines_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("alpha,lambda_star,lambda_d,lambda_c"));
    }

    #[test]
    fn phase_boundary_straddles_instability_line() {
        // Classification flips across λ* = 1/√(α−1) within one grid cell.
        let fam = ModelFamily::GaussGauss { p: 2 };
        let alpha = 2.0;
        let grid: Vec<f64> = (1..=30).map(|i| 0.1 * i as f64).collect();
        let pd = trace_phase_diagram(&fam, &[alpha], &grid).unwrap();
        let flip = pd
            .points
            .windows(2)
            .find(|w| w[0].region != w[1].region)
            .expect("no boundary found");
        assert!(flip[0].lambda <= 1.0 && 1.0 <= flip[1].lambda + 0.1001);
    }
}
