//! Macroscopic dynamics of the message-passing algorithms: the order
//! parameters (m, q, Q) evolve under closed update maps, with channel-side
//! "hat" coefficients computed either from closed forms (additive Gaussian
//! noise, Bayes-optimal sign) or by direct quadrature over the joint Gaussian
//! of the student belief and the teacher signal.
//!
//! The sign channel discards the signal scale entirely, so every sign-family
//! computation here canonicalizes λ to 1; the additive channel at noise level
//! Δ ≠ 1 reduces exactly to unit noise via λ → λ/Δ.

use serde::{Deserialize, Serialize};

use crate::channels::{output_score, ChannelKind, NOISELESS_THRESHOLD};
use crate::error::{Error, Result};
use crate::numerics::{gauss_expect_adaptive, hermite_rule, QuadratureSpec};
use crate::replica::{sign_overlap_integral, tanh_moments, ModelFamily};
use crate::trajectory::{error_metrics, Trajectory, TrajectoryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SEState {
    pub m: f64,
    pub q: f64,
    pub big_q: f64,
    /// Hat coefficients of the leading species at the last update (diagnostic).
    pub hat_chi: f64,
    pub hat_m: f64,
    pub hat_q: f64,
    /// Channel-side variance λ²(Q^p − q^p) of the leading species.
    pub v_eff: f64,
}

impl SEState {
    pub fn new(m: f64, q: f64, big_q: f64) -> Self {
        SEState { m, q, big_q, hat_chi: 0.0, hat_m: 0.0, hat_q: 0.0, v_eff: 0.0 }
    }
}

fn powm(x: f64, p: usize) -> f64 {
    x.powi(p as i32)
}

/// Exact reduction of additive noise level Δ to the unit-noise formulas.
pub fn rescale_noise(lambda: f64, noise_std: f64) -> Result<f64> {
    if noise_std < NOISELESS_THRESHOLD {
        return Err(Error::Domain(format!(
            "noise level {noise_std} too small for the unit-noise reduction λ → λ/Δ"
        )));
    }
    Ok(lambda / noise_std)
}

fn check_state(m: f64, q: f64, big_q: f64, p: usize) -> Result<()> {
    if !(m.is_finite() && q.is_finite() && big_q.is_finite()) {
        return Err(Error::NonFinite {
            context: "state_evolution",
            detail: format!("(m, q, Q) = ({m}, {q}, {big_q})"),
        });
    }
    if q > big_q + 1e-9 {
        return Err(Error::Domain(format!("q = {q} exceeds Q = {big_q}")));
    }
    if powm(m, 2 * p) > powm(q, p) + 1e-9 {
        return Err(Error::Domain(format!(
            "indefinite belief covariance: m^2p = {} > q^p = {}",
            powm(m, 2 * p),
            powm(q, p)
        )));
    }
    Ok(())
}

/// (hat_chi, hat_m, hat_q) of one species with cardinality `p`.
pub fn se_hats(
    state: &SEState,
    family: &ModelFamily,
    _alpha: f64,
    lambda: f64,
    p: usize,
    quad: &QuadratureSpec,
) -> Result<(f64, f64, f64)> {
    family.validate()?;
    let (m, q, big_q) = (state.m, state.q, state.big_q);
    check_state(m, q, big_q, p)?;
    if family.is_sign() {
        let bayes_optimal = (m - q).abs() < 1e-12 && (big_q - 1.0).abs() < 1e-12;
        if bayes_optimal {
            let v = 1.0 - powm(q, p);
            let common = 2.0 / v * sign_overlap_integral(q, p, quad)?;
            Ok((common, common, common))
        } else {
            sign_hats_general(m, q, big_q, p, quad)
        }
    } else {
        // Closed forms of the unit-noise additive channel: both response
        // coefficients collapse to θ₀ − θ₁ and the score power to θ₀.
        let l2 = lambda * lambda;
        let denom = l2 * (powm(big_q, p) - powm(q, p)) + 1.0;
        let theta0 = (l2 * (1.0 - 2.0 * powm(m, p) + powm(q, p)) + 1.0) / (denom * denom);
        let theta1 = theta0 - 1.0 / denom;
        Ok((theta0 - theta1, theta0 - theta1, theta0))
    }
}

/// Sign-channel hats away from the Bayes-optimal surface: one-dimensional
/// quadratures over the student belief ξ, after the teacher signal and its
/// sign have been integrated out analytically. λ-free (canonical λ = 1).
fn sign_hats_general(
    m: f64,
    q: f64,
    big_q: f64,
    p: usize,
    quad: &QuadratureSpec,
) -> Result<(f64, f64, f64)> {
    let c11 = powm(q, p).max(1e-14);
    let c12 = powm(m, p);
    let c22: f64 = 1.0; // teacher self-overlap Q₀ = 1
    let det = (c11 * c22 - c12 * c12).max(1e-14 * c22);
    let v = powm(big_q, p) - powm(q, p);
    // P(y = +1 | ξ) = H(−γξ); both signs folded into a factor 2 by symmetry.
    let gamma = c12 / (c11.sqrt() * det.sqrt());
    let s1 = c11.sqrt();
    let hat_chi = gauss_expect_adaptive(
        |u| {
            let xi = s1 * u;
            let (_, dg) = output_score(ChannelKind::Sign, xi, 1.0, v).expect("finite score");
            2.0 * crate::numerics::h_func(-gamma * xi) * (-dg)
        },
        quad,
    )?;
    let hat_q = gauss_expect_adaptive(
        |u| {
            let xi = s1 * u;
            let (g, _) = output_score(ChannelKind::Sign, xi, 1.0, v).expect("finite score");
            2.0 * crate::numerics::h_func(-gamma * xi) * g * g
        },
        quad,
    )?;
    // The y-jump at teacher signal zero turns the teacher derivative into a
    // boundary term on the z = 0 slice of the joint Gaussian.
    let sigma_m = (det / c22).sqrt();
    let hat_m = 2.0 / (2.0 * std::f64::consts::PI * c22).sqrt()
        * gauss_expect_adaptive(
            |u| {
                let (g, _) =
                    output_score(ChannelKind::Sign, sigma_m * u, 1.0, v).expect("finite score");
                g
            },
            quad,
        )?;
    Ok((hat_chi, hat_m, hat_q))
}

/// Raw-definition hats by tensor quadrature over (belief, teacher signal,
/// noise), used as a cross-check of every closed-form path. The teacher
/// derivative is taken by central differences for the additive channel.
pub fn se_hats_general(
    state: &SEState,
    family: &ModelFamily,
    lambda: f64,
    p: usize,
    quad: &QuadratureSpec,
) -> Result<(f64, f64, f64)> {
    family.validate()?;
    let (m, q, big_q) = (state.m, state.q, state.big_q);
    check_state(m, q, big_q, p)?;
    if family.is_sign() {
        return sign_hats_general(m, q, big_q, p, quad);
    }
    let l2 = lambda * lambda;
    let c11 = (l2 * powm(q, p)).max(1e-14);
    let c12 = l2 * powm(m, p);
    let c22 = l2; // Q₀ = 1
    let det = (c11 * c22 - c12 * c12).max(1e-14 * c22 * c22);
    let v = l2 * (powm(big_q, p) - powm(q, p));
    let channel = ChannelKind::AdditiveGaussian { noise_std: 1.0 };
    let rule = hermite_rule(quad.node_count.min(61));
    let mut hats = [0.0f64; 3];
    let h = 1e-5;
    for &(u1, w1) in rule.iter() {
        let xi = c11.sqrt() * u1;
        for &(u2, w2) in rule.iter() {
            let z = c12 / c11.sqrt() * u1 + (det / c11).sqrt() * u2;
            for &(u3, w3) in rule.iter() {
                let w = w1 * w2 * w3;
                let y = z + u3;
                let (g, dg) = output_score(channel, xi, y, v)?;
                let (gp, _) = output_score(channel, xi, y + h, v)?;
                let (gm, _) = output_score(channel, xi, y - h, v)?;
                hats[0] += w * (-dg);
                hats[1] += w * (gp - gm) / (2.0 * h);
                hats[2] += w * g * g;
            }
        }
    }
    Ok((hats[0], hats[1], hats[2]))
}

/// One update of (m, q, Q) under the macroscopic map.
pub fn se_step(
    state: &SEState,
    family: &ModelFamily,
    alpha: f64,
    lambda: f64,
    quad: &QuadratureSpec,
) -> Result<SEState> {
    family.validate()?;
    let lambda = if family.is_sign() { 1.0 } else { lambda };
    let l2 = lambda * lambda;
    let mut sc = 0.0;
    let mut sm = 0.0;
    let mut sq = 0.0;
    let mut lead_hats = (0.0, 0.0, 0.0);
    for (idx, &(p, a)) in family.species(alpha).iter().enumerate() {
        let hats = se_hats(state, family, alpha, lambda, p, quad)?;
        if idx == 0 {
            lead_hats = hats;
        }
        sc += a * l2 * powm(state.q, p - 1) * hats.0;
        sm += a * l2 * powm(state.m, p - 1) * hats.1;
        sq += a * l2 * powm(state.q, p - 1) * hats.2;
    }
    let (m_new, q_new, big_q_new) = match family {
        ModelFamily::IsingGauss { .. } => {
            let (mn, qn) = tanh_moments(sm, sq, quad)?;
            (mn, qn, 1.0)
        }
        _ => {
            // Gaussian prior closed forms.
            let denom = 1.0 + sc;
            let mn = sm / denom;
            let qn = mn * mn + sq / (denom * denom);
            (mn, qn, mn * mn + sq / (denom * denom) + 1.0 / denom)
        }
    };
    let p0 = family.leading_p();
    Ok(SEState {
        m: m_new,
        q: q_new,
        big_q: big_q_new,
        hat_chi: lead_hats.0,
        hat_m: lead_hats.1,
        hat_q: lead_hats.2,
        v_eff: l2 * (powm(big_q_new, p0) - powm(q_new, p0)),
    })
}

/// Iterate the macroscopic map from an initial (m, q, Q).
pub fn run_se(
    initial: (f64, f64, f64),
    family: &ModelFamily,
    alpha: f64,
    lambda: f64,
    max_t: usize,
    conv_tol: f64,
) -> Result<Trajectory> {
    run_se_with(initial, family, alpha, lambda, max_t, conv_tol, &se_quad())
}

pub fn se_quad() -> QuadratureSpec {
    QuadratureSpec { abs_tol: 1e-12, ..QuadratureSpec::default() }
}

pub fn run_se_with(
    initial: (f64, f64, f64),
    family: &ModelFamily,
    alpha: f64,
    lambda: f64,
    max_t: usize,
    conv_tol: f64,
    quad: &QuadratureSpec,
) -> Result<Trajectory> {
    if max_t < 1 {
        return Err(Error::Config("max_t must be >= 1".into()));
    }
    // The m = q, Q = 1 surface is preserved exactly by the map but can be
    // transversally unstable, so round-off in the full three-parameter update
    // would eventually amplify and destroy an otherwise convergent run. When
    // the start lies on the surface, pin each iterate back onto it.
    let bayes_optimal = (initial.0 - initial.1).abs() <= 1e-12 && (initial.2 - 1.0).abs() <= 1e-12;
    let lambda_eff = if family.is_sign() { 1.0 } else { lambda };
    let p0 = family.leading_p();
    let mut state = SEState::new(initial.0, initial.1, initial.2);
    let mut records = Vec::with_capacity(max_t + 1);
    let record = |t: usize, s: &SEState, d: f64| {
        let (mi, mo) = error_metrics(s.m, s.q, lambda_eff, p0);
        TrajectoryRecord { t, m: s.m, q: s.q, big_q: s.big_q, d, mse_in: mi, mse_out: mo }
    };
    records.push(record(0, &state, 0.0));
    let mut converged = false;
    let mut diverged = false;
    let mut steps = 0;
    for t in 1..=max_t {
        let mut next = match se_step(&state, family, alpha, lambda, quad) {
            Ok(s) => s,
            Err(Error::NonFinite { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if bayes_optimal {
            let s = 0.5 * (next.m + next.q);
            next.m = s;
            next.q = s;
            next.big_q = 1.0;
        }
        let d = (next.m - state.m)
            .abs()
            .max((next.q - state.q).abs())
            .max((next.big_q - state.big_q).abs());
        state = next;
        steps = t;
        records.push(record(t, &state, d));
        if !d.is_finite() {
            diverged = true;
            break;
        }
        if d <= conv_tol {
            converged = true;
            break;
        }
    }
    Ok(Trajectory { records, converged, diverged, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replica::{eos_rhs, solve_eos, ModelFamily};

    fn quad() -> QuadratureSpec {
        se_quad()
    }

    #[test]
    fn theta_identities() {
        // θ₀ at the uninformative Bayes-optimal point.
        let fam = ModelFamily::GaussGauss { p: 2 };
        for lambda in [0.5, 1.0, 2.0, 5.0] {
            let s = SEState::new(0.0, 0.0, 1.0);
            let (hc, hm, hq) = se_hats(&s, &fam, 1.0, lambda, 2, &quad()).unwrap();
            let expect = 1.0 / (1.0 + lambda * lambda);
            assert!((hq - expect).abs() < 1e-14);
            assert!((hc - expect).abs() < 1e-14 && (hm - expect).abs() < 1e-14);
        }
        // θ₁ = 0 on the whole Bayes-optimal surface.
        for p in [2usize, 3] {
            let fam = ModelFamily::GaussGauss { p };
            for m in [0.0, 0.25, 0.5, 0.9] {
                for lambda in [0.5, 1.0, 2.0, 5.0] {
                    let s = SEState::new(m, m, 1.0);
                    let (hc, hm, hq) = se_hats(&s, &fam, 1.0, lambda, p, &quad()).unwrap();
                    assert!((hq - hc).abs() < 1e-10, "p={p} m={m} λ={lambda}");
                    assert!((hq - hm).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn sign_hats_small_overlap_limit() {
        // m = q → 0⁺: the common hat tends to 2/(πV) with V = 1.
        let fam = ModelFamily::GaussSign { p: 2 };
        let s = SEState::new(1e-8, 1e-8, 1.0);
        let (hc, hm, hq) = se_hats(&s, &fam, 1.0, 1.0, 2, &quad()).unwrap();
        let expect = 2.0 / std::f64::consts::PI;
        for h in [hc, hm, hq] {
            assert!((h - expect).abs() < 1e-6, "{h} vs {expect}");
        }
    }

    #[test]
    fn ising_one_step_matches_eos_map() {
        let fam = ModelFamily::IsingGauss { p: 2 };
        let (alpha, lambda, m) = (1.6, 2.0, 0.5);
        let s = SEState::new(m, m, 1.0);
        let next = se_step(&s, &fam, alpha, lambda, &quad()).unwrap();
        let rhs = eos_rhs(&fam, m, alpha, lambda, &quad()).unwrap();
        assert!((next.m - rhs).abs() < 1e-12, "{} vs {rhs}", next.m);
        assert!((next.big_q - 1.0).abs() < 1e-15);
    }

    #[test]
    fn paramagnet_is_fixed() {
        for fam in [
            ModelFamily::IsingGauss { p: 2 },
            ModelFamily::GaussGauss { p: 3 },
            ModelFamily::GaussSign { p: 2 },
        ] {
            let traj = run_se((0.0, 0.0, 1.0), &fam, 2.0, 1.5, 5, 1e-12).unwrap();
            let last = traj.last().unwrap();
            assert!(last.m.abs() < 1e-12 && last.q.abs() < 1e-12);
            assert!((last.big_q - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_p2_converges_to_closed_form() {
        let fam = ModelFamily::GaussGauss { p: 2 };
        let traj = run_se((1.0, 1.0, 1.0), &fam, 1.5, 2.0, 10_000, 1e-12).unwrap();
        assert!(traj.converged);
        let m = traj.last().unwrap().m;
        assert!((m - 0.190_983_005_625_052_6).abs() < 1e-8, "{m}");
    }

    #[test]
    fn ising_p2_continuous_onset() {
        let fam = ModelFamily::IsingGauss { p: 2 };
        // λ* = 1/√(α−1) ≈ 1.29099 at α = 1.6.
        let below = run_se((0.01, 0.01, 1.0), &fam, 1.6, 1.2, 10_000, 1e-12).unwrap();
        assert!(below.last().unwrap().m < 1e-3, "m = {}", below.last().unwrap().m);
        let above = run_se((0.01, 0.01, 1.0), &fam, 1.6, 1.4, 10_000, 1e-10).unwrap();
        assert!(above.last().unwrap().m > 0.01, "m = {}", above.last().unwrap().m);
    }

    #[test]
    fn nishimori_surface_preserved() {
        for fam in [
            ModelFamily::IsingGauss { p: 2 },
            ModelFamily::GaussGauss { p: 3 },
            ModelFamily::GaussSign { p: 2 },
        ] {
            // Raw steps on purpose: run_se pins the surface, se_step must not.
            let mut s = SEState::new(0.3, 0.3, 1.0);
            for t in 0..100 {
                s = se_step(&s, &fam, 2.0, 1.8, &quad()).unwrap();
                assert!((s.m - s.q).abs() < 1e-8, "{fam:?} t={t}: m={} q={}", s.m, s.q);
                assert!((s.big_q - 1.0).abs() < 1e-8, "{fam:?} t={t}");
            }
        }
    }

    #[test]
    fn sign_family_ignores_lambda() {
        let fam = ModelFamily::GaussSign { p: 2 };
        let a = run_se((0.4, 0.4, 1.0), &fam, 2.0, 1.0, 50, 1e-12).unwrap();
        let b = run_se((0.4, 0.4, 1.0), &fam, 2.0, 3.0, 50, 1e-12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn general_path_matches_closed_forms() {
        // Additive channel, including off-Bayes-optimal states.
        let fam = ModelFamily::GaussGauss { p: 3 };
        for (m, q, big_q) in [(0.3, 0.3, 1.0), (0.2, 0.35, 1.1), (0.0, 0.4, 1.3)] {
            let s = SEState::new(m, q, big_q);
            let closed = se_hats(&s, &fam, 1.0, 1.7, 3, &quad()).unwrap();
            let general = se_hats_general(&s, &fam, 1.7, 3, &quad()).unwrap();
            for (c, g) in [closed.0, closed.1, closed.2].iter().zip([general.0, general.1, general.2])
            {
                assert!((c - g).abs() < 1e-6, "state ({m},{q},{big_q}): {c} vs {g}");
            }
        }
        // Sign channel: the 1-D reduction against the Bayes-optimal closed form.
        let sfam = ModelFamily::GaussSign { p: 2 };
        for q in [0.1, 0.4, 0.8] {
            let s = SEState::new(q, q, 1.0);
            let closed = se_hats(&s, &sfam, 1.0, 1.0, 2, &quad()).unwrap();
            let general = sign_hats_general(q, q, 1.0, 2, &quad()).unwrap();
            for (c, g) in [closed.0, closed.1, closed.2].iter().zip([general.0, general.1, general.2])
            {
                assert!((c - g).abs() < 1e-6, "q={q}: {c} vs {g}");
            }
        }
    }

    #[test]
    fn fixed_points_match_equation_of_state() {
        let cases: [(ModelFamily, f64, f64); 3] = [
            (ModelFamily::IsingGauss { p: 2 }, 1.6, 2.0),
            (ModelFamily::GaussGauss { p: 3 }, 5.0, 2.0),
            (ModelFamily::GaussSign { p: 2 }, 2.0, 1.0),
        ];
        for (fam, alpha, lambda) in cases {
            // The sign overlap integral is only defined for q < 1.
            let m0 = if fam.is_sign() { 0.9 } else { 1.0 };
            let traj = run_se((m0, m0, 1.0), &fam, alpha, lambda, 20_000, 1e-13).unwrap();
            assert!(traj.converged, "{fam:?}");
            let m_se = traj.last().unwrap().m;
            let eos = solve_eos(&fam, alpha, lambda).unwrap();
            let m_eos = eos.highest().map(|b| b.m).unwrap_or(0.0);
            assert!((m_se - m_eos).abs() < 1e-8, "{fam:?}: SE {m_se} vs EOS {m_eos}");
        }
    }

    #[test]
    fn noise_rescaling_guard() {
        assert!((rescale_noise(2.0, 0.5).unwrap() - 4.0).abs() < 1e-15);
        assert!(rescale_noise(2.0, 1e-300).is_err());
    }

    #[test]
    fn mixed_family_step_reduces_to_pure() {
        let mixed = ModelFamily::MixedGaussGauss { p1: 3, alpha1: 5.0, p2: 2 };
        let pure = ModelFamily::GaussGauss { p: 3 };
        let s = SEState::new(0.5, 0.5, 1.0);
        // Second species density 0 is outside solve_eos's domain but fine here.
        let a = se_step(&s, &mixed, 0.0, 2.0, &quad()).unwrap();
        let b = se_step(&s, &pure, 5.0, 2.0, &quad()).unwrap();
        assert!((a.m - b.m).abs() < 1e-13 && (a.q - b.q).abs() < 1e-13);
    }
}
