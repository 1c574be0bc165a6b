//! Differential-inequality checks on sampled functions `h: [0,1] → R` and generators of
//! admissible test functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

/// Threshold (relative to the neighbouring median) above which a second difference is a kink.
pub const KINK_RATIO: f64 = 50.0;
/// Ratios between this and [`KINK_RATIO`] are reported as ambiguous.
pub const AMBIGUOUS_RATIO: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffIneqCheck {
    pub n_samples: usize,
    /// Times flagged as non-differentiability points.
    pub kinks: Vec<f64>,
    pub c: f64,
    /// Coefficient of `|ḣ|` in the hypothesis.
    pub big_c: f64,
    pub eps: Option<f64>,
    pub hypothesis_ok: bool,
    pub conclusion_ok: bool,
    /// Kink detection met a spike it could not classify.
    pub inconclusive: bool,
    /// Largest amount by which the hypothesis fails off kinks (0 when it holds).
    pub hypothesis_defect: f64,
    /// Largest `h − bound` over the samples.
    pub conclusion_excess: f64,
    pub bound_curve: Vec<f64>,
    /// `‖h‖_∞ ≤ ε/3` when the ε-part applies.
    pub eps_part: Option<bool>,
    pub tolerance: f64,
}

impl DiffIneqCheck {
    /// The hypothesis holds but the conclusion fails.
    pub fn is_falsification(&self) -> bool {
        self.hypothesis_ok && (!self.conclusion_ok || self.eps_part == Some(false))
    }
}

/// Centered first and second differences on a uniform grid (one-sided at the ends).
pub fn finite_differences(t: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let dt = t[1] - t[0];
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 0..n {
        let (a, b) = match i {
            0 => (0, 2),
            _ if i == n - 1 => (n - 3, n - 1),
            _ => (i - 1, i + 1),
        };
        let m = (a + b) / 2;
        d1[i] = if i == 0 {
            (h[1] - h[0]) / dt
        } else if i == n - 1 {
            (h[n - 1] - h[n - 2]) / dt
        } else {
            (h[b] - h[a]) / (2.0 * dt)
        };
        d2[i] = (h[b] - 2.0 * h[m] + h[a]) / (dt * dt);
    }
    (d1, d2)
}

/// Kink indices by comparing `|Δ²h|` with the median over a ±5 window; the flag reports
/// spikes in the ambiguous band.
pub fn detect_kinks(h: &[f64]) -> (Vec<usize>, bool) {
    let n = h.len();
    let d2: Vec<f64> = (0..n)
        .map(|i| {
            if i == 0 || i == n - 1 {
                0.0
            } else {
                (h[i + 1] - 2.0 * h[i] + h[i - 1]).abs()
            }
        })
        .collect();
    let scale = d2.iter().cloned().fold(0.0, f64::max);
    let floor = 1e-12 + 1e-9 * scale;
    let mut kinks = Vec::new();
    let mut ambiguous = false;
    for i in 1..n.saturating_sub(1) {
        let lo = i.saturating_sub(5).max(1);
        let hi = (i + 5).min(n - 2);
        let mut nb: Vec<f64> = (lo..=hi).filter(|&j| j + 1 < i || j > i + 1).map(|j| d2[j]).collect();
        if nb.is_empty() {
            continue;
        }
        nb.sort_by(f64::total_cmp);
        let med = nb[nb.len() / 2];
        let r = d2[i] / (med + floor);
        if r > KINK_RATIO {
            kinks.push(i);
        } else if r > AMBIGUOUS_RATIO && d2[i] > 1e3 * floor {
            ambiguous = true;
        }
    }
    (kinks, ambiguous)
}

fn check_generic(
    t: &[f64],
    h: &[f64],
    c: f64,
    big_c: f64,
    sign: f64,
    bound: &dyn Fn(f64) -> f64,
    tol: f64,
) -> Result<DiffIneqCheck> {
    let n = h.len();
    if n < 5 || t.len() != n {
        return Err(GeoError::Precondition("need at least 5 matching samples".into()));
    }
    if h[0].abs() > tol || h[n - 1].abs() > tol {
        return Err(GeoError::Precondition(format!(
            "h must vanish at the endpoints (h(0) = {:.3e}, h(1) = {:.3e})",
            h[0],
            h[n - 1]
        )));
    }
    let (d1, d2) = finite_differences(t, h);
    let (kinks, inconclusive) = detect_kinks(h);
    let mut excluded = vec![false; n];
    for &k in &kinks {
        for j in k.saturating_sub(2)..=(k + 2).min(n - 1) {
            excluded[j] = true;
        }
    }
    let dt = t[1] - t[0];
    let mut defect: f64 = 0.0;
    for i in 2..n - 2 {
        if excluded[i] {
            continue;
        }
        // truncation of the centered differences from higher differences; the loose factor
        // covers the jump of the third derivative where ḣ changes sign
        let d3 = (h[i + 2] - 2.0 * h[i + 1] + 2.0 * h[i - 1] - h[i - 2]) / 2.0;
        let d4 = h[i + 2] - 4.0 * h[i + 1] + 6.0 * h[i] - 4.0 * h[i - 1] + h[i - 2];
        let slack = d4.abs() / (dt * dt) + big_c * d3.abs() / dt;
        // hypothesis: ḧ ≥ −C|ḣ| + sign·c
        let rhs = -big_c * d1[i].abs() + sign * c;
        defect = defect.max(rhs - d2[i] - slack);
    }
    let htol = 1e-4 * (1.0 + c);
    let bound_curve: Vec<f64> = t.iter().map(|&s| bound(s)).collect();
    let excess = h
        .iter()
        .zip(&bound_curve)
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DiffIneqCheck {
        n_samples: n,
        kinks: kinks.iter().map(|&k| t[k]).collect(),
        c,
        big_c,
        eps: None,
        hypothesis_ok: defect <= htol,
        conclusion_ok: excess <= tol,
        inconclusive,
        hypothesis_defect: defect.max(0.0),
        conclusion_excess: excess,
        bound_curve,
        eps_part: None,
        tolerance: tol,
    })
}

fn check_nonnegative(h: &[f64], tol: f64) -> Result<()> {
    let m = h.iter().cloned().fold(f64::INFINITY, f64::min);
    if m < -tol {
        return Err(GeoError::Precondition(format!("h must be nonnegative, min {m:.3e}")));
    }
    Ok(())
}

/// Hypothesis `ḧ ≥ −|ḣ| − c` off kinks; conclusion `h ≤ c t(1−t)`, and `‖h‖_∞ ≤ ε/3` when
/// `c ≤ ‖h‖_∞ + ε`.
pub fn check_lemineq(t: &[f64], h: &[f64], c: f64, eps: Option<f64>, tol: f64) -> Result<DiffIneqCheck> {
    check_nonnegative(h, tol)?;
    let mut r = check_generic(t, h, c, 1.0, -1.0, &|s| c * s * (1.0 - s), tol)?;
    if let Some(e) = eps {
        r.eps = Some(e);
        let sup = h.iter().cloned().fold(0.0, f64::max);
        if c <= sup + e {
            r.eps_part = Some(sup <= e / 3.0 + tol);
        }
    }
    Ok(r)
}

/// Hypothesis `ḧ ≥ −C|ḣ| − c`; conclusion `h ≤ 4 c e^{1+C} t(1−t)`.
pub fn check_lemineqbis(t: &[f64], h: &[f64], c: f64, big_c: f64, tol: f64) -> Result<DiffIneqCheck> {
    check_nonnegative(h, tol)?;
    let k = 4.0 * c * (1.0 + big_c).exp();
    check_generic(t, h, c, big_c, -1.0, &|s| k * s * (1.0 - s), tol)
}

/// Both readings of the concave variant: hypothesis `ḧ ≥ −C|ḣ| + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcaveVariantCheck {
    /// Conclusion `h ≤ −4 c e^{1+C} t(1−t)` as displayed.
    pub literal: DiffIneqCheck,
    /// Conclusion `h ≤ −c t(1−t) / (4 e^{1+C})`.
    pub corrected: DiffIneqCheck,
}

pub fn check_lemineqbism(t: &[f64], h: &[f64], c: f64, big_c: f64, tol: f64) -> Result<ConcaveVariantCheck> {
    let k_lit = 4.0 * c * (1.0 + big_c).exp();
    let k_cor = c / (4.0 * (1.0 + big_c).exp());
    Ok(ConcaveVariantCheck {
        literal: check_generic(t, h, c, big_c, 1.0, &|s| -k_lit * s * (1.0 - s), tol)?,
        corrected: check_generic(t, h, c, big_c, 1.0, &|s| -k_cor * s * (1.0 - s), tol)?,
    })
}

/// Which inequality a generated function is admissible for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `ḧ = −|ḣ| − c + ζ`, `h ≥ 0`.
    Lemineq,
    /// `ḧ = −C|ḣ| − c + ζ`, `h ≥ 0`.
    Lemineqbis,
    /// `ḧ = −C|ḣ| + c + ζ`.
    Concave,
}

/// A generated function on the uniform grid with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedH {
    pub t: Vec<f64>,
    pub h: Vec<f64>,
    pub c: f64,
    pub big_c: f64,
    pub kinks: Vec<f64>,
}

struct Forcing {
    bumps: Vec<(f64, f64, f64)>,
}

impl Forcing {
    fn at(&self, t: f64) -> f64 {
        self.bumps
            .iter()
            .map(|&(a, m, w)| a * (-((t - m) / w).powi(2)).exp())
            .sum()
    }
}

/// Integrate `ḧ = −C|ḣ| + sign·c + ζ(t)` from `h(0) = 0, ḣ(0) = s` with upward jumps of `ḣ`
/// at the kink nodes; returns the grid values.
fn integrate_h(n: usize, s: f64, c: f64, big_c: f64, sign: f64, zeta: &Forcing, kinks: &[(usize, f64)]) -> Vec<f64> {
    let dt = 1.0 / (n - 1) as f64;
    let f = |t: f64, p: f64| -big_c * p.abs() + sign * c + zeta.at(t);
    let mut h = vec![0.0; n];
    let (mut y, mut p) = (0.0, s);
    for i in 0..n - 1 {
        for &(k, jump) in kinks {
            if k == i {
                p += jump;
            }
        }
        let t = i as f64 * dt;
        let (k1y, k1p) = (p, f(t, p));
        let (k2y, k2p) = (p + 0.5 * dt * k1p, f(t + 0.5 * dt, p + 0.5 * dt * k1p));
        let (k3y, k3p) = (p + 0.5 * dt * k2p, f(t + 0.5 * dt, p + 0.5 * dt * k2p));
        let (k4y, k4p) = (p + dt * k3p, f(t + dt, p + dt * k3p));
        y += dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        p += dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        h[i + 1] = y;
    }
    h
}

/// Draw an admissible function for `family` on `n` grid points; `None` when the draw breaks
/// the sign requirement.
pub fn generate_h(rng: &mut ChaCha8Rng, family: Family, n: usize, big_c: f64) -> Option<GeneratedH> {
    let c = rng.random_range(0.1..5.0);
    let n_bumps = rng.random_range(0..4);
    let bumps = (0..n_bumps)
        .map(|_| {
            (
                rng.random_range(0.0..1.5) * c,
                rng.random_range(0.0..1.0),
                rng.random_range(0.03..0.3),
            )
        })
        .collect();
    let zeta = Forcing { bumps };
    let n_kinks = rng.random_range(0..3);
    let mut kinks: Vec<(usize, f64)> = (0..n_kinks)
        .map(|_| (rng.random_range(n / 10..9 * n / 10), rng.random_range(0.0..0.5) * c))
        .collect();
    kinks.sort_by_key(|k| k.0);
    let (sign, bc) = match family {
        Family::Lemineq => (-1.0, 1.0),
        Family::Lemineqbis => (-1.0, big_c),
        Family::Concave => (1.0, big_c),
    };
    // h(1) increases with the initial slope; bracket and bisect
    let end = |s: f64| *integrate_h(n, s, c, bc, sign, &zeta, &kinks).last().unwrap();
    let (mut lo, mut hi) = (-1.0, 1.0);
    while end(lo) > 0.0 {
        lo *= 2.0;
        if lo < -1e6 {
            return None;
        }
    }
    while end(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if end(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s = if end(lo).abs() < end(hi).abs() { lo } else { hi };
    let mut h = integrate_h(n, s, c, bc, sign, &zeta, &kinks);
    *h.last_mut().unwrap() = 0.0;
    let dt = 1.0 / (n - 1) as f64;
    if family != Family::Concave && h.iter().any(|&v| v < -1e-12) {
        return None;
    }
    Some(GeneratedH {
        t: (0..n).map(|i| i as f64 * dt).collect(),
        h,
        c,
        big_c: bc,
        kinks: kinks.iter().map(|k| k.0 as f64 * dt).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub family: Family,
    pub seed: u64,
    pub trials: usize,
    pub rejected_draws: usize,
    pub hypothesis_ok: usize,
    pub conclusion_failures: usize,
    /// Concave family: failures of the displayed and of the corrected conclusion.
    pub literal_failures: Option<usize>,
    pub corrected_failures: Option<usize>,
    pub max_conclusion_excess: f64,
}

/// Run `trials` admissible draws through the matching check; `big_cs` cycles the `C` values.
pub fn run_generator(family: Family, trials: usize, seed: u64, n: usize, big_cs: &[f64]) -> Result<GeneratorReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GeneratorReport {
        family,
        seed,
        trials: 0,
        rejected_draws: 0,
        hypothesis_ok: 0,
        conclusion_failures: 0,
        literal_failures: None,
        corrected_failures: None,
        max_conclusion_excess: f64::NEG_INFINITY,
    };
    let (mut lit, mut cor) = (0, 0);
    while rep.trials < trials {
        let bc = big_cs[rep.trials % big_cs.len().max(1)];
        let Some(g) = generate_h(&mut rng, family, n, bc) else {
            rep.rejected_draws += 1;
            if rep.rejected_draws > 100 * trials {
                return Err(GeoError::Precondition("generator rejects almost every draw".into()));
            }
            continue;
        };
        rep.trials += 1;
        let tol = 1e-9;
        match family {
            Family::Lemineq | Family::Lemineqbis => {
                let r = if family == Family::Lemineq {
                    check_lemineq(&g.t, &g.h, g.c, None, tol)?
                } else {
                    check_lemineqbis(&g.t, &g.h, g.c, g.big_c, tol)?
                };
                rep.max_conclusion_excess = rep.max_conclusion_excess.max(r.conclusion_excess);
                if r.hypothesis_ok {
                    rep.hypothesis_ok += 1;
                    if !r.conclusion_ok {
                        rep.conclusion_failures += 1;
                    }
                }
            }
            Family::Concave => {
                let r = check_lemineqbism(&g.t, &g.h, g.c, g.big_c, tol)?;
                rep.max_conclusion_excess = rep.max_conclusion_excess.max(r.corrected.conclusion_excess);
                if r.corrected.hypothesis_ok {
                    rep.hypothesis_ok += 1;
                    if !r.literal.conclusion_ok {
                        lit += 1;
                    }
                    if !r.corrected.conclusion_ok {
                        cor += 1;
                    }
                }
            }
        }
    }
    if family == Family::Concave {
        rep.literal_failures = Some(lit);
        rep.corrected_failures = Some(cor);
        rep.conclusion_failures = cor;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn parabola_satisfies_lemineq() {
        let t = grid(201);
        let h: Vec<f64> = t.iter().map(|s| s * (1.0 - s)).collect();
        let r = check_lemineq(&t, &h, 2.0, None, 1e-12).unwrap();
        assert!(r.hypothesis_ok && r.conclusion_ok);
        let z = vec![0.0; 201];
        let r = check_lemineq(&t, &z, 0.0, None, 1e-12).unwrap();
        assert!(r.hypothesis_ok && r.conclusion_ok);
    }

    #[test]
    fn steep_parabola_breaks_hypothesis() {
        let t = grid(201);
        let h: Vec<f64> = t.iter().map(|s| 3.0 * s * (1.0 - s)).collect();
        let r = check_lemineq(&t, &h, 2.0, None, 1e-12).unwrap();
        assert!(!r.hypothesis_ok && !r.conclusion_ok);
        assert!((r.hypothesis_defect - 4.0).abs() < 1e-3);
    }

    #[test]
    fn parabola_satisfies_lemineqbis() {
        let t = grid(201);
        let h: Vec<f64> = t.iter().map(|s| s * (1.0 - s)).collect();
        let r = check_lemineqbis(&t, &h, 2.0, 1.0, 1e-12).unwrap();
        assert!(r.hypothesis_ok && r.conclusion_ok);
    }

    #[test]
    fn concave_variant_readings() {
        let t = grid(201);
        let h: Vec<f64> = t.iter().map(|s| -s * (1.0 - s)).collect();
        let r = check_lemineqbism(&t, &h, 2.0, 1.0, 1e-12).unwrap();
        assert!(r.literal.hypothesis_ok && r.corrected.hypothesis_ok);
        // −t(1−t) lies above −8e²t(1−t) and below −t(1−t)/(2e²)
        assert!(!r.literal.conclusion_ok);
        assert!(r.corrected.conclusion_ok);
        let z = vec![0.0; 201];
        let r = check_lemineqbism(&t, &z, 1.0, 1.0, 1e-12).unwrap();
        assert!(!r.literal.hypothesis_ok);
    }

    #[test]
    fn kink_is_detected_once() {
        let t = grid(401);
        let h: Vec<f64> = t.iter().map(|s| s.min(1.0 - s)).collect();
        let (k, _) = detect_kinks(&h);
        assert_eq!(k, vec![200]);
    }

    #[test]
    fn generated_functions_vanish_at_ends() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut got = 0;
        while got < 5 {
            if let Some(g) = generate_h(&mut rng, Family::Lemineq, 2001, 1.0) {
                assert!(g.h[0] == 0.0 && g.h[2000] == 0.0);
                assert!(g.h.iter().all(|&v| v >= -1e-12));
                got += 1;
            }
        }
    }
}
