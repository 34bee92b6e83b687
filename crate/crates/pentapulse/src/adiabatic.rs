//! Dimensionless adiabaticity margins for a single atom and for the medium,
//! with a coarse verdict used to gate (or advise against) expensive runs.
//!
//! "Much greater than 1" is operationalized as `> threshold` (default 10)
//! and "much less than 1" as `< small_threshold` (default 0.1); both are
//! configurable since the underlying conditions are inequalities without
//! stated constants.

use serde::Serialize;

use crate::eigen::CharPolyParams;
use crate::model::{PulseEnvelope, PulseSet, SUPPORT_CUTOFF};

pub const DEFAULT_MARGIN_THRESHOLD: f64 = 10.0;
pub const DEFAULT_SMALL_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Adiabatic,
    NotAdiabatic,
    /// Conditions vacuous (no pulse overlap, or zero detuning margins).
    NotApplicable,
}

/// Single-atom margins evaluated at the instant of maximal pulse overlap.
/// `m2`/`m3` divide by the detuning and are absent when it vanishes.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SingleAtomMargins {
    /// delta * T
    pub m1: f64,
    /// (Omega_2^2 + Omega_3^2) T / delta
    pub m2: Option<f64>,
    /// Omega_1^2 T / delta
    pub m3: Option<f64>,
    /// (x2 - x1) T / sqrt(delta^2 + 4 x2^2)
    pub g1: f64,
    /// sqrt(delta^2 + 4 x1) T
    pub g2: f64,
    /// x1 T / sqrt(delta^2 + 4 x1)
    pub g3_lower: Option<f64>,
    /// x2 T / sqrt(delta^2 + 4 x2)
    pub g3_upper: Option<f64>,
    /// Instant of maximal overlap the margins are evaluated at.
    pub tau_star: f64,
    /// FWHM of the narrowest envelope (the duration entering the margins).
    pub t_shortest: f64,
}

/// Medium-length factors, all linear in depth.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MediumMargins {
    /// (q x / delta) / (delta T); must stay small.
    pub f1: Option<f64>,
    /// q x / (Omega^2 T); pump-depletion scale, advisory against ~1.
    pub f2: Option<f64>,
    /// q x / delta; optical-length scale, advisory against ~1.
    pub f3: Option<f64>,
    /// Depth at which f1 reaches the small threshold.
    pub x_adiabatic: Option<f64>,
    /// Linear optical depth q x / Gamma when a relaxation width is supplied.
    pub alpha0_x: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdiabaticityReport {
    pub verdict: Verdict,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub single_atom: Option<SingleAtomMargins>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub medium: Option<MediumMargins>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub flags: Vec<String>,
}

/// Scan window wide enough that every envelope has fallen below the support
/// cut-off at both ends.
fn support_window(pulses: &PulseSet) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for env in &pulses.envelopes {
        match env {
            PulseEnvelope::Gaussian {
                amplitude,
                width_factor,
                center,
            } => {
                if *amplitude <= 0.0 {
                    continue;
                }
                let half = (-SUPPORT_CUTOFF.ln() / width_factor).sqrt();
                lo = lo.min(center - half);
                hi = hi.max(center + half);
            }
            PulseEnvelope::Tabulated { samples } => {
                lo = lo.min(samples[0].0);
                hi = hi.max(samples[samples.len() - 1].0);
            }
        }
    }
    if lo.is_finite() && hi.is_finite() && lo < hi {
        (lo, hi)
    } else {
        (-1.0, 1.0)
    }
}

/// Single-atom adiabaticity margins for a pulse set with common detuning
/// `delta`. `t_shortest` is the duration of the shortest pulse (FWHM);
/// `PulseSet::shortest_fwhm` computes it.
///
/// The overlap instant is the time maximizing the quartic coupling product;
/// the verdict gates on the three pulse-parameter margins, while the
/// eigenvalue-gap margins are reported for diagnosis.
pub fn single_atom_margins(
    pulses: &PulseSet,
    t_shortest: f64,
    delta: f64,
    threshold: f64,
) -> AdiabaticityReport {
    const SCAN: usize = 4001;
    let (lo, hi) = support_window(pulses);
    let mut tau_star = lo;
    let mut best_v4 = -1.0;
    let mut best_os2 = -1.0;
    let mut any_overlap = false;
    for k in 0..SCAN {
        let tau = lo + (hi - lo) * k as f64 / (SCAN - 1) as f64;
        let p = CharPolyParams::new(pulses.omega_at(tau)).expect("envelopes are nonnegative");
        if p.v4 > best_v4 || (best_v4 <= 0.0 && p.v4 <= 0.0 && p.os2 > best_os2) {
            if p.v4 > best_v4 {
                best_v4 = p.v4;
                tau_star = tau;
            } else if best_v4 <= 0.0 {
                tau_star = tau;
            }
            best_os2 = best_os2.max(p.os2);
        }
        if p.v4 > 0.0 {
            any_overlap = true;
        }
    }

    let omega = pulses.omega_at(tau_star);
    let p = CharPolyParams::new(omega).expect("envelopes are nonnegative");
    let t = t_shortest;

    let m1 = delta.abs() * t;
    let (m2, m3) = if delta != 0.0 {
        (
            Some((omega[1] * omega[1] + omega[2] * omega[2]) * t / delta.abs()),
            Some(omega[0] * omega[0] * t / delta.abs()),
        )
    } else {
        (None, None)
    };

    let g1_den = (delta * delta + 4.0 * p.x2 * p.x2).sqrt();
    let g1 = if g1_den > 0.0 { (p.x2 - p.x1) * t / g1_den } else { 0.0 };
    let g2 = (delta * delta + 4.0 * p.x1).sqrt() * t;
    let g3 = |x: f64| {
        let den = (delta * delta + 4.0 * x).sqrt();
        if den > 0.0 {
            Some(x * t / den)
        } else {
            None
        }
    };

    let single = SingleAtomMargins {
        m1,
        m2,
        m3,
        g1,
        g2,
        g3_lower: g3(p.x1),
        g3_upper: g3(p.x2),
        tau_star,
        t_shortest,
    };

    let verdict = if !any_overlap {
        Verdict::NotApplicable
    } else {
        let mut pass = m1 > threshold;
        if let Some(v) = m2 {
            pass &= v > threshold;
        } else {
            pass = false;
        }
        if let Some(v) = m3 {
            pass &= v > threshold;
        } else {
            pass = false;
        }
        if pass {
            Verdict::Adiabatic
        } else {
            Verdict::NotAdiabatic
        }
    };

    AdiabaticityReport {
        verdict,
        threshold,
        single_atom: Some(single),
        medium: None,
        flags: Vec::new(),
    }
}

/// Medium-length margins at depth `x` (scaled units). `omega_sq` is the
/// squared Rabi scale of the probe-carrying pair, `gamma` an optional
/// relaxation width used only to report the linear optical depth.
pub fn medium_margins(
    q: f64,
    x: f64,
    delta: f64,
    t: f64,
    omega_sq: f64,
    gamma: Option<f64>,
    small_threshold: f64,
) -> AdiabaticityReport {
    let qx = q * x;
    let f1 = (delta != 0.0 && t > 0.0).then(|| qx / (delta.abs() * delta.abs() * t));
    let f2 = (omega_sq > 0.0 && t > 0.0).then(|| qx / (omega_sq * t));
    let f3 = (delta != 0.0).then(|| qx / delta.abs());
    let x_adiabatic =
        (delta != 0.0 && t > 0.0 && q > 0.0).then(|| small_threshold * delta * delta * t / q);
    let alpha0_x = gamma.and_then(|g| (g > 0.0).then(|| qx / g));

    let mut flags = Vec::new();
    if let Some(v) = f2 {
        if v >= 1.0 {
            flags.push("pump-depletion-scale".to_string());
        }
    }
    if let Some(v) = f3 {
        if v > 1.0 {
            flags.push("optical-length-scale".to_string());
        }
    }

    let verdict = match f1 {
        Some(v) if v < small_threshold => Verdict::Adiabatic,
        Some(_) => Verdict::NotAdiabatic,
        None => {
            if x == 0.0 {
                Verdict::Adiabatic
            } else {
                Verdict::NotApplicable
            }
        }
    };

    AdiabaticityReport {
        verdict,
        threshold: small_threshold,
        single_atom: None,
        medium: Some(MediumMargins {
            f1,
            f2,
            f3,
            x_adiabatic,
            alpha0_x,
        }),
        flags,
    }
}
