//! Interaction Hamiltonian, analytic eigenvalues, dressed states and mixing
//! angles, an in-repo Jacobi eigensolver used as the numeric oracle, and
//! continuity-tracked eigenvector time series.

use serde::Serialize;

use crate::error::Error;
use crate::model::{compose_multiphoton_detunings, Grid, PulseSet};

/// Interaction Hamiltonian in the bare basis |1>..|5>: diagonal holds the
/// multi-photon detunings (0, d1..d4), off-diagonals are -Omega_i on the
/// (i, i+1) couplings. Real-symmetric since envelopes are real.
#[derive(Clone, Copy, Debug)]
pub struct Hamiltonian5 {
    m: [[f64; 5]; 5],
}

impl Hamiltonian5 {
    pub fn from_parts(delta: [f64; 4], omega: [f64; 4]) -> Self {
        let mut m = [[0.0; 5]; 5];
        for i in 0..4 {
            m[i + 1][i + 1] = delta[i];
            m[i][i + 1] = -omega[i];
            m[i + 1][i] = -omega[i];
        }
        Self { m }
    }

    pub fn matrix(&self) -> &[[f64; 5]; 5] {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        (0..5).map(|i| self.m[i][i]).sum()
    }

    /// Max row sum; cheap upper bound for the spectral radius.
    pub fn norm_inf(&self) -> f64 {
        self.m
            .iter()
            .map(|row| row.iter().map(|v| v.abs()).sum())
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, v: &[f64; 5]) -> [f64; 5] {
        std::array::from_fn(|i| (0..5).map(|j| self.m[i][j] * v[j]).sum())
    }
}

/// Evaluate the Hamiltonian for a pulse set at time `tau`.
pub fn build_hamiltonian(pulses: &PulseSet, tau: f64) -> Hamiltonian5 {
    let delta = compose_multiphoton_detunings(pulses.scheme, pulses.detunings);
    Hamiltonian5::from_parts(delta, pulses.omega_at(tau))
}

/// Quadratic-factor parameters of the characteristic polynomial under full
/// two-photon resonance: x^2 - os2*x + v4 = 0 with x = lambda*(lambda-Delta).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CharPolyParams {
    /// Omega_1^2 + Omega_2^2 + Omega_3^2 + Omega_4^2
    pub os2: f64,
    /// Omega_2^2 Omega_4^2 + Omega_1^2 Omega_3^2 + Omega_1^2 Omega_4^2
    pub v4: f64,
    /// Smaller root.
    pub x1: f64,
    /// Larger root.
    pub x2: f64,
}

impl CharPolyParams {
    pub fn new(omega: [f64; 4]) -> Result<Self, Error> {
        if let Some(&w) = omega.iter().find(|&&w| w < 0.0) {
            return Err(Error::NegativeRabi(w));
        }
        let [a, b, c, d] = omega.map(|w| w * w);
        let os2 = a + b + c + d;
        let v4 = b * d + a * c + a * d;
        // os2^2 - 4 v4 rewritten as a sum of squares, so the discriminant is
        // nonnegative by construction even in floating point:
        // ((a+b) - (c+d))^2 + 4 b c
        let disc = {
            let s = (a + b) - (c + d);
            s * s + 4.0 * b * c
        };
        let x2 = 0.5 * (os2 + disc.sqrt());
        let x1 = if x2 > 0.0 { v4 / x2 } else { 0.0 };
        Ok(Self { os2, v4, x1, x2 })
    }
}

/// Branch-labelled eigenvalues under two-photon resonance with common
/// detuning `delta`: index 0 is the zero branch, 1/3 come from the smaller
/// quadratic root, 2/4 from the larger.
pub fn eigenvalues_general(omega: [f64; 4], delta: f64) -> Result<[f64; 5], Error> {
    let p = CharPolyParams::new(omega)?;
    let r1 = (delta * delta + 4.0 * p.x1).sqrt();
    let r2 = (delta * delta + 4.0 * p.x2).sqrt();
    Ok([
        0.0,
        0.5 * (delta - r1),
        0.5 * (delta - r2),
        0.5 * (delta + r1),
        0.5 * (delta + r2),
    ])
}

/// Eigenvalues when the first and fourth envelopes coincide; the quadratic
/// roots collapse to Omega_1^2 and Omega_1^2 + Omega_2^2 + Omega_3^2.
pub fn eigenvalues_special(om1: f64, om2: f64, om3: f64, delta: f64) -> Result<[f64; 5], Error> {
    for &w in &[om1, om2, om3] {
        if w < 0.0 {
            return Err(Error::NegativeRabi(w));
        }
    }
    let x1 = om1 * om1;
    let x2 = x1 + om2 * om2 + om3 * om3;
    let r1 = (delta * delta + 4.0 * x1).sqrt();
    let r2 = (delta * delta + 4.0 * x2).sqrt();
    Ok([
        0.0,
        0.5 * (delta - r1),
        0.5 * (delta - r2),
        0.5 * (delta + r1),
        0.5 * (delta + r2),
    ])
}

/// Mixing angles of the coincident-support regime (Omega_4 = Omega_1).
///
/// Branch conventions: theta in [0, pi/2] for nonnegative envelopes;
/// phi1/phi2 = atan2(-lambda, Omega_1) in (-pi/2, pi/2]; phi evaluated in
/// the division-free form atan2(-Omega, hypot(lambda_2, Omega_1)), which
/// equals atan(-(Omega/Omega_1) cos phi2) for Omega_1 > 0 and stays finite
/// at Omega_1 = 0.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MixingAngles {
    pub theta: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub phi: f64,
    /// hypot(Omega_2, Omega_3)
    pub omega: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub fn mixing_angles(om1: f64, om2: f64, om3: f64, delta: f64) -> Result<MixingAngles, Error> {
    let lam = eigenvalues_special(om1, om2, om3, delta)?;
    let omega = f64::hypot(om2, om3);
    let theta = f64::atan2(om2, om3);
    let phi1 = f64::atan2(-lam[1], om1);
    let phi2 = f64::atan2(-lam[2], om1);
    let phi = f64::atan2(-omega, f64::hypot(lam[2], om1));
    Ok(MixingAngles {
        theta,
        phi1,
        phi2,
        phi,
        omega,
        lambda1: lam[1],
        lambda2: lam[2],
    })
}

/// Dressed state of the lambda_1 branch: a dark-like superposition of the
/// 1-2 and 5-4 two-level pairs with no |3> component.
///
/// The |2> and |4> signs are fixed so that H v = lambda_1 v holds for the
/// -Omega off-diagonal convention together with phi1 = atan2(-lambda_1,
/// Omega_1); the equivalent opposite-sign form corresponds to the opposite
/// phi1 branch.
pub fn dressed_state_lambda1(angles: &MixingAngles) -> [f64; 5] {
    let (st, ct) = angles.theta.sin_cos();
    let (s1, c1) = angles.phi1.sin_cos();
    [c1 * ct, s1 * ct, 0.0, -s1 * st, -c1 * st]
}

/// Dressed state of the lambda_2 branch: a bright-like superposition that
/// does pass through |3>. Same sign convention note as the lambda_1 state.
pub fn dressed_state_lambda2(angles: &MixingAngles) -> [f64; 5] {
    let (st, ct) = angles.theta.sin_cos();
    let (s2, c2) = angles.phi2.sin_cos();
    let (sp, cp) = angles.phi.sin_cos();
    [
        cp * c2 * st,
        cp * s2 * st,
        -sp,
        cp * s2 * ct,
        cp * c2 * ct,
    ]
}

/// Analytic eigenvector of the lambda_3 branch (partner of lambda_1 in the
/// smaller quadratic root); used to seed eigenvector tracking.
fn dressed_state_lambda3(om1: f64, theta: f64, lambda3: f64) -> [f64; 5] {
    let (st, ct) = theta.sin_cos();
    let phi3 = f64::atan2(-lambda3, om1);
    let (s3, c3) = phi3.sin_cos();
    [c3 * ct, s3 * ct, 0.0, -s3 * st, -c3 * st]
}

/// Analytic eigenvector of the lambda_4 branch (partner of lambda_2).
fn dressed_state_lambda4(om1: f64, omega: f64, theta: f64, lambda4: f64) -> [f64; 5] {
    let (st, ct) = theta.sin_cos();
    let phi4 = f64::atan2(-lambda4, om1);
    let phip = f64::atan2(-omega, f64::hypot(lambda4, om1));
    let (s4, c4) = phi4.sin_cos();
    let (sp, cp) = phip.sin_cos();
    [
        cp * c4 * st,
        cp * s4 * st,
        -sp,
        cp * s4 * ct,
        cp * c4 * ct,
    ]
}

/// Zero-branch (dark) eigenvector, nonzero only on |1>, |3>, |5>. Returns
/// None in degenerate limits where the closed form collapses.
pub fn dark_state(omega: [f64; 4]) -> Option<[f64; 5]> {
    let v = [
        omega[1] * omega[3],
        0.0,
        -omega[0] * omega[3],
        0.0,
        omega[0] * omega[2],
    ];
    let n = (v.iter().map(|c| c * c).sum::<f64>()).sqrt();
    if n > 0.0 {
        Some(v.map(|c| c / n))
    } else {
        None
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a real-symmetric
/// 5x5 matrix by cyclic Jacobi rotations. Vectors are returned as rows.
pub fn numeric_eigensolve(m: &[[f64; 5]; 5]) -> Result<([f64; 5], [[f64; 5]; 5]), Error> {
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut asym: f64 = 0.0;
    for i in 0..5 {
        for j in 0..5 {
            asym = asym.max((m[i][j] - m[j][i]).abs());
        }
    }
    if asym > 1e-12 * scale {
        return Err(Error::NotHermitian(asym));
    }

    let mut a = *m;
    let mut v = [[0.0; 5]; 5];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    const MAX_SWEEPS: usize = 64;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..5)
            .flat_map(|p| (p + 1..5).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..5 {
            for q in (p + 1)..5 {
                if a[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..5 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..5 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigenNoConvergence(MAX_SWEEPS));
    }

    let mut order: [usize; 5] = [0, 1, 2, 3, 4];
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap());
    let vals = std::array::from_fn(|k| a[order[k]][order[k]]);
    let vecs = std::array::from_fn(|k| std::array::from_fn(|i| v[i][order[k]]));
    Ok((vals, vecs))
}

/// One node of a tracked eigensystem time series.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub tau: f64,
    /// Branch-labelled eigenvalues (analytic formulas).
    pub lambda: [f64; 5],
    /// Numeric eigenvectors assigned to branches, sign-fixed for continuity.
    pub vectors: [[f64; 5]; 5],
    pub mixing: MixingAngles,
}

fn dot(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    (0..5).map(|i| a[i] * b[i]).sum()
}

/// Track the five branches across the time grid: eigenvalues come from the
/// analytic labels, eigenvectors from the numeric solver matched branch by
/// branch. Within degenerate clusters vectors are assigned by maximal
/// overlap with the previous step and signs chosen so the overlap is
/// positive.
pub fn track_eigenvectors(pulses: &PulseSet, grid: &Grid) -> Result<Vec<EigenSystem>, Error> {
    let delta_multi = compose_multiphoton_detunings(pulses.scheme, pulses.detunings);
    if !crate::model::check_two_photon_resonance(delta_multi, 1e-9) {
        return Err(Error::RegimeViolated(
            "eigenvector tracking requires two-photon resonance".into(),
        ));
    }
    let delta = delta_multi[0];

    let mut out: Vec<EigenSystem> = Vec::with_capacity(grid.n_tau);
    let mut prev: Option<[[f64; 5]; 5]> = None;

    for k in 0..grid.n_tau {
        let tau = grid.tau(k);
        let omega = pulses.omega_at(tau);
        let lambda = eigenvalues_general(omega, delta)?;
        let h = build_hamiltonian(pulses, tau);
        let (nvals, nvecs) = numeric_eigensolve(h.matrix())?;

        // Reference directions for branch seeding: analytic dressed states
        // where available, bare states as the degenerate fallback.
        let reference: [[f64; 5]; 5] = {
            let mix = mixing_angles(omega[0], omega[1], omega[2], delta)?;
            let bare =
                |i: usize| -> [f64; 5] { std::array::from_fn(|j| if i == j { 1.0 } else { 0.0 }) };
            [
                dark_state(omega).unwrap_or_else(|| bare(2)),
                dressed_state_lambda1(&mix),
                dressed_state_lambda2(&mix),
                dressed_state_lambda3(omega[0], mix.theta, lambda[3]),
                dressed_state_lambda4(omega[0], mix.omega, mix.theta, lambda[4]),
            ]
        };
        let target = prev.as_ref().unwrap_or(&reference);

        // Assign each branch a distinct numeric pair: prefer eigenvalue
        // proximity, then overlap with the branch's previous vector.
        let mut used = [false; 5];
        let mut vectors = [[0.0; 5]; 5];
        let mut assigned = [usize::MAX; 5];
        let scale = 1.0 + h.norm_inf();
        for b in 0..5 {
            let mut best: Option<(usize, f64)> = None;
            let mut second_overlap = 0.0f64;
            for j in 0..5 {
                if used[j] {
                    continue;
                }
                if (nvals[j] - lambda[b]).abs() > 1e-6 * scale {
                    continue;
                }
                let ov = dot(&target[b], &nvecs[j]).abs();
                match best {
                    Some((_, cur)) if ov <= cur => second_overlap = second_overlap.max(ov),
                    _ => {
                        if let Some((_, cur)) = best {
                            second_overlap = second_overlap.max(cur);
                        }
                        best = Some((j, ov));
                    }
                }
            }
            let (j, ov) = best.ok_or(Error::DegenerateCrossing { tau, a: b, b })?;
            // Ambiguity only matters when two candidates are spectrally
            // indistinguishable and the previous vector overlaps neither
            // candidate decisively.
            if (ov - second_overlap).abs() < 1e-6 && ov < 0.5 {
                return Err(Error::DegenerateCrossing { tau, a: b, b: j });
            }
            used[j] = true;
            assigned[b] = j;
            vectors[b] = nvecs[j];
        }

        // Inside (near-)degenerate clusters the numeric basis is arbitrary;
        // realign it by projecting the branches' reference vectors onto the
        // cluster span and orthonormalizing.
        let mut visited = [false; 5];
        for b in 0..5 {
            if visited[b] {
                continue;
            }
            let cluster: Vec<usize> = (0..5)
                .filter(|&c| (lambda[c] - lambda[b]).abs() <= 1e-8 * scale)
                .collect();
            for &c in &cluster {
                visited[c] = true;
            }
            if cluster.len() < 2 {
                continue;
            }
            let span: Vec<[f64; 5]> = cluster.iter().map(|&c| nvecs[assigned[c]]).collect();
            let mut replacement: Vec<[f64; 5]> = Vec::with_capacity(cluster.len());
            for &c in &cluster {
                // project the reference onto the span
                let mut v = [0.0; 5];
                for basis in &span {
                    let w = dot(&target[c], basis);
                    for i in 0..5 {
                        v[i] += w * basis[i];
                    }
                }
                // orthogonalize against vectors already rebuilt
                for prev_v in &replacement {
                    let w = dot(&v, prev_v);
                    for i in 0..5 {
                        v[i] -= w * prev_v[i];
                    }
                }
                let n = dot(&v, &v).sqrt();
                if n < 1e-8 {
                    return Err(Error::DegenerateCrossing { tau, a: c, b: c });
                }
                replacement.push(v.map(|x| x / n));
            }
            for (idx, &c) in cluster.iter().enumerate() {
                vectors[c] = replacement[idx];
            }
        }

        for b in 0..5 {
            let sign = if dot(&target[b], &vectors[b]) < 0.0 { -1.0 } else { 1.0 };
            if sign < 0.0 {
                vectors[b] = vectors[b].map(|c| -c);
            }
        }

        let mixing = mixing_angles(omega[0], omega[1], omega[2], delta)?;
        prev = Some(vectors);
        out.push(EigenSystem {
            tau,
            lambda,
            vectors,
            mixing,
        });
    }
    Ok(out)
}
