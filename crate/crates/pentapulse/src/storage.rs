//! Writing a weak probe into the spatial coherence of the medium, the
//! consumption-depth bookkeeping, retrieval, and the double-storage
//! protocol that stores a second pulse in a second coherence of the same
//! medium.

use num_complex::Complex64 as C64;

use crate::error::Error;
use crate::medium::{propagate, FieldMap, InitialAtoms, MediumParams, XiMap, XiResult};
use crate::model::{Grid, PulseSet, SchemeKind};

/// Which coherence a write/retrieval acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetrievalChannel {
    /// Probe on the 2-3 transition, stored in rho_51 (controls: outer pair
    /// plus the 3-4 field).
    FiveLevel,
    /// Probe on the 1-2 transition, stored in rho_31 (control: the 2-3
    /// field), a three-level sub-scheme of the same medium.
    Lambda123,
}

impl RetrievalChannel {
    /// Field index of the probe for this channel.
    pub fn probe_index(self) -> usize {
        match self {
            RetrievalChannel::FiveLevel => 1,
            RetrievalChannel::Lambda123 => 0,
        }
    }

    /// Envelope indices whose squared sum drives the channel's retarded
    /// coordinate.
    pub fn pair_indices(self) -> (usize, usize) {
        match self {
            RetrievalChannel::FiveLevel => (1, 2),
            RetrievalChannel::Lambda123 => (0, 1),
        }
    }

    /// One-based atomic level holding the stored coherence against level 1.
    pub fn stored_level(self) -> usize {
        match self {
            RetrievalChannel::FiveLevel => 5,
            RetrievalChannel::Lambda123 => 3,
        }
    }
}

/// Spatial coherence profiles after a write stage.
#[derive(Clone, Debug)]
pub struct StorageRecord {
    pub x: Vec<f64>,
    pub rho51: Vec<C64>,
    pub rho31: Vec<C64>,
    /// Retarded coordinate at the all-pulses-gone limit, per depth node.
    pub xi: Vec<Option<f64>>,
    /// Depth at which the write pair's area is fully consumed.
    pub x_max: f64,
    /// Probe energy transmitted past x_max, as a fraction of the input.
    pub residual_probe_fraction: f64,
    /// Medium shorter than the consumption depth: the probe leaks out.
    pub partial: bool,
}

impl StorageRecord {
    pub fn max_abs_rho31(&self) -> f64 {
        self.rho31.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_rho51(&self) -> f64 {
        self.rho51.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Pure-state reconstruction per depth node: the dark superposition
    /// consistent with both stored coherences,
    /// b = (b1, 0, rho31/b1, 0, rho51/b1) with real b1 from normalization.
    pub fn reconstruct_states(&self) -> Vec<[C64; 5]> {
        self.x
            .iter()
            .enumerate()
            .map(|(j, _)| {
                let r31 = self.rho31[j];
                let r51 = self.rho51[j];
                let s = r31.norm_sqr() + r51.norm_sqr();
                let b1_sq = 0.5 * (1.0 + (1.0 - 4.0 * s).max(0.0).sqrt());
                let b1 = b1_sq.sqrt();
                [
                    C64::new(b1, 0.0),
                    C64::new(0.0, 0.0),
                    r31 / b1,
                    C64::new(0.0, 0.0),
                    r51 / b1,
                ]
            })
            .collect()
    }

    /// Linear resample of both coherence profiles onto new depth nodes.
    fn resample(&self, x_new: &[f64]) -> (Vec<C64>, Vec<C64>) {
        let interp = |profile: &[C64], x: f64| -> C64 {
            if self.x.len() == 1 {
                return profile[0];
            }
            let idx = self.x.partition_point(|&v| v <= x);
            if idx == 0 {
                return profile[0];
            }
            if idx >= self.x.len() {
                return *profile.last().unwrap();
            }
            let (x0, x1) = (self.x[idx - 1], self.x[idx]);
            let f = (x - x0) / (x1 - x0);
            profile[idx - 1] + (profile[idx] - profile[idx - 1]) * f
        };
        (
            x_new.iter().map(|&x| interp(&self.rho51, x)).collect(),
            x_new.iter().map(|&x| interp(&self.rho31, x)).collect(),
        )
    }
}

/// Depth consumed by the write pair's full area: q x_max equals the
/// integral of the squared probe-plus-control pair over the window. The
/// outer supports do not enter.
pub fn compute_x_max(boundary: &PulseSet, q: f64, grid: &Grid) -> f64 {
    channel_x_max(boundary, q, grid, RetrievalChannel::FiveLevel)
}

pub fn channel_x_max(boundary: &PulseSet, q: f64, grid: &Grid, channel: RetrievalChannel) -> f64 {
    let (a, b) = channel.pair_indices();
    XiMap::from_envelope_pair(&boundary.envelopes[a], &boundary.envelopes[b], grid).x_max(q)
}

/// Extract the storage record from a propagated map at its final time node
/// (all pulses off there by the grid support check).
pub fn storage_record_from(
    map: &FieldMap,
    boundary: &PulseSet,
    q: f64,
    channel: RetrievalChannel,
) -> StorageRecord {
    let (a, b) = channel.pair_indices();
    let ximap = XiMap::from_envelope_pair(&boundary.envelopes[a], &boundary.envelopes[b], &map.grid);
    let x_max = ximap.x_max(q);
    let n_slices = map.n_slices();
    let mut rho51 = Vec::with_capacity(n_slices);
    let mut rho31 = Vec::with_capacity(n_slices);
    let mut xi = Vec::with_capacity(n_slices);
    for j in 0..n_slices {
        let end = map.atom_at_end(j);
        rho51.push(end.coherence(5, 1));
        rho31.push(end.coherence(3, 1));
        xi.push(ximap.xi_at_infinity(q * map.x[j]).value());
    }
    let partial = x_max > map.grid.x_max;
    let j_max = map.slice_index(x_max.min(map.grid.x_max));
    let probe = channel.probe_index();
    let e_in = map.energy(probe, 0);
    let residual_probe_fraction = if e_in > 0.0 {
        map.energy(probe, j_max) / e_in
    } else {
        0.0
    };
    StorageRecord {
        x: map.x.clone(),
        rho51,
        rho31,
        xi,
        x_max,
        residual_probe_fraction,
        partial,
    }
}

/// Run the write stage: propagate the probe-plus-controls boundary through
/// the medium and freeze the coherence profile left behind.
pub fn write_pulse(
    boundary: &PulseSet,
    medium: &MediumParams,
    grid: &Grid,
) -> Result<(StorageRecord, FieldMap), Error> {
    grid.check_support(boundary)?;
    let map = propagate(boundary, medium, grid, &InitialAtoms::Ground)?;
    let record = storage_record_from(&map, boundary, medium.q[1], RetrievalChannel::FiveLevel);
    Ok((record, map))
}

/// Closed-form coherence profile the write stage should leave behind:
/// -sin(theta0(xi(x))) cos(theta0(xi(x))) mapped through the consumed-area
/// coordinate.
pub fn stored_coherence_prediction(
    boundary: &PulseSet,
    q: f64,
    grid: &Grid,
    channel: RetrievalChannel,
    xs: &[f64],
) -> Vec<f64> {
    let (a, b) = channel.pair_indices();
    let ximap = XiMap::from_envelope_pair(&boundary.envelopes[a], &boundary.envelopes[b], grid);
    xs.iter()
        .map(|&x| match ximap.xi_at_infinity(q * x) {
            XiResult::Root(xi) => {
                let theta = f64::atan2(
                    boundary.envelopes[a].value(xi),
                    boundary.envelopes[b].value(xi),
                );
                -theta.sin() * theta.cos()
            }
            XiResult::NoRoot => 0.0,
        })
        .collect()
}

/// Normalized sup-norm mismatch between the recorded coherence magnitudes
/// and the closed-form map, relative to the map's peak.
pub fn coherence_map_error(record: &StorageRecord, prediction: &[f64]) -> f64 {
    let peak = prediction.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if peak == 0.0 {
        return record.max_abs_rho51();
    }
    record
        .rho51
        .iter()
        .zip(prediction.iter())
        .map(|(r, p)| (r.norm() - p.abs()).abs())
        .fold(0.0, f64::max)
        / peak
}

/// A retrieved probe envelope at the exit face.
#[derive(Clone, Debug)]
pub struct RetrievedPulse {
    pub tau: Vec<f64>,
    pub envelope: Vec<C64>,
    pub energy: f64,
}

impl RetrievedPulse {
    /// Cross-correlate the retrieved modulus against a reference shape
    /// sampled on the same grid; returns (delay, peak correlation).
    pub fn correlation_with_shape(&self, shape: &[f64]) -> (f64, f64) {
        let out: Vec<f64> = self.envelope.iter().map(|c| c.norm()).collect();
        let dt = self.tau[1] - self.tau[0];
        crate::medium::cross_correlate(&out, shape, dt)
    }

    /// Energy of the difference waveform against a reference pulse on the
    /// same grid, as a fraction of the reference energy.
    pub fn contamination_against(&self, reference: &RetrievedPulse) -> f64 {
        let dt = self.tau[1] - self.tau[0];
        let mut diff = 0.0;
        let mut base = 0.0;
        for (a, b) in self.envelope.iter().zip(reference.envelope.iter()) {
            diff += (a - b).norm_sqr() * dt;
            base += b.norm_sqr() * dt;
        }
        if base > 0.0 {
            diff / base
        } else {
            diff
        }
    }
}

/// Turn the controls back on over a medium initialized with stored
/// coherence and collect the regenerated probe at the exit face. Returns
/// the propagated map as well so follow-up stages can read the remaining
/// coherences.
pub fn retrieve(
    record: &StorageRecord,
    controls: &PulseSet,
    medium: &MediumParams,
    grid: &Grid,
    channel: RetrievalChannel,
) -> Result<(RetrievedPulse, FieldMap), Error> {
    grid.check_support(controls)?;
    let x_new = grid.x_values();
    let (rho51, rho31) = record.resample(&x_new);
    let stage_record = StorageRecord {
        x: x_new,
        rho51,
        rho31,
        xi: Vec::new(),
        x_max: record.x_max,
        residual_probe_fraction: 0.0,
        partial: record.partial,
    };
    let initial = InitialAtoms::PerSlice(stage_record.reconstruct_states());
    let map = propagate(controls, medium, grid, &initial)?;
    let probe = channel.probe_index();
    let exit = map.n_slices() - 1;
    let envelope: Vec<C64> = map.field_slice(probe, exit).to_vec();
    let energy = map.energy(probe, exit);
    Ok((
        RetrievedPulse {
            tau: map.tau.clone(),
            envelope,
            energy,
        },
        map,
    ))
}

/// One write or retrieval stage: its boundary fields and time window.
#[derive(Clone, Debug)]
pub struct Stage {
    pub pulses: PulseSet,
    pub grid: Grid,
}

/// Full double-storage protocol configuration (m-type scheme only).
#[derive(Clone, Debug)]
pub struct DoubleStorageScenario {
    pub medium: MediumParams,
    /// Five-level write of the first probe into rho_51.
    pub write_five: Stage,
    /// Three-level write of the second probe into rho_31.
    pub write_lambda: Stage,
    /// Controls regenerating the first probe.
    pub retrieve_five: Stage,
    /// Control regenerating the second probe.
    pub retrieve_lambda: Stage,
}

/// Metrics of one retrieved pulse within the protocol.
#[derive(Clone, Debug)]
pub struct RetrievalMetric {
    pub delay: f64,
    pub correlation: f64,
    /// Energy of the difference against the single-stored reference run,
    /// as a fraction of the reference energy.
    pub crosstalk: f64,
    pub pulse: RetrievedPulse,
}

#[derive(Debug)]
pub struct DoubleStorageOutcome {
    pub record_after_write1: StorageRecord,
    pub record_after_write2: StorageRecord,
    pub min_p1_after_write1: f64,
    /// Retrieval order (five-level first, then lambda).
    pub order_five_first: (RetrievalMetric, RetrievalMetric),
    /// Retrieval order (lambda first, then five-level).
    pub order_lambda_first: (RetrievalMetric, RetrievalMetric),
}

fn record_after(map: &FieldMap, base: &StorageRecord) -> StorageRecord {
    let n = map.n_slices();
    let mut rho51 = Vec::with_capacity(n);
    let mut rho31 = Vec::with_capacity(n);
    for j in 0..n {
        let end = map.atom_at_end(j);
        rho51.push(end.coherence(5, 1));
        rho31.push(end.coherence(3, 1));
    }
    StorageRecord {
        x: map.x.clone(),
        rho51,
        rho31,
        xi: Vec::new(),
        x_max: base.x_max,
        residual_probe_fraction: 0.0,
        partial: base.partial,
    }
}

fn metric(
    pulse: RetrievedPulse,
    reference: &RetrievedPulse,
    probe_shape: &[f64],
) -> RetrievalMetric {
    let (delay, correlation) = pulse.correlation_with_shape(probe_shape);
    let crosstalk = pulse.contamination_against(reference);
    RetrievalMetric {
        delay,
        correlation,
        crosstalk,
        pulse,
    }
}

/// Sequential double storage: write probe 1 into rho_51, write probe 2 into
/// rho_31 of the same medium, then retrieve both pulses in either order.
/// Cross-talk is measured against reference retrievals with only the target
/// pulse stored.
pub fn double_storage_protocol(
    scenario: &DoubleStorageScenario,
) -> Result<DoubleStorageOutcome, Error> {
    if scenario.medium.scheme != SchemeKind::MType {
        return Err(Error::WrongScheme("double storage"));
    }
    for stage in [
        &scenario.write_five,
        &scenario.write_lambda,
        &scenario.retrieve_five,
        &scenario.retrieve_lambda,
    ] {
        if stage.pulses.scheme != SchemeKind::MType {
            return Err(Error::WrongScheme("double storage"));
        }
        stage.grid.check_support(&stage.pulses)?;
    }

    // write 1: five-level storage of the first probe
    let (rec1, map1) = write_pulse(
        &scenario.write_five.pulses,
        &scenario.medium,
        &scenario.write_five.grid,
    )?;
    let min_p1_after_write1 = (0..map1.n_slices())
        .map(|j| map1.atom_at_end(j).populations()[0])
        .fold(1.0, f64::min);
    drop(map1);

    // write 2: three-level storage of the second probe on the loaded medium
    let w2 = &scenario.write_lambda;
    let initial = InitialAtoms::PerSlice({
        let x_new = w2.grid.x_values();
        let (rho51, rho31) = rec1.resample(&x_new);
        StorageRecord {
            x: x_new,
            rho51,
            rho31,
            xi: Vec::new(),
            x_max: rec1.x_max,
            residual_probe_fraction: 0.0,
            partial: rec1.partial,
        }
        .reconstruct_states()
    });
    let map2 = propagate(&w2.pulses, &scenario.medium, &w2.grid, &initial)?;
    let mut rec2 = record_after(&map2, &rec1);
    rec2.x_max = channel_x_max(
        &w2.pulses,
        scenario.medium.q[0],
        &w2.grid,
        RetrievalChannel::Lambda123,
    );
    drop(map2);

    // reference runs: each pulse stored alone
    let (ref_five, _) = retrieve(
        &rec1,
        &scenario.retrieve_five.pulses,
        &scenario.medium,
        &scenario.retrieve_five.grid,
        RetrievalChannel::FiveLevel,
    )?;
    let map2_only = propagate(&w2.pulses, &scenario.medium, &w2.grid, &InitialAtoms::Ground)?;
    let rec2_only = record_after(&map2_only, &rec1);
    drop(map2_only);
    let (ref_lambda, _) = retrieve(
        &rec2_only,
        &scenario.retrieve_lambda.pulses,
        &scenario.medium,
        &scenario.retrieve_lambda.grid,
        RetrievalChannel::Lambda123,
    )?;

    let shape_five: Vec<f64> = scenario
        .retrieve_five
        .grid
        .tau_values()
        .iter()
        .map(|&t| scenario.write_five.pulses.envelopes[1].value(t))
        .collect();
    let shape_lambda: Vec<f64> = scenario
        .retrieve_lambda
        .grid
        .tau_values()
        .iter()
        .map(|&t| scenario.write_lambda.pulses.envelopes[0].value(t))
        .collect();

    // order A: five-level retrieval first, lambda second
    let (out_a1, map_a1) = retrieve(
        &rec2,
        &scenario.retrieve_five.pulses,
        &scenario.medium,
        &scenario.retrieve_five.grid,
        RetrievalChannel::FiveLevel,
    )?;
    let rec_a = record_after(&map_a1, &rec2);
    drop(map_a1);
    let (out_a2, _) = retrieve(
        &rec_a,
        &scenario.retrieve_lambda.pulses,
        &scenario.medium,
        &scenario.retrieve_lambda.grid,
        RetrievalChannel::Lambda123,
    )?;
    let order_five_first = (
        metric(out_a1, &ref_five, &shape_five),
        metric(out_a2, &ref_lambda, &shape_lambda),
    );

    // order B: lambda retrieval first, five-level second
    let (out_b1, map_b1) = retrieve(
        &rec2,
        &scenario.retrieve_lambda.pulses,
        &scenario.medium,
        &scenario.retrieve_lambda.grid,
        RetrievalChannel::Lambda123,
    )?;
    let rec_b = record_after(&map_b1, &rec2);
    drop(map_b1);
    let (out_b2, _) = retrieve(
        &rec_b,
        &scenario.retrieve_five.pulses,
        &scenario.medium,
        &scenario.retrieve_five.grid,
        RetrievalChannel::FiveLevel,
    )?;
    let order_lambda_first = (
        metric(out_b1, &ref_lambda, &shape_lambda),
        metric(out_b2, &ref_five, &shape_five),
    );

    Ok(DoubleStorageOutcome {
        record_after_write1: rec1,
        record_after_write2: rec2,
        min_p1_after_write1,
        order_five_first,
        order_lambda_first,
    })
}
