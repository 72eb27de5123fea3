//! Single-corridor stochastic microsimulation with the Intelligent Driver
//! Model (IDM).
//!
//! Two corridor kinds are supported: a closed ring, where stop-and-go waves
//! emerge from string instability, and an open stretch fed by a departure
//! schedule. Integration is semi-implicit ballistic: speed first, then
//! position with the new speed.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ingest::{virtual_detectors, DetectorSeries, DEFAULT_BIN_S};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams<S> {
    /// Desired speed, m/s.
    pub v0: S,
    /// Safe time headway, s.
    pub time_headway: S,
    /// Maximum acceleration, m/s².
    pub a_max: S,
    /// Comfortable deceleration, m/s².
    pub b: S,
    /// Acceleration exponent.
    pub delta: S,
    /// Minimum standstill gap, m.
    pub s0: S,
    pub vehicle_length: S,
}

impl<S: Scalar> Default for IdmParams<S> {
    fn default() -> Self {
        Self {
            v0: S::lit(33.3),
            time_headway: S::lit(1.6),
            a_max: S::lit(0.73),
            b: S::lit(1.67),
            delta: S::lit(4.0),
            s0: S::lit(2.0),
            vehicle_length: S::lit(5.0),
        }
    }
}

impl<S: Scalar> IdmParams<S> {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("v0", self.v0),
            ("T", self.time_headway),
            ("a_max", self.a_max),
            ("b", self.b),
            ("delta", self.delta),
            ("s0", self.s0),
            ("vehicle_length", self.vehicle_length),
        ];
        for (name, v) in fields {
            if !(v > S::zero() && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "idm.{name} must be positive, got {v}"
                )));
            }
        }
        if self.delta < S::one() {
            return Err(Error::InvalidParameter(format!(
                "idm.delta must be >= 1, got {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Desired dynamic gap s*(v, dv) where `dv = v - leader_speed`.
    pub fn desired_gap(&self, v: S, dv: S) -> S {
        self.s0 + v * self.time_headway + v * dv / (S::lit(2.0) * (self.a_max * self.b).sqrt())
    }

    /// Steady-state gap for speed `v` behind an equal-speed leader.
    pub fn equilibrium_gap(&self, v: S) -> S {
        let free = S::one() - (v / self.v0).powf(self.delta);
        self.desired_gap(v, S::zero()) / free.sqrt()
    }

    /// Speed at which `gap` is the steady-state gap, found by bisection on
    /// `[0, v0)`.
    pub fn equilibrium_speed(&self, gap: S) -> S {
        if gap <= self.s0 {
            return S::zero();
        }
        let (mut lo, mut hi) = (S::zero(), self.v0);
        for _ in 0..200 {
            let mid = (lo + hi) / S::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.equilibrium_gap(mid) < gap {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState<S> {
    pub id: u32,
    /// Front bumper, increasing downstream.
    pub position: S,
    pub speed: S,
    pub params: IdmParams<S>,
}

/// What a follower sees of its leader.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader<S> {
    /// Bumper-to-bumper distance, m.
    pub gap: S,
    pub speed: S,
}

/// IDM acceleration:
/// `a_max * [1 - (v/v0)^delta - (s*/s)^2]`, with the interaction term
/// dropped when there is no leader.
pub fn idm_accel<S: Scalar>(me: &VehicleState<S>, leader: Option<Leader<S>>) -> Result<S> {
    let p = &me.params;
    let v = me.speed;
    let free = S::one() - (v / p.v0).powf(p.delta);
    let interaction = match leader {
        None => S::zero(),
        Some(l) => {
            if !(l.gap > S::zero()) {
                return Err(Error::VehicleOverlap {
                    id: me.id,
                    gap: l.gap.as_f64(),
                });
            }
            let ratio = p.desired_gap(v, v - l.speed) / l.gap;
            ratio * ratio
        }
    };
    Ok(p.a_max * (free - interaction))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology<S> {
    Ring { length: S },
    Stretch { length: S },
}

impl<S: Scalar> Topology<S> {
    pub fn length(&self) -> S {
        match *self {
            Topology::Ring { length } | Topology::Stretch { length } => length,
        }
    }
}

/// Leader index and gap for vehicle `i`. Ring states are in cyclic order;
/// stretch states are sorted by ascending position.
fn leader_of<S: Scalar>(
    states: &[VehicleState<S>],
    i: usize,
    topology: &Topology<S>,
) -> Option<(usize, S)> {
    match *topology {
        Topology::Ring { length } => {
            let j = (i + 1) % states.len();
            let ahead = if j == i {
                length
            } else {
                let d = states[j].position - states[i].position;
                if d < S::zero() {
                    d + length
                } else {
                    d
                }
            };
            Some((j, ahead - states[j].params.vehicle_length))
        }
        Topology::Stretch { .. } => {
            let j = i + 1;
            (j < states.len()).then(|| {
                (
                    j,
                    states[j].position - states[j].params.vehicle_length - states[i].position,
                )
            })
        }
    }
}

/// Advances every vehicle by one step.
pub fn step<S: Scalar>(
    states: &[VehicleState<S>],
    topology: &Topology<S>,
    sim_dt: S,
) -> Result<Vec<VehicleState<S>>> {
    let mut next = Vec::with_capacity(states.len());
    for (i, me) in states.iter().enumerate() {
        let leader = leader_of(states, i, topology).map(|(j, gap)| Leader {
            gap,
            speed: states[j].speed,
        });
        let accel = idm_accel(me, leader)?;
        let speed = (me.speed + accel * sim_dt).max(S::zero());
        let mut position = me.position + speed * sim_dt;
        if let Topology::Ring { length } = *topology {
            if position >= length {
                position -= length;
            }
        }
        next.push(VehicleState {
            speed,
            position,
            ..*me
        });
    }
    for i in 0..next.len() {
        if let Some((j, gap)) = leader_of(&next, i, topology) {
            if !(gap > S::zero()) {
                return Err(Error::Collision {
                    follower: next[i].id,
                    leader: next[j].id,
                });
            }
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Corridor<S> {
    Ring {
        length: S,
        vehicles: usize,
    },
    Stretch {
        length: S,
        /// Departure times in seconds, one per vehicle.
        departures: Vec<S>,
        entry_speed: S,
    },
}

impl<S: Scalar> Corridor<S> {
    pub fn topology(&self) -> Topology<S> {
        match *self {
            Corridor::Ring { length, .. } => Topology::Ring { length },
            Corridor::Stretch { length, .. } => Topology::Stretch { length },
        }
    }

    pub fn vehicle_count(&self) -> usize {
        match self {
            Corridor::Ring { vehicles, .. } => *vehicles,
            Corridor::Stretch { departures, .. } => departures.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec<S> {
    /// Standard deviation of the per-vehicle desired speed, m/s.
    pub speed_dev_sigma: S,
    /// Standard deviation of departure offsets, s.
    pub departure_jitter_sigma: S,
    /// Relative standard deviations of T, a_max and b.
    pub time_headway_rel_sigma: S,
    pub a_max_rel_sigma: S,
    pub b_rel_sigma: S,
}

impl<S: Scalar> Default for PerturbationSpec<S> {
    fn default() -> Self {
        Self {
            speed_dev_sigma: S::one(),
            departure_jitter_sigma: S::lit(2.0),
            time_headway_rel_sigma: S::lit(0.1),
            a_max_rel_sigma: S::lit(0.1),
            b_rel_sigma: S::lit(0.1),
        }
    }
}

impl<S: Scalar> PerturbationSpec<S> {
    pub fn none() -> Self {
        Self {
            speed_dev_sigma: S::zero(),
            departure_jitter_sigma: S::zero(),
            time_headway_rel_sigma: S::zero(),
            a_max_rel_sigma: S::zero(),
            b_rel_sigma: S::zero(),
        }
    }

    fn sigmas(&self) -> [S; 5] {
        [
            self.speed_dev_sigma,
            self.departure_jitter_sigma,
            self.time_headway_rel_sigma,
            self.a_max_rel_sigma,
            self.b_rel_sigma,
        ]
    }

    pub fn is_zero(&self) -> bool {
        self.sigmas().iter().all(|s| *s == S::zero())
    }
}

/// Concrete per-vehicle setup produced by [`sample_replication`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Driver<S> {
    pub params: IdmParams<S>,
    /// Departure time on a stretch; unused on a ring.
    pub depart: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<S> {
    pub corridor: Corridor<S>,
    pub base_params: IdmParams<S>,
    pub perturbation: PerturbationSpec<S>,
    pub sim_dt: S,
    pub duration: S,
    pub warmup: S,
    /// Virtual detector positions, m.
    pub detectors: Vec<S>,
    /// Per-vehicle overrides; `None` means every vehicle uses `base_params`.
    pub drivers: Option<Vec<Driver<S>>>,
}

impl<S: Scalar> Default for Scenario<S> {
    /// 50 vehicles on a 1000 m ring for 1200 s, of which the first 300 s are
    /// warm-up.
    fn default() -> Self {
        Self {
            corridor: Corridor::Ring {
                length: S::lit(1000.0),
                vehicles: 50,
            },
            base_params: IdmParams::default(),
            perturbation: PerturbationSpec::default(),
            sim_dt: S::lit(0.1),
            duration: S::lit(1200.0),
            warmup: S::lit(300.0),
            detectors: vec![S::lit(50.0), S::lit(250.0), S::lit(450.0)],
            drivers: None,
        }
    }
}

impl<S: Scalar> Scenario<S> {
    pub fn validate(&self) -> Result<()> {
        self.base_params.validate()?;
        if !(self.sim_dt > S::zero()) {
            return Err(Error::InvalidParameter(format!(
                "sim_dt must be positive, got {}",
                self.sim_dt
            )));
        }
        if !(self.warmup >= S::zero() && self.duration > self.warmup) {
            return Err(Error::InvalidParameter(format!(
                "need duration > warmup >= 0, got duration={} warmup={}",
                self.duration, self.warmup
            )));
        }
        if self
            .perturbation
            .sigmas()
            .iter()
            .any(|s| !(*s >= S::zero()))
        {
            return Err(Error::InvalidParameter(
                "perturbation sigmas must be >= 0".into(),
            ));
        }
        let length = self.corridor.topology().length();
        if !(length > S::zero()) {
            return Err(Error::InvalidParameter(format!(
                "corridor length must be positive, got {length}"
            )));
        }
        match &self.corridor {
            Corridor::Ring { vehicles, .. } => {
                let footprint = S::of_usize(*vehicles)
                    * (self.base_params.s0 + self.base_params.vehicle_length);
                if *vehicles == 0 || footprint >= length {
                    return Err(Error::InvalidParameter(format!(
                        "{vehicles} vehicles do not fit on a {length} m ring"
                    )));
                }
            }
            Corridor::Stretch {
                entry_speed,
                departures,
                ..
            } => {
                if !(*entry_speed >= S::zero()) {
                    return Err(Error::InvalidParameter("entry speed must be >= 0".into()));
                }
                if departures.iter().any(|d| !(*d >= S::zero())) {
                    return Err(Error::InvalidParameter(
                        "departure times must be >= 0".into(),
                    ));
                }
            }
        }
        if let Some(drivers) = &self.drivers {
            if drivers.len() != self.corridor.vehicle_count() {
                return Err(Error::InvalidParameter(format!(
                    "{} drivers for {} vehicles",
                    drivers.len(),
                    self.corridor.vehicle_count()
                )));
            }
            for d in drivers {
                d.params.validate()?;
            }
        }
        for &x in &self.detectors {
            if !(x >= S::zero() && x <= length) {
                return Err(Error::InvalidParameter(format!(
                    "detector at {x} m lies outside the corridor"
                )));
            }
        }
        Ok(())
    }

    /// The drivers a simulation of this scenario uses, without sampling.
    pub fn resolved_drivers(&self) -> Vec<Driver<S>> {
        if let Some(d) = &self.drivers {
            return d.clone();
        }
        match &self.corridor {
            Corridor::Ring { vehicles, .. } => vec![
                Driver {
                    params: self.base_params,
                    depart: S::zero(),
                };
                *vehicles
            ],
            Corridor::Stretch { departures, .. } => departures
                .iter()
                .map(|&depart| Driver {
                    params: self.base_params,
                    depart,
                })
                .collect(),
        }
    }
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `master_seed`:
/// `splitmix64(master_seed ^ splitmix64(index))`. Each index gets its own
/// stream, so growing the replication count leaves earlier streams alone.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index))
}

/// Standard normal draw truncated to [-3, 3] by rejection.
fn truncated_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 3.0 {
            return z;
        }
    }
}

/// Parameters are floored at this fraction of their base value.
const POSITIVE_FLOOR: f64 = 0.01;

fn jitter<S: Scalar>(base: S, sigma: S, z: f64) -> S {
    (base + sigma * S::lit(z)).max(base * S::lit(POSITIVE_FLOOR))
}

/// Draws the stochastic elements of one replication: per-vehicle desired
/// speed, T, a_max and b, and departure offsets. The returned scenario is
/// concrete (its perturbation is zero and `drivers` is filled in). With all
/// sigmas zero the input is returned unchanged.
pub fn sample_replication<S: Scalar>(
    scenario: &Scenario<S>,
    master_seed: u64,
    replication_index: u64,
) -> Scenario<S> {
    let pert = scenario.perturbation;
    if pert.is_zero() {
        return scenario.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, replication_index));
    let base = scenario.base_params;
    let schedule: Vec<S> = match &scenario.corridor {
        Corridor::Ring { vehicles, .. } => vec![S::zero(); *vehicles],
        Corridor::Stretch { departures, .. } => departures.clone(),
    };

    let mut drivers: Vec<Driver<S>> = schedule
        .iter()
        .map(|&depart| {
            // Fixed draw order per vehicle keeps the stream layout stable.
            let z: [f64; 5] = std::array::from_fn(|_| truncated_normal(&mut rng));
            let params = IdmParams {
                v0: jitter(base.v0, pert.speed_dev_sigma, z[0]),
                time_headway: jitter(
                    base.time_headway,
                    base.time_headway * pert.time_headway_rel_sigma,
                    z[1],
                ),
                a_max: jitter(base.a_max, base.a_max * pert.a_max_rel_sigma, z[2]),
                b: jitter(base.b, base.b * pert.b_rel_sigma, z[3]),
                ..base
            };
            let depart = (depart + pert.departure_jitter_sigma * S::lit(z[4])).max(S::zero());
            Driver { params, depart }
        })
        .collect();

    let mut corridor = scenario.corridor.clone();
    if let Corridor::Stretch { departures, .. } = &mut corridor {
        drivers.sort_by(|a, b| a.depart.partial_cmp(&b.depart).expect("finite departures"));
        *departures = drivers.iter().map(|d| d.depart).collect();
    } else {
        for d in &mut drivers {
            d.depart = S::zero();
        }
    }

    Scenario {
        corridor,
        perturbation: PerturbationSpec::none(),
        drivers: Some(drivers),
        ..scenario.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<S> {
    pub t: S,
    pub x: S,
    pub v: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub vehicle_id: u32,
    pub vehicle_length: S,
    pub samples: Vec<Sample<S>>,
}

/// Output of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication<S> {
    /// Sorted by vehicle id.
    pub trajectories: Vec<Trajectory<S>>,
    pub detectors: Vec<DetectorSeries<S>>,
    /// Vehicles whose entry onto a stretch had to wait for space.
    pub deferred_entries: usize,
}

/// Simulates one replication. A scenario with non-zero perturbation and no
/// concrete drivers is first sampled with `(seed, 0)`, so the result is a pure
/// function of `(scenario, seed)`.
pub fn run_replication<S: Scalar>(scenario: &Scenario<S>, seed: u64) -> Result<Replication<S>> {
    scenario.validate()?;
    let concrete = if scenario.drivers.is_none() && !scenario.perturbation.is_zero() {
        sample_replication(scenario, seed, 0)
    } else {
        scenario.clone()
    };
    let drivers = concrete.resolved_drivers();
    let topology = concrete.corridor.topology();
    let dt = concrete.sim_dt;
    let n_steps = (concrete.duration / dt)
        .round()
        .to_usize()
        .expect("finite duration");
    let warmup_steps = (concrete.warmup / dt)
        .round()
        .to_usize()
        .expect("finite warmup");

    let mut trajectories: Vec<Trajectory<S>> = drivers
        .iter()
        .enumerate()
        .map(|(id, d)| Trajectory {
            vehicle_id: id as u32,
            vehicle_length: d.params.vehicle_length,
            samples: Vec::new(),
        })
        .collect();

    let mut states: Vec<VehicleState<S>> = Vec::new();
    let mut pending = 0usize;
    let mut deferred = vec![false; drivers.len()];
    match &concrete.corridor {
        Corridor::Ring { length, vehicles } => {
            let spacing = *length / S::of_usize(*vehicles);
            let base = concrete.base_params;
            let v_eq = base.equilibrium_speed(spacing - base.vehicle_length);
            states = drivers
                .iter()
                .enumerate()
                .map(|(i, d)| VehicleState {
                    id: i as u32,
                    position: S::of_usize(i) * spacing,
                    speed: v_eq,
                    params: d.params,
                })
                .collect();
        }
        Corridor::Stretch { .. } => {}
    }

    for k in 0..=n_steps {
        let t = S::of_usize(k) * dt;
        if let Corridor::Stretch { entry_speed, .. } = &concrete.corridor {
            while pending < drivers.len() && drivers[pending].depart <= t {
                let d = &drivers[pending];
                let clear = match states.first() {
                    None => true,
                    Some(up) => {
                        let gap = up.position - up.params.vehicle_length;
                        gap >= d.params.s0 + *entry_speed * d.params.time_headway
                    }
                };
                if !clear {
                    deferred[pending] = true;
                    break;
                }
                states.insert(
                    0,
                    VehicleState {
                        id: pending as u32,
                        position: S::zero(),
                        speed: *entry_speed,
                        params: d.params,
                    },
                );
                pending += 1;
            }
        }
        if k >= warmup_steps {
            for st in &states {
                trajectories[st.id as usize].samples.push(Sample {
                    t,
                    x: st.position,
                    v: st.speed,
                });
            }
        }
        if k == n_steps {
            break;
        }
        states = step(&states, &topology, dt)?;
        if let Topology::Stretch { length } = topology {
            states.retain(|st| st.position <= length);
        }
    }

    let bin = S::lit(DEFAULT_BIN_S);
    let detectors = if concrete.detectors.is_empty() {
        Vec::new()
    } else {
        virtual_detectors(&trajectories, &concrete.detectors, bin)
    };
    Ok(Replication {
        trajectories,
        detectors,
        deferred_entries: deferred.iter().filter(|&&d| d).count(),
    })
}

/// Writes `vehicle_id,t,x,v` rows (SI units, 4 decimals).
pub fn write_trajectories_csv<S: Scalar, W: Write>(
    trajectories: &[Trajectory<S>],
    w: &mut W,
) -> Result<()> {
    writeln!(w, "vehicle_id,t,x,v")?;
    for tr in trajectories {
        for s in &tr.samples {
            writeln!(w, "{},{:.4},{:.4},{:.4}", tr.vehicle_id, s.t, s.x, s.v)?;
        }
    }
    Ok(())
}
