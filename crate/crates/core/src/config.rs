//! Flat `key = value` scenario files.
//!
//! ```text
//! # 50 vehicles on a 1 km ring
//! topology = ring
//! ring_length_m = 1000
//! n_vehicles = 50
//! idm.T = 1.6
//! perturb.speed_dev_sigma = 1.0
//! ```
//!
//! `#` starts a comment. Every key is optional; missing keys take the
//! defaults of [`Scenario::default`]. Unknown or repeated keys are errors.
//!
//! | key | meaning |
//! |---|---|
//! | `topology` | `ring` or `stretch` |
//! | `ring_length_m`, `n_vehicles` | ring corridor |
//! | `stretch_length_m`, `entry_speed_mps` | stretch corridor |
//! | `departures` | comma-separated departure times, s (stretch) |
//! | `departure_headway_s` | regular schedule of `n_vehicles` departures (stretch) |
//! | `sim_dt_s`, `duration_s`, `warmup_s` | integration step and run length |
//! | `idm.v0`, `idm.T`, `idm.a_max`, `idm.b`, `idm.delta`, `idm.s0`, `idm.vehicle_length` | driver model |
//! | `perturb.speed_dev_sigma`, `perturb.departure_jitter_sigma` | absolute sigmas |
//! | `perturb.T_rel_sigma`, `perturb.a_max_rel_sigma`, `perturb.b_rel_sigma` | relative sigmas |
//! | `detectors` | comma-separated virtual detector positions, m |
//! | `grid.dt_s`, `grid.dx_m`, `grid.x0_m`, `grid.extent_m` | time-space grid; the time window is `[warmup, duration)` |

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, DEFAULT_DT, DEFAULT_DX, DEFAULT_EXTENT_M};
use crate::scalar::Scalar;
use crate::simulator::{Corridor, Scenario};

const KEYS: &[&str] = &[
    "topology",
    "ring_length_m",
    "n_vehicles",
    "stretch_length_m",
    "entry_speed_mps",
    "departures",
    "departure_headway_s",
    "sim_dt_s",
    "duration_s",
    "warmup_s",
    "idm.v0",
    "idm.T",
    "idm.a_max",
    "idm.b",
    "idm.delta",
    "idm.s0",
    "idm.vehicle_length",
    "perturb.speed_dev_sigma",
    "perturb.departure_jitter_sigma",
    "perturb.T_rel_sigma",
    "perturb.a_max_rel_sigma",
    "perturb.b_rel_sigma",
    "detectors",
    "grid.dt_s",
    "grid.dx_m",
    "grid.x0_m",
    "grid.extent_m",
];

/// A scenario plus the time-space grid its runs are aggregated on.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig<S> {
    pub scenario: Scenario<S>,
    pub grid: GridSpec<S>,
}

impl<S: Scalar> RunConfig<S> {
    /// Default ring scenario on the default 1 s x 10 m grid spanning the
    /// post-warmup window and the first 500 m.
    pub fn default_ring() -> Self {
        let scenario = Scenario::default();
        let grid = default_grid(
            &scenario,
            S::zero(),
            S::lit(DEFAULT_DT),
            S::lit(DEFAULT_DX),
            None,
        )
        .expect("default grid is whole");
        Self { scenario, grid }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                key: line.to_string(),
                msg: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(Error::Config {
                    line: line_no,
                    key: key.into(),
                    msg: "unknown key".into(),
                });
            };
            if entries.insert(known, (line_no, value.trim())).is_some() {
                return Err(Error::Config {
                    line: line_no,
                    key: key.into(),
                    msg: "duplicate key".into(),
                });
            }
        }
        Self::from_entries(&entries)
    }

    fn from_entries(e: &BTreeMap<&str, (usize, &str)>) -> Result<Self> {
        let bad = |key: &str, msg: String| {
            let line = e.get(key).map_or(0, |(l, _)| *l);
            Error::Config {
                line,
                key: key.into(),
                msg,
            }
        };
        let num = |key: &str, default: S| -> Result<S> {
            match e.get(key) {
                None => Ok(default),
                Some((_, v)) => v
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .map(S::lit)
                    .ok_or_else(|| bad(key, format!("`{v}` is not a number"))),
            }
        };
        let count = |key: &str, default: usize| -> Result<usize> {
            match e.get(key) {
                None => Ok(default),
                Some((_, v)) => v
                    .parse()
                    .map_err(|_| bad(key, format!("`{v}` is not a count"))),
            }
        };
        let list = |key: &str| -> Result<Option<Vec<S>>> {
            match e.get(key) {
                None => Ok(None),
                Some((_, "")) => Ok(Some(Vec::new())),
                Some((_, v)) => v
                    .split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .map(S::lit)
                            .ok_or_else(|| bad(key, format!("`{}` is not a number", x.trim())))
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(Some),
            }
        };

        let d = Scenario::<S>::default();
        let topology = e.get("topology").map_or("ring", |(_, v)| *v);
        let default_vehicles = d.corridor.vehicle_count();
        let corridor = match topology {
            "ring" => Corridor::Ring {
                length: num("ring_length_m", S::lit(1000.0))?,
                vehicles: count("n_vehicles", default_vehicles)?,
            },
            "stretch" => {
                let departures = match (list("departures")?, e.contains_key("departure_headway_s"))
                {
                    (Some(_), true) => {
                        return Err(bad(
                            "departure_headway_s",
                            "give either `departures` or `departure_headway_s`, not both".into(),
                        ))
                    }
                    (Some(list), false) => list,
                    (None, _) => {
                        let h = num("departure_headway_s", S::lit(2.0))?;
                        let n = count("n_vehicles", default_vehicles)?;
                        (0..n).map(|k| S::of_usize(k) * h).collect()
                    }
                };
                Corridor::Stretch {
                    length: num("stretch_length_m", S::lit(1000.0))?,
                    departures,
                    entry_speed: num("entry_speed_mps", S::lit(15.0))?,
                }
            }
            other => return Err(bad("topology", format!("`{other}` is not ring or stretch"))),
        };

        let p = d.base_params;
        let q = d.perturbation;
        let scenario = Scenario {
            corridor,
            base_params: crate::simulator::IdmParams {
                v0: num("idm.v0", p.v0)?,
                time_headway: num("idm.T", p.time_headway)?,
                a_max: num("idm.a_max", p.a_max)?,
                b: num("idm.b", p.b)?,
                delta: num("idm.delta", p.delta)?,
                s0: num("idm.s0", p.s0)?,
                vehicle_length: num("idm.vehicle_length", p.vehicle_length)?,
            },
            perturbation: crate::simulator::PerturbationSpec {
                speed_dev_sigma: num("perturb.speed_dev_sigma", q.speed_dev_sigma)?,
                departure_jitter_sigma: num(
                    "perturb.departure_jitter_sigma",
                    q.departure_jitter_sigma,
                )?,
                time_headway_rel_sigma: num("perturb.T_rel_sigma", q.time_headway_rel_sigma)?,
                a_max_rel_sigma: num("perturb.a_max_rel_sigma", q.a_max_rel_sigma)?,
                b_rel_sigma: num("perturb.b_rel_sigma", q.b_rel_sigma)?,
            },
            sim_dt: num("sim_dt_s", d.sim_dt)?,
            duration: num("duration_s", d.duration)?,
            warmup: num("warmup_s", d.warmup)?,
            detectors: list("detectors")?.unwrap_or(d.detectors),
            drivers: None,
        };
        scenario.validate().map_err(|err| {
            let key = match &err {
                Error::InvalidParameter(m) if m.starts_with("idm.") => {
                    m.split_whitespace().next().unwrap_or("idm")
                }
                Error::InvalidParameter(m) if m.starts_with("detector") => "detectors",
                _ => "scenario",
            };
            bad(key, err.to_string())
        })?;

        let grid = default_grid(
            &scenario,
            num("grid.x0_m", S::zero())?,
            num("grid.dt_s", S::lit(DEFAULT_DT))?,
            num("grid.dx_m", S::lit(DEFAULT_DX))?,
            e.get("grid.extent_m")
                .map(|_| num("grid.extent_m", S::zero()))
                .transpose()?,
        )
        .map_err(|err| bad("grid", err.to_string()))?;
        Ok(Self { scenario, grid })
    }

    /// Serializes every key, so the text reproduces this configuration.
    pub fn to_config_string(&self) -> String {
        let sc = &self.scenario;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let join = |xs: &[S]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match &sc.corridor {
            Corridor::Ring { length, vehicles } => {
                kv("topology", "ring".into());
                kv("ring_length_m", length.to_string());
                kv("n_vehicles", vehicles.to_string());
            }
            Corridor::Stretch {
                length,
                departures,
                entry_speed,
            } => {
                kv("topology", "stretch".into());
                kv("stretch_length_m", length.to_string());
                kv("entry_speed_mps", entry_speed.to_string());
                kv("departures", join(departures));
            }
        }
        kv("sim_dt_s", sc.sim_dt.to_string());
        kv("duration_s", sc.duration.to_string());
        kv("warmup_s", sc.warmup.to_string());
        let p = &sc.base_params;
        kv("idm.v0", p.v0.to_string());
        kv("idm.T", p.time_headway.to_string());
        kv("idm.a_max", p.a_max.to_string());
        kv("idm.b", p.b.to_string());
        kv("idm.delta", p.delta.to_string());
        kv("idm.s0", p.s0.to_string());
        kv("idm.vehicle_length", p.vehicle_length.to_string());
        let q = &sc.perturbation;
        kv("perturb.speed_dev_sigma", q.speed_dev_sigma.to_string());
        kv(
            "perturb.departure_jitter_sigma",
            q.departure_jitter_sigma.to_string(),
        );
        kv("perturb.T_rel_sigma", q.time_headway_rel_sigma.to_string());
        kv("perturb.a_max_rel_sigma", q.a_max_rel_sigma.to_string());
        kv("perturb.b_rel_sigma", q.b_rel_sigma.to_string());
        kv("detectors", join(&sc.detectors));
        kv("grid.dt_s", self.grid.dt.to_string());
        kv("grid.dx_m", self.grid.dx.to_string());
        kv("grid.x0_m", self.grid.x0.to_string());
        kv(
            "grid.extent_m",
            (self.grid.x_end() - self.grid.x0).to_string(),
        );
        out
    }
}

/// Grid over `[warmup, duration) x [x0, x0 + extent)`; the extent defaults to
/// 500 m or the rest of the corridor, whichever is shorter.
fn default_grid<S: Scalar>(
    scenario: &Scenario<S>,
    x0: S,
    dt: S,
    dx: S,
    extent: Option<S>,
) -> Result<GridSpec<S>> {
    let length = scenario.corridor.topology().length();
    let extent = extent.unwrap_or_else(|| S::lit(DEFAULT_EXTENT_M).min(length - x0));
    GridSpec::covering(
        scenario.warmup,
        scenario.duration - scenario.warmup,
        x0,
        extent,
        dt,
        dx,
    )
}
