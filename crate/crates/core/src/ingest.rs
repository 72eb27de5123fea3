//! Loop-detector readings: a PeMS-like CSV layout, virtual detectors on
//! simulated trajectories, and a nearest-station speed grid.
//!
//! CSV layout, one row per (station, bin):
//!
//! ```text
//! station_id,position_m,t_start_s,flow_veh,occupancy,speed_mps
//! s1,0,300.0,12,0.08,24.6
//! ```
//!
//! An empty `speed_mps` field means no vehicle was observed in the bin.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, TimeSpaceGrid};
use crate::scalar::Scalar;
use crate::simulator::Trajectory;

pub const DETECTOR_HEADER: &str = "station_id,position_m,t_start_s,flow_veh,occupancy,speed_mps";
/// Aggregation interval of the loop-detector feed, s.
pub const DEFAULT_BIN_S: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorBin<S> {
    pub t_start: S,
    pub flow: u32,
    pub occupancy: S,
    /// Space-mean speed; `None` iff `flow == 0`.
    pub mean_speed: Option<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSeries<S> {
    pub station_id: String,
    pub position: S,
    pub bin_duration: S,
    /// Strictly increasing `t_start`, each a multiple of `bin_duration`.
    pub bins: Vec<DetectorBin<S>>,
}

/// A row that could not be turned into a bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    /// 1-based line number in the input.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDetectors<S> {
    /// In order of first appearance.
    pub series: Vec<DetectorSeries<S>>,
    pub rejects: Vec<Reject>,
}

impl<S> ParsedDetectors<S> {
    pub fn rejects_report(&self) -> String {
        self.rejects
            .iter()
            .map(|r| format!("line {}: {}\n", r.line, r.reason))
            .collect()
    }
}

fn is_multiple<S: Scalar>(t: S, step: S) -> bool {
    let q = t / step;
    (q - q.round()).abs() <= S::lit(1e-9) * q.abs().max(S::one())
}

struct Row<S> {
    station: String,
    position: S,
    bin: DetectorBin<S>,
}

fn parse_row<S: Scalar>(line: &str, bin_duration: S) -> std::result::Result<Row<S>, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 6 {
        return Err(format!("expected 6 fields, found {}", fields.len()));
    }
    let num = |name: &str, v: &str| -> std::result::Result<S, String> {
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(S::lit)
            .ok_or_else(|| format!("{name} `{v}` is not a number"))
    };
    let station = fields[0].to_string();
    if station.is_empty() {
        return Err("empty station_id".into());
    }
    let position = num("position_m", fields[1])?;
    let t_start = num("t_start_s", fields[2])?;
    if !is_multiple(t_start, bin_duration) {
        return Err(format!(
            "t_start_s {t_start} is not a multiple of {bin_duration}"
        ));
    }
    let flow: u32 = fields[3]
        .parse()
        .map_err(|_| format!("flow_veh `{}` is not a non-negative integer", fields[3]))?;
    let occupancy = num("occupancy", fields[4])?;
    if !(occupancy >= S::zero() && occupancy <= S::one()) {
        return Err(format!("occupancy {occupancy} outside [0, 1]"));
    }
    let mean_speed = if fields[5].is_empty() {
        None
    } else {
        let v = num("speed_mps", fields[5])?;
        if v < S::zero() {
            return Err(format!("negative speed {v}"));
        }
        Some(v)
    };
    if mean_speed.is_none() != (flow == 0) {
        return Err("speed must be missing exactly when flow is 0".into());
    }
    Ok(Row {
        station,
        position,
        bin: DetectorBin {
            t_start,
            flow,
            occupancy,
            mean_speed,
        },
    })
}

/// Parses detector CSV text. Malformed rows are collected as rejects; a bad
/// header or out-of-order bins within a station are hard errors.
pub fn parse_detector_csv<S: Scalar, R: BufRead>(
    input: R,
    bin_duration: S,
) -> Result<ParsedDetectors<S>> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(Error::BadHeader("empty input".into())),
    };
    if header.trim().trim_start_matches('\u{feff}') != DETECTOR_HEADER {
        return Err(Error::BadHeader(format!(
            "expected `{DETECTOR_HEADER}`, got `{header}`"
        )));
    }

    let mut series: Vec<DetectorSeries<S>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rejects = Vec::new();
    for (n, line) in lines.enumerate() {
        let line_no = n + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = match parse_row::<S>(&line, bin_duration) {
            Ok(r) => r,
            Err(reason) => {
                rejects.push(Reject {
                    line: line_no,
                    reason,
                });
                continue;
            }
        };
        let slot = *index.entry(row.station.clone()).or_insert_with(|| {
            series.push(DetectorSeries {
                station_id: row.station.clone(),
                position: row.position,
                bin_duration,
                bins: Vec::new(),
            });
            series.len() - 1
        });
        let s = &mut series[slot];
        if s.position != row.position {
            rejects.push(Reject {
                line: line_no,
                reason: format!(
                    "station {} moved from {} to {}",
                    s.station_id, s.position, row.position
                ),
            });
            continue;
        }
        if let Some(last) = s.bins.last() {
            if row.bin.t_start <= last.t_start {
                return Err(Error::UnsortedInput {
                    station: row.station,
                    line: line_no,
                });
            }
        }
        s.bins.push(row.bin);
    }
    Ok(ParsedDetectors { series, rejects })
}

pub fn write_detector_csv<S: Scalar, W: Write>(
    series: &[DetectorSeries<S>],
    w: &mut W,
) -> Result<()> {
    writeln!(w, "{DETECTOR_HEADER}")?;
    for s in series {
        for b in &s.bins {
            let speed = b.mean_speed.map(|v| format!("{v:.6}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:.6},{:.6},{},{:.6},{}",
                s.station_id, s.position, b.t_start, b.flow, b.occupancy, speed
            )?;
        }
    }
    Ok(())
}

/// Readings a loop detector at each of `positions` would have produced.
///
/// A vehicle crosses a station during the step in which its front bumper
/// passes the station (on a ring a wrap-around also counts). The crossing is
/// timestamped with the end of that step and its speed is the speed held
/// during the step. Bins are right-closed: `(t_start, t_start + bin]`, and
/// span every sample time present in the trajectories.
///
/// Per bin: flow = crossings, mean speed = harmonic mean of crossing speeds,
/// occupancy = sum(length / speed) / bin, capped at 1.
pub fn virtual_detectors<S: Scalar>(
    trajectories: &[Trajectory<S>],
    positions: &[S],
    bin_duration: S,
) -> Vec<DetectorSeries<S>> {
    let times = trajectories
        .iter()
        .flat_map(|tr| tr.samples.iter().map(|s| s.t));
    let (t_min, t_max) = times.fold((S::infinity(), S::neg_infinity()), |(lo, hi), t| {
        (lo.min(t), hi.max(t))
    });
    let (first, n_bins) = if t_min.is_finite() {
        let first = (t_min / bin_duration).floor();
        let last = ((t_max / bin_duration).ceil() - S::one()).max(first);
        (first, (last - first).to_usize().unwrap_or(0) + 1)
    } else {
        (S::zero(), 0)
    };

    positions
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut flow = vec![0u32; n_bins];
            let mut inv_speed = vec![S::zero(); n_bins];
            let mut time_over = vec![S::zero(); n_bins];
            for tr in trajectories {
                for w in tr.samples.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    let crossed = if b.x >= a.x {
                        a.x < p && p <= b.x
                    } else {
                        p > a.x || p <= b.x
                    };
                    if !crossed || !(b.v > S::zero()) {
                        continue;
                    }
                    let idx = ((b.t / bin_duration).ceil() - S::one() - first).to_usize();
                    if let Some(i) = idx.filter(|&i| i < n_bins) {
                        flow[i] += 1;
                        inv_speed[i] += S::one() / b.v;
                        time_over[i] += tr.vehicle_length / b.v;
                    }
                }
            }
            DetectorSeries {
                station_id: format!("vd{k}"),
                position: p,
                bin_duration,
                bins: (0..n_bins)
                    .map(|i| DetectorBin {
                        t_start: (first + S::of_usize(i)) * bin_duration,
                        flow: flow[i],
                        occupancy: (time_over[i] / bin_duration).min(S::one()),
                        mean_speed: (flow[i] > 0)
                            .then(|| S::from_u32(flow[i]).unwrap() / inv_speed[i]),
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Coarse time-space grid from sparse stations: each row copies the nearest
/// station (by row center, ties to the upstream station) and each column the
/// bin containing the column center. Only rows holding a station are masked,
/// and only where that station reported a speed.
pub fn series_to_grid<S: Scalar>(
    series: &[DetectorSeries<S>],
    spec: &GridSpec<S>,
) -> Result<TimeSpaceGrid<S>> {
    spec.validate()?;
    if series.is_empty() {
        return Err(Error::InvalidParameter("no detector series".into()));
    }
    let mut stations: Vec<&DetectorSeries<S>> = series.iter().collect();
    stations.sort_by(|a, b| {
        a.position
            .partial_cmp(&b.position)
            .expect("finite positions")
    });

    let shape = spec.shape();
    let mut speeds = Array2::from_elem(shape, S::zero());
    let mut mask = Array2::from_elem(shape, false);
    let station_rows: Vec<Option<usize>> = stations
        .iter()
        .map(|s| {
            if s.position == spec.x_end() {
                Some(spec.n_x - 1)
            } else {
                spec.cell_of(spec.t0, s.position).map(|(r, _)| r)
            }
        })
        .collect();

    for i in 0..spec.n_x {
        let center = spec.row_center(i);
        // Ascending positions + strict `<` keep the upstream station on ties.
        let mut best = 0;
        for (k, s) in stations.iter().enumerate().skip(1) {
            if (s.position - center).abs() < (stations[best].position - center).abs() {
                best = k;
            }
        }
        let station = stations[best];
        let owns_row = station_rows[best] == Some(i);
        for j in 0..spec.n_t {
            let tc = spec.col_center(j);
            let bin = station
                .bins
                .iter()
                .find(|b| b.t_start <= tc && tc < b.t_start + station.bin_duration);
            if let Some(v) = bin.and_then(|b| b.mean_speed) {
                speeds[[i, j]] = v;
                mask[[i, j]] = owns_row;
            }
        }
    }
    Ok(TimeSpaceGrid {
        spec: *spec,
        speeds,
        mask,
    })
}
