//! Time-space diagrams: mean vehicle speed over a regular (position, time)
//! grid.
//!
//! Arrays are indexed `[row, col]` where rows index space (row 0 is the
//! upstream end `x0`) and columns index time (column 0 starts at `t0`).
//! Speeds are in m/s.

use std::io::{BufRead, Write};

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::frame;
use crate::scalar::Scalar;
use crate::simulator::Trajectory;

/// Default column width in seconds.
pub const DEFAULT_DT: f64 = 1.0;
/// Default row height in meters.
pub const DEFAULT_DX: f64 = 10.0;
/// Default time window in seconds.
pub const DEFAULT_WINDOW_S: f64 = 900.0;
/// Default spatial extent in meters.
pub const DEFAULT_EXTENT_M: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<S> {
    pub t0: S,
    pub x0: S,
    pub dt: S,
    pub dx: S,
    pub n_t: usize,
    pub n_x: usize,
}

impl<S: Scalar> GridSpec<S> {
    pub fn new(t0: S, x0: S, dt: S, dx: S, n_t: usize, n_x: usize) -> Result<Self> {
        let spec = Self {
            t0,
            x0,
            dt,
            dx,
            n_t,
            n_x,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec covering `[t0, t0 + duration) x [x0, x0 + extent)`
    /// exactly. Fails if either extent is not a whole number of cells.
    pub fn covering(t0: S, duration: S, x0: S, extent: S, dt: S, dx: S) -> Result<Self> {
        let n_t = whole_cells(duration, dt, "time window")?;
        let n_x = whole_cells(extent, dx, "spatial extent")?;
        Self::new(t0, x0, dt, dx, n_t, n_x)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_x == 0 {
            return Err(Error::DegenerateGrid(format!(
                "{}x{} cells",
                self.n_x, self.n_t
            )));
        }
        if !(self.dt > S::zero() && self.dx > S::zero()) {
            return Err(Error::DegenerateGrid(format!(
                "dt={} dx={}",
                self.dt, self.dx
            )));
        }
        if !(self.t0.is_finite()
            && self.x0.is_finite()
            && self.dt.is_finite()
            && self.dx.is_finite())
        {
            return Err(Error::DegenerateGrid(
                "non-finite origin or cell size".into(),
            ));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_x, self.n_t)
    }

    pub fn t_end(&self) -> S {
        self.t0 + S::of_usize(self.n_t) * self.dt
    }

    pub fn x_end(&self) -> S {
        self.x0 + S::of_usize(self.n_x) * self.dx
    }

    /// Half-open bin lookup: returns `(row, col)` of the cell holding `(t, x)`.
    pub fn cell_of(&self, t: S, x: S) -> Option<(usize, usize)> {
        let col = bin_index(t, self.t0, self.dt, self.n_t)?;
        let row = bin_index(x, self.x0, self.dx, self.n_x)?;
        Some((row, col))
    }

    /// Position of the center of `row`.
    pub fn row_center(&self, row: usize) -> S {
        self.x0 + (S::of_usize(row) + S::lit(0.5)) * self.dx
    }

    /// Time at the center of `col`.
    pub fn col_center(&self, col: usize) -> S {
        self.t0 + (S::of_usize(col) + S::lit(0.5)) * self.dt
    }
}

fn whole_cells<S: Scalar>(extent: S, step: S, what: &str) -> Result<usize> {
    if !(step > S::zero()) || !(extent > S::zero()) {
        return Err(Error::DegenerateGrid(format!(
            "{what} {extent} with cell size {step}"
        )));
    }
    let n = (extent / step).round();
    let tol = S::lit(1e-9) * extent.max(S::one());
    if (n * step - extent).abs() > tol {
        return Err(Error::DegenerateGrid(format!(
            "{what} {extent} is not a whole number of {step} cells"
        )));
    }
    n.to_usize()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::DegenerateGrid(format!("{what} holds no cells")))
}

fn bin_index<S: Scalar>(v: S, origin: S, step: S, n: usize) -> Option<usize> {
    let k = ((v - origin) / step).floor();
    if !(k >= S::zero()) {
        return None;
    }
    k.to_usize().filter(|&k| k < n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSpaceGrid<S> {
    pub spec: GridSpec<S>,
    pub speeds: Array2<S>,
    /// `true` where at least one vehicle sample contributed.
    pub mask: Array2<bool>,
}

/// Per-cell running sums behind [`aggregate_trajectories`].
#[derive(Debug, Clone)]
pub struct CellStats<S> {
    pub spec: GridSpec<S>,
    pub sums: Array2<S>,
    pub counts: Array2<u32>,
}

impl<S: Scalar> CellStats<S> {
    pub fn into_grid(self) -> TimeSpaceGrid<S> {
        let mask = self.counts.mapv(|c| c > 0);
        let mut speeds = self.sums;
        ndarray::Zip::from(&mut speeds)
            .and(&self.counts)
            .for_each(|s, &c| {
                if c > 0 {
                    *s /= S::from_u32(c).unwrap();
                }
            });
        TimeSpaceGrid {
            spec: self.spec,
            speeds,
            mask,
        }
    }
}

/// Bins every in-window sample. Trajectories are visited in vehicle-id order
/// so the floating-point sums do not depend on input order.
pub fn bin_samples<S: Scalar>(
    trajectories: &[Trajectory<S>],
    spec: &GridSpec<S>,
) -> Result<CellStats<S>> {
    spec.validate()?;
    if trajectories.is_empty() {
        return Err(Error::NoTrajectories);
    }
    let mut order: Vec<&Trajectory<S>> = trajectories.iter().collect();
    order.sort_by_key(|tr| tr.vehicle_id);

    let shape = spec.shape();
    let mut sums = Array2::from_elem(shape, S::zero());
    let mut counts = Array2::from_elem(shape, 0u32);
    for tr in order {
        for sample in &tr.samples {
            if let Some(cell) = spec.cell_of(sample.t, sample.x) {
                sums[cell] += sample.v;
                counts[cell] += 1;
            }
        }
    }
    Ok(CellStats {
        spec: *spec,
        sums,
        counts,
    })
}

/// Averages trajectory samples into a time-space diagram. Samples outside the
/// window are skipped.
pub fn aggregate_trajectories<S: Scalar>(
    trajectories: &[Trajectory<S>],
    spec: &GridSpec<S>,
) -> Result<TimeSpaceGrid<S>> {
    Ok(bin_samples(trajectories, spec)?.into_grid())
}

/// How [`fill_gaps`] completes cells with no samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FillPolicy<S> {
    /// Used for rows that hold no samples at all.
    pub free_flow: S,
}

/// Fills every unmasked cell with the value of the nearest masked cell in the
/// same row (ties go to the earlier column), or with the free-flow speed when
/// the row is empty. The mask is left untouched.
pub fn fill_gaps<S: Scalar>(grid: &TimeSpaceGrid<S>, policy: FillPolicy<S>) -> TimeSpaceGrid<S> {
    let mut out = grid.clone();
    let n_t = grid.spec.n_t;
    for i in 0..grid.spec.n_x {
        let mask = grid.mask.row(i);
        if mask.iter().all(|&m| m) {
            continue;
        }
        let mut prev = vec![None; n_t];
        let mut last = None;
        for j in 0..n_t {
            if mask[j] {
                last = Some(j);
            }
            prev[j] = last;
        }
        let mut next = vec![None; n_t];
        let mut last = None;
        for j in (0..n_t).rev() {
            if mask[j] {
                last = Some(j);
            }
            next[j] = last;
        }
        for j in (0..n_t).filter(|&j| !mask[j]) {
            let src = match (prev[j], next[j]) {
                (Some(p), Some(n)) => Some(if j - p <= n - j { p } else { n }),
                (p, n) => p.or(n),
            };
            out.speeds[[i, j]] = match src {
                Some(k) => grid.speeds[[i, k]],
                None => policy.free_flow,
            };
        }
    }
    out
}

/// A verbatim `(2n+1) x (2m+1)` window of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood<S> {
    pub center: (usize, usize),
    /// Half-width in columns.
    pub half_time: usize,
    /// Half-height in rows.
    pub half_space: usize,
    pub values: Array2<S>,
}

pub fn extract_neighborhood<S: Scalar>(
    grid: &TimeSpaceGrid<S>,
    center: (usize, usize),
    m: usize,
    n: usize,
) -> Result<Neighborhood<S>> {
    let (row, col) = center;
    let boundary = || Error::Boundary {
        row,
        col,
        rows: 2 * n + 1,
        cols: 2 * m + 1,
    };
    if row < n || col < m || row + n >= grid.spec.n_x || col + m >= grid.spec.n_t {
        return Err(boundary());
    }
    let values = grid
        .speeds
        .slice(s![row - n..=row + n, col - m..=col + m])
        .to_owned();
    Ok(Neighborhood {
        center,
        half_time: m,
        half_space: n,
        values,
    })
}

impl<S: Scalar> TimeSpaceGrid<S> {
    pub fn constant(spec: GridSpec<S>, speed: S) -> Self {
        Self {
            speeds: Array2::from_elem(spec.shape(), speed),
            mask: Array2::from_elem(spec.shape(), true),
            spec,
        }
    }

    /// Copies a neighborhood back to the location it was taken from.
    pub fn write_neighborhood(&mut self, nb: &Neighborhood<S>) -> Result<()> {
        let (row, col) = nb.center;
        let (m, n) = (nb.half_time, nb.half_space);
        if row < n || col < m || row + n >= self.spec.n_x || col + m >= self.spec.n_t {
            return Err(Error::Boundary {
                row,
                col,
                rows: 2 * n + 1,
                cols: 2 * m + 1,
            });
        }
        self.speeds
            .slice_mut(s![row - n..=row + n, col - m..=col + m])
            .assign(&nb.values);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        frame::write_header(w, frame::GRID_TAG, &self.spec, &[])?;
        frame::write_block(w, &self.speeds, |v| format!("{v:.6}"))?;
        frame::write_bits(w, &self.mask)
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let fr = frame::read_frame::<S, _>(r, frame::GRID_TAG)?;
        let speeds = frame::parse_values(&fr.values, fr.spec.n_x, fr.spec.n_t)?;
        Ok(Self {
            spec: fr.spec,
            speeds,
            mask: fr.bits,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ASCII")
    }
}
