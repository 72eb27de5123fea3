//! Stop-and-go detection with a width-parameterized diagonal edge kernel.
//!
//! The kernel has three rows (space, top row = downstream) and `w + 4`
//! columns (time, one column per grid column). Its base row is
//! `[0, -1 x w, 0, w/2, w/2]`; each lower row is the row above shifted
//! circularly one column to the right, so a low-speed band that reaches
//! upstream positions later (a backward-travelling wave) lines up with the
//! negative weights. Width 4 gives
//!
//! ```text
//! 0 -1 -1 -1 -1  0  2  2
//! 2  0 -1 -1 -1 -1  0  2
//! 2  2  0 -1 -1 -1 -1  0
//! ```

use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::frame;
use crate::grid::{GridSpec, TimeSpaceGrid};
use crate::scalar::Scalar;

pub const DEFAULT_WIDTH: usize = 4;
pub const DEFAULT_EPSILON: f64 = 0.30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kernel {
    width: usize,
    weights: Array2<i32>,
}

impl Kernel {
    pub fn width(&self) -> usize {
        self.width
    }

    /// `3 x (w + 4)` integer weights, row 0 downstream.
    pub fn weights(&self) -> &Array2<i32> {
        &self.weights
    }

    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }

    pub fn cols(&self) -> usize {
        self.weights.ncols()
    }

    /// Sum of the positive weights; the response to an ideal wave at unit
    /// speed.
    pub fn positive_mass(&self) -> i32 {
        self.weights.iter().filter(|&&w| w > 0).sum()
    }
}

pub fn build_kernel(width: i64) -> Result<Kernel> {
    if width < 2 || width % 2 != 0 {
        return Err(Error::UnsupportedWidth(width));
    }
    let w = width as usize;
    let half = (w / 2) as i32;
    let mut base = vec![0i32; w + 4];
    base[1..=w].fill(-1);
    base[w + 2] = half;
    base[w + 3] = half;

    let cols = w + 4;
    let weights = Array2::from_shape_fn((3, cols), |(r, c)| base[(c + cols - r) % cols]);
    Ok(Kernel { width: w, weights })
}

/// Which cells a kernel window may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapPolicy {
    /// Windows touching an unmasked (unmeasured) cell are invalid.
    #[default]
    Strict,
    /// Gap-filled values are read like measured ones; only windows that
    /// cross the grid boundary are invalid.
    Filled,
}

impl std::str::FromStr for GapPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(GapPolicy::Strict),
            "filled" => Ok(GapPolicy::Filled),
            other => Err(Error::InvalidParameter(format!(
                "gap policy must be strict or filled, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for GapPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GapPolicy::Strict => "strict",
            GapPolicy::Filled => "filled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig<S> {
    /// Kernel width in grid columns.
    pub width: usize,
    /// Classification threshold on the activation.
    pub epsilon: S,
    /// Reference speed that maps the strongest possible response to 1.
    pub v_ref: S,
    pub gaps: GapPolicy,
}

impl<S: Scalar> DetectorConfig<S> {
    pub fn new(width: usize, epsilon: S, v_ref: S) -> Result<Self> {
        let cfg = Self {
            width,
            epsilon,
            v_ref,
            gaps: GapPolicy::Strict,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_gaps(self, gaps: GapPolicy) -> Self {
        Self { gaps, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > S::zero() && self.epsilon < S::one()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.v_ref > S::zero() && self.v_ref.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "v_ref must be positive, got {}",
                self.v_ref
            )));
        }
        build_kernel(self.width as i64).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap<S> {
    pub spec: GridSpec<S>,
    /// Normalized response; 0 where invalid.
    pub values: Array2<S>,
    pub valid: Array2<bool>,
    /// Cells whose raw response exceeded the normalizer and were clamped.
    pub clamped: usize,
}

/// Offsets of the kernel window relative to the target cell: kernel row `r`
/// reads grid row `row + 1 - r`; kernel column `c` reads grid column
/// `col - cols/2 + c` (the extra column of an even window sits on the left).
fn window_fits(spec: &GridSpec<impl Scalar>, k: &Kernel, row: usize, col: usize) -> bool {
    let left = k.cols() / 2;
    let right = k.cols() - left - 1;
    row >= 1 && row + 1 < spec.n_x && col >= left && col + right < spec.n_t
}

/// Normalized cross-correlation of the kernel with every fully-measured
/// window of the grid, divided by `positive_mass * v_ref`.
pub fn kernel_activation<S: Scalar>(
    grid: &TimeSpaceGrid<S>,
    config: &DetectorConfig<S>,
) -> Result<ActivationMap<S>> {
    config.validate()?;
    let kernel = build_kernel(config.width as i64)?;
    let spec = grid.spec;
    if spec.n_x < kernel.rows() || spec.n_t < kernel.cols() {
        return Err(Error::GridTooSmall {
            n_x: spec.n_x,
            n_t: spec.n_t,
            k_rows: kernel.rows(),
            k_cols: kernel.cols(),
        });
    }
    let weights = kernel.weights.mapv(|w| S::from_i32(w).unwrap());
    let norm = S::from_i32(kernel.positive_mass()).unwrap() * config.v_ref;
    let left = kernel.cols() / 2;

    // Prefix count of unmasked cells for O(1) window checks.
    let mut holes = Array2::<u32>::zeros((spec.n_x + 1, spec.n_t + 1));
    for i in 0..spec.n_x {
        for j in 0..spec.n_t {
            holes[[i + 1, j + 1]] = holes[[i, j + 1]] + holes[[i + 1, j]] - holes[[i, j]]
                + u32::from(!grid.mask[[i, j]]);
        }
    }
    let holes_in = |r0: usize, c0: usize, r1: usize, c1: usize| {
        holes[[r1, c1]] + holes[[r0, c0]] - holes[[r0, c1]] - holes[[r1, c0]]
    };

    let mut values = Array2::from_elem(spec.shape(), S::zero());
    let mut valid = Array2::from_elem(spec.shape(), false);
    let mut clamped = 0;
    for i in 0..spec.n_x {
        for j in 0..spec.n_t {
            if !window_fits(&spec, &kernel, i, j) {
                continue;
            }
            let c0 = j - left;
            if config.gaps == GapPolicy::Strict
                && holes_in(i - 1, c0, i + 2, c0 + kernel.cols()) > 0
            {
                continue;
            }
            let mut acc = S::zero();
            for r in 0..kernel.rows() {
                let gi = i + 1 - r;
                for c in 0..kernel.cols() {
                    acc += weights[[r, c]] * grid.speeds[[gi, c0 + c]];
                }
            }
            let mut v = acc / norm;
            if v.abs() > S::one() {
                v = v.signum();
                clamped += 1;
            }
            values[[i, j]] = v;
            valid[[i, j]] = true;
        }
    }
    Ok(ActivationMap {
        spec,
        values,
        valid,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMap<S> {
    pub spec: GridSpec<S>,
    pub indicators: Array2<u8>,
    pub valid: Array2<bool>,
}

/// Indicator is 1 where the activation is valid and `>= epsilon`.
pub fn classify<S: Scalar>(activation: &ActivationMap<S>, epsilon: S) -> BinaryMap<S> {
    let mut indicators = Array2::zeros(activation.spec.shape());
    ndarray::Zip::from(&mut indicators)
        .and(&activation.values)
        .and(&activation.valid)
        .for_each(|c, &v, &ok| *c = u8::from(ok && v >= epsilon));
    BinaryMap {
        spec: activation.spec,
        indicators,
        valid: activation.valid.clone(),
    }
}

impl<S: Scalar> ActivationMap<S> {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        frame::write_header(w, frame::ACTIVATION_TAG, &self.spec, &[])?;
        frame::write_block(w, &self.values, |v| format!("{v:.6}"))?;
        frame::write_bits(w, &self.valid)
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let fr = frame::read_frame::<S, _>(r, frame::ACTIVATION_TAG)?;
        let values = frame::parse_values(&fr.values, fr.spec.n_x, fr.spec.n_t)?;
        Ok(Self {
            spec: fr.spec,
            values,
            valid: fr.bits,
            clamped: 0,
        })
    }
}

impl<S: Scalar> BinaryMap<S> {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        frame::write_header(w, frame::BINARY_TAG, &self.spec, &[])?;
        frame::write_block(w, &self.indicators, |v| v.to_string())?;
        frame::write_bits(w, &self.valid)
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let fr = frame::read_frame::<S, _>(r, frame::BINARY_TAG)?;
        let mut indicators = Array2::zeros(fr.spec.shape());
        for (i, row) in fr.values.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                indicators[[i, j]] = match cell.as_str() {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(Error::Format {
                            line: i + 2,
                            msg: format!("indicator must be 0 or 1, found `{other}`"),
                        })
                    }
                };
            }
        }
        Ok(Self {
            spec: fr.spec,
            indicators,
            valid: fr.bits,
        })
    }

    pub fn flagged(&self) -> usize {
        self.indicators.iter().filter(|&&c| c == 1).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn width_four_matches_reference_matrix() {
        let k = build_kernel(4).unwrap();
        let expected = arr2(&[
            [0, -1, -1, -1, -1, 0, 2, 2],
            [2, 0, -1, -1, -1, -1, 0, 2],
            [2, 2, 0, -1, -1, -1, -1, 0],
        ]);
        assert_eq!(k.weights(), &expected);
        assert_eq!(k.positive_mass(), 12);
    }

    #[test]
    fn width_two_rows() {
        let k = build_kernel(2).unwrap();
        assert_eq!(k.weights().row(0).to_vec(), vec![0, -1, -1, 0, 1, 1]);
        assert_eq!(k.weights().row(1).to_vec(), vec![1, 0, -1, -1, 0, 1]);
        assert_eq!(k.weights().row(2).to_vec(), vec![1, 1, 0, -1, -1, 0]);
        for row in k.weights().rows() {
            assert_eq!(row.sum(), 0);
        }
    }

    #[test]
    fn unsupported_widths() {
        for w in [-2, 0, 1, 3, 7] {
            assert!(matches!(build_kernel(w), Err(Error::UnsupportedWidth(x)) if x == w));
        }
    }

    #[test]
    fn kernel_invariants_for_many_widths() {
        for w in (2..=40).step_by(2) {
            let k = build_kernel(w).unwrap();
            assert_eq!(k.cols(), w as usize + 4);
            assert_eq!(k.weights().sum(), 0);
            assert_eq!(k.positive_mass(), 3 * w as i32);
            let cols = k.cols();
            for r in 1..3 {
                for c in 0..cols {
                    assert_eq!(k.weights()[[r, c]], k.weights()[[0, (c + cols - r) % cols]]);
                }
            }
        }
    }

    fn spec(n_t: usize, n_x: usize) -> GridSpec<f64> {
        GridSpec::new(0.0, 0.0, 1.0, 10.0, n_t, n_x).unwrap()
    }

    #[test]
    fn grid_too_small() {
        let g = TimeSpaceGrid::constant(spec(7, 3), 10.0);
        let cfg = DetectorConfig::new(4, 0.3, 30.0).unwrap();
        assert!(matches!(
            kernel_activation(&g, &cfg),
            Err(Error::GridTooSmall { k_cols: 8, .. })
        ));
    }

    #[test]
    fn window_anchoring_and_validity() {
        // 3x8 grid, width 4: only (1, 4) holds the full window.
        let g = TimeSpaceGrid::constant(spec(8, 3), 10.0);
        let cfg = DetectorConfig::new(4, 0.3, 30.0).unwrap();
        let a = kernel_activation(&g, &cfg).unwrap();
        assert_eq!(a.valid.iter().filter(|&&v| v).count(), 1);
        assert!(a.valid[[1, 4]]);

        let mut holed = g.clone();
        holed.mask[[0, 0]] = false;
        let a = kernel_activation(&holed, &cfg).unwrap();
        assert!(!a.valid.iter().any(|&v| v));
        let a = kernel_activation(&holed, &cfg.with_gaps(GapPolicy::Filled)).unwrap();
        assert!(a.valid[[1, 4]]);
    }

    #[test]
    fn planted_pattern_reaches_plus_and_minus_one() {
        let k = build_kernel(4).unwrap();
        let v_ref = 25.0;
        let mut g = TimeSpaceGrid::constant(spec(8, 3), 0.0);
        for r in 0..3 {
            for c in 0..8 {
                g.speeds[[2 - r, c]] = if k.weights()[[r, c]] > 0 { v_ref } else { 0.0 };
            }
        }
        let cfg = DetectorConfig::new(4, 0.3, v_ref).unwrap();
        let a = kernel_activation(&g, &cfg).unwrap();
        assert_eq!(a.values[[1, 4]], 1.0);

        for r in 0..3 {
            for c in 0..8 {
                g.speeds[[2 - r, c]] = if k.weights()[[r, c]] < 0 { v_ref } else { 0.0 };
            }
        }
        let a = kernel_activation(&g, &cfg).unwrap();
        // 12 cells under -1 at v_ref against a normalizer of 12 v_ref.
        assert_eq!(a.values[[1, 4]], -1.0);
        assert_eq!(a.clamped, 0);
    }

    #[test]
    fn speeds_above_reference_are_clamped() {
        let k = build_kernel(2).unwrap();
        let mut g = TimeSpaceGrid::constant(spec(6, 3), 0.0);
        for r in 0..3 {
            for c in 0..6 {
                g.speeds[[2 - r, c]] = if k.weights()[[r, c]] > 0 { 40.0 } else { 0.0 };
            }
        }
        let a = kernel_activation(&g, &DetectorConfig::new(2, 0.3, 20.0).unwrap()).unwrap();
        assert_eq!(a.values[[1, 3]], 1.0);
        assert_eq!(a.clamped, 1);
    }

    #[test]
    fn classify_threshold_is_inclusive() {
        let s = spec(3, 1);
        let a = ActivationMap {
            spec: s,
            values: arr2(&[[0.30, 0.29, 0.9]]),
            valid: arr2(&[[true, true, false]]),
            clamped: 0,
        };
        let b = classify(&a, 0.30);
        assert_eq!(b.indicators, arr2(&[[1, 0, 0]]));
        assert_eq!(b.valid, a.valid);

        let zeros = ActivationMap {
            values: Array2::zeros((1, 3)),
            valid: Array2::from_elem((1, 3), true),
            ..a
        };
        assert_eq!(classify(&zeros, 0.30).flagged(), 0);
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::new(4, 0.0, 30.0).is_err());
        assert!(DetectorConfig::new(4, 1.0, 30.0).is_err());
        assert!(DetectorConfig::new(4, 0.3, 0.0).is_err());
        assert!(DetectorConfig::new(3, 0.3, 30.0).is_err());
    }

    #[test]
    fn csv_round_trips() {
        let s = spec(3, 2);
        let a = ActivationMap {
            spec: s,
            values: arr2(&[[0.25, -0.5, 0.0], [1.0, -1.0, 0.123456]]),
            valid: arr2(&[[true, true, false], [true, true, true]]),
            clamped: 0,
        };
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"# sagwave-activation v1,"));
        assert_eq!(ActivationMap::<f64>::read_csv(&buf[..]).unwrap(), a);

        let b = classify(&a, 0.2);
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"# sagwave-binary v1,"));
        assert_eq!(BinaryMap::<f64>::read_csv(&buf[..]).unwrap(), b);
    }
}
