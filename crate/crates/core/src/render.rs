//! Netpbm rendering of speed grids, activation maps and probability maps.
//!
//! One pixel per cell. Image row 0 is the most downstream grid row, so space
//! increases upward; image column 0 is `t0`. A comment line after the magic
//! number records the scale kind, its domain and the sentinel color used for
//! invalid cells.

use ndarray::Array2;

use crate::detector::ActivationMap;
use crate::error::{Error, Result};
use crate::grid::TimeSpaceGrid;
use crate::scalar::Scalar;
use crate::uq::ProbabilityMap;

/// Color of cells with no valid value.
pub const SENTINEL: [u8; 3] = [255, 0, 255];
/// Brightness factor applied to cells below the threshold in
/// [`boost_overlay`].
pub const DIM_FACTOR: f64 = 0.4;

const WHITE: [u8; 3] = [255, 255, 255];
const NAVY: [u8; 3] = [8, 48, 107];
const BLUE: [u8; 3] = [33, 102, 172];
const RED: [u8; 3] = [178, 24, 43];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleKind {
    Grayscale,
    /// Red below the midpoint, white at it, blue above.
    Diverging,
    /// White to navy.
    Sequential,
}

impl ScaleKind {
    fn name(self) -> &'static str {
        match self {
            ScaleKind::Grayscale => "grayscale",
            ScaleKind::Diverging => "diverging",
            ScaleKind::Sequential => "sequential",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorScale<S> {
    pub kind: ScaleKind,
    pub min: S,
    pub max: S,
}

fn lerp(a: [u8; 3], b: [u8; 3], t: f64) -> [u8; 3] {
    std::array::from_fn(|i| (a[i] as f64 + (b[i] as f64 - a[i] as f64) * t).round() as u8)
}

impl<S: Scalar> ColorScale<S> {
    pub fn new(kind: ScaleKind, min: S, max: S) -> Result<Self> {
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "color scale needs min < max, got [{min}, {max}]"
            )));
        }
        Ok(Self { kind, min, max })
    }

    pub fn speeds(max_speed: S) -> Result<Self> {
        Self::new(ScaleKind::Grayscale, S::zero(), max_speed)
    }

    pub fn activation() -> Self {
        Self {
            kind: ScaleKind::Diverging,
            min: -S::one(),
            max: S::one(),
        }
    }

    pub fn probability() -> Self {
        Self {
            kind: ScaleKind::Sequential,
            min: S::zero(),
            max: S::one(),
        }
    }

    /// Position of `v` in the domain, clamped to [0, 1].
    fn unit(&self, v: S) -> f64 {
        ((v - self.min) / (self.max - self.min))
            .as_f64()
            .clamp(0.0, 1.0)
    }

    pub fn gray(&self, v: S) -> u8 {
        (255.0 * self.unit(v)).round() as u8
    }

    pub fn color(&self, v: S) -> [u8; 3] {
        let t = self.unit(v);
        match self.kind {
            ScaleKind::Grayscale => [self.gray(v); 3],
            ScaleKind::Sequential => lerp(WHITE, NAVY, t),
            ScaleKind::Diverging => {
                let u = 2.0 * t - 1.0;
                if u < 0.0 {
                    lerp(WHITE, RED, -u)
                } else {
                    lerp(WHITE, BLUE, u)
                }
            }
        }
    }

    fn comment(&self, sentinel: Option<[u8; 3]>) -> String {
        let sentinel = sentinel.map_or("none".to_string(), |c| {
            format!("{},{},{}", c[0], c[1], c[2])
        });
        format!(
            "# sagwave scale={} domain={},{} sentinel={}",
            self.kind.name(),
            self.min,
            self.max,
            sentinel
        )
    }
}

/// Anything with a value per cell and optional per-cell validity.
pub trait Raster<S> {
    fn values(&self) -> &Array2<S>;
    /// `None` means every cell is drawable.
    fn validity(&self) -> Option<&Array2<bool>>;
}

impl<S> Raster<S> for TimeSpaceGrid<S> {
    fn values(&self) -> &Array2<S> {
        &self.speeds
    }

    /// Grids are drawn whole; after gap filling every cell holds a speed.
    fn validity(&self) -> Option<&Array2<bool>> {
        None
    }
}

impl<S> Raster<S> for ActivationMap<S> {
    fn values(&self) -> &Array2<S> {
        &self.values
    }

    fn validity(&self) -> Option<&Array2<bool>> {
        Some(&self.valid)
    }
}

impl<S> Raster<S> for ProbabilityMap<S> {
    fn values(&self) -> &Array2<S> {
        &self.probs
    }

    fn validity(&self) -> Option<&Array2<bool>> {
        Some(&self.valid)
    }
}

fn drawable<S: Scalar>(map: &impl Raster<S>, i: usize, j: usize) -> bool {
    map.validity().is_none_or(|v| v[[i, j]]) && map.values()[[i, j]].is_finite()
}

fn header(magic: &str, comment: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{comment}\n{width} {height}\n255\n").into_bytes()
}

/// Renders a map as P5 (grayscale with every cell drawable) or P6.
pub fn render_grid<S: Scalar>(map: &impl Raster<S>, scale: &ColorScale<S>) -> Result<Vec<u8>> {
    let values = map.values();
    let (n_x, n_t) = values.dim();
    if n_x == 0 || n_t == 0 {
        return Err(Error::EmptyMap);
    }
    let all_drawable = (0..n_x).all(|i| (0..n_t).all(|j| drawable(map, i, j)));

    if scale.kind == ScaleKind::Grayscale && all_drawable {
        let mut out = header("P5", &scale.comment(None), n_t, n_x);
        for i in (0..n_x).rev() {
            out.extend((0..n_t).map(|j| scale.gray(values[[i, j]])));
        }
        return Ok(out);
    }

    let mut out = header("P6", &scale.comment(Some(SENTINEL)), n_t, n_x);
    for i in (0..n_x).rev() {
        for j in 0..n_t {
            let px = if drawable(map, i, j) {
                scale.color(values[[i, j]])
            } else {
                SENTINEL
            };
            out.extend_from_slice(&px);
        }
    }
    Ok(out)
}

/// Diverging activation image where cells classified as SAG (`>= epsilon`)
/// keep full color and every other valid cell is dimmed by [`DIM_FACTOR`].
pub fn boost_overlay<S: Scalar>(activation: &ActivationMap<S>, epsilon: S) -> Result<Vec<u8>> {
    let (n_x, n_t) = activation.values.dim();
    if n_x == 0 || n_t == 0 {
        return Err(Error::EmptyMap);
    }
    let scale = ColorScale::<S>::activation();
    let comment = format!(
        "{} boost>={} dim={}",
        scale.comment(Some(SENTINEL)),
        epsilon,
        DIM_FACTOR
    );
    let mut out = header("P6", &comment, n_t, n_x);
    for i in (0..n_x).rev() {
        for j in 0..n_t {
            let px = if !drawable(activation, i, j) {
                SENTINEL
            } else {
                let v = activation.values[[i, j]];
                let c = scale.color(v);
                if v >= epsilon {
                    c
                } else {
                    c.map(|ch| (ch as f64 * DIM_FACTOR).round() as u8)
                }
            };
            out.extend_from_slice(&px);
        }
    }
    Ok(out)
}
