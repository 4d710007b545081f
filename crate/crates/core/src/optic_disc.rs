//! Optic-disc centre localization by zero-mean normalized cross-correlation
//! against a radially symmetric bright-disc template, with manual override.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::exec::Exec;
use crate::imaging::{IntensityMap, Point};

#[derive(Debug, Error, PartialEq)]
pub enum OdError {
    #[error("map {width}x{height} too small for OD search with margin {margin}")]
    TooSmall {
        width: usize,
        height: usize,
        margin: usize,
    },
    #[error("no od contrast")]
    NoContrast,
    #[error("od position ({x}, {y}) outside {width}x{height} map")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("invalid OD parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OdSource {
    Detected,
    Manual,
}

impl fmt::Display for OdSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OdSource::Detected => "detected",
            OdSource::Manual => "manual",
        })
    }
}

impl FromStr for OdSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "detected" => Ok(OdSource::Detected),
            "manual" => Ok(OdSource::Manual),
            other => Err(format!("unknown od source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdCenter {
    pub x: f64,
    pub y: f64,
    /// Normalized correlation in [-1, 1]; exactly 1 for manual centres.
    pub score: f64,
    pub source: OdSource,
}

impl OdCenter {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OdParams {
    pub template_radius: usize,
    pub search_stride: usize,
    pub margin: usize,
}

impl Default for OdParams {
    fn default() -> Self {
        OdParams {
            template_radius: 40,
            search_stride: 4,
            margin: 40,
        }
    }
}

impl OdParams {
    pub fn validate(&self) -> Result<(), OdError> {
        if self.template_radius < 4 {
            return Err(OdError::InvalidParams(
                "template_radius must be at least 4".into(),
            ));
        }
        if self.search_stride < 1 {
            return Err(OdError::InvalidParams(
                "search_stride must be at least 1".into(),
            ));
        }
        if self.margin < self.template_radius {
            return Err(OdError::InvalidParams(
                "margin must be at least template_radius".into(),
            ));
        }
        Ok(())
    }
}

/// Zero-mean bright-disc template, `exp(-r^2 / (2 (R/2)^2))` on the
/// `(2R+1)^2` square.
#[derive(Debug, Clone)]
pub struct DiscTemplate {
    radius: usize,
    centered: Vec<f64>,
    norm: f64,
}

impl DiscTemplate {
    pub fn new(radius: usize) -> Self {
        let r = radius as isize;
        let scale = radius as f64 / 2.0;
        let denom = 2.0 * scale * scale;
        let raw: Vec<f64> = (-r..=r)
            .flat_map(|v| (-r..=r).map(move |u| (-((u * u + v * v) as f64) / denom).exp()))
            .collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let centered: Vec<f64> = raw.iter().map(|t| t - mean).collect();
        let norm = centered.iter().map(|t| t * t).sum::<f64>().sqrt();
        DiscTemplate {
            radius,
            centered,
            norm,
        }
    }

    /// Correlation of the patch centred at `(cx, cy)`; `None` for a flat patch.
    /// The caller guarantees the patch lies inside the map.
    pub fn correlate(&self, map: &IntensityMap, cx: usize, cy: usize) -> Option<f64> {
        let side = 2 * self.radius + 1;
        let n = (side * side) as f64;
        let (x0, y0) = (cx - self.radius, cy - self.radius);
        let g = map.grid();
        let mut sum = 0.0;
        for v in 0..side {
            for u in 0..side {
                sum += g.get(x0 + u, y0 + v);
            }
        }
        let mean = sum / n;
        let (mut cross, mut energy) = (0.0, 0.0);
        for v in 0..side {
            for u in 0..side {
                let d = g.get(x0 + u, y0 + v) - mean;
                cross += self.centered[v * side + u] * d;
                energy += d * d;
            }
        }
        // relative cut-off so rounding noise on a flat patch is not read as contrast
        if energy <= 1e-20 * n * (mean * mean).max(1.0) {
            return None;
        }
        Some((cross / (self.norm * energy.sqrt())).clamp(-1.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    x: usize,
    y: usize,
    score: f64,
}

/// Higher score wins; ties go to the smaller `(y, x)`.
fn better(a: Candidate, b: Option<Candidate>) -> bool {
    match b {
        None => true,
        Some(b) => a.score > b.score || (a.score == b.score && (a.y, a.x) < (b.y, b.x)),
    }
}

fn best_of(
    exec: Exec,
    template: &DiscTemplate,
    map: &IntensityMap,
    positions: &[(usize, usize)],
) -> Option<Candidate> {
    exec.map(positions, |&(x, y)| {
        template
            .correlate(map, x, y)
            .map(|score| Candidate { x, y, score })
    })
    .into_iter()
    .flatten()
    .fold(None, |best, c| if better(c, best) { Some(c) } else { best })
}

pub fn locate_od(map: &IntensityMap, params: &OdParams) -> Result<OdCenter, OdError> {
    locate_od_with(Exec::default(), map, params)
}

/// Coarse grid search at `search_stride`, then a stride-1 refinement in the
/// `±search_stride` box around the coarse winner.
pub fn locate_od_with(
    exec: Exec,
    map: &IntensityMap,
    params: &OdParams,
) -> Result<OdCenter, OdError> {
    params.validate()?;
    let (w, h) = (map.width(), map.height());
    let m = params.margin;
    if w <= 2 * m || h <= 2 * m {
        return Err(OdError::TooSmall {
            width: w,
            height: h,
            margin: m,
        });
    }
    // valid centres: m ..= last
    let (last_x, last_y) = (w - 1 - m, h - 1 - m);
    let template = DiscTemplate::new(params.template_radius);
    let s = params.search_stride;

    let coarse: Vec<(usize, usize)> = (m..=last_y)
        .step_by(s)
        .flat_map(|y| (m..=last_x).step_by(s).map(move |x| (x, y)))
        .collect();
    let seed = best_of(exec, &template, map, &coarse).ok_or(OdError::NoContrast)?;

    let fine: Vec<(usize, usize)> = (seed.y.saturating_sub(s).max(m)..=(seed.y + s).min(last_y))
        .flat_map(|y| {
            (seed.x.saturating_sub(s).max(m)..=(seed.x + s).min(last_x)).map(move |x| (x, y))
        })
        .collect();
    let best = best_of(exec, &template, map, &fine).unwrap_or(seed);
    Ok(OdCenter {
        x: best.x as f64,
        y: best.y as f64,
        score: best.score,
        source: OdSource::Detected,
    })
}

pub fn manual_od(x: f64, y: f64, map: &IntensityMap) -> Result<OdCenter, OdError> {
    if !map.contains(Point::new(x, y)) {
        return Err(OdError::OutOfBounds {
            x,
            y,
            width: map.width(),
            height: map.height(),
        });
    }
    Ok(OdCenter {
        x,
        y,
        score: 1.0,
        source: OdSource::Manual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(w: usize, h: usize, cx: f64, cy: f64, scale: f64) -> IntensityMap {
        IntensityMap::from_fn(w, h, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            20.0 + 200.0 * (-d2 / (2.0 * scale * scale)).exp()
        })
    }

    fn params(r: usize, stride: usize) -> OdParams {
        OdParams {
            template_radius: r,
            search_stride: stride,
            margin: r,
        }
    }

    /// Exhaustive stride-1 scan, written independently of the search.
    fn oracle(map: &IntensityMap, p: &OdParams) -> (usize, usize, f64) {
        let t = DiscTemplate::new(p.template_radius);
        let mut best: Option<(usize, usize, f64)> = None;
        for y in p.margin..map.height() - p.margin {
            for x in p.margin..map.width() - p.margin {
                if let Some(s) = t.correlate(map, x, y) {
                    if best.is_none_or(|b| s > b.2) {
                        best = Some((x, y, s));
                    }
                }
            }
        }
        best.unwrap()
    }

    #[test]
    fn finds_gaussian_blob() {
        let m = blob(128, 128, 90.0, 40.0, 10.0);
        let p = params(20, 4);
        let od = locate_od(&m, &p).unwrap();
        assert!(
            (od.x - 90.0).abs() <= 2.0 && (od.y - 40.0).abs() <= 2.0,
            "{od:?}"
        );
        assert!(od.score > 0.9);
        assert_eq!(od.source, OdSource::Detected);
        let (ox, oy, os) = oracle(&m, &p);
        assert_eq!((od.x, od.y, od.score), (ox as f64, oy as f64, os));
    }

    #[test]
    fn stride_one_equals_oracle() {
        let m = blob(96, 80, 47.0, 39.0, 6.0);
        let p = params(12, 1);
        let od = locate_od(&m, &p).unwrap();
        let (ox, oy, _) = oracle(&m, &p);
        assert_eq!((od.x, od.y), (ox as f64, oy as f64));
        assert_eq!((od.x, od.y), (47.0, 39.0));
    }

    #[test]
    fn constant_map_has_no_contrast() {
        let m = IntensityMap::filled(64, 64, 90.0);
        assert_eq!(locate_od(&m, &params(8, 4)), Err(OdError::NoContrast));
        assert_eq!(OdError::NoContrast.to_string(), "no od contrast");
    }

    #[test]
    fn too_small() {
        let m = IntensityMap::filled(40, 100, 90.0);
        assert!(matches!(
            locate_od(&m, &params(20, 4)),
            Err(OdError::TooSmall { .. })
        ));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let m = blob(100, 90, 61.0, 33.0, 7.0);
        let p = params(14, 3);
        assert_eq!(
            locate_od_with(Exec::Sequential, &m, &p),
            locate_od_with(Exec::Parallel, &m, &p)
        );
    }

    #[test]
    fn translation_moves_centre_by_the_same_amount() {
        let p = params(12, 4);
        let base = blob(90, 90, 40.0, 44.0, 6.0);
        let od0 = locate_od(&base, &p).unwrap();
        for (dx, dy) in [(3i64, 0i64), (0, 5), (-2, 7), (6, -3)] {
            let shifted = IntensityMap::from_fn(90, 90, |x, y| {
                let sx = (x as i64 - dx).clamp(0, 89) as usize;
                let sy = (y as i64 - dy).clamp(0, 89) as usize;
                base.get(sx, sy)
            });
            let od = locate_od(&shifted, &p).unwrap();
            assert_eq!((od.x - od0.x, od.y - od0.y), (dx as f64, dy as f64));
        }
    }

    #[test]
    fn score_invariant_under_affine_intensity() {
        let m = blob(70, 70, 30.0, 38.0, 5.0);
        let t = DiscTemplate::new(10);
        let scaled = IntensityMap::from_fn(70, 70, |x, y| 0.7 * m.get(x, y) + 13.0);
        for (x, y) in [(30, 38), (20, 20), (45, 50), (33, 36)] {
            let a = t.correlate(&m, x, y).unwrap();
            let b = t.correlate(&scaled, x, y).unwrap();
            assert!((a - b).abs() <= 1e-9);
        }
        let p = params(10, 2);
        let (a, b) = (locate_od(&m, &p).unwrap(), locate_od(&scaled, &p).unwrap());
        assert_eq!((a.x, a.y), (b.x, b.y));
    }

    #[test]
    fn manual_centres() {
        let m = IntensityMap::filled(565, 584, 0.0);
        let od = manual_od(100.0, 80.0, &m).unwrap();
        assert_eq!(
            (od.x, od.y, od.score, od.source),
            (100.0, 80.0, 1.0, OdSource::Manual)
        );
        assert!(matches!(
            manual_od(-1.0, 5.0, &m),
            Err(OdError::OutOfBounds { .. })
        ));
        assert!(manual_od(0.0, 0.0, &IntensityMap::filled(1, 1, 0.0)).is_ok());
        assert!(manual_od(565.0, 3.0, &m).is_err());
    }

    #[test]
    fn source_round_trips_through_text() {
        for s in [OdSource::Detected, OdSource::Manual] {
            assert_eq!(s.to_string().parse::<OdSource>().unwrap(), s);
        }
        assert!("auto".parse::<OdSource>().is_err());
    }
}
