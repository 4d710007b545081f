//! Harris corner and bifurcation detection.
//!
//! Gradients use the plain `(-1, 0, 1)` kernel (no 1/2 factor), the structure
//! tensor is smoothed with an *unnormalized* Gaussian window, and intensities
//! stay on the 8-bit scale. The default threshold of `7e4` is only meaningful
//! under exactly this convention.

use thiserror::Error;

use crate::exec::Exec;
use crate::imaging::{Grid, IntensityMap};

#[derive(Debug, Error, PartialEq)]
pub enum HarrisError {
    #[error("map {width}x{height} is too small (need at least {min}x{min})")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("gradient grids differ in shape")]
    ShapeMismatch,
    #[error("invalid Harris parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarrisParams {
    /// Response coefficient in `det - k * trace^2`.
    pub k: f64,
    /// Minimum response kept by the local-maximum stage.
    pub threshold: f64,
    /// Gaussian window scale, pixels.
    pub sigma: f64,
    /// Half-width of the square window.
    pub window_radius: usize,
    /// Chebyshev radius of the local-maximum neighbourhood.
    pub nms_radius: usize,
    /// Frame in which no corner is reported.
    pub border_margin: usize,
}

impl Default for HarrisParams {
    fn default() -> Self {
        HarrisParams {
            k: 0.17,
            threshold: 7e4,
            sigma: 1.5,
            window_radius: 4,
            nms_radius: 3,
            border_margin: 5,
        }
    }
}

impl HarrisParams {
    pub fn validate(&self) -> Result<(), HarrisError> {
        let fail = |m: &str| Err(HarrisError::InvalidParams(m.to_string()));
        if self.k.is_nan() || self.k <= 0.0 {
            return fail("k must be positive");
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return fail("threshold must be non-negative");
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return fail("sigma must be positive");
        }
        if self.window_radius < 1 {
            return fail("window_radius must be at least 1");
        }
        if self.nms_radius < 1 {
            return fail("nms_radius must be at least 1");
        }
        if self.border_margin < self.window_radius + 1 {
            return fail("border_margin must be at least window_radius + 1");
        }
        Ok(())
    }

    /// Smallest side length accepted by [`detect_corners`].
    pub fn min_side(&self) -> usize {
        2 * self.border_margin + 3
    }

    /// One-dimensional factor of the window, `exp(-u^2 / (2 sigma^2))` for
    /// `u` in `-r..=r`. The 2-D window is the outer product.
    pub fn window_1d(&self) -> Vec<f64> {
        let r = self.window_radius as isize;
        let denom = 2.0 * self.sigma * self.sigma;
        (-r..=r)
            .map(|u| (-((u * u) as f64) / denom).exp())
            .collect()
    }
}

/// Per-pixel smoothed gradient products `A`, `B`, `C` of the 2x2 tensor
/// `[[A, C], [C, B]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureTensorField {
    pub a: Grid,
    pub b: Grid,
    pub c: Grid,
}

/// Harris response `det(M) - k * trace(M)^2` per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap(pub Grid);

impl ResponseMap {
    pub fn grid(&self) -> &Grid {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: usize,
    pub y: usize,
    pub response: f64,
}

/// Central differences with replicated edges.
pub fn gradients(map: &IntensityMap) -> Result<(Grid, Grid), HarrisError> {
    let g = map.grid();
    let (w, h) = (g.width(), g.height());
    if w < 3 || h < 3 {
        return Err(HarrisError::TooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let gx = Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        g.get_clamped(x + 1, y) - g.get_clamped(x - 1, y)
    });
    let gy = Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        g.get_clamped(x, y + 1) - g.get_clamped(x, y - 1)
    });
    Ok((gx, gy))
}

/// Separable convolution with `kernel` (centred, odd length) along x then y,
/// replicated-edge extension on both passes.
fn convolve_separable(src: &Grid, kernel: &[f64], exec: Exec) -> Grid {
    let (w, h) = (src.width(), src.height());
    let r = (kernel.len() / 2) as isize;

    let mut horizontal = Grid::filled(w, h, 0.0);
    exec.for_each_row(horizontal.values_mut(), w, |y, row| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * src.get_clamped(x as isize + i as isize - r, y as isize);
            }
            *out = acc;
        }
    });

    let mut out = Grid::filled(w, h, 0.0);
    exec.for_each_row(out.values_mut(), w, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                acc += k * horizontal.get_clamped(x as isize, y as isize + i as isize - r);
            }
            *o = acc;
        }
    });
    out
}

pub fn structure_tensor(
    gx: &Grid,
    gy: &Grid,
    params: &HarrisParams,
) -> Result<StructureTensorField, HarrisError> {
    structure_tensor_with(Exec::default(), gx, gy, params)
}

pub fn structure_tensor_with(
    exec: Exec,
    gx: &Grid,
    gy: &Grid,
    params: &HarrisParams,
) -> Result<StructureTensorField, HarrisError> {
    if !gx.same_shape(gy) {
        return Err(HarrisError::ShapeMismatch);
    }
    let (w, h) = (gx.width(), gx.height());
    let product = |f: fn(f64, f64) -> f64| {
        let values = gx
            .values()
            .iter()
            .zip(gy.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Grid::new(w, h, values).expect("shape checked above")
    };
    let kernel = params.window_1d();
    Ok(StructureTensorField {
        a: convolve_separable(&product(|x, _| x * x), &kernel, exec),
        b: convolve_separable(&product(|_, y| y * y), &kernel, exec),
        c: convolve_separable(&product(|x, y| x * y), &kernel, exec),
    })
}

pub fn response(t: &StructureTensorField, k: f64) -> ResponseMap {
    let values =
        t.a.values()
            .iter()
            .zip(t.b.values())
            .zip(t.c.values())
            .map(|((&a, &b), &c)| {
                let trace = a + b;
                (a * b - c * c) - k * trace * trace
            })
            .collect();
    ResponseMap(Grid::new(t.a.width(), t.a.height(), values).expect("field shapes agree"))
}

pub fn local_maxima(r: &ResponseMap, params: &HarrisParams) -> Vec<Corner> {
    local_maxima_with(Exec::default(), r, params)
}

/// Thresholded strict local maxima in a Chebyshev neighbourhood. Equal-valued
/// neighbours are resolved in favour of the smallest `(y, x)`. Sorted by
/// descending response, then `(y, x)`.
pub fn local_maxima_with(exec: Exec, r: &ResponseMap, params: &HarrisParams) -> Vec<Corner> {
    let g = r.grid();
    let (w, h) = (g.width(), g.height());
    let m = params.border_margin;
    if w <= 2 * m || h <= 2 * m {
        return Vec::new();
    }
    let nr = params.nms_radius as isize;
    let survives = |x: usize, y: usize| -> bool {
        let v = g.get(x, y);
        for ny in (y as isize - nr).max(0)..=(y as isize + nr).min(h as isize - 1) {
            for nx in (x as isize - nr).max(0)..=(x as isize + nr).min(w as isize - 1) {
                let (nx, ny) = (nx as usize, ny as usize);
                if (nx, ny) == (x, y) {
                    continue;
                }
                let n = g.get(nx, ny);
                if n > v || (n == v && (ny, nx) < (y, x)) {
                    return false;
                }
            }
        }
        true
    };
    let rows = exec.map_range(m..h - m, |y| {
        (m..w - m)
            .filter(|&x| g.get(x, y) >= params.threshold && survives(x, y))
            .map(|x| Corner {
                x,
                y,
                response: g.get(x, y),
            })
            .collect::<Vec<_>>()
    });
    let mut corners: Vec<Corner> = rows.into_iter().flatten().collect();
    corners.sort_by(|p, q| {
        q.response
            .total_cmp(&p.response)
            .then((p.y, p.x).cmp(&(q.y, q.x)))
    });
    corners
}

pub fn detect_corners(
    map: &IntensityMap,
    params: &HarrisParams,
) -> Result<Vec<Corner>, HarrisError> {
    detect_corners_with(Exec::default(), map, params)
}

/// gradients -> structure tensor -> response -> local maxima.
pub fn detect_corners_with(
    exec: Exec,
    map: &IntensityMap,
    params: &HarrisParams,
) -> Result<Vec<Corner>, HarrisError> {
    params.validate()?;
    let min = params.min_side();
    if map.width() < min || map.height() < min {
        return Err(HarrisError::TooSmall {
            width: map.width(),
            height: map.height(),
            min,
        });
    }
    let (gx, gy) = gradients(map)?;
    let field = structure_tensor_with(exec, &gx, &gy, params)?;
    Ok(local_maxima_with(exec, &response(&field, params.k), params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, v: &[f64]) -> IntensityMap {
        IntensityMap::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn constant_map_has_zero_gradients() {
        let (gx, gy) = gradients(&IntensityMap::filled(6, 5, 77.0)).unwrap();
        assert!(gx.values().iter().chain(gy.values()).all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_gradient_is_two() {
        let m = IntensityMap::from_fn(8, 6, |x, _| x as f64);
        let (gx, gy) = gradients(&m).unwrap();
        for y in 0..6 {
            for x in 1..7 {
                assert_eq!(gx.get(x, y), 2.0);
                assert_eq!(gy.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn impulse_gradients_with_replicated_edges() {
        let m = map(3, 3, &[0., 0., 0., 0., 9., 0., 0., 0., 0.]);
        let (gx, gy) = gradients(&m).unwrap();
        // brute-force (-1, 0, 1) with clamped indices
        let oracle = |x: i32, y: i32, dx: i32, dy: i32| {
            let at = |x: i32, y: i32| m.get(x.clamp(0, 2) as usize, y.clamp(0, 2) as usize);
            at(x + dx, y + dy) - at(x - dx, y - dy)
        };
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(gx.get(x as usize, y as usize), oracle(x, y, 1, 0));
                assert_eq!(gy.get(x as usize, y as usize), oracle(x, y, 0, 1));
            }
        }
        assert_eq!(gx.get(1, 1), 0.0);
        assert_eq!(gy.get(1, 1), 0.0);
        assert_eq!(gx.get(0, 1), 9.0);
    }

    #[test]
    fn too_small_for_gradients() {
        assert!(matches!(
            gradients(&IntensityMap::filled(2, 5, 0.0)),
            Err(HarrisError::TooSmall { .. })
        ));
    }

    #[test]
    fn tensor_of_constant_gradient() {
        let p = HarrisParams::default();
        let gx = Grid::filled(12, 12, 1.0);
        let gy = Grid::filled(12, 12, 0.0);
        let t = structure_tensor(&gx, &gy, &p).unwrap();
        let w = p.window_1d();
        let total: f64 = w.iter().flat_map(|a| w.iter().map(move |b| a * b)).sum();
        for v in t.a.values() {
            assert!((v - total).abs() < 1e-12 * total);
        }
        assert!(t.b.values().iter().chain(t.c.values()).all(|&v| v == 0.0));

        let zero = structure_tensor(&gy, &gy, &p).unwrap();
        assert!(zero.a.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tensor_shape_mismatch() {
        let p = HarrisParams::default();
        assert_eq!(
            structure_tensor(&Grid::filled(4, 4, 0.0), &Grid::filled(5, 4, 0.0), &p),
            Err(HarrisError::ShapeMismatch)
        );
    }

    /// Direct 2-D double loop with clamped indices and the 2-D window.
    fn direct_convolution(src: &Grid, p: &HarrisParams) -> Grid {
        let r = p.window_radius as isize;
        Grid::from_fn(src.width(), src.height(), |x, y| {
            let mut acc = 0.0;
            for v in -r..=r {
                for u in -r..=r {
                    let w = (-((u * u + v * v) as f64) / (2.0 * p.sigma * p.sigma)).exp();
                    acc += w * src.get_clamped(x as isize + u, y as isize + v);
                }
            }
            acc
        })
    }

    #[test]
    fn impulse_reproduces_window() {
        let p = HarrisParams::default();
        let mut gx = Grid::filled(15, 15, 0.0);
        gx.set(7, 7, 1.0);
        let gy = Grid::filled(15, 15, 0.0);
        let t = structure_tensor(&gx, &gy, &p).unwrap();
        let oracle = direct_convolution(&gx, &p);
        for (a, b) in t.a.values().iter().zip(oracle.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!((t.a.get(7, 7) - 1.0).abs() < 1e-15);
        assert!((t.a.get(9, 8) - (-5.0f64 / 4.5).exp()).abs() < 1e-12);
        assert_eq!(t.a.get(7, 2), 0.0);
    }

    #[test]
    fn separable_matches_direct_on_random_field() {
        let p = HarrisParams::default();
        let src = Grid::from_fn(11, 9, |x, y| ((x * 31 + y * 17) % 23) as f64 - 11.0);
        let fast = convolve_separable(&src, &p.window_1d(), Exec::Sequential);
        let slow = direct_convolution(&src, &p);
        for (a, b) in fast.values().iter().zip(slow.values()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn response_substitution() {
        let one = |v| Grid::filled(1, 1, v);
        let t = StructureTensorField {
            a: one(100.0),
            b: one(100.0),
            c: one(0.0),
        };
        assert_eq!(response(&t, 0.17).grid().get(0, 0), 3200.0);
        let z = StructureTensorField {
            a: one(0.0),
            b: one(0.0),
            c: one(0.0),
        };
        assert_eq!(response(&z, 0.17).grid().get(0, 0), 0.0);
    }

    fn response_from(w: usize, h: usize, values: Vec<f64>) -> ResponseMap {
        ResponseMap(Grid::new(w, h, values).unwrap())
    }

    fn nms_params() -> HarrisParams {
        HarrisParams {
            nms_radius: 1,
            window_radius: 1,
            border_margin: 2,
            ..HarrisParams::default()
        }
    }

    #[test]
    fn zero_response_has_no_maxima() {
        let r = response_from(9, 9, vec![0.0; 81]);
        assert!(local_maxima(&r, &nms_params()).is_empty());
    }

    #[test]
    fn single_peak_is_kept() {
        let mut v = vec![0.0; 81];
        v[4 * 9 + 4] = 8e4;
        let c = local_maxima(&response_from(9, 9, v), &nms_params());
        assert_eq!(
            c,
            vec![Corner {
                x: 4,
                y: 4,
                response: 8e4
            }]
        );
    }

    #[test]
    fn below_threshold_peak_dropped() {
        let mut v = vec![0.0; 81];
        v[4 * 9 + 4] = 6.9e4;
        assert!(local_maxima(&response_from(9, 9, v), &nms_params()).is_empty());
    }

    #[test]
    fn plateau_keeps_lexicographically_smallest() {
        // 5x5 map, margin 1 frame so the interior 3x3 is eligible.
        let p = HarrisParams {
            nms_radius: 1,
            window_radius: 1,
            border_margin: 1,
            ..HarrisParams::default()
        };
        for (a, b) in [
            ((1, 2), (2, 2)),
            ((2, 1), (2, 2)),
            ((2, 2), (3, 2)),
            ((2, 2), (3, 3)),
        ] {
            let mut v = vec![0.0; 25];
            v[a.1 * 5 + a.0] = 9e4;
            v[b.1 * 5 + b.0] = 9e4;
            let got = local_maxima(&response_from(5, 5, v), &p);
            // exhaustive statement of the rule: the survivor is min by (y, x)
            let want = if (a.1, a.0) < (b.1, b.0) { a } else { b };
            assert_eq!(got.len(), 1);
            assert_eq!((got[0].x, got[0].y), want);
        }
    }

    #[test]
    fn border_frame_excluded() {
        let mut v = vec![0.0; 81];
        v[9 + 1] = 9e4;
        assert!(local_maxima(&response_from(9, 9, v), &nms_params()).is_empty());
    }

    #[test]
    fn params_validation() {
        assert!(HarrisParams::default().validate().is_ok());
        let bad = HarrisParams {
            border_margin: 4,
            ..HarrisParams::default()
        };
        assert!(bad.validate().is_err());
        assert!(HarrisParams {
            k: 0.0,
            ..HarrisParams::default()
        }
        .validate()
        .is_err());
        assert!(HarrisParams {
            sigma: -1.0,
            ..HarrisParams::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn detect_rejects_small_maps() {
        let p = HarrisParams::default();
        assert!(matches!(
            detect_corners(&IntensityMap::filled(12, 40, 10.0), &p),
            Err(HarrisError::TooSmall { min: 13, .. })
        ));
        assert!(detect_corners(&IntensityMap::filled(13, 13, 10.0), &p)
            .unwrap()
            .is_empty());
    }
}
