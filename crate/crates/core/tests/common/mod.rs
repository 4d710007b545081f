#![allow(dead_code)]

use retina_core::IntensityMap;

/// 64x64 dark ground (20) with a bright 20x20 square (235) spanning 22..42.
pub fn bright_square() -> IntensityMap {
    IntensityMap::from_fn(64, 64, |x, y| {
        if (22..42).contains(&x) && (22..42).contains(&y) {
            235.0
        } else {
            20.0
        }
    })
}

/// Three 3-px-wide bars meeting at (32, 32) on a 64x64 dark ground.
pub fn y_bifurcation() -> IntensityMap {
    IntensityMap::from_fn(64, 64, |x, y| {
        let p = (x as f64, y as f64);
        let on_bar = |a: (f64, f64), b: (f64, f64)| {
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy) <= 1.5
        };
        let c = (32.0, 32.0);
        if on_bar(c, (32.0, 8.0)) || on_bar(c, (12.0, 54.0)) || on_bar(c, (52.0, 54.0)) {
            220.0
        } else {
            20.0
        }
    })
}

/// Small deterministic generator for fixtures (not used by the library).
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        self.0
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Random 8-bit-valued intensity map.
pub fn random_map(w: usize, h: usize, seed: u64) -> IntensityMap {
    let mut rng = Lcg(seed);
    let values = (0..w * h).map(|_| (rng.next_u64() >> 56) as f64).collect();
    IntensityMap::new(w, h, values).unwrap()
}

/// Eigenvalues of the symmetric matrix [[a, c], [c, b]].
pub fn eigenvalues(a: f64, b: f64, c: f64) -> (f64, f64) {
    let mean = 0.5 * (a + b);
    let radius = (0.25 * (a - b) * (a - b) + c * c).sqrt();
    (mean + radius, mean - radius)
}
