//! Polar pulse encoding of a corner set around the optic-disc centre.
//!
//! Each corner within 80 px of the centre becomes a rectangular pulse in the
//! 360-slot vector of its distance class. The pulse starts at
//! `floor(orientation)`, lasts 2, 3 or 4 slots (class 1, 2, 3) and carries the
//! orientation itself as amplitude. Orientation 0 is stored as 360 so that a
//! zero slot always means "empty".

use std::cmp::Ordering;
use std::fmt;

use crate::harris::Corner;
use crate::optic_disc::OdCenter;

/// Slots per class vector.
pub const SLOTS: usize = 360;
/// Corners at or beyond this distance from the centre are ignored.
pub const GATE_RADIUS: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarCorner {
    /// Euclidean distance to the OD centre, pixels.
    pub distance: f64,
    /// Degrees in [0, 360), counter-clockwise from +x with y pointing up.
    pub orientation: f64,
    pub response: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassId {
    Inner = 1,
    Middle = 2,
    Outer = 3,
}

impl ClassId {
    pub const ALL: [ClassId; 3] = [ClassId::Inner, ClassId::Middle, ClassId::Outer];

    /// 0-based index into `FeatureTemplate::vectors`.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn number(self) -> u8 {
        self as u8
    }

    /// Pulse length in slots.
    pub fn duration(self) -> usize {
        match self {
            ClassId::Inner => 2,
            ClassId::Middle => 3,
            ClassId::Outer => 4,
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Half-open bands `[0, 25)`, `[25, 50)`, `[50, 80)`.
pub fn classify(distance: f64) -> Option<ClassId> {
    if distance.is_nan() || distance < 0.0 {
        None
    } else if distance < 25.0 {
        Some(ClassId::Inner)
    } else if distance < 50.0 {
        Some(ClassId::Middle)
    } else if distance < GATE_RADIUS {
        Some(ClassId::Outer)
    } else {
        None
    }
}

/// Maps any angle into `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can return 360.0 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

pub fn polarize(corners: &[Corner], od: &OdCenter) -> Vec<PolarCorner> {
    corners
        .iter()
        .filter_map(|c| {
            let dx = c.x as f64 - od.x;
            let dy = od.y - c.y as f64;
            let distance = dx.hypot(dy);
            (distance < GATE_RADIUS).then(|| PolarCorner {
                distance,
                orientation: normalize_degrees(dy.atan2(dx).to_degrees()),
                response: c.response,
            })
        })
        .collect()
}

/// Three class vectors of 360 orientation amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTemplate {
    pub vectors: [[f64; SLOTS]; 3],
}

impl Default for FeatureTemplate {
    fn default() -> Self {
        FeatureTemplate {
            vectors: [[0.0; SLOTS]; 3],
        }
    }
}

impl FeatureTemplate {
    pub fn class(&self, class: ClassId) -> &[f64; SLOTS] {
        &self.vectors[class.index()]
    }

    pub fn nonzero_count(&self, class: ClassId) -> usize {
        self.class(class).iter().filter(|&&a| a != 0.0).count()
    }

    /// Every slot is 0 or in (0, 360].
    pub fn is_valid(&self) -> bool {
        self.vectors
            .iter()
            .flatten()
            .all(|&a| a == 0.0 || (a > 0.0 && a <= 360.0))
    }

    /// The template of the same corners rotated by `delta` whole degrees:
    /// slots shift forward by `delta` and amplitudes advance by `delta`,
    /// wrapping into (0, 360].
    pub fn rotated(&self, delta: i64) -> FeatureTemplate {
        let shift = delta.rem_euclid(SLOTS as i64) as usize;
        let mut out = FeatureTemplate::default();
        for (src, dst) in self.vectors.iter().zip(out.vectors.iter_mut()) {
            for (slot, &a) in src.iter().enumerate() {
                dst[(slot + shift) % SLOTS] = advance_amplitude(a, shift as f64);
            }
        }
        out
    }
}

/// `((a + delta - 1) mod 360) + 1` for nonzero `a`, computed so that it agrees
/// bit-for-bit with encoding an orientation advanced by `delta`.
pub fn advance_amplitude(a: f64, delta: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    amplitude_of(normalize_degrees(a + delta))
}

fn amplitude_of(orientation: f64) -> f64 {
    if orientation > 0.0 {
        orientation
    } else {
        SLOTS as f64
    }
}

/// Descending response, then ascending (orientation, distance).
fn paint_order(p: &PolarCorner, q: &PolarCorner) -> Ordering {
    q.response
        .total_cmp(&p.response)
        .then(p.orientation.total_cmp(&q.orientation))
        .then(p.distance.total_cmp(&q.distance))
}

/// Paints class pulses, strongest corner first; occupied slots are never
/// overwritten. Corners outside the 80 px gate are skipped.
pub fn encode(pcs: &[PolarCorner]) -> FeatureTemplate {
    let mut ordered: Vec<&PolarCorner> = pcs.iter().collect();
    ordered.sort_by(|p, q| paint_order(p, q));
    let mut template = FeatureTemplate::default();
    for pc in ordered {
        let Some(class) = classify(pc.distance) else {
            continue;
        };
        let orientation = normalize_degrees(pc.orientation);
        let start = (orientation.floor() as usize) % SLOTS;
        let amplitude = amplitude_of(orientation);
        let vector = &mut template.vectors[class.index()];
        for i in 0..class.duration() {
            let slot = &mut vector[(start + i) % SLOTS];
            if *slot == 0.0 {
                *slot = amplitude;
            }
        }
    }
    template
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optic_disc::OdSource;

    fn od(x: f64, y: f64) -> OdCenter {
        OdCenter {
            x,
            y,
            score: 1.0,
            source: OdSource::Manual,
        }
    }

    fn corner(x: usize, y: usize) -> Corner {
        Corner {
            x,
            y,
            response: 1e5,
        }
    }

    fn pc(distance: f64, orientation: f64, response: f64) -> PolarCorner {
        PolarCorner {
            distance,
            orientation,
            response,
        }
    }

    #[test]
    fn polar_axes() {
        let c = od(100.0, 100.0);
        let p = polarize(&[corner(110, 100), corner(100, 90), corner(200, 100)], &c);
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].distance, p[0].orientation), (10.0, 0.0));
        assert_eq!((p[1].distance, p[1].orientation), (10.0, 90.0));
        assert_eq!(p[0].response, 1e5);
        let left_down = polarize(&[corner(90, 110)], &c);
        assert!((left_down[0].orientation - 225.0).abs() < 1e-12);
    }

    #[test]
    fn class_bands() {
        assert_eq!(classify(10.0), Some(ClassId::Inner));
        assert_eq!(classify(0.0), Some(ClassId::Inner));
        assert_eq!(classify(25.0), Some(ClassId::Middle));
        assert_eq!(classify(49.999), Some(ClassId::Middle));
        assert_eq!(classify(50.0), Some(ClassId::Outer));
        assert_eq!(classify(79.999), Some(ClassId::Outer));
        assert_eq!(classify(80.0), None);
        assert_eq!(classify(-1.0), None);
    }

    #[test]
    fn empty_set_gives_zero_template() {
        let t = encode(&[]);
        assert!(t.vectors.iter().flatten().all(|&a| a == 0.0));
    }

    /// Independent slot painter: walks every slot and asks which corner, in
    /// paint order, first claims it.
    fn painted_by_oracle(pcs: &[PolarCorner]) -> FeatureTemplate {
        let mut order: Vec<PolarCorner> = pcs.to_vec();
        order.sort_by(|p, q| {
            (-p.response, p.orientation, p.distance)
                .partial_cmp(&(-q.response, q.orientation, q.distance))
                .unwrap()
        });
        let mut t = FeatureTemplate::default();
        for (ci, dur) in [(0usize, 2usize), (1, 3), (2, 4)] {
            for slot in 0..360usize {
                for p in &order {
                    let class = if p.distance < 25.0 {
                        0
                    } else if p.distance < 50.0 {
                        1
                    } else if p.distance < 80.0 {
                        2
                    } else {
                        9
                    };
                    if class != ci {
                        continue;
                    }
                    let start = p.orientation.floor() as usize;
                    let covers = (0..dur).any(|i| (start + i) % 360 == slot);
                    if covers {
                        t.vectors[ci][slot] = if p.orientation == 0.0 {
                            360.0
                        } else {
                            p.orientation
                        };
                        break;
                    }
                }
            }
        }
        t
    }

    #[test]
    fn wraparound_pulse() {
        let pcs = [pc(60.0, 359.5, 1e5)];
        let t = encode(&pcs);
        for slot in [359, 0, 1, 2] {
            assert_eq!(t.vectors[2][slot], 359.5);
        }
        assert_eq!(t.nonzero_count(ClassId::Outer), 4);
        assert_eq!(t.nonzero_count(ClassId::Inner), 0);
        assert_eq!(t, painted_by_oracle(&pcs));
    }

    #[test]
    fn first_write_wins() {
        let pcs = [pc(10.0, 11.0, 8e4), pc(10.0, 10.2, 9e4)];
        let t = encode(&pcs);
        assert_eq!(t.vectors[0][10], 10.2);
        assert_eq!(t.vectors[0][11], 10.2);
        assert_eq!(t.vectors[0][12], 11.0);
        assert_eq!(t.nonzero_count(ClassId::Inner), 3);
        assert_eq!(t, painted_by_oracle(&pcs));
    }

    #[test]
    fn zero_orientation_stored_as_full_turn() {
        let t = encode(&[pc(30.0, 0.0, 1.0)]);
        assert_eq!(&t.vectors[1][0..4], &[360.0, 360.0, 360.0, 0.0]);
    }

    #[test]
    fn gated_corners_are_skipped() {
        assert_eq!(encode(&[pc(80.0, 12.0, 1.0)]), FeatureTemplate::default());
    }

    #[test]
    fn advance_wraps_into_full_turn() {
        assert_eq!(advance_amplitude(0.0, 7.0), 0.0);
        assert_eq!(advance_amplitude(359.5, 1.0), 0.5);
        assert_eq!(advance_amplitude(350.0, 10.0), 360.0);
        assert_eq!(advance_amplitude(360.0, 10.0), 10.0);
        assert_eq!(advance_amplitude(360.0, 0.0), 360.0);
    }

    use proptest::prelude::*;

    fn polar_set() -> impl Strategy<Value = Vec<PolarCorner>> {
        proptest::collection::vec(
            (0.0f64..79.99, 0.0f64..360.0, 7e4f64..7e5).prop_map(|(d, o, r)| pc(d, o, r)),
            0..30,
        )
    }

    proptest! {
        #[test]
        fn matches_slot_painting_oracle(pcs in polar_set()) {
            prop_assert_eq!(encode(&pcs), painted_by_oracle(&pcs));
        }

        #[test]
        fn input_order_is_irrelevant(mut pcs in polar_set(), seed in any::<u64>()) {
            let t = encode(&pcs);
            let n = pcs.len();
            if n > 1 {
                let k = (seed as usize) % n;
                pcs.rotate_left(k);
                pcs.reverse();
            }
            prop_assert_eq!(encode(&pcs), t);
        }

        #[test]
        fn slot_count_conservation(pcs in polar_set()) {
            let t = encode(&pcs);
            prop_assert!(t.is_valid());
            for class in ClassId::ALL {
                let n = pcs.iter().filter(|p| classify(p.distance) == Some(class)).count();
                prop_assert!(t.nonzero_count(class) <= class.duration() * n);
            }
        }

        #[test]
        fn rotation_covariance(pcs in polar_set(), delta in 0i64..360) {
            let rotated: Vec<PolarCorner> = pcs
                .iter()
                .map(|p| pc(p.distance, normalize_degrees(p.orientation + delta as f64), p.response))
                .collect();
            prop_assert_eq!(encode(&rotated), encode(&pcs).rotated(delta));
        }

        #[test]
        fn pulse_heads_are_coherent(pcs in polar_set()) {
            let t = encode(&pcs);
            for p in &pcs {
                let Some(class) = classify(p.distance) else { continue };
                let start = p.orientation.floor() as usize % 360;
                let a = t.class(class)[start];
                if a == amplitude_of(p.orientation) {
                    prop_assert_eq!((a % 360.0).floor() as usize, start);
                }
            }
        }
    }
}
