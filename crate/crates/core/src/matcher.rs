//! Modified circular correlation between feature templates, similarity
//! indices, and the identification / verification decisions built on them.
//!
//! For shift `φ` in `1..=360` (0-based slot `t`):
//!
//! ```text
//! Sim(φ) = Σ_t step(in[t] · out[(t + φ) mod 360]) · cos(2 · (in[t] − out[(t + φ) mod 360]) · π/180)
//! ```
//!
//! The class similarity index is the maximum of `Sim` over all shifts and the
//! total is `w1·SI1 + w2·SI2 + w3·SI3`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use thiserror::Error;

use crate::encoder::{ClassId, FeatureTemplate, SLOTS};
use crate::exec::Exec;
use crate::store::GalleryRecord;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("class vector has {0} slots, expected 360")]
    WrongLength(usize),
    #[error("gallery is empty")]
    EmptyGallery,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            w1: 1.0,
            w2: 2.0,
            w3: 4.0,
        }
    }
}

impl Weights {
    pub fn is_valid(&self) -> bool {
        [self.w1, self.w2, self.w3].iter().all(|w| *w >= 0.0)
    }

    pub fn get(&self, class: ClassId) -> f64 {
        match class {
            ClassId::Inner => self.w1,
            ClassId::Middle => self.w2,
            ClassId::Outer => self.w3,
        }
    }

    /// `w1·s1 + w2·s2 + w3·s3`, evaluated left to right.
    pub fn combine(&self, s: [f64; 3]) -> f64 {
        self.w1 * s[0] + self.w2 * s[1] + self.w3 * s[2]
    }
}

/// One overlap term: `cos(2 · Δθ)` with the amplitude difference in radians.
#[inline]
pub fn overlap_term(enrolled: f64, query: f64) -> f64 {
    (2.0 * ((enrolled - query) * PI / 180.0)).cos()
}

/// `Sim(φ)` for `φ = 1..=360`; `values[φ - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityProfile {
    pub class: ClassId,
    pub values: [f64; SLOTS],
}

impl SimilarityProfile {
    pub fn at(&self, shift: usize) -> f64 {
        self.values[shift - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchScore {
    pub si: [f64; 3],
    pub total: f64,
    /// Smallest maximizing shift per class, degrees in 1..=360.
    pub best_shift: [usize; 3],
}

fn nonzero_slots(v: &[f64]) -> Vec<(usize, f64)> {
    v.iter()
        .enumerate()
        .filter(|(_, &a)| a > 0.0)
        .map(|(i, &a)| (i, a))
        .collect()
}

/// Sparse evaluation: only pairs of occupied slots contribute. Enrolled slots
/// are visited in ascending order, so every `Sim(φ)` accumulates its terms in
/// the same order as the dense double loop and the result is bit-identical.
pub fn sim_profile(enrolled: &[f64], query: &[f64]) -> Result<[f64; SLOTS], MatchError> {
    for v in [enrolled, query] {
        if v.len() != SLOTS {
            return Err(MatchError::WrongLength(v.len()));
        }
    }
    let mut values = [0.0; SLOTS];
    let occupied_query = nonzero_slots(query);
    for (t, a) in nonzero_slots(enrolled) {
        for &(s, b) in &occupied_query {
            // s = (t + φ) mod 360, stored at index φ - 1 with φ in 1..=360
            let phi = (s + SLOTS - t) % SLOTS;
            let idx = (phi + SLOTS - 1) % SLOTS;
            values[idx] += overlap_term(a, b);
        }
    }
    Ok(values)
}

pub fn class_profile(
    enrolled: &FeatureTemplate,
    query: &FeatureTemplate,
    class: ClassId,
) -> SimilarityProfile {
    SimilarityProfile {
        class,
        values: sim_profile(enrolled.class(class), query.class(class))
            .expect("templates have 360 slots"),
    }
}

/// Maximum over shifts and the smallest shift attaining it.
pub fn si_class(profile: &SimilarityProfile) -> (f64, usize) {
    let mut best = (profile.values[0], 1);
    for (i, &v) in profile.values.iter().enumerate().skip(1) {
        if v > best.0 {
            best = (v, i + 1);
        }
    }
    best
}

pub fn total_si(enrolled: &FeatureTemplate, query: &FeatureTemplate, w: &Weights) -> MatchScore {
    let mut si = [0.0; 3];
    let mut best_shift = [1; 3];
    for class in ClassId::ALL {
        let (s, shift) = si_class(&class_profile(enrolled, query, class));
        si[class.index()] = s;
        best_shift[class.index()] = shift;
    }
    MatchScore {
        si,
        total: w.combine(si),
        best_shift,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub subject_id: String,
    pub score: MatchScore,
}

fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total
        .total_cmp(&a.score.total)
        .then_with(|| a.subject_id.cmp(&b.subject_id))
}

pub fn identify(
    query: &FeatureTemplate,
    gallery: &[GalleryRecord],
    w: &Weights,
) -> Result<Vec<Candidate>, MatchError> {
    identify_with(Exec::default(), query, gallery, w)
}

/// Scores every record and ranks by descending total, then ascending id.
pub fn identify_with(
    exec: Exec,
    query: &FeatureTemplate,
    gallery: &[GalleryRecord],
    w: &Weights,
) -> Result<Vec<Candidate>, MatchError> {
    if gallery.is_empty() {
        return Err(MatchError::EmptyGallery);
    }
    let mut ranked = exec.map(gallery, |r| Candidate {
        subject_id: r.subject_id.clone(),
        score: total_si(&r.template, query, w),
    });
    ranked.sort_by(rank_order);
    Ok(ranked)
}

/// Ranking by `total / self_total(enrolled)`; records whose self-match total
/// is zero score 0.
pub fn identify_normalized_with(
    exec: Exec,
    query: &FeatureTemplate,
    gallery: &[GalleryRecord],
    w: &Weights,
) -> Result<Vec<Candidate>, MatchError> {
    Ok(normalize_ranking(
        identify_with(exec, query, gallery, w)?,
        gallery,
        w,
    ))
}

/// Re-ranks an `identify` result by size-normalized totals.
pub fn normalize_ranking(
    ranked: Vec<Candidate>,
    gallery: &[GalleryRecord],
    w: &Weights,
) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = ranked
        .into_iter()
        .map(|mut c| {
            let own = gallery
                .iter()
                .find(|r| r.subject_id == c.subject_id)
                .map_or(0.0, |r| self_total(&r.template, w));
            c.score.total = if own > 0.0 { c.score.total / own } else { 0.0 };
            c
        })
        .collect();
    out.sort_by(rank_order);
    out
}

/// Self-match total: `Σ w_i · nonzero_i`.
pub fn self_total(t: &FeatureTemplate, w: &Weights) -> f64 {
    w.combine(ClassId::ALL.map(|c| t.nonzero_count(c) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub decision: Decision,
    pub score: MatchScore,
}

/// Accepts iff the total reaches `threshold`.
pub fn verify(
    query: &FeatureTemplate,
    enrolled: &GalleryRecord,
    threshold: f64,
    w: &Weights,
) -> Verification {
    let score = total_si(&enrolled.template, query, w);
    let decision = if score.total >= threshold {
        Decision::Accept
    } else {
        Decision::Reject
    };
    Verification { decision, score }
}
