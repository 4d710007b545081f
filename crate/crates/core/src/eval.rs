//! Rotation experiments, rank-1 accuracy tables, FAR/FRR sweeps and seeded
//! synthetic data.
//!
//! Every random draw comes from a ChaCha stream keyed by `(seed, tags...)`, so
//! a trial's outcome depends only on its coordinates, never on scheduling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::{
    encode, normalize_degrees, polarize, FeatureTemplate, PolarCorner, GATE_RADIUS, SLOTS,
};
use crate::exec::Exec;
use crate::harris::{
    detect_corners_with, gradients, local_maxima_with, response, structure_tensor_with,
    HarrisParams,
};
use crate::imaging::{rotate_about, IntensityMap, Point};
use crate::matcher::{identify_with, normalize_ranking, total_si, Weights};
use crate::optic_disc::{OdCenter, OdParams};
use crate::pipeline::{extract_template, load_intensity, resolve_od, PipelineError};
use crate::store::{validate_subject_id, Gallery, GalleryRecord, OdAnchor};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {0}")]
    Precondition(String),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: PipelineError,
    },
    #[error("cannot list {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid subject name derived from {0}")]
    BadSubject(PathBuf),
}

/// Lower response bound of synthetic corners (the default Harris threshold).
pub const SYNTH_MIN_RESPONSE: f64 = 7e4;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    /// Rotated probes per subject, one experiment per entry.
    pub rotation_counts: Vec<usize>,
    /// Probe angles are uniform in `[-angle_range, angle_range]` degrees.
    pub angle_range: f64,
    pub jitter_px: f64,
    pub jitter_deg: f64,
    pub seed: u64,
    pub weights: Weights,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            rotation_counts: vec![5, 10, 20],
            angle_range: 15.0,
            jitter_px: 0.5,
            jitter_deg: 0.5,
            seed: 42,
            weights: Weights::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.rotation_counts.is_empty() || self.rotation_counts.contains(&0) {
            return Err(EvalError::Precondition("one rotation per query".into()));
        }
        if self.angle_range.is_nan() || self.angle_range <= 0.0 {
            return Err(EvalError::Precondition("a positive angle range".into()));
        }
        if !(self.jitter_px >= 0.0 && self.jitter_deg >= 0.0) {
            return Err(EvalError::Precondition("non-negative jitter".into()));
        }
        Ok(())
    }
}

/// Where enrolled subjects come from.
#[derive(Debug, Clone)]
pub enum GallerySource {
    Synthetic {
        subjects: usize,
        corners: usize,
    },
    Images {
        dir: PathBuf,
        harris: HarrisParams,
        od: OdParams,
    },
}

/// ChaCha stream keyed by the seed and a path of tags.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut key = splitmix(seed);
    for &t in tags {
        key = splitmix(key ^ splitmix(t.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    ChaCha8Rng::seed_from_u64(key)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TAG_SUBJECT: u64 = 1;
const TAG_TRIAL: u64 = 2;

fn symmetric(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Random polar corner set: distances in [5, 79], orientations in [0, 360),
/// responses in [7e4, 7e5].
pub fn synth_constellation(
    n_corners: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PolarCorner>, EvalError> {
    if n_corners == 0 {
        return Err(EvalError::Precondition(
            "one corner per constellation".into(),
        ));
    }
    Ok((0..n_corners)
        .map(|_| PolarCorner {
            distance: rng.random_range(5.0..=79.0),
            orientation: rng.random_range(0.0..360.0),
            response: rng.random_range(SYNTH_MIN_RESPONSE..=10.0 * SYNTH_MIN_RESPONSE),
        })
        .collect())
}

/// Rotates a polar set by `angle` degrees with per-corner orientation and
/// distance jitter. Distances are clamped into the 80 px gate.
pub fn perturb(
    pcs: &[PolarCorner],
    angle: f64,
    spec: &ExperimentSpec,
    rng: &mut impl Rng,
) -> Vec<PolarCorner> {
    pcs.iter()
        .map(|p| {
            let dtheta = symmetric(rng, spec.jitter_deg);
            let dr = symmetric(rng, spec.jitter_px);
            PolarCorner {
                distance: (p.distance + dr).clamp(0.0, 79.999),
                orientation: normalize_degrees(p.orientation + angle + dtheta),
                response: p.response,
            }
        })
        .collect()
}

/// Subject ids `s001`, `s002`, ...
pub fn synthetic_subject_id(index: usize) -> String {
    format!("s{:03}", index + 1)
}

/// Seeded constellations for `subjects` subjects.
pub fn synth_constellations(
    subjects: usize,
    corners: usize,
    seed: u64,
) -> Result<Vec<Vec<PolarCorner>>, EvalError> {
    (0..subjects)
        .map(|s| synth_constellation(corners, &mut stream(seed, &[TAG_SUBJECT, s as u64])))
        .collect()
}

pub fn synth_gallery(subjects: usize, corners: usize, seed: u64) -> Result<Gallery, EvalError> {
    let records = synth_constellations(subjects, corners, seed)?
        .iter()
        .enumerate()
        .map(|(i, pcs)| GalleryRecord::synthetic(&synthetic_subject_id(i), encode(pcs)))
        .collect();
    Ok(Gallery { records })
}

/// True when no template equals another under any whole-degree rotation.
pub fn pairwise_distinct_under_rotation(templates: &[FeatureTemplate]) -> bool {
    for (i, a) in templates.iter().enumerate() {
        for b in &templates[i + 1..] {
            for delta in 0..SLOTS {
                let same = a.vectors.iter().zip(&b.vectors).all(|(va, vb)| {
                    (0..SLOTS).all(|slot| {
                        vb[(slot + delta) % SLOTS]
                            == crate::encoder::advance_amplitude(va[slot], delta as f64)
                    })
                });
                if same {
                    return false;
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub rotations: usize,
    pub trials: usize,
    pub hits: usize,
    /// Rank-1 accuracy, percent.
    pub accuracy: f64,
    /// Rank-1 accuracy when totals are divided by each enrolled template's
    /// self-match total.
    pub normalized_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Miss {
    pub rotations: usize,
    pub subject: String,
    pub angle: f64,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub rows: Vec<AccuracyRow>,
    /// Unweighted mean of the row accuracies.
    pub mean: f64,
    pub normalized_mean: f64,
    pub source_images: usize,
    pub probes: usize,
    pub misidentified: Vec<Miss>,
    /// Result of the rotation-distinctness pre-check (synthetic galleries only).
    pub gallery_distinct: Option<bool>,
}

impl AccuracyReport {
    fn from_rows(
        rows: Vec<AccuracyRow>,
        source_images: usize,
        misidentified: Vec<Miss>,
        gallery_distinct: Option<bool>,
    ) -> Self {
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let normalized_mean = rows.iter().map(|r| r.normalized_accuracy).sum::<f64>() / n;
        let probes = rows.iter().map(|r| r.trials).sum();
        AccuracyReport {
            rows,
            mean,
            normalized_mean,
            source_images,
            probes,
            misidentified,
            gallery_distinct,
        }
    }

    /// Plain-text table: one column per rotation count plus the mean.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<22}", "Times of rotation");
        for r in &self.rows {
            let _ = write!(out, "{:>10}", r.rotations);
        }
        let _ = writeln!(out, "{:>10}", "Mean");
        let _ = write!(out, "{:<22}", "Accuracy (%)");
        for r in &self.rows {
            let _ = write!(out, "{:>10.2}", r.accuracy);
        }
        let _ = writeln!(out, "{:>10.2}", self.mean);
        let _ = write!(out, "{:<22}", "Normalized SI (%)");
        for r in &self.rows {
            let _ = write!(out, "{:>10.2}", r.normalized_accuracy);
        }
        let _ = writeln!(out, "{:>10.2}", self.normalized_mean);
        let _ = writeln!(
            out,
            "source images: {}, rotated probes: {}",
            self.source_images, self.probes
        );
        if let Some(distinct) = self.gallery_distinct {
            let _ = writeln!(
                out,
                "gallery pairwise distinct under rotation: {}",
                if distinct { "yes" } else { "no" }
            );
        }
        for m in &self.misidentified {
            let _ = writeln!(
                out,
                "miss: rotations={} subject={} angle={:.4} ranked_first={}",
                m.rotations, m.subject, m.angle, m.predicted
            );
        }
        out
    }

    /// `rotations,accuracy_percent` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rotations,accuracy_percent\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6}", r.rotations, r.accuracy);
        }
        let _ = writeln!(out, "mean,{:.6}", self.mean);
        out
    }
}

struct Outcome {
    hit: bool,
    normalized_hit: bool,
    predicted: String,
    angle: f64,
}

fn tally(
    spec: &ExperimentSpec,
    trial_keys: &[(usize, usize, usize)],
    outcomes: Vec<Outcome>,
    ids: &[String],
) -> (Vec<AccuracyRow>, Vec<Miss>) {
    let mut rows = Vec::new();
    let mut misses = Vec::new();
    for &count in &spec.rotation_counts {
        let (mut trials, mut hits, mut nhits) = (0, 0, 0);
        for (key, o) in trial_keys.iter().zip(&outcomes) {
            if key.0 != count {
                continue;
            }
            trials += 1;
            hits += o.hit as usize;
            nhits += o.normalized_hit as usize;
            if !o.hit {
                misses.push(Miss {
                    rotations: count,
                    subject: ids[key.1].clone(),
                    angle: o.angle,
                    predicted: o.predicted.clone(),
                });
            }
        }
        rows.push(AccuracyRow {
            rotations: count,
            trials,
            hits,
            accuracy: 100.0 * hits as f64 / trials as f64,
            normalized_accuracy: 100.0 * nhits as f64 / trials as f64,
        });
    }
    (rows, misses)
}

/// `(rotation_count, subject_index, trial_index)` for every probe.
fn trial_keys(spec: &ExperimentSpec, subjects: usize) -> Vec<(usize, usize, usize)> {
    spec.rotation_counts
        .iter()
        .flat_map(|&c| (0..subjects).flat_map(move |s| (0..c).map(move |t| (c, s, t))))
        .collect()
}

fn judge(
    exec: Exec,
    query: &FeatureTemplate,
    gallery: &[GalleryRecord],
    truth: &str,
    w: &Weights,
    angle: f64,
) -> Outcome {
    // gallery is non-empty: checked by the callers
    let ranked = identify_with(exec, query, gallery, w).expect("non-empty gallery");
    let normalized = normalize_ranking(ranked.clone(), gallery, w);
    Outcome {
        hit: ranked[0].subject_id == truth,
        normalized_hit: normalized[0].subject_id == truth,
        predicted: ranked[0].subject_id.clone(),
        angle,
    }
}

pub fn rotation_experiment(
    source: &GallerySource,
    spec: &ExperimentSpec,
) -> Result<AccuracyReport, EvalError> {
    rotation_experiment_with(Exec::default(), source, spec)
}

/// Enrolls each subject once, then identifies `count` rotated probes per
/// subject for each rotation count in the spec.
pub fn rotation_experiment_with(
    exec: Exec,
    source: &GallerySource,
    spec: &ExperimentSpec,
) -> Result<AccuracyReport, EvalError> {
    spec.validate()?;
    match source {
        GallerySource::Synthetic { subjects, corners } => {
            synthetic_experiment(exec, *subjects, *corners, spec)
        }
        GallerySource::Images { dir, harris, od } => image_experiment(exec, dir, harris, od, spec),
    }
}

fn synthetic_experiment(
    exec: Exec,
    subjects: usize,
    corners: usize,
    spec: &ExperimentSpec,
) -> Result<AccuracyReport, EvalError> {
    if subjects < 2 {
        return Err(EvalError::Precondition("2 subjects".into()));
    }
    let constellations = synth_constellations(subjects, corners, spec.seed)?;
    let gallery: Vec<GalleryRecord> = constellations
        .iter()
        .enumerate()
        .map(|(i, pcs)| GalleryRecord::synthetic(&synthetic_subject_id(i), encode(pcs)))
        .collect();
    let templates: Vec<FeatureTemplate> = gallery.iter().map(|r| r.template.clone()).collect();
    let distinct = pairwise_distinct_under_rotation(&templates);
    let ids: Vec<String> = gallery.iter().map(|r| r.subject_id.clone()).collect();

    let keys = trial_keys(spec, subjects);
    // scoring inside a trial stays sequential; trials are the parallel unit
    let outcomes = exec.map(&keys, |&(count, s, t)| {
        let mut rng = stream(spec.seed, &[TAG_TRIAL, count as u64, s as u64, t as u64]);
        let angle = symmetric(&mut rng, spec.angle_range);
        let query = encode(&perturb(&constellations[s], angle, spec, &mut rng));
        judge(
            Exec::Sequential,
            &query,
            &gallery,
            &ids[s],
            &spec.weights,
            angle,
        )
    });
    let (rows, misses) = tally(spec, &keys, outcomes, &ids);
    Ok(AccuracyReport::from_rows(
        rows,
        subjects,
        misses,
        Some(distinct),
    ))
}

/// `*.pgm` / `*.ppm` files in `dir`, sorted by file name bytes.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io = |source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("pgm" | "ppm")) {
            files.push(path);
        }
    }
    files.sort_by(|a, b| {
        a.file_name()
            .map(|n| n.as_encoded_bytes().to_vec())
            .cmp(&b.file_name().map(|n| n.as_encoded_bytes().to_vec()))
    });
    Ok(files)
}

struct EnrolledImage {
    map: IntensityMap,
    od: OdCenter,
}

fn image_experiment(
    exec: Exec,
    dir: &Path,
    harris: &HarrisParams,
    od_params: &OdParams,
    spec: &ExperimentSpec,
) -> Result<AccuracyReport, EvalError> {
    let files = image_files(dir)?;
    if files.len() < 2 {
        return Err(EvalError::Precondition("2 subject images".into()));
    }
    let wrap = |path: &Path| {
        let path = path.to_path_buf();
        move |source: PipelineError| EvalError::Image { path, source }
    };
    let mut ids = Vec::new();
    let mut enrolled = Vec::new();
    let mut gallery = Vec::new();
    for file in &files {
        let id = file
            .file_stem()
            .and_then(|s| s.to_str())
            .filter(|s| validate_subject_id(s).is_ok())
            .ok_or_else(|| EvalError::BadSubject(file.clone()))?
            .to_string();
        let map = load_intensity(file).map_err(wrap(file))?;
        let od = resolve_od(exec, &map, Some(file), None, od_params).map_err(wrap(file))?;
        let (_, template) = extract_template(exec, &map, &od, harris).map_err(wrap(file))?;
        gallery.push(GalleryRecord {
            subject_id: id.clone(),
            template,
            source_image: file.display().to_string(),
            od: OdAnchor::from(od),
        });
        ids.push(id);
        enrolled.push(EnrolledImage { map, od });
    }

    let keys = trial_keys(spec, files.len());
    let outcomes: Vec<Result<Outcome, EvalError>> = exec.map(&keys, |&(count, s, t)| {
        let mut rng = stream(spec.seed, &[TAG_TRIAL, count as u64, s as u64, t as u64]);
        let angle = symmetric(&mut rng, spec.angle_range);
        let subject = &enrolled[s];
        let rotated = rotate_about(&subject.map, subject.od.point(), angle);
        let corners = detect_corners_with(Exec::Sequential, &rotated, harris)
            .map_err(|e| wrap(&files[s])(PipelineError::Harris(e)))?;
        let query = encode(&polarize(&corners, &subject.od));
        Ok(judge(
            Exec::Sequential,
            &query,
            &gallery,
            &ids[s],
            &spec.weights,
            angle,
        ))
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (rows, misses) = tally(spec, &keys, outcomes, &ids);
    Ok(AccuracyReport::from_rows(rows, files.len(), misses, None))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarFrrRow {
    pub threshold: f64,
    /// Impostor accepts / impostor trials, percent.
    pub far: f64,
    /// Genuine rejects / genuine trials, percent.
    pub frr: f64,
}

/// Scores every probe against every record (genuine when ids match) and
/// counts accepts (`total >= threshold`) at each threshold.
pub fn far_frr_sweep(
    exec: Exec,
    gallery: &Gallery,
    probes: &[(String, FeatureTemplate)],
    thresholds: &[f64],
    w: &Weights,
) -> Result<Vec<FarFrrRow>, EvalError> {
    if gallery.is_empty() || probes.is_empty() || thresholds.is_empty() {
        return Err(EvalError::Precondition(
            "a non-empty gallery, probe list and threshold list".into(),
        ));
    }
    let scored: Vec<Vec<(bool, f64)>> = exec.map(probes, |(id, probe)| {
        gallery
            .records
            .iter()
            .map(|r| (r.subject_id == *id, total_si(&r.template, probe, w).total))
            .collect()
    });
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    for (is_genuine, total) in scored.into_iter().flatten() {
        if is_genuine {
            genuine.push(total);
        } else {
            impostor.push(total);
        }
    }
    let rate = |n: usize, d: usize| {
        if d == 0 {
            0.0
        } else {
            100.0 * n as f64 / d as f64
        }
    };
    Ok(thresholds
        .iter()
        .map(|&th| FarFrrRow {
            threshold: th,
            far: rate(
                impostor.iter().filter(|&&s| s >= th).count(),
                impostor.len(),
            ),
            frr: rate(genuine.iter().filter(|&&s| s < th).count(), genuine.len()),
        })
        .collect())
}

pub fn far_frr_csv(rows: &[FarFrrRow]) -> String {
    let mut out = String::from("threshold,far_percent,frr_percent\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6}", r.threshold, r.far, r.frr);
    }
    out
}

/// Mean number of corners inside the 80 px gate per image, for each Harris
/// threshold. The response map is computed once per image.
pub fn corner_threshold_sweep(
    exec: Exec,
    images: &[(IntensityMap, OdCenter)],
    harris: &HarrisParams,
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>, EvalError> {
    if images.is_empty() {
        return Err(EvalError::Precondition("one image".into()));
    }
    let mut totals = vec![0usize; thresholds.len()];
    for (map, od) in images {
        let (gx, gy) = gradients(map).map_err(|e| EvalError::Precondition(e.to_string()))?;
        let field = structure_tensor_with(exec, &gx, &gy, harris)
            .map_err(|e| EvalError::Precondition(e.to_string()))?;
        let r = response(&field, harris.k);
        for (slot, &th) in totals.iter_mut().zip(thresholds) {
            let p = HarrisParams {
                threshold: th,
                ..*harris
            };
            *slot += polarize(&local_maxima_with(exec, &r, &p), od).len();
        }
    }
    Ok(thresholds
        .iter()
        .zip(totals)
        .map(|(&th, n)| (th, n as f64 / images.len() as f64))
        .collect())
}

/// Layout of a rendered synthetic fundus image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundusStyle {
    pub size: usize,
    pub background: f64,
    pub disc_peak: f64,
    pub disc_scale: f64,
    pub dot_peak: f64,
    pub dot_sigma: f64,
}

impl Default for FundusStyle {
    fn default() -> Self {
        FundusStyle {
            size: 240,
            background: 30.0,
            disc_peak: 150.0,
            disc_scale: 12.0,
            dot_peak: 140.0,
            dot_sigma: 1.0,
        }
    }
}

/// Draws a bright disc at `od` and a small Gaussian dot at every polar corner.
pub fn render_fundus(pcs: &[PolarCorner], od: Point, style: &FundusStyle) -> IntensityMap {
    let dots: Vec<(f64, f64)> = pcs
        .iter()
        .filter(|p| p.distance < GATE_RADIUS)
        .map(|p| {
            let t = p.orientation.to_radians();
            (od.x + p.distance * t.cos(), od.y - p.distance * t.sin())
        })
        .collect();
    let disc_den = 2.0 * style.disc_scale * style.disc_scale;
    let dot_den = 2.0 * style.dot_sigma * style.dot_sigma;
    IntensityMap::from_fn(style.size, style.size, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let mut v = style.background
            + style.disc_peak * (-((x - od.x).powi(2) + (y - od.y).powi(2)) / disc_den).exp();
        for &(cx, cy) in &dots {
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            if d2 < 36.0 {
                v += style.dot_peak * (-d2 / dot_den).exp();
            }
        }
        v.round()
    })
}

/// OD position for the `index`-th rendered image: the image centre plus a
/// seeded offset of up to 10 px per axis.
pub fn synthetic_od(style: &FundusStyle, seed: u64, index: usize) -> Point {
    let mut rng = stream(seed, &[3, index as u64]);
    let c = style.size as f64 / 2.0;
    Point::new(
        (c + rng.random_range(-10.0f64..=10.0)).round(),
        (c + rng.random_range(-10.0f64..=10.0)).round(),
    )
}
