use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use rand::Rng;
use retina_core::encoder::encode;
use retina_core::eval::{
    far_frr_csv, far_frr_sweep, perturb, render_fundus, rotation_experiment_with, stream,
    synth_constellations, synth_gallery, synthetic_od, ExperimentSpec, FundusStyle, GallerySource,
};
use retina_core::harris::detect_corners_with;
use retina_core::imaging::save_image;
use retina_core::matcher::{
    identify_with, normalize_ranking, self_total, verify as verify_claim, Candidate, Decision,
};
use retina_core::pipeline::{extract_template, load_intensity, resolve_od, sidecar_path};
use retina_core::store::{
    load_gallery, save_template, validate_subject_id, OdAnchor, StoreError, EXTENSION,
};
use retina_core::{Exec, FeatureTemplate, Gallery, GalleryRecord, OdCenter};

use crate::config::Config;
use crate::format::sig6;
use crate::{CliError, EvalArgs, SynthArgs};

/// Name of the advisory lock file held in the gallery directory while enrolling.
pub const LOCK_FILE: &str = ".retina.lock";

const TAG_FAR_FRR: u64 = 0xfa;

pub struct Context {
    pub cfg: Config,
    pub od: Option<(f64, f64)>,
    pub exec: Exec,
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn emit(text: &str) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::Input(format!("cannot write output: {e}")))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

impl Context {
    fn gallery_path(&self) -> Result<&Path, CliError> {
        self.cfg.gallery.as_deref().ok_or_else(|| {
            CliError::Input(
                "no gallery given (use --gallery or `gallery = ...` in the config)".into(),
            )
        })
    }

    fn load_gallery(&self) -> Result<Gallery, CliError> {
        let path = self.gallery_path()?;
        if !path.exists() {
            return Err(CliError::Input(format!(
                "gallery {} does not exist",
                path.display()
            )));
        }
        load_gallery(path).map_err(|e| match e {
            StoreError::EmptyGallery(p) => CliError::EmptyGallery(p.display().to_string()),
            other => input(other),
        })
    }

    fn encode_image(&self, image: &Path) -> Result<(OdCenter, usize, FeatureTemplate), CliError> {
        let map = load_intensity(image)
            .map_err(|e| CliError::Input(format!("{}: {e}", image.display())))?;
        let od = resolve_od(self.exec, &map, Some(image), self.od, &self.cfg.od)
            .map_err(|e| CliError::Input(format!("{}: {e}", image.display())))?;
        let (corners, template) = extract_template(self.exec, &map, &od, &self.cfg.harris)
            .map_err(|e| CliError::Input(format!("{}: {e}", image.display())))?;
        Ok((od, corners.len(), template))
    }
}

pub fn detect(ctx: &Context, image: &Path) -> Result<ExitCode, CliError> {
    let map =
        load_intensity(image).map_err(|e| CliError::Input(format!("{}: {e}", image.display())))?;
    let corners = detect_corners_with(ctx.exec, &map, &ctx.cfg.harris)
        .map_err(|e| CliError::Input(format!("{}: {e}", image.display())))?;
    let mut out = String::new();
    for c in &corners {
        let _ = writeln!(out, "{} {} {}", c.x, c.y, sig6(c.response));
    }
    emit(&out)?;
    Ok(ExitCode::SUCCESS)
}

/// Exclusive lock file, removed on drop.
struct GalleryLock {
    path: PathBuf,
    _file: File,
}

impl GalleryLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(LOCK_FILE);
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                io::ErrorKind::AlreadyExists => CliError::Input(format!(
                    "gallery is locked by another enroll (remove {} if stale)",
                    path.display()
                )),
                _ => CliError::Input(format!("cannot lock {}: {e}", path.display())),
            })?;
        Ok(GalleryLock { path, _file: file })
    }
}

impl Drop for GalleryLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn enroll(ctx: &Context, image: &Path, subject: &str) -> Result<ExitCode, CliError> {
    validate_subject_id(subject).map_err(input)?;
    let dir = ctx.gallery_path()?;
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::Input(format!(
            "enroll needs a gallery directory, {} is a file",
            dir.display()
        )));
    }
    // encode before locking: a bad image must not touch the gallery
    let (od, n_corners, template) = ctx.encode_image(image)?;
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    let _lock = GalleryLock::acquire(dir)?;

    let target = dir.join(format!("{subject}.{EXTENSION}"));
    let existing = match load_gallery(dir) {
        Ok(g) => Some(g),
        Err(StoreError::EmptyGallery(_)) => None,
        Err(e) => return Err(input(e)),
    };
    if target.exists() || existing.is_some_and(|g| g.get(subject).is_some()) {
        return Err(CliError::Input(format!(
            "subject {subject} is already enrolled"
        )));
    }
    let record = GalleryRecord {
        subject_id: subject.to_string(),
        template,
        source_image: image.display().to_string(),
        od: OdAnchor::from(od),
    };
    save_template(&record, &target).map_err(input)?;
    emit(&format!(
        "enrolled {subject} corners={n_corners} od={},{} ({}) -> {}\n",
        od.x,
        od.y,
        od.source,
        target.display()
    ))?;
    Ok(ExitCode::SUCCESS)
}

fn ranking_line(rank: usize, c: &Candidate) -> String {
    let s = &c.score;
    format!(
        "{rank} {} {} {} {} {} {} {} {}\n",
        c.subject_id,
        sig6(s.total),
        sig6(s.si[0]),
        sig6(s.si[1]),
        sig6(s.si[2]),
        s.best_shift[0],
        s.best_shift[1],
        s.best_shift[2]
    )
}

pub fn identify(
    ctx: &Context,
    image: &Path,
    top_k: Option<usize>,
    normalized: bool,
) -> Result<ExitCode, CliError> {
    let gallery = ctx.load_gallery()?;
    let (_, _, query) = ctx.encode_image(image)?;
    let w = &ctx.cfg.weights;
    let mut ranked = identify_with(ctx.exec, &query, &gallery.records, w).map_err(input)?;
    if normalized {
        ranked = normalize_ranking(ranked, &gallery.records, w);
    }
    let shown = top_k.unwrap_or(ranked.len()).min(ranked.len());
    let out: String = ranked[..shown]
        .iter()
        .enumerate()
        .map(|(i, c)| ranking_line(i + 1, c))
        .collect();
    emit(&out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn verify(
    ctx: &Context,
    image: &Path,
    subject: &str,
    threshold: f64,
) -> Result<ExitCode, CliError> {
    if !threshold.is_finite() {
        return Err(CliError::Input(format!(
            "threshold must be finite, got {threshold}"
        )));
    }
    let gallery = ctx.load_gallery()?;
    let record = gallery
        .get(subject)
        .ok_or_else(|| CliError::Input(format!("subject {subject} is not enrolled")))?;
    let (_, _, query) = ctx.encode_image(image)?;
    let v = verify_claim(&query, record, threshold, &ctx.cfg.weights);
    let (word, code) = match v.decision {
        Decision::Accept => ("accept", ExitCode::SUCCESS),
        Decision::Reject => ("reject", ExitCode::from(1)),
    };
    emit(&format!(
        "{word} {subject} {} {}\n",
        sig6(v.score.total),
        sig6(threshold)
    ))?;
    Ok(code)
}

fn experiment_spec(ctx: &Context, args: &EvalArgs) -> Result<ExperimentSpec, CliError> {
    let spec = ExperimentSpec {
        rotation_counts: args.rotations.clone(),
        angle_range: args.angle_range,
        jitter_px: args.jitter_px,
        jitter_deg: args.jitter_deg,
        seed: ctx.cfg.seed,
        weights: ctx.cfg.weights,
    };
    spec.validate().map_err(input)?;
    Ok(spec)
}

/// One perturbed probe per subject, thresholds evenly spaced from 0 to the
/// largest self-match total.
fn synthetic_far_frr(
    ctx: &Context,
    args: &EvalArgs,
    spec: &ExperimentSpec,
) -> Result<String, CliError> {
    let constellations =
        synth_constellations(args.subjects, args.corners, spec.seed).map_err(input)?;
    let gallery = synth_gallery(args.subjects, args.corners, spec.seed).map_err(input)?;
    let probes: Vec<(String, FeatureTemplate)> = gallery
        .records
        .iter()
        .zip(&constellations)
        .enumerate()
        .map(|(i, (r, pcs))| {
            let mut rng = stream(spec.seed, &[TAG_FAR_FRR, i as u64]);
            let angle = if spec.angle_range > 0.0 {
                rng.random_range(-spec.angle_range..=spec.angle_range)
            } else {
                0.0
            };
            (
                r.subject_id.clone(),
                encode(&perturb(pcs, angle, spec, &mut rng)),
            )
        })
        .collect();
    let top = gallery
        .records
        .iter()
        .map(|r| self_total(&r.template, &spec.weights))
        .fold(0.0, f64::max);
    let thresholds: Vec<f64> = (0..100).map(|i| top * i as f64 / 99.0).collect();
    let rows =
        far_frr_sweep(ctx.exec, &gallery, &probes, &thresholds, &spec.weights).map_err(input)?;
    Ok(far_frr_csv(&rows))
}

pub fn eval(ctx: &Context, args: &EvalArgs) -> Result<ExitCode, CliError> {
    let spec = experiment_spec(ctx, args)?;
    let source = match &args.images {
        Some(dir) => {
            if args.far_frr.is_some() {
                return Err(CliError::Input(
                    "--far-frr needs the synthetic gallery (drop --images)".into(),
                ));
            }
            GallerySource::Images {
                dir: dir.clone(),
                harris: ctx.cfg.harris,
                od: ctx.cfg.od,
            }
        }
        None => GallerySource::Synthetic {
            subjects: args.subjects,
            corners: args.corners,
        },
    };
    let report = rotation_experiment_with(ctx.exec, &source, &spec).map_err(input)?;
    if let Some(path) = &args.csv {
        write_file(path, &report.to_csv())?;
    }
    if let Some(path) = &args.far_frr {
        write_file(path, &synthetic_far_frr(ctx, args, &spec)?)?;
    }
    emit(&report.to_table())?;
    Ok(ExitCode::SUCCESS)
}

pub fn synth(ctx: &Context, args: &SynthArgs) -> Result<ExitCode, CliError> {
    if args.subjects == 0 {
        return Err(CliError::Input(
            "synth needs --subjects of at least 1".into(),
        ));
    }
    let dir = ctx.gallery_path()?;
    let seed = ctx.cfg.seed;
    let gallery = synth_gallery(args.subjects, args.corners, seed).map_err(input)?;
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    for record in &gallery.records {
        save_template(
            record,
            dir.join(format!("{}.{EXTENSION}", record.subject_id)),
        )
        .map_err(input)?;
    }
    let mut out = format!("wrote {} templates to {}\n", gallery.len(), dir.display());
    if let Some(images) = &args.images {
        fs::create_dir_all(images)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", images.display())))?;
        let style = FundusStyle::default();
        let constellations =
            synth_constellations(args.subjects, args.corners, seed).map_err(input)?;
        for (i, (record, pcs)) in gallery.records.iter().zip(&constellations).enumerate() {
            let od = synthetic_od(&style, seed, i);
            let path = images.join(format!("{}.pgm", record.subject_id));
            let map = render_fundus(pcs, od, &style);
            save_image(&retina_core::RasterImage::from_intensity(&map), &path).map_err(input)?;
            write_file(&sidecar_path(&path), &format!("{} {}\n", od.x, od.y))?;
        }
        let _ = writeln!(
            out,
            "rendered {} images to {}",
            gallery.len(),
            images.display()
        );
    }
    emit(&out)?;
    Ok(ExitCode::SUCCESS)
}
