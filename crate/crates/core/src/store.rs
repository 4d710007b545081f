//! Line-oriented template files (`.rtpl`) and gallery loading.
//!
//! ```text
//! RETINA-TEMPLATE v1
//! subject <subject_id>
//! od <x> <y> <detected|manual>
//! image <free text, may be empty>
//! <360 amplitudes, class 1>
//! <360 amplitudes, class 2>
//! <360 amplitudes, class 3>
//! ```
//!
//! A file may hold several such blocks; blank lines between blocks are
//! ignored. Numbers are printed with at most 9 fractional digits, trailing
//! zeros trimmed, and `0` for empty slots.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::encoder::{FeatureTemplate, SLOTS};
use crate::optic_disc::{OdCenter, OdSource};

pub const MAGIC: &str = "RETINA-TEMPLATE v1";
pub const EXTENSION: &str = "rtpl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("invalid subject id {0:?} (expected 1-64 of [A-Za-z0-9_-])")]
    InvalidSubject(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),
    #[error("gallery at {0} is empty")]
    EmptyGallery(PathBuf),
}

/// The OD centre a template was encoded around.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdAnchor {
    pub x: f64,
    pub y: f64,
    pub source: OdSource,
}

impl From<OdCenter> for OdAnchor {
    fn from(od: OdCenter) -> Self {
        OdAnchor {
            x: od.x,
            y: od.y,
            source: od.source,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryRecord {
    pub subject_id: String,
    pub template: FeatureTemplate,
    pub source_image: String,
    pub od: OdAnchor,
}

impl GalleryRecord {
    /// Record with no image provenance, anchored at a manual origin.
    pub fn synthetic(subject_id: &str, template: FeatureTemplate) -> Self {
        GalleryRecord {
            subject_id: subject_id.to_string(),
            template,
            source_image: "synthetic".to_string(),
            od: OdAnchor {
                x: 0.0,
                y: 0.0,
                source: OdSource::Manual,
            },
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        validate_subject_id(&self.subject_id)?;
        if !self.template.is_valid() {
            return Err(StoreError::InvalidRecord(format!(
                "template of {} has amplitudes outside (0, 360]",
                self.subject_id
            )));
        }
        if self.source_image.contains(['\n', '\r']) {
            return Err(StoreError::InvalidRecord(
                "image provenance spans lines".into(),
            ));
        }
        if !self.od.x.is_finite() || !self.od.y.is_finite() {
            return Err(StoreError::InvalidRecord("non-finite od position".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gallery {
    pub records: Vec<GalleryRecord>,
}

impl Gallery {
    pub fn get(&self, subject_id: &str) -> Option<&GalleryRecord> {
        self.records.iter().find(|r| r.subject_id == subject_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn validate_subject_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidSubject(id.to_string()))
    }
}

/// `{:.9}` with trailing zeros (and a bare point) removed.
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let s = format!("{v:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

/// Serializes one record block (7 lines, LF-terminated).
pub fn render_record(record: &GalleryRecord) -> Result<String, StoreError> {
    record.validate()?;
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    let _ = writeln!(out, "subject {}", record.subject_id);
    let _ = writeln!(
        out,
        "od {} {} {}",
        format_number(record.od.x),
        format_number(record.od.y),
        record.od.source
    );
    if record.source_image.is_empty() {
        out.push_str("image\n");
    } else {
        let _ = writeln!(out, "image {}", record.source_image);
    }
    for vector in &record.template.vectors {
        let line: Vec<String> = vector.iter().map(|&a| format_number(a)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn save_template(record: &GalleryRecord, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let text = render_record(record)?;
    fs::write(path, text).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses every record block in `text`. `path` is only used in messages.
pub fn parse_records(text: &str, path: &Path) -> Result<Vec<GalleryRecord>, StoreError> {
    let err = |line: usize, reason: String| StoreError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .peekable();
    let mut records = Vec::new();
    loop {
        while lines.peek().is_some_and(|(_, l)| l.trim().is_empty()) {
            lines.next();
        }
        let Some((n, magic)) = lines.next() else {
            break;
        };
        if magic != MAGIC {
            return Err(err(n, format!("expected {MAGIC:?}")));
        }
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(n, format!("record truncated before {what}")))
        };

        let (n_subject, subject) = next("subject line")?;
        let subject_id = subject
            .strip_prefix("subject ")
            .ok_or_else(|| err(n_subject, "expected `subject <id>`".into()))?;
        validate_subject_id(subject_id).map_err(|e| err(n_subject, e.to_string()))?;

        let (n_od, od_line) = next("od line")?;
        let fields: Vec<&str> = od_line.split(' ').collect();
        if fields.len() != 4 || fields[0] != "od" {
            return Err(err(n_od, "expected `od <x> <y> <source>`".into()));
        }
        let coord = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(n_od, format!("bad od coordinate {s:?}")))
        };
        let od = OdAnchor {
            x: coord(fields[1])?,
            y: coord(fields[2])?,
            source: fields[3].parse().map_err(|e: String| err(n_od, e))?,
        };

        let (n_image, image) = next("image line")?;
        let source_image = if image == "image" {
            String::new()
        } else {
            image
                .strip_prefix("image ")
                .ok_or_else(|| err(n_image, "expected `image <text>`".into()))?
                .to_string()
        };

        let mut template = FeatureTemplate::default();
        for (class, vector) in template.vectors.iter_mut().enumerate() {
            let (n_vec, line) = next("class vectors")?;
            let tokens: Vec<&str> = line.split(' ').collect();
            if tokens.len() != SLOTS {
                return Err(err(
                    n_vec,
                    format!(
                        "class {} vector has {} values, expected {SLOTS}",
                        class + 1,
                        tokens.len()
                    ),
                ));
            }
            for (slot, tok) in vector.iter_mut().zip(&tokens) {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| err(n_vec, format!("bad amplitude {tok:?}")))?;
                if !(v == 0.0 || (v > 0.0 && v <= 360.0)) {
                    return Err(err(n_vec, format!("amplitude {tok} outside (0, 360]")));
                }
                *slot = v;
            }
        }
        records.push(GalleryRecord {
            subject_id: subject_id.to_string(),
            template,
            source_image,
            od,
        });
    }
    Ok(records)
}

fn read_text(path: &Path) -> Result<String, StoreError> {
    fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `*.rtpl` files in a directory, sorted by file-name bytes.
pub fn template_files(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let io_err = |source| StoreError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .map(|e| e.map(|e| e.path()).map_err(io_err))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == EXTENSION))
        .collect();
    files.sort_by(|a, b| {
        let name = |p: &PathBuf| p.file_name().map(|n| n.as_encoded_bytes().to_vec());
        name(a).cmp(&name(b))
    });
    Ok(files)
}

/// Loads a gallery file or directory. Empty galleries and repeated subject ids
/// are errors.
pub fn load_gallery(path: impl AsRef<Path>) -> Result<Gallery, StoreError> {
    let path = path.as_ref();
    let files = if path.is_dir() {
        template_files(path)?
    } else {
        vec![path.to_path_buf()]
    };
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for file in files {
        for record in parse_records(&read_text(&file)?, &file)? {
            if !seen.insert(record.subject_id.clone()) {
                return Err(StoreError::DuplicateSubject(record.subject_id));
            }
            records.push(record);
        }
    }
    if records.is_empty() {
        return Err(StoreError::EmptyGallery(path.to_path_buf()));
    }
    Ok(Gallery { records })
}
