//! Image-to-template plumbing shared by the CLI and the evaluation harness.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::encoder::{encode, polarize, FeatureTemplate};
use crate::exec::Exec;
use crate::harris::{detect_corners_with, Corner, HarrisError, HarrisParams};
use crate::imaging::{load_image, to_intensity, ImageError, IntensityMap};
use crate::optic_disc::{locate_od_with, manual_od, OdCenter, OdError, OdParams};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Harris(#[from] HarrisError),
    #[error(transparent)]
    Od(#[from] OdError),
    #[error("cannot read od sidecar {path}: {source}")]
    SidecarIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed od sidecar {path}: expected `x y` on one line")]
    SidecarFormat { path: PathBuf },
}

/// `<image>.od`, e.g. `01_test.ppm.od`.
pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut name = image.as_os_str().to_os_string();
    name.push(".od");
    PathBuf::from(name)
}

/// Parses `x y` (or `x,y`) into a position.
pub fn parse_od_pair(text: &str) -> Option<(f64, f64)> {
    let parts: Vec<&str> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    match parts.as_slice() {
        [x, y] => {
            let (x, y) = (x.parse::<f64>().ok()?, y.parse::<f64>().ok()?);
            (x.is_finite() && y.is_finite()).then_some((x, y))
        }
        _ => None,
    }
}

/// Reads the sidecar next to `image` if there is one.
pub fn read_od_sidecar(image: &Path) -> Result<Option<(f64, f64)>, PipelineError> {
    let path = sidecar_path(image);
    if !path.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|source| PipelineError::SidecarIo {
        path: path.clone(),
        source,
    })?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match (lines.next().and_then(parse_od_pair), lines.next()) {
        (Some(p), None) => Ok(Some(p)),
        _ => Err(PipelineError::SidecarFormat { path }),
    }
}

/// Explicit override, then sidecar, then detection.
pub fn resolve_od(
    exec: Exec,
    map: &IntensityMap,
    image: Option<&Path>,
    manual: Option<(f64, f64)>,
    params: &OdParams,
) -> Result<OdCenter, PipelineError> {
    if let Some((x, y)) = manual {
        return Ok(manual_od(x, y, map)?);
    }
    if let Some(path) = image {
        if let Some((x, y)) = read_od_sidecar(path)? {
            return Ok(manual_od(x, y, map)?);
        }
    }
    Ok(locate_od_with(exec, map, params)?)
}

pub fn load_intensity(path: &Path) -> Result<IntensityMap, PipelineError> {
    Ok(to_intensity(&load_image(path)?))
}

/// Corners plus the template they encode to around `od`.
pub fn extract_template(
    exec: Exec,
    map: &IntensityMap,
    od: &OdCenter,
    harris: &HarrisParams,
) -> Result<(Vec<Corner>, FeatureTemplate), PipelineError> {
    let corners = detect_corners_with(exec, map, harris)?;
    let template = encode(&polarize(&corners, od));
    Ok((corners, template))
}
