//! Settings resolution: built-in defaults, then a `key = value` config file,
//! then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use retina_core::{HarrisParams, OdParams, Weights};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub harris: HarrisParams,
    pub od: OdParams,
    pub weights: Weights,
    pub gallery: Option<PathBuf>,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            harris: HarrisParams::default(),
            od: OdParams::default(),
            weights: Weights::default(),
            gallery: None,
            seed: 42,
        }
    }
}

/// Values that may come from either the config file or a flag. `None` means
/// "not given at this layer".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub k: Option<f64>,
    pub harris_threshold: Option<f64>,
    pub sigma: Option<f64>,
    pub window_radius: Option<usize>,
    pub nms_radius: Option<usize>,
    pub border_margin: Option<usize>,
    pub od_template_radius: Option<usize>,
    pub od_stride: Option<usize>,
    pub od_margin: Option<usize>,
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    pub w3: Option<f64>,
    pub gallery: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut Config) {
        macro_rules! set {
            ($($src:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = self.$src.clone() { $dst = v; })*
            };
        }
        set!(
            k => cfg.harris.k,
            harris_threshold => cfg.harris.threshold,
            sigma => cfg.harris.sigma,
            window_radius => cfg.harris.window_radius,
            nms_radius => cfg.harris.nms_radius,
            border_margin => cfg.harris.border_margin,
            od_template_radius => cfg.od.template_radius,
            od_stride => cfg.od.search_stride,
            od_margin => cfg.od.margin,
            w1 => cfg.weights.w1,
            w2 => cfg.weights.w2,
            w3 => cfg.weights.w3,
            seed => cfg.seed,
        );
        if let Some(g) = &self.gallery {
            cfg.gallery = Some(g.clone());
        }
    }
}

fn value<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    key: &str,
    raw: &str,
) -> Result<Option<T>, CliError> {
    raw.parse().map(Some).map_err(|_| {
        CliError::Input(format!(
            "{}:{line}: bad value {raw:?} for {key}",
            path.display()
        ))
    })
}

/// Parses `key = value` lines; `#` starts a comment. Keys mirror flag names.
pub fn parse_config(text: &str, path: &Path) -> Result<Overrides, CliError> {
    let mut o = Overrides::default();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| {
                CliError::Input(format!("{}:{n}: expected `key = value`", path.display()))
            })?;
        match key {
            "k" => o.k = value(path, n, key, val)?,
            "harris-threshold" => o.harris_threshold = value(path, n, key, val)?,
            "sigma" => o.sigma = value(path, n, key, val)?,
            "window-radius" => o.window_radius = value(path, n, key, val)?,
            "nms-radius" => o.nms_radius = value(path, n, key, val)?,
            "border-margin" => o.border_margin = value(path, n, key, val)?,
            "od-template-radius" => o.od_template_radius = value(path, n, key, val)?,
            "od-stride" => o.od_stride = value(path, n, key, val)?,
            "od-margin" => o.od_margin = value(path, n, key, val)?,
            "w1" => o.w1 = value(path, n, key, val)?,
            "w2" => o.w2 = value(path, n, key, val)?,
            "w3" => o.w3 = value(path, n, key, val)?,
            "gallery" => o.gallery = Some(PathBuf::from(val)),
            "seed" => o.seed = value(path, n, key, val)?,
            other => {
                return Err(CliError::Input(format!(
                    "{}:{n}: unknown key {other:?}",
                    path.display()
                )));
            }
        }
    }
    Ok(o)
}

/// defaults <- config file <- flags, then validation.
pub fn resolve(config_file: Option<&Path>, flags: &Overrides) -> Result<Config, CliError> {
    let mut cfg = Config::default();
    if let Some(path) = config_file {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        parse_config(&text, path)?.apply(&mut cfg);
    }
    flags.apply(&mut cfg);
    cfg.harris
        .validate()
        .map_err(|e| CliError::Input(e.to_string()))?;
    cfg.od
        .validate()
        .map_err(|e| CliError::Input(e.to_string()))?;
    if !cfg.weights.is_valid() {
        return Err(CliError::Input("weights must be non-negative".into()));
    }
    Ok(cfg)
}
