//! Run configuration: a TOML document plus the compact shape syntax
//! `ball(0.8)`, `box(0.5)@(0.1, 0, 0)`, `ellipsoid(1, 0.5, 0.5)`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{check_clearance, Grid, Point, Shape};

/// Upper bound on m^n; the padded FFT buffers hold 2^n times as many entries.
pub const MAX_NODES: usize = 1 << 21;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Shape parsed from the compact text form.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec(pub Shape);

fn parse_list(body: &str, what: &str) -> Result<Vec<f64>> {
    body.split(',')
        .map(|t| {
            let t = t.trim();
            match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(config_err(format!("{what}: {t:?} is not a finite number"))),
            }
        })
        .collect()
}

// Splits "name(args)rest" into (name, args, rest).
fn call(s: &str) -> Option<(&str, &str, &str)> {
    let open = s.find('(')?;
    let close = open + s[open..].find(')')?;
    Some((s[..open].trim(), &s[open + 1..close], &s[close + 1..]))
}

impl FromStr for ShapeSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = |why: &str| config_err(format!("shape {text:?}: {why}"));
        let (kind, args, rest) = call(text.trim()).ok_or_else(|| bad("expected kind(args), e.g. ball(0.8)"))?;
        let args = parse_list(args, "shape argument")?;
        let rest = rest.trim();
        let mut center: Point = [0.0; 3];
        if !rest.is_empty() {
            let tail = rest.strip_prefix('@').ok_or_else(|| bad("trailing text; a centre is written @(x, y, z)"))?;
            let (empty, c, after) = call(tail).ok_or_else(|| bad("centre must be @(x, y, z)"))?;
            if !empty.is_empty() || !after.trim().is_empty() {
                return Err(bad("centre must be @(x, y, z)"));
            }
            let c = parse_list(c, "centre coordinate")?;
            if c.len() > 3 {
                return Err(bad("centre has more than 3 coordinates"));
            }
            center[..c.len()].copy_from_slice(&c);
        }
        let shape = match (kind.to_ascii_lowercase().as_str(), args.as_slice()) {
            ("ball", [r]) => Shape::Ball { r: *r, center },
            ("box" | "cube", [a]) => Shape::Box { a: *a, center },
            ("ellipsoid", axes @ [_, ..]) if axes.len() <= 3 => {
                let mut ax = [axes[axes.len() - 1]; 3];
                ax[..axes.len()].copy_from_slice(axes);
                Shape::Ellipsoid { axes: ax, center }
            }
            ("ball" | "box" | "cube", _) => return Err(bad("takes exactly one size")),
            ("ellipsoid", _) => return Err(bad("takes one to three semi-axes")),
            (other, _) => return Err(bad(&format!("unknown kind {other:?}; use ball, box or ellipsoid"))),
        };
        Ok(ShapeSpec(shape))
    }
}

impl fmt::Display for ShapeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.0.center();
        match &self.0 {
            Shape::Ball { r, .. } => write!(f, "ball({r})")?,
            Shape::Box { a, .. } => write!(f, "box({a})")?,
            Shape::Ellipsoid { axes, .. } => write!(f, "ellipsoid({}, {}, {})", axes[0], axes[1], axes[2])?,
        }
        if c != [0.0; 3] {
            write!(f, "@({}, {}, {})", c[0], c[1], c[2])?;
        }
        Ok(())
    }
}

impl TryFrom<String> for ShapeSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ShapeSpec> for String {
    fn from(s: ShapeSpec) -> String {
        s.to_string()
    }
}

impl Serialize for ShapeSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ShapeSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub n: usize,
    pub s: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    pub p: Option<f64>,
    pub lambda: Option<f64>,
}

fn default_mu() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    pub m: usize,
}

fn default_half_width() -> f64 {
    1.0
}

/// lambda values for the quotient scan: explicit, or `points` cell midpoints
/// of (0, max_ratio * lambda_1).
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub values: Option<Vec<f64>>,
    pub points: usize,
    pub max_ratio: f64,
    /// Bubble widths of the extra starting fields, in units of h.
    pub start_widths: Vec<f64>,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self { values: None, points: 12, max_ratio: 1.5, start_widths: vec![1.0, 4.0] }
    }
}

impl ScanSection {
    pub fn lambdas(&self, lambda_1: f64) -> Vec<f64> {
        match &self.values {
            Some(v) => v.clone(),
            None => {
                let step = self.max_ratio * lambda_1 / self.points as f64;
                (1..=self.points).map(|i| (i as f64 - 0.5) * step).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Scaling factors k of u_k.
    pub ks: Vec<f64>,
    pub bump_radius: f64,
    /// Bubble scales t.
    pub ts: Vec<f64>,
    /// Cut-off bubble widths.
    pub eps: Vec<f64>,
    pub delta_c: Option<f64>,
    pub strict: bool,
    /// Width of the mountain-pass starting bubble; 4h when absent.
    pub start_width: Option<f64>,
    pub patch_resolution: usize,
    /// Resolution of the extrapolated HLS constants.
    pub hls_m: usize,
    /// Resolutions for refinement studies.
    pub refinement: Vec<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            ks: vec![1.0, 2.0, 4.0],
            bump_radius: 0.85,
            ts: vec![1.0, 0.5, 0.25, 0.125],
            eps: Vec::new(),
            delta_c: None,
            strict: true,
            start_width: None,
            patch_resolution: 2000,
            hls_m: 48,
            refinement: Vec::new(),
        }
    }
}

/// Every tolerance an experiment may assert against.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub eigen: f64,
    pub eigen_drift: f64,
    pub quotient: f64,
    pub mountain_pass: f64,
    pub weak_residual: f64,
    pub scaling_fractional: f64,
    pub scaling_local: f64,
    pub bubble_exponent: f64,
    pub bubble_limit: f64,
    pub slope: f64,
    pub pohozaev: f64,
    pub oracle_abs: f64,
    pub gradient_rel: f64,
    pub plateau: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eigen: 1e-8,
            eigen_drift: 0.05,
            quotient: 1e-9,
            mountain_pass: 1e-6,
            weak_residual: 1e-5,
            scaling_fractional: 0.03,
            scaling_local: 0.02,
            bubble_exponent: 0.10,
            bubble_limit: 0.05,
            slope: 0.15,
            pohozaev: 0.10,
            oracle_abs: 1e-10,
            gradient_rel: 1e-6,
            plateau: 0.02,
        }
    }
}

impl Tolerances {
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("eigen", self.eigen),
            ("eigen_drift", self.eigen_drift),
            ("quotient", self.quotient),
            ("mountain_pass", self.mountain_pass),
            ("weak_residual", self.weak_residual),
            ("scaling_fractional", self.scaling_fractional),
            ("scaling_local", self.scaling_local),
            ("bubble_exponent", self.bubble_exponent),
            ("bubble_limit", self.bubble_limit),
            ("slope", self.slope),
            ("pohozaev", self.pohozaev),
            ("oracle_abs", self.oracle_abs),
            ("gradient_rel", self.gradient_rel),
            ("plateau", self.plateau),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub outdir: Option<PathBuf>,
    pub problem: ProblemSection,
    pub grid: GridSection,
    pub domain: ShapeSpec,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

/// 1-based line of a byte offset.
fn line_at(src: &str, offset: usize) -> usize {
    src.as_bytes()[..offset.min(src.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Line holding `key` inside `[section]` (or at top level when `section` is empty).
fn line_of(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = h.trim().to_string();
            continue;
        }
        let k = line.split('=').next().unwrap_or("").trim();
        if current == section && k == key && line.contains('=') {
            return Some(i + 1);
        }
        // dotted keys and inline tables at top level
        if current.is_empty() && !section.is_empty() && (k == format!("{section}.{key}") || (k == section && line.contains(key))) {
            return Some(i + 1);
        }
    }
    None
}

impl RunConfig {
    /// Parse and validate; every message carries a line number when the
    /// offending key appears in the source.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        Self::parse(src, None)
    }

    /// As `from_toml_str`, with the grid resolution replaced before validation.
    pub fn parse(src: &str, m_override: Option<usize>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(src).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(sp) => config_err(format!("line {}: {msg}", line_at(src, sp.start))),
                None => config_err(msg),
            }
        })?;
        if let Some(m) = m_override {
            cfg.grid.m = m;
        }
        cfg.validate().map_err(|(section, key, msg)| match line_of(src, section, key) {
            Some(l) => config_err(format!("line {l}: {msg}")),
            None => config_err(msg),
        })?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.problem.n, self.grid.half_width, self.grid.m)
    }

    pub fn shape(&self) -> &Shape {
        &self.domain.0
    }

    /// Checks against the module preconditions without allocating any grid
    /// data; the error names the offending (section, key).
    pub fn validate(&self) -> std::result::Result<(), (&'static str, &'static str, String)> {
        let p = &self.problem;
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || self.name.starts_with('.') {
            return Err(("", "name", format!("name {:?} must be non-empty and use only letters, digits, '-', '_' and '.'", self.name)));
        }
        if !(1..=3).contains(&p.n) {
            return Err(("problem", "n", format!("n = {} must be 1, 2 or 3", p.n)));
        }
        if !(p.s > 0.0 && p.s < 1.0) {
            return Err(("problem", "s", format!("s = {} must lie in the open interval (0, 1)", p.s)));
        }
        let nf = p.n as f64;
        if !(p.mu > 0.0 && p.mu < nf) {
            return Err(("problem", "mu", format!("mu = {} must lie in (0, n) = (0, {})", p.mu, p.n)));
        }
        if let Some(pp) = p.p {
            if !(pp >= 1.0) || (p.n >= 3 && !(pp < (nf + 2.0) / (nf - 2.0))) {
                return Err(("problem", "p", format!("p = {pp} must satisfy 1 <= p < (n+2)/(n-2)")));
            }
        }
        if let Some(l) = p.lambda {
            if !l.is_finite() {
                return Err(("problem", "lambda", "lambda must be finite".into()));
            }
        }
        let g = &self.grid;
        if !(g.half_width.is_finite() && g.half_width > 0.0) {
            return Err(("grid", "half_width", format!("half_width = {} must be positive", g.half_width)));
        }
        if g.m < 4 || g.m % 2 == 1 {
            return Err(("grid", "m", format!("m = {} must be even and at least 4", g.m)));
        }
        if g.m.checked_pow(p.n as u32).is_none_or(|total| total > MAX_NODES) {
            return Err(("grid", "m", format!("m^n = {}^{} exceeds the limit of {MAX_NODES} nodes", g.m, p.n)));
        }
        let grid = Grid::new(p.n, g.half_width, g.m).map_err(|e| ("grid", "m", e.to_string()))?;
        check_clearance(self.shape(), &grid).map_err(|e| ("", "domain", e.to_string()))?;
        let sc = &self.scan;
        if let Some(v) = &sc.values {
            if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(("scan", "values", "scan values must be positive and finite".into()));
            }
        }
        if !(2..=200).contains(&sc.points) {
            return Err(("scan", "points", format!("points = {} must lie in 2..=200", sc.points)));
        }
        if !(sc.max_ratio > 0.0 && sc.max_ratio.is_finite()) {
            return Err(("scan", "max_ratio", "max_ratio must be positive".into()));
        }
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&sc.start_widths) {
            return Err(("scan", "start_widths", "start widths must be positive".into()));
        }
        let e = &self.experiment;
        for (key, list) in [("ks", &e.ks), ("ts", &e.ts), ("eps", &e.eps)] {
            if !positive(list) {
                return Err(("experiment", key, format!("every entry of {key} must be positive and finite")));
            }
        }
        if !(e.bump_radius.is_finite() && e.bump_radius > 0.0) {
            return Err(("experiment", "bump_radius", "bump_radius must be positive".into()));
        }
        for (key, v) in [("delta_c", e.delta_c), ("start_width", e.start_width)] {
            if v.is_some_and(|x| !(x.is_finite() && x > 0.0)) {
                return Err(("experiment", key, format!("{key} must be positive")));
            }
        }
        if !(4..=100_000).contains(&e.patch_resolution) {
            return Err(("experiment", "patch_resolution", "patch_resolution must lie in 4..=100000".into()));
        }
        if !(8..=128).contains(&e.hls_m) || e.hls_m % 2 == 1 {
            return Err(("experiment", "hls_m", "hls_m must be even and in 8..=128".into()));
        }
        if e.refinement.iter().any(|&m| m < 4 || m % 2 == 1 || m.checked_pow(p.n as u32).is_none_or(|t| t > MAX_NODES)) {
            return Err(("experiment", "refinement", "refinement resolutions must be even, at least 4 and within the node limit".into()));
        }
        for (key, v) in self.tolerances.entries() {
            if !(v.is_finite() && v > 0.0) {
                return Err(("tolerances", key, format!("tolerance {key} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BASIC: &str = r#"name = "scan-48"
seed = 7
domain = "ball(0.8)"

[problem]
n = 3
s = 0.5
mu = 1.0
p = 2.0
lambda = 1.0

[grid]
m = 48
"#;

    fn basic() -> String {
        BASIC.to_string()
    }

    #[test]
    fn parses_defaults() {
        let c = RunConfig::from_toml_str(&basic()).unwrap();
        assert_eq!(c.grid.half_width, 1.0);
        assert_eq!(c.shape(), &Shape::ball(0.8));
        assert_eq!(c.scan.points, 12);
        assert_eq!(c.tolerances.weak_residual, 1e-5);
        let l = c.scan.lambdas(12.0);
        assert_eq!(l.len(), 12);
        assert!((l[0] - 0.75).abs() < 1e-12 && (l[11] - 17.25).abs() < 1e-12);
    }

    #[test]
    fn bad_order_cites_the_line() {
        let src = basic().replace("s = 0.5", "s = 1.2");
        let err = RunConfig::from_toml_str(&src).unwrap_err().to_string();
        assert!(err.starts_with("line 7:") && err.contains("(0, 1)"), "{err}");
    }

    #[test]
    fn syntax_and_unknown_keys_cite_lines() {
        let err = RunConfig::from_toml_str(&basic().replace("m = 48", "m = 48\nwidth = 3")).unwrap_err().to_string();
        assert!(err.starts_with("line 14:"), "{err}");
        let err = RunConfig::from_toml_str(&basic().replace("m = 48", "m = ")).unwrap_err().to_string();
        assert!(err.starts_with("line 13:"), "{err}");
    }

    #[test]
    fn clearance_is_checked_before_allocation() {
        let err = RunConfig::from_toml_str(&basic().replace("ball(0.8)", "ball(0.99)")).unwrap_err().to_string();
        assert!(err.starts_with("line 3:") && err.contains("clearance"), "{err}");
        let err = RunConfig::parse(&basic(), Some(4096)).unwrap_err().to_string();
        assert!(err.starts_with("line 13:") && err.contains("limit"), "{err}");
        assert_eq!(RunConfig::parse(&basic(), Some(24)).unwrap().grid.m, 24);
    }

    #[test]
    fn shape_syntax() {
        let s: ShapeSpec = "ball(0.8)".parse().unwrap();
        assert_eq!(s.0, Shape::ball(0.8));
        let s: ShapeSpec = " Box ( 0.5 ) @ (0.1, -0.2) ".parse().unwrap();
        assert_eq!(s.0, Shape::Box { a: 0.5, center: [0.1, -0.2, 0.0] });
        let s: ShapeSpec = "ellipsoid(1, 0.5)".parse().unwrap();
        assert_eq!(s.0, Shape::ellipsoid([1.0, 0.5, 0.5]));
        for bad in ["", "ball", "ball()", "ball(1,2)", "disk(1)", "ball(nan)", "ball(1) x", "ball(1)@(1,2,3,4)", "ellipsoid(1,2,3,4)", "ball(1e999)"] {
            assert!(bad.parse::<ShapeSpec>().is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn shape_text_round_trips(kind in 0..3usize, a in 0.01f64..10.0, b in 0.01f64..10.0, c in -1.0f64..1.0) {
            let shape = match kind {
                0 => Shape::Ball { r: a, center: [c, 0.0, -c] },
                1 => Shape::Box { a, center: [0.0; 3] },
                _ => Shape::Ellipsoid { axes: [a, b, a], center: [c, c, c] },
            };
            let text = ShapeSpec(shape.clone()).to_string();
            prop_assert_eq!(text.parse::<ShapeSpec>().unwrap().0, shape);
        }

        #[test]
        fn shape_parser_never_panics(text in "\\PC{0,40}") {
            let _ = text.parse::<ShapeSpec>();
        }

        #[test]
        fn config_parser_never_panics(text in "[a-z\\[\\]=\"0-9. \n]{0,120}") {
            let _ = RunConfig::from_toml_str(&text);
        }
    }
}
