//! Parameter sweeps, presets for the three reference experiments, and
//! CSV / JSON / SVG output.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, SimConfig, Velocity, CONFIG_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::link::{ergodic_se, with_threads, RunOptions, SeReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    FigA,
    FigB,
    FigC,
    Custom,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fig_a" | "a" => Ok(Preset::FigA),
            "fig_b" | "b" => Ok(Preset::FigB),
            "fig_c" | "c" => Ok(Preset::FigC),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::FigA => "fig_a",
            Preset::FigB => "fig_b",
            Preset::FigC => "fig_c",
            Preset::Custom => "custom",
        }
    }
}

/// Sweepable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Axis {
    K,
    L,
    Velocity,
    TauC,
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k" | "num_ues" => Ok(Axis::K),
            "l" | "num_clusters" => Ok(Axis::L),
            "v" | "velocity" | "velocity_kmh" => Ok(Axis::Velocity),
            "tau_c" | "tauc" => Ok(Axis::TauC),
            other => Err(Error::Config(format!("unknown sweep axis '{other}'"))),
        }
    }
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::K => "K",
            Axis::L => "L",
            Axis::Velocity => "velocity_kmh",
            Axis::TauC => "tau_c",
        }
    }

    fn apply(self, config: &mut SimConfig, value: f64) -> Result<()> {
        let count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!(
                    "{} must be a positive integer, got {v}",
                    self.as_str()
                )))
            }
        };
        match self {
            Axis::K => config.num_ues = count(value)?,
            Axis::L => config.num_clusters = count(value)?,
            Axis::TauC => config.tau_c = count(value)?,
            Axis::Velocity => config.velocity_kmh = Velocity::Uniform(value),
        }
        Ok(())
    }

    /// Current value of the axis in `config` (uniform velocity only).
    pub fn read(self, config: &SimConfig) -> f64 {
        match self {
            Axis::K => config.num_ues as f64,
            Axis::L => config.num_clusters as f64,
            Axis::TauC => config.tau_c as f64,
            Axis::Velocity => match &config.velocity_kmh {
                Velocity::Uniform(v) => *v,
                Velocity::PerUe(v) => v.iter().sum::<f64>() / v.len().max(1) as f64,
            },
        }
    }
}

/// Parses `AXIS=v1,v2,...`.
pub fn parse_axis_spec(text: &str) -> Result<(Axis, Vec<f64>)> {
    let (name, values) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("sweep '{text}' is not of the form AXIS=v1,v2")))?;
    let axis: Axis = name.trim().parse()?;
    let values = values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad sweep value '{v}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((axis, values))
}

pub fn parse_modes(text: &str) -> Result<Vec<Mode>> {
    text.split(',').map(|m| m.trim().parse()).collect()
}

/// A sweep over one or two axes for a list of modes.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub preset: Preset,
    pub base: SimConfig,
    pub axes: Vec<(Axis, Vec<f64>)>,
    pub modes: Vec<Mode>,
}

/// One simulation of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub mode: Mode,
    pub values: Vec<(Axis, f64)>,
    pub config: SimConfig,
}

impl SweepSpec {
    /// Fixed parameters and axes of a preset on top of the defaults.
    pub fn preset_base(preset: Preset) -> SimConfig {
        let d = SimConfig::default();
        match preset {
            Preset::FigA => SimConfig {
                num_aps: 32,
                velocity_kmh: Velocity::Uniform(40.0),
                p_max_dbm: 30.0,
                ..d
            },
            Preset::FigB => SimConfig {
                num_aps: 16,
                num_ues: 16,
                p_max_dbm: 30.0,
                ..d
            },
            Preset::FigC => SimConfig {
                num_aps: 16,
                num_ues: 24,
                num_clusters: 8,
                p_max_dbm: 30.0,
                ..d
            },
            Preset::Custom => d,
        }
    }

    pub fn preset_axes(preset: Preset) -> (Vec<(Axis, Vec<f64>)>, Vec<Mode>) {
        match preset {
            Preset::FigA => (
                vec![(Axis::K, vec![8.0, 16.0, 24.0, 32.0]), (Axis::L, vec![1.0, 4.0, 8.0])],
                vec![Mode::RsmaDlPilots, Mode::RsmaNoDlPilots],
            ),
            Preset::FigB => (
                vec![
                    (Axis::L, vec![1.0, 2.0, 4.0, 8.0, 16.0]),
                    (Axis::Velocity, vec![0.0, 50.0, 100.0, 150.0, 200.0]),
                ],
                vec![Mode::RsmaDlPilots, Mode::Sdma],
            ),
            Preset::FigC => (
                vec![
                    (Axis::TauC, vec![20.0, 40.0, 60.0, 80.0, 100.0, 150.0, 200.0]),
                    (Axis::Velocity, vec![20.0, 60.0, 100.0]),
                ],
                vec![Mode::RsmaDlPilots, Mode::Sdma],
            ),
            Preset::Custom => (Vec::new(), Vec::new()),
        }
    }

    pub fn from_preset(preset: Preset, base: SimConfig) -> Self {
        let (axes, modes) = Self::preset_axes(preset);
        let modes = if modes.is_empty() { vec![base.mode] } else { modes };
        SweepSpec {
            preset,
            base,
            axes,
            modes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Config("no modes to simulate".into()));
        }
        if self.axes.len() > 2 {
            return Err(Error::Config("at most two sweep axes are supported".into()));
        }
        for (i, (axis, values)) in self.axes.iter().enumerate() {
            if values.is_empty() {
                return Err(Error::Config(format!("axis {} has no values", axis.as_str())));
            }
            if values.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config(format!(
                    "values of axis {} must be strictly increasing",
                    axis.as_str()
                )));
            }
            if self.axes[..i].iter().any(|(a, _)| a == axis) {
                return Err(Error::Config(format!("axis {} given twice", axis.as_str())));
            }
        }
        Ok(())
    }

    /// All points, sorted by mode then axis values in axis order.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        self.validate()?;
        let mut modes = self.modes.clone();
        modes.sort_by_key(|m| m.as_str());
        modes.dedup();
        let mut grid: Vec<Vec<(Axis, f64)>> = vec![Vec::new()];
        for (axis, values) in &self.axes {
            grid = grid
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push((*axis, v));
                        p
                    })
                })
                .collect();
        }
        let mut out = Vec::new();
        for mode in modes {
            for values in &grid {
                let mut config = self.base.clone();
                config.mode = mode;
                for &(axis, v) in values {
                    axis.apply(&mut config, v)?;
                }
                config.validate()?;
                out.push(SweepPoint {
                    mode,
                    values: values.clone(),
                    config,
                });
            }
        }
        Ok(out)
    }
}

/// One CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub mode: Mode,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub velocity_kmh: f64,
    pub tau_c: usize,
    pub se_sum: f64,
    pub se_sum_stderr: f64,
    pub se_common: f64,
    pub se_common_stderr: f64,
    pub se_private: f64,
    pub se_private_stderr: f64,
    pub drops: usize,
    pub realizations: usize,
    pub oracle_fallback_drops: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub reports: Vec<SeReport>,
}

impl SweepResult {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.points
            .iter()
            .zip(&self.reports)
            .map(|(p, r)| ResultRow {
                mode: p.mode,
                k: p.config.num_ues,
                l: p.config.num_clusters,
                m: p.config.num_aps,
                velocity_kmh: Axis::Velocity.read(&p.config),
                tau_c: p.config.tau_c,
                se_sum: r.se_sum,
                se_sum_stderr: r.se_sum_stderr,
                se_common: r.se_common,
                se_common_stderr: r.se_common_stderr,
                se_private: r.se_private,
                se_private_stderr: r.se_private_stderr,
                drops: r.drops,
                realizations: r.realizations,
                oracle_fallback_drops: r.stats_flags.len(),
                config_hash: r.config_hash.clone(),
            })
            .collect()
    }

    /// Report of the point with `mode` and exactly these axis values.
    pub fn find(&self, mode: Mode, values: &[(Axis, f64)]) -> Option<&SeReport> {
        self.points
            .iter()
            .position(|p| p.mode == mode && p.values == values)
            .map(|i| &self.reports[i])
    }
}

/// Runs every point of the sweep. Points run one after another unless
/// `parallel_points` is set; all parallelism lives inside one worker pool.
pub fn run_sweep(spec: &SweepSpec, options: &RunOptions, parallel_points: bool) -> Result<SweepResult> {
    let points = spec.points()?;
    let inner = RunOptions {
        threads: None,
        ..options.clone()
    };
    let reports = with_threads(options.threads, || {
        if parallel_points {
            points
                .par_iter()
                .map(|p| ergodic_se(&p.config, &inner))
                .collect::<Result<Vec<_>>>()
        } else {
            points.iter().map(|p| ergodic_se(&p.config, &inner)).collect()
        }
    })?;
    Ok(SweepResult { points, reports })
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestPoint {
    pub mode: Mode,
    pub axes: Vec<(Axis, f64)>,
    pub config_hash: String,
    pub stats_flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: String,
    pub config_schema_version: u32,
    pub preset: Preset,
    pub seed: u64,
    pub drops: usize,
    pub realizations: usize,
    pub threads: Option<usize>,
    pub base_config_hash: String,
    pub wall_time_s: f64,
    pub points: Vec<ManifestPoint>,
}

/// Version string `<crate version>-<git describe>` when built inside a git checkout.
pub fn version_string() -> String {
    match option_env!("CF_RSMA_GIT_DESCRIBE") {
        Some(g) if !g.is_empty() => format!("{}-{}", env!("CARGO_PKG_VERSION"), g),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn manifest(spec: &SweepSpec, result: &SweepResult, threads: Option<usize>, wall: f64) -> Manifest {
    Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: version_string(),
        config_schema_version: CONFIG_SCHEMA_VERSION,
        preset: spec.preset,
        seed: spec.base.seed,
        drops: spec.base.drops,
        realizations: spec.base.realizations,
        threads,
        base_config_hash: spec.base.hash_hex(),
        wall_time_s: wall,
        points: result
            .points
            .iter()
            .zip(&result.reports)
            .map(|(p, r)| ManifestPoint {
                mode: p.mode,
                axes: p.values.clone(),
                config_hash: r.config_hash.clone(),
                stats_flags: r.stats_flags.clone(),
            })
            .collect(),
    }
}

/// One plotted line.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(t);
        t += step;
    }
    out
}

/// Line chart with error bars (one standard error) as a standalone SVG document.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (760.0, 480.0);
    let (left, right, top, bottom) = (70.0, 220.0, 40.0, 60.0);
    let all: Vec<&(f64, f64, f64)> = series.iter().flat_map(|s| &s.points).collect();
    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (0.0f64, f64::NEG_INFINITY);
    for &&(x, y, e) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y - finite(e));
        y1 = y1.max(y + finite(e));
    }
    if all.is_empty() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    y1 += 0.05 * (y1 - y0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    for t in nice_ticks(y0, y1, 6) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(x0, x1, 8) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            top + ph,
            top + ph + 5.0,
            top + ph + 19.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 18.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y, _)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            path.join(" ")
        );
        for &(x, y, e) in &ser.points {
            let e = finite(e);
            let _ = writeln!(
                s,
                r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}"/><circle cx="{0:.2}" cy="{3:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y - e),
                sy(y + e),
                sy(y)
            );
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.fract().abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Sum SE against the first axis, one line per mode and value of the second axis.
pub fn sweep_series(result: &SweepResult) -> Vec<Series> {
    let mut series: Vec<Series> = Vec::new();
    for (p, r) in result.points.iter().zip(&result.reports) {
        let x = p.values.first().map(|v| v.1).unwrap_or(0.0);
        let mut label = p.mode.as_str().to_string();
        for (axis, v) in p.values.iter().skip(1) {
            let _ = write!(label, " {}={}", axis.as_str(), v);
        }
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((x, r.se_sum, r.se_sum_stderr)),
            None => series.push(Series {
                label,
                points: vec![(x, r.se_sum, r.se_sum_stderr)],
            }),
        }
    }
    series
}

/// Writes results.csv, manifest.json and optionally a plot into `dir`.
pub fn write_outputs(
    dir: &Path,
    spec: &SweepSpec,
    result: &SweepResult,
    threads: Option<usize>,
    wall: f64,
    plot: bool,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("results.csv"), &result.rows())?;
    let m = manifest(spec, result, threads, wall);
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    if plot {
        let x_label = spec.axes.first().map(|a| a.0.as_str()).unwrap_or("point");
        let svg = render_svg(
            &format!("Sum SE ({})", spec.preset.as_str()),
            x_label,
            "sum SE [bit/s/Hz]",
            &sweep_series(result),
        );
        std::fs::write(dir.join(format!("{}.svg", spec.preset.as_str())), svg)?;
    }
    Ok(())
}

/// Runs a sweep and writes its outputs; returns the result for inspection.
pub fn run_and_write(
    spec: &SweepSpec,
    options: &RunOptions,
    parallel_points: bool,
    dir: &Path,
    plot: bool,
) -> Result<SweepResult> {
    let start = Instant::now();
    let result = run_sweep(spec, options, parallel_points)?;
    write_outputs(dir, spec, &result, options.threads, start.elapsed().as_secs_f64(), plot)?;
    Ok(result)
}
