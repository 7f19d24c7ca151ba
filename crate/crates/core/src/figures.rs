//! Figure rendering: per-image contact sheets and aggregate line plots,
//! drawn with a small built-in rasterizer so the output depends on nothing
//! but this crate.
//!
//! Contact sheets are assembled from the PNGs an experiment already wrote,
//! never from in-memory state — re-rendering a figure from the stored
//! artifacts therefore reproduces it byte for byte.

use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::attack::physical::PhysicalSearchResult;
use crate::error::{Error, Result};
use crate::experiment::{AttackReport, AttackSpec};
use crate::image_buffer::ImageBuffer;
use crate::pngio::{contact_sheet, load_png, save_png};
use crate::report::MeanStd;

/// One polyline in a plot: points sorted by x, with optional ± whiskers
/// (one per point) for spread.
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub points: Vec<(f64, f64)>,
    pub whiskers: Option<Vec<f64>>,
    /// Index into the fixed series palette.
    pub color: usize,
}

impl PlotSeries {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        PlotSeries {
            points,
            whiskers: None,
            color: 0,
        }
    }
}

const SERIES_PALETTE: [[f64; 3]; 4] = [
    [0.12, 0.35, 0.72],
    [0.80, 0.33, 0.10],
    [0.16, 0.55, 0.27],
    [0.55, 0.20, 0.60],
];

const PLOT_W: usize = 480;
const PLOT_H: usize = 320;
const MARGIN_L: usize = 52;
const MARGIN_R: usize = 14;
const MARGIN_T: usize = 14;
const MARGIN_B: usize = 30;

/// 3×5 bitmap glyphs for tick labels; each byte is one row, low three bits
/// used left-to-right.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        'e' | 'E' => [0b111, 0b100, 0b111, 0b100, 0b111],
        _ => [0b000, 0b000, 0b000, 0b000, 0b000],
    }
}

struct Raster {
    arr: Array3<f64>,
    h: usize,
    w: usize,
}

impl Raster {
    fn new(h: usize, w: usize) -> Self {
        Raster {
            arr: Array3::from_elem((h, w, 3), 1.0),
            h,
            w,
        }
    }

    fn put(&mut self, v: i64, u: i64, color: [f64; 3]) {
        if v >= 0 && u >= 0 && (v as usize) < self.h && (u as usize) < self.w {
            for c in 0..3 {
                self.arr[(v as usize, u as usize, c)] = color[c];
            }
        }
    }

    fn vline(&mut self, u: i64, v0: i64, v1: i64, color: [f64; 3]) {
        for v in v0.min(v1)..=v0.max(v1) {
            self.put(v, u, color);
        }
    }

    fn hline(&mut self, v: i64, u0: i64, u1: i64, color: [f64; 3]) {
        for u in u0.min(u1)..=u0.max(u1) {
            self.put(v, u, color);
        }
    }

    fn line(&mut self, mut v0: i64, mut u0: i64, v1: i64, u1: i64, color: [f64; 3]) {
        let dv = (v1 - v0).abs();
        let du = (u1 - u0).abs();
        let sv = if v0 < v1 { 1 } else { -1 };
        let su = if u0 < u1 { 1 } else { -1 };
        let mut err = du - dv;
        loop {
            self.put(v0, u0, color);
            if v0 == v1 && u0 == u1 {
                break;
            }
            let e2 = 2 * err;
            if e2 > -dv {
                err -= dv;
                u0 += su;
            }
            if e2 < du {
                err += dv;
                v0 += sv;
            }
        }
    }

    fn marker(&mut self, v: i64, u: i64, color: [f64; 3]) {
        for dv in -1..=1 {
            for du in -1..=1 {
                self.put(v + dv, u + du, color);
            }
        }
    }

    /// Draws `text` with its top-left corner at (v, u), scale 2.
    fn text(&mut self, v: i64, u: i64, text: &str, color: [f64; 3]) {
        const S: i64 = 2;
        let mut u0 = u;
        for ch in text.chars() {
            let g = glyph(ch);
            for (row, bits) in g.iter().enumerate() {
                for col in 0..3 {
                    if bits & (0b100 >> col) != 0 {
                        for dv in 0..S {
                            for du in 0..S {
                                self.put(
                                    v + row as i64 * S + dv,
                                    u0 + col as i64 * S + du,
                                    color,
                                );
                            }
                        }
                    }
                }
            }
            u0 += 4 * S;
        }
    }
}

/// Compact numeric tick label: trims trailing zeros, keeps at most seven
/// characters worth of precision.
fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    let s = if a >= 1000.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    };
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn data_range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// The x positions a rendered plot puts tick marks at: every distinct x in
/// the series, up to a readability cap of ten.
pub fn plot_x_ticks(series: &[PlotSeries]) -> Vec<f64> {
    let mut xs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .collect();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("tick positions are finite"));
    xs.dedup();
    if xs.len() > 10 {
        let step = (xs.len() as f64 / 10.0).ceil() as usize;
        xs = xs.into_iter().step_by(step).collect();
    }
    xs
}

/// Renders a line plot of the given series into an image. Axes carry
/// numeric tick labels; series are distinguished by color. The y range
/// covers every point plus its whisker extent.
pub fn render_line_plot(series: &[PlotSeries]) -> Result<ImageBuffer> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidArgument("a plot needs at least one point".into()));
    }
    for s in series {
        if let Some(w) = &s.whiskers {
            if w.len() != s.points.len() {
                return Err(Error::dim(
                    format!("{} whiskers", s.points.len()),
                    format!("{}", w.len()),
                ));
            }
        }
        if s.points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::InvalidArgument("plot points must be finite".into()));
        }
    }

    let (x0, x1) = data_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = data_range(series.iter().flat_map(|s| {
        let w = s.whiskers.clone().unwrap_or_else(|| vec![0.0; s.points.len()]);
        s.points
            .iter()
            .zip(w)
            .flat_map(|(p, wk)| [p.1 - wk, p.1 + wk])
            .collect::<Vec<_>>()
    }));

    let mut r = Raster::new(PLOT_H, PLOT_W);
    let axis = [0.25, 0.25, 0.25];
    let grid = [0.88, 0.88, 0.88];
    let plot_w = (PLOT_W - MARGIN_L - MARGIN_R) as f64;
    let plot_h = (PLOT_H - MARGIN_T - MARGIN_B) as f64;
    let px = |x: f64| MARGIN_L as i64 + ((x - x0) / (x1 - x0) * plot_w).round() as i64;
    let py = |y: f64| {
        (PLOT_H - MARGIN_B) as i64 - ((y - y0) / (y1 - y0) * plot_h).round() as i64
    };

    // Grid + ticks first, then axes, then data on top.
    for &x in &plot_x_ticks(series) {
        let u = px(x);
        r.vline(u, MARGIN_T as i64, (PLOT_H - MARGIN_B) as i64, grid);
        r.vline(u, (PLOT_H - MARGIN_B) as i64, (PLOT_H - MARGIN_B + 3) as i64, axis);
        let label = format_tick(x);
        let w = label.chars().count() as i64 * 8;
        r.text((PLOT_H - MARGIN_B + 6) as i64, u - w / 2, &label, axis);
    }
    for i in 0..4 {
        let y = y0 + (y1 - y0) * i as f64 / 3.0;
        let v = py(y);
        r.hline(v, MARGIN_L as i64, (PLOT_W - MARGIN_R) as i64, grid);
        r.hline(v, (MARGIN_L - 3) as i64, MARGIN_L as i64, axis);
        let label = format_tick(y);
        let w = label.chars().count() as i64 * 8;
        r.text(v - 5, MARGIN_L as i64 - 6 - w, &label, axis);
    }
    r.hline(
        (PLOT_H - MARGIN_B) as i64,
        MARGIN_L as i64,
        (PLOT_W - MARGIN_R) as i64,
        axis,
    );
    r.vline(MARGIN_L as i64, MARGIN_T as i64, (PLOT_H - MARGIN_B) as i64, axis);

    for s in series {
        let color = SERIES_PALETTE[s.color % SERIES_PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = s.points.clone();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("points are finite"));
        for pair in pts.windows(2) {
            r.line(py(pair[0].1), px(pair[0].0), py(pair[1].1), px(pair[1].0), color);
        }
        if let Some(wk) = &s.whiskers {
            for (p, w) in s.points.iter().zip(wk) {
                r.vline(px(p.0), py(p.1 - w), py(p.1 + w), color);
            }
        }
        for p in &pts {
            r.marker(py(p.1), px(p.0), color);
        }
    }
    ImageBuffer::from_array_clamped(r.arr)
}

/// Absolute per-pixel difference of two same-shaped images, rescaled so the
/// largest difference is full white. Identical images render black.
pub fn abs_diff_image(a: &ImageBuffer, b: &ImageBuffer) -> Result<ImageBuffer> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    let (h, w, c) = a.dim();
    let mut arr = Array3::zeros((h, w, c));
    let mut max = 0.0_f64;
    for (idx, av) in a.as_array().indexed_iter() {
        let d = (av - b.as_array()[idx]).abs();
        arr[idx] = d;
        max = max.max(d);
    }
    if max > 0.0 {
        arr.mapv_inplace(|v| v / max);
    }
    ImageBuffer::from_array_clamped(arr)
}

fn perturbation_panel(out_dir: &Path, image_id: usize) -> Result<ImageBuffer> {
    let flow_viz = out_dir.join(format!("flows/{image_id:03}_flow.png"));
    if flow_viz.is_file() {
        return load_png(&flow_viz);
    }
    let shared = out_dir.join("perturbation.png");
    if shared.is_file() {
        return load_png(&shared);
    }
    let stem = format!("images/{image_id:03}");
    let perturbed = load_png(&out_dir.join(format!("{stem}_perturbed.png")))?;
    let clean = load_png(&out_dir.join(format!("{stem}_clean.png")))?;
    abs_diff_image(&perturbed, &clean)
}

/// Renders one four-panel contact sheet per report row — attacked image,
/// attacked output, clean output, perturbation visualization — from the
/// PNGs the experiment wrote, and returns the created file paths. An empty
/// report produces no files.
pub fn emit_figures(report: &AttackReport) -> Result<Vec<PathBuf>> {
    let out_dir = &report.config.out_dir;
    if report.rows.is_empty() {
        return Ok(Vec::new());
    }
    let fig_dir = out_dir.join("figures");
    std::fs::create_dir_all(&fig_dir)?;
    let mut written = Vec::with_capacity(report.rows.len());
    for row in &report.rows {
        let id = row.image_id;
        let stem = format!("images/{id:03}");
        let perturbed = load_png(&out_dir.join(format!("{stem}_perturbed.png")))?;
        let attacked = load_png(&out_dir.join(format!("{stem}_attacked_out.png")))?;
        let clean_out = load_png(&out_dir.join(format!("{stem}_clean_out.png")))?;
        let pert_viz = perturbation_panel(out_dir, id)?;
        let sheet = contact_sheet(&[&perturbed, &attacked, &clean_out, &pert_viz], 2)?;
        let path = fig_dir.join(format!("{id:03}_panels.png"));
        save_png(&path, &sheet)?;
        written.push(path);
    }
    Ok(written)
}

/// The (budget, aggregate) points a sweep plot draws: x is the varied
/// budget, y the chosen metric's mean, the whisker its standard deviation.
/// All reports must come from the same attack kind; the physical attack has
/// no budget axis and is rejected.
pub fn sweep_points(reports: &[AttackReport], metric: &str) -> Result<Vec<(f64, MeanStd)>> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("a sweep needs at least one report".into()));
    }
    let kind = reports[0].config.attack.name();
    let mut pts = Vec::with_capacity(reports.len());
    for rep in reports {
        if rep.config.attack.name() != kind {
            return Err(Error::InvalidArgument(format!(
                "sweep mixes attack kinds {kind} and {}",
                rep.config.attack.name()
            )));
        }
        let x = match &rep.config.attack {
            AttackSpec::Universal { budget, .. } => budget.xi,
            AttackSpec::Flow { budget } => budget.xi_f,
            AttackSpec::Physical { .. } => {
                return Err(Error::InvalidArgument(
                    "the physical attack has no budget axis; plot its pose profile instead"
                        .into(),
                ))
            }
        };
        let agg = rep.aggregates.column(metric).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown metric {metric:?} for sweep plot"))
        })?;
        pts.push((x, agg));
    }
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("budgets are finite"));
    Ok(pts)
}

/// Draws mean ± std of one metric against the swept budget and writes it
/// as `sweep_<metric>.png` under `out_dir`.
pub fn emit_sweep_figure(
    reports: &[AttackReport],
    metric: &str,
    out_dir: &Path,
) -> Result<PathBuf> {
    let pts = sweep_points(reports, metric)?;
    let series = PlotSeries {
        points: pts.iter().map(|(x, m)| (*x, m.mean)).collect(),
        whiskers: Some(pts.iter().map(|(_, m)| m.std).collect()),
        color: 0,
    };
    let img = render_line_plot(&[series])?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(format!("sweep_{}.png", metric.to_lowercase()));
    save_png(&path, &img)?;
    Ok(path)
}

/// Worst translation loss at each rotation angle of a finished pose search,
/// sorted by angle — the profile behind a loss-versus-rotation plot.
pub fn angle_profile(search: &PhysicalSearchResult) -> Vec<(f64, f64)> {
    let mut by_angle: Vec<(f64, f64)> = Vec::new();
    for score in &search.loss_table {
        let deg = score.params.theta.to_degrees();
        match by_angle.iter_mut().find(|(a, _)| (*a - deg).abs() < 1e-9) {
            Some(entry) => entry.1 = entry.1.max(score.loss),
            None => by_angle.push((deg, score.loss)),
        }
    }
    by_angle.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("angles are finite"));
    by_angle
}

/// Draws the loss-versus-rotation profile of one pose search and writes it
/// as `pose_profile.png` under `out_dir`.
pub fn emit_pose_profile(search: &PhysicalSearchResult, out_dir: &Path) -> Result<PathBuf> {
    let profile = angle_profile(search);
    let series = PlotSeries::new(profile);
    let img = render_line_plot(&[series])?;
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("pose_profile.png");
    save_png(&path, &img)?;
    Ok(path)
}
