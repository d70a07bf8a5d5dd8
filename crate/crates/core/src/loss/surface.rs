//! Loss values over a grid of `(h(x), h(x'))` for fixed label and teacher
//! scores, exported as CSV for plotting.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{bce_pair_loss, lupi_pair_loss, privileged_component, LossConfig, LossVariant};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfacePanel {
    /// Pairwise cross-entropy only.
    Plain,
    /// Full privileged objective.
    Lupi,
    /// Only the privileged score-matching terms, weighted by `1 - lambda`.
    Privileged,
}

impl SurfacePanel {
    pub const ALL: [SurfacePanel; 3] = [SurfacePanel::Plain, SurfacePanel::Lupi, SurfacePanel::Privileged];

    pub fn name(self) -> &'static str {
        match self {
            SurfacePanel::Plain => "plain",
            SurfacePanel::Lupi => "lupi",
            SurfacePanel::Privileged => "privileged",
        }
    }
}

impl std::str::FromStr for SurfacePanel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(SurfacePanel::Plain),
            "lupi" => Ok(SurfacePanel::Lupi),
            "privileged" | "privileged-only" => Ok(SurfacePanel::Privileged),
            other => Err(Error::Config(format!(
                "unknown surface panel '{other}' (expected plain|lupi|privileged)"
            ))),
        }
    }
}

/// Inclusive axis `min..=max` sampled every `step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for AxisSpec {
    fn default() -> Self {
        AxisSpec {
            min: 0.0,
            max: 10.0,
            step: 0.1,
        }
    }
}

impl AxisSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        let (min, max, step) = (self.min, self.max, self.step);
        if !(min.is_finite() && max.is_finite() && step.is_finite()) || step <= 0.0 || max <= min {
            return Err(Error::Input(format!(
                "degenerate axis: min={min}, max={max}, step={step}"
            )));
        }
        let intervals = (max - min) / step;
        if intervals > 1e6 {
            return Err(Error::Input(format!("axis has too many points ({intervals:.0})")));
        }
        let rounded = intervals.round();
        if (intervals - rounded).abs() <= 1e-9 * rounded.max(1.0) {
            // evenly divisible: hit both ends exactly
            let n = rounded as usize;
            Ok((0..=n).map(|k| min + (max - min) * k as f64 / n as f64).collect())
        } else {
            let n = intervals.floor() as usize;
            Ok((0..=n).map(|k| min + k as f64 * step).collect())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub panel: SurfacePanel,
    pub t: u8,
    pub gz: f64,
    pub gzp: f64,
    pub config: LossConfig,
    pub hx_axis: Vec<f64>,
    pub hxp_axis: Vec<f64>,
    /// Row-major, rows indexed by `h(x)`, columns by `h(x')`.
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl SurfaceGrid {
    pub fn rows(&self) -> usize {
        self.hx_axis.len()
    }

    pub fn cols(&self) -> usize {
        self.hxp_axis.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols()..(row + 1) * self.cols()]
    }

    /// `(row, col, value)` of the smallest entry (first one on ties).
    pub fn argmin(&self) -> (usize, usize, f64) {
        let (idx, v) = self.values.iter().enumerate().fold(
            (0, f64::INFINITY),
            |best, (i, &v)| if v < best.1 { (i, v) } else { best },
        );
        (idx / self.cols(), idx % self.cols(), v)
    }

    /// Min-max rescale to `[0, 1]`; a constant grid becomes all zeros.
    pub fn normalize(&mut self) {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        for v in &mut self.values {
            *v = if span > 0.0 {
                ((*v - min) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        self.normalized = true;
    }

    /// CSV with `#` metadata lines, a `hx,hxp,loss` header and one row per
    /// cell in row-major order. Numbers carry 9 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W, comment: Option<&str>) -> std::io::Result<()> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        let first_last = |axis: &[f64]| (axis[0], axis[axis.len() - 1], axis.len());
        let (a0, a1, an) = first_last(&self.hx_axis);
        let (b0, b1, bn) = first_last(&self.hxp_axis);
        writeln!(out, "# panel={}", self.panel.name())?;
        writeln!(out, "# hx_min={a0} hx_max={a1} hx_points={an}")?;
        writeln!(out, "# hxp_min={b0} hxp_max={b1} hxp_points={bn}")?;
        writeln!(
            out,
            "# t={} gz={} gzp={} lambda={} tau={} normalized={}",
            self.t, self.gz, self.gzp, self.config.lambda, self.config.tau, self.normalized
        )?;
        writeln!(out, "hx,hxp,loss")?;
        for (i, hx) in self.hx_axis.iter().enumerate() {
            for (j, hxp) in self.hxp_axis.iter().enumerate() {
                writeln!(out, "{:.8e},{:.8e},{:.8e}", hx, hxp, self.get(i, j))?;
            }
        }
        out.flush()
    }
}

/// Parse the `hx,hxp,loss` rows of a surface CSV, skipping `#` lines.
pub fn read_surface_rows<R: BufRead>(input: R) -> Result<Vec<(f64, f64, f64)>> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Input(e.to_string()))?;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !header_seen {
            if line != "hx,hxp,loss" {
                return Err(Error::Parse {
                    path: "surface".into(),
                    line: n as u64 + 1,
                    message: format!("expected header 'hx,hxp,loss', found '{line}'"),
                });
            }
            header_seen = true;
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: "surface".into(),
                line: n as u64 + 1,
                message: e.to_string(),
            })?;
        if vals.len() != 3 {
            return Err(Error::Parse {
                path: "surface".into(),
                line: n as u64 + 1,
                message: format!("expected 3 fields, found {}", vals.len()),
            });
        }
        rows.push((vals[0], vals[1], vals[2]));
    }
    Ok(rows)
}

/// Evaluate one panel over the `(h(x), h(x'))` grid.
pub fn export_surface(
    panel: SurfacePanel,
    t: u8,
    gz: f64,
    gzp: f64,
    config: &LossConfig,
    hx_axis: &AxisSpec,
    hxp_axis: &AxisSpec,
    normalize: bool,
) -> Result<SurfaceGrid> {
    let xs = hx_axis.points()?;
    let ys = hxp_axis.points()?;
    let lupi_cfg = LossConfig {
        variant: LossVariant::Lupi,
        ..*config
    };
    if panel != SurfacePanel::Plain {
        lupi_cfg.validate()?;
    }
    let mut values = Vec::with_capacity(xs.len() * ys.len());
    for &hx in &xs {
        for &hxp in &ys {
            let v = match panel {
                SurfacePanel::Plain => bce_pair_loss(hx, hxp, t)?.loss,
                SurfacePanel::Lupi => lupi_pair_loss(hx, hxp, t, gz, gzp, &lupi_cfg)?.loss,
                SurfacePanel::Privileged => privileged_component(hx, hxp, gz, gzp, &lupi_cfg)?,
            };
            values.push(v);
        }
    }
    let mut grid = SurfaceGrid {
        panel,
        t,
        gz,
        gzp,
        config: lupi_cfg,
        hx_axis: xs,
        hxp_axis: ys,
        values,
        normalized: false,
    };
    if normalize {
        grid.normalize();
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig_cfg() -> LossConfig {
        LossConfig::lupi(0.5, 1.0).unwrap()
    }

    fn grid(panel: SurfacePanel, normalize: bool) -> SurfaceGrid {
        let axis = AxisSpec::default();
        export_surface(panel, 1, 8.0, 4.0, &fig_cfg(), &axis, &axis, normalize).unwrap()
    }

    #[test]
    fn default_axis_hits_anchor_exactly() {
        let pts = AxisSpec::default().points().unwrap();
        assert_eq!(pts.len(), 101);
        assert_eq!(pts[80], 8.0);
        assert_eq!(pts[40], 4.0);
        assert_eq!(pts[100], 10.0);
    }

    #[test]
    fn privileged_panel_vanishes_at_anchor() {
        let g = grid(SurfacePanel::Privileged, false);
        assert_eq!(g.get(80, 40), 0.0);
        let (r, c, v) = g.argmin();
        assert_eq!((r, c, v), (80, 40, 0.0));
    }

    #[test]
    fn plain_panel_monotone_in_margin() {
        let g = grid(SurfacePanel::Plain, true);
        for i in 0..g.rows() {
            // moving right increases h(x'), decreasing the margin
            assert!(g.row(i).windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn lupi_argmin_near_anchor() {
        let g = grid(SurfacePanel::Lupi, false);
        let (r, c, _) = g.argmin();
        let (hx, hxp) = (g.hx_axis[r], g.hxp_axis[c]);
        assert!(hx > hxp);
        assert!((hx - 8.0).abs() <= 0.1 + 1e-12);
    }

    #[test]
    fn normalization_bounds() {
        for panel in SurfacePanel::ALL {
            let g = grid(panel, true);
            let min = g.values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = g.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!((min, max), (0.0, 1.0), "{panel:?}");
        }
    }

    #[test]
    fn degenerate_axes_rejected() {
        let bad = [
            AxisSpec {
                min: 1.0,
                max: 1.0,
                step: 0.1,
            },
            AxisSpec {
                min: 0.0,
                max: 1.0,
                step: 0.0,
            },
            AxisSpec {
                min: 0.0,
                max: f64::INFINITY,
                step: 0.1,
            },
            AxisSpec {
                min: 2.0,
                max: 1.0,
                step: 0.1,
            },
        ];
        for a in bad {
            let r = export_surface(
                SurfacePanel::Plain,
                1,
                0.0,
                0.0,
                &fig_cfg(),
                &a,
                &AxisSpec::default(),
                false,
            );
            assert!(matches!(r, Err(Error::Input(_))), "{a:?}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let axis = AxisSpec {
            min: -1.0,
            max: 1.0,
            step: 0.5,
        };
        let g = export_surface(SurfacePanel::Lupi, 0, 0.3, -0.2, &fig_cfg(), &axis, &axis, false).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf, Some("manifest: m.json")).unwrap();
        let rows = read_surface_rows(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 25);
        for (k, (hx, hxp, v)) in rows.iter().enumerate() {
            assert_eq!(*hx, g.hx_axis[k / 5]);
            assert_eq!(*hxp, g.hxp_axis[k % 5]);
            assert!((v - g.values[k]).abs() <= 1e-8 * g.values[k].abs().max(1e-300));
        }
    }
}
