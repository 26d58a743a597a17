//! Versioned text formats for series and snapshots. Reals are written with
//! 17 significant digits, so reading them back is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::diagnostics::{EnergySeries, SeriesRow};
use crate::error::{Error, Result};
use crate::flow::{FlowState, HaltReason, Shape};
use crate::geometry::{Ambient, GraphSurface, ParametricCurve};
use crate::lattice::{make_grid, FlatTorus, ScalarField};

pub const SERIES_HEADER: &str = "# sdflow-series v1";
pub const SNAPSHOT_HEADER: &str = "# sdflow-snapshot v1";

/// 17 significant digits: positional for `1e-5 <= |x| < 1e16`, scientific otherwise.
pub fn format_real(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if x != 0.0 && !(-5..16).contains(&exp) {
        return sci;
    }
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let exp = if x == 0.0 { 0 } else { exp };
    if exp >= 0 {
        let split = exp as usize + 1;
        format!("{sign}{}.{}", &digits[..split], &digits[split..])
    } else {
        format!("{sign}0.{}{digits}", "0".repeat((-exp - 1) as usize))
    }
}

pub fn parse_real(text: &str) -> Result<f64> {
    text.trim().parse::<f64>().map_err(|_| Error::Parse(format!("not a real: {text:?}")))
}

pub fn render_series(series: &EnergySeries, halt: Option<&HaltReason>) -> String {
    let columns = series.columns();
    let mut out = String::new();
    writeln!(out, "{SERIES_HEADER}").unwrap();
    writeln!(out, "{}", columns.join(",")).unwrap();
    for row in series.rows() {
        let cells: Vec<String> = columns.iter().map(|c| format_real(row.get(c).expect("known column"))).collect();
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    if let Some(h) = halt {
        writeln!(out, "# halt_reason={}", h.label()).unwrap();
    }
    out
}

pub fn write_series(path: &Path, series: &EnergySeries, halt: Option<&HaltReason>) -> Result<()> {
    fs::write(path, render_series(series, halt))?;
    Ok(())
}

/// A series file read back: rows and the halt reason footer, if any.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesFile {
    pub series: EnergySeries,
    pub halt_reason: Option<String>,
}

pub fn read_series(path: &Path) -> Result<SeriesFile> {
    parse_series(&fs::read_to_string(path)?)
}

pub fn parse_series(text: &str) -> Result<SeriesFile> {
    let mut lines = text.lines();
    if lines.next() != Some(SERIES_HEADER) {
        return Err(Error::Parse("missing series header".into()));
    }
    let columns: Vec<&str> =
        lines.next().ok_or_else(|| Error::Parse("missing column line".into()))?.split(',').collect();
    let curve = columns.last() == Some(&"deficit");
    let mut series = EnergySeries::new(curve);
    if series.columns() != columns {
        return Err(Error::Parse(format!("unexpected columns {columns:?}")));
    }
    let mut halt_reason = None;
    for line in lines {
        if let Some(h) = line.strip_prefix("# halt_reason=") {
            halt_reason = Some(h.to_string());
            continue;
        }
        let v: Vec<f64> = line.split(',').map(parse_real).collect::<Result<_>>()?;
        if v.len() != columns.len() {
            return Err(Error::Parse(format!("row has {} cells, expected {}", v.len(), columns.len())));
        }
        series.push(SeriesRow {
            t: v[0],
            area: v[1],
            volume: v[2],
            dirichlet: v[3],
            hessian: v[4],
            lyapunov: v[5],
            sup_grad: v[6],
            distance: v[7],
            pi_margin: v[8],
            fit_residual: v[9],
            deficit: curve.then(|| v[10]),
            volume_distance: f64::NAN,
        })?;
    }
    Ok(SeriesFile { series, halt_reason })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotKind {
    Graph,
    Curve,
    Field,
}

impl SnapshotKind {
    fn name(self) -> &'static str {
        match self {
            SnapshotKind::Graph => "graph",
            SnapshotKind::Curve => "curve",
            SnapshotKind::Field => "field",
        }
    }
}

/// Node values with the header data needed to rebuild the state.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub kind: SnapshotKind,
    pub dims: Vec<usize>,
    /// Torus periods (graphs, fields) or ambient periods (curves in a torus).
    pub periods: Vec<f64>,
    pub t: f64,
    /// Reference level of a graph.
    pub level: f64,
    /// One column per stored quantity: heights, or `x` and `y`.
    pub columns: Vec<Vec<f64>>,
}

impl Snapshot {
    pub fn from_state(state: &FlowState) -> Self {
        match &state.shape {
            Shape::Graph(s) => Snapshot {
                kind: SnapshotKind::Graph,
                dims: s.grid().resolution().to_vec(),
                periods: s.grid().torus().side_lengths().to_vec(),
                t: state.t,
                level: s.reference_height(),
                columns: vec![s.heights().values().to_vec()],
            },
            Shape::Curve(c) => Snapshot {
                kind: SnapshotKind::Curve,
                dims: vec![c.len()],
                periods: match c.ambient() {
                    Ambient::Plane => Vec::new(),
                    Ambient::Torus(p) => p.to_vec(),
                },
                t: state.t,
                level: 0.0,
                columns: vec![c.x().to_vec(), c.y().to_vec()],
            },
        }
    }

    pub fn from_field(field: &ScalarField, t: f64) -> Self {
        Snapshot {
            kind: SnapshotKind::Field,
            dims: field.grid().resolution().to_vec(),
            periods: field.grid().torus().side_lengths().to_vec(),
            t,
            level: 0.0,
            columns: vec![field.values().to_vec()],
        }
    }

    /// Rebuilds the flow state (spectral backend).
    pub fn to_state(&self) -> Result<FlowState> {
        let shape = match self.kind {
            SnapshotKind::Graph => {
                let grid = make_grid(FlatTorus::new(self.periods.clone())?, &self.dims)?;
                Shape::Graph(GraphSurface::new(ScalarField::new(grid, self.columns[0].clone())?, self.level)?)
            }
            SnapshotKind::Curve => {
                let ambient = match self.periods.as_slice() {
                    [] => Ambient::Plane,
                    [a, b] => Ambient::Torus([*a, *b]),
                    _ => return Err(Error::Parse("curve periods need two values".into())),
                };
                Shape::Curve(ParametricCurve::new(self.columns[0].clone(), self.columns[1].clone(), ambient)?)
            }
            SnapshotKind::Field => return Err(Error::Parse("field snapshots carry no flow state".into())),
        };
        Ok(FlowState { t: self.t, step: 0, shape })
    }

    pub fn render(&self) -> String {
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let periods: Vec<String> = self.periods.iter().map(|p| format_real(*p)).collect();
        let mut out = String::new();
        write!(out, "{SNAPSHOT_HEADER} kind={} dims={} t={}", self.kind.name(), dims.join("x"), format_real(self.t))
            .unwrap();
        if !periods.is_empty() {
            write!(out, " periods={}", periods.join(",")).unwrap();
        }
        if self.kind == SnapshotKind::Graph {
            write!(out, " level={}", format_real(self.level)).unwrap();
        }
        out.push('\n');
        let rows = self.columns.first().map_or(0, |c| c.len());
        for r in 0..rows {
            let cells: Vec<String> = self.columns.iter().map(|c| format_real(c[r])).collect();
            writeln!(out, "{}", cells.join(" ")).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty snapshot".into()))?;
        let fields =
            header.strip_prefix(SNAPSHOT_HEADER).ok_or_else(|| Error::Parse("missing snapshot header".into()))?;
        let mut snap = Snapshot {
            kind: SnapshotKind::Field,
            dims: Vec::new(),
            periods: Vec::new(),
            t: 0.0,
            level: 0.0,
            columns: Vec::new(),
        };
        for item in fields.split_whitespace() {
            let (k, v) = item.split_once('=').ok_or_else(|| Error::Parse(format!("bad header field {item:?}")))?;
            match k {
                "kind" => {
                    snap.kind = match v {
                        "graph" => SnapshotKind::Graph,
                        "curve" => SnapshotKind::Curve,
                        "field" => SnapshotKind::Field,
                        _ => return Err(Error::Parse(format!("unknown snapshot kind {v:?}"))),
                    }
                }
                "dims" => {
                    snap.dims = v
                        .split('x')
                        .map(|d| d.parse().map_err(|_| Error::Parse(format!("bad dims {v:?}"))))
                        .collect::<Result<_>>()?
                }
                "t" => snap.t = parse_real(v)?,
                "periods" => snap.periods = v.split(',').map(parse_real).collect::<Result<_>>()?,
                "level" => snap.level = parse_real(v)?,
                _ => return Err(Error::Parse(format!("unknown header field {k:?}"))),
            }
        }
        let width = if snap.kind == SnapshotKind::Curve { 2 } else { 1 };
        snap.columns = vec![Vec::new(); width];
        for line in lines {
            let cells: Vec<f64> = line.split_whitespace().map(parse_real).collect::<Result<_>>()?;
            if cells.len() != width {
                return Err(Error::Parse(format!("snapshot row has {} values, expected {width}", cells.len())));
            }
            for (col, v) in snap.columns.iter_mut().zip(cells) {
                col.push(v);
            }
        }
        let expected: usize = snap.dims.iter().product();
        if snap.columns[0].len() != expected {
            return Err(Error::Parse(format!("snapshot has {} rows, dims say {expected}", snap.columns[0].len())));
        }
        Ok(snap)
    }
}

pub fn write_snapshot(path: &Path, snapshot: &Snapshot) -> Result<()> {
    fs::write(path, snapshot.render())?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    Snapshot::parse(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(format_real(1.0 / 3.0), "0.33333333333333331");
        assert_eq!(format_real(-2.5), "-2.5000000000000000");
        assert_eq!(format_real(0.0), "0.0000000000000000");
        assert_eq!(format_real(1e-7), "9.9999999999999995e-8");
        assert_eq!(format_real(1.5e-5), "0.000015000000000000000");
    }

    #[test]
    fn real_round_trip() {
        let mut x = 0.1234567f64;
        for _ in 0..2000 {
            x = (x * 1.618033988749895 + 0.3).fract() * 10f64.powi((x * 40.0) as i32 - 20);
            assert_eq!(parse_real(&format_real(x)).unwrap().to_bits(), x.to_bits(), "{x:e}");
            assert_eq!(parse_real(&format_real(-x)).unwrap().to_bits(), (-x).to_bits());
        }
    }

    #[test]
    fn empty_series_is_header_only() {
        let s = EnergySeries::new(false);
        let text = render_series(&s, None);
        assert_eq!(text.lines().count(), 2);
        let back = parse_series(&text).unwrap();
        assert!(back.series.is_empty());
    }
}
