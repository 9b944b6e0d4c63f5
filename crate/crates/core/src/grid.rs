//! Computation domain, node-centered uniform grids and heat-source layouts.
//!
//! A grid with `nx × ny` square cells carries `(ny + 1) × (nx + 1)` nodes,
//! boundary nodes included. Fields are stored row-major with row `j` at
//! height `y_j = j·h` and column `i` at `x_i = i·h`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::boundary::BoundarySpec;
use crate::error::{Error, Result};

/// Relative tolerance used when checking that `width/nx == height/ny`.
const STEP_REL_TOL: f64 = 1e-12;

/// Geometric slack, in units of the grid step, for node-in-rectangle tests.
const NODE_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridParams", into = "GridParams")]
pub struct GridSpec {
    width_m: f64,
    height_m: f64,
    nx: usize,
    ny: usize,
    step_m: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridParams {
    width_m: f64,
    height_m: f64,
    nx: usize,
    ny: usize,
}

impl TryFrom<GridParams> for GridSpec {
    type Error = Error;

    fn try_from(p: GridParams) -> Result<Self> {
        GridSpec::new(p.width_m, p.height_m, p.nx, p.ny)
    }
}

impl From<GridSpec> for GridParams {
    fn from(g: GridSpec) -> Self {
        GridParams {
            width_m: g.width_m,
            height_m: g.height_m,
            nx: g.nx,
            ny: g.ny,
        }
    }
}

impl GridSpec {
    pub fn new(width_m: f64, height_m: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(width_m > 0.0 && height_m > 0.0 && width_m.is_finite() && height_m.is_finite()) {
            return Err(Error::Config(format!(
                "domain extent must be positive, got {width_m} x {height_m}"
            )));
        }
        if nx < 4 || ny < 4 {
            return Err(Error::Config(format!(
                "grid needs at least 4 cells per axis, got {nx} x {ny}"
            )));
        }
        let hx = width_m / nx as f64;
        let hy = height_m / ny as f64;
        if ((hx - hy) / hx).abs() > STEP_REL_TOL {
            return Err(Error::Config(format!(
                "cells must be square: step {hx} along x, {hy} along y"
            )));
        }
        Ok(GridSpec {
            width_m,
            height_m,
            nx,
            ny,
            step_m: hx,
        })
    }

    /// Square domain of side `side_m` split into `cells × cells`.
    pub fn square(side_m: f64, cells: usize) -> Result<Self> {
        Self::new(side_m, side_m, cells, cells)
    }

    pub fn width_m(&self) -> f64 {
        self.width_m
    }

    pub fn height_m(&self) -> f64 {
        self.height_m
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn step_m(&self) -> f64 {
        self.step_m
    }

    /// Node count along y (rows) and x (columns).
    pub fn shape(&self) -> (usize, usize) {
        (self.ny + 1, self.nx + 1)
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn x(&self, col: usize) -> f64 {
        col as f64 * self.step_m
    }

    pub fn y(&self, row: usize) -> f64 {
        row as f64 * self.step_m
    }

    /// Index of the node at coordinate `pos_m`, if `pos_m` lands on one.
    pub fn node_index(&self, pos_m: f64) -> Option<usize> {
        let t = pos_m / self.step_m;
        let r = t.round();
        ((t - r).abs() * self.step_m <= 1e-9 && r >= 0.0).then_some(r as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatSource {
    /// Lower-left corner.
    pub x_m: f64,
    pub y_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    pub intensity_w_m2: f64,
}

impl HeatSource {
    pub fn area_m2(&self) -> f64 {
        self.width_m * self.height_m
    }

    pub fn perimeter_m(&self) -> f64 {
        2.0 * (self.width_m + self.height_m)
    }

    /// Closed-rectangle intersection test, so sources that share an edge
    /// count as overlapping (they would both claim the nodes on that edge).
    pub fn overlaps(&self, other: &HeatSource, slack: f64) -> bool {
        self.x_m <= other.x_m + other.width_m + slack
            && other.x_m <= self.x_m + self.width_m + slack
            && self.y_m <= other.y_m + other.height_m + slack
            && other.y_m <= self.y_m + self.height_m + slack
    }

    fn contains(&self, x: f64, y: f64, slack: f64) -> bool {
        x >= self.x_m - slack
            && x <= self.x_m + self.width_m + slack
            && y >= self.y_m - slack
            && y <= self.y_m + self.height_m + slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub case_id: String,
    pub sources: Vec<HeatSource>,
}

impl LayoutSpec {
    pub fn new(case_id: impl Into<String>, sources: Vec<HeatSource>) -> Self {
        LayoutSpec {
            case_id: case_id.into(),
            sources,
        }
    }

    /// Checks source geometry against `grid`'s domain and pairwise disjointness.
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let slack = NODE_SNAP * grid.step_m();
        for (k, s) in self.sources.iter().enumerate() {
            let finite = [s.x_m, s.y_m, s.width_m, s.height_m, s.intensity_w_m2]
                .iter()
                .all(|v| v.is_finite());
            if !finite || s.width_m <= 0.0 || s.height_m <= 0.0 || s.intensity_w_m2 < 0.0 {
                return Err(Error::Config(format!("heat source {k} has invalid geometry or intensity")));
            }
            if s.x_m < -slack
                || s.y_m < -slack
                || s.x_m + s.width_m > grid.width_m() + slack
                || s.y_m + s.height_m > grid.height_m() + slack
            {
                return Err(Error::OutOfDomain(k));
            }
        }
        for a in 0..self.sources.len() {
            for b in a + 1..self.sources.len() {
                // Sources touching within round-off still count.
                if self.sources[a].overlaps(&self.sources[b], slack) {
                    return Err(Error::Overlap(a, b));
                }
            }
        }
        Ok(())
    }

    pub fn total_power_w_per_m(&self) -> f64 {
        self.sources
            .iter()
            .map(|s| s.intensity_w_m2 * s.area_m2())
            .sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        // Serialization of plain data into a String cannot fail.
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Real-valued node field on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

pub const FIELD_MAGIC: &[u8; 4] = b"TFPF";

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        ScalarField {
            grid,
            values: vec![value; grid.node_count()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        let (rows, cols) = grid.shape();
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "field for {rows}x{cols} nodes needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("field value {v} is not finite")));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let (rows, cols) = grid.shape();
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }

    pub fn rows(&self) -> usize {
        self.grid.ny() + 1
    }

    pub fn cols(&self) -> usize {
        self.grid.nx() + 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        let cols = self.cols();
        self.values[row * cols + col] = v;
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// (row, col) of the first maximal node in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        (best / self.cols(), best % self.cols())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn check_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    /// Writes the 16-byte header and little-endian f32 payload.
    pub fn write_tfpf<W: Write>(&self, mut w: W) -> Result<()> {
        let (rows, cols) = self.shape();
        let mut buf = Vec::with_capacity(16 + 4 * self.values.len());
        buf.extend_from_slice(FIELD_MAGIC);
        buf.extend_from_slice(&(rows as u32).to_le_bytes());
        buf.extend_from_slice(&(cols as u32).to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a field whose shape must match `grid`.
    pub fn read_tfpf<R: Read>(mut r: R, grid: GridSpec) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::decode_tfpf(&bytes, grid).map_err(|reason| Error::format("<stream>", reason))
    }

    fn decode_tfpf(bytes: &[u8], grid: GridSpec) -> std::result::Result<Self, String> {
        if bytes.len() < 16 || &bytes[0..4] != FIELD_MAGIC {
            return Err("missing TFPF header".into());
        }
        let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
        let (rows, cols) = (word(4), word(8));
        if (rows, cols) != grid.shape() {
            return Err(format!(
                "field is {rows}x{cols}, grid expects {:?}",
                grid.shape()
            ));
        }
        if word(12) != 0 {
            return Err("reserved header word is not zero".into());
        }
        let payload = &bytes[16..];
        if payload.len() != 4 * rows * cols {
            return Err(format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                4 * rows * cols
            ));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        ScalarField::from_values(grid, values).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_tfpf(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path, grid: GridSpec) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::decode_tfpf(&bytes, grid).map_err(|reason| Error::format(path, reason))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductionProblem {
    pub grid: GridSpec,
    pub conductivity_w_mk: f64,
    pub layout: LayoutSpec,
    pub boundary: BoundarySpec,
}

impl ConductionProblem {
    pub fn new(
        grid: GridSpec,
        conductivity_w_mk: f64,
        layout: LayoutSpec,
        boundary: BoundarySpec,
    ) -> Result<Self> {
        if !(conductivity_w_mk > 0.0 && conductivity_w_mk.is_finite()) {
            return Err(Error::Config(format!(
                "conductivity must be positive, got {conductivity_w_mk}"
            )));
        }
        Ok(ConductionProblem {
            grid,
            conductivity_w_mk,
            layout,
            boundary,
        })
    }

    /// `h² / λ`, the factor that turns intensity into the stencil source term.
    pub fn source_factor(&self) -> f64 {
        self.grid.step_m().powi(2) / self.conductivity_w_mk
    }

    pub fn intensity(&self) -> Result<ScalarField> {
        rasterize_layout(&self.layout, &self.grid)
    }
}

/// Node-centered intensity field: each node inside or on the edge of source
/// `k` takes `φ_k`, every other node 0.
pub fn rasterize_layout(layout: &LayoutSpec, grid: &GridSpec) -> Result<ScalarField> {
    layout.validate(grid)?;
    let slack = NODE_SNAP * grid.step_m();
    let mut field = ScalarField::zeros(*grid);
    let h = grid.step_m();
    for s in &layout.sources {
        // Only scan the node window covering this source.
        let c0 = ((s.x_m - slack) / h).ceil().max(0.0) as usize;
        let c1 = (((s.x_m + s.width_m + slack) / h).floor() as usize).min(grid.nx());
        let r0 = ((s.y_m - slack) / h).ceil().max(0.0) as usize;
        let r1 = (((s.y_m + s.height_m + slack) / h).floor() as usize).min(grid.ny());
        for r in r0..=r1 {
            for c in c0..=c1 {
                if s.contains(grid.x(c), grid.y(r), slack) {
                    field.set(r, c, s.intensity_w_m2);
                }
            }
        }
    }
    Ok(field)
}

/// Elementwise `intensity / scale`.
pub fn normalize_input(intensity: &ScalarField, scale: f64) -> Result<ScalarField> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("normalization scale must be positive, got {scale}")));
    }
    let out = intensity.map(|v| v / scale);
    if out.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("normalized field is not finite".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid200() -> GridSpec {
        GridSpec::square(0.1, 200).unwrap()
    }

    fn src(x: f64, y: f64, w: f64, h: f64, phi: f64) -> HeatSource {
        HeatSource {
            x_m: x,
            y_m: y,
            width_m: w,
            height_m: h,
            intensity_w_m2: phi,
        }
    }

    #[test]
    fn grid_rejects_non_square_cells_and_tiny_grids() {
        assert!(GridSpec::new(0.1, 0.2, 10, 10).is_err());
        assert!(GridSpec::new(0.1, 0.2, 10, 20).is_ok());
        assert!(GridSpec::square(0.1, 3).is_err());
        assert_eq!(grid200().shape(), (201, 201));
    }

    #[test]
    fn empty_layout_rasterizes_to_zero() {
        let f = rasterize_layout(&LayoutSpec::new("e", vec![]), &grid200()).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
        assert_eq!(f.shape(), (201, 201));
    }

    #[test]
    fn full_domain_source_covers_every_node() {
        let layout = LayoutSpec::new("full", vec![src(0.0, 0.0, 0.1, 0.1, 10000.0)]);
        let f = rasterize_layout(&layout, &GridSpec::square(0.1, 16).unwrap()).unwrap();
        assert!(f.values().iter().all(|&v| v == 10000.0));
    }

    #[test]
    fn small_source_covers_21_by_21_block() {
        let layout = LayoutSpec::new("one", vec![src(0.02, 0.02, 0.01, 0.01, 10000.0)]);
        let f = rasterize_layout(&layout, &grid200()).unwrap();
        // Exhaustive node-in-rectangle count.
        let mut hot = 0;
        for r in 0..201 {
            for c in 0..201 {
                let inside = (40..=60).contains(&r) && (40..=60).contains(&c);
                assert_eq!(f.get(r, c), if inside { 10000.0 } else { 0.0 }, "node ({r},{c})");
                hot += inside as usize;
            }
        }
        assert_eq!(hot, 441);
    }

    #[test]
    fn overlap_and_out_of_domain_are_errors() {
        let g = grid200();
        let overlapping = LayoutSpec::new(
            "o",
            vec![src(0.0, 0.0, 0.02, 0.02, 1.0), src(0.01, 0.01, 0.02, 0.02, 1.0)],
        );
        assert!(matches!(rasterize_layout(&overlapping, &g), Err(Error::Overlap(0, 1))));
        let touching = LayoutSpec::new(
            "t",
            vec![src(0.0, 0.0, 0.02, 0.02, 1.0), src(0.02, 0.0, 0.02, 0.02, 1.0)],
        );
        assert!(matches!(rasterize_layout(&touching, &g), Err(Error::Overlap(0, 1))));
        let outside = LayoutSpec::new("x", vec![src(0.095, 0.0, 0.01, 0.01, 1.0)]);
        assert!(matches!(rasterize_layout(&outside, &g), Err(Error::OutOfDomain(0))));
    }

    #[test]
    fn normalization_divides_elementwise() {
        let g = GridSpec::square(0.1, 8).unwrap();
        let zero = normalize_input(&ScalarField::zeros(g), 10000.0).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
        let ones = normalize_input(&ScalarField::constant(g, 10000.0), 10000.0).unwrap();
        assert!(ones.values().iter().all(|&v| v == 1.0));
        let mixed = ScalarField::from_fn(g, |r, c| if r == c { 20000.0 } else { 4000.0 });
        let n = normalize_input(&mixed, 20000.0).unwrap();
        assert_eq!(n.max(), 1.0);
        for (a, b) in n.values().iter().zip(mixed.values()) {
            assert_eq!(*a, b / 20000.0);
        }
        assert!(normalize_input(&mixed, 0.0).is_err());
    }

    #[test]
    fn tfpf_header_layout() {
        let g = GridSpec::new(0.1, 0.05, 8, 4).unwrap();
        let f = ScalarField::from_fn(g, |r, c| (r * 10 + c) as f64);
        let mut buf = Vec::new();
        f.write_tfpf(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"TFPF");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 9);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 0);
        assert_eq!(buf.len(), 16 + 4 * 45);
        let back = ScalarField::read_tfpf(&buf[..], g).unwrap();
        assert_eq!(back, f);
        assert!(ScalarField::read_tfpf(&buf[..], GridSpec::square(0.1, 8).unwrap()).is_err());
    }

    #[test]
    fn layout_json_keys() {
        let l = LayoutSpec::new("c1", vec![src(0.01, 0.02, 0.01, 0.01, 10000.0)]);
        let v: serde_json::Value = serde_json::from_str(&l.to_json()).unwrap();
        assert_eq!(v["case_id"], "c1");
        let s = &v["sources"][0];
        for key in ["x_m", "y_m", "width_m", "height_m", "intensity_w_m2"] {
            assert!(s.get(key).is_some(), "{key}");
        }
        assert_eq!(LayoutSpec::from_json(&l.to_json()).unwrap(), l);
    }
}
