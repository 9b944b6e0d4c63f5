//! Boundary conditions and their hard enforcement.
//!
//! A single isothermal sink segment on one edge is the Dirichlet boundary;
//! every other boundary node is adiabatic (zero normal flux). Dirichlet
//! values are written over the prediction; the adiabatic condition is
//! imposed by a mirrored ghost ring so the central difference across the
//! boundary vanishes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Left,
    Right,
    Top,
    Bottom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub sink_edge: Edge,
    /// Segment center, measured along the edge from its low end.
    pub sink_center_m: f64,
    pub sink_length_m: f64,
    pub sink_temp_k: f64,
}

impl BoundarySpec {
    /// 0.01 m sink centered on the left edge of a 0.1 m domain at 298 K.
    pub fn left_center_sink() -> Self {
        BoundarySpec {
            sink_edge: Edge::Left,
            sink_center_m: 0.05,
            sink_length_m: 0.01,
            sink_temp_k: 298.0,
        }
    }

    /// Sink of `length_m` centered on the left edge of a 0.1 m domain at 298 K.
    pub fn left_sink(length_m: f64) -> Self {
        BoundarySpec {
            sink_length_m: length_m,
            ..Self::left_center_sink()
        }
    }

    fn edge_length(&self, grid: &GridSpec) -> f64 {
        match self.sink_edge {
            Edge::Left | Edge::Right => grid.height_m(),
            Edge::Top | Edge::Bottom => grid.width_m(),
        }
    }

    /// Inclusive node-index range covered by the sink along its edge.
    pub fn node_range(&self, grid: &GridSpec) -> Result<(usize, usize)> {
        if !(self.sink_length_m > 0.0) {
            return Err(Error::Config(format!(
                "sink length must be positive, got {}",
                self.sink_length_m
            )));
        }
        if !self.sink_temp_k.is_finite() {
            return Err(Error::Config("sink temperature is not finite".into()));
        }
        let lo = self.sink_center_m - 0.5 * self.sink_length_m;
        let hi = self.sink_center_m + 0.5 * self.sink_length_m;
        let len = self.edge_length(grid);
        if lo < -1e-9 || hi > len + 1e-9 {
            return Err(Error::Config(format!(
                "sink [{lo}, {hi}] extends past its edge of length {len}"
            )));
        }
        let a = grid
            .node_index(lo)
            .ok_or_else(|| Error::MisalignedSink(format!("start {lo} m")))?;
        let b = grid
            .node_index(hi)
            .ok_or_else(|| Error::MisalignedSink(format!("end {hi} m")))?;
        if b <= a {
            return Err(Error::MisalignedSink("sink covers fewer than 2 nodes".into()));
        }
        Ok((a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Interior,
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMask {
    grid: GridSpec,
    labels: Vec<NodeKind>,
}

impl NodeMask {
    /// Mask from explicit labels. Boundary nodes must be Dirichlet or
    /// Neumann and every other node Interior.
    pub fn from_labels(grid: GridSpec, labels: Vec<NodeKind>) -> Result<Self> {
        let (rows, cols) = grid.shape();
        if labels.len() != rows * cols {
            return Err(Error::Shape(format!(
                "mask needs {} labels, got {}",
                rows * cols,
                labels.len()
            )));
        }
        for (k, kind) in labels.iter().enumerate() {
            let (r, c) = (k / cols, k % cols);
            let on_boundary = r == 0 || c == 0 || r == rows - 1 || c == cols - 1;
            if on_boundary == (*kind == NodeKind::Interior) {
                return Err(Error::Config(format!("node ({r}, {c}) labeled {kind:?}")));
            }
        }
        Ok(NodeMask { grid, labels })
    }

    /// Every boundary node adiabatic. The resulting problem is singular;
    /// useful for checking stencil operators in isolation.
    pub fn all_neumann(grid: GridSpec) -> Self {
        Self::boundary_of_kind(grid, NodeKind::Neumann)
    }

    /// Every boundary node held at the sink temperature.
    pub fn all_dirichlet(grid: GridSpec) -> Self {
        Self::boundary_of_kind(grid, NodeKind::Dirichlet)
    }

    fn boundary_of_kind(grid: GridSpec, kind: NodeKind) -> Self {
        let (rows, cols) = grid.shape();
        let labels = (0..rows * cols)
            .map(|k| {
                let (r, c) = (k / cols, k % cols);
                if r == 0 || c == 0 || r == rows - 1 || c == cols - 1 {
                    kind
                } else {
                    NodeKind::Interior
                }
            })
            .collect();
        NodeMask { grid, labels }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }

    pub fn labels(&self) -> &[NodeKind] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> NodeKind {
        self.labels[row * (self.grid.nx() + 1) + col]
    }

    pub fn is_dirichlet(&self, idx: usize) -> bool {
        self.labels[idx] == NodeKind::Dirichlet
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.labels.iter().filter(|&&k| k == kind).count()
    }

    /// `|D_I ∪ D_N|`: nodes whose equation enters the loss.
    pub fn free_count(&self) -> usize {
        self.labels.len() - self.count(NodeKind::Dirichlet)
    }

    pub(crate) fn check_field(&self, field: &ScalarField) -> Result<()> {
        if field.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: field.shape(),
            });
        }
        Ok(())
    }
}

pub fn build_mask(grid: &GridSpec, boundary: &BoundarySpec) -> Result<NodeMask> {
    let (a, b) = boundary.node_range(grid)?;
    let (rows, cols) = grid.shape();
    let mut labels = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let on_boundary = r == 0 || c == 0 || r == rows - 1 || c == cols - 1;
            let kind = if !on_boundary {
                NodeKind::Interior
            } else {
                let in_sink = match boundary.sink_edge {
                    Edge::Left => c == 0 && (a..=b).contains(&r),
                    Edge::Right => c == cols - 1 && (a..=b).contains(&r),
                    Edge::Bottom => r == 0 && (a..=b).contains(&c),
                    Edge::Top => r == rows - 1 && (a..=b).contains(&c),
                };
                if in_sink {
                    NodeKind::Dirichlet
                } else {
                    NodeKind::Neumann
                }
            };
            labels.push(kind);
        }
    }
    Ok(NodeMask { grid: *grid, labels })
}

/// Copy of `field` with every Dirichlet node set to exactly `t0_k`.
pub fn apply_dirichlet(field: &ScalarField, mask: &NodeMask, t0_k: f64) -> Result<ScalarField> {
    mask.check_field(field)?;
    let mut out = field.clone();
    for (v, kind) in out.values_mut().iter_mut().zip(mask.labels()) {
        if *kind == NodeKind::Dirichlet {
            *v = t0_k;
        }
    }
    Ok(out)
}

/// Field extended by one mirrored ghost node on every side.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedField {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl PaddedField {
    /// Value at field coordinates; `row`/`col` may be -1 or one past the end.
    pub fn at(&self, row: isize, col: isize) -> f64 {
        self.values[(row + 1) as usize * self.cols + (col + 1) as usize]
    }

    /// Strips the ghost ring.
    pub fn crop(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity((self.rows - 2) * (self.cols - 2));
        for r in 1..self.rows - 1 {
            out.extend_from_slice(&self.values[r * self.cols + 1..(r + 1) * self.cols - 1]);
        }
        out
    }
}

/// Mirror-through-node ghost padding: the ghost at index −1 copies index 1
/// and the ghost at n+1 copies n−1. Columns are mirrored first, then rows
/// over the already widened array, which fills the corners.
pub fn ghost_pad_neumann(field: &ScalarField, mask: &NodeMask) -> Result<PaddedField> {
    mask.check_field(field)?;
    let (rows, cols) = field.shape();
    let (pr, pc) = (rows + 2, cols + 2);
    let mut values = vec![0.0; pr * pc];
    for r in 0..rows {
        let dst = &mut values[(r + 1) * pc..(r + 2) * pc];
        dst[1..=cols].copy_from_slice(&field.values()[r * cols..(r + 1) * cols]);
        dst[0] = dst[2];
        dst[cols + 1] = dst[cols - 1];
    }
    values.copy_within(2 * pc..3 * pc, 0);
    values.copy_within((pr - 3) * pc..(pr - 2) * pc, (pr - 1) * pc);
    Ok(PaddedField {
        rows: pr,
        cols: pc,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn left_sink_on_200_grid() {
        let g = GridSpec::square(0.1, 200).unwrap();
        let m = build_mask(&g, &BoundarySpec::left_center_sink()).unwrap();
        assert_eq!(m.count(NodeKind::Dirichlet), 21);
        for r in 0..201 {
            let expect = if (90..=110).contains(&r) {
                NodeKind::Dirichlet
            } else {
                NodeKind::Neumann
            };
            assert_eq!(m.get(r, 0), expect);
        }
        assert_eq!(
            m.count(NodeKind::Interior) + m.count(NodeKind::Dirichlet) + m.count(NodeKind::Neumann),
            201 * 201
        );
        assert_eq!(m.count(NodeKind::Interior), 199 * 199);
    }

    #[test]
    fn full_bottom_edge_sink() {
        let g = GridSpec::square(0.1, 10).unwrap();
        let b = BoundarySpec {
            sink_edge: Edge::Bottom,
            sink_center_m: 0.05,
            sink_length_m: 0.1,
            sink_temp_k: 298.0,
        };
        let m = build_mask(&g, &b).unwrap();
        for c in 0..11 {
            assert_eq!(m.get(0, c), NodeKind::Dirichlet);
        }
        assert_eq!(m.count(NodeKind::Dirichlet), 11);
    }

    #[test]
    fn misaligned_and_oversized_sinks_are_rejected() {
        let g = GridSpec::square(0.1, 10).unwrap();
        let mut b = BoundarySpec::left_center_sink();
        b.sink_length_m = 0.015;
        assert!(matches!(build_mask(&g, &b), Err(Error::MisalignedSink(_))));
        b.sink_length_m = 0.2;
        assert!(matches!(build_mask(&g, &b), Err(Error::Config(_))));
        b.sink_length_m = 0.0;
        assert!(build_mask(&g, &b).is_err());
    }

    #[test]
    fn dirichlet_overwrite_touches_only_sink_nodes() {
        let g = GridSpec::square(0.1, 20).unwrap();
        let m = build_mask(&g, &BoundarySpec::left_center_sink()).unwrap();
        assert_eq!(m.count(NodeKind::Dirichlet), 3);
        let zero = apply_dirichlet(&ScalarField::zeros(g), &m, 298.0).unwrap();
        for (k, v) in zero.values().iter().enumerate() {
            assert_eq!(*v, if m.is_dirichlet(k) { 298.0 } else { 0.0 });
        }
        let flat = ScalarField::constant(g, 298.0);
        assert_eq!(apply_dirichlet(&flat, &m, 298.0).unwrap(), flat);

        let wrong = ScalarField::zeros(GridSpec::square(0.1, 10).unwrap());
        assert!(matches!(apply_dirichlet(&wrong, &m, 1.0), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn ghost_ring_mirrors_through_node() {
        let g = GridSpec::new(0.1, 0.1, 4, 4).unwrap();
        let b = BoundarySpec {
            sink_edge: Edge::Bottom,
            sink_center_m: 0.05,
            sink_length_m: 0.05,
            sink_temp_k: 0.0,
        };
        let m = build_mask(&g, &b).unwrap();
        // Row [a, b, c, d, e] becomes [b, a, b, c, d, e, d].
        let f = ScalarField::from_fn(g, |r, c| (10 * r + c) as f64);
        let p = ghost_pad_neumann(&f, &m).unwrap();
        assert_eq!((p.rows, p.cols), (7, 7));
        let row1: Vec<f64> = (-1..=5).map(|c| p.at(1, c)).collect();
        assert_eq!(row1, vec![11.0, 10.0, 11.0, 12.0, 13.0, 14.0, 13.0]);
        for c in -1..=5 {
            assert_eq!(p.at(-1, c), p.at(1, c));
            assert_eq!(p.at(5, c), p.at(3, c));
        }
        assert_eq!(p.crop(), f.values());

        let flat = ScalarField::constant(g, 3.5);
        assert!(ghost_pad_neumann(&flat, &m).unwrap().values.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn linear_field_has_zero_edge_derivative_after_padding() {
        let g = GridSpec::square(0.1, 8).unwrap();
        let m = build_mask(&g, &BoundarySpec::left_sink(0.025)).unwrap();
        let f = ScalarField::from_fn(g, |_, c| g.x(c));
        let p = ghost_pad_neumann(&f, &m).unwrap();
        let h = g.step_m();
        for r in 0..=8isize {
            assert_eq!(p.at(r, -1), p.at(r, 1));
            assert_eq!((p.at(r, -1) - p.at(r, 1)) / (2.0 * h), 0.0);
        }
    }
}
