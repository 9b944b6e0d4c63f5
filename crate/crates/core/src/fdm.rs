//! Five-point finite-difference reference solver.
//!
//! The discrete equation at every non-Dirichlet node is
//!
//! ```text
//! 4·T(i,j) − T(i+1,j) − T(i−1,j) − T(i,j+1) − T(i,j−1) = h²·φ(i,j)/λ
//! ```
//!
//! with out-of-grid neighbors taken from the mirrored ghost ring. Jacobi and
//! SOR iterate it to a residual tolerance; [`dense_solve_oracle`] solves the
//! same system directly for small grids.

use serde::{Deserialize, Serialize};

use crate::boundary::{build_mask, NodeKind, NodeMask};
use crate::error::{Error, Result};
use crate::grid::{ConductionProblem, ScalarField};

/// Node cap for [`dense_solve_oracle`].
pub const DENSE_NODE_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Jacobi,
    Sor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// SOR relaxation factor; 1.0 is Gauss-Seidel. Ignored by Jacobi.
    pub omega: f64,
    /// Max-abs residual of the scaled stencil equation, in Kelvin.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: SolverMethod::Sor,
            omega: 1.9,
            tol: 1e-6,
            max_iters: 200_000,
        }
    }
}

impl SolverConfig {
    pub fn jacobi(tol: f64, max_iters: usize) -> Self {
        SolverConfig {
            method: SolverMethod::Jacobi,
            omega: 1.0,
            tol,
            max_iters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::Config(format!("omega must lie in (0, 2), got {}", self.omega)));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::Config("solver needs tol > 0 and max_iters >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
}

/// Sum of the four stencil neighbors of `(r, c)`, mirroring across edges.
#[inline(always)]
pub(crate) fn neighbor_sum(v: &[f64], rows: usize, cols: usize, r: usize, c: usize) -> f64 {
    let k = r * cols + c;
    let left = if c == 0 { v[k + 1] } else { v[k - 1] };
    let right = if c == cols - 1 { v[k - 1] } else { v[k + 1] };
    let down = if r == 0 { v[k + cols] } else { v[k - cols] };
    let up = if r == rows - 1 { v[k - cols] } else { v[k + cols] };
    left + right + down + up
}

fn check_inputs(t: &ScalarField, phi: &ScalarField, mask: &NodeMask) -> Result<()> {
    t.check_same_grid(phi)?;
    mask.check_field(t)
}

/// Residual of the scaled stencil equation; zero on Dirichlet nodes.
pub fn stencil_residual(
    t: &ScalarField,
    phi: &ScalarField,
    problem: &ConductionProblem,
    mask: &NodeMask,
) -> Result<ScalarField> {
    check_inputs(t, phi, mask)?;
    let (rows, cols) = t.shape();
    let f = problem.source_factor();
    let (tv, pv) = (t.values(), phi.values());
    let mut out = ScalarField::zeros(*t.grid());
    let ov = out.values_mut();
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            if !mask.is_dirichlet(k) {
                ov[k] = 4.0 * tv[k] - neighbor_sum(tv, rows, cols, r, c) - f * pv[k];
            }
        }
    }
    Ok(out)
}

/// One Jacobi update; Dirichlet nodes are reset to the sink temperature.
pub fn jacobi_step(
    t: &ScalarField,
    phi: &ScalarField,
    problem: &ConductionProblem,
    mask: &NodeMask,
) -> Result<ScalarField> {
    check_inputs(t, phi, mask)?;
    let mut out = t.clone();
    jacobi_into(t.values(), phi.values(), problem, mask, out.values_mut());
    Ok(out)
}

fn jacobi_into(tv: &[f64], pv: &[f64], problem: &ConductionProblem, mask: &NodeMask, out: &mut [f64]) {
    let (rows, cols) = mask.shape();
    let f = problem.source_factor();
    let t0 = problem.boundary.sink_temp_k;
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            out[k] = if mask.is_dirichlet(k) {
                t0
            } else {
                0.25 * (neighbor_sum(tv, rows, cols, r, c) + f * pv[k])
            };
        }
    }
}

fn max_abs_residual(tv: &[f64], pv: &[f64], f: f64, mask: &NodeMask) -> f64 {
    let (rows, cols) = mask.shape();
    let mut worst = 0.0f64;
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            if !mask.is_dirichlet(k) {
                let res = 4.0 * tv[k] - neighbor_sum(tv, rows, cols, r, c) - f * pv[k];
                worst = worst.max(res.abs());
            }
        }
    }
    worst
}

/// Iterates from `T ≡ T₀` until the max-abs residual drops to `config.tol`.
/// Non-convergence is reported, not raised.
pub fn solve_fdm(problem: &ConductionProblem, config: &SolverConfig) -> Result<(ScalarField, SolveReport)> {
    solve_fdm_observed(problem, config, |_, _| {})
}

/// As [`solve_fdm`], calling `observe(iteration, max_abs_residual)` each
/// time the residual is evaluated.
pub fn solve_fdm_observed(
    problem: &ConductionProblem,
    config: &SolverConfig,
    mut observe: impl FnMut(usize, f64),
) -> Result<(ScalarField, SolveReport)> {
    config.validate()?;
    let mask = build_mask(&problem.grid, &problem.boundary)?;
    let phi = problem.intensity()?;
    let f = problem.source_factor();
    let t0 = problem.boundary.sink_temp_k;
    let mut t = ScalarField::constant(problem.grid, t0);
    let pv = phi.values();

    let mut iterations = 0;
    let mut residual = max_abs_residual(t.values(), pv, f, &mask);
    observe(0, residual);
    match config.method {
        SolverMethod::Jacobi => {
            let mut next = t.clone();
            while residual > config.tol && iterations < config.max_iters {
                jacobi_into(t.values(), pv, problem, &mask, next.values_mut());
                std::mem::swap(&mut t, &mut next);
                iterations += 1;
                residual = max_abs_residual(t.values(), pv, f, &mask);
                observe(iterations, residual);
            }
        }
        SolverMethod::Sor => {
            const CHECK_EVERY: usize = 8;
            let (rows, cols) = mask.shape();
            let w = config.omega;
            while residual > config.tol && iterations < config.max_iters {
                let sweeps = CHECK_EVERY.min(config.max_iters - iterations);
                let tv = t.values_mut();
                for _ in 0..sweeps {
                    for r in 0..rows {
                        for c in 0..cols {
                            let k = r * cols + c;
                            if mask.is_dirichlet(k) {
                                continue;
                            }
                            let gs = 0.25 * (neighbor_sum(tv, rows, cols, r, c) + f * pv[k]);
                            tv[k] += w * (gs - tv[k]);
                        }
                    }
                }
                iterations += sweeps;
                residual = max_abs_residual(t.values(), pv, f, &mask);
                observe(iterations, residual);
            }
        }
    }
    let report = SolveReport {
        iterations,
        final_residual: residual,
        converged: residual <= config.tol,
    };
    Ok((t, report))
}

/// Exact discrete solution by banded Gaussian elimination with partial
/// pivoting. Limited to [`DENSE_NODE_CAP`] nodes.
pub fn dense_solve_oracle(problem: &ConductionProblem) -> Result<ScalarField> {
    let mask = build_mask(&problem.grid, &problem.boundary)?;
    dense_solve_masked(problem, &mask)
}

/// [`dense_solve_oracle`] with an explicit node classification.
pub fn dense_solve_masked(problem: &ConductionProblem, mask: &NodeMask) -> Result<ScalarField> {
    let n = problem.grid.node_count();
    if n > DENSE_NODE_CAP {
        return Err(Error::TooLarge {
            nodes: n,
            cap: DENSE_NODE_CAP,
        });
    }
    if mask.count(NodeKind::Dirichlet) == 0 {
        return Err(Error::SingularSystem(
            "no Dirichlet node: the all-Neumann problem is defined only up to a constant".into(),
        ));
    }
    let phi = problem.intensity()?;
    mask.check_field(&phi)?;
    let (rows, cols) = mask.shape();
    let f = problem.source_factor();
    let rhs: Vec<f64> = phi.values().iter().map(|p| f * p).collect();
    let system = assemble(rows, cols, mask.labels(), &rhs, problem.boundary.sink_temp_k);
    let x = system.solve()?;
    ScalarField::from_values(problem.grid, x)
}

/// Row-banded linear system. Row `i` stores columns `i − lower ..= i + 2·lower`
/// so pivoting fill-in fits.
pub(crate) struct BandedSystem {
    n: usize,
    lower: usize,
    width: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl BandedSystem {
    pub(crate) fn new(n: usize, lower: usize) -> Self {
        let width = 3 * lower + 1;
        BandedSystem {
            n,
            lower,
            width,
            a: vec![0.0; n * width],
            b: vec![0.0; n],
        }
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> usize {
        debug_assert!(col + self.lower >= row && col <= row + 2 * self.lower);
        row * self.width + (col + self.lower - row)
    }

    pub(crate) fn add(&mut self, row: usize, col: usize, v: f64) {
        let s = self.slot(row, col);
        self.a[s] += v;
    }

    pub(crate) fn set_rhs(&mut self, row: usize, v: f64) {
        self.b[row] = v;
    }

    pub(crate) fn solve(mut self) -> Result<Vec<f64>> {
        let (n, l) = (self.n, self.lower);
        let scale = self.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..n {
            let last_row = (j + l).min(n - 1);
            let mut p = j;
            let mut best = self.a[self.slot(j, j)].abs();
            for i in j + 1..=last_row {
                let v = self.a[self.slot(i, j)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * 1e-14 {
                return Err(Error::SingularSystem(format!("zero pivot in column {j}")));
            }
            let last_col = (j + 2 * l).min(n - 1);
            if p != j {
                for c in j..=last_col {
                    let (sj, sp) = (self.slot(j, c), self.slot(p, c));
                    self.a.swap(sj, sp);
                }
                self.b.swap(j, p);
            }
            let pivot = self.a[self.slot(j, j)];
            for i in j + 1..=last_row {
                let factor = self.a[self.slot(i, j)] / pivot;
                if factor == 0.0 {
                    continue;
                }
                for c in j..=last_col {
                    let v = self.a[self.slot(j, c)];
                    let s = self.slot(i, c);
                    self.a[s] -= factor * v;
                }
                self.b[i] -= factor * self.b[j];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = self.b[i];
            for c in i + 1..=(i + 2 * l).min(n - 1) {
                acc -= self.a[self.slot(i, c)] * x[c];
            }
            x[i] = acc / self.a[self.slot(i, i)];
        }
        Ok(x)
    }
}

/// Assembles the stencil system over a `rows × cols` node array. Dirichlet
/// rows pin the node to `t0`; mirrored neighbors fold into doubled couplings.
pub(crate) fn assemble(rows: usize, cols: usize, labels: &[NodeKind], rhs: &[f64], t0: f64) -> BandedSystem {
    let n = rows * cols;
    let mut sys = BandedSystem::new(n, cols);
    let mirror = |i: isize, len: usize| -> usize {
        if i < 0 {
            1
        } else if i as usize >= len {
            len - 2
        } else {
            i as usize
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            if labels[k] == NodeKind::Dirichlet {
                sys.add(k, k, 1.0);
                sys.set_rhs(k, t0);
                continue;
            }
            sys.add(k, k, 4.0);
            for (dr, dc) in [(0isize, 1isize), (0, -1), (1, 0), (-1, 0)] {
                let nr = mirror(r as isize + dr, rows);
                let nc = mirror(c as isize + dc, cols);
                sys.add(k, nr * cols + nc, -1.0);
            }
            sys.set_rhs(k, rhs[k]);
        }
    }
    sys
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundarySpec;
    use crate::grid::{GridSpec, HeatSource, LayoutSpec};

    fn problem(cells: usize, sources: Vec<HeatSource>) -> ConductionProblem {
        let grid = GridSpec::square(0.1, cells).unwrap();
        ConductionProblem::new(grid, 1.0, LayoutSpec::new("t", sources), BoundarySpec::left_sink(0.025))
            .unwrap()
    }

    fn centered_source() -> HeatSource {
        HeatSource {
            x_m: 0.04375,
            y_m: 0.04375,
            width_m: 0.0125,
            height_m: 0.0125,
            intensity_w_m2: 10000.0,
        }
    }

    #[test]
    fn hand_eliminated_three_by_three_system() {
        // Dirichlet node at (0,0) held at 0, unit source term at the center.
        let mut labels = vec![NodeKind::Neumann; 9];
        labels[0] = NodeKind::Dirichlet;
        labels[4] = NodeKind::Interior;
        let mut rhs = vec![0.0; 9];
        rhs[4] = 1.0;
        let x = assemble(3, 3, &labels, &rhs, 0.0).solve().unwrap();
        let expect = [0.0, 1.0, 7.0 / 6.0, 1.0, 17.0 / 12.0, 4.0 / 3.0, 7.0 / 6.0, 4.0 / 3.0, 4.0 / 3.0];
        for (a, b) in x.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13, "{x:?}");
        }
    }

    #[test]
    fn zero_source_gives_sink_temperature() {
        let p = problem(8, vec![]);
        let (t, rep) = solve_fdm(&p, &SolverConfig::default()).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 1);
        assert!(t.values().iter().all(|&v| v == 298.0));
        let d = dense_solve_oracle(&p).unwrap();
        assert!(d.values().iter().all(|&v| (v - 298.0).abs() < 1e-12));
    }

    #[test]
    fn single_hot_node_residual_and_jacobi_step() {
        let p = problem(8, vec![]);
        let mask = build_mask(&p.grid, &p.boundary).unwrap();
        let t = ScalarField::zeros(p.grid);
        let mut phi = ScalarField::zeros(p.grid);
        let bump = 4.0 * p.conductivity_w_mk / p.grid.step_m().powi(2);
        phi.set(4, 4, bump);
        let res = stencil_residual(&t, &phi, &p, &mask).unwrap();
        for r in 0..9 {
            for c in 0..9 {
                let want = if (r, c) == (4, 4) { -4.0 } else { 0.0 };
                assert!((res.get(r, c) - want).abs() < 1e-12);
            }
        }
        // Dirichlet nodes of a zero field are reset to T0 by the step.
        let t0 = apply_sink(&t, &p, &mask);
        let next = jacobi_step(&t0, &phi, &p, &mask).unwrap();
        assert!((next.get(4, 4) - 1.0).abs() < 1e-12);
        assert_eq!(next.get(4, 5), 0.0);
    }

    fn apply_sink(t: &ScalarField, p: &ConductionProblem, mask: &NodeMask) -> ScalarField {
        crate::boundary::apply_dirichlet(t, mask, p.boundary.sink_temp_k).unwrap()
    }

    #[test]
    fn sor_and_jacobi_match_oracle_on_16_grid() {
        let p = problem(16, vec![centered_source()]);
        let oracle = dense_solve_oracle(&p).unwrap();
        for cfg in [
            SolverConfig { tol: 1e-9, ..SolverConfig::default() },
            SolverConfig::jacobi(1e-9, 2_000_000),
        ] {
            let (t, rep) = solve_fdm(&p, &cfg).unwrap();
            assert!(rep.converged, "{cfg:?} {rep:?}");
            let err = t
                .values()
                .iter()
                .zip(oracle.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-6, "{cfg:?}: {err}");
        }
    }

    #[test]
    fn jacobi_residual_is_monotone() {
        let p = problem(16, vec![centered_source()]);
        let mut history = Vec::new();
        let cfg = SolverConfig::jacobi(1e-8, 100_000);
        solve_fdm_observed(&p, &cfg, |_, r| history.push(r)).unwrap();
        assert!(history.len() > 10);
        for w in history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn maximum_principle_on_solution() {
        let p = problem(16, vec![centered_source()]);
        let t = dense_solve_oracle(&p).unwrap();
        let mask = build_mask(&p.grid, &p.boundary).unwrap();
        let min = t.min();
        assert!((min - 298.0).abs() < 1e-9);
        for (k, v) in t.values().iter().enumerate() {
            if !mask.is_dirichlet(k) {
                assert!(*v > 298.0);
            }
        }
    }

    #[test]
    fn oracle_limits() {
        let bottom = BoundarySpec {
            sink_edge: crate::boundary::Edge::Bottom,
            sink_center_m: 0.05,
            sink_length_m: 0.1,
            sink_temp_k: 298.0,
        };
        let at_cap = ConductionProblem::new(
            GridSpec::square(0.1, 99).unwrap(),
            1.0,
            LayoutSpec::new("z", vec![]),
            bottom,
        )
        .unwrap();
        assert_eq!(at_cap.grid.node_count(), DENSE_NODE_CAP);
        assert!(dense_solve_oracle(&at_cap).is_ok());
        let too_big = problem(128, vec![]);
        assert!(matches!(dense_solve_oracle(&too_big), Err(Error::TooLarge { .. })));

        let p = problem(8, vec![centered_source()]);
        let neumann = NodeMask::all_neumann(p.grid);
        assert!(matches!(dense_solve_masked(&p, &neumann), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn invalid_solver_config() {
        let p = problem(8, vec![]);
        let bad = SolverConfig { omega: 2.0, ..SolverConfig::default() };
        assert!(solve_fdm(&p, &bad).is_err());
    }
}
