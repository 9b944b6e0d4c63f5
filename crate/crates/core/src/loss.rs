//! Label-free training loss built from the five-point stencil.
//!
//! For a prediction `T` the target `T′ = ΣT_neighbors + h²φ/λ` is formed
//! from the prediction itself, and each non-Dirichlet node contributes the
//! pixel error `δ = |T − T′/4|`. The target is treated as a constant during
//! differentiation, so each step pulls `T` toward one Jacobi update of
//! itself. Pixel-level online hard example mining (P-OHEM) reweights `δ` so
//! nodes with larger error receive larger weight.

use serde::{Deserialize, Serialize};

use crate::boundary::NodeMask;
use crate::error::{Error, Result};
use crate::fdm::neighbor_sum;
use crate::grid::{ConductionProblem, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Pohem,
    L1,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub variant: LossVariant,
    /// Shift factor of the pixel weights.
    pub eta1: f64,
    /// Scale factor of the pixel weights.
    pub eta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-12
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            variant: LossVariant::Pohem,
            eta1: 0.0,
            eta2: 10.0,
            epsilon: default_epsilon(),
        }
    }
}

impl LossConfig {
    pub fn plain(variant: LossVariant) -> Self {
        LossConfig {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta1 < 0.0 || self.eta2 < 0.0 || !(self.epsilon > 0.0) {
            return Err(Error::Config("eta1, eta2 must be >= 0 and epsilon > 0".into()));
        }
        if self.variant == LossVariant::Pohem && self.eta1 == 0.0 && self.eta2 == 0.0 {
            return Err(Error::Config("P-OHEM needs eta1 or eta2 nonzero".into()));
        }
        Ok(())
    }
}

/// Whether gradients may flow through the target `T′`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    Detached,
    /// Ablation only: differentiates through the neighbors feeding `T′`.
    Attached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `δ` per node; zero on Dirichlet nodes.
    pub per_pixel_error: ScalarField,
    /// Weight per node; zero on Dirichlet nodes.
    pub weights: ScalarField,
    pub masked_count: usize,
}

impl LossBreakdown {
    pub fn max_error(&self) -> f64 {
        self.per_pixel_error.max()
    }

    pub fn mean_error(&self) -> f64 {
        self.per_pixel_error.values().iter().sum::<f64>() / self.masked_count as f64
    }
}

/// Gradient of the loss with respect to the prediction before the
/// Dirichlet overwrite (so Dirichlet entries are always zero).
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub wrt_prediction: ScalarField,
    /// Share of `wrt_prediction` that arrived through the `T′` inputs.
    /// Identically zero in [`TargetMode::Detached`].
    pub via_target: ScalarField,
}

fn check(t: &ScalarField, phi: &ScalarField, mask: &NodeMask) -> Result<()> {
    t.check_same_grid(phi)?;
    mask.check_field(t)
}

/// `T′` on non-Dirichlet nodes. Dirichlet entries hold `4·T` so their
/// pixel error is zero.
pub fn target_field(
    t: &ScalarField,
    phi: &ScalarField,
    problem: &ConductionProblem,
    mask: &NodeMask,
) -> Result<ScalarField> {
    check(t, phi, mask)?;
    let (rows, cols) = t.shape();
    let f = problem.source_factor();
    let (tv, pv) = (t.values(), phi.values());
    let mut out = ScalarField::zeros(*t.grid());
    let ov = out.values_mut();
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            ov[k] = if mask.is_dirichlet(k) {
                4.0 * tv[k]
            } else {
                neighbor_sum(tv, rows, cols, r, c) + f * pv[k]
            };
        }
    }
    Ok(out)
}

/// Signed pixel residual `T − T′/4`, zero on Dirichlet nodes.
fn signed_error(t: &ScalarField, target: &ScalarField, mask: &NodeMask) -> Vec<f64> {
    t.values()
        .iter()
        .zip(target.values())
        .enumerate()
        .map(|(k, (v, tp))| if mask.is_dirichlet(k) { 0.0 } else { v - 0.25 * tp })
        .collect()
}

/// Min-max normalized P-OHEM weights:
/// `w = η₁ + η₂·(δ − min δ)/(max δ − min δ + ε)` over non-Dirichlet nodes,
/// falling back to 1 when `δ` is uniform. Dirichlet nodes get 0.
pub fn pohem_weights(delta: &ScalarField, mask: &NodeMask, config: &LossConfig) -> Result<ScalarField> {
    mask.check_field(delta)?;
    if config.variant != LossVariant::Pohem {
        return Err(Error::Config("pixel weights requested for a non-P-OHEM loss".into()));
    }
    let dv = delta.values();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, &d) in dv.iter().enumerate() {
        if mask.is_dirichlet(k) {
            continue;
        }
        if d < 0.0 || d.is_nan() {
            return Err(Error::NegativeError(d));
        }
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let span = hi - lo;
    let uniform = !(span >= config.epsilon);
    let mut w = ScalarField::zeros(*delta.grid());
    for (k, wk) in w.values_mut().iter_mut().enumerate() {
        if mask.is_dirichlet(k) {
            continue;
        }
        *wk = if uniform {
            1.0
        } else {
            config.eta1 + config.eta2 * (dv[k] - lo) / (span + config.epsilon)
        };
    }
    Ok(w)
}

/// Loss value and breakdown for a prediction that already satisfies the
/// Dirichlet condition.
pub fn physics_loss(
    t_pred: &ScalarField,
    phi: &ScalarField,
    problem: &ConductionProblem,
    mask: &NodeMask,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    let target = target_field(t_pred, phi, problem, mask)?;
    let err = signed_error(t_pred, &target, mask);
    breakdown(t_pred, &err, mask, config)
}

fn breakdown(t_pred: &ScalarField, err: &[f64], mask: &NodeMask, config: &LossConfig) -> Result<LossBreakdown> {
    config.validate()?;
    let grid = *t_pred.grid();
    let delta = ScalarField::from_values(grid, err.iter().map(|e| e.abs()).collect())
        .map_err(|_| Error::Config("prediction produced a non-finite pixel error".into()))?;
    let weights = match config.variant {
        LossVariant::Pohem => pohem_weights(&delta, mask, config)?,
        LossVariant::L1 | LossVariant::Mse => {
            let mut w = ScalarField::zeros(grid);
            for (k, wk) in w.values_mut().iter_mut().enumerate() {
                if !mask.is_dirichlet(k) {
                    *wk = 1.0;
                }
            }
            w
        }
    };
    let n = mask.free_count();
    let sum: f64 = match config.variant {
        LossVariant::Mse => delta.values().iter().map(|d| d * d).sum(),
        _ => delta
            .values()
            .iter()
            .zip(weights.values())
            .map(|(d, w)| w * d)
            .sum(),
    };
    Ok(LossBreakdown {
        total: sum / n as f64,
        per_pixel_error: delta,
        weights,
        masked_count: n,
    })
}

/// Loss plus its gradient with respect to the prediction. Weights are
/// constants; `T′` is constant unless `mode` is [`TargetMode::Attached`].
pub fn physics_loss_with_grad(
    t_pred: &ScalarField,
    phi: &ScalarField,
    problem: &ConductionProblem,
    mask: &NodeMask,
    config: &LossConfig,
    mode: TargetMode,
) -> Result<(LossBreakdown, LossGradient)> {
    let target = target_field(t_pred, phi, problem, mask)?;
    let err = signed_error(t_pred, &target, mask);
    let loss = breakdown(t_pred, &err, mask, config)?;
    let n = loss.masked_count as f64;
    // Adjoint of each pixel term with respect to its signed error.
    let adj: Vec<f64> = err
        .iter()
        .zip(loss.weights.values())
        .map(|(&e, &w)| match config.variant {
            LossVariant::Mse => 2.0 * e / n,
            _ => w * sign(e) / n,
        })
        .collect();

    let grid = *t_pred.grid();
    let (rows, cols) = grid.shape();
    let mut direct = adj.clone();
    let mut via = vec![0.0; adj.len()];
    if mode == TargetMode::Attached {
        // e_k = T_k − ¼·ΣT_nb(k): scatter −¼·adj_k onto each mirrored neighbor.
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
                if mask.is_dirichlet(k) || adj[k] == 0.0 {
                    continue;
                }
                for (dr, dc) in [(0isize, 1isize), (0, -1), (1, 0), (-1, 0)] {
                    let m = mirror(r as isize + dr, rows) * cols + mirror(c as isize + dc, cols);
                    via[m] -= 0.25 * adj[k];
                }
            }
        }
    }
    for k in 0..direct.len() {
        if mask.is_dirichlet(k) {
            direct[k] = 0.0;
            via[k] = 0.0;
        } else {
            direct[k] += via[k];
        }
    }
    let grad = LossGradient {
        wrt_prediction: ScalarField::from_values(grid, direct)?,
        via_target: ScalarField::from_values(grid, via)?,
    };
    Ok((loss, grad))
}

/// Loss of `t_pred` against a frozen target and frozen weights. This is the
/// function whose derivative [`physics_loss_with_grad`] returns in detached
/// mode, which makes it the finite-difference reference for that gradient.
pub fn frozen_loss(
    t_pred: &ScalarField,
    target: &ScalarField,
    weights: &ScalarField,
    mask: &NodeMask,
    variant: LossVariant,
) -> f64 {
    let err = signed_error(t_pred, target, mask);
    let n = mask.free_count() as f64;
    let sum: f64 = match variant {
        LossVariant::Mse => err.iter().map(|e| e * e).sum(),
        _ => err.iter().zip(weights.values()).map(|(e, w)| w * e.abs()).sum(),
    };
    sum / n
}

#[inline]
fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Plain supervised reduction over non-Dirichlet nodes, with its gradient.
pub fn supervised_loss_with_grad(
    t_pred: &ScalarField,
    label: &ScalarField,
    mask: &NodeMask,
    variant: LossVariant,
) -> Result<(f64, ScalarField)> {
    t_pred.check_same_grid(label)?;
    mask.check_field(t_pred)?;
    let n = mask.free_count() as f64;
    let mut total = 0.0;
    let mut grad = ScalarField::zeros(*t_pred.grid());
    for (k, ((p, l), g)) in t_pred
        .values()
        .iter()
        .zip(label.values())
        .zip(grad.values_mut())
        .enumerate()
    {
        if mask.is_dirichlet(k) {
            continue;
        }
        let e = p - l;
        match variant {
            LossVariant::Mse => {
                total += e * e;
                *g = 2.0 * e / n;
            }
            _ => {
                total += e.abs();
                *g = sign(e) / n;
            }
        }
    }
    Ok((total / n, grad))
}
