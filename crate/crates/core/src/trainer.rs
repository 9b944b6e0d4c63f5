//! Physics-informed and supervised training loops with Adam.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::NodeMask;
use crate::data::{layout_fields, CaseConfig};
use crate::grid::{ConductionProblem, LayoutSpec, ScalarField};
use crate::loss::{physics_loss_with_grad, supervised_loss_with_grad, LossConfig, LossVariant, TargetMode};
use crate::metrics::mae;
use crate::net::{ParameterSet, Real, UNet};
use crate::{Error, Result};

/// Mixed into the seed for the shuffle stream so it is independent of the
/// stream that initializes the weights.
const SHUFFLE_SALT: u64 = 0x5eed_5f1e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Physics,
    Supervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Multiplied into the learning rate once per epoch.
    pub lr_decay: f64,
    pub optimizer: Optimizer,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub loss: LossConfig,
    pub mode: TrainMode,
    pub supervised_loss: LossVariant,
    pub target_mode: TargetMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 1,
            lr0: 0.01,
            lr_decay: 0.85,
            optimizer: Optimizer::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            loss: LossConfig::default(),
            mode: TrainMode::Physics,
            supervised_loss: LossVariant::L1,
            target_mode: TargetMode::Detached,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Zero epochs is accepted and yields the initial parameters.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config("lr0 must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must be in [0, 1) and eps > 0".into()));
        }
        if self.supervised_loss == LossVariant::Pohem {
            return Err(Error::Config("supervised loss must be l1 or mse".into()));
        }
        self.loss.validate()
    }
}

/// `lr0 · lr_decay^epoch` for `0 <= epoch < epochs`.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::Range {
            epoch,
            epochs: config.epochs,
        });
    }
    Ok(config.lr0 * config.lr_decay.powi(epoch as i32))
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F: Real = f32> {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: ParameterSet<F>,
    pub v: ParameterSet<F>,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ParameterSet<F>, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            step: 0,
            beta1,
            beta2,
            eps,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam step in place.
pub fn adam_update<F: Real>(params: &mut ParameterSet<F>, grads: &ParameterSet<F>, state: &mut AdamState<F>, lr: f64) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::Shape("parameter, gradient and moment layouts differ".into()));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let (fb1, fb2) = (F::from_f64(b1), F::from_f64(b2));
    let (gb1, gb2) = (F::from_f64(1.0 - b1), F::from_f64(1.0 - b2));
    let step_size = F::from_f64(lr / c1);
    let inv_c2 = F::from_f64(1.0 / c2);
    let eps = F::from_f64(state.eps);
    let tensors = params.tensors_mut().iter_mut().zip(grads.tensors());
    let moments = state.m.tensors_mut().iter_mut().zip(state.v.tensors_mut());
    for ((p, g), (m, v)) in tensors.zip(moments) {
        for (((p, &g), m), v) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
            *m = fb1 * *m + gb1 * g;
            *v = fb2 * *v + gb2 * g * g;
            *p -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Mean absolute error against the validation labels, when given.
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub wall_seconds: f64,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,train_loss,val_mae\n");
        for r in &self.records {
            let val = r.val_mae.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.lr, r.train_loss, val));
        }
        out
    }

    pub fn final_val_mae(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.val_mae)
    }
}

/// Per-layout quantities reused every epoch.
struct Prepared {
    problem: ConductionProblem,
    phi: ScalarField,
    input: ScalarField,
}

fn prepare(case: &CaseConfig, layout: &LayoutSpec) -> Result<Prepared> {
    let (phi, input) = layout_fields(case, layout)?;
    Ok(Prepared {
        problem: case.problem(layout.clone())?,
        phi,
        input,
    })
}

/// Network prediction for one layout of `case`.
pub fn predict(net: &UNet, params: &ParameterSet<f32>, case: &CaseConfig, layout: &LayoutSpec) -> Result<ScalarField> {
    let (_, input) = layout_fields(case, layout)?;
    net.forward(params, &input, &case.mask()?, case.sink_temp_k())
}

/// Mean MAE of predictions over labelled layouts.
pub fn validation_mae(net: &UNet, params: &ParameterSet<f32>, case: &CaseConfig, data: &[(LayoutSpec, ScalarField)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let mut sum = 0.0;
    for (layout, label) in data {
        sum += mae(&predict(net, params, case, layout)?, label)?;
    }
    Ok(sum / data.len() as f64)
}

enum Objective<'a> {
    Physics,
    Supervised(&'a [ScalarField]),
}

/// Trains on layouts alone: the loss is the violation of the discrete heat
/// equation by the prediction. Labels are only read from `validation`.
pub fn train_physics(
    net: &UNet,
    case: &CaseConfig,
    layouts: &[LayoutSpec],
    validation: &[(LayoutSpec, ScalarField)],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(ParameterSet<f32>, TrainReport)> {
    run(net, case, layouts, Objective::Physics, validation, config, observer)
}

/// Same loop as [`train_physics`] with a plain L1 or MSE loss against FDM
/// labels.
pub fn train_supervised(
    net: &UNet,
    case: &CaseConfig,
    data: &[(LayoutSpec, ScalarField)],
    validation: &[(LayoutSpec, ScalarField)],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(ParameterSet<f32>, TrainReport)> {
    let (layouts, labels): (Vec<_>, Vec<_>) = data.iter().cloned().unzip();
    for l in &labels {
        if l.grid() != &case.grid {
            return Err(Error::Shape("label grid differs from the case grid".into()));
        }
    }
    run(net, case, &layouts, Objective::Supervised(&labels), validation, config, observer)
}

fn run(
    net: &UNet,
    case: &CaseConfig,
    layouts: &[LayoutSpec],
    objective: Objective,
    validation: &[(LayoutSpec, ScalarField)],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<(ParameterSet<f32>, TrainReport)> {
    config.validate()?;
    case.validate()?;
    let started = Instant::now();
    let mask = case.mask()?;
    let t0 = case.sink_temp_k();
    let mut params: ParameterSet<f32> = net.init_parameters(config.seed);
    let mut report = TrainReport::default();
    if config.epochs == 0 {
        report.wall_seconds = started.elapsed().as_secs_f64();
        return Ok((params, report));
    }
    if layouts.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let prepared = layouts.iter().map(|l| prepare(case, l)).collect::<Result<Vec<_>>>()?;
    let mut adam = AdamState::new(&params, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..prepared.len()).collect();

    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch)?;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<&ScalarField> = batch.iter().map(|&i| &prepared[i].input).collect();
            let (preds, rec) = net.forward_recorded(&params, &inputs, &mask, t0)?;
            if preds.iter().any(|p| p.values().iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence { epoch, step });
            }
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            let mut d_fields = Vec::with_capacity(batch.len());
            for (&i, pred) in batch.iter().zip(&preds) {
                let (l, g) = sample_loss(&objective, i, pred, &prepared[i], &mask, config)?;
                loss += scale * l;
                d_fields.push(g.map(|v| v * scale));
            }
            let grads = net.backward(&params, rec, &d_fields)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            adam_update(&mut params, &grads, &mut adam, lr)?;
            if !params.all_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            loss_sum += loss;
            batches += 1;
        }
        let val_mae = if validation.is_empty() {
            None
        } else {
            Some(validation_mae(net, &params, case, validation)?)
        };
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            val_mae,
        };
        observer(&record);
        report.records.push(record);
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((params, report))
}

fn sample_loss(
    objective: &Objective,
    index: usize,
    pred: &ScalarField,
    prep: &Prepared,
    mask: &NodeMask,
    config: &TrainConfig,
) -> Result<(f64, ScalarField)> {
    match objective {
        Objective::Physics => {
            let (loss, grad) = physics_loss_with_grad(pred, &prep.phi, &prep.problem, mask, &config.loss, config.target_mode)?;
            Ok((loss.total, grad.wrt_prediction))
        }
        Objective::Supervised(labels) => supervised_loss_with_grad(pred, &labels[index], mask, config.supervised_loss),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_layout, sample_stream};
    use crate::net::{NetworkConfig, PredictionHead, UNet};

    fn tiny() -> (UNet, CaseConfig) {
        let config = NetworkConfig {
            base_width: 4,
            depth: 2,
            groups: 2,
            ..NetworkConfig::default()
        };
        (UNet::new(config, PredictionHead::default()).unwrap(), CaseConfig::desk(16).unwrap())
    }

    fn layouts(case: &CaseConfig, n: usize) -> Vec<LayoutSpec> {
        (0..n).map(|i| sample_layout(case, &mut sample_stream(1, i)).unwrap()).collect()
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at_epoch(&cfg, 0).unwrap(), 0.01);
        assert!((lr_at_epoch(&cfg, 1).unwrap() - 0.0085).abs() < 1e-15);
        assert!(matches!(lr_at_epoch(&cfg, 30), Err(Error::Range { epoch: 30, epochs: 30 })));
        let flat = TrainConfig { lr_decay: 1.0, ..cfg };
        assert!((0..30).all(|e| lr_at_epoch(&flat, e).unwrap() == 0.01));
    }

    fn scalar(v: f64) -> ParameterSet<f64> {
        ParameterSet::new(vec![crate::net::ParamTensor {
            name: "p".into(),
            shape: vec![1],
            data: vec![v],
        }])
        .unwrap()
    }

    #[test]
    fn adam_zero_gradient_only_advances_the_step() {
        let mut p = scalar(1.5);
        let mut st = AdamState::new(&p, 0.9, 0.999, 1e-8);
        adam_update(&mut p, &scalar(0.0), &mut st, 0.1).unwrap();
        assert_eq!(p, scalar(1.5));
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_the_gradient() {
        for g in [3.0, -0.02] {
            let mut p = scalar(0.0);
            let mut st = AdamState::new(&p, 0.9, 0.999, 1e-8);
            adam_update(&mut p, &scalar(g), &mut st, 0.01).unwrap();
            let want = -0.01 * f64::signum(g);
            assert!((p.tensors()[0].data[0] - want).abs() < 1e-8, "{g}");
        }
    }

    #[test]
    fn adam_two_steps_follow_the_moment_recursion() {
        let (b1, b2, eps, lr, g) = (0.9, 0.999, 1e-8, 0.05, 0.7);
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p, b1, b2, eps);
        adam_update(&mut p, &scalar(g), &mut st, lr).unwrap();
        adam_update(&mut p, &scalar(g), &mut st, lr).unwrap();
        // m1 = 0.07, v1 = 0.00049; m2 = 0.133, v2 = 0.00097951.
        let (m2, v2) = (0.9 * 0.07 + 0.1 * g, 0.999 * 0.00049 + 0.001 * g * g);
        let step2 = lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        let step1 = lr * 1.0 / (1.0 + eps / g);
        let want = 1.0 - step1 - step2;
        assert!((p.tensors()[0].data[0] - want).abs() < 1e-12);
        assert!((st.m.tensors()[0].data[0] - m2).abs() < 1e-15);
        assert!((st.v.tensors()[0].data[0] - v2).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_mismatched_layouts() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p, 0.9, 0.999, 1e-8);
        let other = ParameterSet::new(vec![crate::net::ParamTensor {
            name: "q".into(),
            shape: vec![1],
            data: vec![0.0],
        }])
        .unwrap();
        assert!(matches!(adam_update(&mut p, &other, &mut st, 0.1), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_epochs_returns_the_initial_parameters() {
        let (net, case) = tiny();
        let cfg = TrainConfig {
            epochs: 0,
            seed: 4,
            ..TrainConfig::default()
        };
        let ls = layouts(&case, 2);
        let (p, report) = train_physics(&net, &case, &ls, &[], &cfg, &mut |_| {}).unwrap();
        assert_eq!(p, net.init_parameters::<f32>(4));
        assert!(report.records.is_empty());
        let data: Vec<_> = ls.iter().map(|l| (l.clone(), ScalarField::zeros(case.grid))).collect();
        let (p, _) = train_supervised(&net, &case, &data, &[], &cfg, &mut |_| {}).unwrap();
        assert_eq!(p, net.init_parameters::<f32>(4));
    }

    #[test]
    fn own_predictions_as_labels_give_zero_loss_and_gradient() {
        let (net, case) = tiny();
        let params: ParameterSet<f32> = net.init_parameters(9);
        let mask = case.mask().unwrap();
        for layout in layouts(&case, 2) {
            let pred = predict(&net, &params, &case, &layout).unwrap();
            for v in [LossVariant::L1, LossVariant::Mse] {
                let (loss, grad) = supervised_loss_with_grad(&pred, &pred, &mask, v).unwrap();
                assert_eq!(loss, 0.0);
                let (_, input) = layout_fields(&case, &layout).unwrap();
                let (_, rec) = net.forward_recorded(&params, &[&input], &mask, case.sink_temp_k()).unwrap();
                let g = net.backward(&params, rec, &[grad]).unwrap();
                assert!(g.tensors().iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_schedule_is_recorded() {
        let (net, case) = tiny();
        let ls = layouts(&case, 3);
        let val: Vec<_> = ls[..1]
            .iter()
            .map(|l| {
                let (t, _) = crate::fdm::solve_fdm(&case.problem(l.clone()).unwrap(), &Default::default()).unwrap();
                (l.clone(), t)
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let mut seen = 0;
        let (a, ra) = train_physics(&net, &case, &ls, &val, &cfg, &mut |_| seen += 1).unwrap();
        let (b, rb) = train_physics(&net, &case, &ls, &val, &cfg, &mut |_| {}).unwrap();
        assert_eq!(seen, 2);
        assert_eq!(a, b);
        assert_eq!(ra.records, rb.records);
        assert_ne!(a, net.init_parameters::<f32>(5));
        for r in &ra.records {
            assert_eq!(r.lr, lr_at_epoch(&cfg, r.epoch).unwrap());
            assert!(r.train_loss.is_finite() && r.val_mae.unwrap().is_finite());
        }
        assert!(ra.to_csv().starts_with("epoch,lr,train_loss,val_mae\n0,0.01,"));
    }

    #[test]
    fn divergence_is_reported() {
        let (net, case) = tiny();
        let cfg = TrainConfig {
            epochs: 1,
            lr0: 1e30,
            lr_decay: 1.0,
            ..TrainConfig::default()
        };
        let r = train_physics(&net, &case, &layouts(&case, 3), &[], &cfg, &mut |_| {});
        assert!(matches!(r, Err(Error::Divergence { epoch: 0, .. })));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainConfig { batch_size: 0, ..ok },
            TrainConfig { lr0: 0.0, ..ok },
            TrainConfig { lr_decay: 1.5, ..ok },
            TrainConfig { supervised_loss: LossVariant::Pohem, ..ok },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
