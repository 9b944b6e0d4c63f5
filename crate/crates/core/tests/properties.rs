use proptest::prelude::*;
use thermoforge::boundary::{apply_dirichlet, build_mask, ghost_pad_neumann, BoundarySpec, NodeMask};
use thermoforge::data::{sample_layout, sample_stream, CaseConfig};
use thermoforge::fdm::{dense_solve_oracle, jacobi_step, solve_fdm_observed, stencil_residual, SolverConfig};
use thermoforge::grid::{rasterize_layout, ConductionProblem, GridSpec, HeatSource, LayoutSpec, ScalarField};
use thermoforge::loss::{physics_loss, pohem_weights, LossConfig, LossVariant};
use thermoforge::metrics::evaluate_values;
use thermoforge::net::{NetworkConfig, ParameterSet, PredictionHead, UNet};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 32,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn sink(cells: usize) -> BoundarySpec {
    // Two or three cells long so both endpoints land on nodes.
    let h = 0.1 / cells as f64;
    BoundarySpec::left_sink(if cells % 2 == 0 { 2.0 * h } else { 3.0 * h })
}

fn random_problem(cells: usize, seed: u64, sources: usize) -> ConductionProblem {
    let h = 0.1 / cells as f64;
    let mut case = CaseConfig::desk(16).unwrap();
    case.grid = GridSpec::square(0.1, cells).unwrap();
    case.boundary = sink(cells);
    case.components = (0..sources)
        .map(|k| thermoforge::data::ComponentTemplate {
            width_m: h * (1 + k % 3) as f64,
            height_m: h * (1 + (k + 1) % 3) as f64,
            intensity_w_m2: 5000.0 * (k + 1) as f64,
        })
        .collect();
    let layout = sample_layout(&case, &mut sample_stream(seed, 0)).unwrap();
    case.problem(layout).unwrap()
}

fn random_field(grid: GridSpec, seed: u64) -> ScalarField {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ScalarField::from_fn(grid, |_, _| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        290.0 + (s >> 11) as f64 / (1u64 << 53) as f64 * 20.0
    })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn rasterized_power_matches_source_power(cells in 8usize..40, seed in any::<u64>(), n in 1usize..4) {
        let p = random_problem(cells, seed, n);
        let phi = p.intensity().unwrap();
        let h = p.grid.step_m();
        let node_power: f64 = phi.values().iter().sum::<f64>() * h * h;
        let exact: f64 = p.layout.sources.iter().map(|s| s.intensity_w_m2 * s.area_m2()).sum();
        let bound: f64 = p.layout.sources.iter()
            .map(|s| s.intensity_w_m2 * s.area_m2() * 2.0 * h * s.perimeter_m() / s.area_m2())
            .sum();
        prop_assert!((node_power - exact).abs() <= bound);
        prop_assert_eq!(phi.shape(), (cells + 1, cells + 1));
    }

    #[test]
    fn rasterization_ignores_source_order(cells in 8usize..40, seed in any::<u64>()) {
        let p = random_problem(cells, seed, 3);
        let mut reversed = p.layout.sources.clone();
        reversed.reverse();
        let a = rasterize_layout(&p.layout, &p.grid).unwrap();
        let b = rasterize_layout(&LayoutSpec::new("r", reversed), &p.grid).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dirichlet_overwrite_and_ghost_ring(cells in 4usize..30, seed in any::<u64>()) {
        let grid = GridSpec::square(0.1, cells).unwrap();
        let mask = build_mask(&grid, &sink(cells)).unwrap();
        let t = apply_dirichlet(&random_field(grid, seed), &mask, 298.0).unwrap();
        for (k, v) in t.values().iter().enumerate() {
            if mask.is_dirichlet(k) {
                prop_assert_eq!(v.to_bits(), 298.0f64.to_bits());
            }
        }
        let pad = ghost_pad_neumann(&t, &mask).unwrap();
        prop_assert_eq!(pad.crop(), t.values().to_vec());
        let n = cells as isize;
        for i in 0..=n {
            prop_assert_eq!(pad.at(i, 1) - pad.at(i, -1), 0.0);
            prop_assert_eq!(pad.at(i, n + 1) - pad.at(i, n - 1), 0.0);
            prop_assert_eq!(pad.at(1, i) - pad.at(-1, i), 0.0);
            prop_assert_eq!(pad.at(n + 1, i) - pad.at(n - 1, i), 0.0);
        }
    }

    #[test]
    fn residual_is_four_times_the_jacobi_increment(cells in 4usize..30, seed in any::<u64>()) {
        let p = random_problem(cells.max(6), seed, 2);
        let mask = build_mask(&p.grid, &p.boundary).unwrap();
        let phi = p.intensity().unwrap();
        let t = random_field(p.grid, seed ^ 1);
        let r = stencil_residual(&t, &phi, &p, &mask).unwrap();
        let j = jacobi_step(&t, &phi, &p, &mask).unwrap();
        for k in 0..t.values().len() {
            if mask.is_dirichlet(k) {
                continue;
            }
            let want = 4.0 * (t.values()[k] - j.values()[k]);
            let got = r.values()[k];
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(t.values()[k].abs()));
        }
    }

    #[test]
    fn jacobi_max_residual_never_increases(cells in 6usize..20, seed in any::<u64>()) {
        let p = random_problem(cells, seed, 2);
        let mut history = Vec::new();
        let cfg = SolverConfig::jacobi(1e-6, 2000);
        solve_fdm_observed(&p, &cfg, |_, r| history.push(r)).unwrap();
        for w in history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn discrete_maximum_principle(cells in 6usize..24, seed in any::<u64>(), n in 1usize..4) {
        let p = random_problem(cells, seed, n);
        let mask = build_mask(&p.grid, &p.boundary).unwrap();
        let t = dense_solve_oracle(&p).unwrap();
        prop_assert!((t.min() - 298.0).abs() < 1e-9);
        let (r, c) = t.argmax();
        prop_assert!(!mask.is_dirichlet(r * (cells + 1) + c));
    }

    #[test]
    fn solution_rise_is_linear_in_the_sources(cells in 6usize..24, seed in any::<u64>()) {
        let p = random_problem(cells, seed, 2);
        let single = |s: &HeatSource| {
            let q = ConductionProblem::new(p.grid, 1.0, LayoutSpec::new("s", vec![*s]), p.boundary).unwrap();
            dense_solve_oracle(&q).unwrap()
        };
        let both = dense_solve_oracle(&p).unwrap();
        let (a, b) = (single(&p.layout.sources[0]), single(&p.layout.sources[1]));
        for k in 0..both.values().len() {
            let sum = (a.values()[k] - 298.0) + (b.values()[k] - 298.0);
            prop_assert!((both.values()[k] - 298.0 - sum).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_vanishes_at_the_discrete_solution(cells in 6usize..24, seed in any::<u64>()) {
        let p = random_problem(cells, seed, 2);
        let mask = build_mask(&p.grid, &p.boundary).unwrap();
        let t = dense_solve_oracle(&p).unwrap();
        let phi = p.intensity().unwrap();
        for v in [LossVariant::Pohem, LossVariant::L1, LossVariant::Mse] {
            prop_assert!(physics_loss(&t, &phi, &p, &mask, &LossConfig::plain(v)).unwrap().total <= 1e-9);
        }
    }

    #[test]
    fn pohem_weights_stay_in_bounds(cells in 4usize..20, seed in any::<u64>(), eta1 in 0.0f64..3.0, eta2 in 0.0f64..20.0) {
        let grid = GridSpec::square(0.1, cells).unwrap();
        let mask = build_mask(&grid, &sink(cells)).unwrap();
        let delta = random_field(grid, seed).map(|v| v - 290.0);
        let cfg = LossConfig { eta1, eta2, ..LossConfig::default() };
        let w = pohem_weights(&delta, &mask, &cfg).unwrap();
        let (lo, hi) = (eta1.min(1.0), (eta1 + eta2).max(1.0));
        for (k, &x) in w.values().iter().enumerate() {
            if !mask.is_dirichlet(k) {
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn unit_weights_reduce_pohem_to_l1(cells in 6usize..20, seed in any::<u64>()) {
        let p = random_problem(cells, seed, 2);
        let mask = build_mask(&p.grid, &p.boundary).unwrap();
        let phi = p.intensity().unwrap();
        let t = apply_dirichlet(&random_field(p.grid, seed), &mask, 298.0).unwrap();
        let pohem = LossConfig { eta1: 1.0, eta2: 0.0, ..LossConfig::default() };
        let a = physics_loss(&t, &phi, &p, &mask, &pohem).unwrap().total;
        let b = physics_loss(&t, &phi, &p, &mask, &LossConfig::plain(LossVariant::L1)).unwrap().total;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn network_preserves_shape_and_sink(cells in 4usize..24, seed in any::<u64>()) {
        let grid = GridSpec::square(0.1, cells).unwrap();
        let mask = build_mask(&grid, &sink(cells)).unwrap();
        let net = UNet::new(
            NetworkConfig { base_width: 2, depth: 2, groups: 1, ..NetworkConfig::default() },
            PredictionHead::default(),
        ).unwrap();
        let params: ParameterSet<f32> = net.init_parameters(seed);
        let input = random_field(grid, seed).map(|v| (v - 290.0) / 20.0);
        let a = net.forward(&params, &input, &mask, 298.0).unwrap();
        let b = net.forward(&params, &input, &mask, 298.0).unwrap();
        prop_assert_eq!(a.shape(), input.shape());
        prop_assert_eq!(&a, &b);
        for (k, v) in a.values().iter().enumerate() {
            if mask.is_dirichlet(k) {
                prop_assert_eq!(v.to_bits(), 298.0f64.to_bits());
            }
        }
    }

    #[test]
    fn metrics_symmetry_order_and_shift(
        pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, any::<bool>()), 1..60),
        shift in -100.0f64..100.0,
    ) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let reference: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let mut mask: Vec<bool> = pairs.iter().map(|p| p.2).collect();
        mask[0] = true;
        let ab = evaluate_values(&pred, &reference, &mask).unwrap();
        let ba = evaluate_values(&reference, &pred, &mask).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab.mae_k <= ab.maxae_k && ab.cmae_k <= ab.maxae_k);
        prop_assert!(ab.mae_k >= 0.0 && ab.mtae_k >= 0.0);
        let sp: Vec<f64> = pred.iter().map(|v| v + shift).collect();
        let sr: Vec<f64> = reference.iter().map(|v| v + shift).collect();
        let s = evaluate_values(&sp, &sr, &mask).unwrap();
        for (x, y) in [(ab.mae_k, s.mae_k), (ab.cmae_k, s.cmae_k), (ab.maxae_k, s.maxae_k), (ab.mtae_k, s.mtae_k)] {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + shift.abs()));
        }
    }

    #[test]
    fn layouts_round_trip_through_json(seed in any::<u64>(), i in 0usize..1000) {
        let case = CaseConfig::case2(200).unwrap();
        let layout = sample_layout(&case, &mut sample_stream(seed, i)).unwrap();
        let text = layout.to_json();
        let back = LayoutSpec::from_json(&text).unwrap();
        prop_assert_eq!(&back, &layout);
        prop_assert_eq!(back.to_json(), text);
    }
}

#[test]
fn case2_samples_are_distinct() {
    let case = CaseConfig::case2(200).unwrap();
    let mut seen = std::collections::HashSet::new();
    for i in 0..1000 {
        assert!(seen.insert(sample_layout(&case, &mut sample_stream(17, i)).unwrap().to_json()), "duplicate at {i}");
    }
}

#[test]
fn all_neumann_mask_is_accepted_by_padding() {
    let grid = GridSpec::square(0.1, 8).unwrap();
    let pad = ghost_pad_neumann(&ScalarField::constant(grid, 1.0), &NodeMask::all_neumann(grid)).unwrap();
    assert!(pad.values.iter().all(|&v| v == 1.0));
}
