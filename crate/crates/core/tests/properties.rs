mod common;

use std::path::Path;
use std::sync::OnceLock;

use gridsync::linearize::{DynamicMachine, StateSpaceModel};
use gridsync::modal::eigen_analysis;
use gridsync::model::{case_from_json, case_to_json, damping_d_from_machine, inertia_m_from_h, validate_case};
use gridsync::powerflow::{build_admittance, injections_polar, jacobian, AdmittanceMatrix};
use gridsync::reduce::{kron_reduce, kron_reduce_in_order};
use gridsync::simulate::{simulate_many, Perturbation, PerturbationKind};
use gridsync::study::Study;
use gridsync::sweep::{aggregate, sample_scenario, SweepConfig};
use gridsync::{BusKind, Complex64, GeneratorSpec, NetworkCase, Tech};
use nalgebra::DMatrix;
use proptest::prelude::*;

use common::{load, study};

fn nine_bus() -> &'static (NetworkCase, Study) {
    static CELL: OnceLock<(NetworkCase, Study)> = OnceLock::new();
    CELL.get_or_init(|| {
        let case = load("case9");
        let s = study(&case);
        (case, s)
    })
}

fn row_sum_norm(m: &DMatrix<Complex64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Ring network with extra chords and a shunt at every bus, so every interior
/// block is nonsingular.
fn network(n: usize, lines: &[(usize, usize, f64, f64)], shunt: f64) -> AdmittanceMatrix {
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let mut add = |i: usize, j: usize, r: f64, x: f64| {
        let ys = 1.0 / Complex64::new(r, x);
        y[(i, i)] += ys;
        y[(j, j)] += ys;
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
    };
    for k in 0..n {
        add(k, (k + 1) % n, 0.01, 0.1 + 0.01 * k as f64);
    }
    for &(i, j, r, x) in lines {
        let (i, j) = (i % n, j % n);
        if i != j {
            add(i, j, r, x);
        }
    }
    for k in 0..n {
        y[(k, k)] += Complex64::new(shunt, -shunt);
    }
    AdmittanceMatrix { bus_ids: (1..=n as u32).collect(), y }
}

fn lines() -> impl Strategy<Value = Vec<(usize, usize, f64, f64)>> {
    prop::collection::vec((0usize..16, 0usize..16, 0.001f64..0.05, 0.05f64..0.5), 0..8)
}

/// Symmetric weighted Laplacian on a complete graph with machines in state order.
fn random_model(weights: &[f64], m: &[f64], d: &[f64]) -> StateSpaceModel {
    let n = m.len();
    let mut h = DMatrix::zeros(n, n);
    let mut w = weights.iter().cycle();
    for i in 0..n {
        for j in i + 1..n {
            let x = *w.next().unwrap();
            h[(i, j)] = -x;
            h[(j, i)] = -x;
            h[(i, i)] += x;
            h[(j, j)] += x;
        }
    }
    let machines = (0..n)
        .map(|i| DynamicMachine { bus: i as u32 + 1, generator_ids: vec![i as u32 + 1], m: m[i], d: d[i] })
        .collect();
    StateSpaceModel::assemble(h, machines, 60.0).unwrap()
}

fn machine_params() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..7).prop_flat_map(|n| {
        (
            prop::collection::vec(0.5f64..5.0, n * (n - 1) / 2),
            prop::collection::vec(0.02f64..0.2, n),
            prop::collection::vec(0.0f64..0.05, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn kron_reduction_is_order_independent_and_symmetric(
        n in 5usize..10,
        extra in lines(),
        k in 2usize..4,
        shuffle_seed in any::<u64>(),
    ) {
        let y = network(n, &extra, 0.05);
        let boundary: Vec<u32> = (1..=k as u32).collect();
        let mut order: Vec<u32> = ((k as u32 + 1)..=n as u32).collect();
        // Deterministic Fisher-Yates from the drawn seed.
        let mut state = shuffle_seed | 1;
        for i in (1..order.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            order.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let a = kron_reduce(&y, &boundary).unwrap();
        let b = kron_reduce_in_order(&y, &boundary, &order).unwrap();
        let scale = row_sum_norm(&a.y_red).max(1.0);
        prop_assert!(row_sum_norm(&(&a.y_red - &b.y_red)) <= 1e-10 * scale);
        prop_assert!(row_sum_norm(&(&a.y_red - a.y_red.transpose())) <= 1e-12 * scale);
    }

    #[test]
    fn powerflow_jacobian_matches_finite_differences(
        vm in prop::collection::vec(0.9f64..1.1, 9),
        va in prop::collection::vec(-0.3f64..0.3, 9),
    ) {
        let (case, _) = nine_bus();
        let y = build_admittance(case).unwrap();
        let angle: Vec<usize> = (0..9).filter(|&k| case.buses[k].kind != BusKind::Slack).collect();
        let mag: Vec<usize> = (0..9).filter(|&k| case.buses[k].kind == BusKind::Pq).collect();
        let analytic = jacobian(&y, &vm, &va, &angle, &mag);
        let f = |vm: &[f64], va: &[f64]| {
            let (p, q) = injections_polar(&y, vm, va);
            angle.iter().map(|&k| p[k]).chain(mag.iter().map(|&k| q[k])).collect::<Vec<f64>>()
        };
        let h = 1e-6;
        let dim = angle.len() + mag.len();
        let mut worst = 0.0_f64;
        let mut scale = 0.0_f64;
        for c in 0..dim {
            let (mut vp, mut ap, mut vmn, mut amn) = (vm.clone(), va.clone(), vm.clone(), va.clone());
            if c < angle.len() {
                ap[angle[c]] += h;
                amn[angle[c]] -= h;
            } else {
                vp[mag[c - angle.len()]] += h;
                vmn[mag[c - angle.len()]] -= h;
            }
            let (fp, fm) = (f(&vp, &ap), f(&vmn, &amn));
            for r in 0..dim {
                let fd = (fp[r] - fm[r]) / (2.0 * h);
                worst = worst.max((fd - analytic[(r, c)]).abs());
                scale = scale.max(fd.abs());
            }
        }
        prop_assert!(worst <= 1e-6 * scale, "relative error {}", worst / scale);
    }

    #[test]
    fn spectrum_has_2n_minus_1_closed_under_conjugation_and_matches_the_trace(
        (w, m, d) in machine_params()
    ) {
        let model = random_model(&w, &m, &d);
        let eig = eigen_analysis(&model).unwrap().eigenvalues;
        prop_assert_eq!(eig.len(), 2 * m.len() - 1);
        for z in &eig {
            if z.im != 0.0 {
                prop_assert!(eig.contains(&z.conj()));
            }
        }
        let sum: f64 = eig.iter().map(|z| z.re).sum();
        prop_assert!((sum - model.a.trace()).abs() <= 1e-9 * model.a.trace().abs().max(1.0));
    }

    #[test]
    fn more_damping_never_raises_the_slowest_decay_in_the_underdamped_regime(
        (w, m, d) in machine_params(),
        c in 1.0f64..3.0,
    ) {
        let before = random_model(&w, &m, &d);
        let scaled: Vec<f64> = d.iter().map(|x| x * c).collect();
        let after = random_model(&w, &m, &scaled);
        let (ra, rb) = (eigen_analysis(&before).unwrap(), eigen_analysis(&after).unwrap());
        // Underdamped: every mode except the single coupling mode oscillates.
        let real_count = |r: &gridsync::modal::ModalResult| r.eigenvalues.iter().filter(|z| z.im == 0.0).count();
        prop_assume!(real_count(&ra) == 1 && real_count(&rb) == 1);
        prop_assert!(rb.max_real <= ra.max_real + 1e-12, "{} -> {}", ra.max_real, rb.max_real);
    }

    #[test]
    fn responses_superpose(
        mags in prop::collection::vec(-0.1f64..0.1, 2),
        starts in prop::collection::vec(0.0f64..3.0, 2),
        targets in prop::collection::vec(1u32..4, 2),
        impulse in any::<bool>(),
    ) {
        let (_, s) = nine_bus();
        let kind = if impulse { PerturbationKind::SpeedImpulse } else { PerturbationKind::PowerStep };
        let p = Perturbation { kind: PerturbationKind::PowerStep, target_gen: targets[0], magnitude: mags[0], start_time: starts[0] };
        let q = Perturbation { kind, target_gen: targets[1], magnitude: mags[1], start_time: starts[1] };
        let run = |ps: &[Perturbation]| simulate_many(&s.model, ps, 5.0, 0.004, 0.1).unwrap();
        let (both, a, b) = (run(&[p, q]), run(&[p]), run(&[q]));
        for i in 0..both.speeds.len() {
            for k in 0..both.len() {
                prop_assert!((both.speeds[i][k] - a.speeds[i][k] - b.speeds[i][k]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn scenario_draws_are_deterministic_and_in_range(
        seed in any::<u64>(),
        id in 0u64..10_000,
        lo in 0.5f64..4.0,
        span in 0.0f64..6.0,
    ) {
        let (case, _) = nine_bus();
        let cfg = SweepConfig { seed, inertia_range: (lo, lo + span), ..SweepConfig::default() };
        let a = sample_scenario(case, &cfg, id);
        let b = sample_scenario(case, &cfg, id);
        prop_assert_eq!(&a, &b);
        for g in &a.case.generators {
            let h = g.inertia_h(a.case.base_mva, a.case.base_freq);
            prop_assert!(h >= lo * (1.0 - 1e-12) && h <= (lo + span) * (1.0 + 1e-12), "{h}");
        }
    }

    #[test]
    fn aggregates_ignore_a_common_rating_scale_and_generator_order(
        gens in prop::collection::vec((0.5f64..10.0, 0.0f64..0.1, 1.0f64..500.0), 1..8),
        c in 0.1f64..10.0,
    ) {
        let build = |scale: f64| -> Vec<GeneratorSpec> {
            gens.iter().enumerate().map(|(k, &(h, d, s))| GeneratorSpec {
                id: k as u32 + 1,
                bus: 1,
                tech: Tech::Sg,
                inertia_m: inertia_m_from_h(h, s * scale, 100.0, 60.0),
                damping_d: damping_d_from_machine(d, s * scale, 100.0),
                rating_mva: s * scale,
                dispatch_p: 0.0,
                reactive_q: None,
            }).collect()
        };
        let (h1, d1) = aggregate(&build(1.0), 100.0, 60.0).unwrap();
        let (h2, d2) = aggregate(&build(c), 100.0, 60.0).unwrap();
        let mut reversed = build(1.0);
        reversed.reverse();
        let (h3, d3) = aggregate(&reversed, 100.0, 60.0).unwrap();
        for (x, y) in [(h1, h2), (d1, d2), (h1, h3), (d1, d3)] {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-12));
        }
    }

    #[test]
    fn case_json_round_trip_is_identity(scale in 0.5f64..1.5) {
        let (case, _) = nine_bus();
        let scaled = case.with_load_scale(scale);
        let back = case_from_json(&case_to_json(&scaled), Path::new("p.json")).unwrap();
        prop_assert_eq!(&back, &scaled);
        prop_assert_eq!(validate_case(&back), validate_case(&scaled));
    }
}
