mod common;

use std::path::Path;

use gridsync::linearize::laplacian_from;
use gridsync::modal::{default_scenarios, eigen_analysis, loci_csv, sensitivity_sweep, Verdict};
use gridsync::model::{case_from_json, case_to_json, validate_case};
use gridsync::oracles::{
    fd_laplacian, fd_powerflow_jacobian_oracle, single_machine_step, two_machine_spectrum, verify_study,
};
use gridsync::reduce::{eliminate, fold_constant_elements, kron_reduce, kron_reduce_in_order};
use gridsync::simulate::{
    compute_metrics, default_perturbation, simulate_many, simulate_response, Perturbation, PerturbationKind,
};
use gridsync::study::{run_study, StudyOptions};
use gridsync::{BranchSpec, BusKind, BusSpec, Complex64, Error, GeneratorSpec, NetworkCase, Tech};
use nalgebra::DMatrix;

use common::{load, study, BENCHMARKS};

fn row_sum_norm(m: &DMatrix<Complex64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

#[test]
fn every_benchmark_passes_its_oracles_and_is_stable() {
    for name in BENCHMARKS {
        let s = study(&load(name));
        let modal = eigen_analysis(&s.model).unwrap();
        assert_eq!(modal.verdict, Verdict::Stable, "{name}");
        for r in verify_study(&s, &modal).unwrap() {
            assert!(r.pass, "{name}: {} failed with {:?}", r.oracle, r);
        }
    }
}

#[test]
fn spectrum_count_conjugates_and_trace() {
    for name in BENCHMARKS {
        let s = study(&load(name));
        let eig = eigen_analysis(&s.model).unwrap().eigenvalues;
        assert_eq!(eig.len(), 2 * s.model.n() - 1, "{name}");
        for z in &eig {
            if z.im != 0.0 {
                assert!(eig.contains(&z.conj()), "{name}: {z} has no exact conjugate");
            }
        }
        let sum: f64 = eig.iter().map(|z| z.re).sum();
        let trace = s.model.a.trace();
        assert!((sum - trace).abs() <= 1e-9 * trace.abs().max(1.0), "{name}: {sum} vs {trace}");
    }
}

#[test]
fn benchmark_sizes_are_pinned() {
    // (buses, dynamic machines, power-flow iterations)
    let expected = [
        ("case9", 9, 3, 4),
        ("case30", 30, 6, 3),
        ("case39", 39, 10, 4),
        ("case57", 57, 7, 4),
        ("case118", 118, 54, 4),
        ("case145", 145, 50, 5),
    ];
    for (name, buses, n, iters) in expected {
        let s = study(&load(name));
        assert_eq!(s.case.buses.len(), buses, "{name}");
        assert_eq!(s.model.n(), n, "{name}");
        assert_eq!(s.reduced.y_red.nrows(), n, "{name}");
        assert!(s.solution.iterations <= iters, "{name}: {} iterations", s.solution.iterations);
    }
}

#[test]
fn kron_order_independence_and_symmetry() {
    for name in ["case9", "case39", "case145"] {
        let case = load(name);
        let s = study(&case);
        let folded = fold_constant_elements(&case, &s.admittance, &s.solution).unwrap();
        let boundary = &s.reduced.boundary_buses;
        let ascending = kron_reduce(&folded, boundary).unwrap();
        let mut order: Vec<u32> = folded.bus_ids.iter().copied().filter(|b| !boundary.contains(b)).collect();
        order.sort_unstable_by(|a, b| b.cmp(a));
        let descending = kron_reduce_in_order(&folded, boundary, &order).unwrap();
        let diff = row_sum_norm(&(&ascending.y_red - &descending.y_red));
        assert!(diff <= 1e-10 * row_sum_norm(&ascending.y_red).max(1.0), "{name}: {diff}");
        let has_shift = case.branches.iter().any(|b| b.phase_shift != 0.0);
        if !has_shift {
            let asym = row_sum_norm(&(&ascending.y_red - ascending.y_red.transpose()));
            assert!(asym <= 1e-12 * row_sum_norm(&ascending.y_red).max(1.0), "{name}: asymmetry {asym}");
        }
    }
}

#[test]
fn eliminating_a_node_without_boundary_branches_keeps_boundary_entries() {
    // Buses 1, 2 are boundary; 3 connects only to 4, and 4 to 1 and 2.
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let y = DMatrix::from_row_slice(
        4,
        4,
        &[
            c(2.0, -10.0), c(-1.0, 5.0), c(0.0, 0.0), c(-1.0, 5.0),
            c(-1.0, 5.0), c(2.0, -10.0), c(0.0, 0.0), c(-1.0, 5.0),
            c(0.0, 0.0), c(0.0, 0.0), c(1.0, -4.0), c(-1.0, 4.0),
            c(-1.0, 5.0), c(-1.0, 5.0), c(-1.0, 4.0), c(3.0, -14.0),
        ],
    );
    let mut ids = vec![1, 2, 3, 4];
    let mut m = y.clone();
    eliminate(&mut ids, &mut m, 3).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert_eq!(m[(i, j)], y[(i, j)]);
        }
    }
}

#[test]
fn laplacian_rows_sum_to_zero_and_ignore_a_common_angle_shift() {
    for name in BENCHMARKS {
        let s = study(&load(name));
        let h = &s.laplacian.h;
        let scale = h.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        for r in h.row_iter() {
            assert!(r.sum().abs() <= 1e-12 * scale, "{name}");
        }
        let sol = s.reduced.equilibrium.as_ref().unwrap();
        let idx: Vec<usize> = s.reduced.boundary_buses.iter().map(|&b| sol.index_of(b).unwrap()).collect();
        let vm: Vec<f64> = idx.iter().map(|&k| sol.vm[k]).collect();
        let va: Vec<f64> = idx.iter().map(|&k| sol.va[k] + 0.37).collect();
        let shifted = laplacian_from(&s.reduced.y_red, &vm, &va);
        let diff = (&shifted - h).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        assert!(diff <= 1e-10 * scale, "{name}: {diff}");
    }
}

#[test]
fn finite_difference_laplacian_converges_at_second_order() {
    let s = study(&load("case39"));
    let err = |step: f64| {
        let fd = fd_laplacian(&s.reduced, step).unwrap();
        (&fd - &s.laplacian.h).iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    };
    let (coarse, fine) = (err(2e-3), err(1e-3));
    let ratio = coarse / fine;
    assert!((3.5..4.5).contains(&ratio), "central differences should shrink 4x per halving, got {ratio}");
}

#[test]
fn powerflow_jacobian_matches_finite_differences_on_every_benchmark() {
    for name in BENCHMARKS {
        let s = study(&load(name));
        let r = fd_powerflow_jacobian_oracle(&s.case, &s.admittance, &s.solution, 1e-6);
        assert!(r.max_rel_error <= 1e-6, "{name}: {}", r.max_rel_error);
    }
}

#[test]
fn injected_power_equals_load_plus_branch_and_shunt_losses() {
    for name in BENCHMARKS {
        let s = study(&load(name));
        let case = &s.case;
        let v = |bus: u32| s.solution.voltage(case.bus_index(bus).unwrap());
        let mut losses = Complex64::new(0.0, 0.0);
        for br in &case.branches {
            let (vf, vt) = (v(br.from_bus), v(br.to_bus));
            let ys = 1.0 / br.series_impedance;
            let a = Complex64::from_polar(br.tap_ratio, br.phase_shift);
            // Series current through the impedance, seen past the ideal transformer.
            let i_series = (vf / a - vt) * ys;
            losses += i_series.norm_sqr() * br.series_impedance;
            losses -= Complex64::new(0.0, br.shunt_susceptance / 2.0 * ((vf / a).norm_sqr() + vt.norm_sqr()));
        }
        for (k, b) in case.buses.iter().enumerate() {
            let vm2 = s.solution.vm[k].powi(2);
            losses += Complex64::new(b.shunt_g * vm2, -b.shunt_b * vm2);
        }
        let generation = Complex64::new(s.solution.generator_p.iter().sum(), s.solution.generator_q.iter().sum());
        let load = Complex64::new(case.loads.iter().map(|l| l.p).sum(), case.loads.iter().map(|l| l.q).sum());
        let gap = (generation - load - losses).norm();
        assert!(gap <= 1e-8, "{name}: power balance gap {gap:e}");
    }
}

#[test]
fn json_round_trip_and_pure_validation() {
    for name in BENCHMARKS {
        let case = load(name);
        let text = case_to_json(&case);
        let back = case_from_json(&text, Path::new("roundtrip.json")).unwrap();
        assert_eq!(back, case, "{name}");
        assert_eq!(validate_case(&case), validate_case(&case));
    }
}

fn two_bus(x: f64, m: f64, d: f64) -> NetworkCase {
    let bus = |id, kind| BusSpec { id, kind, voltage_setpoint: 1.0, angle_setpoint: 0.0, shunt_g: 0.0, shunt_b: 0.0 };
    let gen = |id, bus| GeneratorSpec {
        id,
        bus,
        tech: Tech::Sg,
        inertia_m: m,
        damping_d: d,
        rating_mva: 100.0,
        dispatch_p: 0.0,
        reactive_q: None,
    };
    NetworkCase {
        base_mva: 100.0,
        base_freq: 60.0,
        buses: vec![bus(1, BusKind::Slack), bus(2, BusKind::Pv)],
        branches: vec![BranchSpec::line(1, 2, Complex64::new(0.0, x), 0.0)],
        generators: vec![gen(1, 1), gen(2, 2)],
        loads: vec![],
    }
}

#[test]
fn undamped_identical_pair_matches_the_analytic_spectrum() {
    let (x, m) = (0.5, 0.05);
    let s = study(&two_bus(x, m, 0.0));
    for i in 0..s.model.n() - 1 {
        assert_eq!(s.model.a[(s.model.n() - 1 + i, s.model.n() - 1 + i)], 0.0);
    }
    let eig = eigen_analysis(&s.model).unwrap().eigenvalues;
    let expected = two_machine_spectrum(1.0 / x, m);
    for (z, w) in eig.iter().zip(expected.iter()) {
        assert!((z - w).norm() <= 1e-9 * w.norm().max(1.0), "{z} vs {w}");
        assert!(z.re.abs() <= 1e-12);
    }
}

#[test]
fn antiphase_impulses_leave_the_center_of_inertia_flat() {
    let s = study(&two_bus(0.5, 0.05, 0.01));
    let perts = [Perturbation::speed_impulse(1, 0.2), Perturbation::speed_impulse(2, -0.2)];
    let trace = simulate_many(&s.model, &perts, 10.0, 0.005, f64::INFINITY).unwrap();
    for f in trace.coi_frequency() {
        assert!((f - 60.0).abs() <= 1e-12);
    }
    let m = compute_metrics(&trace, 60.0).unwrap();
    assert_eq!(m.nadir_p, 60.0);
    assert!(m.t_r.is_none() && m.t_s.is_none());
    assert!(m.per_gen_nadir.iter().any(|&f| f < 60.0));
}

#[test]
fn center_of_inertia_follows_the_aggregate_first_order_law_under_equal_damping() {
    // On a lossless network the Laplacian is symmetric, so with D_i/M_i equal for
    // every machine Σ M_i Δω_i obeys M_tot ω̇ = ΔP − D_tot ω exactly.
    let s = study(&two_bus(0.4, 0.06, 0.03));
    let model = s.model.with_machines(vec![
        gridsync::linearize::DynamicMachine { m: 0.06, d: 0.03, ..s.model.machines[0].clone() },
        gridsync::linearize::DynamicMachine { m: 0.02, d: 0.01, ..s.model.machines[1].clone() },
    ])
    .unwrap();
    let pert = Perturbation::power_step(2, -0.05);
    let trace = simulate_response(&model, &pert, 20.0, 0.004).unwrap();
    let m_tot: f64 = model.machines.iter().map(|m| m.m).sum();
    let d_tot: f64 = model.machines.iter().map(|m| m.d).sum();
    let coi = trace.coi_frequency();
    for (k, &t) in trace.times.iter().enumerate() {
        let w = single_machine_step(m_tot, d_tot, pert.magnitude, t);
        let expected = 60.0 + w / (2.0 * std::f64::consts::PI);
        assert!((coi[k] - expected).abs() <= 1e-12, "t={t}: {} vs {expected}", coi[k]);
    }
}

#[test]
fn superposition_and_step_halving() {
    let s = study(&load("case9"));
    let a = Perturbation::power_step(2, -0.03);
    let b = Perturbation { kind: PerturbationKind::SpeedImpulse, target_gen: 3, magnitude: 0.02, start_time: 1.37 };
    let both = simulate_many(&s.model, &[a, b], 10.0, 0.004, f64::INFINITY).unwrap();
    let ta = simulate_response(&s.model, &a, 10.0, 0.004).unwrap();
    let tb = simulate_response(&s.model, &b, 10.0, 0.004).unwrap();
    for i in 0..both.speeds.len() {
        for k in 0..both.len() {
            let sum = ta.speeds[i][k] + tb.speeds[i][k];
            assert!((both.speeds[i][k] - sum).abs() <= 1e-9);
        }
    }
    let half = simulate_many(&s.model, &[a, b], 10.0, 0.002, f64::INFINITY).unwrap();
    for i in 0..both.speeds.len() {
        for k in 0..both.len() {
            assert!((both.speeds[i][k] - half.speeds[i][2 * k]).abs() <= 1e-8);
        }
    }
}

#[test]
fn impulse_response_decays_within_the_modal_envelope() {
    let s = study(&load("case39"));
    let modal = eigen_analysis(&s.model).unwrap();
    let target = s.case.dynamic_generators().next().unwrap().id;
    let pert = Perturbation::speed_impulse(target, 0.01);
    let trace = simulate_response(&s.model, &pert, 30.0, 0.005).unwrap();
    let end = trace.len() - 1;
    let envelope = 100.0 * pert.magnitude * (modal.max_real * trace.times[end]).exp();
    for w in &trace.speeds {
        assert!(w[end].abs() <= envelope, "{} > {envelope}", w[end]);
    }
}

#[test]
fn nine_bus_reference_response() {
    // Regression values for the default disturbance; the COI law above is the oracle.
    let s = study(&load("case9"));
    let pert = default_perturbation(&s.case, &s.model).unwrap();
    assert_eq!(pert.target_gen, 2);
    let trace = gridsync::simulate::simulate_with_options(&s.model, &[pert], &Default::default()).unwrap();
    assert!((trace.times.last().unwrap() - 30.0).abs() < 1e-9);
    let m = compute_metrics(&trace, 60.0).unwrap();
    assert!((m.nadir_p - 59.92939).abs() < 5e-5, "{}", m.nadir_p);
    assert!((m.t_r.unwrap() - 3.387).abs() < 5e-3);
}

#[test]
fn sensitivity_scenarios_produce_a_full_loci_table() {
    let s = study(&load("case9"));
    let scenarios = default_scenarios();
    let entries = sensitivity_sweep(&s.model, &scenarios).unwrap();
    let csv = loci_csv(&entries);
    assert!(csv.starts_with("scenario,eig_index,real,imag,class,zeta,omega_n\n"));
    assert_eq!(csv.lines().count(), 1 + scenarios.len() * s.model.dim());
}

#[test]
fn all_grid_following_case_is_infeasible() {
    let case = load("case9").with_preset(gridsync::model::TechPreset::AllGfl);
    let err = run_study(&case, StudyOptions::default()).unwrap_err();
    assert!(matches!(err, Error::NoDynamicGenerator));
}
