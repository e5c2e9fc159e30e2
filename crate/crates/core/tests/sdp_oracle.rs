//! The interior-point SDP solver against an independent dual oracle on small
//! random instances. See `support/oracle.rs` for how the oracle works.

#[path = "support/oracle.rs"]
mod oracle;

use isapt::linalg::{hermitian_eigen, outer, trace_product};
use isapt::sdp::{self, HermitianLinearSdp, SdpStatus};
use isapt::{CMatrix, Complex};
use oracle::*;
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_dual_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    for k in 0..200 {
        let inst = random_instance(&mut rng);
        let p = &inst.problem;
        let sol = sdp::solve(p, None).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal, "instance {k}");
        let oracle = dual_oracle(p);
        let scale = oracle.abs().max(1.0);
        assert!(
            (sol.primal_objective - oracle).abs() <= 1e-6 * scale,
            "instance {k}: solver {} oracle {oracle}",
            sol.primal_objective
        );
        // the returned matrix is feasible and attains the reported value
        assert!(violation(p, &sol.v_matrix) <= 1e-8, "instance {k}");
        assert!(hermitian_eigen(&sol.v_matrix).values.last().unwrap() >= &-1e-9);
        assert!((primal_value(p, &sol.v_matrix) - sol.primal_objective).abs() <= 1e-8 * scale);
        // weak duality, up to the solver tolerance
        assert!(sol.primal_objective <= sol.dual_objective + 1e-8 * scale);
        assert!(sol.kkt_residuals.max() <= 1e-8, "instance {k}: {:?}", sol.kkt_residuals);
        // no feasible point beats it
        assert!(primal_value(p, &inst.v0) <= sol.primal_objective + 1e-8 * scale);
        for _ in 0..50 {
            let x = random_vector(&mut rng, p.dim);
            let v = outer(&x);
            let over = p.upper.iter().map(|c| trace_product(&c.matrix, &v) / c.bound).fold(0.0, f64::max);
            let v = v / Complex::new(over, 0.0);
            if violation(p, &v) <= 0.0 {
                assert!(primal_value(p, &v) <= sol.primal_objective + 1e-8 * scale, "instance {k}");
            }
        }
    }
}

#[test]
fn optimum_is_rank_one_with_at_most_three_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        let sol = sdp::solve(&inst.problem, None).unwrap();
        assert!(sdp::rank_one_ratio(&sol.v_matrix) < 1e-6 || inst.problem.dim == 1);
    }
}

/// The echo floor `Tr{u u^H V} >= eps1` above what the trace cap allows.
#[test]
fn unreachable_echo_floor_is_infeasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let p = unreachable_echo_instance(&mut rng);
        let n = p.dim;
        let sol = sdp::solve(&p, None).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        let cert = sol.certificate.expect("infeasible solves carry a certificate");
        assert!(cert.lower.iter().chain(&cert.upper).all(|y| *y >= -1e-9));
        let combo = p.upper.iter().zip(&cert.upper).map(|(c, y)| y * c.bound).sum::<f64>()
            - p.lower.iter().zip(&cert.lower).map(|(c, y)| y * c.bound).sum::<f64>();
        assert!((combo + 1.0).abs() < 1e-6, "{combo}");
        let mut m = CMatrix::zeros(n, n);
        for (c, y) in p.upper.iter().zip(&cert.upper) {
            m += &c.matrix * Complex::new(*y, 0.0);
        }
        for (c, y) in p.lower.iter().zip(&cert.lower) {
            m -= &c.matrix * Complex::new(*y, 0.0);
        }
        let scale = cert.lower.iter().chain(&cert.upper).fold(1.0, |a: f64, y| a.max(*y));
        assert!(hermitian_eigen(&m).values.last().unwrap() / scale >= -1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Positive rescaling of the objective rescales the optimum and leaves
    /// the optimizer unchanged.
    #[test]
    fn objective_scaling(seed in any::<u64>(), factor in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let mut scaled = inst.problem.clone();
        scaled.objective *= Complex::new(factor, 0.0);
        let a = sdp::solve(&inst.problem, None).unwrap();
        let b = sdp::solve(&scaled, None).unwrap();
        prop_assert_eq!(a.status, SdpStatus::Optimal);
        prop_assert_eq!(b.status, SdpStatus::Optimal);
        let scale = (a.primal_objective.abs() * factor).max(factor).max(1.0);
        prop_assert!((b.primal_objective - factor * a.primal_objective).abs() <= 1e-6 * scale);
    }

    /// A unitary change of basis maps solutions onto solutions.
    #[test]
    fn unitary_invariance(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let n = inst.problem.dim;
        let q = hermitian_eigen(&random_hermitian(&mut rng, n)).vectors * Complex::from_polar(1.0, angle);
        let rotate = |m: &CMatrix| q.adjoint() * m * &q;
        let mut rotated = HermitianLinearSdp::new(rotate(&inst.problem.objective));
        for c in &inst.problem.lower {
            rotated = rotated.with_lower(rotate(&c.matrix), c.bound);
        }
        for c in &inst.problem.upper {
            rotated = rotated.with_upper(rotate(&c.matrix), c.bound);
        }
        let a = sdp::solve(&inst.problem, None).unwrap();
        let b = sdp::solve(&rotated, None).unwrap();
        let scale = a.primal_objective.abs().max(1.0);
        prop_assert!((a.primal_objective - b.primal_objective).abs() <= 1e-7 * scale);
    }

    /// Serialization round-trips exactly.
    #[test]
    fn text_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let parsed = HermitianLinearSdp::from_text(&inst.problem.to_text()).unwrap();
        prop_assert_eq!(parsed, inst.problem);
    }
}
