use std::collections::BTreeMap;
use std::sync::Arc;

use cascade_core::operator::{multiplication_op, real_part_coeffs, shift_power, toeplitz};
use cascade_core::resonant::{averaged, averaged_op, nonresonant, quadrature_avg, resonant_avg};
use cascade_core::{BasisKind, BasisModel, TimePeriodicOperator, ToeplitzSpec, TruncatedOperator, C64};
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn harmonic(n: usize) -> Arc<BasisModel> {
    BasisModel::shared(BasisKind::Harmonic, n).unwrap()
}

fn smooth_toeplitz(b: &Arc<BasisModel>) -> TruncatedOperator {
    let mut d = vec![(0, c(0.3, 0.0))];
    for k in 1..6_i64 {
        let v = c(1.0 / (k * k) as f64, 0.5 / (k * k * k) as f64);
        d.push((k, v));
        d.push((-k, v.conj()));
    }
    toeplitz(b, &ToeplitzSpec::new(d)).unwrap()
}

#[test]
fn transported_matches_free_flow_conjugation() {
    let b = harmonic(12);
    let t = smooth_toeplitz(&b);
    let v = TimePeriodicOperator::transported(&t);
    for s in [0.0, 0.4, 2.1, -3.3] {
        let direct = t.conjugate_by_free_flow(-s);
        assert!(v.eval(s).sub(&direct).unwrap().norm_max() < 1e-13);
    }
    assert!(v.is_selfadjoint(1e-14));
}

#[test]
fn cos_drive_toeplitz_average_is_kth_diagonal() {
    let b = harmonic(64);
    let t = smooth_toeplitz(&b);
    for k in 1..=3 {
        let avg = resonant_avg(&TimePeriodicOperator::cos_drive(&t, k as f64));
        let sk = shift_power(&b, k).unwrap();
        let vk = c(1.0 / (k * k) as f64, 0.5 / (k * k * k) as f64);
        let want = sk.scale(vk).add(&sk.adjoint().scale(vk.conj())).unwrap().scale(c(0.5, 0.0));
        assert!(avg.interior_diff(&want, k) < 1e-15);
        assert!(avg.hermitian);
    }
}

#[test]
fn transported_average_is_the_static_operator() {
    let b = harmonic(32);
    let s = shift_power(&b, 1).unwrap();
    let h0 = s.add(&s.adjoint()).unwrap();
    let avg = resonant_avg(&TimePeriodicOperator::transported(&h0));
    assert_eq!(avg.matrix, h0.matrix);
}

#[test]
fn static_average_keeps_degenerate_blocks() {
    let b = BasisModel::shared(BasisKind::HalfWave, 9).unwrap();
    let v = TruncatedOperator::from_fn(b.clone(), 0.0, |i, j| c(1.0 + (i * j) as f64, 0.0));
    let avg = resonant_avg(&TimePeriodicOperator::constant(v.clone()));
    for i in 0..9 {
        for j in 0..9 {
            let want = if b.eigenvalue(i) == b.eigenvalue(j) { v.get(i, j) } else { c(0.0, 0.0) };
            assert_eq!(avg.get(i, j), want);
        }
    }
}

#[test]
fn halfwave_average_rule() {
    let b = BasisModel::shared(BasisKind::HalfWave, 41).unwrap();
    let v = BTreeMap::from([(1, c(1.0, 0.0)), (-1, c(1.0, 0.0))]);
    let mut pot = TimePeriodicOperator::cos_drive(&multiplication_op(&b, &v).unwrap(), 1.0);
    pot.push(0.0, TruncatedOperator::identity(b.clone()).scale(c(-1.0, 0.0))).unwrap();
    let avg = resonant_avg(&pot);
    for i in 0..41 {
        for j in 0..41 {
            let (m, n) = (b.label(i), b.label(j));
            if avg.get(i, j).norm() > 0.0 && i != j {
                assert_eq!((m.abs() - n.abs()).abs(), 1, "({m},{n})");
            }
        }
    }
    // away from mode 0 the average is Re(v_1 e^{ix}) - 1 restricted to |m| - |n| = +-1,
    // which on modes of equal sign is the full multiplication operator
    let full = multiplication_op(&b, &real_part_coeffs(c(1.0, 0.0), 1)).unwrap();
    for i in 0..41 {
        for j in 0..41 {
            let (m, n) = (b.label(i), b.label(j));
            if m.signum() == n.signum() && m != 0 {
                let want = full.get(i, j) - if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) };
                assert!((avg.get(i, j) - want).norm() < 1e-15);
            }
        }
    }
}

#[test]
fn quadrature_oracle() {
    let b = harmonic(32);
    let t = smooth_toeplitz(&b);
    let v = TimePeriodicOperator::cos_drive(&t, 2.0);
    let q = quadrature_avg(&v, 0.0, 64).unwrap();
    assert!(!q.aliased);
    assert!(q.op.sub(&resonant_avg(&v)).unwrap().norm_max() < 1e-12);
    let q = quadrature_avg(&v, 0.9, 64).unwrap();
    assert!(q.op.sub(&averaged_op(&v, 0.9)).unwrap().norm_max() < 1e-12);
}

#[test]
fn quadrature_flags_aliasing() {
    let b = harmonic(16);
    let t = toeplitz(&b, &ToeplitzSpec::new([(7, c(1.0, 0.0)), (-7, c(1.0, 0.0))])).unwrap();
    let v = TimePeriodicOperator::cos_drive(&t, 1.0);
    assert_eq!(v.phase_bandwidth(), 8.0);
    let q = quadrature_avg(&v, 0.0, 4).unwrap();
    assert!(q.aliased);
    assert!(q.op.sub(&resonant_avg(&v)).unwrap().norm_max() > 0.1);
    assert!(quadrature_avg(&v, 0.0, 3).is_err());
}

#[test]
fn quadrature_exact_for_constant_diagonal() {
    let b = harmonic(10);
    let d = TruncatedOperator::diagonal(b, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0], 0.0);
    let v = TimePeriodicOperator::constant(d.clone());
    let q = quadrature_avg(&v, 0.0, 4).unwrap();
    assert!(q.op.sub(&d).unwrap().norm_max() < 1e-14);
    assert!(averaged_op(&v, 1.7).sub(&d).unwrap().norm_max() == 0.0);
}

#[test]
fn golden_ratio_drive_has_no_resonances() {
    let b = harmonic(64);
    let t = smooth_toeplitz(&b);
    let phi = 0.5 * (1.0 + 5f64.sqrt());
    let v = TimePeriodicOperator::cos_drive(&t, phi);
    assert_eq!(resonant_avg(&v).norm_max(), 0.0);
    assert!(averaged(&v).terms.is_empty());
    assert!(v.integer_frequencies().is_err());
}

#[test]
fn averaged_commutes_with_free_flow() {
    // i d/dt V^(t) = [K0, V^(t)]
    let b = harmonic(24);
    let v = TimePeriodicOperator::cos_drive(&smooth_toeplitz(&b), 2.0);
    let k0 = TruncatedOperator::k0(b);
    let vh = averaged(&v);
    let t = 0.37;
    let mut last = f64::INFINITY;
    for eps in [1e-2, 1e-3] {
        let fd = vh.eval(t + eps).sub(&vh.eval(t - eps)).unwrap().scale(c(0.0, 0.5 / eps));
        let comm = cascade_core::operator::commutator(&k0, &vh.eval(t)).unwrap();
        let err = fd.sub(&comm).unwrap().norm_max();
        assert!(err < 10.0 * eps * eps, "{err}");
        assert!(err < last);
        last = err;
    }
}

proptest! {
    #[test]
    fn average_splits_v(re in -1.0f64..1.0, im in -1.0f64..1.0, k in 1usize..4, t in 0.0f64..6.3) {
        let b = harmonic(16);
        let spec = ToeplitzSpec::new([(k as i64, c(re, im)), (-(k as i64), c(re, -im)), (0, c(0.2, 0.0))]);
        let v = TimePeriodicOperator::cos_drive(&toeplitz(&b, &spec).unwrap(), k as f64);
        let sum = averaged(&v).eval(t).add(&nonresonant(&v).eval(t)).unwrap();
        prop_assert!(sum.sub(&v.eval(t)).unwrap().norm_max() < 1e-14);
        prop_assert!(resonant_avg(&v).hermitian);
    }
}
