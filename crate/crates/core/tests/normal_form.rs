use std::sync::Arc;

use cascade_core::normal_form::{
    conjugate_hamiltonian, homological_residual, normal_form, normal_form_with, solve_homological,
};
use cascade_core::operator::{order_diagnostic, toeplitz};
use cascade_core::resonant::{averaged, resonant_avg};
use cascade_core::spectral::{eigh, reassemble};
use cascade_core::{BasisKind, BasisModel, TimePeriodicOperator, ToeplitzSpec, TruncatedOperator, C64};
use faer::Mat;

const TAU: f64 = std::f64::consts::TAU;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn harmonic(n: usize) -> Arc<BasisModel> {
    BasisModel::shared(BasisKind::Harmonic, n).unwrap()
}

fn smooth(b: &Arc<BasisModel>, scale: f64) -> TruncatedOperator {
    let mut d = vec![(0, c(0.2 * scale, 0.0))];
    for k in 1..5_i64 {
        let v = c(scale / (k * k) as f64, 0.3 * scale / (k * k * k) as f64);
        d.push((k, v));
        d.push((-k, v.conj()));
    }
    toeplitz(b, &ToeplitzSpec::new(d)).unwrap()
}

fn expi(x: &Mat<C64>) -> Mat<C64> {
    let (mu, q) = eigh(x).unwrap();
    reassemble(&q, &mu.iter().map(|&m| C64::from_polar(1.0, m)).collect::<Vec<_>>())
}

#[test]
fn resonant_input_needs_no_generator() {
    let b = harmonic(16);
    let v = averaged(&TimePeriodicOperator::cos_drive(&smooth(&b, 1.0), 1.0));
    let x = solve_homological(&v).unwrap();
    assert!(x.terms.is_empty());
    let conj = conjugate_hamiltonian(&v, &x, 32).unwrap();
    assert_eq!(conj.potential.terms.len(), v.terms.len());
    assert_eq!(conj.potential.eval(0.4).matrix, v.eval(0.4).matrix);
}

#[test]
fn homological_equation_holds() {
    let b = harmonic(24);
    let v = TimePeriodicOperator::cos_drive(&smooth(&b, 1.0), 1.0);
    let x = solve_homological(&v).unwrap();
    for t in [0.0, 0.8, 2.5] {
        assert!(homological_residual(&v, &x, t, 1e-4) < 1e-6);
    }
    assert!(x.eval(0.0).norm_max() < 1e-15);
    assert!(x.eval(TAU).sub(&x.eval(0.0)).unwrap().norm_max() < 1e-10);
    assert!(x.is_selfadjoint(1e-14));
}

#[test]
fn conjugation_matches_gauge_transform() {
    // phi = e^{iX} psi turns i psi' = H psi into i phi' = (U H U^* + i U' U^*) phi
    let b = harmonic(12);
    let v = TimePeriodicOperator::cos_drive(&smooth(&b, 0.1), 1.0);
    let x = solve_homological(&v).unwrap();
    let conj = conjugate_hamiltonian(&v, &x, 128).unwrap();
    assert!(conj.alias_tail < 1e-10);
    let k0 = TruncatedOperator::k0(b.clone());
    for t in [0.3, 1.9] {
        let h = k0.add(&v.eval(t)).unwrap().matrix;
        let u = expi(&x.eval(t).matrix);
        let eps = 1e-5;
        let du = (&expi(&x.eval(t + eps).matrix) - &expi(&x.eval(t - eps).matrix)) * faer::Scale(c(0.5 / eps, 0.0));
        let want = &(&u * &h * u.adjoint()) + &(&du * u.adjoint() * faer::Scale(c(0.0, 1.0)));
        let got = &conj.potential.eval(t).matrix + &k0.matrix;
        let diff = &got - &want;
        assert!(diff.norm_max() < 1e-8, "t {t}: {}", diff.norm_max());
    }
}

#[test]
fn one_step_effective_is_average() {
    let b = harmonic(32);
    let s = cascade_core::operator::shift_power(&b, 1).unwrap();
    let v = TimePeriodicOperator::cos_drive(&s.add(&s.adjoint()).unwrap().scale(c(0.5, 0.0)), 1.0);
    let nf = normal_form(&v, 1).unwrap();
    assert_eq!(nf.t_n.norm_max(), 0.0);
    assert_eq!(nf.effective_h.matrix, resonant_avg(&v).matrix);
    assert_eq!(nf.x_list.len(), 1);
    assert!(nf.summary.homological_residual[0] < 1e-6);
}

#[test]
fn static_diagonal_is_already_normal() {
    let b = harmonic(8);
    let d = TruncatedOperator::diagonal(b, &[0.1, -0.2, 0.3, 0.0, 0.5, 0.6, -0.7, 0.8], 0.0);
    let nf = normal_form(&TimePeriodicOperator::constant(d.clone()), 2).unwrap();
    assert!(nf.x_list.iter().all(|x| x.terms.is_empty()));
    assert_eq!(nf.effective_h.matrix, d.matrix);
    assert_eq!(nf.t_n.norm_max(), 0.0);
}

#[test]
fn depth_is_limited() {
    let b = harmonic(8);
    let v = TimePeriodicOperator::cos_drive(&smooth(&b, 1.0), 1.0);
    assert!(normal_form(&v, 0).is_err());
    assert!(normal_form(&v, 3).is_err());
}

#[test]
fn two_step_correction_is_hermitian_and_smoothing() {
    let mut cs = Vec::new();
    for n in [32, 64, 128] {
        let b = harmonic(n);
        let v = TimePeriodicOperator::cos_drive(&smooth(&b, 0.5), 1.0);
        let nf = normal_form_with(&v, 2, 64).unwrap();
        assert!(nf.t_n.hermitian_defect() < 1e-10 * nf.t_n.norm_max().max(1e-300));
        assert!(nf.summary.alias_tail.iter().all(|&a| a < 1e-8), "{:?}", nf.summary.alias_tail);
        cs.push(order_diagnostic(&nf.t_n, -1.0).unwrap());
    }
    eprintln!("order -1 constants {cs:?}");
    assert!(cs[2] <= 1.5 * cs[0], "{cs:?}");
}
