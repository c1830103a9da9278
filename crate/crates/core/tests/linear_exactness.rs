use datorus_core::cocycle::volume_average_exponents;
use datorus_core::conjugacy::{conjugacy_residual, solve_semiconjugacy};
use datorus_core::damap::DAMap;
use datorus_core::foliation::{deviation_from_linear, Bundles};
use datorus_core::periodic::{periodic_data_constancy, Constancy};
use datorus_core::torus::{analyze_linear, reference_matrix};

#[test]
fn every_module_reproduces_the_eigen_analysis() {
    let a = analyze_linear(&reference_matrix()).unwrap();
    let f = DAMap::linear_only(a.clone());
    let exps = a.exponents();

    let est = volume_average_exponents(&f, 50, 500, 1);
    for i in 0..3 {
        assert!((est.mean[i] - exps[i]).abs() < 1e-10);
    }

    let report = periodic_data_constancy(&f, 4, 1e-10).unwrap();
    assert_eq!(report.verdicts, [Constancy::Constant; 3]);
    assert!(report.predicts_absolute_continuity && report.predicts_rigidity);
    for d in &report.data {
        for i in 0..3 {
            assert!((d.exponents[i] - exps[i]).abs() < 1e-10);
        }
    }

    let b = Bundles::compute(&f, 8, 50).unwrap();
    for field in [&b.stable, &b.center, &b.unstable] {
        assert!(deviation_from_linear(field, &f, &a).unwrap() < 1e-10);
    }

    let h = solve_semiconjugacy(&f, &a, 8, 1e-12, 100).unwrap();
    assert_eq!(h.sup_displacement(), 0.0);
    assert!(conjugacy_residual(&h, &f, &a, 1000, 2).unwrap().sup < 1e-10);
}
