use datorus_core::cocycle::volume_average_exponents;
use datorus_core::damap::{DAMap, Perturbation};
use datorus_core::disintegration::{center_exponent_from_mk, estimate_conditionals, ks_critical};
use datorus_core::foliation::{build_foliated_box, BoxShape, Bundles};
use datorus_core::torus::{analyze_linear, reference_matrix, TorusPoint};

fn shear(eps: f64) -> DAMap {
    let a = analyze_linear(&reference_matrix()).unwrap();
    DAMap::new(a, vec![Perturbation::shear(0, [0, 1, 0], eps).unwrap()])
}

#[test]
fn leaf_stretch_matches_the_cocycle_center_exponent() {
    let f = shear(0.05);
    let b = Bundles::compute(&f, 16, 300).unwrap();
    let mk = center_exponent_from_mk(&f, &b, &TorusPoint::new(0.21, 0.47, 0.83).unwrap(), 1000, 1e-4).unwrap();
    let cocycle = volume_average_exponents(&f, 200, 1000, 3);
    assert!((mk - cocycle.mean[1]).abs() < 1e-2, "{mk} vs {}", cocycle.mean[1]);
}

/// Conditionals estimated in a box and in a shorter box on the same
/// transversal agree on the shared leaf segments after renormalization.
#[test]
fn conditionals_agree_on_box_overlap() {
    let f = shear(0.05);
    let b = Bundles::compute(&f, 16, 300).unwrap();
    let x = TorusPoint::new(0.37, 0.52, 0.14).unwrap();
    let wide = BoxShape {
        cells: 2,
        ..BoxShape::default()
    };
    let narrow = BoxShape {
        leaf_half: 0.1,
        ..wide
    };
    let bw = build_foliated_box(&f, &b, &x, wide).unwrap();
    let bn = build_foliated_box(&f, &b, &x, narrow).unwrap();
    let hw = estimate_conditionals(&bw, 400_000, 16, 1, 100).unwrap();
    let hn = estimate_conditionals(&bn, 400_000, 8, 2, 100).unwrap();
    let crit = ks_critical(0.05, hw.len());
    for (w, n) in hw.iter().zip(&hn) {
        let shared = w.restrict(4, 12);
        let (mw, mn) = (shared.masses().unwrap(), n.masses().unwrap());
        // two-sample KS on the common bins
        let (mut cw, mut cn, mut d) = (0.0, 0.0, 0.0f64);
        for (a, b) in mw.iter().zip(&mn) {
            cw += a;
            cn += b;
            d = d.max((cw - cn).abs());
        }
        let (n1, n2) = (shared.samples as f64, n.samples as f64);
        assert!(d * (n1 * n2 / (n1 + n2)).sqrt() <= crit, "cell {:?}: {d}", w.cell);
    }
}
