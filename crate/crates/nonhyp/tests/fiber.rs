use nonhyp::fiber::{
    circle_dist, compose_word, exponent_dictionary_check, line_param, line_vector, CircleMap, FiberFamily, FiberMap,
    Matrix2, NorthSouth, ProjectiveMap, Rotation,
};

fn maps() -> Vec<FiberMap> {
    vec![
        FiberMap::Projective(ProjectiveMap::new(Matrix2::diag(0.5)).unwrap()),
        FiberMap::Projective(ProjectiveMap::new(Matrix2::rotation(1.0)).unwrap()),
        FiberMap::Projective(ProjectiveMap::new(Matrix2::sl2(2.0, 1.0, 1.0, 1.0).unwrap()).unwrap()),
        FiberMap::Rotation(Rotation { shift: 0.3819660112501051 }),
        FiberMap::NorthSouth(NorthSouth::new(0.6).unwrap()),
    ]
}

// signed circle difference in (-1/2, 1/2]
fn diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    if d > 0.5 {
        d - 1.0
    } else {
        d
    }
}

#[test]
fn derivatives_match_central_differences() {
    let h = 1e-6;
    for m in maps() {
        for k in 0..97 {
            let x = (k as f64 + 0.31) / 97.0;
            let fd = diff(m.eval(x + h), m.eval(x - h)) / (2.0 * h);
            let d = m.deriv(x);
            assert!((fd - d).abs() < 1e-6 * d.max(1.0), "{m:?} at {x}: {fd} vs {d}");
            let (y, l) = m.eval_log_deriv(x);
            assert_eq!(y, m.eval(x));
            assert!((l - d.ln()).abs() < 1e-12);
            assert!(d <= m.norm_bound() * (1.0 + 1e-12) && 1.0 / d <= m.norm_bound() * (1.0 + 1e-12));
        }
    }
}

#[test]
fn inverses_undo_maps() {
    for m in maps() {
        for k in 0..101 {
            let x = k as f64 / 101.0;
            assert!(circle_dist(m.inverse(m.eval(x)), x) < 1e-12, "{m:?} at {x}");
        }
    }
}

#[test]
fn composition_chain_rule() {
    let fam = FiberFamily::new(maps()).unwrap();
    let word = [1, 3, 2, 5, 4, 1, 1, 3, 5];
    let h = 1e-7;
    for k in 0..20 {
        let x = (k as f64 + 0.5) / 20.0;
        let c = compose_word(&fam, &word, x);
        assert_eq!(c.points.len(), word.len() + 1);
        let fd = diff(fam.apply(&word, x + h).0, fam.apply(&word, x - h).0) / (2.0 * h);
        assert!((fd.ln() - c.log_deriv()).abs() < 1e-5, "{x}: {} vs {}", fd.ln(), c.log_deriv());
    }
}

#[test]
fn line_parameters_roundtrip() {
    for k in 0..50 {
        let t = k as f64 / 50.0;
        assert!(circle_dist(line_param(line_vector(t)), t) < 1e-14);
        let v = line_vector(t);
        assert!(circle_dist(line_param([-v[0], -v[1]]), t) < 1e-14);
    }
}

#[test]
fn dictionary_for_a_hyperbolic_product() {
    // diag(3, 1/3) alternated with a rotation by a rational line: the product of
    // period two is hyperbolic, so the check must find a nonzero exponent
    let cocycle = [Matrix2::diag(3.0), Matrix2::rotation(0.25)];
    let xi: Vec<u8> = (0..2000).map(|i| (i % 2) as u8 + 1).collect();
    let samples: Vec<f64> = (0..16).map(|k| (k as f64 + 0.37) / 16.0).collect();
    let r = exponent_dictionary_check(&cocycle, &xi, 2000, &samples, 1e-3).unwrap();
    assert!(!r.zero_exponent);
    assert!(r.lambda1 > 0.0);
    assert!(r.max_deviation < 1e-2, "{}", r.max_deviation);
}
