use cavqec::code::*;
use cavqec::gf2::{self, BitMatrix};
use proptest::prelude::*;

fn family(coeffs: &[u8], lift: usize) -> CssCode {
    hgp_from_polynomial(&CheckPolynomial::from_coefficients(coeffs).unwrap(), lift, Boundary::Periodic).unwrap()
}

fn surface41() -> CssCode {
    hgp_from_polynomial(&CheckPolynomial::new(&[0, 1]).unwrap(), 5, Boundary::Open).unwrap()
}

/// k from the classical dimensions, independent of the quantum rank formula.
fn k_classical(h1: &BitMatrix, h2: &BitMatrix) -> usize {
    let (r1, r2) = (gf2::rank(h1), gf2::rank(h2));
    let k1 = h1.cols() - r1;
    let k2 = h2.cols() - r2;
    let k1t = h1.rows() - r1;
    let k2t = h2.rows() - r2;
    k1 * k2 + k1t * k2t
}

#[test]
fn h1xx2_family_parameters() {
    for (lift, n) in [(6, 72), (9, 162), (12, 288)] {
        let code = family(&[1, 1, 1], lift);
        assert!(code.commutes());
        assert_eq!(code_parameters(&code), (n, 8), "lift {lift}");
        let weights: Vec<usize> =
            code.g_x.row_supports().iter().chain(code.g_z.row_supports()).map(Vec::len).collect();
        assert!(weights.iter().all(|&w| w == 6));
    }
}

#[test]
fn h1xx3x7_family_parameters() {
    for (lift, n) in [(15, 450), (30, 1800)] {
        let code = family(&[1, 1, 0, 1, 0, 0, 0, 1], lift);
        assert_eq!(code_parameters(&code), (n, 98), "lift {lift}");
    }
    let h = circulant_from_polynomial(&CheckPolynomial::new(&[0, 1, 3, 7]).unwrap(), 15).unwrap();
    assert_eq!(15 - gf2::rank(&h), 7);
}

#[test]
fn classical_15_7_5() {
    let h = circulant_from_polynomial(&CheckPolynomial::new(&[0, 1, 3, 7]).unwrap(), 15).unwrap();
    // brute-force minimum weight of the classical code
    let cols: Vec<u16> = h.columns().iter().map(|c| c.iter().map(|&r| 1u16 << r).sum()).collect();
    let min = (1u32..1 << 15)
        .filter(|&x| (0..15).filter(|i| x >> i & 1 == 1).fold(0u16, |a, i| a ^ cols[i]) == 0)
        .map(u32::count_ones)
        .min();
    assert_eq!(min, Some(5));
}

#[test]
fn surface_code_41_1_5() {
    let code = surface41();
    assert_eq!(code_parameters(&code), (41, 1));
    assert_eq!(compute_distance(&code, 5).unwrap().exact(), Some(5));
    assert_eq!(compute_distance(&code, 1).unwrap(), Distance::LowerBound(2));
    let x = compute_distance_typed(&code, 5, &[CheckType::X]).unwrap();
    let z = compute_distance_typed(&code, 5, &[CheckType::Z]).unwrap();
    assert_eq!((x.exact(), z.exact()), (Some(5), Some(5)));
}

#[test]
fn surface_code_logicals_live_on_sector_one() {
    let code = surface41();
    let l = logical_operators(&code).unwrap();
    assert_eq!(l.k(), 1);
    for m in [&l.logical_x, &l.logical_z] {
        assert!(m.row(0).iter().all(|&q| code.sector_of[q] == 1));
    }
}

#[test]
fn logical_basis_of_72_is_paired() {
    let code = family(&[1, 1, 1], 6);
    let l = logical_operators(&code).unwrap();
    assert_eq!(l.k(), 8);
    assert_eq!(l.pairing(), BitMatrix::identity(8));
    assert!(code.g_z.mul(&l.logical_x.transpose()).unwrap().is_zero());
    assert!(code.g_x.mul(&l.logical_z.transpose()).unwrap().is_zero());
    for r in 0..8 {
        assert!(!gf2::in_rowspace(&code.g_x, &l.logical_x.row_vector(r)).unwrap());
        assert!(!gf2::in_rowspace(&code.g_z, &l.logical_z.row_vector(r)).unwrap());
    }
}

#[test]
fn distance_of_72_8_4() {
    let code = family(&[1, 1, 1], 6);
    let x = compute_distance_typed(&code, 4, &[CheckType::X]).unwrap();
    let z = compute_distance_typed(&code, 4, &[CheckType::Z]).unwrap();
    assert_eq!(x.exact(), Some(4));
    assert_eq!(z.exact(), Some(4));
}

#[test]
fn layouts() {
    let l = layout(&surface41()).unwrap();
    assert_eq!((l.rows, l.cols), (9, 9));
    let mut seen = std::collections::HashSet::new();
    for &c in l.coordinate.iter().chain(&l.x_checks).chain(&l.z_checks) {
        assert!(seen.insert(c), "cell {c:?} used twice");
    }
    assert_eq!(seen.len(), 81);
    // sector-1 on even/even cells, sector-2 on odd/odd cells
    let code = surface41();
    for (q, &(r, c)) in l.coordinate.iter().enumerate() {
        assert_eq!(code.sector_of[q] == 1, r % 2 == 0 && c % 2 == 0);
    }
    let big = family(&[1, 1, 0, 1, 0, 0, 0, 1], 15);
    let l = layout(&big).unwrap();
    assert_eq!((l.rows, l.cols), (30, 30));
    assert!(big.g_x.row_supports().iter().all(|r| r.len() == 8));
    assert_eq!(layout(&family(&[1, 1, 1], 6)).unwrap().rows, 12);
}

#[test]
fn layout_rejects_non_hgp_support() {
    let mut code = surface41();
    let mut rows = code.g_x.row_supports().to_vec();
    rows[0].push(40);
    code.g_x = BitMatrix::from_rows(41, rows).unwrap();
    assert!(matches!(layout(&code), Err(CodeError::SpansGrid { kind: CheckType::X, check: 0 })));
}

#[test]
fn code_file_round_trip() {
    let code = surface41();
    let json = serde_json::to_string(&CodeFile::from_code(&code)).unwrap();
    let back: CodeFile = serde_json::from_str(&json).unwrap();
    assert_eq!(back.to_code().unwrap(), code);
    assert_eq!(back.k, 1);
}

fn sparse_h() -> impl Strategy<Value = BitMatrix> {
    (1usize..7, 1usize..8).prop_flat_map(|(r, c)| {
        prop::collection::vec(prop::collection::vec(0..c, 1..4), r)
            .prop_map(move |rows| BitMatrix::from_rows(c, rows).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_products_commute_and_count(h1 in sparse_h(), h2 in sparse_h()) {
        let code = hypergraph_product(&h1, &h2);
        prop_assert!(code.commutes());
        prop_assert_eq!(code.n, h1.cols() * h2.cols() + h1.rows() * h2.rows());
        prop_assert_eq!(code.sector_of.iter().filter(|&&s| s == 1).count(), h1.cols() * h2.cols());
        prop_assert_eq!(code_parameters(&code).1, k_classical(&h1, &h2));
        prop_assert!(layout(&code).is_ok());
    }
}
