use cavqec::code::{hgp_from_polynomial, layout, Boundary, CheckPolynomial, CheckType};
use cavqec::schedule::*;

fn rep_product(n: usize, boundary: Boundary) -> cavqec::code::CssCode {
    hgp_from_polynomial(&CheckPolynomial::new(&[0, 1]).unwrap(), n, boundary).unwrap()
}

#[test]
fn self_products_of_repetition_codes_take_2_2n_minus_1_steps() {
    for n in 2..=8 {
        let code = rep_product(n, Boundary::Periodic);
        let l = layout(&code).unwrap();
        let s = diagonal_schedule(&code, &l);
        assert_eq!(s.len(), 2 * (2 * n - 1), "n = {n}");
        assert_eq!(validate_schedule(&s, &assign_cavities(&l)), Ok(()));
        let z_steps = s.timesteps.iter().take_while(|t| t.pass == CheckType::Z).count();
        assert_eq!(z_steps, 2 * n - 1);
        assert!(s.timesteps[z_steps..].iter().all(|t| t.pass == CheckType::X));
    }
}

#[test]
fn surface_code_schedule_is_within_bound() {
    let code = rep_product(5, Boundary::Open);
    let l = layout(&code).unwrap();
    let s = diagonal_schedule(&code, &l);
    // a 4x5 check array has 8 diagonals per type; the 2(2n-1)=18 formula is an upper bound here
    assert_eq!(s.len(), 16);
    assert_eq!(validate_schedule(&s, &assign_cavities(&l)), Ok(()));
}

#[test]
fn polynomial_families_schedule_without_conflicts() {
    for (coeffs, lift) in [(vec![1u8, 1, 1], 6), (vec![1, 1, 1], 9), (vec![1, 1, 0, 1, 0, 0, 0, 1], 15)] {
        let code = hgp_from_polynomial(&CheckPolynomial::from_coefficients(&coeffs).unwrap(), lift, Boundary::Periodic)
            .unwrap();
        let l = layout(&code).unwrap();
        let s = diagonal_schedule(&code, &l);
        assert_eq!(validate_schedule(&s, &assign_cavities(&l)), Ok(()));
        assert_eq!(s.order().count(), code.g_x.rows() + code.g_z.rows());
        for t in &s.timesteps {
            assert!(t.checks.windows(2).all(|w| w[0].row <= w[1].row));
        }
    }
}
