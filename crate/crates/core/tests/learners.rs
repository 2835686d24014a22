mod common;

#[test]
fn logistic_gradient_matches_central_differences() {
    println!("{}", common::lr_gradient_oracle(20, 21).unwrap());
}

#[test]
fn smo_reaches_the_enumerated_dual_optimum() {
    println!("{}", common::svm_oracle(60, 22).unwrap());
}

#[test]
fn every_tree_split_is_the_exhaustive_best() {
    println!("{}", common::cart_oracle(100, 23).unwrap());
}

#[test]
fn boosting_deviance_never_rises() {
    println!("{}", common::gb_deviance_oracle(200, 24).unwrap());
}

#[test]
fn brute_force_dual_solves_a_two_point_problem() {
    // Two points of opposite class: a1 = a2 = a, objective 2a - a^2 (1 - k).
    let x = forage_core::Matrix::from_rows(&[vec![0.0], vec![1.0]]);
    let k = (-1.0f64).exp();
    let free = 1.0 / (1.0 - k);
    let best = common::brute_force_dual(&x, &[1.0, -1.0], 10.0, 1.0);
    assert!((best - free).abs() < 1e-12, "{best} vs {free}");
    let capped = common::brute_force_dual(&x, &[1.0, -1.0], 0.5, 1.0);
    assert!((capped - (1.0 - 0.25 * (1.0 - k))).abs() < 1e-12);
}
