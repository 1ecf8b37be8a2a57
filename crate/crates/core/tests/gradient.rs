use dsenet::nn::gradcheck::{check_gradients, tiny_config};

#[test]
fn analytic_gradients_match_finite_differences() {
    let checks = check_gradients(&tiny_config(), 48, 11, 1e-5).unwrap();
    let mut worst = 0.0f64;
    for c in &checks {
        println!("{:40} {:6} {:.3e}", c.name, c.elements, c.rel_error);
        worst = worst.max(c.rel_error);
    }
    assert!(worst < 1e-4, "worst relative error {worst:.3e}");
}
