use spikecl::verify::{gradcheck_suite, GRAD_TOL};

#[test]
fn every_primitive_and_objective_passes_gradcheck() {
    for seed in [3, 4] {
        let checks = gradcheck_suite(seed);
        assert!(checks.len() > 30);
        for c in &checks {
            assert!(c.passed, "seed {seed} {}: {}", c.name, c.detail);
            assert!(c.error <= GRAD_TOL || c.name.contains("heaviside"));
        }
    }
}
