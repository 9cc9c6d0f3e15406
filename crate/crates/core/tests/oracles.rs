mod support;

use support::suites;

fn assert_pass(o: suites::Outcome) {
    eprintln!("{}", o.line());
    assert!(o.passed, "{}", o.line());
}

#[test]
fn gradients_match_finite_differences() {
    assert_pass(suites::gradient_suite(6));
}

#[test]
fn conductance_is_complete() {
    let errors = suites::conductance_errors(4, &[32, 128, 512]);
    for e in &errors {
        assert!(e[2] <= 0.01, "{e:?}");
    }
    let mean = |s: usize| errors.iter().map(|e| e[s]).sum::<f64>() / errors.len() as f64;
    assert!(mean(0) > mean(1) && mean(1) > mean(2));
}

#[test]
fn ranking_matches_brute_force() {
    assert_pass(suites::ranking_suite(100));
}

#[test]
fn weight_selection_matches_enumeration() {
    assert_pass(suites::weight_suite(50));
}

#[test]
fn discriminability_properties() {
    suites::discriminability_suite().into_iter().for_each(assert_pass);
}

#[test]
fn tsne_properties() {
    suites::tsne_suite().into_iter().for_each(assert_pass);
}
