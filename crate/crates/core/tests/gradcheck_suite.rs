use modenorm::gradcheck::{run_suite, SuiteOptions, Target};
use modenorm::Tensor;

#[test]
fn every_target_passes_twenty_seeds() {
    let results = run_suite(&Target::ALL, 0, 20, &SuiteOptions::default()).unwrap();
    assert_eq!(results.len(), 200);
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.report.passed())
        .map(|r| format!("{} seed {}", r.target, r.seed))
        .collect();
    assert!(failed.is_empty(), "{failed:?}");
}

fn flip_first(t: &mut Tensor) {
    t.data_mut()[0] += 1.0;
}

#[test]
fn corrupted_gradients_are_caught_for_every_target() {
    let opts = SuiteOptions {
        corrupt: Some(flip_first),
        ..SuiteOptions::default()
    };
    for r in run_suite(&Target::ALL, 0, 3, &opts).unwrap() {
        assert!(!r.report.passed(), "{} seed {}", r.target, r.seed);
    }
}
