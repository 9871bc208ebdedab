use aio_core::selftest;

#[test]
fn every_suite_passes() {
    for r in selftest::run_all().unwrap() {
        println!("{}", r.line());
        assert!(r.passed(), "{}", r.line());
        assert!(r.cases > 0);
    }
}

#[test]
fn model_suite_covers_every_parameter() {
    let case = selftest::TinyCase::new(11).unwrap();
    let r = selftest::model_grad_suite().unwrap();
    assert_eq!(r.cases, case.store.len() + 1);
}
