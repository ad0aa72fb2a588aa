use cascn::verify::run_suite;

#[test]
fn healthy_build_passes_every_check() {
    let results = run_suite(|r| println!("{}", r.line()));
    assert!(results.len() > 50);
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.line()).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}
