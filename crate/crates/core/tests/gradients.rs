use convseq::checks::{run_checks, MODULES, SEEDS};

fn assert_module(module: &str) {
    let outcomes = run_checks(&[module], &SEEDS).unwrap();
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.report.passed).map(|o| o.line()).collect();
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}

#[test]
fn numeric_core() {
    assert_module(MODULES[0]);
}

#[test]
fn conv_kernels() {
    assert_module(MODULES[1]);
}

#[test]
fn dynamic_conv() {
    assert_module(MODULES[2]);
}

#[test]
fn attention() {
    assert_module(MODULES[3]);
}

#[test]
fn seq_model() {
    assert_module(MODULES[4]);
}
