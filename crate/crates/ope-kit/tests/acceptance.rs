//! End-to-end acceptance run: every verification suite at its stated
//! tolerance, one pass/fail line per check (visible with `--nocapture`, and
//! always on failure).

use ope_kit::verify::{run_suite, Suite};

#[test]
fn acceptance_all_criteria() {
    let report = run_suite(Suite::All, 42);
    print!("{}", report.render_text());
    assert!(report.passed(), "\n{}", report.render_text());
}
