//! Central finite-difference check of every primitive and the composed
//! network cases.

use rmfa::autodiff::{primitive_cases, GRAD_TOLERANCE};
use rmfa::model::checks::composed_cases;

fn main() -> anyhow::Result<()> {
    let mut cases = primitive_cases();
    cases.extend(composed_cases());
    for case in &cases {
        let r = case.check()?;
        let verdict = if r.passed(GRAD_TOLERANCE) {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "{:<28} {:>10.2e}  {:>5} coords  {verdict}",
            case.name, r.max_rel_error, r.coordinates
        );
    }
    Ok(())
}
