//! Run the finite-difference gradient suite: one check per op, then
//! a full micro SE-CRNN pass. Same code path as `sed gradcheck`.

use sed_distill::suite::{model_gradcheck, op_gradcheck_suite, MODEL_TOLERANCE, OP_TOLERANCE};

fn main() -> sed_distill::Result<()> {
    println!("{:<40} {:>14}", "op", "max rel error");
    for (name, err) in op_gradcheck_suite()? {
        let flag = if err < OP_TOLERANCE { "" } else { "  <-- FAIL" };
        println!("{name:<40} {err:>14.3e}{flag}");
    }
    let err = model_gradcheck()?;
    println!("{:<40} {:>14.3e}", "full SE-CRNN (micro)", err);
    assert!(err < MODEL_TOLERANCE);
    Ok(())
}
