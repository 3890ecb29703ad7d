//! The tensor core in isolation: build a small expression graph,
//! run reverse-mode backprop, and verify one gradient against
//! central finite differences.

use sed_distill::tensor::{finite_diff_gradcheck, Tensor};

fn main() -> sed_distill::Result<()> {
    // y = mean((a @ b + c)^2)
    let a = Tensor::param(vec![0.5, -1.2, 0.3, 0.8, -0.4, 1.1], &[2, 3])?;
    let b = Tensor::param(vec![0.2, -0.7, 1.4, 0.9, -0.3, 0.6], &[3, 2])?;
    let c = Tensor::param(vec![0.1, -0.1], &[2])?;

    let h = a.matmul(&b)?.add(&c)?;
    let y = h.mul(&h)?.mean_all();
    println!("y = {:.6}", y.item());

    y.backward()?;
    println!("dy/da = {:?}", a.grad().unwrap());
    println!("dy/dc = {:?}", c.grad().unwrap());

    // gradients accumulate across backward calls
    y.backward()?;
    println!("after second backward, dy/dc doubles: {:?}", c.grad().unwrap());

    // numerical cross-check of the whole expression
    let (ac, bc, cc) = (a.clone(), b.clone(), c.clone());
    let err = finite_diff_gradcheck(
        move || {
            let h = ac.matmul(&bc)?.add(&cc)?;
            Ok(h.mul(&h)?.mean_all())
        },
        &[a, b, c],
        1e-5,
    )?;
    println!("finite-difference max relative error: {err:.3e}");
    assert!(err < 1e-6);
    Ok(())
}
