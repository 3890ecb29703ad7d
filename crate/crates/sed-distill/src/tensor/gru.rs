//! GRU recurrence unrolled on the autodiff graph.
//!
//! Gate layout is fixed for the checkpoint format: the packed input
//! and hidden weight matrices hold columns `[update | reset | candidate]`
//! (z, r, n), each `hidden` wide. The cell is
//!
//! ```text
//! z = sigmoid(x W_xz + h U_hz + b_z)
//! r = sigmoid(x W_xr + h U_hr + b_r)
//! n = tanh(x W_xn + b_n + r * (h U_hn))
//! h' = z * h + (1 - z) * n
//! ```

use crate::error::{Result, SedError};

use super::Tensor;

/// One direction of a GRU layer: `w_x [D, 3H]`, `w_h [H, 3H]`, `bias [3H]`.
#[derive(Clone)]
pub struct GruDirection {
    pub w_x: Tensor,
    pub w_h: Tensor,
    pub bias: Tensor,
}

#[derive(Clone)]
pub struct GruParams {
    pub hidden: usize,
    pub fwd: GruDirection,
    /// Present for bidirectional layers; its pass runs over reversed time.
    pub bwd: Option<GruDirection>,
}

fn run_direction(
    x: &Tensor,
    dir: &GruDirection,
    hidden: usize,
    reverse: bool,
) -> Result<Vec<Tensor>> {
    let shape = x.shape();
    let (b, t) = (shape[0], shape[1]);
    let mut h = Tensor::zeros(&[b, hidden]);
    let mut outputs: Vec<Option<Tensor>> = vec![None; t];
    let steps: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
    for ti in steps {
        let x_t = x.select_time(ti)?;
        let gx = x_t.matmul(&dir.w_x)?.add(&dir.bias)?;
        let gh = h.matmul(&dir.w_h)?;
        let z = gx
            .narrow(1, 0, hidden)?
            .add(&gh.narrow(1, 0, hidden)?)?
            .sigmoid();
        let r = gx
            .narrow(1, hidden, hidden)?
            .add(&gh.narrow(1, hidden, hidden)?)?
            .sigmoid();
        let n = gx
            .narrow(1, 2 * hidden, hidden)?
            .add(&r.mul(&gh.narrow(1, 2 * hidden, hidden)?)?)?
            .tanh();
        let keep = z.mul(&h)?;
        let fresh = z.neg().add_scalar(1.0).mul(&n)?;
        h = keep.add(&fresh)?;
        outputs[ti] = Some(h.clone());
    }
    Ok(outputs.into_iter().map(|o| o.unwrap()).collect())
}

impl Tensor {
    /// `x: [B, T, D]` -> `[B, T, H]` (unidirectional) or `[B, T, 2H]`
    /// (forward states then backward states along the last axis).
    pub fn gru_layer(&self, params: &GruParams) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 3 || shape[1] < 1 {
            return Err(SedError::Dimension(format!(
                "gru_layer expects [B, T>=1, D], got {shape:?}"
            )));
        }
        let fwd_states = run_direction(self, &params.fwd, params.hidden, false)?;
        let fwd = Tensor::stack_time(&fwd_states)?;
        match &params.bwd {
            None => Ok(fwd),
            Some(dir) => {
                let bwd_states = run_direction(self, dir, params.hidden, true)?;
                let bwd = Tensor::stack_time(&bwd_states)?;
                Tensor::concat(&[fwd, bwd], 2)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_dir(d: usize, h: usize) -> GruDirection {
        GruDirection {
            w_x: Tensor::zeros(&[d, 3 * h]),
            w_h: Tensor::zeros(&[h, 3 * h]),
            bias: Tensor::zeros(&[3 * h]),
        }
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let x = Tensor::from_vec(vec![0.5; 2 * 4 * 3], &[2, 4, 3]).unwrap();
        let params = GruParams {
            hidden: 2,
            fwd: zero_dir(3, 2),
            bwd: Some(zero_dir(3, 2)),
        };
        let y = x.gru_layer(&params).unwrap();
        assert_eq!(y.shape(), vec![2, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_equals_cell_application() {
        // T = 1: the layer output is one cell step from h0 = 0.
        let d = 2;
        let h = 2;
        let w_x = Tensor::from_vec((0..d * 3 * h).map(|i| 0.1 * i as f64 - 0.3).collect(), &[d, 3 * h]).unwrap();
        let w_h = Tensor::from_vec(vec![0.05; h * 3 * h], &[h, 3 * h]).unwrap();
        let bias = Tensor::from_vec(vec![0.1; 3 * h], &[3 * h]).unwrap();
        let params = GruParams {
            hidden: h,
            fwd: GruDirection { w_x: w_x.clone(), w_h, bias: bias.clone() },
            bwd: None,
        };
        let x = Tensor::from_vec(vec![0.4, -0.6], &[1, 1, d]).unwrap();
        let y = x.gru_layer(&params).unwrap();

        // hand cell: h0 = 0 so gh = 0
        let gx_all = x.reshape(&[1, d]).unwrap().matmul(&w_x).unwrap().add(&bias).unwrap();
        let gx = gx_all.data();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut expect = vec![0.0; h];
        for j in 0..h {
            let z = sig(gx[j]);
            let n = gx[2 * h + j].tanh();
            expect[j] = (1.0 - z) * n;
        }
        for (a, e) in y.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn bidirectional_backward_pass_sees_future_frames() {
        // A bidirectional layer's output at t = 0 must depend on the last frame.
        let d = 1;
        let h = 1;
        let mk = || GruDirection {
            w_x: Tensor::from_vec(vec![0.5, 0.5, 0.5], &[1, 3]).unwrap(),
            w_h: Tensor::from_vec(vec![0.3, 0.3, 0.3], &[1, 3]).unwrap(),
            bias: Tensor::zeros(&[3]),
        };
        let params = GruParams { hidden: h, fwd: mk(), bwd: Some(mk()) };
        let x1 = Tensor::from_vec(vec![0.1, 0.2, 0.3], &[1, 3, d]).unwrap();
        let x2 = Tensor::from_vec(vec![0.1, 0.2, 0.9], &[1, 3, d]).unwrap();
        let y1 = x1.gru_layer(&params).unwrap().data();
        let y2 = x2.gru_layer(&params).unwrap().data();
        // backward-direction channel at t = 0 is index 1 of frame 0
        assert!((y1[1] - y2[1]).abs() > 1e-6);
        // forward-direction channel at t = 0 is unchanged
        assert!((y1[0] - y2[0]).abs() < 1e-12);
    }
}
