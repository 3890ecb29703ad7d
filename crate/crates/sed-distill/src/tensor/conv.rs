//! 2-D convolution (cross-correlation convention, no kernel flip).

use crate::error::{Result, SedError};

use super::Tensor;

impl Tensor {
    /// `x: [B, C_in, T, F]`, `w: [C_out, C_in, kT, kF]`, `bias: [C_out]`.
    /// Output dims: `T' = (T + 2*pad_t - k_t)/stride_t + 1`, same for F.
    pub fn conv2d(
        &self,
        w: &Tensor,
        bias: &Tensor,
        padding: (usize, usize),
        stride: (usize, usize),
    ) -> Result<Tensor> {
        let xs = self.shape();
        let ws = w.shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(SedError::Dimension(format!(
                "conv2d expects 4-d input and kernel, got {xs:?} and {ws:?}"
            )));
        }
        if xs[1] != ws[1] {
            return Err(SedError::Dimension(format!(
                "conv2d: input channels {} != kernel channels {}",
                xs[1], ws[1]
            )));
        }
        if bias.shape() != vec![ws[0]] {
            return Err(SedError::Dimension(format!(
                "conv2d: bias shape {:?} != [{}]",
                bias.shape(),
                ws[0]
            )));
        }
        if stride.0 < 1 || stride.1 < 1 {
            return Err(SedError::Config("conv2d: stride must be >= 1".into()));
        }
        let (b, c_in, t, f) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, _, kt, kf) = (ws[0], ws[1], ws[2], ws[3]);
        let (pt, pf) = padding;
        let (st, sf) = stride;
        if t + 2 * pt < kt || f + 2 * pf < kf {
            return Err(SedError::Config(format!(
                "conv2d: kernel ({kt}x{kf}) larger than padded input ({}x{})",
                t + 2 * pt,
                f + 2 * pf
            )));
        }
        let t_out = (t + 2 * pt - kt) / st + 1;
        let f_out = (f + 2 * pf - kf) / sf + 1;
        if t_out == 0 || f_out == 0 {
            return Err(SedError::Config("conv2d: non-positive output dimension".into()));
        }

        let x = self.data();
        let wd = w.data();
        let bd = bias.data();
        let mut out = vec![0.0; b * c_out * t_out * f_out];
        for bi in 0..b {
            for co in 0..c_out {
                for ot in 0..t_out {
                    for of in 0..f_out {
                        let mut acc = bd[co];
                        for ci in 0..c_in {
                            for dt in 0..kt {
                                let it = ot * st + dt;
                                if it < pt || it - pt >= t {
                                    continue;
                                }
                                let xrow = ((bi * c_in + ci) * t + (it - pt)) * f;
                                let wrow = ((co * c_in + ci) * kt + dt) * kf;
                                for df in 0..kf {
                                    let ifr = of * sf + df;
                                    if ifr < pf || ifr - pf >= f {
                                        continue;
                                    }
                                    acc += x[xrow + ifr - pf] * wd[wrow + df];
                                }
                            }
                        }
                        out[((bi * c_out + co) * t_out + ot) * f_out + of] = acc;
                    }
                }
            }
        }

        let (cx, cw) = (x, wd);
        Ok(Tensor::make_op(
            "conv2d",
            vec![self.clone(), w.clone(), bias.clone()],
            out,
            vec![b, c_out, t_out, f_out],
            Box::new(move |g| {
                let mut gx = vec![0.0; cx.len()];
                let mut gw = vec![0.0; cw.len()];
                let mut gb = vec![0.0; c_out];
                for bi in 0..b {
                    for co in 0..c_out {
                        for ot in 0..t_out {
                            for of in 0..f_out {
                                let go = g[((bi * c_out + co) * t_out + ot) * f_out + of];
                                if go == 0.0 {
                                    continue;
                                }
                                gb[co] += go;
                                for ci in 0..c_in {
                                    for dt in 0..kt {
                                        let it = ot * st + dt;
                                        if it < pt || it - pt >= t {
                                            continue;
                                        }
                                        let xrow = ((bi * c_in + ci) * t + (it - pt)) * f;
                                        let wrow = ((co * c_in + ci) * kt + dt) * kf;
                                        for df in 0..kf {
                                            let ifr = of * sf + df;
                                            if ifr < pf || ifr - pf >= f {
                                                continue;
                                            }
                                            gx[xrow + ifr - pf] += go * cw[wrow + df];
                                            gw[wrow + df] += go * cx[xrow + ifr - pf];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(gx), Some(gw), Some(gb)]
            }),
        ))
    }
}
