//! Raw f32 kernels behind the autodiff ops. No shape validation here.

/// `c = a · b + beta·c` where `a` is m×k and `b` is k×n (optionally
/// transposed in storage), all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above cover every index implied by the strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.kh) / self.stride + 1,
            (self.w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

fn im2col(g: &ConvGeom, input: &[f32], cols: &mut [f32]) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    for c in 0..g.cin {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f32], dinput: &mut [f32]) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    for c in 0..g.cin {
        let plane = &mut dinput[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched 2-D convolution, zero padding, no bias.
pub fn conv2d_forward(g: &ConvGeom, n: usize, input: &[f32], kernel: &[f32]) -> Vec<f32> {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let mut out = vec![0.0; n * g.cout * p];
    let mut cols = vec![0.0; g.patch() * p];
    let in_per = g.cin * g.h * g.w;
    for b in 0..n {
        im2col(g, &input[b * in_per..(b + 1) * in_per], &mut cols);
        gemm(
            g.cout,
            g.patch(),
            p,
            kernel,
            false,
            &cols,
            false,
            &mut out[b * g.cout * p..(b + 1) * g.cout * p],
            0.0,
        );
    }
    out
}

/// Accumulates input and kernel gradients of a convolution.
pub fn conv2d_backward(
    g: &ConvGeom,
    n: usize,
    input: &[f32],
    kernel: &[f32],
    dout: &[f32],
    dinput: Option<&mut [f32]>,
    dkernel: Option<&mut [f32]>,
) {
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let in_per = g.cin * g.h * g.w;
    let mut cols = vec![0.0; g.patch() * p];
    let mut dinput = dinput;
    let mut dkernel = dkernel;
    for b in 0..n {
        let dout_b = &dout[b * g.cout * p..(b + 1) * g.cout * p];
        if let Some(dk) = dkernel.as_deref_mut() {
            im2col(g, &input[b * in_per..(b + 1) * in_per], &mut cols);
            // dK += dOut · colsᵀ
            gemm(g.cout, p, g.patch(), dout_b, false, &cols, true, dk, 1.0);
        }
        if let Some(di) = dinput.as_deref_mut() {
            // dcols = Kᵀ · dOut
            gemm(g.patch(), g.cout, p, kernel, true, dout_b, false, &mut cols, 0.0);
            col2im_add(g, &cols, &mut di[b * in_per..(b + 1) * in_per]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
