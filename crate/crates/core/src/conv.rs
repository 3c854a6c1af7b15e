//! im2col convolution kernels and safe GEMM wrappers.
//!
//! All heavy linear algebra funnels through single `sgemm` calls with a
//! fixed internal evaluation order, so forward/backward results do not
//! depend on how work is chunked.

/// Safe wrapper around `matrixmultiply::sgemm`: C = A * B with explicit
/// row/column strides, overwriting C.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    c: &mut [f32],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let max_a = (m as isize - 1) * rsa + (k as isize - 1) * csa;
    let max_b = (k as isize - 1) * rsb + (n as isize - 1) * csb;
    let max_c = (m as isize - 1) * rsc + (n as isize - 1) * csc;
    assert!(k == 0 || (max_a >= 0 && (max_a as usize) < a.len()), "A stride bounds");
    assert!(k == 0 || (max_b >= 0 && (max_b as usize) < b.len()), "B stride bounds");
    assert!(max_c >= 0 && (max_c as usize) < c.len(), "C stride bounds");
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
            0.0,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Geometry of one conv application.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfold one image [C, H, W] into patch rows [positions, patch_len],
/// zero-filling padded taps. Column order matches the [Cout, Cin, ky, kx]
/// weight layout flattened per output channel.
pub fn im2col(geom: &ConvGeom, image: &[f32], cols: &mut [f32]) {
    let k = geom.kernel;
    let plen = geom.patch_len();
    debug_assert_eq!(image.len(), geom.in_channels * geom.in_h * geom.in_w);
    debug_assert_eq!(cols.len(), geom.positions() * plen);
    for oy in 0..geom.out_h {
        for ox in 0..geom.out_w {
            let row = (oy * geom.out_w + ox) * plen;
            let base_y = (oy * geom.stride) as isize - geom.padding as isize;
            let base_x = (ox * geom.stride) as isize - geom.padding as isize;
            for ci in 0..geom.in_channels {
                let img_c = ci * geom.in_h * geom.in_w;
                let col_c = row + ci * k * k;
                for ky in 0..k {
                    let iy = base_y + ky as isize;
                    let dst = col_c + ky * k;
                    if iy < 0 || iy >= geom.in_h as isize {
                        cols[dst..dst + k].fill(0.0);
                        continue;
                    }
                    let img_row = img_c + iy as usize * geom.in_w;
                    for kx in 0..k {
                        let ix = base_x + kx as isize;
                        cols[dst + kx] = if ix < 0 || ix >= geom.in_w as isize {
                            0.0
                        } else {
                            image[img_row + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold patch-row gradients back onto an image gradient (scatter-add),
/// the adjoint of [`im2col`]. Sequential, fixed order.
pub fn col2im(geom: &ConvGeom, cols: &[f32], image_grad: &mut [f32]) {
    let k = geom.kernel;
    let plen = geom.patch_len();
    debug_assert_eq!(image_grad.len(), geom.in_channels * geom.in_h * geom.in_w);
    debug_assert_eq!(cols.len(), geom.positions() * plen);
    for oy in 0..geom.out_h {
        for ox in 0..geom.out_w {
            let row = (oy * geom.out_w + ox) * plen;
            let base_y = (oy * geom.stride) as isize - geom.padding as isize;
            let base_x = (ox * geom.stride) as isize - geom.padding as isize;
            for ci in 0..geom.in_channels {
                let img_c = ci * geom.in_h * geom.in_w;
                let col_c = row + ci * k * k;
                for ky in 0..k {
                    let iy = base_y + ky as isize;
                    if iy < 0 || iy >= geom.in_h as isize {
                        continue;
                    }
                    let img_row = img_c + iy as usize * geom.in_w;
                    let src = col_c + ky * k;
                    for kx in 0..k {
                        let ix = base_x + kx as isize;
                        if ix >= 0 && ix < geom.in_w as isize {
                            image_grad[img_row + ix as usize] += cols[src + kx];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_conv(geom: &ConvGeom, image: &[f32], weight: &[f32], bias: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0f32; geom.out_channels * geom.positions()];
        for co in 0..geom.out_channels {
            for oy in 0..geom.out_h {
                for ox in 0..geom.out_w {
                    let mut acc = bias[co];
                    for ci in 0..geom.in_channels {
                        for ky in 0..geom.kernel {
                            for kx in 0..geom.kernel {
                                let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                                let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                                if iy < 0 || ix < 0 || iy >= geom.in_h as isize || ix >= geom.in_w as isize {
                                    continue;
                                }
                                let w = weight[((co * geom.in_channels + ci) * geom.kernel + ky) * geom.kernel + kx];
                                let x = image[(ci * geom.in_h + iy as usize) * geom.in_w + ix as usize];
                                acc += w * x;
                            }
                        }
                    }
                    out[(co * geom.out_h + oy) * geom.out_w + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_convolution() {
        let geom = ConvGeom {
            in_channels: 3,
            out_channels: 4,
            kernel: 3,
            stride: 1,
            padding: 1,
            in_h: 5,
            in_w: 6,
            out_h: 5,
            out_w: 6,
        };
        let image: Vec<f32> = (0..geom.in_channels * geom.in_h * geom.in_w)
            .map(|i| ((i * 31 % 17) as f32 - 8.0) * 0.13)
            .collect();
        let weight: Vec<f32> = (0..geom.out_channels * geom.patch_len())
            .map(|i| ((i * 7 % 23) as f32 - 11.0) * 0.05)
            .collect();
        let bias = vec![0.25f32, -0.5, 0.0, 1.0];

        let mut cols = vec![0.0f32; geom.positions() * geom.patch_len()];
        im2col(&geom, &image, &mut cols);
        // out[p, co] = cols[p, :] . weight[co, :]
        let mut out_pc = vec![0.0f32; geom.positions() * geom.out_channels];
        gemm(
            geom.positions(),
            geom.patch_len(),
            geom.out_channels,
            &cols,
            geom.patch_len() as isize,
            1,
            &weight,
            1,
            geom.patch_len() as isize,
            &mut out_pc,
            geom.out_channels as isize,
            1,
        );
        let mut got = vec![0.0f32; geom.out_channels * geom.positions()];
        for p in 0..geom.positions() {
            for co in 0..geom.out_channels {
                got[co * geom.positions() + p] = out_pc[p * geom.out_channels + co] + bias[co];
            }
        }

        let want = reference_conv(&geom, &image, &weight, &bias);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-4, "gemm conv {g} vs direct {w}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let geom = ConvGeom {
            in_channels: 2,
            out_channels: 1,
            kernel: 3,
            stride: 2,
            padding: 1,
            in_h: 7,
            in_w: 5,
            out_h: 4,
            out_w: 3,
        };
        let x: Vec<f32> = (0..geom.in_channels * geom.in_h * geom.in_w)
            .map(|i| ((i * 13 % 29) as f32 - 14.0) * 0.1)
            .collect();
        let y: Vec<f32> = (0..geom.positions() * geom.patch_len())
            .map(|i| ((i * 5 % 19) as f32 - 9.0) * 0.1)
            .collect();
        let mut cols = vec![0.0f32; y.len()];
        im2col(&geom, &x, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(&a, &b)| a as f64 * b as f64).sum();
        let mut xg = vec![0.0f32; x.len()];
        col2im(&geom, &y, &mut xg);
        let rhs: f64 = x.iter().zip(&xg).map(|(&a, &b)| a as f64 * b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }
}
