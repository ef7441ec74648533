//! Direct circular cross-correlation in one and two spatial dimensions.
//!
//! `out[b, o, i] = bias[o] + sum_{c, t} w[o, c, t] x[b, c, (i + t - r) mod n]`
//! with `r = k / 2`, and the obvious product form in 2D.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub n: usize,
    pub k: usize,
    pub dims: usize,
}

impl ConvGeometry {
    fn spatial(&self) -> usize {
        self.n.pow(self.dims as u32)
    }

    fn padded(&self) -> usize {
        (self.n + self.k - 1).pow(self.dims as u32)
    }

    fn kernel(&self) -> usize {
        self.k.pow(self.dims as u32)
    }
}

pub(crate) fn geometry(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<ConvGeometry> {
    let xs = x.shape();
    let ws = w.shape();
    if xs.len() != 3 && xs.len() != 4 {
        return Err(Error::Conv(format!("input must be (batch, channels, spatial..), got {xs:?}")));
    }
    let dims = xs.len() - 2;
    if ws.len() != dims + 2 {
        return Err(Error::Conv(format!("kernel shape {ws:?} does not match input {xs:?}")));
    }
    let (n, k) = (xs[2], ws[2]);
    if dims == 2 && (xs[3] != n || ws[3] != k) {
        return Err(Error::Conv("only square inputs and kernels are supported".into()));
    }
    if k % 2 == 0 {
        return Err(Error::Conv(format!("kernel size must be odd, got {k}")));
    }
    if k > n {
        return Err(Error::Conv(format!("kernel size {k} exceeds grid size {n}")));
    }
    if ws[1] != xs[1] {
        return Err(Error::Conv(format!(
            "input has {} channels but kernel expects {}",
            xs[1], ws[1]
        )));
    }
    if b.shape() != [ws[0]] {
        return Err(Error::Conv(format!(
            "bias shape {:?} does not match {} output channels",
            b.shape(),
            ws[0]
        )));
    }
    Ok(ConvGeometry {
        batch: xs[0],
        c_in: xs[1],
        c_out: ws[0],
        n,
        k,
        dims,
    })
}

/// Copies one channel into a circularly padded buffer.
fn pad(g: &ConvGeometry, src: &[f64], dst: &mut [f64]) {
    let (n, r) = (g.n, g.k / 2);
    let np = n + g.k - 1;
    let wrap = |j: usize| (j + n - r) % n;
    if g.dims == 1 {
        for (j, d) in dst.iter_mut().enumerate() {
            *d = src[wrap(j)];
        }
    } else {
        for i in 0..np {
            let row = &src[wrap(i) * n..wrap(i) * n + n];
            for j in 0..np {
                dst[i * np + j] = row[wrap(j)];
            }
        }
    }
}

/// Adds a padded-buffer gradient back onto the periodic channel.
fn fold(g: &ConvGeometry, src: &[f64], dst: &mut [f64]) {
    let (n, r) = (g.n, g.k / 2);
    let np = n + g.k - 1;
    let wrap = |j: usize| (j + n - r) % n;
    if g.dims == 1 {
        for (j, s) in src.iter().enumerate() {
            dst[wrap(j)] += s;
        }
    } else {
        for i in 0..np {
            let wi = wrap(i) * n;
            for j in 0..np {
                dst[wi + wrap(j)] += src[i * np + j];
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four partial sums let the compiler vectorize without reassociation.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn padded_input(g: &ConvGeometry, x: &Tensor) -> Vec<f64> {
    let (sp, pp) = (g.spatial(), g.padded());
    let mut xp = vec![0.0; g.batch * g.c_in * pp];
    for (src, dst) in x.data().chunks_exact(sp).zip(xp.chunks_exact_mut(pp)) {
        pad(g, src, dst);
    }
    xp
}

pub(crate) fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let g = geometry(x, w, b)?;
    let (n, k, sp, pp, kv) = (g.n, g.k, g.spatial(), g.padded(), g.kernel());
    let np = n + k - 1;
    let xp = padded_input(&g, x);
    let mut shape = vec![g.batch, g.c_out];
    shape.extend(std::iter::repeat(n).take(g.dims));
    let mut out = vec![0.0; g.batch * g.c_out * sp];
    let wd = w.data();
    for bi in 0..g.batch {
        for o in 0..g.c_out {
            let out_ch = &mut out[(bi * g.c_out + o) * sp..][..sp];
            out_ch.iter_mut().for_each(|v| *v = b.data()[o]);
            for c in 0..g.c_in {
                let xc = &xp[(bi * g.c_in + c) * pp..][..pp];
                let wk = &wd[(o * g.c_in + c) * kv..][..kv];
                if g.dims == 1 {
                    for (t, &wt) in wk.iter().enumerate() {
                        axpy(out_ch, wt, &xc[t..t + n]);
                    }
                } else {
                    for ti in 0..k {
                        for tj in 0..k {
                            let wt = wk[ti * k + tj];
                            for i in 0..n {
                                let src = &xc[(i + ti) * np + tj..][..n];
                                axpy(&mut out_ch[i * n..(i + 1) * n], wt, src);
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(shape, out)
}

/// Gradients of a scalar loss with respect to `(x, w, b)` given `dL/dout`.
pub(crate) fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    grad_out: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let g = geometry(x, w, b)?;
    let (n, k, sp, pp, kv) = (g.n, g.k, g.spatial(), g.padded(), g.kernel());
    let np = n + k - 1;
    let xp = padded_input(&g, x);
    let wd = w.data();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; b.len()];
    let mut gxp = vec![0.0; pp];
    for bi in 0..g.batch {
        for o in 0..g.c_out {
            let go = &grad_out[(bi * g.c_out + o) * sp..][..sp];
            gb[o] += go.iter().sum::<f64>();
        }
        for c in 0..g.c_in {
            let xc = &xp[(bi * g.c_in + c) * pp..][..pp];
            gxp.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..g.c_out {
                let go = &grad_out[(bi * g.c_out + o) * sp..][..sp];
                let wk = &wd[(o * g.c_in + c) * kv..][..kv];
                let gwk = &mut gw[(o * g.c_in + c) * kv..][..kv];
                if g.dims == 1 {
                    for t in 0..k {
                        gwk[t] += dot(go, &xc[t..t + n]);
                        axpy(&mut gxp[t..t + n], wk[t], go);
                    }
                } else {
                    for ti in 0..k {
                        for tj in 0..k {
                            let wt = wk[ti * k + tj];
                            let mut acc = 0.0;
                            for i in 0..n {
                                let row = (i + ti) * np + tj;
                                let go_row = &go[i * n..(i + 1) * n];
                                acc += dot(go_row, &xc[row..row + n]);
                                axpy(&mut gxp[row..row + n], wt, go_row);
                            }
                            gwk[ti * k + tj] += acc;
                        }
                    }
                }
            }
            fold(&g, &gxp, &mut gx[(bi * g.c_in + c) * sp..][..sp]);
        }
    }
    Ok((gx, gw, gb))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct translation of the defining sum.
    fn naive(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
        let xs = x.shape();
        let ws = w.shape();
        let dims = xs.len() - 2;
        let (bn, ci, co, n, k) = (xs[0], xs[1], ws[0], xs[2], ws[2]);
        let r = (k / 2) as isize;
        let m = |i: isize| i.rem_euclid(n as isize) as usize;
        let mut out = Vec::new();
        for bi in 0..bn {
            for o in 0..co {
                if dims == 1 {
                    for i in 0..n {
                        let mut s = b.data()[o];
                        for c in 0..ci {
                            for t in 0..k {
                                let xi = m(i as isize + t as isize - r);
                                s += w.data()[(o * ci + c) * k + t] * x.data()[(bi * ci + c) * n + xi];
                            }
                        }
                        out.push(s);
                    }
                } else {
                    for i in 0..n {
                        for j in 0..n {
                            let mut s = b.data()[o];
                            for c in 0..ci {
                                for ti in 0..k {
                                    for tj in 0..k {
                                        let yi = m(i as isize + ti as isize - r);
                                        let xj = m(j as isize + tj as isize - r);
                                        s += w.data()[((o * ci + c) * k + ti) * k + tj]
                                            * x.data()[((bi * ci + c) * n + yi) * n + xj];
                                    }
                                }
                            }
                            out.push(s);
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn hand_worked_example() {
        let x = Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::filled(vec![1, 1, 3], 1.0);
        let b = Tensor::zeros(vec![1]);
        let y = conv_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[7.0, 6.0, 9.0, 8.0]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for dims in [1, 2] {
            let mut xs = vec![2, 1];
            xs.extend(vec![9; dims]);
            let x = random(xs, &mut rng);
            let mut ws = vec![1, 1];
            ws.extend(vec![5; dims]);
            let mut w = Tensor::zeros(ws);
            let center = if dims == 1 { 2 } else { 12 };
            w.data_mut()[center] = 1.0;
            let y = conv_forward(&x, &w, &Tensor::zeros(vec![1])).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dims in [1, 2] {
            let mut xs = vec![2, 3];
            xs.extend(vec![10; dims]);
            let mut ws = vec![4, 3];
            ws.extend(vec![5; dims]);
            let x = random(xs, &mut rng);
            let w = random(ws, &mut rng);
            let b = random(vec![4], &mut rng);
            let y = conv_forward(&x, &w, &b).unwrap();
            let oracle = naive(&x, &w, &b);
            for (a, o) in y.data().iter().zip(&oracle) {
                assert!((a - o).abs() <= 1e-13 * o.abs().max(1.0), "{a} vs {o}");
            }
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        let x = Tensor::zeros(vec![1, 2, 8]);
        let b = Tensor::zeros(vec![1]);
        assert!(conv_forward(&x, &Tensor::zeros(vec![1, 2, 4]), &b).is_err());
        assert!(conv_forward(&x, &Tensor::zeros(vec![1, 3, 3]), &b).is_err());
        assert!(conv_forward(&x, &Tensor::zeros(vec![1, 2, 3]), &Tensor::zeros(vec![2])).is_err());
    }
}
