//! Small reverse-mode automatic differentiation engine covering exactly the
//! operations the block networks need: circular convolution, `tanh`,
//! elementwise arithmetic and the mean-square reduction.

mod conv;
mod gradcheck;
mod graph;
mod spectral_op;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Eager, Graph, Ops, Parameter, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::error::{Error, Result};
    use crate::field::OperatorKind;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Every registered op, wrapped to produce a scalar through `mean_sq`
    /// (or directly, for `mean_sq` itself).
    #[derive(Debug, Clone, Copy)]
    enum RegisteredOp {
        Conv,
        Tanh,
        Add,
        Sub,
        Mul,
        Scale,
        AddScalar,
        Recip,
        MeanSq,
        GInverse,
        GApply,
    }

    const REGISTRY: [RegisteredOp; 11] = [
        RegisteredOp::Conv,
        RegisteredOp::Tanh,
        RegisteredOp::Add,
        RegisteredOp::Sub,
        RegisteredOp::Mul,
        RegisteredOp::Scale,
        RegisteredOp::AddScalar,
        RegisteredOp::Recip,
        RegisteredOp::MeanSq,
        RegisteredOp::GInverse,
        RegisteredOp::GApply,
    ];

    fn check_op(op: RegisteredOp, dims: usize, n: usize, k: usize, seed: u64) -> GradCheckReport {
        // Spectral ops need a valid periodic grid.
        let n = if matches!(op, RegisteredOp::GInverse | RegisteredOp::GApply) { 8 } else { n };
        let mut xs = vec![2, 2];
        xs.extend(vec![n; dims]);
        let x = random(xs.clone(), seed);
        let y = random(xs, seed + 1);
        let f = move |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let out = match op {
                RegisteredOp::Conv => g.conv(&v[0], &v[1], &v[2])?,
                RegisteredOp::Tanh => g.tanh(&v[0]),
                RegisteredOp::Add => g.add(&v[0], &v[1])?,
                RegisteredOp::Sub => g.sub(&v[0], &v[1])?,
                RegisteredOp::Mul => g.mul(&v[0], &v[1])?,
                RegisteredOp::Scale => g.scale(&v[0], -1.7),
                RegisteredOp::AddScalar => g.add_scalar(&v[0], 0.3),
                RegisteredOp::Recip => {
                    // keep away from the pole
                    let shifted = g.add_scalar(&v[0], 2.5);
                    g.recip(&shifted)
                }
                RegisteredOp::MeanSq => return Ok(g.mean_sq(&v[0])),
                RegisteredOp::GInverse => {
                    let inv = g.g_inverse(&v[0], OperatorKind::InverseNegLaplacian)?;
                    g.scale(&inv, 10.0)
                }
                RegisteredOp::GApply => {
                    let lap = g.g_apply(&v[0], OperatorKind::InverseNegLaplacian)?;
                    g.scale(&lap, 0.05)
                }
            };
            // A non-symmetric readout so sign errors cannot cancel.
            let t = g.tanh(&out);
            Ok(g.mean_sq(&t))
        };
        let inputs = match op {
            RegisteredOp::Conv => {
                let mut ws = vec![3, 2];
                ws.extend(vec![k; dims]);
                vec![x, random(ws, seed + 2), random(vec![3], seed + 3)]
            }
            RegisteredOp::Add | RegisteredOp::Sub | RegisteredOp::Mul => vec![x, y],
            _ => vec![x],
        };
        grad_check(f, &inputs, 1e-5).unwrap()
    }

    #[test]
    fn every_registered_op_passes_grad_check() {
        for op in REGISTRY {
            for dims in [1, 2] {
                let r = check_op(op, dims, 6, 3, 17);
                assert!(r.max_rel_error <= 1e-5, "{op:?} {dims}D: {r:?}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn grad_check_on_random_shapes(
            op_idx in 0usize..REGISTRY.len(),
            dims in 1usize..=2,
            n in 5usize..9,
            half_k in 0usize..3,
            seed in 0u64..1000,
        ) {
            let k = (2 * half_k + 1).min(if n % 2 == 0 { n - 1 } else { n });
            let r = check_op(REGISTRY[op_idx], dims, n, k, seed);
            prop_assert!(r.max_rel_error <= 1e-5, "{:?}", r);
        }

        #[test]
        fn conv_is_translation_equivariant(seed in 0u64..500, shift in 0usize..12, dims in 1usize..=2) {
            let n = 12;
            let mut xs = vec![1, 2];
            xs.extend(vec![n; dims]);
            let x = random(xs.clone(), seed);
            let mut ws = vec![3, 2];
            ws.extend(vec![5; dims]);
            let w = random(ws, seed + 1);
            let b = random(vec![3], seed + 2);
            let shift_t = |t: &Tensor| -> Tensor {
                let sp = n.pow(dims as u32);
                let mut out = t.clone();
                for (src, dst) in t.data().chunks(sp).zip(out.data_mut().chunks_mut(sp)) {
                    for idx in 0..sp {
                        let to = if dims == 1 {
                            (idx + shift) % n
                        } else {
                            let (i, j) = (idx / n, idx % n);
                            ((i + shift) % n) * n + (j + 2 * shift) % n
                        };
                        dst[to] = src[idx];
                    }
                }
                out
            };
            let mut e = Eager;
            let lhs = e.conv(&shift_t(&x), &w, &b).unwrap();
            let rhs = shift_t(&e.conv(&x, &w, &b).unwrap());
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn conv_is_linear_in_weights(seed in 0u64..500, a in -2.0f64..2.0, c in -2.0f64..2.0) {
            let x = random(vec![2, 2, 16], seed);
            let w1 = random(vec![3, 2, 5], seed + 1);
            let w2 = random(vec![3, 2, 5], seed + 2);
            let zero = Tensor::zeros(vec![3]);
            let mut e = Eager;
            let comb = w1.zip_map(&w2, "comb", |p, q| a * p + c * q).unwrap();
            let lhs = e.conv(&x, &comb, &zero).unwrap();
            let y1 = e.conv(&x, &w1, &zero).unwrap();
            let y2 = e.conv(&x, &w2, &zero).unwrap();
            for ((l, p), q) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
                let r = a * p + c * q;
                prop_assert!((l - r).abs() <= 1e-13 * r.abs().max(1.0));
            }
        }
    }

    #[test]
    fn elementwise_basics() {
        let mut e = Eager;
        let z = Tensor::zeros(vec![2, 3]);
        assert_eq!(e.tanh(&z), z);
        let x = random(vec![2, 3], 4);
        let ones = Tensor::filled(vec![2, 3], 1.0);
        assert_eq!(e.mul(&x, &ones).unwrap(), x);
        let v = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(e.mean_sq(&v).item(), 12.5);
        assert!(matches!(
            e.add(&x, &Tensor::zeros(vec![3, 2])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn mean_sq_gradient_is_exact() {
        let p0 = random(vec![3, 4], 9);
        let mut params = vec![Parameter::new("p", p0.clone())];
        let mut g = Graph::new();
        let p = g.param(0, &params[0].value);
        let loss = g.mean_sq(&p);
        g.backward(loss, &mut params).unwrap();
        let expected: Vec<f64> = p0.data().iter().map(|v| (2.0 / 12.0) * v).collect();
        assert_eq!(params[0].grad.data(), expected.as_slice());
    }

    #[test]
    fn gradients_accumulate_across_backwards() {
        let mut params = vec![
            Parameter::new("w", random(vec![2, 1, 3], 1)),
            Parameter::new("b", random(vec![2], 2)),
        ];
        let x = random(vec![1, 1, 8], 3);
        let run = |params: &mut Vec<Parameter>| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let w = g.param(0, &params[0].value);
            let b = g.param(1, &params[1].value);
            let y = g.conv(&xv, &w, &b).unwrap();
            let t = g.tanh(&y);
            let loss = g.mean_sq(&t);
            g.backward(loss, params).unwrap();
        };
        run(&mut params);
        let once: Vec<Tensor> = params.iter().map(|p| p.grad.clone()).collect();
        run(&mut params);
        for (p, o) in params.iter().zip(&once) {
            let doubled: Vec<f64> = o.data().iter().map(|v| 2.0 * v).collect();
            assert_eq!(p.grad.data(), doubled.as_slice());
        }
        params.iter_mut().for_each(Parameter::zero_grad);
        assert!(params.iter().all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![2]));
        let y = g.tanh(&x);
        assert!(matches!(g.backward(y, &mut []), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let f = |g: &mut Graph, _v: &[Var]| -> Result<Var> {
            let c = g.constant(Tensor::scalar(3.0));
            Ok(g.mean_sq(&c))
        };
        let r = grad_check(f, &[random(vec![4], 1)], 1e-5).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.max_abs_error, 0.0);
    }

    #[test]
    fn mean_sq_grad_check_is_tight() {
        let f = |g: &mut Graph, v: &[Var]| -> Result<Var> { Ok(g.mean_sq(&v[0])) };
        let r = grad_check(f, &[random(vec![5, 7], 8)], 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-7, "{r:?}");
    }
}
