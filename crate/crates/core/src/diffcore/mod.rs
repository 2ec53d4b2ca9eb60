//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation as it runs. Leaves are either
//! parameters, which receive gradients, or constants, which never do.
//! [`Tape::backward`] walks the record once in reverse from a scalar.
//!
//! ```
//! use topogbm::diffcore::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, -2.0]));
//! let y = tape.mul(x, x).unwrap();
//! let loss = tape.sum(y);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0]);
//! ```

mod check;
pub mod kernels;
mod optim;
mod tape;
mod tensor;

pub use check::{finite_difference_check, finite_difference_check_many, FdReport};
pub use optim::{AdamW, AdamWConfig, BatchStandardizer};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Random values kept at least `gap` away from zero, so relu kinks and
    /// max-pool ties stay out of reach of the finite-difference step.
    fn off_kinks(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
        let mut t = random(rng, shape);
        for v in t.data_mut() {
            *v = v.signum() * (v.abs() + gap);
        }
        t
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(0.0));
        let s = t.sigmoid(x);
        assert_eq!(t.value(s).item(), 0.5);
        assert_eq!(t.backward(s).unwrap().get(x).unwrap().item(), 0.25);

        let y = t.param(Tensor::scalar(-3.0));
        let r = t.relu(y);
        assert_eq!(t.value(r).item(), 0.0);
        assert_eq!(t.backward(r).unwrap().get(y).unwrap().item(), 0.0);

        let a = t.param(Tensor::vector(vec![1.0, 2.0]));
        let b = t.param(Tensor::vector(vec![3.0, 4.0]));
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[4.0, 6.0]);
        let l = t.sum(c);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.get(b).unwrap().data(), &[1.0, 1.0]);

        let bad = t.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(t.add(a, bad), Err(crate::Error::ShapeMismatch(_))));
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let c = t.param(Tensor::scalar(2.0));
        let y = t.mul(c, x).unwrap();
        let l = t.sum(y);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(c).unwrap().item(), 6.0);
        assert_eq!(g.get(x).unwrap().data(), &[2.0; 3]);
    }

    #[test]
    fn backward_rules() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        assert_eq!(t.backward(x).unwrap().get(x).unwrap().item(), 1.0);
        let y = t.add(x, x).unwrap();
        assert_eq!(t.backward(y).unwrap().get(x).unwrap().item(), 2.0);
        let v = t.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(v), Err(crate::Error::NotScalar(s)) if s == vec![2]));
        let c = t.constant(Tensor::scalar(1.0));
        let z = t.mul(c, x).unwrap();
        let g = t.backward(z).unwrap();
        assert!(g.get(c).is_none());
    }

    #[test]
    fn matmul_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let b = t.constant(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[11.0]);
        let m = t.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let eye = t.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let p = t.matmul(m, eye).unwrap();
        assert_eq!(t.value(p), t.value(m));
        assert!(t.matmul(a, a).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = [random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])];
        let r = finite_difference_check_many(&pts, 1e-5, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y2 = t.mul(y, y)?;
            Ok(t.sum(y2))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
    }

    #[test]
    fn conv3d_examples() {
        let mut t = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = t.constant(random(&mut rng, &[1, 3, 4, 5]));
        let one = t.constant(Tensor::new(vec![1, 1, 1, 1, 1], vec![1.0]).unwrap());
        let y = t.conv3d(x, one, None, 1, 0).unwrap();
        assert_eq!(t.value(y), t.value(x));

        let ones = t.constant(Tensor::full(&[1, 3, 3, 3], 1.0));
        let k = t.constant(Tensor::full(&[1, 1, 2, 2, 2], 1.0));
        let y = t.conv3d(ones, k, None, 1, 0).unwrap();
        assert_eq!(t.shape(y), &[1, 2, 2, 2]);
        assert!(t.value(y).data().iter().all(|&v| v == 8.0));

        let wrong_channels = t.constant(Tensor::zeros(&[1, 2, 1, 1, 1]));
        assert!(t.conv3d(x, wrong_channels, None, 1, 0).is_err());
        let too_big = t.constant(Tensor::zeros(&[1, 1, 5, 1, 1]));
        assert!(t.conv3d(x, too_big, None, 1, 0).is_err());
    }

    #[test]
    fn conv3d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
            let pts = [random(&mut rng, &[2, 4, 4, 4]), random(&mut rng, &[3, 2, 3, 3, 3]), random(&mut rng, &[3])];
            let r = finite_difference_check_many(&pts, 1e-5, |t, v| {
                let y = t.conv3d(v[0], v[1], Some(v[2]), stride, pad)?;
                let y2 = t.mul(y, y)?;
                Ok(t.sum(y2))
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "stride {stride} pad {pad}: {}", r.max_rel_error);
        }
    }

    #[test]
    fn conv_transpose_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let k = t.constant(Tensor::full(&[1, 1, 2, 2, 2], 1.0));
        let y = t.conv_transpose3d(x, k, None, 2).unwrap();
        assert_eq!(t.shape(y), &[1, 2, 2, 2]);
        assert!(t.value(y).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn conv_transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (k, s) in [(2, 2), (3, 1), (3, 2)] {
            let w = random(&mut rng, &[3, 2, k, k, k]);
            let x = random(&mut rng, &[2, 7, 6, 5]);
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let wv = t.constant(w.clone());
            let ax = t.conv3d(xv, wv, None, s, 0).unwrap();
            let y = random(&mut rng, t.shape(ax));
            let yv = t.constant(y.clone());
            let aty = t.conv_transpose3d(yv, wv, None, s).unwrap();
            let shape = t.shape(aty).to_vec();
            // Transposed output can be shorter than x when the stride skips
            // trailing voxels; compare on the overlap.
            let mut lhs = t.value(ax).dot(&y);
            let mut rhs = 0.0;
            let [c, d, h, wd] = [shape[0], shape[1], shape[2], shape[3]];
            for ci in 0..c {
                for z in 0..d {
                    for yy in 0..h {
                        for xx in 0..wd {
                            rhs += t.value(aty).data()[((ci * d + z) * h + yy) * wd + xx] * x.data()[((ci * 7 + z) * 6 + yy) * 5 + xx];
                        }
                    }
                }
            }
            let scale = x.dot(&x).sqrt() * y.dot(&y).sqrt();
            lhs -= rhs;
            assert!(lhs.abs() < 1e-6 * scale, "k {k} s {s}: {lhs}");
        }
    }

    #[test]
    fn conv_transpose_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = [random(&mut rng, &[3, 2, 3, 2]), random(&mut rng, &[3, 2, 2, 2, 2]), random(&mut rng, &[2])];
        let r = finite_difference_check_many(&pts, 1e-5, |t, v| {
            let y = t.conv_transpose3d(v[0], v[1], Some(v[2]), 2)?;
            let y2 = t.mul(y, y)?;
            Ok(t.sum(y2))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
    }

    #[test]
    fn maxpool_examples() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::full(&[2, 4, 4, 4], 3.0));
        let p = t.maxpool3d(c).unwrap();
        assert_eq!(t.shape(p), &[2, 2, 2, 2]);
        assert!(t.value(p).data().iter().all(|&v| v == 3.0));

        let x = t.param(Tensor::new(vec![1, 1, 1, 2], vec![1.0, 5.0]).unwrap());
        let p = t.maxpool3d(x).unwrap();
        assert_eq!(t.value(p).data(), &[5.0]);
        let l = t.sum(p);
        assert_eq!(t.backward(l).unwrap().get(x).unwrap().data(), &[0.0, 1.0]);

        let x = t.param(Tensor::new(vec![1, 1, 1, 2], vec![2.0, 2.0]).unwrap());
        let p = t.maxpool3d(x).unwrap();
        let l = t.sum(p);
        assert_eq!(t.backward(l).unwrap().get(x).unwrap().data(), &[1.0, 0.0]);

        let odd = t.constant(Tensor::new(vec![1, 1, 1, 3], vec![1.0, 2.0, -4.0]).unwrap());
        let p = t.maxpool3d(odd).unwrap();
        assert_eq!(t.value(p).data(), &[2.0, -4.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(&[5]));
        let p = t.softmax(z);
        assert!(t.value(p).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = random(&mut rng, &[5]);
        let shifted = Tensor::vector(l.data().iter().map(|v| v + 123.0).collect());
        let (a, b) = (t.constant(l.clone()), t.constant(shifted));
        let (pa, pb) = (t.softmax(a), t.softmax(b));
        for (x, y) in t.value(pa).data().iter().zip(t.value(pb).data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((t.value(pa).data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Jacobian row by row.
        for k in 0..5 {
            let r = finite_difference_check(&l, 1e-6, |t, v| {
                let p = t.softmax(v);
                t.slice(p, k, 1)
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-5, "{}", r.max_rel_error);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::full(&[4], 2.5));
        let y = t.layer_norm(c, None, None).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0));
        let x = t.constant(Tensor::vector(vec![1.0, -1.0]));
        let y = t.layer_norm(x, None, None).unwrap();
        assert!((t.value(y).data()[0] - 1.0).abs() < 1e-5);
        assert!((t.value(y).data()[1] + 1.0).abs() < 1e-5);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = [random(&mut rng, &[6]), random(&mut rng, &[6]), random(&mut rng, &[6]), random(&mut rng, &[6])];
        let r = finite_difference_check_many(&pts, 1e-5, |t, v| {
            let y = t.layer_norm(v[0], Some(v[1]), Some(v[2]))?;
            let w = t.mul(y, v[3])?;
            Ok(t.sum(w))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
    }

    #[test]
    fn fd_checker_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&mut rng, &[10]);
        let r = finite_difference_check(&x, 1e-4, |t, v| {
            let sq = t.mul(v, v)?;
            let s = t.sum(sq);
            Ok(t.scale(s, 0.5))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6);
        let r = finite_difference_check(&Tensor::scalar(0.0), 1e-4, |t, v| Ok(t.sigmoid(v))).unwrap();
        assert!((r.numeric[0].item() - 0.25).abs() < 1e-6);
    }

    #[test]
    fn conv_relu_pool_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..3 {
            let pts = [off_kinks(&mut rng, &[2, 4, 4, 4], 0.05), random(&mut rng, &[3, 2, 1, 1, 1])];
            let r = finite_difference_check_many(&pts, 1e-6, |t, v| {
                let y = t.conv3d(v[0], v[1], None, 1, 0)?;
                let r = t.relu(y);
                let p = t.maxpool3d(r)?;
                let s = t.log_softmax(p);
                let m = t.mean(s);
                let sq = t.mul(p, p)?;
                let q = t.mean(sq);
                t.add(m, q)
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-3, "{}", r.max_rel_error);
        }
    }

    #[test]
    fn reshape_slice_concat_custom() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let r = t.reshape(x, &[2, 2]).unwrap();
        let s = t.slice(r, 1, 2).unwrap();
        let c = t.concat(&[s, x]);
        assert_eq!(t.value(c).data(), &[2.0, 3.0, 1.0, 2.0, 3.0, 4.0]);
        let l = t.custom_scalar(0.0, vec![(c, Tensor::vector(vec![1.0, 1.0, 0.0, 0.0, 0.0, 10.0]))]).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 10.0]);
        assert!(t.reshape(x, &[3]).is_err());
    }

    #[test]
    fn deterministic_gradients() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut t = Tape::new();
            let x = t.param(random(&mut rng, &[2, 5, 5, 5]));
            let w = t.param(random(&mut rng, &[4, 2, 3, 3, 3]));
            let y = t.conv3d(x, w, None, 1, 1).unwrap();
            let y = t.relu(y);
            let l = t.mean(y);
            let g = t.backward(l).unwrap();
            (g.get(x).unwrap().clone(), g.get(w).unwrap().clone())
        };
        assert_eq!(run(), run());
    }
}
