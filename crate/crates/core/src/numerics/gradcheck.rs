//! Central finite-difference checks for reverse-mode gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps round-off on vanishing
/// components from dominating.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Compares `analytic` against central differences of `f` at `point` over the
/// given coordinates (all when `coords` is `None`); returns the max relative error.
pub fn check_coords(
    f: &mut dyn FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    coords: Option<&[usize]>,
    eps: f64,
) -> f64 {
    assert_eq!(point.len(), analytic.len());
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x);
        x[i] = orig - eps;
        let down = f(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Gradient check for a scalar function built on the tape from a single
/// parameter tensor.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, eps: f64) -> f64
where
    F: Fn(&mut Tape<f64>, Var) -> Var,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let y = f(&mut tape, x);
    tape.backward(y);
    let analytic = tape
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.len()]);
    let shape = point.shape().to_vec();
    let mut eval = |v: &[f64]| {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(shape.clone(), v.to_vec()).unwrap());
        let y = f(&mut tape, x);
        tape.value(y).data()[0]
    };
    check_coords(&mut eval, point.data(), &analytic, None, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_at_three() {
        let x = Tensor::from_f64(&[1], &[3.0]).unwrap();
        let err = grad_check(
            |t, x| {
                let y = t.mul(x, x);
                t.sum_all(y)
            },
            &x,
            1e-5,
        );
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn three_class_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let target = rng.gen_range(0..3);
            let x = Tensor::from_f64(&[1, 3], &v).unwrap();
            let err = grad_check(|t, x| t.cross_entropy(x, &[target]), &x, 1e-5);
            assert!(err < 1e-4, "{err}");
        }
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    /// Weights a tensor by fixed random coefficients so every output element
    /// contributes to the scalar.
    fn probe(t: &mut Tape<f64>, y: Var, rng: &mut ChaCha8Rng) -> Var {
        let w = random(rng, t.shape(y));
        let w = t.constant(w);
        let p = t.mul(y, w);
        t.sum_all(p)
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let seed = rng.gen::<u64>();
            let ops: Vec<Box<dyn Fn(&mut Tape<f64>, Var) -> Var>> = vec![
                // matmul + bias + gelu
                Box::new(move |t, x| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let w = t.constant(random(&mut r, &[4, 3]));
                    let b = t.constant(random(&mut r, &[3]));
                    let y = t.linear(x, w, b);
                    let y = t.gelu(y);
                    probe(t, y, &mut r)
                }),
                // weights as the differentiated input
                Box::new(move |t, w| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let x = t.constant(random(&mut r, &[2, 3, 2]));
                    let w = t.reshape(w, &[2, 12]);
                    let w = t.gather(w, &[0]);
                    let w = t.reshape(w, &[2, 6]);
                    let y = t.matmul(x, w);
                    probe(t, y, &mut r)
                }),
                // layer norm with parameters
                Box::new(move |t, x| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let g = t.constant(random(&mut r, &[4]));
                    let b = t.constant(random(&mut r, &[4]));
                    let y = t.layer_norm(x, g, b);
                    probe(t, y, &mut r)
                }),
                // permute / bmm / softmax
                Box::new(move |t, x| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let x3 = t.reshape(x, &[2, 3, 4]);
                    let p = t.permute(x3, &[0, 2, 1]);
                    let s = t.bmm(x3, p, false);
                    let s = t.softmax(s);
                    let o = t.bmm(s, x3, false);
                    probe(t, o, &mut r)
                }),
                // attention with transposed keys and broadcast adds
                Box::new(move |t, x| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let x3 = t.reshape(x, &[3, 2, 4]);
                    let pe = t.constant(random(&mut r, &[1, 2, 4]));
                    let e = t.constant(random(&mut r, &[3, 1, 4]));
                    let h = t.add_broadcast(x3, pe);
                    let h = t.add_broadcast(h, e);
                    let o = crate::numerics::scaled_dot_attention(t, h, x3, h, None).unwrap();
                    let m = t.mean_axis(o, 1);
                    probe(t, m, &mut r)
                }),
                // concat, concat_rows, fill, cross-entropy
                Box::new(move |t, x| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let a = t.gather(x, &[0, 2, 2]);
                    let b = t.gather(x, &[1, 1, 0]);
                    let c = t.concat(&[a, b]);
                    let d = t.concat_rows(&[c, c]);
                    let s = t.scale(d, 0.7);
                    let f = t.fill_last(s, &[7], -1e9);
                    let _ = &mut r;
                    t.cross_entropy(f, &[0, 3, 6, 1, 2, 5])
                }),
                // broadcast where the differentiated input is the broadcast operand
                Box::new(move |t, x| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    let base = t.constant(random(&mut r, &[3, 5, 4]));
                    let e = t.reshape(x, &[3, 1, 4]);
                    let h = t.add_broadcast(base, e);
                    let h = t.relu(h);
                    let h = t.add(h, base);
                    probe(t, h, &mut r)
                }),
            ];
            let op = &ops[trial % ops.len()];
            let shape: &[usize] = match trial % ops.len() {
                0 => &[5, 4],
                1 => &[2, 2, 6],
                2 => &[3, 4],
                3 => &[24],
                4 => &[24],
                5 => &[3, 4],
                _ => &[12],
            };
            let x = random(&mut rng, shape);
            let err = grad_check(|t, v| op(t, v), &x, 1e-5);
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }
}
