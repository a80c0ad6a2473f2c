use super::real::Real;
use super::tape::{Tape, Var};
use super::tensor::{Tensor, MASK_VALUE};
use crate::error::{Error, Result};

/// Attend/blocked pattern over `[queries, keys]`, shared across the batch, or
/// `[batch, queries, keys]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    shape: Vec<usize>,
    blocked: Vec<bool>,
}

impl AttentionMask {
    pub fn new(shape: Vec<usize>, blocked: Vec<bool>) -> Result<Self> {
        if !(shape.len() == 2 || shape.len() == 3) {
            return Err(Error::Shape(format!("mask must be 2-d or 3-d, got {shape:?}")));
        }
        if shape.iter().product::<usize>() != blocked.len() {
            return Err(Error::Shape(format!(
                "mask shape {shape:?} does not match {} entries",
                blocked.len()
            )));
        }
        Ok(Self { shape, blocked })
    }

    /// Blocks every key at or beyond `valid` (right padding).
    pub fn key_padding(queries: usize, keys: usize, valid: usize) -> Self {
        let blocked = (0..queries * keys).map(|i| i % keys >= valid).collect();
        Self {
            shape: vec![queries, keys],
            blocked,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn additive<R: Real>(&self, batch: usize, m: usize, n: usize) -> Result<Tensor<R>> {
        let (mb, mm, mn) = match self.shape.as_slice() {
            [a, b] => (1, *a, *b),
            [a, b, c] => (*a, *b, *c),
            _ => unreachable!(),
        };
        if mm != m || mn != n || !(mb == 1 || mb == batch) {
            return Err(Error::Shape(format!(
                "mask {:?} incompatible with scores [{batch}, {m}, {n}]",
                self.shape
            )));
        }
        let per = m * n;
        let mut data = Vec::with_capacity(batch * per);
        for b in 0..batch {
            let src = if mb == 1 { 0 } else { b * per };
            let rows = &self.blocked[src..src + per];
            for row in rows.chunks_exact(n) {
                if row.iter().all(|&x| x) {
                    return Err(Error::InvalidArgument(
                        "attention mask blocks every key for some query".into(),
                    ));
                }
            }
            data.extend(rows.iter().map(|&x| {
                if x {
                    R::from_f64_lossy(MASK_VALUE)
                } else {
                    R::zero()
                }
            }));
        }
        Tensor::new(vec![batch, m, n], data)
    }
}

fn as_batched(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *shape {
        [m, d] => Ok((1, m, d)),
        [b, m, d] => Ok((b, m, d)),
        _ => Err(Error::Shape(format!(
            "{what} must be [len, dim] or [batch, len, dim], got {shape:?}"
        ))),
    }
}

/// `softmax(q k^T / sqrt(d_k) + mask) v` recorded on the tape.
///
/// `q [B, m, d_k]`, `k [B, n, d_k]`, `v [B, n, d_v]`; rank-2 inputs are treated as
/// a batch of one. Blocked positions get exactly zero weight.
pub fn scaled_dot_attention<R: Real>(
    tape: &mut Tape<R>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<Var> {
    let rank = tape.shape(q).len();
    let (qb, m, dk) = as_batched(tape.shape(q), "q")?;
    let (kb, n, kdk) = as_batched(tape.shape(k), "k")?;
    let (vb, vn, dv) = as_batched(tape.shape(v), "v")?;
    if kdk != dk {
        return Err(Error::Shape(format!("q has d_k={dk} but k has {kdk}")));
    }
    if qb != kb || kb != vb {
        return Err(Error::Shape(format!("batch sizes differ: {qb}, {kb}, {vb}")));
    }
    if vn != n {
        return Err(Error::Shape(format!("k has {n} positions but v has {vn}")));
    }
    if tape.shape(k).len() != rank || tape.shape(v).len() != rank {
        return Err(Error::Shape("q, k, v must share rank".into()));
    }
    let (q3, k3, v3) = if rank == 2 {
        (
            tape.reshape(q, &[1, m, dk]),
            tape.reshape(k, &[1, n, dk]),
            tape.reshape(v, &[1, n, dv]),
        )
    } else {
        (q, k, v)
    };
    let scores = tape.bmm(q3, k3, true);
    let scale = R::one() / R::from_usize(dk).unwrap().sqrt();
    let mut scores = tape.scale(scores, scale);
    if let Some(mask) = mask {
        let add = mask.additive::<R>(qb, m, n)?;
        scores = tape.add_const(scores, &add);
    }
    let weights = tape.softmax(scores);
    let out = tape.bmm(weights, v3, false);
    Ok(if rank == 2 {
        tape.reshape(out, &[m, dv])
    } else {
        out
    })
}

/// Gradient-free convenience wrapper around [`scaled_dot_attention`].
pub fn attention<R: Real>(
    q: &Tensor<R>,
    k: &Tensor<R>,
    v: &Tensor<R>,
    mask: Option<&AttentionMask>,
) -> Result<Tensor<R>> {
    let mut tape = Tape::new();
    let (q, k, v) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let out = scaled_dot_attention(&mut tape, q, k, v, mask)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identical_values_pass_through() {
        let q = t(&[3, 2], &[0.3, -1.0, 2.0, 0.1, -0.5, 0.7]);
        let k = t(&[4, 2], &[1.0, 0.0, 0.0, 1.0, -1.0, 2.0, 0.5, 0.5]);
        let v = t(&[4, 3], &[1.0, 2.0, 3.0].repeat(4));
        let out = attention(&q, &k, &v, None).unwrap();
        for row in out.rows() {
            for (a, b) in row.iter().zip([1.0, 2.0, 3.0]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_key_returns_value() {
        let q = t(&[2, 2], &[5.0, -3.0, 0.0, 1.0]);
        let k = t(&[1, 2], &[0.2, 0.9]);
        let v = t(&[1, 2], &[4.0, -7.0]);
        let out = attention(&q, &k, &v, None).unwrap();
        assert_eq!(out.data(), &[4.0, -7.0, 4.0, -7.0]);
    }

    #[test]
    fn hand_evaluated_two_key_case() {
        // scores [0, ln 3] -> weights [1/4, 3/4] -> 0*1/4 + 4*3/4 = 3
        let q = t(&[1, 1], &[1.0]);
        let k = t(&[2, 1], &[0.0, 3f64.ln()]);
        let v = t(&[2, 1], &[0.0, 4.0]);
        let out = attention(&q, &k, &v, None).unwrap();
        let w1 = 3f64.ln().exp() / (1.0 + 3f64.ln().exp());
        assert!((out.data()[0] - 4.0 * w1).abs() < 1e-14);
        assert!((out.data()[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn all_but_one_blocked_selects_that_row() {
        let q = t(&[2, 2], &[1.0, 2.0, -3.0, 0.5]);
        let k = t(&[3, 2], &[9.0, 9.0, 0.0, 0.0, -9.0, 1.0]);
        let v = t(&[3, 2], &[1.0, 1.0, 7.0, -2.0, 3.0, 3.0]);
        let mask = AttentionMask::new(vec![2, 3], vec![true, false, true, true, false, true]).unwrap();
        let out = attention(&q, &k, &v, Some(&mask)).unwrap();
        assert_eq!(out.data(), &[7.0, -2.0, 7.0, -2.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let q = t(&[1, 2], &[1.0, 2.0]);
        let k = t(&[2, 3], &[0.0; 6]);
        let v = t(&[2, 1], &[0.0; 2]);
        assert!(matches!(attention(&q, &k, &v, None), Err(Error::Shape(_))));
        let k = t(&[2, 2], &[0.0; 4]);
        let v = t(&[3, 1], &[0.0; 3]);
        assert!(attention(&q, &k, &v, None).is_err());
    }

    #[test]
    fn fully_blocked_row_rejected() {
        let q = t(&[1, 1], &[1.0]);
        let k = t(&[2, 1], &[0.0, 1.0]);
        let v = t(&[2, 1], &[0.0, 1.0]);
        let mask = AttentionMask::new(vec![1, 2], vec![true, true]).unwrap();
        assert!(attention(&q, &k, &v, Some(&mask)).is_err());
    }

    #[test]
    fn key_padding_ignores_padded_keys() {
        let q = t(&[2, 1], &[0.4, -0.2]);
        let k = t(&[3, 1], &[0.1, 0.2, 100.0]);
        let v = t(&[3, 1], &[1.0, 2.0, 1000.0]);
        let padded = attention(&q, &k, &v, Some(&AttentionMask::key_padding(2, 3, 2))).unwrap();
        let k2 = t(&[2, 1], &[0.1, 0.2]);
        let v2 = t(&[2, 1], &[1.0, 2.0]);
        let unpadded = attention(&q, &k2, &v2, None).unwrap();
        for (a, b) in padded.data().iter().zip(unpadded.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
