use super::layers::Linear;
use super::Ctx;
use crate::autodiff::{Float, ParamStore, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// `rows × cols` boolean mask, `true` = attendable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    keep: Vec<bool>,
}

impl AttentionMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            keep: vec![true; rows * cols],
        }
    }

    /// Lower-triangular: query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let keep = (0..n).flat_map(|i| (0..n).map(move |j| j <= i)).collect();
        Self { rows: n, cols: n, keep }
    }

    /// Keys at positions `>= valid` are hidden from every query.
    pub fn padding(rows: usize, cols: usize, valid: usize) -> Self {
        let keep = (0..rows).flat_map(|_| (0..cols).map(move |j| j < valid)).collect();
        Self { rows, cols, keep }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let keep = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| f(i, j))
            .collect();
        Self { rows, cols, keep }
    }

    pub fn and(&self, other: &AttentionMask) -> Result<Self> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Dimension {
                op: "mask_and",
                lhs: vec![self.rows, self.cols],
                rhs: vec![other.rows, other.cols],
            });
        }
        let keep = self.keep.iter().zip(&other.keep).map(|(a, b)| *a && *b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            keep,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.keep[row * self.cols + col]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.keep
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub n_heads: usize,
    pub d_k: usize,
    pub d_v: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        d_model: usize,
        n_heads: usize,
        d_k: usize,
        d_v: usize,
        rng: &mut SeededRng,
    ) -> Self {
        Self {
            q: Linear::new(store, &format!("{prefix}.q"), d_model, n_heads * d_k, rng),
            k: Linear::new(store, &format!("{prefix}.k"), d_model, n_heads * d_k, rng),
            v: Linear::new(store, &format!("{prefix}.v"), d_model, n_heads * d_v, rng),
            out: Linear::new(store, &format!("{prefix}.out"), n_heads * d_v, d_model, rng),
            n_heads,
            d_k,
            d_v,
        }
    }

    pub fn forward<T: Float>(
        &self,
        ctx: &mut Ctx<'_, T>,
        query: Var,
        memory: Var,
        mask: &AttentionMask,
    ) -> Result<Var> {
        Ok(self.forward_with_weights(ctx, query, memory, mask)?.0)
    }

    /// Also returns the per-head `len_q × len_k` attention weights.
    pub fn forward_with_weights<T: Float>(
        &self,
        ctx: &mut Ctx<'_, T>,
        query: Var,
        memory: Var,
        mask: &AttentionMask,
    ) -> Result<(Var, Vec<Var>)> {
        let (lq, lk) = (ctx.tape.shape(query)[0], ctx.tape.shape(memory)[0]);
        if mask.dims() != (lq, lk) {
            return Err(Error::Dimension {
                op: "attention_mask",
                lhs: vec![lq, lk],
                rhs: vec![mask.rows, mask.cols],
            });
        }
        if let Some(row) = (0..lq).find(|&i| (0..lk).all(|j| !mask.allows(i, j))) {
            return Err(Error::Input(format!("attention row {row} has no attendable key")));
        }
        let q = self.q.forward(ctx, query)?;
        let k = self.k.forward(ctx, memory)?;
        let v = self.v.forward(ctx, memory)?;
        let scale = T::of(1.0 / (self.d_k as f64).sqrt());
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = ctx.tape.narrow(q, 1, h * self.d_k, self.d_k)?;
            let kh = ctx.tape.narrow(k, 1, h * self.d_k, self.d_k)?;
            let vh = ctx.tape.narrow(v, 1, h * self.d_v, self.d_v)?;
            let kt = ctx.tape.transpose(kh)?;
            let scores = ctx.tape.matmul(qh, kt)?;
            let scores = ctx.tape.scale(scores, scale);
            let scores = ctx.tape.mask_fill(scores, mask.as_slice(), T::neg_infinity())?;
            let w = ctx.tape.softmax(scores, 1)?;
            heads.push(ctx.tape.matmul(w, vh)?);
            weights.push(w);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            ctx.tape.concat(&heads, 1)?
        };
        Ok((self.out.forward(ctx, joined)?, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    fn identity_attention(store: &mut ParamStore<f64>, d: usize) -> MultiHeadAttention {
        let mut rng = SeededRng::new(3);
        let mha = MultiHeadAttention::new(store, "mha", d, 1, d, d, &mut rng);
        let eye: Vec<f64> = (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect();
        for lin in [&mha.v, &mha.out] {
            store.get_mut(lin.w).data_mut().copy_from_slice(&eye);
        }
        mha
    }

    #[test]
    fn causal_mask_is_lower_triangular() {
        let m = AttentionMask::causal(4);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.allows(i, j), j <= i);
            }
        }
        let p = AttentionMask::padding(2, 5, 3);
        assert!(p.allows(1, 2) && !p.allows(1, 3));
    }

    #[test]
    fn identical_keys_average_the_values() {
        let mut store = ParamStore::new();
        let mha = identity_attention(&mut store, 3);
        // Zero key projection makes every score equal.
        store.get_mut(mha.k.w).data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store);
        let q = ctx.tape.constant(Tensor::from_rows(&[&[0.3, -1.0, 2.0]]).unwrap());
        let mem = ctx
            .tape
            .constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[3.0, 0.0, -1.0]]).unwrap());
        let out = mha.forward(&mut ctx, q, mem, &AttentionMask::full(1, 2)).unwrap();
        let got = tape.value(out);
        for (g, e) in got.iter().zip([2.0, 1.0, 1.0]) {
            assert!((g - e).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn single_admitted_key_returns_its_value() {
        let mut store = ParamStore::new();
        let mha = identity_attention(&mut store, 3);
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store);
        let q = ctx
            .tape
            .constant(Tensor::from_rows(&[&[0.3, -1.0, 2.0], &[1.0, 1.0, 1.0]]).unwrap());
        let mem = ctx
            .tape
            .constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[3.0, 0.0, -1.0], &[7.0, 8.0, 9.0]]).unwrap());
        let mask = AttentionMask::from_fn(2, 3, |_, j| j == 1);
        let out = mha.forward(&mut ctx, q, mem, &mask).unwrap();
        assert_eq!(tape.value(out), &[3.0, 0.0, -1.0, 3.0, 0.0, -1.0]);
    }

    #[test]
    fn weights_are_distributions_and_empty_rows_fail() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = SeededRng::new(9);
        let mha = MultiHeadAttention::new(&mut store, "mha", 8, 2, 4, 4, &mut rng);
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store);
        let x = ctx
            .tape
            .constant(Tensor::new(vec![5, 8], (0..40).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap());
        let (_, w) = mha
            .forward_with_weights(&mut ctx, x, x, &AttentionMask::causal(5))
            .unwrap();
        for head in w {
            for row in ctx.tape.value(head).chunks(5) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let none = AttentionMask::from_fn(5, 5, |i, _| i != 2);
        assert!(matches!(mha.forward(&mut ctx, x, x, &none), Err(Error::Input(_))));
    }
}
