use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffeo::Vector;

/// Product of Householder reflections `H_{m-1} ... H_0`, `H_v = I - 2 v v^T / v^T v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mix {
    /// One reflection vector per column, applied left to right.
    vectors: DMatrix<f64>,
}

impl Mix {
    /// Even reflection count so the product is a rotation.
    pub fn reflection_count(dim: usize) -> usize {
        2 * dim.div_ceil(2)
    }

    /// Pairs of equal reflections, which cancel.
    pub fn identity(dim: usize) -> Self {
        let m = Self::reflection_count(dim);
        Self {
            vectors: DMatrix::from_fn(dim, m, |i, j| if i == (j / 2) % dim { 1.0 } else { 0.0 }),
        }
    }

    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let m = Self::reflection_count(dim);
        Self {
            vectors: DMatrix::from_fn(dim, m, |_, _| rng.sample(StandardNormal)),
        }
    }

    pub fn from_vectors(vectors: DMatrix<f64>) -> Self {
        Self { vectors }
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    fn reflect(v: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        let s = v.norm_squared();
        if s == 0.0 {
            return x.clone();
        }
        let a = v.tr_mul(x);
        x - v * a * (2.0 / s)
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.vectors
            .column_iter()
            .fold(x.clone(), |h, v| Self::reflect(&v.into_owned(), &h))
    }

    fn apply_inverse(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.vectors
            .column_iter()
            .rev()
            .fold(y.clone(), |h, v| Self::reflect(&v.into_owned(), &h))
    }

    fn backward(&self, x: &DMatrix<f64>, g: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let m = self.vectors.ncols();
        let mut inputs = Vec::with_capacity(m);
        let mut h = x.clone();
        for v in self.vectors.column_iter() {
            let next = Self::reflect(&v.into_owned(), &h);
            inputs.push(h);
            h = next;
        }
        let mut grad = DMatrix::zeros(self.vectors.nrows(), m);
        let mut g = g.clone();
        for r in (0..m).rev() {
            let v = self.vectors.column(r).into_owned();
            let s = v.norm_squared();
            if s > 0.0 {
                let xin = &inputs[r];
                let a = v.tr_mul(xin);
                let b = v.tr_mul(&g);
                let ab = a.dot(&b);
                let dv = (&g * a.transpose() + xin * b.transpose()) * (-2.0 / s) + &v * (4.0 * ab / (s * s));
                grad.set_column(r, &dv);
            }
            g = Self::reflect(&v, &g);
        }
        (g, grad.as_slice().to_vec())
    }
}

/// `y_u = x_u + W2 tanh(W1 x_c + b1) + b2` on the coordinates `u` with `i % 2 == parity`,
/// conditioned on the remaining coordinates `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    dim: usize,
    parity: usize,
    update: Vec<usize>,
    cond: Vec<usize>,
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
}

impl Coupling {
    /// Random first layer, zero output layer: the coupling starts as the identity.
    pub fn new<R: Rng>(dim: usize, parity: usize, hidden: usize, rng: &mut R) -> Self {
        let mut c = Self::zeros(dim, parity, hidden);
        let scale = 1.0 / (c.cond.len() as f64).sqrt();
        c.w1 = DMatrix::from_fn(hidden, c.cond.len(), |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
        c
    }

    pub fn zeros(dim: usize, parity: usize, hidden: usize) -> Self {
        assert!(parity < 2, "parity is 0 or 1");
        let update: Vec<usize> = (0..dim).filter(|i| i % 2 == parity).collect();
        let cond: Vec<usize> = (0..dim).filter(|i| i % 2 != parity).collect();
        Self {
            dim,
            parity,
            w1: DMatrix::zeros(hidden, cond.len()),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(update.len(), hidden),
            b2: DVector::zeros(update.len()),
            update,
            cond,
        }
    }

    pub fn parity(&self) -> usize {
        self.parity
    }

    pub fn hidden(&self) -> usize {
        self.b1.len()
    }

    fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn hidden_act(&self, xc: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pre = &self.w1 * xc;
        for mut col in pre.column_iter_mut() {
            col += &self.b1;
        }
        pre.map(f64::tanh)
    }

    fn shift(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let xc = x.select_rows(&self.cond);
        let h = self.hidden_act(&xc);
        let mut out = &self.w2 * &h;
        for mut col in out.column_iter_mut() {
            col += &self.b2;
        }
        (xc, h, out)
    }

    fn add_rows(&self, x: &DMatrix<f64>, delta: &DMatrix<f64>, sign: f64) -> DMatrix<f64> {
        let mut y = x.clone();
        for (k, &i) in self.update.iter().enumerate() {
            let mut row = y.row_mut(i);
            row += delta.row(k) * sign;
        }
        y
    }

    /// `W2 diag(1 - h^2) W1 t_c` at the conditioning values `xc`.
    fn shift_jvp(&self, xc: &DVector<f64>, tc: &DVector<f64>) -> DVector<f64> {
        let h = self.hidden_act(&DMatrix::from_column_slice(xc.len(), 1, xc.as_slice()));
        let inner = (&self.w1 * tc).component_mul(&h.column(0).map(|v| 1.0 - v * v));
        &self.w2 * inner
    }

    /// `W1^T diag(1 - h^2) W2^T t_u`.
    fn shift_vjp(&self, xc: &DVector<f64>, tu: &DVector<f64>) -> DVector<f64> {
        let h = self.hidden_act(&DMatrix::from_column_slice(xc.len(), 1, xc.as_slice()));
        let inner = self.w2.tr_mul(tu).component_mul(&h.column(0).map(|v| 1.0 - v * v));
        self.w1.tr_mul(&inner)
    }

    fn backward(&self, x: &DMatrix<f64>, g: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let (xc, h, _) = self.shift(x);
        let gu = g.select_rows(&self.update);
        let dw2 = &gu * h.transpose();
        let db2 = gu.column_sum();
        let dpre = self.w2.tr_mul(&gu).component_mul(&h.map(|v| 1.0 - v * v));
        let dw1 = &dpre * xc.transpose();
        let db1 = dpre.column_sum();
        let gxc = self.w1.tr_mul(&dpre);
        let mut gx = g.clone();
        for (k, &i) in self.cond.iter().enumerate() {
            let mut row = gx.row_mut(i);
            row += gxc.row(k);
        }
        let mut grads = Vec::with_capacity(self.num_params());
        grads.extend_from_slice(dw1.as_slice());
        grads.extend_from_slice(db1.as_slice());
        grads.extend_from_slice(dw2.as_slice());
        grads.extend_from_slice(db2.as_slice());
        (gx, grads)
    }
}

/// One layer of a [`super::CouplingFlow`].
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Mix(Mix),
    Coupling(Coupling),
    /// `y_i = x_{perm[i]}`.
    Permutation(Vec<usize>),
}

impl Layer {
    pub fn dim(&self) -> usize {
        match self {
            Layer::Mix(m) => m.vectors.nrows(),
            Layer::Coupling(c) => c.dim,
            Layer::Permutation(p) => p.len(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Layer::Mix(m) => m.vectors.len(),
            Layer::Coupling(c) => c.num_params(),
            Layer::Permutation(_) => 0,
        }
    }

    pub(crate) fn write_params(&self, out: &mut Vec<f64>) {
        match self {
            Layer::Mix(m) => out.extend_from_slice(m.vectors.as_slice()),
            Layer::Coupling(c) => {
                out.extend_from_slice(c.w1.as_slice());
                out.extend_from_slice(c.b1.as_slice());
                out.extend_from_slice(c.w2.as_slice());
                out.extend_from_slice(c.b2.as_slice());
            }
            Layer::Permutation(_) => {}
        }
    }

    pub(crate) fn read_params(&mut self, p: &[f64]) {
        match self {
            Layer::Mix(m) => m.vectors.as_mut_slice().copy_from_slice(p),
            Layer::Coupling(c) => {
                let mut offset = 0;
                for dst in [
                    c.w1.as_mut_slice(),
                    c.b1.as_mut_slice(),
                    c.w2.as_mut_slice(),
                    c.b2.as_mut_slice(),
                ] {
                    let n = dst.len();
                    dst.copy_from_slice(&p[offset..offset + n]);
                    offset += n;
                }
            }
            Layer::Permutation(_) => {}
        }
    }

    pub(crate) fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Layer::Mix(m) => m.apply(x),
            Layer::Coupling(c) => {
                let (_, _, shift) = c.shift(x);
                c.add_rows(x, &shift, 1.0)
            }
            Layer::Permutation(p) => x.select_rows(p),
        }
    }

    pub(crate) fn inverse(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Layer::Mix(m) => m.apply_inverse(y),
            Layer::Coupling(c) => {
                // Conditioning coordinates pass through unchanged.
                let (_, _, shift) = c.shift(y);
                c.add_rows(y, &shift, -1.0)
            }
            Layer::Permutation(p) => {
                let mut x = y.clone();
                for (i, &src) in p.iter().enumerate() {
                    x.set_row(src, &y.row(i));
                }
                x
            }
        }
    }

    /// Input gradient and parameter gradient of `<g, layer(x)>`.
    pub(crate) fn backward(&self, x: &DMatrix<f64>, g: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
        match self {
            Layer::Mix(m) => m.backward(x, g),
            Layer::Coupling(c) => c.backward(x, g),
            Layer::Permutation(_) => (self.inverse(g), Vec::new()),
        }
    }

    fn column(v: &Vector) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v.as_slice())
    }

    fn flat(m: DMatrix<f64>) -> Vector {
        DVector::from_column_slice(m.as_slice())
    }

    pub(crate) fn jvp(&self, x: &Vector, v: &Vector) -> Vector {
        match self {
            Layer::Coupling(c) => {
                let tu = c.shift_jvp(&x.select_rows(&c.cond), &v.select_rows(&c.cond));
                let mut out = v.clone();
                for (k, &i) in c.update.iter().enumerate() {
                    out[i] += tu[k];
                }
                out
            }
            _ => Self::flat(self.forward(&Self::column(v))),
        }
    }

    pub(crate) fn inverse_jvp(&self, y: &Vector, w: &Vector) -> Vector {
        match self {
            Layer::Coupling(c) => {
                let tu = c.shift_jvp(&y.select_rows(&c.cond), &w.select_rows(&c.cond));
                let mut out = w.clone();
                for (k, &i) in c.update.iter().enumerate() {
                    out[i] -= tu[k];
                }
                out
            }
            _ => Self::flat(self.inverse(&Self::column(w))),
        }
    }

    /// Transposed differential of the layer inverse at the output point `y`.
    pub(crate) fn inverse_vjp(&self, y: &Vector, w: &Vector) -> Vector {
        match self {
            Layer::Coupling(c) => {
                let tc = c.shift_vjp(&y.select_rows(&c.cond), &w.select_rows(&c.update));
                let mut out = w.clone();
                for (k, &i) in c.cond.iter().enumerate() {
                    out[i] -= tc[k];
                }
                out
            }
            // Orthogonal layers: the transposed inverse is the forward map.
            _ => Self::flat(self.forward(&Self::column(w))),
        }
    }
}
