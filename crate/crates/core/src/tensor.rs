//! Dense f64 buffers and the handful of kernels the model needs.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Symmetric uniform initialization with bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn fill_uniform<R: Rng + ?Sized>(&mut self, fan_in: usize, fan_out: usize, rng: &mut R) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for x in &mut self.data {
            *x = rng.random_range(-a..=a);
        }
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }
}

/// `y = W x` for a row-major `[out, in]` matrix.
pub fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(cols, x.len());
    (0..rows)
        .map(|r| dot(&w.data[r * cols..(r + 1) * cols], x))
        .collect()
}

/// `y = Wᵀ d`.
pub fn matvec_t(w: &Tensor, d: &[f64]) -> Vec<f64> {
    let (rows, cols) = (w.shape[0], w.shape[1]);
    debug_assert_eq!(rows, d.len());
    let mut out = vec![0.0; cols];
    for (r, dr) in d.iter().enumerate() {
        if *dr == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w.data[r * cols..(r + 1) * cols]) {
            *o += dr * wv;
        }
    }
    out
}

/// `G += d xᵀ`.
pub fn add_outer(g: &mut Tensor, d: &[f64], x: &[f64]) {
    let cols = g.shape[1];
    for (r, dr) in d.iter().enumerate() {
        if *dr == 0.0 {
            continue;
        }
        for (gv, xv) in g.data[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *gv += dr * xv;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Backward pass of softmax: `dx_j = p_j (dp_j - Σ_i p_i dp_i)`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(pj, dj)| pj * (dj - inner)).collect()
}

/// Affine map `z = W x + b` with `W` shaped `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Affine {
            weight: Tensor::zeros(&[n_out, n_in]),
            bias: Tensor::zeros(&[n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut z = matvec(&self.weight, x);
        add_into(&mut z, &self.bias.data);
        z
    }

    /// `tanh(W x + b)`.
    pub fn forward_tanh(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).into_iter().map(f64::tanh).collect()
    }

    /// Accumulates parameter gradients for upstream `dz` and returns `dx`.
    pub fn backward(&self, x: &[f64], dz: &[f64], grad: &mut Affine) -> Vec<f64> {
        add_outer(&mut grad.weight, dz, x);
        add_into(&mut grad.bias.data, dz);
        matvec_t(&self.weight, dz)
    }

    /// Backward through `y = tanh(W x + b)` given the forward output `y`.
    pub fn backward_tanh(&self, x: &[f64], y: &[f64], dy: &[f64], grad: &mut Affine) -> Vec<f64> {
        let dz: Vec<f64> = y.iter().zip(dy).map(|(yv, d)| d * (1.0 - yv * yv)).collect();
        self.backward(x, &dz, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_normalizes() {
        let p = softmax(&[1.0, -2.0, 700.0, 3.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn transpose_product_matches_explicit() {
        let w = Tensor {
            shape: vec![2, 3],
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        assert_eq!(matvec(&w, &[1.0, 0.0, -1.0]), vec![-2.0, -2.0]);
        assert_eq!(matvec_t(&w, &[1.0, -1.0]), vec![-3.0, -3.0, -3.0]);
    }
}
