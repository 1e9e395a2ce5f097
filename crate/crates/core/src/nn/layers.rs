//! Forward and analytic backward passes for the handful of layer types the
//! models use. Every backward here is certified against central differences
//! in the tests below.

use super::{tensor::dot, NnError, Tensor};

/// How the bias of an affine map is broadcast.
#[derive(Clone, Copy, Debug)]
pub enum Bias<'a> {
    None,
    /// Length `k`: one value per output column.
    PerColumn(&'a Tensor),
    /// Length `n`: one scalar per input row, added to every column of that row.
    PerRow(&'a Tensor),
}

/// `y = x W + b` for `x: n×d`, `W: d×k`.
pub fn linear_forward(x: &Tensor, w: &Tensor, bias: Bias<'_>) -> Result<Tensor, NnError> {
    let mut y = x.matmul(w)?;
    let (n, k) = (y.rows(), y.cols());
    match bias {
        Bias::None => {}
        Bias::PerColumn(b) => {
            if b.len() != k {
                return Err(NnError::ShapeMismatch(format!(
                    "per-column bias of length {} for {k} outputs",
                    b.len()
                )));
            }
            for i in 0..n {
                for (o, bv) in y.row_mut(i).iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
        }
        Bias::PerRow(b) => {
            if b.len() != n {
                return Err(NnError::ShapeMismatch(format!(
                    "per-row bias of length {} for {n} rows",
                    b.len()
                )));
            }
            for i in 0..n {
                let bv = b.data()[i];
                for o in y.row_mut(i) {
                    *o += bv;
                }
            }
        }
    }
    Ok(y)
}

#[derive(Clone, Debug)]
pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    /// `None` when the forward pass had no bias.
    pub db: Option<Tensor>,
}

pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    bias: Bias<'_>,
    dy: &Tensor,
) -> Result<LinearGrads, NnError> {
    let dw = x.t_matmul(dy)?;
    let dx = dy.matmul_t(w)?;
    let db = match bias {
        Bias::None => None,
        Bias::PerColumn(_) => {
            let mut db = vec![0.0; dy.cols()];
            for i in 0..dy.rows() {
                for (acc, g) in db.iter_mut().zip(dy.row(i)) {
                    *acc += g;
                }
            }
            Some(Tensor::vector(db))
        }
        Bias::PerRow(_) => Some(Tensor::vector(
            (0..dy.rows()).map(|i| dy.row(i).iter().sum()).collect(),
        )),
    };
    Ok(LinearGrads { dx, dw, db })
}

/// Gathers rows of `table` (`vocab × dim`).
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor, NnError> {
    let vocab = table.rows();
    let dim = table.cols();
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        if id >= vocab {
            return Err(NnError::IdOutOfRange { id, vocab });
        }
        out.extend_from_slice(table.row(id));
    }
    Tensor::matrix(ids.len(), dim, out)
}

/// Scatters `dy` rows back into `grad_table`, accumulating repeated ids.
pub fn embedding_backward(grad_table: &mut Tensor, ids: &[usize], dy: &Tensor) -> Result<(), NnError> {
    if dy.rows() != ids.len() || dy.cols() != grad_table.cols() {
        return Err(NnError::ShapeMismatch(format!(
            "embedding grad {:?} for {} ids into {:?}",
            dy.shape(),
            ids.len(),
            grad_table.shape()
        )));
    }
    let vocab = grad_table.rows();
    for (r, &id) in ids.iter().enumerate() {
        if id >= vocab {
            return Err(NnError::IdOutOfRange { id, vocab });
        }
        for (g, d) in grad_table.row_mut(id).iter_mut().zip(dy.row(r)) {
            *g += d;
        }
    }
    Ok(())
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Gradient w.r.t. the logits given the softmax output `p` and upstream `dp`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(pi, gi)| pi * (gi - inner)).collect()
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Masks `dy` by the sign of the pre-activation.
pub fn relu_backward(pre: &Tensor, dy: &Tensor) -> Result<Tensor, NnError> {
    if !pre.same_shape(dy) {
        return Err(NnError::ShapeMismatch("relu backward".into()));
    }
    let data = pre
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(pre.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{check_gradients, GradSet, ParamSet, SeedStream};
    use rand::Rng;

    #[test]
    fn linear_identity_input() {
        let x = Tensor::identity(2);
        let w = Tensor::matrix(2, 2, vec![2., 0., 0., 3.]).unwrap();
        let y = linear_forward(&x, &w, Bias::None).unwrap();
        assert_eq!(y.data(), &[2., 0., 0., 3.]);
    }

    #[test]
    fn linear_hand_arithmetic() {
        let x = Tensor::matrix(1, 2, vec![1., 1.]).unwrap();
        let w = Tensor::matrix(2, 1, vec![1., 1.]).unwrap();
        let b = Tensor::vector(vec![1.]);
        let y = linear_forward(&x, &w, Bias::PerColumn(&b)).unwrap();
        assert_eq!(y.data(), &[3.]);
        let y = linear_forward(&x, &w, Bias::PerRow(&b)).unwrap();
        assert_eq!(y.data(), &[3.]);
    }

    #[test]
    fn linear_zero_input_broadcasts_bias() {
        let x = Tensor::zeros(&[3, 2]);
        let w = Tensor::matrix(2, 2, vec![1., 2., 3., 4.]).unwrap();
        let col = Tensor::vector(vec![5., 6.]);
        let y = linear_forward(&x, &w, Bias::PerColumn(&col)).unwrap();
        assert_eq!(y.data(), &[5., 6., 5., 6., 5., 6.]);
        let row = Tensor::vector(vec![1., 2., 3.]);
        let y = linear_forward(&x, &w, Bias::PerRow(&row)).unwrap();
        assert_eq!(y.data(), &[1., 1., 2., 2., 3., 3.]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let x = Tensor::zeros(&[2, 3]);
        let w = Tensor::zeros(&[2, 2]);
        assert!(linear_forward(&x, &w, Bias::None).is_err());
        let w = Tensor::zeros(&[3, 2]);
        let b = Tensor::zeros(&[3]);
        assert!(linear_forward(&x, &w, Bias::PerColumn(&b)).is_err());
        assert!(linear_forward(&x, &w, Bias::PerRow(&b)).is_err());
    }

    #[test]
    fn embedding_rows() {
        let table = Tensor::matrix(3, 2, vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let y = embedding_lookup(&table, &[0, 0]).unwrap();
        assert_eq!(y.row(0), y.row(1));
        let y = embedding_lookup(&table, &[2]).unwrap();
        assert_eq!(y.data(), &[4., 5.]);
        assert!(matches!(
            embedding_lookup(&table, &[3]),
            Err(NnError::IdOutOfRange { id: 3, vocab: 3 })
        ));
    }

    #[test]
    fn embedding_gradient_accumulates_repeats() {
        // d/dtable of sum(lookup([0, 0])) puts 2 in every entry of row 0.
        let mut p = ParamSet::new();
        p.insert("t", Tensor::matrix(3, 2, vec![0.3, -0.1, 0.7, 0.2, -0.5, 0.9]).unwrap())
            .unwrap();
        let f = |p: &ParamSet| {
            let t = p.get("t")?;
            let y = embedding_lookup(t, &[0, 0])?;
            let loss: f64 = y.data().iter().sum();
            let mut g = GradSet::zeros_like(p);
            embedding_backward(g.get_mut("t")?, &[0, 0], &Tensor::filled(&[2, 2], 1.0))?;
            Ok((loss, g))
        };
        let (_, g) = f(&p).unwrap();
        assert_eq!(g.get("t").unwrap().data(), &[2., 2., 0., 0., 0., 0.]);
        let report = check_gradients(f, &p, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0., 0.]), vec![0.5, 0.5]);
        for c in [-50.0, 0.0, 3.7, 800.0] {
            for p in softmax(&[c, c, c]) {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let p = softmax(&[1f64.ln(), 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn linear_gradients_random_instance() {
        let mut rng = SeedStream::new(11).rng(&[0]);
        let mut p = ParamSet::new();
        let rand_t = |rng: &mut rand_chacha::ChaCha8Rng, s: &[usize]| {
            let n = s.iter().product();
            Tensor::new(s.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        p.insert("x", rand_t(&mut rng, &[3, 2])).unwrap();
        p.insert("w", rand_t(&mut rng, &[2, 2])).unwrap();
        p.insert("b", rand_t(&mut rng, &[2])).unwrap();
        let target = rand_t(&mut rng, &[3, 2]);
        let f = |p: &ParamSet| {
            let (x, w, b) = (p.get("x")?, p.get("w")?, p.get("b")?);
            let y = linear_forward(x, w, Bias::PerColumn(b))?;
            let mut dy = y.clone();
            dy.axpy(-1.0, &target)?;
            let loss = dy.data().iter().map(|v| v * v).sum::<f64>();
            dy.scale(2.0);
            let g_lin = linear_backward(x, w, Bias::PerColumn(b), &dy)?;
            let mut g = GradSet::zeros_like(p);
            *g.get_mut("x")? = g_lin.dx;
            *g.get_mut("w")? = g_lin.dw;
            *g.get_mut("b")? = g_lin.db.unwrap();
            Ok((loss, g))
        };
        let report = check_gradients(f, &p, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn per_row_bias_relu_and_softmax_gradients_over_seeds() {
        for seed in 0..20u64 {
            let mut rng = SeedStream::new(seed).rng(&[1]);
            let mut rand_t = |s: &[usize]| {
                let n = s.iter().product();
                Tensor::new(s.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap()
            };
            let mut p = ParamSet::new();
            p.insert("table", rand_t(&[4, 3])).unwrap();
            p.insert("w", rand_t(&[3, 3])).unwrap();
            p.insert("b", rand_t(&[3])).unwrap();
            let ids = [1usize, 3, 1];
            let weights = rand_t(&[3]);
            let f = |p: &ParamSet| {
                let table = p.get("table")?;
                let h = embedding_lookup(table, &ids)?;
                let z = linear_forward(&h, p.get("w")?, Bias::PerRow(p.get("b")?))?;
                let a = relu(&z);
                // loss = Σ_rows Σ_j softmax(a_row)_j · weights_j
                let mut loss = 0.0;
                let mut da = Tensor::zeros(a.shape());
                for r in 0..a.rows() {
                    let s = softmax(a.row(r));
                    loss += dot(&s, weights.data());
                    da.row_mut(r).copy_from_slice(&softmax_backward(&s, weights.data()));
                }
                let dz = relu_backward(&z, &da)?;
                let gl = linear_backward(&h, p.get("w")?, Bias::PerRow(p.get("b")?), &dz)?;
                let mut g = GradSet::zeros_like(p);
                *g.get_mut("w")? = gl.dw;
                *g.get_mut("b")? = gl.db.unwrap();
                embedding_backward(g.get_mut("table")?, &ids, &gl.dx)?;
                Ok((loss, g))
            };
            let report = check_gradients(f, &p, 1e-5).unwrap();
            assert!(report.max_rel_error < 1e-5, "seed {seed}: {report:?}");
        }
    }
}
