use super::PipelineError;
use crate::model::{Gradients, ParamStore};

/// Size-weighted mean of micro-batch gradients. For a loss that is a mean
/// over examples this is the gradient of the concatenated batch.
pub fn local_gradient_aggregate(
    micro: &[Gradients],
    sizes: &[usize],
    params: &ParamStore,
) -> Result<Gradients, PipelineError> {
    if micro.is_empty() {
        return Err(PipelineError::Config("no micro-batch gradients".into()));
    }
    if micro.len() != sizes.len() {
        return Err(PipelineError::Config(format!("{} gradients but {} sizes", micro.len(), sizes.len())));
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(PipelineError::Config("micro-batch sizes sum to zero".into()));
    }
    let mut out = Gradients::zeros(params.len());
    for (g, n) in micro.iter().zip(sizes) {
        out.add_scaled(g, *n as f64 / total as f64, params)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ParamGrad, Tape, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Mean squared error of a linear model `w·x + b` and its gradient.
    fn mse_grad(params: &ParamStore, xs: &[Vec<f64>], ys: &[f64]) -> Gradients {
        let mut t = Tape::new(params);
        let w = t.param_named("w");
        let b = t.param_named("b");
        let mut terms = Vec::new();
        for (x, y) in xs.iter().zip(ys) {
            let xv = t.constant(Tensor::column(x.clone()));
            let pred = t.affine(w, xv, b);
            let target = t.constant(Tensor::scalar(*y));
            let d = t.sub(pred, target);
            let sq = t.mul(d, d);
            terms.push(sq);
        }
        let s = t.vstack(&terms);
        let s = t.sum(s);
        let loss = t.scale(s, 1.0 / xs.len() as f64);
        t.backward(loss)
    }

    #[test]
    fn aggregate_equals_concatenated_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(1, 3, (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()));
        p.insert("b", Tensor::scalar(0.2));
        let xs: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let full = mse_grad(&p, &xs, &ys);
        for split in [vec![6, 6], vec![3, 4, 5], vec![12]] {
            let mut start = 0;
            let mut micro = Vec::new();
            for n in &split {
                micro.push(mse_grad(&p, &xs[start..start + n], &ys[start..start + n]));
                start += n;
            }
            let agg = local_gradient_aggregate(&micro, &split, &p).unwrap();
            for id in 0..p.len() {
                let (a, b) = (agg.get(id).to_dense(p.get(id).shape()), full.get(id).to_dense(p.get(id).shape()));
                for (x, y) in a.data.iter().zip(&b.data) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_and_zero_cases() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::zeros(2, 2));
        let g = Gradients { grads: vec![ParamGrad::Dense(Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]))] };
        let one = local_gradient_aggregate(std::slice::from_ref(&g), &[7], &p).unwrap();
        assert_eq!(one, g);
        let zeros = local_gradient_aggregate(&[Gradients::zeros(1), Gradients::zeros(1)], &[1, 2], &p).unwrap();
        assert_eq!(zeros.l2_norm(), 0.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::zeros(2, 2));
        let bad = Gradients { grads: vec![ParamGrad::Dense(Tensor::zeros(3, 1))] };
        assert!(matches!(local_gradient_aggregate(&[bad], &[1], &p), Err(PipelineError::Shape(_))));
        assert!(local_gradient_aggregate(&[Gradients::zeros(2)], &[1], &p).is_err());
        assert!(local_gradient_aggregate(&[], &[], &p).is_err());
    }
}
