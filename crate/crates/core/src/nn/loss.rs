use super::{DenseNet, Head};
use crate::error::{Error, Result};
use crate::seed::SimRng;
use ndarray::{Array2, ArrayView2, Axis};

/// Per-sample losses and the gradient of the batch-mean loss with respect
/// to the network output.
pub type CustomLoss<'a> = &'a dyn Fn(ArrayView2<'_, f64>) -> (Vec<f64>, Array2<f64>);

pub enum Loss<'a> {
    /// Binary cross-entropy on a 2-way softmax head; targets are one column
    /// of labels in `[0, 1]`, the class-1 probability being the prediction.
    Bce,
    /// Mean squared error averaged over outputs, then over the batch.
    Mse,
    Custom(CustomLoss<'a>),
}

/// `(log p0, log p1)` of a 2-way softmax, computed from the logits with a
/// log-sum-exp shift.
pub fn log_softmax2(z0: f64, z1: f64) -> (f64, f64) {
    let m = z0.max(z1);
    let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
    (z0 - lse, z1 - lse)
}

/// Gradient of the batch-mean loss over all parameters, plus that loss.
/// Dropout is active when `rng` is given.
pub fn grad(
    net: &DenseNet,
    x: ArrayView2<'_, f64>,
    loss: Loss<'_>,
    targets: ArrayView2<'_, f64>,
    rng: Option<&mut SimRng>,
) -> Result<(Vec<f64>, f64)> {
    let b = x.nrows();
    if b == 0 {
        return Err(Error::Empty("gradient batch".into()));
    }
    let cache = net.forward_cached(x, rng)?;
    let (per_sample, grad_logits) = match loss {
        Loss::Bce => {
            if net.head() != Head::Softmax || targets.dim() != (b, 1) {
                return Err(Error::Shape("bce needs a softmax head and one label per sample".into()));
            }
            let mut per = Vec::with_capacity(b);
            let mut g = Array2::zeros((b, 2));
            for i in 0..b {
                let (z0, z1) = (cache.logits[[i, 0]], cache.logits[[i, 1]]);
                let y = targets[[i, 0]];
                let (lp0, lp1) = log_softmax2(z0, z1);
                per.push(-(y * lp1 + (1.0 - y) * lp0));
                g[[i, 0]] = (lp0.exp() - (1.0 - y)) / b as f64;
                g[[i, 1]] = (lp1.exp() - y) / b as f64;
            }
            (per, g)
        }
        Loss::Mse => {
            if targets.dim() != cache.output.dim() {
                return Err(Error::Shape(format!(
                    "targets {:?} vs outputs {:?}",
                    targets.dim(),
                    cache.output.dim()
                )));
            }
            let k = net.output_size() as f64;
            let diff = &cache.output - &targets;
            let per = diff.axis_iter(Axis(0)).map(|r| r.mapv(|d| d * d).sum() / k).collect();
            let g = diff.mapv(|d| 2.0 * d / (k * b as f64));
            (per, net.head_backward(&cache, g.view()))
        }
        Loss::Custom(f) => {
            let (per, g) = f(cache.output.view());
            if per.len() != b || g.dim() != cache.output.dim() {
                return Err(Error::Shape("custom loss returned mismatched shapes".into()));
            }
            (per, net.head_backward(&cache, g.view()))
        }
    };
    if let Some((i, &v)) = per_sample.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLoss { sample: i, value: v });
    }
    let mut grads = vec![0.0; net.num_params()];
    net.backward(&cache, grad_logits.view(), &mut grads);
    Ok((grads, per_sample.iter().sum::<f64>() / b as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use ndarray::array;

    fn bce_of(net: &DenseNet, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
        let p = net.forward_batch(x.view()).unwrap();
        let b = x.nrows() as f64;
        (0..x.nrows())
            .map(|i| -(y[[i, 0]] * p[[i, 1]].ln() + (1.0 - y[[i, 0]]) * p[[i, 0]].ln()))
            .sum::<f64>()
            / b
    }

    #[test]
    fn bce_reference_values() {
        // Saturated logits give l_pred = 1 for a positive label.
        let net = DenseNet::from_parts(&[1, 2], Head::Softmax, 0.0, vec![0.0, 0.0, -400.0, 400.0]).unwrap();
        let (_, l) = grad(&net, array![[1.0]].view(), Loss::Bce, array![[1.0]].view(), None).unwrap();
        assert_eq!(l, 0.0);
        let net = DenseNet::zeros(&[1, 2], Head::Softmax, 0.0).unwrap();
        let (_, l) = grad(&net, array![[1.0]].view(), Loss::Bce, array![[0.0]].view(), None).unwrap();
        assert!((l - 0.5f64.ln().abs()).abs() < 1e-15);
        assert!((l - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = rng_from(3);
        let net = DenseNet::new(&[2, 6, 2], Head::Softmax, 0.0, &mut rng).unwrap();
        let x = array![[0.5, -1.2], [1.5, 0.3], [-0.7, -0.1], [0.0, 2.0]];
        let y = array![[1.0], [0.0], [1.0], [0.0]];
        let (g, l) = grad(&net, x.view(), Loss::Bce, y.view(), None).unwrap();
        assert!((l - bce_of(&net, &x, &y)).abs() < 1e-12);
        let h = 1e-5;
        for k in 0..net.num_params() {
            let mut p = net.clone();
            p.params_mut()[k] += h;
            let up = bce_of(&p, &x, &y);
            p.params_mut()[k] -= 2.0 * h;
            let dn = bce_of(&p, &x, &y);
            let fd = (up - dn) / (2.0 * h);
            let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-7);
            assert!(rel < 1e-4 || (fd - g[k]).abs() < 1e-10, "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = rng_from(4);
        let net = DenseNet::new(&[3, 5, 5, 2], Head::Tanh, 0.0, &mut rng).unwrap();
        let x = array![[0.5, -1.2, 0.3], [1.5, 0.3, -0.4]];
        let t = array![[0.2, -0.5], [0.9, 0.1]];
        let (g, _) = grad(&net, x.view(), Loss::Mse, t.view(), None).unwrap();
        let mse = |n: &DenseNet| {
            let y = n.forward_batch(x.view()).unwrap();
            (&y - &t).mapv(|d| d * d).sum() / 4.0
        };
        let h = 1e-5;
        for k in 0..net.num_params() {
            let mut p = net.clone();
            p.params_mut()[k] += h;
            let up = mse(&p);
            p.params_mut()[k] -= 2.0 * h;
            let fd = (up - mse(&p)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-4 * fd.abs().max(g[k].abs()).max(1e-6), "param {k}");
        }
    }

    #[test]
    fn non_finite_loss_reports_sample() {
        let net = DenseNet::zeros(&[1, 1], Head::Identity, 0.0).unwrap();
        let f = |y: ArrayView2<'_, f64>| {
            let per = vec![1.0, f64::NAN, 2.0];
            (per, Array2::zeros(y.dim()))
        };
        let err = grad(&net, array![[1.0], [2.0], [3.0]].view(), Loss::Custom(&f), array![[0.0]].view(), None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { sample: 1, .. }));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let net = DenseNet::zeros(&[1, 2], Head::Softmax, 0.0).unwrap();
        let x = Array2::<f64>::zeros((0, 1));
        assert!(grad(&net, x.view(), Loss::Bce, Array2::zeros((0, 1)).view(), None).is_err());
    }
}
