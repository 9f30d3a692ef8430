use crate::backbone::ParamStore;
use crate::tensor::{Element, Tensor};

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// First and second moments per parameter; `None` until the parameter is
/// first updated.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState<T: Element = f32> {
    pub step: u64,
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Element> OptimizerState<T> {
    pub fn new(num_params: usize) -> Self {
        OptimizerState { step: 0, moments: vec![None; num_params] }
    }

    pub fn moments(&self, i: usize) -> Option<(&[T], &[T])> {
        self.moments.get(i)?.as_ref().map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One AdamW update of every trainable parameter. Weight decay is decoupled:
/// `p ← p·(1 − lr·wd)` before the bias-corrected Adam step. A trainable
/// parameter without a gradient is treated as having a zero gradient.
pub fn adamw_step<T: Element>(
    params: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut OptimizerState<T>,
    lr: f64,
    opt: &AdamW,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.moments.len() != params.len() {
        return Err(TrainError::Shape(format!(
            "{} params, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.moments.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.shape() != params.tensor(i).shape() {
                return Err(TrainError::Shape(format!(
                    "gradient for {} has shape {:?}, parameter {:?}",
                    params.names()[i],
                    g.shape(),
                    params.tensor(i).shape()
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(opt.beta1), T::lit(opt.beta2));
    let correction1 = T::one() - T::lit(opt.beta1.powi(t));
    let correction2 = T::one() - T::lit(opt.beta2.powi(t));
    let decay = T::one() - T::lit(lr * opt.weight_decay);
    let (lr, eps) = (T::lit(lr), T::lit(opt.eps));

    #[allow(clippy::needless_range_loop)]
    for i in 0..params.len() {
        if !params.is_trainable(i) {
            continue;
        }
        let mut p = params.tensor(i).to_vec();
        let (m, v) = state.moments[i].get_or_insert_with(|| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]));
        let zeros;
        let g = match &grads[i] {
            Some(g) => g.data(),
            None => {
                zeros = vec![T::zero(); p.len()];
                &zeros
            }
        };
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (T::one() - b1) * g[k];
            v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
            let m_hat = m[k] / correction1;
            let v_hat = v[k] / correction2;
            p[k] = p[k] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
        let shape = params.tensor(i).shape().to_vec();
        params.set_at(i, Tensor::new(shape, p).expect("same length"));
    }
    Ok(())
}
