use super::model::Tensor;
use super::Scalar;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for every parameter, plus the number of
/// steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step_count: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn cast<U: Scalar>(&self) -> AdamState<U> {
        let conv = |vs: &Vec<Vec<T>>| {
            vs.iter()
                .map(|v| v.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect())
                .collect()
        };
        AdamState {
            first_moment: conv(&self.first_moment),
            second_moment: conv(&self.second_moment),
            step_count: self.step_count,
        }
    }

    pub(crate) fn check_against(&self, params: &[Tensor<T>]) -> Result<()> {
        for moments in [&self.first_moment, &self.second_moment] {
            if moments.len() != params.len()
                || moments.iter().zip(params).any(|(m, p)| m.len() != p.data.len())
            {
                return Err(Error::ModelMismatch(
                    "optimizer state does not match parameters".into(),
                ));
            }
        }
        if self.second_moment.iter().flatten().any(|v| *v < T::zero() || !v.is_finite())
            || self.first_moment.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::ModelMismatch("optimizer state is not finite".into()));
        }
        Ok(())
    }

    /// Bias-corrected Adam update applied in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>], lr: T) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::from_f64(ADAM_BETA1).unwrap();
        let b2 = T::from_f64(ADAM_BETA2).unwrap();
        let eps = T::from_f64(ADAM_EPS).unwrap();
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for (((w, &gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
