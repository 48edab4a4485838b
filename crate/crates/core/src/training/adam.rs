use crate::autodiff::{Mat, Real};

/// Adaptive-moment optimizer over a list of tensors.
#[derive(Clone, Debug)]
pub struct Adam<T: Real = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    /// Update count per tensor.
    pub t: Vec<u64>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &[Mat<T>]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.data.len()]).collect(),
            t: vec![0; params.len()],
        }
    }

    /// Updates every tensor that has a gradient; `None` leaves it untouched.
    pub fn step(&mut self, params: &mut [Mat<T>], grads: &[Option<Mat<T>>], lrs: &[f64]) {
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
            let step = T::of(lrs[i] / c1);
            let c2 = T::of(c2);
            let eps = T::of(self.eps);
            let one = T::one();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in params[i].data.iter_mut().enumerate() {
                let gj = g.data[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                *p = *p - step * m[j] / ((v[j] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![Mat::from_vec(1, 2, vec![3.0f32, -2.0])];
        let mut adam = Adam::new(&p);
        for _ in 0..2000 {
            let g = Mat::from_vec(1, 2, p[0].data.iter().map(|x| 2.0 * x).collect());
            adam.step(&mut p, &[Some(g)], &[0.01]);
        }
        assert!(p[0].data.iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn missing_gradient_leaves_tensor() {
        let mut p = vec![Mat::from_vec(1, 1, vec![1.0f32])];
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &[None], &[0.1]);
        assert_eq!(p[0].data[0], 1.0);
        assert_eq!(adam.t[0], 0);
    }
}
