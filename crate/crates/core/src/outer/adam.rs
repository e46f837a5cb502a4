//! Adam with bias correction, one accumulator per optimised vector.

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step `values -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, values: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(values.len(), self.m.len(), "adam state length mismatch");
        assert_eq!(grad.len(), self.m.len(), "adam gradient length mismatch");
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..values.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(3);
        let mut x = vec![1.0, -2.0, 0.5];
        s.step(&mut x, &[0.0; 3], 0.25);
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = AdamState::new(1);
        let mut x = vec![0.0];
        s.step(&mut x, &[1.0], 0.25);
        assert!((x[0] + 0.25).abs() < 1e-8);
    }

    #[test]
    fn deterministic() {
        let mut a = AdamState::new(2);
        let mut b = a.clone();
        let (mut x, mut y) = (vec![0.3, 0.1], vec![0.3, 0.1]);
        a.step(&mut x, &[0.5, -1.0], 0.1);
        b.step(&mut y, &[0.5, -1.0], 0.1);
        assert_eq!(x, y);
        assert_eq!(a, b);
    }
}
