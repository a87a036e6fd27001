use ndarray::{Array2, Zip};

/// Nadam without momentum decay: Adam with a Nesterov look-ahead on the
/// first moment.
#[derive(Debug, Clone)]
pub(crate) struct Nadam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Nadam {
    pub fn new(params: &[Array2<f64>], beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64) {
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.step);
        let c1_next = 1.0 - b1.powi(self.step + 1);
        let c2 = 1.0 - b2.powi(self.step);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(&mut self.v)) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = b1 * *m / c1_next + (1.0 - b1) * g / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
    }
}

/// 1cycle: linear rise from `max_lr / start_div` to `max_lr` over the warmup
/// fraction, then cosine annealing to `max_lr / end_div` at `total_steps`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct OneCycle {
    pub max_lr: f64,
    pub start_div: f64,
    pub end_div: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
}

impl OneCycle {
    pub fn lr(&self, step: usize) -> f64 {
        let start = self.max_lr / self.start_div;
        let end = self.max_lr / self.end_div;
        let warm = ((self.warmup_fraction * self.total_steps as f64).round() as usize).max(1);
        if step < warm {
            return start + (self.max_lr - start) * step as f64 / warm as f64;
        }
        let span = self.total_steps.saturating_sub(warm).max(1) as f64;
        let frac = ((step - warm) as f64 / span).min(1.0);
        end + (self.max_lr - end) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_cycle_shape() {
        let s = OneCycle {
            max_lr: 1e-2,
            start_div: 10.0,
            end_div: 100.0,
            warmup_fraction: 0.3,
            total_steps: 1000,
        };
        assert!((s.lr(0) - 1e-3).abs() < 1e-15);
        assert!((s.lr(300) - 1e-2).abs() < 1e-15);
        assert!((s.lr(1000) - 1e-4).abs() < 1e-15);
        assert!(s.lr(2000) == s.lr(1000));
        let lrs: Vec<f64> = (0..=1000).map(|k| s.lr(k)).collect();
        assert!(lrs[..=300].windows(2).all(|w| w[1] > w[0]));
        assert!(lrs[300..].windows(2).all(|w| w[1] < w[0]));
    }

    /// Independent scalar transcription of the update rule.
    #[test]
    fn nadam_matches_scalar_rule() {
        let mut p = vec![array![[0.5, -1.0]]];
        let mut opt = Nadam::new(&p, 0.9, 0.999, 1e-7);
        let gs = [[0.3, -0.2], [0.1, 0.4], [-0.5, 0.0]];
        let (mut m, mut v, mut x) = ([0.0; 2], [0.0; 2], [0.5, -1.0]);
        for (t, g) in gs.iter().enumerate() {
            opt.update(&mut p, &[array![[g[0], g[1]]]], 0.01);
            let t = t as i32 + 1;
            for i in 0..2 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = 0.9 * m[i] / (1.0 - 0.9f64.powi(t + 1)) + 0.1 * g[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                x[i] -= 0.01 * mh / (vh.sqrt() + 1e-7);
            }
            assert!((p[0][[0, 0]] - x[0]).abs() < 1e-14);
            assert!((p[0][[0, 1]] - x[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn nadam_minimizes_quadratic() {
        let mut p = vec![array![[3.0, -2.0]]];
        let mut opt = Nadam::new(&p, 0.9, 0.999, 1e-7);
        for _ in 0..3000 {
            let g = p[0].mapv(|x| 2.0 * x);
            opt.update(&mut p, &[g], 0.01);
        }
        assert!(p[0].iter().all(|x| x.abs() < 1e-2));
    }
}
