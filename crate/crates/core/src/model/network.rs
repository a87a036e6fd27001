//! Plain feedforward stack: `hidden × (dense → [batch norm] → ELU)` then a
//! linear output layer.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub(crate) const BN_MOMENTUM: f64 = 0.99;
pub(crate) const BN_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Network {
    /// `[input, hidden..., output]`.
    pub dims: Vec<usize>,
    pub batch_norm: bool,
    /// Per hidden layer: `W (in×out)`, `b (1×out)` and, with batch norm,
    /// `γ (1×out)`, `β (1×out)`. Then the output `W`, `b`.
    pub params: Vec<Array2<f64>>,
    /// Moving mean and variance per hidden layer (batch norm only).
    pub running: Vec<(Array1<f64>, Array1<f64>)>,
}

/// Intermediate values of a training-mode forward pass.
pub(crate) struct Trace {
    inputs: Vec<Array2<f64>>,
    normalized: Vec<Array2<f64>>,
    inv_std: Vec<Array1<f64>>,
    activated: Vec<Array2<f64>>,
    batch_stats: Vec<(Array1<f64>, Array1<f64>)>,
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

impl Network {
    /// He-normal weights, zero biases, unit scale.
    pub fn init(input: usize, hidden: usize, width: usize, output: usize, batch_norm: bool, seed: u64) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(width, hidden));
        dims.push(output);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut running = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let he = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive sd");
            params.push(Array2::from_shape_simple_fn((fan_in, fan_out), || he.sample(&mut rng)));
            params.push(Array2::zeros((1, fan_out)));
            if batch_norm && l + 1 < dims.len() - 1 {
                params.push(Array2::ones((1, fan_out)));
                params.push(Array2::zeros((1, fan_out)));
                running.push((Array1::zeros(fan_out), Array1::ones(fan_out)));
            }
        }
        Self {
            dims,
            batch_norm,
            params,
            running,
        }
    }

    pub fn n_hidden(&self) -> usize {
        self.dims.len() - 2
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("nonempty")
    }

    fn per_hidden(&self) -> usize {
        if self.batch_norm {
            4
        } else {
            2
        }
    }

    fn output_offset(&self) -> usize {
        self.n_hidden() * self.per_hidden()
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Inference with stored batch-norm statistics. Rows are independent.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        let per = self.per_hidden();
        for l in 0..self.n_hidden() {
            let p = &self.params[l * per..(l + 1) * per];
            let mut z = a.dot(&p[0]) + &p[1];
            if self.batch_norm {
                let (mean, var) = &self.running[l];
                let scale = &p[2].row(0) / &var.mapv(|v| (v + BN_EPSILON).sqrt());
                Zip::from(z.rows_mut()).for_each(|mut row| {
                    Zip::from(&mut row)
                        .and(mean)
                        .and(&scale)
                        .and(p[3].row(0))
                        .for_each(|v, &m, &s, &b| *v = (*v - m) * s + b);
                });
            }
            z.mapv_inplace(elu);
            a = z;
        }
        let o = self.output_offset();
        a.dot(&self.params[o]) + &self.params[o + 1]
    }

    /// Training-mode forward pass: batch norm uses batch statistics.
    pub fn forward_train(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Trace) {
        let n = x.nrows() as f64;
        let mut trace = Trace {
            inputs: Vec::new(),
            normalized: Vec::new(),
            inv_std: Vec::new(),
            activated: Vec::new(),
            batch_stats: Vec::new(),
        };
        let mut a = x.to_owned();
        let per = self.per_hidden();
        for l in 0..self.n_hidden() {
            let p = &self.params[l * per..(l + 1) * per];
            let mut z = a.dot(&p[0]) + &p[1];
            trace.inputs.push(a);
            if self.batch_norm {
                let mean = z.mean_axis(Axis(0)).expect("nonempty batch");
                let var = Array1::from_iter(
                    z.columns()
                        .into_iter()
                        .zip(&mean)
                        .map(|(col, m)| col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n),
                );
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPSILON).sqrt());
                let zhat = (&z - &mean) * &inv_std;
                z = &zhat * &p[2] + &p[3];
                trace.normalized.push(zhat);
                trace.inv_std.push(inv_std);
                trace.batch_stats.push((mean, var));
            }
            z.mapv_inplace(elu);
            trace.activated.push(z.clone());
            a = z;
        }
        let o = self.output_offset();
        let out = a.dot(&self.params[o]) + &self.params[o + 1];
        trace.inputs.push(a);
        (out, trace)
    }

    /// Gradients of the loss w.r.t. every parameter tensor, given the
    /// gradient w.r.t. the network output.
    pub fn backward(&self, trace: &Trace, d_out: Array2<f64>) -> Vec<Array2<f64>> {
        let mut grads: Vec<Array2<f64>> = self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        let per = self.per_hidden();
        let o = self.output_offset();
        let a_last = &trace.inputs[self.n_hidden()];
        grads[o] = a_last.t().dot(&d_out);
        grads[o + 1] = d_out.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut da = d_out.dot(&self.params[o].t());
        for l in (0..self.n_hidden()).rev() {
            let base = l * per;
            // ELU'(y) = 1 for y > 0, else ELU(y) + 1.
            let mut dz = da;
            Zip::from(&mut dz)
                .and(&trace.activated[l])
                .for_each(|g, &act| {
                    if act <= 0.0 {
                        *g *= act + 1.0;
                    }
                });
            if self.batch_norm {
                let zhat = &trace.normalized[l];
                let inv_std = &trace.inv_std[l];
                let n = zhat.nrows() as f64;
                grads[base + 3] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
                grads[base + 2] = (&dz * zhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                let dzhat = &dz * &self.params[base + 2];
                let sum = dzhat.sum_axis(Axis(0));
                let sum_dot = (&dzhat * zhat).sum_axis(Axis(0));
                dz = (&dzhat * n - &sum - zhat * &sum_dot) * &(inv_std / n);
            }
            grads[base] = trace.inputs[l].t().dot(&dz);
            grads[base + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            da = dz.dot(&self.params[base].t());
        }
        grads
    }

    /// Folds the batch statistics of a training step into the moving averages.
    pub fn update_running(&mut self, trace: &Trace) {
        for ((mean, var), (bm, bv)) in self.running.iter_mut().zip(&trace.batch_stats) {
            Zip::from(mean)
                .and(bm)
                .for_each(|r, &b| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b);
            Zip::from(var)
                .and(bv)
                .for_each(|r, &b| *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b);
        }
    }

    /// Zeroes the output layer so every prediction is zero.
    #[cfg(test)]
    pub fn zero_output(&mut self) {
        let o = self.output_offset();
        self.params[o].fill(0.0);
        self.params[o + 1].fill(0.0);
    }
}
