//! Fully connected ReLU networks with exact backpropagation, Adam and
//! Polyak averaging. Batches are row-major: one sample per row.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `inputs x outputs`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
    pub output: OutputActivation,
}

/// Intermediate values kept by [`DenseNet::forward_cached`].
pub struct ForwardCache {
    /// Input to each layer; the last entry is the network output.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds the input")
    }
}

/// Parameter gradients, one `(dw, db)` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.raw_dim())))
                .collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in &mut self.layers {
            *w *= k;
            *b *= k;
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|(w, b)| w.iter().chain(b.iter()).map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output: OutputActivation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::config("network", format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|io| {
                let limit = (6.0 / (io[0] + io[1]) as f64).sqrt();
                Layer {
                    w: Array2::from_shape_fn((io[0], io[1]), |_| rng.random_range(-limit..limit)),
                    b: Array1::zeros(io[1]),
                }
            })
            .collect();
        Ok(Self { layers, output })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.b.len()));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.b.len())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut activations = Vec::with_capacity(n + 1);
        activations.push(x.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&l.w);
            z += &l.b;
            if i + 1 < n {
                z.mapv_inplace(|v| v.max(0.0));
            } else if self.output == OutputActivation::Sigmoid {
                z.mapv_inplace(sigmoid);
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut a = x.dot(&self.layers[0].w) + &self.layers[0].b;
        for l in &self.layers[1..] {
            a.mapv_inplace(|v| v.max(0.0));
            a = a.dot(&l.w) + &l.b;
        }
        if self.output == OutputActivation::Sigmoid {
            a.mapv_inplace(sigmoid);
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        Ok(self.forward_batch(&x)?.into_raw_vec_and_offset().0)
    }

    /// Gradients of `sum(grad_out * output)` summed over the batch, and the
    /// gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> Result<(Gradients, Array2<f64>)> {
        let out = cache.output();
        if grad_out.dim() != out.dim() {
            return Err(Error::Dimension {
                expected: out.ncols(),
                got: grad_out.ncols(),
            });
        }
        let n = self.layers.len();
        let mut delta = grad_out.clone();
        if self.output == OutputActivation::Sigmoid {
            delta.zip_mut_with(out, |d, &y| *d *= y * (1.0 - y));
        }
        let mut grads = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let input = &cache.activations[i];
            let dw = input.t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            grads.push((dw, db));
            let mut d_in = delta.dot(&self.layers[i].w.t());
            if i > 0 {
                d_in.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = d_in;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend(l.w.iter());
            p.extend(l.b.iter());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: p.len(),
            });
        }
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|x| *x = it.next().expect("length checked"));
            l.b.iter_mut().for_each(|x| *x = it.next().expect("length checked"));
        }
        Ok(())
    }

    /// `self <- tau * online + (1 - tau) * self`
    pub fn soft_update(&mut self, online: &DenseNet, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.w.zip_mut_with(&o.w, |a, &b| *a = tau * b + (1.0 - tau) * *a);
            t.b.zip_mut_with(&o.b, |a, &b| *a = tau * b + (1.0 - tau) * *a);
        }
    }

    pub fn snapshot(&self) -> NetSnapshot {
        NetSnapshot {
            sizes: self.sizes(),
            output: self.output,
            params: self.params(),
        }
    }

    pub fn from_snapshot(s: &NetSnapshot) -> Result<Self> {
        if s.sizes.len() < 2 || s.sizes.contains(&0) {
            return Err(Error::Checkpoint(format!("invalid layer sizes {:?}", s.sizes)));
        }
        let layers = s
            .sizes
            .windows(2)
            .map(|io| Layer {
                w: Array2::zeros((io[0], io[1])),
                b: Array1::zeros(io[1]),
            })
            .collect();
        let mut net = Self { layers, output: s.output };
        net.set_params(&s.params)?;
        Ok(net)
    }
}

/// Serializable form of a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSnapshot {
    pub sizes: Vec<usize>,
    pub output: OutputActivation,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl Adam {
    pub fn new(net: &DenseNet, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descend along `grads` with step size `lr`.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients, lr: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - beta2.powi(self.t.min(i32::MAX as u64) as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (i, l) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[i];
            let (mw, mb) = &mut self.m.layers[i];
            let (vw, vb) = &mut self.v.layers[i];
            ndarray::Zip::from(&mut l.w)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut l.b)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }

    pub fn snapshot(&self) -> AdamSnapshot {
        let flat = |g: &Gradients| {
            g.layers
                .iter()
                .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
                .collect()
        };
        AdamSnapshot {
            cfg: self.cfg.clone(),
            m: flat(&self.m),
            v: flat(&self.v),
            t: self.t,
        }
    }

    pub fn from_snapshot(net: &DenseNet, s: &AdamSnapshot) -> Result<Self> {
        let mut a = Self::new(net, s.cfg.clone());
        let fill = |g: &mut Gradients, src: &[f64]| -> Result<()> {
            let n: usize = g.layers.iter().map(|(w, b)| w.len() + b.len()).sum();
            if n != src.len() {
                return Err(Error::Dimension {
                    expected: n,
                    got: src.len(),
                });
            }
            let mut it = src.iter().copied();
            for (w, b) in &mut g.layers {
                w.iter_mut().chain(b.iter_mut()).for_each(|x| *x = it.next().expect("length checked"));
            }
            Ok(())
        };
        fill(&mut a.m, &s.m)?;
        fill(&mut a.v, &s.v)?;
        a.t = s.t;
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSnapshot {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Builds a batch matrix from equally long rows.
pub fn stack_rows(rows: &[&[f64]]) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        if r.len() != cols {
            return Err(Error::Dimension {
                expected: cols,
                got: r.len(),
            });
        }
        data.extend_from_slice(r);
    }
    Ok(Array2::from_shape_vec((rows.len(), cols), data).expect("shape checked"))
}
