//! Reference implementations shared by the integration suites. Everything
//! here is written with plain loops over `Vec`s, independent of the
//! library's ndarray code paths.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use semiae::model::{Activation, GradientSet, SemiAeParams};

pub fn act(name: &str, z: f64) -> f64 {
    match name {
        "identity" => z,
        "sigmoid" => 1.0 / (1.0 + (-z).exp()),
        "relu" => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        "tanh" => z.tanh(),
        other => panic!("no activation {other}"),
    }
}

pub fn act_grad(name: &str, z: f64) -> f64 {
    match name {
        "identity" => 1.0,
        "sigmoid" => {
            let s = 1.0 / (1.0 + (-z).exp());
            s * (1.0 - s)
        }
        "relu" => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        "tanh" => 1.0 - z.tanh().powi(2),
        other => panic!("no activation {other}"),
    }
}

/// Classical three-layer autoencoder in the textbook orientation:
/// `h = g(W x + b)`, `x' = f(W1 h + b1)` with W: H x N and W1: N x H.
pub struct ClassicalAe {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub g: &'static str,
    pub f: &'static str,
}

pub struct ClassicalGrads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
}

impl ClassicalAe {
    /// W = Qᵀ, W1 = Q1ᵀ.
    pub fn from_params(p: &SemiAeParams) -> Self {
        let (s, h) = p.q.dim();
        let d = p.q1.ncols();
        ClassicalAe {
            w: (0..h).map(|k| (0..s).map(|j| p.q[[j, k]]).collect()).collect(),
            b: p.p.to_vec(),
            w1: (0..d).map(|i| (0..h).map(|k| p.q1[[k, i]]).collect()).collect(),
            b1: p.p1.to_vec(),
            g: p.g.name(),
            f: p.f.name(),
        }
    }

    fn pre_hidden(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .iter()
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    fn pre_out(&self, h: &[f64]) -> Vec<f64> {
        self.w1
            .iter()
            .zip(&self.b1)
            .map(|(row, b)| row.iter().zip(h).map(|(w, h)| w * h).sum::<f64>() + b)
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h: Vec<f64> = self.pre_hidden(x).into_iter().map(|z| act(self.g, z)).collect();
        let out = self.pre_out(&h).into_iter().map(|z| act(self.f, z)).collect();
        (h, out)
    }

    /// `(1/M) Σ ||x - x'||² + (γ/2)(||W||² + ||W1||²)`.
    pub fn loss(&self, xs: &[Vec<f64>], reg: f64) -> f64 {
        let mut sse = 0.0;
        for x in xs {
            let (_, out) = self.forward(x);
            for (o, t) in out.iter().zip(x) {
                sse += (o - t) * (o - t);
            }
        }
        let norm = |m: &Vec<Vec<f64>>| m.iter().flatten().map(|v| v * v).sum::<f64>();
        sse / xs.len() as f64 + reg / 2.0 * (norm(&self.w) + norm(&self.w1))
    }

    /// Hand-derived backpropagation.
    pub fn gradients(&self, xs: &[Vec<f64>], reg: f64) -> ClassicalGrads {
        let (hn, n) = (self.w.len(), self.w1.len());
        let s = self.w[0].len();
        let mut gw = vec![vec![0.0; s]; hn];
        let mut gb = vec![0.0; hn];
        let mut gw1 = vec![vec![0.0; hn]; n];
        let mut gb1 = vec![0.0; n];
        let m = xs.len() as f64;
        for x in xs {
            let z1 = self.pre_hidden(x);
            let h: Vec<f64> = z1.iter().map(|&z| act(self.g, z)).collect();
            let z2 = self.pre_out(&h);
            let mut delta_h = vec![0.0; hn];
            for i in 0..n {
                let out = act(self.f, z2[i]);
                let delta = 2.0 / m * (out - x[i]) * act_grad(self.f, z2[i]);
                gb1[i] += delta;
                for k in 0..hn {
                    gw1[i][k] += delta * h[k];
                    delta_h[k] += delta * self.w1[i][k];
                }
            }
            for k in 0..hn {
                let dz = delta_h[k] * act_grad(self.g, z1[k]);
                gb[k] += dz;
                for j in 0..s {
                    gw[k][j] += dz * x[j];
                }
            }
        }
        for k in 0..hn {
            for j in 0..s {
                gw[k][j] += reg * self.w[k][j];
            }
        }
        for i in 0..n {
            for k in 0..hn {
                gw1[i][k] += reg * self.w1[i][k];
            }
        }
        ClassicalGrads {
            w: gw,
            b: gb,
            w1: gw1,
            b1: gb1,
        }
    }
}

/// Brute-force masked loss: `(1/B) Σ_b Σ_{d: mask} (t - out)² + (γ/2)(||Q||² + ||Q1||²)`
/// evaluated entry by entry.
pub fn brute_masked_loss(
    p: &SemiAeParams,
    x: &Array2<f64>,
    t: &Array2<f64>,
    mask: &Array2<bool>,
    reg: f64,
) -> f64 {
    let (b, s) = x.dim();
    let (h, d) = p.q1.dim();
    let mut sse = 0.0;
    for r in 0..b {
        let mut hid = vec![0.0; h];
        for (k, hk) in hid.iter_mut().enumerate() {
            let mut z = p.p[k];
            for j in 0..s {
                z += x[[r, j]] * p.q[[j, k]];
            }
            *hk = act(p.g.name(), z);
        }
        for i in 0..d {
            if !mask[[r, i]] {
                continue;
            }
            let mut z = p.p1[i];
            for (k, hk) in hid.iter().enumerate() {
                z += hk * p.q1[[k, i]];
            }
            let e = t[[r, i]] - act(p.f.name(), z);
            sse += e * e;
        }
    }
    let mut norm = 0.0;
    for v in p.q.iter().chain(p.q1.iter()) {
        norm += v * v;
    }
    sse / b as f64 + reg / 2.0 * norm
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Finite-difference relative error with a denominator floor: entries whose
/// gradients are both below `floor` are compared on the absolute scale of
/// `floor`, where central-difference round-off dominates.
pub fn fd_rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn random_params<R: Rng>(rng: &mut R, s: usize, h: usize, d: usize, g: Activation, f: Activation) -> SemiAeParams {
    let mut m = |r, c| Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0));
    let q = m(s, h);
    let q1 = m(h, d);
    let p = Array1::from_shape_fn(h, |_| rng.gen_range(-0.5..0.5));
    let p1 = Array1::from_shape_fn(d, |_| rng.gen_range(-0.5..0.5));
    SemiAeParams::new(q, q1, p, p1, g, f).unwrap()
}

/// Maximum finite-difference error over every parameter entry of `loss`.
pub fn max_fd_error<L>(params: &SemiAeParams, grads: &GradientSet, loss: L, step: f64, floor: f64) -> f64
where
    L: Fn(&SemiAeParams) -> f64,
{
    let mut worst: f64 = 0.0;
    let mut probe = |get: &dyn Fn(&mut SemiAeParams) -> &mut f64, analytic: f64| {
        let mut plus = params.clone();
        *get(&mut plus) += step;
        let mut minus = params.clone();
        *get(&mut minus) -= step;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
        worst = worst.max(fd_rel_err(analytic, numeric, floor));
    };
    for (idx, &g) in grads.q.indexed_iter() {
        probe(&|p: &mut SemiAeParams| &mut p.q[idx], g);
    }
    for (idx, &g) in grads.q1.indexed_iter() {
        probe(&|p: &mut SemiAeParams| &mut p.q1[idx], g);
    }
    for (i, &g) in grads.p.indexed_iter() {
        probe(&|p: &mut SemiAeParams| &mut p.p[i], g);
    }
    for (i, &g) in grads.p1.indexed_iter() {
        probe(&|p: &mut SemiAeParams| &mut p.p1[i], g);
    }
    worst
}

/// Smallest |pre-activation| over both layers; used to keep relu instances
/// away from the kink.
pub fn min_abs_preactivation(p: &SemiAeParams, x: &Array2<f64>) -> f64 {
    let z1 = x.dot(&p.q) + &p.p;
    let h = z1.mapv(|z| p.g.apply(z));
    let z2 = h.dot(&p.q1) + &p.p1;
    z1.iter().chain(z2.iter()).fold(f64::INFINITY, |m, z| m.min(z.abs()))
}
