//! One-hidden-layer semi-autoencoder.
//!
//! The input `x` (length S) is the rating vector followed by side information;
//! the output (length D <= S) reconstructs only the rating prefix `sub(x)`:
//!
//! ```text
//! h   = g(x·Q + p)          Q: S x H, p: H
//! out = f(h·Q1 + p1)        Q1: H x D, p1: D
//! ```
//!
//! With no side information (S = D) this is a plain three-layer autoencoder.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("output dimension {output} exceeds input dimension {input}")]
    OutputLongerThanInput { input: usize, output: usize },
    #[error("hidden dimension must be at least 1")]
    EmptyHidden,
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, ModelError>;

fn mismatch(what: &'static str, expected: impl fmt::Debug, got: impl fmt::Debug) -> ModelError {
    ModelError::DimensionMismatch {
        what,
        expected: format!("{expected:?}"),
        got: format!("{got:?}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Sigmoid,
    Relu,
    Tanh,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Identity,
        Activation::Sigmoid,
        Activation::Relu,
        Activation::Tanh,
    ];

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`, given `a = self.apply(z)`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                format!("unknown activation {s:?}; valid: identity, sigmoid, relu, tanh")
            })
    }
}

/// Rating block first, side information second.
pub fn concat_input(ratings: &[f64], side: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(ratings.len() + side.len());
    x.extend_from_slice(ratings);
    x.extend_from_slice(side);
    x
}

/// The reconstruction target: the first `output_dim` coordinates of `x`.
pub fn sub(x: &[f64], output_dim: usize) -> &[f64] {
    &x[..output_dim]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    #[serde(rename = "S")]
    pub input: usize,
    #[serde(rename = "H")]
    pub hidden: usize,
    #[serde(rename = "D")]
    pub output: usize,
}

impl Dims {
    pub fn new(input: usize, hidden: usize, output: usize) -> Self {
        Dims {
            input,
            hidden,
            output,
        }
    }

    pub fn side_dim(&self) -> usize {
        self.input - self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiAeParams {
    pub q: Array2<f64>,
    pub q1: Array2<f64>,
    pub p: Array1<f64>,
    pub p1: Array1<f64>,
    pub g: Activation,
    pub f: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub hidden: Array2<f64>,
    pub output: Array2<f64>,
}

impl SemiAeParams {
    pub fn new(
        q: Array2<f64>,
        q1: Array2<f64>,
        p: Array1<f64>,
        p1: Array1<f64>,
        g: Activation,
        f: Activation,
    ) -> Result<Self> {
        let (s, h) = q.dim();
        let d = q1.ncols();
        if h == 0 {
            return Err(ModelError::EmptyHidden);
        }
        if q1.nrows() != h {
            return Err(mismatch("Q1 rows", h, q1.nrows()));
        }
        if p.len() != h {
            return Err(mismatch("p length", h, p.len()));
        }
        if p1.len() != d {
            return Err(mismatch("p1 length", d, p1.len()));
        }
        if d > s {
            return Err(ModelError::OutputLongerThanInput {
                input: s,
                output: d,
            });
        }
        let params = SemiAeParams { q, q1, p, p1, g, f };
        params.check_finite()?;
        Ok(params)
    }

    fn check_dims(dims: Dims) -> Result<()> {
        if dims.hidden == 0 {
            return Err(ModelError::EmptyHidden);
        }
        if dims.output > dims.input {
            return Err(ModelError::OutputLongerThanInput {
                input: dims.input,
                output: dims.output,
            });
        }
        Ok(())
    }

    pub fn zeros(dims: Dims, g: Activation, f: Activation) -> Result<Self> {
        Self::check_dims(dims)?;
        Ok(SemiAeParams {
            q: Array2::zeros((dims.input, dims.hidden)),
            q1: Array2::zeros((dims.hidden, dims.output)),
            p: Array1::zeros(dims.hidden),
            p1: Array1::zeros(dims.output),
            g,
            f,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        dims: Dims,
        g: Activation,
        f: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = Self::zeros(dims, g, f)?;
        let limit = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let a = limit(dims.input, dims.hidden);
        params.q.mapv_inplace(|_| rng.gen_range(-a..=a));
        let a = limit(dims.hidden, dims.output);
        params.q1.mapv_inplace(|_| rng.gen_range(-a..=a));
        Ok(params)
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.q.nrows(), self.q.ncols(), self.q1.ncols())
    }

    pub fn check_finite(&self) -> Result<()> {
        let checks = [
            ("Q", self.q.iter().all(|v| v.is_finite())),
            ("Q1", self.q1.iter().all(|v| v.is_finite())),
            ("p", self.p.iter().all(|v| v.is_finite())),
            ("p1", self.p1.iter().all(|v| v.is_finite())),
        ];
        match checks.into_iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(ModelError::NonFinite(name)),
            None => Ok(()),
        }
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let dims = self.dims();
        if x.len() != dims.input {
            return Err(mismatch("input length", dims.input, x.len()));
        }
        let hidden = (x.dot(&self.q) + &self.p).mapv_into(|z| self.g.apply(z));
        let output = (hidden.dot(&self.q1) + &self.p1).mapv_into(|z| self.f.apply(z));
        Ok((hidden, output))
    }

    /// Row-wise forward pass over a batch.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Forward> {
        let dims = self.dims();
        if x.ncols() != dims.input {
            return Err(mismatch("batch columns", dims.input, x.ncols()));
        }
        let hidden = (x.dot(&self.q) + &self.p).mapv_into(|z| self.g.apply(z));
        let output = (hidden.dot(&self.q1) + &self.p1).mapv_into(|z| self.f.apply(z));
        Ok(Forward { hidden, output })
    }

    fn regularizer(&self, reg: f64) -> f64 {
        if reg == 0.0 {
            return 0.0;
        }
        let sq = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
        0.5 * reg * (sq(&self.q) + sq(&self.q1))
    }

    fn check_batch(
        &self,
        x: &ArrayView2<'_, f64>,
        targets: &ArrayView2<'_, f64>,
        mask: Option<&ArrayView2<'_, bool>>,
    ) -> Result<()> {
        let dims = self.dims();
        if x.ncols() != dims.input {
            return Err(mismatch("batch columns", dims.input, x.ncols()));
        }
        if targets.dim() != (x.nrows(), dims.output) {
            return Err(mismatch(
                "target shape",
                (x.nrows(), dims.output),
                targets.dim(),
            ));
        }
        if let Some(m) = mask {
            if m.dim() != targets.dim() {
                return Err(mismatch("mask shape", targets.dim(), m.dim()));
            }
        }
        Ok(())
    }
}

/// Gradients (or any per-parameter buffer) shaped like [`SemiAeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub q: Array2<f64>,
    pub q1: Array2<f64>,
    pub p: Array1<f64>,
    pub p1: Array1<f64>,
}

impl GradientSet {
    pub fn zeros_like(params: &SemiAeParams) -> Self {
        GradientSet {
            q: Array2::zeros(params.q.raw_dim()),
            q1: Array2::zeros(params.q1.raw_dim()),
            p: Array1::zeros(params.p.raw_dim()),
            p1: Array1::zeros(params.p1.raw_dim()),
        }
    }

    pub fn matches(&self, params: &SemiAeParams) -> bool {
        self.q.dim() == params.q.dim()
            && self.q1.dim() == params.q1.dim()
            && self.p.dim() == params.p.dim()
            && self.p1.dim() == params.p1.dim()
    }

    /// Name of the first parameter with a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        if !self.q.iter().all(|v| v.is_finite()) {
            Some("Q")
        } else if !self.q1.iter().all(|v| v.is_finite()) {
            Some("Q1")
        } else if !self.p.iter().all(|v| v.is_finite()) {
            Some("p")
        } else if !self.p1.iter().all(|v| v.is_finite()) {
            Some("p1")
        } else {
            None
        }
    }
}

/// `(1/B) Σ_rows ||target - out||² + (γ/2)(||Q||² + ||Q1||²)`.
pub fn subset_loss(
    params: &SemiAeParams,
    batch_x: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    reg: f64,
) -> Result<f64> {
    params.check_batch(&batch_x, &targets, None)?;
    Ok(dense_pass(params, batch_x, targets, reg, false).0)
}

/// Like [`subset_loss`] but the squared error only counts mask-true positions.
/// Rows with an empty mask contribute nothing; B is still the row count.
pub fn masked_loss(
    params: &SemiAeParams,
    batch_x: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    mask: ArrayView2<'_, bool>,
    reg: f64,
) -> Result<f64> {
    params.check_batch(&batch_x, &targets, Some(&mask))?;
    Ok(masked_pass(params, batch_x, targets, mask, reg, false).0)
}

/// Exact gradients of [`subset_loss`] (`mask = None`) or [`masked_loss`].
pub fn backward(
    params: &SemiAeParams,
    batch_x: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    mask: Option<ArrayView2<'_, bool>>,
    reg: f64,
) -> Result<GradientSet> {
    loss_and_gradients(params, batch_x, targets, mask, reg).map(|(_, g)| g)
}

/// Loss and gradients from a single forward pass.
pub fn loss_and_gradients(
    params: &SemiAeParams,
    batch_x: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    mask: Option<ArrayView2<'_, bool>>,
    reg: f64,
) -> Result<(f64, GradientSet)> {
    params.check_batch(&batch_x, &targets, mask.as_ref())?;
    let (loss, grads) = match mask {
        None => dense_pass(params, batch_x, targets, reg, true),
        Some(m) => masked_pass(params, batch_x, targets, m, reg, true),
    };
    Ok((loss, grads.expect("gradients requested")))
}

fn dense_pass(
    params: &SemiAeParams,
    x: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    reg: f64,
    want_grads: bool,
) -> (f64, Option<GradientSet>) {
    let rows = x.nrows();
    if rows == 0 {
        let grads = want_grads.then(|| reg_only_grads(params, reg));
        return (params.regularizer(reg), grads);
    }
    let scale = 1.0 / rows as f64;
    let z1 = x.dot(&params.q) + &params.p;
    let h = z1.mapv(|z| params.g.apply(z));
    let z2 = h.dot(&params.q1) + &params.p1;
    let out = z2.mapv(|z| params.f.apply(z));
    let err = &out - &targets;
    let loss = err.iter().map(|e| e * e).sum::<f64>() / rows as f64 + params.regularizer(reg);
    if !want_grads {
        return (loss, None);
    }

    let f = params.f;
    let mut dz2 = err;
    Zip::from(&mut dz2)
        .and(&z2)
        .and(&out)
        .for_each(|d, &z, &a| *d *= 2.0 * scale * f.derivative(z, a));
    let mut dq1 = h.t().dot(&dz2);
    let dp1 = dz2.sum_axis(Axis(0));
    let g = params.g;
    let mut dz1 = dz2.dot(&params.q1.t());
    Zip::from(&mut dz1)
        .and(&z1)
        .and(&h)
        .for_each(|d, &z, &a| *d *= g.derivative(z, a));
    let mut dq = x.t().dot(&dz1);
    let dp = dz1.sum_axis(Axis(0));
    if reg != 0.0 {
        dq.scaled_add(reg, &params.q);
        dq1.scaled_add(reg, &params.q1);
    }
    (
        loss,
        Some(GradientSet {
            q: dq,
            q1: dq1,
            p: dp,
            p1: dp1,
        }),
    )
}

fn reg_only_grads(params: &SemiAeParams, reg: f64) -> GradientSet {
    let mut grads = GradientSet::zeros_like(params);
    grads.q.scaled_add(reg, &params.q);
    grads.q1.scaled_add(reg, &params.q1);
    grads
}

fn masked_pass(
    params: &SemiAeParams,
    x: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    mask: ArrayView2<'_, bool>,
    reg: f64,
    want_grads: bool,
) -> (f64, Option<GradientSet>) {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let mut ws = MaskedWorkspace::new(params);
    let loss = ws.run(params, x, targets, mask, &rows, reg, want_grads);
    (loss, want_grads.then_some(ws.grads))
}

/// Buffers for repeated masked-loss gradient evaluations.
///
/// Works row by row and touches only nonzero inputs and mask-true outputs, so
/// the cost follows the number of observed ratings rather than S x D.
#[derive(Debug, Clone)]
pub struct MaskedWorkspace {
    /// Q1 transposed: one contiguous row of H weights per output unit.
    q1t: Array2<f64>,
    dq1t: Array2<f64>,
    grads: GradientSet,
    z1: Array1<f64>,
    h: Array1<f64>,
    dh: Array1<f64>,
}

impl MaskedWorkspace {
    pub fn new(params: &SemiAeParams) -> Self {
        let dims = params.dims();
        MaskedWorkspace {
            q1t: Array2::zeros((dims.output, dims.hidden)),
            dq1t: Array2::zeros((dims.output, dims.hidden)),
            grads: GradientSet::zeros_like(params),
            z1: Array1::zeros(dims.hidden),
            h: Array1::zeros(dims.hidden),
            dh: Array1::zeros(dims.hidden),
        }
    }

    pub fn gradients(&self) -> &GradientSet {
        &self.grads
    }

    /// Masked loss over `rows` of the full input/target/mask matrices,
    /// leaving its gradients in [`MaskedWorkspace::gradients`].
    pub fn loss_and_gradients(
        &mut self,
        params: &SemiAeParams,
        inputs: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        mask: ArrayView2<'_, bool>,
        rows: &[usize],
        reg: f64,
    ) -> Result<f64> {
        params.check_batch(&inputs, &targets, Some(&mask))?;
        if !self.grads.matches(params) {
            *self = MaskedWorkspace::new(params);
        }
        Ok(self.run(params, inputs, targets, mask, rows, reg, true))
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &mut self,
        params: &SemiAeParams,
        x: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        mask: ArrayView2<'_, bool>,
        rows: &[usize],
        reg: f64,
        want_grads: bool,
    ) -> f64 {
        let (g, f) = (params.g, params.f);
        if want_grads {
            let gs = &mut self.grads;
            Zip::from(&mut gs.q).and(&params.q).for_each(|d, &w| *d = reg * w);
            gs.p.fill(0.0);
            gs.p1.fill(0.0);
            self.dq1t.fill(0.0);
        }
        self.q1t.assign(&params.q1.t());
        let scale = if rows.is_empty() { 0.0 } else { 1.0 / rows.len() as f64 };
        let mut sq_err = 0.0;

        for &b in rows {
            let m = mask.row(b);
            if !m.iter().any(|&v| v) {
                continue;
            }
            let xb = x.row(b);
            self.z1.assign(&params.p);
            for (j, &xj) in xb.iter().enumerate() {
                if xj != 0.0 {
                    self.z1.scaled_add(xj, &params.q.row(j));
                }
            }
            Zip::from(&mut self.h).and(&self.z1).for_each(|a, &z| *a = g.apply(z));
            self.dh.fill(0.0);

            let t = targets.row(b);
            for (d, _) in m.iter().enumerate().filter(|(_, &on)| on) {
                let w = self.q1t.row(d);
                let z2 = params.p1[d] + self.h.dot(&w);
                let out = f.apply(z2);
                let e = out - t[d];
                sq_err += e * e;
                if want_grads {
                    let delta = 2.0 * scale * e * f.derivative(z2, out);
                    self.dq1t.row_mut(d).scaled_add(delta, &self.h);
                    self.grads.p1[d] += delta;
                    self.dh.scaled_add(delta, &w);
                }
            }

            if want_grads {
                Zip::from(&mut self.dh)
                    .and(&self.z1)
                    .and(&self.h)
                    .for_each(|d, &z, &a| *d *= g.derivative(z, a));
                self.grads.p += &self.dh;
                for (j, &xj) in xb.iter().enumerate() {
                    if xj != 0.0 {
                        self.grads.q.row_mut(j).scaled_add(xj, &self.dh);
                    }
                }
            }
        }

        if want_grads {
            Zip::from(&mut self.grads.q1)
                .and(&params.q1)
                .and(&self.dq1t.t())
                .for_each(|d, &w, &acc| *d = reg * w + acc);
        }
        let data = if rows.is_empty() { 0.0 } else { sq_err / rows.len() as f64 };
        data + params.regularizer(reg)
    }
}

/// Serialized parameter block: nested row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationPair {
    pub g: Activation,
    pub f: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ParamsRecord {
    pub dims: Dims,
    pub activations: ActivationPair,
    pub Q: Vec<Vec<f64>>,
    pub Q1: Vec<Vec<f64>>,
    pub p: Vec<f64>,
    pub p1: Vec<f64>,
}

fn to_nested(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn from_nested(what: &'static str, rows: &[Vec<f64>], ncols: usize) -> Result<Array2<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(mismatch(what, ncols, bad.len()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), ncols), flat).expect("checked row lengths"))
}

impl From<&SemiAeParams> for ParamsRecord {
    fn from(params: &SemiAeParams) -> Self {
        ParamsRecord {
            dims: params.dims(),
            activations: ActivationPair {
                g: params.g,
                f: params.f,
            },
            Q: to_nested(&params.q),
            Q1: to_nested(&params.q1),
            p: params.p.to_vec(),
            p1: params.p1.to_vec(),
        }
    }
}

impl TryFrom<&ParamsRecord> for SemiAeParams {
    type Error = ModelError;

    fn try_from(rec: &ParamsRecord) -> Result<Self> {
        let Dims {
            input,
            hidden,
            output,
        } = rec.dims;
        if rec.Q.len() != input {
            return Err(mismatch("Q rows", input, rec.Q.len()));
        }
        if rec.Q1.len() != hidden {
            return Err(mismatch("Q1 rows", hidden, rec.Q1.len()));
        }
        let q = from_nested("Q columns", &rec.Q, hidden)?;
        let q1 = from_nested("Q1 columns", &rec.Q1, output)?;
        SemiAeParams::new(
            q,
            q1,
            Array1::from(rec.p.clone()),
            Array1::from(rec.p1.clone()),
            rec.activations.g,
            rec.activations.f,
        )
    }
}

/// Input rows `[ratings | side]` for every entity.
pub fn concat_rows(ratings: ArrayView2<'_, f64>, side: ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(ratings.nrows(), side.nrows(), "one side-info row per entity");
    let d = ratings.ncols();
    let mut x = Array2::zeros((ratings.nrows(), d + side.ncols()));
    x.slice_mut(s![.., ..d]).assign(&ratings);
    x.slice_mut(s![.., d..]).assign(&side);
    x
}
