//! Representation adaptation between a source and a target domain.
//!
//! * `msda`: marginalized denoising layers. Feature dropout with
//!   probability `p` is marginalized out, so each layer is the closed-form
//!   least-squares map `W = P Q^-1`.
//! * `msdar`: the same reconstruction loss plus a domain regularizer
//!   `λ Σ_target E (R - uᵀ W x̃)²`, where `u` is a ridge-fit linear domain
//!   classifier (source = 1, target = 0). The stationarity condition
//!   `W Q + λ u uᵀ W Q_t = P + λ R u m_tᵀ` has a rank-one structure and is
//!   solved exactly with two symmetric solves.
//! * `sda`: three gradient-trained denoising autoencoder layers with
//!   Gaussian input noise scaled by the per-dimension spread of each
//!   layer's input.
//!
//! Data matrices hold one sample per column.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Plain domain transfer: representations are used unchanged.
    #[serde(alias = "none")]
    Dt,
    Sda,
    Msda,
    Msdar,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dt => "dt",
            Variant::Sda => "sda",
            Variant::Msda => "msda",
            Variant::Msdar => "msdar",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dt" | "none" => Ok(Variant::Dt),
            "sda" => Ok(Variant::Sda),
            "msda" => Ok(Variant::Msda),
            "msdar" => Ok(Variant::Msdar),
            other => Err(Error::invalid("variant", format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptConfig {
    pub variant: Variant,
    pub layers: usize,
    pub dropout_p: f64,
    pub lambda: f64,
    pub reg_target: f64,
    pub noise_scale: f64,
    #[serde(default)]
    pub sda: SdaTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdaTraining {
    /// Hidden width per layer; `None` keeps the input width.
    pub hidden: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for SdaTraining {
    fn default() -> Self {
        SdaTraining {
            hidden: None,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

impl AdaptConfig {
    pub fn dt() -> Self {
        AdaptConfig {
            variant: Variant::Dt,
            layers: 0,
            dropout_p: 0.0,
            lambda: 0.0,
            reg_target: 0.0,
            noise_scale: 0.0,
            sda: SdaTraining::default(),
        }
    }

    pub fn sda() -> Self {
        AdaptConfig {
            variant: Variant::Sda,
            layers: 3,
            noise_scale: 1.0,
            ..Self::dt()
        }
    }

    pub fn msda() -> Self {
        AdaptConfig {
            variant: Variant::Msda,
            layers: 5,
            dropout_p: 0.6,
            ..Self::dt()
        }
    }

    pub fn msdar() -> Self {
        AdaptConfig {
            variant: Variant::Msdar,
            layers: 5,
            dropout_p: 0.6,
            lambda: 1.0,
            reg_target: 1.0,
            ..Self::dt()
        }
    }

    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Dt => Self::dt(),
            Variant::Sda => Self::sda(),
            Variant::Msda => Self::msda(),
            Variant::Msdar => Self::msdar(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("adapt ({}): {m}", self.variant)));
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !self.reg_target.is_finite() {
            return bad("R must be finite");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be finite and >= 0");
        }
        match self.variant {
            Variant::Dt => {}
            Variant::Sda | Variant::Msda | Variant::Msdar if self.layers == 0 => return bad("layers must be positive"),
            Variant::Sda => {
                if self.sda.epochs == 0 || self.sda.batch_size == 0 || !(self.sda.learning_rate > 0.0) {
                    return bad("sda epochs, batch_size and learning_rate must be positive");
                }
                if self.sda.hidden == Some(0) {
                    return bad("sda hidden width must be positive");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Row-major matrix as persisted in model JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl StoredMatrix {
    pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter());
        }
        StoredMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub(crate) fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.rows.checked_mul(self.cols) != Some(self.data.len()) {
            return Err(Error::invalid("adapt model", "matrix data length does not match its shape"));
        }
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("adapt model", "matrix has non-finite entries"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    /// `out = W [h; 1]`; the next layer reads `tanh(out)`.
    Marginalized { w: StoredMatrix },
    /// `h' = tanh(W h + b)`.
    Denoising {
        weights: StoredMatrix,
        biases: Vec<f64>,
        noise_std: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptModel {
    pub variant: Variant,
    pub config: AdaptConfig,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<Layer>,
}

impl AdaptModel {
    pub fn identity(dim: usize) -> Self {
        AdaptModel {
            variant: Variant::Dt,
            config: AdaptConfig::dt(),
            input_dim: dim,
            output_dim: dim,
            layers: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("adapt model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: AdaptModel = serde_json::from_str(text).map_err(|e| Error::parse("adapt model", e.line(), e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Checks that layer shapes chain and parameters are finite.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("adapt model", m));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        let mut width = self.input_dim;
        let mut concat = self.input_dim;
        let mut kinds = (0, 0);
        for (k, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Marginalized { w } => {
                    w.check()?;
                    if w.cols != width + 1 || w.rows != width {
                        return bad(format!("layer {k}: expected {width}x{} mapping, got {}x{}", width + 1, w.rows, w.cols));
                    }
                    concat = concat.checked_add(width).ok_or_else(|| Error::invalid("adapt model", "dimension overflow"))?;
                    kinds.0 += 1;
                }
                Layer::Denoising { weights, biases, noise_std } => {
                    weights.check()?;
                    if weights.cols != width || biases.len() != weights.rows || noise_std.len() != width || weights.rows == 0 {
                        return bad(format!("layer {k}: inconsistent denoising layer shapes"));
                    }
                    if biases.iter().chain(noise_std).any(|x| !x.is_finite()) {
                        return bad(format!("layer {k}: non-finite parameters"));
                    }
                    width = weights.rows;
                    concat = width;
                    kinds.1 += 1;
                }
            }
        }
        let expected_kinds = match self.variant {
            Variant::Dt => kinds == (0, 0),
            Variant::Sda => kinds.0 == 0 && kinds.1 > 0,
            Variant::Msda | Variant::Msdar => kinds.0 > 0 && kinds.1 == 0,
        };
        if !expected_kinds {
            return bad(format!("layers do not match variant {}", self.variant));
        }
        if concat != self.output_dim {
            return bad(format!("output_dim {} but layers produce {concat}", self.output_dim));
        }
        Ok(())
    }
}

fn check_finite(x: &DMatrix<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(what, "input contains NaN or infinite values"))
    }
}

fn with_bias(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_row(x.nrows(), 1.0)
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Solves `A X = B` for symmetric positive semi-definite `A`. The
/// factorization uses `A + εI` with `ε = 1e-8 tr(A)/n` so rank-deficient
/// systems stay solvable; a few refinement steps against `A` itself then
/// remove the bias the jitter introduces on well-posed systems.
fn solve_psd(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let jitter = 1e-8 * a.trace() / n as f64;
    let jittered = a + DMatrix::identity(n, n) * jitter;
    let solve: Box<dyn Fn(&DMatrix<f64>) -> Option<DMatrix<f64>>> = match jittered.clone().cholesky() {
        Some(ch) => Box::new(move |r: &DMatrix<f64>| Some(ch.solve(r))),
        None => {
            let lu = jittered.clone().lu();
            Box::new(move |r: &DMatrix<f64>| lu.solve(r))
        }
    };
    let singular = || {
        let eig = jittered.clone().symmetric_eigen().eigenvalues;
        let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        Error::numerical(what, format!("singular system after jitter (condition estimate {:.3e})", max / min))
    };
    let mut x = solve(b).ok_or_else(singular)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    let mut resid = b - a * &x;
    let mut norm = resid.norm();
    for _ in 0..5 {
        if norm == 0.0 {
            break;
        }
        let Some(dx) = solve(&resid) else { break };
        let candidate = &x + dx;
        let r2 = b - a * &candidate;
        let n2 = r2.norm();
        if !(n2 < norm) {
            break;
        }
        x = candidate;
        resid = r2;
        norm = n2;
    }
    Ok(x)
}

/// Second-moment matrices of dropout-corrupted inputs, summed over columns
/// of `xb` (which already carries the bias row): `(Q, P)`.
fn marginal_moments(xb: &DMatrix<f64>, dropout_p: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d1 = xb.nrows();
    let d = d1 - 1;
    let s = xb * xb.transpose();
    let q: Vec<f64> = (0..d1).map(|i| if i == d { 1.0 } else { 1.0 - dropout_p }).collect();
    let big_q = DMatrix::from_fn(d1, d1, |i, j| if i == j { q[i] * s[(i, i)] } else { s[(i, j)] * q[i] * q[j] });
    let p = DMatrix::from_fn(d, d1, |i, j| s[(i, j)] * q[j]);
    (big_q, p)
}

/// Closed-form marginalized denoising layer on the columns of `x` (d×n).
/// Returns the d×(d+1) mapping whose last column is the bias.
pub fn msda_layer(x: &DMatrix<f64>, dropout_p: f64) -> Result<DMatrix<f64>> {
    if x.ncols() < 2 || x.nrows() == 0 {
        return Err(Error::invalid("msda layer", "need at least 2 samples of positive dimension"));
    }
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(Error::invalid("msda layer", "dropout_p must lie in [0, 1)"));
    }
    check_finite(x, "msda layer")?;
    let (q, p) = marginal_moments(&with_bias(x), dropout_p);
    Ok(solve_psd(&q, &p.transpose(), "msda layer")?.transpose())
}

/// Result of one domain-regularized layer: the mapping and the domain
/// classifier it was regularized against.
#[derive(Debug, Clone)]
pub struct MsdarLayer {
    pub w: DMatrix<f64>,
    pub domain_classifier: DVector<f64>,
}

/// Ridge regression without intercept: source columns → 1, target → 0.
pub fn domain_classifier(xs: &DMatrix<f64>, xt: &DMatrix<f64>) -> Result<DVector<f64>> {
    let x = hstack(xs, xt);
    let y = DVector::from_fn(x.ncols(), |j, _| if j < xs.ncols() { 1.0 } else { 0.0 });
    let gram = &x * x.transpose() + DMatrix::identity(x.nrows(), x.nrows()) * 1e-3;
    let rhs = &x * y;
    let sol = solve_psd(&gram, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()), "domain classifier")?;
    Ok(sol.column(0).into_owned())
}

pub fn msdar_layer(xs: &DMatrix<f64>, xt: &DMatrix<f64>, cfg: &AdaptConfig) -> Result<MsdarLayer> {
    if xs.nrows() != xt.nrows() || xs.nrows() == 0 {
        return Err(Error::invalid("msdar layer", "source and target dimensions differ"));
    }
    if xs.ncols() == 0 || xt.ncols() == 0 {
        return Err(Error::invalid("msdar layer", "source and target must be non-empty"));
    }
    if !(0.0..1.0).contains(&cfg.dropout_p) {
        return Err(Error::invalid("msdar layer", "dropout_p must lie in [0, 1)"));
    }
    check_finite(xs, "msdar layer")?;
    check_finite(xt, "msdar layer")?;
    let d = xs.nrows();
    let u = domain_classifier(xs, xt)?;
    let (q, p) = marginal_moments(&with_bias(&hstack(xs, xt)), cfg.dropout_p);
    let xtb = with_bias(xt);
    let (q_t, _) = marginal_moments(&xtb, cfg.dropout_p);
    let keep = DVector::from_fn(d + 1, |i, _| if i == d { 1.0 } else { 1.0 - cfg.dropout_p });
    let m_t = xtb.column_sum().component_mul(&keep);

    let lambda = cfg.lambda;
    let c = &p + (&u * m_t.transpose()) * (lambda * cfg.reg_target);
    let a = &q + &q_t * (lambda * u.norm_squared());
    let ctu = c.transpose() * &u;
    let z = solve_psd(&a, &DMatrix::from_column_slice(d + 1, 1, ctu.as_slice()), "msdar layer")?;
    let rhs = &c - (&u * (z.transpose() * &q_t)) * lambda;
    let w = solve_psd(&q, &rhs.transpose(), "msdar layer")?.transpose();
    Ok(MsdarLayer { w, domain_classifier: u })
}

fn apply_marginalized(w: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    w * with_bias(h)
}

/// Stacks closed-form layers. Layer k reads `tanh` of layer k-1's output;
/// the encoding concatenates the raw input with every layer's output.
pub fn stack_marginalized(xs: &DMatrix<f64>, xt: &DMatrix<f64>, cfg: &AdaptConfig) -> Result<AdaptModel> {
    cfg.validate()?;
    if !matches!(cfg.variant, Variant::Msda | Variant::Msdar) {
        return Err(Error::invalid("stack_marginalized", format!("variant {} is not marginalized", cfg.variant)));
    }
    if xs.nrows() != xt.nrows() {
        return Err(Error::invalid("stack_marginalized", "source and target dimensions differ"));
    }
    let d = xs.nrows();
    let (mut hs, mut ht) = (xs.clone(), xt.clone());
    let mut layers = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        let w = match cfg.variant {
            Variant::Msda => msda_layer(&hstack(&hs, &ht), cfg.dropout_p)?,
            _ => msdar_layer(&hs, &ht, cfg)?.w,
        };
        hs = apply_marginalized(&w, &hs).map(f64::tanh);
        ht = apply_marginalized(&w, &ht).map(f64::tanh);
        layers.push(Layer::Marginalized { w: StoredMatrix::from_dmatrix(&w) });
    }
    let model = AdaptModel {
        variant: cfg.variant,
        config: cfg.clone(),
        input_dim: d,
        output_dim: d * (cfg.layers + 1),
        layers,
    };
    model.validate()?;
    Ok(model)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// One denoising autoencoder: tanh encoder, linear decoder.
struct Dae {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
}

impl Dae {
    fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (input + hidden) as f64).sqrt();
        let mut init = |r, c| DMatrix::from_fn(r, c, |_, _| rng.random_range(-limit..limit));
        Dae {
            w1: init(hidden, input),
            b1: DVector::zeros(hidden),
            w2: init(input, hidden),
            b2: DVector::zeros(input),
        }
    }

    fn encode(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = &self.w1 * x;
        for mut col in h.column_iter_mut() {
            col += &self.b1;
        }
        h.map(f64::tanh)
    }

    fn reconstruct(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = &self.w2 * h;
        for mut col in y.column_iter_mut() {
            col += &self.b2;
        }
        y
    }

    /// Mean over samples of the per-dimension squared error.
    fn loss(&self, x: &DMatrix<f64>) -> f64 {
        let y = self.reconstruct(&self.encode(x));
        (y - x).norm_squared() / (x.len() as f64)
    }

    fn params_len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn flat_mut(&mut self) -> Vec<&mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
            .collect()
    }

    /// Gradient of the batch loss for clean targets `x` and corrupted inputs `xn`.
    fn gradient(&self, x: &DMatrix<f64>, xn: &DMatrix<f64>) -> Vec<f64> {
        let h = self.encode(xn);
        let y = self.reconstruct(&h);
        let dy = (y - x) * (2.0 / x.len() as f64);
        let gw2 = &dy * h.transpose();
        let gb2 = dy.column_sum();
        let dh = (self.w2.transpose() * &dy).component_mul(&h.map(|v| 1.0 - v * v));
        let gw1 = &dh * xn.transpose();
        let gb1 = dh.column_sum();
        gw1.iter().chain(gb1.iter()).chain(gw2.iter()).chain(gb2.iter()).copied().collect()
    }
}

fn row_std(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.ncols() as f64;
    x.row_iter()
        .map(|r| {
            let mean = r.sum() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            var.sqrt()
        })
        .collect()
}

/// Greedy layer-wise training of a stacked denoising autoencoder on the
/// pooled source and target columns. Returns the model and, per layer, the
/// clean reconstruction loss before training and after every epoch.
pub fn train_sda_with_curves(
    xs: &DMatrix<f64>,
    xt: &DMatrix<f64>,
    cfg: &AdaptConfig,
    seed: u64,
) -> Result<(AdaptModel, Vec<Vec<f64>>)> {
    cfg.validate()?;
    if cfg.variant != Variant::Sda {
        return Err(Error::invalid("train_sda", format!("variant {} is not sda", cfg.variant)));
    }
    if xs.nrows() != xt.nrows() {
        return Err(Error::invalid("train_sda", "source and target dimensions differ"));
    }
    let x = hstack(xs, xt);
    if x.ncols() < 2 {
        return Err(Error::invalid("train_sda", "need at least 2 samples"));
    }
    check_finite(&x, "train_sda")?;
    let t = &cfg.sda;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input = x;
    let mut layers = Vec::with_capacity(cfg.layers);
    let mut curves = Vec::with_capacity(cfg.layers);
    for layer in 0..cfg.layers {
        let d_in = input.nrows();
        let hidden = t.hidden.unwrap_or(d_in);
        let noise_std: Vec<f64> = row_std(&input).into_iter().map(|s| s * cfg.noise_scale).collect();
        let mut dae = Dae::new(d_in, hidden, &mut rng);
        let mut adam = Adam::new(dae.params_len());
        let mut curve = vec![dae.loss(&input)];
        let mut order: Vec<usize> = (0..input.ncols()).collect();
        for _ in 0..t.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(t.batch_size) {
                let xb = input.select_columns(batch.iter());
                let xn = DMatrix::from_fn(d_in, batch.len(), |i, j| {
                    let z: f64 = rng.sample(StandardNormal);
                    xb[(i, j)] + z * noise_std[i]
                });
                let grads = dae.gradient(&xb, &xn);
                let mut params: Vec<f64> = dae.flat_mut().into_iter().map(|p| *p).collect();
                adam.step(&mut params, &grads, t.learning_rate);
                for (slot, v) in dae.flat_mut().into_iter().zip(params) {
                    *slot = v;
                }
            }
            let loss = dae.loss(&input);
            if !loss.is_finite() {
                return Err(Error::numerical(
                    "train_sda",
                    format!("layer {layer} diverged (loss {loss}); try a smaller learning rate"),
                ));
            }
            curve.push(loss);
        }
        input = dae.encode(&input);
        layers.push(Layer::Denoising {
            weights: StoredMatrix::from_dmatrix(&dae.w1),
            biases: dae.b1.iter().copied().collect(),
            noise_std,
        });
        curves.push(curve);
    }
    let model = AdaptModel {
        variant: Variant::Sda,
        config: cfg.clone(),
        input_dim: xs.nrows(),
        output_dim: input.nrows(),
        layers,
    };
    model.validate()?;
    Ok((model, curves))
}

pub fn train_sda(xs: &DMatrix<f64>, xt: &DMatrix<f64>, cfg: &AdaptConfig, seed: u64) -> Result<AdaptModel> {
    train_sda_with_curves(xs, xt, cfg, seed).map(|(m, _)| m)
}

/// Trains the encoder selected by `cfg.variant`.
pub fn train(xs: &DMatrix<f64>, xt: &DMatrix<f64>, cfg: &AdaptConfig, seed: u64) -> Result<AdaptModel> {
    match cfg.variant {
        Variant::Dt => Ok(AdaptModel::identity(xs.nrows())),
        Variant::Sda => train_sda(xs, xt, cfg, seed),
        Variant::Msda | Variant::Msdar => stack_marginalized(xs, xt, cfg),
    }
}

/// Applies the model's encoder to the columns of `x`.
pub fn encode(model: &AdaptModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != model.input_dim {
        return Err(Error::invalid(
            "encode",
            format!("input has {} rows, model expects {}", x.nrows(), model.input_dim),
        ));
    }
    match model.variant {
        Variant::Dt => Ok(x.clone()),
        Variant::Sda => {
            let mut h = x.clone();
            for layer in &model.layers {
                if let Layer::Denoising { weights, biases, .. } = layer {
                    let mut z = weights.to_dmatrix() * &h;
                    let b = DVector::from_column_slice(biases);
                    for mut col in z.column_iter_mut() {
                        col += &b;
                    }
                    h = z.map(f64::tanh);
                }
            }
            Ok(h)
        }
        Variant::Msda | Variant::Msdar => {
            let mut out = DMatrix::zeros(model.output_dim, x.ncols());
            out.rows_mut(0, x.nrows()).copy_from(x);
            let mut h = x.clone();
            let mut row = x.nrows();
            for layer in &model.layers {
                if let Layer::Marginalized { w } = layer {
                    let o = apply_marginalized(&w.to_dmatrix(), &h);
                    out.rows_mut(row, o.nrows()).copy_from(&o);
                    row += o.nrows();
                    h = o.map(f64::tanh);
                }
            }
            Ok(out)
        }
    }
}
