//! Local objectives with exact derivative oracles.
//!
//! A shard evaluates
//!
//! ```text
//! f_k(x) = (1/n) Σ_j loss(x; a_j, y_j) + (mu_reg/2)‖x − x₀‖²
//! ```
//!
//! where the per-sample loss is either logistic, `log(1 + exp(−y aᵀx))`, or
//! least squares, `½(aᵀx − y)²`. Explicit quadratics `½(x − c)ᵀQ(x − c)` are
//! also supported for hand-built test problems.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::wire;

/// Largest |σ''(z)| over the real line, attained at σ(z) = ½ ± 1/(2√3).
pub const LOGISTIC_THIRD_DERIVATIVE_MAX: f64 = 0.096_225_044_864_937_63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Logistic,
    Quadratic,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKind::Logistic => f.write_str("logistic"),
            ObjectiveKind::Quadratic => f.write_str("quadratic"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSample {
    pub features: DVector<f64>,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<DataSample>,
    pub d: usize,
    pub seed: u64,
}

/// Fixed parameters of the synthetic data generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Norm of the ground-truth weight vector.
    pub truth_norm: f64,
    /// Logistic: labels are flipped with this probability on top of the
    /// Bernoulli draw. Quadratic: standard deviation of the additive noise.
    pub label_noise: f64,
    /// Coordinate `j` of the features has standard deviation proportional to
    /// `(j+1)^{−spectrum_decay}`; zero gives isotropic features.
    #[serde(default)]
    pub spectrum_decay: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self { truth_norm: 2.0, label_noise: 0.1, spectrum_decay: 0.0 }
    }
}

impl GeneratorParams {
    /// Per-coordinate feature scales with `Σ scale² = feat_bound²`.
    fn feature_scales(&self, d: usize, feat_bound: f64) -> Vec<f64> {
        if self.spectrum_decay == 0.0 {
            return vec![feat_bound / (d as f64).sqrt(); d];
        }
        let w: Vec<f64> = (0..d).map(|j| ((j + 1) as f64).powf(-self.spectrum_decay)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.iter().map(|v| feat_bound * v / norm).collect()
    }
}

pub fn gen_synthetic(seed: u64, n: usize, d: usize, kind: ObjectiveKind, feat_bound: f64) -> Result<Dataset> {
    gen_synthetic_with(seed, n, d, kind, feat_bound, GeneratorParams::default())
}

/// Draws `n` iid samples from a fixed linear ground-truth model.
///
/// Features are centred Gaussians with expected squared norm `feat_bound²`,
/// projected onto the ball of radius `feat_bound`.
pub fn gen_synthetic_with(
    seed: u64,
    n: usize,
    d: usize,
    kind: ObjectiveKind,
    feat_bound: f64,
    params: GeneratorParams,
) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!("sample count and dimension must be positive (N={n}, d={d})")));
    }
    if !(feat_bound > 0.0) || !feat_bound.is_finite() {
        return Err(Error::InvalidParameter(format!("feature bound {feat_bound} must be positive")));
    }
    if !(0.0..=1.0).contains(&params.label_noise) && kind == ObjectiveKind::Logistic {
        return Err(Error::InvalidParameter("label flip probability must lie in [0, 1]".into()));
    }

    let mut truth_rng = rng::stream(seed, rng::STREAM_GROUND_TRUTH);
    let mut truth = DVector::from_fn(d, |_, _| truth_rng.sample::<f64, _>(StandardNormal));
    let norm = truth.norm();
    if norm > 0.0 {
        truth *= params.truth_norm / norm;
    }

    if !(params.spectrum_decay >= 0.0) || !params.spectrum_decay.is_finite() {
        return Err(Error::InvalidParameter(format!("spectrum decay {} must be ≥ 0", params.spectrum_decay)));
    }
    let scales = params.feature_scales(d, feat_bound);
    let mut feat_rng = rng::stream(seed, rng::STREAM_FEATURES);
    let mut label_rng = rng::stream(seed, rng::STREAM_LABELS);
    let flip = Bernoulli::new(params.label_noise.clamp(0.0, 1.0)).expect("probability in range");

    let samples = (0..n)
        .map(|_| {
            let mut a = DVector::from_fn(d, |j, _| scales[j] * feat_rng.sample::<f64, _>(StandardNormal));
            let an = a.norm();
            if an > feat_bound {
                a *= feat_bound / an;
            }
            let margin = a.dot(&truth);
            let label = match kind {
                ObjectiveKind::Logistic => {
                    let p = sigmoid(margin);
                    let mut y = if label_rng.random::<f64>() < p { 1.0 } else { -1.0 };
                    if flip.sample(&mut label_rng) {
                        y = -y;
                    }
                    y
                }
                ObjectiveKind::Quadratic => margin + params.label_noise * label_rng.sample::<f64, _>(StandardNormal),
            };
            DataSample { features: a, label }
        })
        .collect();

    Ok(Dataset { samples, d, seed })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// CSV with header `label,f0,...,f{d-1}`; values carry 17 significant
    /// digits so that parsing restores them exactly.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> =
            std::iter::once("label".to_string()).chain((0..self.d).map(|i| format!("f{i}"))).collect();
        writeln!(out, "{}", header.join(","))?;
        for s in &self.samples {
            let mut line = fmt_f64(s.label);
            for v in s.features.iter() {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, seed: u64) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| Error::Malformed("empty dataset file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"label") || cols.len() < 2 {
            return Err(Error::Malformed(format!("unexpected header {header:?}")));
        }
        for (i, c) in cols[1..].iter().enumerate() {
            if *c != format!("f{i}") {
                return Err(Error::Malformed(format!("unexpected column {c:?}")));
            }
        }
        let d = cols.len() - 1;
        let mut samples = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Malformed(format!("bad number in {line:?}: {e}")))?;
            if vals.len() != d + 1 {
                return Err(Error::DimensionMismatch { expected: d + 1, got: vals.len() });
            }
            samples.push(DataSample { label: vals[0], features: DVector::from_column_slice(&vals[1..]) });
        }
        Ok(Dataset { samples, d, seed })
    }

    /// Flat payload `[d, N, label₀, a₀…, label₁, a₁…]`.
    pub fn to_values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + self.len() * (self.d + 1));
        v.push(self.d as f64);
        v.push(self.len() as f64);
        for s in &self.samples {
            v.push(s.label);
            v.extend(s.features.iter());
        }
        v
    }

    pub fn from_values(values: &[f64], seed: u64) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Malformed("dataset payload too short".into()));
        }
        let d = as_count(values[0])?;
        let n = as_count(values[1])?;
        let body = &values[2..];
        if d == 0 || body.len() != n * (d + 1) {
            return Err(Error::Malformed(format!(
                "dataset payload holds {} values, expected {}",
                body.len(),
                n * (d + 1)
            )));
        }
        let samples = body
            .chunks_exact(d + 1)
            .map(|c| DataSample { label: c[0], features: DVector::from_column_slice(&c[1..]) })
            .collect();
        Ok(Dataset { samples, d, seed })
    }

    /// Binary form: the same length-prefixed little-endian f64 block used for
    /// message payloads on the wire.
    pub fn to_bytes(&self) -> Vec<u8> {
        wire::encode_values(&self.to_values())
    }

    pub fn from_bytes(bytes: &[u8], seed: u64) -> Result<Self> {
        Self::from_values(&wire::decode_values(bytes)?, seed)
    }
}

pub(crate) fn as_count(v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
        Ok(v as usize)
    } else {
        Err(Error::Malformed(format!("{v} is not a count")))
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    /// Bound on the Lipschitz constant of the value.
    pub l0: f64,
    /// Bound on the Lipschitz constant of the gradient.
    pub l1: f64,
    /// Bound on the Lipschitz constant of the Hessian.
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum LossData {
    Samples { features: DMatrix<f64>, labels: DVector<f64> },
    Explicit { hessian: DMatrix<f64>, center: DVector<f64> },
}

/// One worker's local objective. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveShard {
    kind: ObjectiveKind,
    data: LossData,
    mu_reg: f64,
    anchor: DVector<f64>,
}

impl ObjectiveShard {
    pub fn from_samples(
        kind: ObjectiveKind,
        samples: &[DataSample],
        mu_reg: f64,
        anchor: DVector<f64>,
    ) -> Result<Self> {
        let d = anchor.len();
        check_reg(mu_reg)?;
        let mut features = DMatrix::zeros(samples.len(), d);
        let mut labels = DVector::zeros(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.features.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: s.features.len() });
            }
            features.row_mut(i).copy_from(&s.features.transpose());
            labels[i] = s.label;
        }
        Ok(Self { kind, data: LossData::Samples { features, labels }, mu_reg, anchor })
    }

    /// `½(x − c)ᵀQ(x − c) + (mu_reg/2)‖x − x₀‖²` with `Q` symmetric PSD.
    pub fn quadratic(hessian: DMatrix<f64>, center: DVector<f64>, mu_reg: f64, anchor: DVector<f64>) -> Result<Self> {
        let d = anchor.len();
        check_reg(mu_reg)?;
        if hessian.nrows() != d || hessian.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: hessian.nrows() });
        }
        if center.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: center.len() });
        }
        let asym = (&hessian - hessian.transpose()).amax();
        if asym > 1e-8 {
            return Err(Error::NonSymmetric(asym));
        }
        Ok(Self { kind: ObjectiveKind::Quadratic, data: LossData::Explicit { hessian, center }, mu_reg, anchor })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn mu_reg(&self) -> f64 {
        self.mu_reg
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    /// Number of samples; explicit quadratics count as zero.
    pub fn len(&self) -> usize {
        match &self.data {
            LossData::Samples { labels, .. } => labels.len(),
            LossData::Explicit { .. } => 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_explicit(&self) -> bool {
        matches!(self.data, LossData::Explicit { .. })
    }

    pub fn samples(&self) -> Vec<DataSample> {
        match &self.data {
            LossData::Samples { features, labels } => (0..labels.len())
                .map(|i| DataSample { features: features.row(i).transpose(), label: labels[i] })
                .collect(),
            LossData::Explicit { .. } => Vec::new(),
        }
    }

    /// Copy of the shard with a different regularization weight.
    pub fn with_mu_reg(&self, mu_reg: f64) -> Result<Self> {
        check_reg(mu_reg)?;
        Ok(Self { mu_reg, ..self.clone() })
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() })
        } else {
            Ok(())
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        let data = match &self.data {
            LossData::Samples { features, labels } => {
                if labels.is_empty() {
                    0.0
                } else {
                    let z = features * x;
                    let sum: f64 = match self.kind {
                        ObjectiveKind::Logistic => z.iter().zip(labels.iter()).map(|(z, y)| softplus(-y * z)).sum(),
                        ObjectiveKind::Quadratic => {
                            z.iter().zip(labels.iter()).map(|(z, y)| 0.5 * (z - y) * (z - y)).sum()
                        }
                    };
                    sum / labels.len() as f64
                }
            }
            LossData::Explicit { hessian, center } => {
                let r = x - center;
                0.5 * r.dot(&(hessian * &r))
            }
        };
        Ok(data + 0.5 * self.mu_reg * (x - &self.anchor).norm_squared())
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let mut g = match &self.data {
            LossData::Samples { features, labels } => {
                if labels.is_empty() {
                    DVector::zeros(self.dim())
                } else {
                    let z = features * x;
                    let inv_n = 1.0 / labels.len() as f64;
                    let coef = DVector::from_iterator(
                        labels.len(),
                        z.iter().zip(labels.iter()).map(|(z, y)| {
                            inv_n
                                * match self.kind {
                                    ObjectiveKind::Logistic => -y * sigmoid(-y * z),
                                    ObjectiveKind::Quadratic => z - y,
                                }
                        }),
                    );
                    features.tr_mul(&coef)
                }
            }
            LossData::Explicit { hessian, center } => hessian * (x - center),
        };
        if self.mu_reg != 0.0 {
            g.axpy(self.mu_reg, &(x - &self.anchor), 1.0);
        }
        Ok(g)
    }

    /// Value and gradient in one pass, as replied by a worker.
    pub fn value_and_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        Ok((self.value(x)?, self.gradient(x)?))
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x)?;
        let d = self.dim();
        let mut h = match &self.data {
            LossData::Samples { features, labels } => {
                if labels.is_empty() {
                    DMatrix::zeros(d, d)
                } else {
                    let inv_n = 1.0 / labels.len() as f64;
                    match self.kind {
                        ObjectiveKind::Logistic => {
                            let z = features * x;
                            let mut weighted = features.clone();
                            for (i, zi) in z.iter().enumerate() {
                                let s = sigmoid(*zi);
                                weighted.row_mut(i).scale_mut(inv_n * s * (1.0 - s));
                            }
                            features.tr_mul(&weighted)
                        }
                        ObjectiveKind::Quadratic => features.tr_mul(features) * inv_n,
                    }
                }
            }
            LossData::Explicit { hessian, .. } => hessian.clone(),
        };
        for i in 0..d {
            h[(i, i)] += self.mu_reg;
        }
        symmetrize(&mut h);
        Ok(h)
    }

    /// Conservative smoothness constants valid on the ball of radius `r_dom`
    /// around the anchor.
    pub fn lipschitz_constants(&self, r_dom: f64) -> LipschitzConstants {
        let mu = self.mu_reg;
        match &self.data {
            LossData::Samples { features, labels } => {
                let n = labels.len();
                if n == 0 {
                    return LipschitzConstants { l0: mu * r_dom, l1: mu, l2: 0.0 };
                }
                let norms: Vec<f64> = features.row_iter().map(|r| r.norm()).collect();
                let mean = |f: &dyn Fn(usize) -> f64| (0..n).map(f).sum::<f64>() / n as f64;
                let m1 = mean(&|i| norms[i]);
                let m2 = mean(&|i| norms[i] * norms[i]);
                let m3 = mean(&|i| norms[i].powi(3));
                match self.kind {
                    ObjectiveKind::Logistic => LipschitzConstants {
                        l0: m1 + mu * r_dom,
                        l1: 0.25 * m2 + mu,
                        l2: LOGISTIC_THIRD_DERIVATIVE_MAX * m3,
                    },
                    ObjectiveKind::Quadratic => {
                        let xmax = self.anchor.norm() + r_dom;
                        let l0 = mean(&|i| norms[i] * (norms[i] * xmax + labels[i].abs()));
                        LipschitzConstants { l0: l0 + mu * r_dom, l1: m2 + mu, l2: 0.0 }
                    }
                }
            }
            LossData::Explicit { hessian, center } => {
                let q = spectral_norm_sym(hessian);
                let reach = (&self.anchor - center).norm() + r_dom;
                LipschitzConstants { l0: q * reach + mu * r_dom, l1: q + mu, l2: 0.0 }
            }
        }
    }

    /// Lower bound on the strong convexity modulus valid everywhere.
    pub fn strong_convexity(&self) -> f64 {
        match (&self.data, self.kind) {
            (LossData::Samples { labels, .. }, _) if labels.is_empty() => self.mu_reg,
            (LossData::Samples { .. }, ObjectiveKind::Logistic) => self.mu_reg,
            (LossData::Samples { .. }, ObjectiveKind::Quadratic) | (LossData::Explicit { .. }, _) => {
                let h = self.hessian(&self.anchor).expect("anchor has shard dimension");
                let min = h.symmetric_eigenvalues().min();
                min.max(self.mu_reg)
            }
        }
    }

    /// Flat encoding `[kind, mu_reg, d, n, x₀…, body…]`, where the body is
    /// `n` rows of `(label, features…)` for sample shards and `Q` (row-major)
    /// followed by `c` for explicit quadratics (kind code 2, n = 0).
    pub fn to_values(&self) -> Vec<f64> {
        let d = self.dim();
        let (code, n) = match (&self.data, self.kind) {
            (LossData::Samples { labels, .. }, ObjectiveKind::Logistic) => (0.0, labels.len()),
            (LossData::Samples { labels, .. }, ObjectiveKind::Quadratic) => (1.0, labels.len()),
            (LossData::Explicit { .. }, _) => (2.0, 0),
        };
        let mut v = vec![code, self.mu_reg, d as f64, n as f64];
        v.extend(self.anchor.iter());
        match &self.data {
            LossData::Samples { features, labels } => {
                for i in 0..n {
                    v.push(labels[i]);
                    v.extend(features.row(i).iter());
                }
            }
            LossData::Explicit { hessian, center } => {
                for i in 0..d {
                    v.extend(hessian.row(i).iter());
                }
                v.extend(center.iter());
            }
        }
        v
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() < 4 {
            return Err(Error::Malformed("shard payload too short".into()));
        }
        let d = as_count(v[2])?;
        let n = as_count(v[3])?;
        if d == 0 || v.len() < 4 + d {
            return Err(Error::Malformed("shard payload has no anchor".into()));
        }
        let anchor = DVector::from_column_slice(&v[4..4 + d]);
        let body = &v[4 + d..];
        match v[0] as i64 {
            code @ (0 | 1) => {
                if body.len() != n * (d + 1) {
                    return Err(Error::Malformed("shard sample block has wrong length".into()));
                }
                let kind = if code == 0 { ObjectiveKind::Logistic } else { ObjectiveKind::Quadratic };
                let samples: Vec<DataSample> = body
                    .chunks_exact(d + 1)
                    .map(|c| DataSample { label: c[0], features: DVector::from_column_slice(&c[1..]) })
                    .collect();
                Self::from_samples(kind, &samples, v[1], anchor)
            }
            2 => {
                if body.len() != d * d + d {
                    return Err(Error::Malformed("quadratic shard block has wrong length".into()));
                }
                let hessian = DMatrix::from_row_slice(d, d, &body[..d * d]);
                let center = DVector::from_column_slice(&body[d * d..]);
                Self::quadratic(hessian, center, v[1], anchor)
            }
            other => Err(Error::Malformed(format!("unknown shard kind code {other}"))),
        }
    }
}

fn check_reg(mu_reg: f64) -> Result<()> {
    if mu_reg >= 0.0 && mu_reg.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("regularization weight {mu_reg} must be finite and ≥ 0")))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eᶻ)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn symmetrize(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn spectral_norm_sym(h: &DMatrix<f64>) -> f64 {
    if h.is_empty() {
        return 0.0;
    }
    h.symmetric_eigenvalues().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub max_rel_err_grad: f64,
    pub max_rel_err_hess: f64,
}

/// Compares the analytic oracles against central differences with step `h`.
///
/// Errors are measured in the max norm and divided by `max(1, ‖analytic‖∞)`.
pub fn check_derivatives(shard: &ObjectiveShard, x: &DVector<f64>, h: f64) -> Result<DerivativeReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step {h} must be positive")));
    }
    let d = shard.dim();
    let g = shard.gradient(x)?;
    let hess = shard.hessian(x)?;
    let mut fd_g = DVector::zeros(d);
    let mut fd_h = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        fd_g[i] = (shard.value(&xp)? - shard.value(&xm)?) / (2.0 * h);
        let col = (shard.gradient(&xp)? - shard.gradient(&xm)?) / (2.0 * h);
        fd_h.set_column(i, &col);
    }
    let rel = |diff: f64, scale: f64| diff / scale.max(1.0);
    Ok(DerivativeReport {
        max_rel_err_grad: rel((&fd_g - &g).amax(), g.amax()),
        max_rel_err_hess: rel((&fd_h - &hess).amax(), hess.amax()),
    })
}
