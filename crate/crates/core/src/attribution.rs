//! Local feature-attribution methods.
//!
//! Every method maps one model snapshot and one instance to a signed score
//! per input feature. Six methods are gradient-based and read the network's
//! backward pass; occlusion, LIME and KernelSHAP only query the model as a
//! black box and are written against a plain closure so they can be reused
//! with any scalar function.
//!
//! Stochastic methods draw from a stream seeded by
//! `(rng_seed, instance_id, method)`, which makes the result of any single
//! explanation independent of how the work is scheduled.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Matrix;
use crate::model::{self, MlpParams, Target};
use crate::rng::{rng_from, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "deeplift")]
    DeepLift,
    GuidedBackprop,
    InputXGradient,
    IntegratedGradients,
    #[serde(rename = "smoothgrad")]
    SmoothGrad,
    VanillaGradient,
    Lime,
    Occlusion,
    KernelShap,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::DeepLift,
        Method::GuidedBackprop,
        Method::InputXGradient,
        Method::IntegratedGradients,
        Method::SmoothGrad,
        Method::VanillaGradient,
        Method::Lime,
        Method::Occlusion,
        Method::KernelShap,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::DeepLift => "deeplift",
            Method::GuidedBackprop => "guided_backprop",
            Method::InputXGradient => "input_x_gradient",
            Method::IntegratedGradients => "integrated_gradients",
            Method::SmoothGrad => "smoothgrad",
            Method::VanillaGradient => "vanilla_gradient",
            Method::Lime => "lime",
            Method::Occlusion => "occlusion",
            Method::KernelShap => "kernel_shap",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', ' '], "_");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attribution method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub scores: Vec<f64>,
    pub method: Method,
    pub instance_id: usize,
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapMode {
    /// Enumerate every coalition; falls back to sampling above
    /// [`EXACT_SHAP_MAX_FEATURES`].
    #[default]
    Exact,
    Sampled,
}

pub const EXACT_SHAP_MAX_FEATURES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionConfig {
    /// Reference input; `None` means the all-zero vector (the training mean
    /// in standardized space).
    pub baseline: Option<Vec<f64>>,
    pub target: Target,
    pub ig_steps: usize,
    pub sg_samples: usize,
    pub sg_noise: f64,
    pub lime_samples: usize,
    /// `None` means `0.75 * sqrt(K)`.
    pub lime_kernel_width: Option<f64>,
    pub lime_ridge: f64,
    pub shap_mode: ShapMode,
    pub shap_samples: usize,
    pub rng_seed: u64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self {
            baseline: None,
            target: Target::Logit,
            ig_steps: 50,
            sg_samples: 50,
            sg_noise: 0.1,
            lime_samples: 1000,
            lime_kernel_width: None,
            lime_ridge: 1e-3,
            shap_mode: ShapMode::Exact,
            shap_samples: 2048,
            rng_seed: 0,
        }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("ig_steps", self.ig_steps),
            ("sg_samples", self.sg_samples),
            ("lime_samples", self.lime_samples),
            ("shap_samples", self.shap_samples),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
        }
        if !(self.sg_noise > 0.0 && self.sg_noise.is_finite()) {
            return Err(Error::InvalidArgument("sg_noise must be positive".into()));
        }
        if !(self.lime_ridge.is_finite() && self.lime_ridge >= 0.0) {
            return Err(Error::InvalidArgument("lime_ridge must be >= 0".into()));
        }
        if let Some(w) = self.lime_kernel_width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument("lime_kernel_width must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn baseline_for(&self, k: usize) -> Result<Vec<f64>> {
        match &self.baseline {
            None => Ok(vec![0.0; k]),
            Some(b) if b.len() == k => Ok(b.clone()),
            Some(b) => Err(Error::Shape(format!("baseline has {} entries, model has {k} inputs", b.len()))),
        }
    }

    pub fn kernel_width(&self, k: usize) -> f64 {
        self.lime_kernel_width.unwrap_or(0.75 * (k as f64).sqrt())
    }

    fn rng(&self, instance_id: usize, method: Method) -> Rng {
        rng_from(self.rng_seed, &[instance_id as u64, method.stream()])
    }
}

fn check_finite(scores: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if scores.iter().all(|v| v.is_finite()) {
        Ok(scores)
    } else {
        Err(Error::NonFinite(format!("{what} attribution")))
    }
}

pub fn vanilla_gradient(params: &MlpParams, x: &[f64], cfg: &AttributionConfig) -> Result<Vec<f64>> {
    model::input_gradient(params, x, cfg.target)
}

pub fn input_x_gradient(params: &MlpParams, x: &[f64], cfg: &AttributionConfig) -> Result<Vec<f64>> {
    let g = model::input_gradient(params, x, cfg.target)?;
    Ok(g.iter().zip(x).map(|(g, x)| g * x).collect())
}

/// Midpoint-rule path integral of the gradient from the baseline to `x`,
/// scaled by `x - baseline`. Also returns the completeness residual
/// `|sum(scores) - (f(x) - f(baseline))|`.
pub fn integrated_gradients_with_residual(params: &MlpParams, x: &[f64], cfg: &AttributionConfig) -> Result<(Vec<f64>, f64)> {
    let baseline = cfg.baseline_for(x.len())?;
    let delta: Vec<f64> = x.iter().zip(&baseline).map(|(x, b)| x - b).collect();
    let steps = cfg.ig_steps;
    let mut sum = vec![0.0; x.len()];
    let mut point = vec![0.0; x.len()];
    for s in 0..steps {
        let alpha = (s as f64 + 0.5) / steps as f64;
        for ((p, b), d) in point.iter_mut().zip(&baseline).zip(&delta) {
            *p = b + alpha * d;
        }
        let g = model::input_gradient(params, &point, cfg.target)?;
        for (acc, g) in sum.iter_mut().zip(g) {
            *acc += g;
        }
    }
    let scores: Vec<f64> = sum.iter().zip(&delta).map(|(g, d)| g / steps as f64 * d).collect();
    let gap = model::output(params, x, cfg.target)? - model::output(params, &baseline, cfg.target)?;
    let residual = (scores.iter().sum::<f64>() - gap).abs();
    Ok((check_finite(scores, "integrated gradients")?, residual))
}

pub fn integrated_gradients(params: &MlpParams, x: &[f64], cfg: &AttributionConfig) -> Result<Vec<f64>> {
    integrated_gradients_with_residual(params, x, cfg).map(|(s, _)| s)
}

/// Mean gradient over Gaussian perturbations of `x` with standard deviation
/// `sg_noise`.
pub fn smoothgrad(params: &MlpParams, x: &[f64], instance_id: usize, cfg: &AttributionConfig) -> Result<Vec<f64>> {
    let mut rng = cfg.rng(instance_id, Method::SmoothGrad);
    let noise = Normal::new(0.0, cfg.sg_noise).map_err(|e| Error::InvalidArgument(format!("sg_noise: {e}")))?;
    let mut sum = vec![0.0; x.len()];
    let mut point = vec![0.0; x.len()];
    for _ in 0..cfg.sg_samples {
        for (p, x) in point.iter_mut().zip(x) {
            *p = x + noise.sample(&mut rng);
        }
        for (acc, g) in sum.iter_mut().zip(model::input_gradient(params, &point, cfg.target)?) {
            *acc += g;
        }
    }
    let n = cfg.sg_samples as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Backward pass that zeroes the signal at a rectifier when either the
/// forward activation or the incoming gradient is not positive.
pub fn guided_backprop(params: &MlpParams, x: &[f64], cfg: &AttributionConfig) -> Result<Vec<f64>> {
    model::guided_gradient(params, x, cfg.target)
}

/// DeepLIFT with the Rescale rule at every rectifier, referenced to the
/// baseline. With a probability target the logistic unit is rescaled too.
pub fn deeplift_rescale(params: &MlpParams, x: &[f64], cfg: &AttributionConfig) -> Result<Vec<f64>> {
    const MIN_DELTA: f64 = 1e-7;
    let baseline = cfg.baseline_for(x.len())?;
    let actual = model::forward(params, x)?;
    let reference = model::forward(params, &baseline)?;

    let d_logit = actual.logit - reference.logit;
    let m_out = match cfg.target {
        Target::Logit => 1.0,
        Target::Probability if d_logit.abs() > MIN_DELTA => (actual.probability - reference.probability) / d_logit,
        Target::Probability => reference.probability * (1.0 - reference.probability),
    };

    let n_hidden = params.n_hidden();
    let output_layer = &params.layers[n_hidden];
    let mut m: Vec<f64> = (0..output_layer.in_dim).map(|i| output_layer.weight(0, i) * m_out).collect();
    for l in (0..n_hidden).rev() {
        for (j, mj) in m.iter_mut().enumerate() {
            let dz = actual.pre[l][j] - reference.pre[l][j];
            let ratio = if dz.abs() > MIN_DELTA {
                (actual.post[l + 1][j] - reference.post[l + 1][j]) / dz
            } else if reference.pre[l][j] > 0.0 {
                1.0
            } else {
                0.0
            };
            *mj *= ratio;
        }
        let layer = &params.layers[l];
        let mut below = vec![0.0; layer.in_dim];
        for (o, mo) in m.iter().enumerate() {
            for (i, b) in below.iter_mut().enumerate() {
                *b += layer.weight(o, i) * mo;
            }
        }
        m = below;
    }
    let scores = m.iter().zip(x.iter().zip(&baseline)).map(|(m, (x, b))| m * (x - b)).collect();
    check_finite(scores, "deeplift")
}

/// `f(x) - f(x with feature i set to its baseline value)`; exactly `K + 1`
/// evaluations of `f`.
pub fn occlusion_with<F>(mut f: F, x: &[f64], baseline: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let full = f(x)?;
    let mut probe = x.to_vec();
    let mut scores = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = baseline[i];
        scores.push(full - f(&probe)?);
        probe[i] = x[i];
    }
    check_finite(scores, "occlusion")
}

pub fn occlusion(params: &MlpParams, x: &[f64], cfg: &AttributionConfig) -> Result<Vec<f64>> {
    let baseline = cfg.baseline_for(x.len())?;
    occlusion_with(|z| model::output(params, z, cfg.target), x, &baseline)
}

/// Weighted ridge regression of `f` on Gaussian perturbations `z ~ N(x, I)`
/// with kernel weights `exp(-|z - x|^2 / width^2)`. The intercept is not
/// penalized.
pub fn lime_with<F>(mut f: F, x: &[f64], samples: usize, width: f64, ridge: f64, rng: &mut Rng) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let k = x.len();
    if samples < k + 2 {
        return Err(Error::InvalidArgument(format!("LIME needs at least {} samples, got {samples}", k + 2)));
    }
    let mut zs = Vec::with_capacity(samples * k);
    let mut ys = Vec::with_capacity(samples);
    let mut ws = Vec::with_capacity(samples);
    let mut z = vec![0.0; k];
    for _ in 0..samples {
        let mut dist2 = 0.0;
        for (zi, xi) in z.iter_mut().zip(x) {
            let e: f64 = StandardNormal.sample(rng);
            *zi = xi + e;
            dist2 += e * e;
        }
        ys.push(f(&z)?);
        ws.push((-dist2 / (width * width)).exp());
        zs.extend_from_slice(&z);
    }
    weighted_ridge(&zs, &ys, &ws, k, ridge, "LIME")
}

/// Coefficients (without intercept) of a weighted ridge fit. Rows of `zs` are
/// samples of width `k`.
fn weighted_ridge(zs: &[f64], ys: &[f64], ws: &[f64], k: usize, ridge: f64, what: &'static str) -> Result<Vec<f64>> {
    let total: f64 = ws.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Singular(what));
    }
    let mut zbar = vec![0.0; k];
    let mut ybar = 0.0;
    for ((row, y), w) in zs.chunks(k).zip(ys).zip(ws) {
        for (m, v) in zbar.iter_mut().zip(row) {
            *m += w * v;
        }
        ybar += w * y;
    }
    zbar.iter_mut().for_each(|m| *m /= total);
    ybar /= total;

    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut c = DVector::<f64>::zeros(k);
    let mut centred = vec![0.0; k];
    for ((row, y), w) in zs.chunks(k).zip(ys).zip(ws) {
        for ((d, v), m) in centred.iter_mut().zip(row).zip(&zbar) {
            *d = v - m;
        }
        let dy = y - ybar;
        for i in 0..k {
            c[i] += w * centred[i] * dy;
            for j in 0..=i {
                a[(i, j)] += w * centred[i] * centred[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            a[(j, i)] = a[(i, j)];
        }
        a[(i, i)] += ridge;
    }
    solve_spd(a, c, what)
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, what: &'static str) -> Result<Vec<f64>> {
    let solution = match a.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => a.lu().solve(&b).ok_or(Error::Singular(what))?,
    };
    if solution.iter().all(|v| v.is_finite()) {
        Ok(solution.iter().copied().collect())
    } else {
        Err(Error::Singular(what))
    }
}

pub fn lime(params: &MlpParams, x: &[f64], instance_id: usize, cfg: &AttributionConfig) -> Result<Vec<f64>> {
    let mut rng = cfg.rng(instance_id, Method::Lime);
    lime_with(
        |z| model::output(params, z, cfg.target),
        x,
        cfg.lime_samples,
        cfg.kernel_width(x.len()),
        cfg.lime_ridge,
        &mut rng,
    )
}

fn binomial(n: usize, r: usize) -> f64 {
    let r = r.min(n - r);
    (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition of `size` features out of `k`.
pub fn shapley_kernel_weight(k: usize, size: usize) -> f64 {
    (k - 1) as f64 / (binomial(k, size) * size as f64 * (k - size) as f64)
}

/// KernelSHAP with masked-off features replaced by their baseline values.
///
/// Solves the Shapley-kernel weighted least squares subject to the scores
/// summing to `f(x) - f(baseline)`. In exact mode every non-trivial
/// coalition is enumerated, which reproduces the Shapley values exactly;
/// sampled mode draws coalitions with probability proportional to their
/// kernel weight.
pub fn kernel_shap_with<F>(mut f: F, x: &[f64], baseline: &[f64], mode: ShapMode, samples: usize, rng: &mut Rng) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let k = x.len();
    if k < 2 {
        return Err(Error::InvalidArgument("KernelSHAP needs at least 2 features".into()));
    }
    let f_base = f(baseline)?;
    let f_full = f(x)?;
    let gap = f_full - f_base;

    let mut a = DMatrix::<f64>::zeros(k - 1, k - 1);
    let mut c = DVector::<f64>::zeros(k - 1);
    let mut probe = vec![0.0; k];
    let mut mask = vec![false; k];
    let mut add = |mask: &[bool], weight: f64, probe: &mut [f64]| -> Result<()> {
        for ((p, &on), (xi, bi)) in probe.iter_mut().zip(mask).zip(x.iter().zip(baseline)) {
            *p = if on { *xi } else { *bi };
        }
        let y = f(probe)? - f_base;
        // Eliminate the last feature through the efficiency constraint.
        let last = f64::from(u8::from(mask[k - 1]));
        let t = y - last * gap;
        for i in 0..k - 1 {
            let ri = f64::from(u8::from(mask[i])) - last;
            if ri == 0.0 {
                continue;
            }
            c[i] += weight * ri * t;
            for j in 0..k - 1 {
                let rj = f64::from(u8::from(mask[j])) - last;
                a[(i, j)] += weight * ri * rj;
            }
        }
        Ok(())
    };

    if mode == ShapMode::Exact && k <= EXACT_SHAP_MAX_FEATURES {
        for bits in 1u32..(1u32 << k) - 1 {
            for (i, m) in mask.iter_mut().enumerate() {
                *m = bits >> i & 1 == 1;
            }
            let size = bits.count_ones() as usize;
            add(&mask, shapley_kernel_weight(k, size), &mut probe)?;
        }
    } else {
        // Total kernel mass of all coalitions of a given size.
        let size_mass: Vec<f64> = (1..k).map(|s| (k - 1) as f64 / (s * (k - s)) as f64).collect();
        let total: f64 = size_mass.iter().sum();
        for _ in 0..samples {
            let mut u = rng.random::<f64>() * total;
            let mut size = k - 1;
            for (s, m) in size_mass.iter().enumerate() {
                if u < *m {
                    size = s + 1;
                    break;
                }
                u -= m;
            }
            mask.iter_mut().for_each(|m| *m = false);
            for i in index::sample(rng, k, size) {
                mask[i] = true;
            }
            add(&mask, 1.0, &mut probe)?;
        }
    }
    let mut phi = solve_spd(a, c, "KernelSHAP")?;
    let last = gap - phi.iter().sum::<f64>();
    phi.push(last);
    check_finite(phi, "KernelSHAP")
}

pub fn kernel_shap(params: &MlpParams, x: &[f64], instance_id: usize, cfg: &AttributionConfig) -> Result<Vec<f64>> {
    let baseline = cfg.baseline_for(x.len())?;
    let mut rng = cfg.rng(instance_id, Method::KernelShap);
    kernel_shap_with(
        |z| model::output(params, z, cfg.target),
        x,
        &baseline,
        cfg.shap_mode,
        cfg.shap_samples,
        &mut rng,
    )
}

/// Scores of one method for one instance.
pub fn attribute(method: Method, params: &MlpParams, x: &[f64], instance_id: usize, cfg: &AttributionConfig) -> Result<Vec<f64>> {
    match method {
        Method::VanillaGradient => vanilla_gradient(params, x, cfg),
        Method::InputXGradient => input_x_gradient(params, x, cfg),
        Method::IntegratedGradients => integrated_gradients(params, x, cfg),
        Method::SmoothGrad => smoothgrad(params, x, instance_id, cfg),
        Method::GuidedBackprop => guided_backprop(params, x, cfg),
        Method::DeepLift => deeplift_rescale(params, x, cfg),
        Method::Occlusion => occlusion(params, x, cfg),
        Method::Lime => lime(params, x, instance_id, cfg),
        Method::KernelShap => kernel_shap(params, x, instance_id, cfg),
    }
}

pub fn explain(
    method: Method,
    params: &MlpParams,
    epoch: usize,
    x: &[f64],
    instance_id: usize,
    cfg: &AttributionConfig,
) -> Result<AttributionVector> {
    Ok(AttributionVector {
        scores: attribute(method, params, x, instance_id, cfg)?,
        method,
        instance_id,
        epoch,
    })
}

/// Explains every row of `instances` with every method. Output is ordered
/// instance-major, methods in the order given. Failures are collected and
/// reported together.
pub fn explain_all(
    params: &MlpParams,
    epoch: usize,
    instances: &Matrix,
    instance_ids: &[usize],
    methods: &[Method],
    cfg: &AttributionConfig,
) -> Result<Vec<AttributionVector>> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no attribution methods selected".into()));
    }
    if instance_ids.len() != instances.rows() {
        return Err(Error::Shape(format!(
            "{} instance ids for {} rows",
            instance_ids.len(),
            instances.rows()
        )));
    }
    cfg.validate()?;
    let tasks: Vec<(usize, Method)> = (0..instances.rows())
        .flat_map(|r| methods.iter().map(move |&m| (r, m)))
        .collect();
    let results = crate::experiment::par_map(&tasks, |&(r, m)| explain(m, params, epoch, instances.row(r), instance_ids[r], cfg));
    let mut out = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for ((r, m), res) in tasks.iter().zip(results) {
        match res {
            Ok(v) => out.push(v),
            Err(e) => failures.push(format!("instance {} / {m}: {e}", instance_ids[*r])),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(Error::InvalidArgument(format!(
            "{} attribution(s) failed: {}",
            failures.len(),
            failures.join("; ")
        )))
    }
}
