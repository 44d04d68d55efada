//! Weight initialization and the smooth-max variance model behind it.
//!
//! The variance of `s_α` over `n` i.i.d. unit-variance inputs is modeled as
//! `σ'² = a / n^b`. The shipped defaults can be regenerated with
//! [`fit_variance_model`].

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Variance ratio of a half-normal draw to its underlying normal, `1 − 2/π`.
pub const HALF_NORMAL_VAR: f64 = 1.0 - 2.0 / PI;

/// SE sizes used for fitting: `n = [3, 6, …, 24]²`.
pub fn default_fit_sizes() -> Vec<usize> {
    (1..=8).map(|k| (3 * k) * (3 * k)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Published,
    Fitted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel {
    /// `(|α|, a, b)`, sorted by `|α|`; `f64::INFINITY` is the max/min entry.
    entries: Vec<(f64, f64, f64)>,
    pub provenance: Provenance,
}

impl Default for VarianceModel {
    fn default() -> Self {
        VarianceModel {
            entries: vec![(0.0, 1.0, 1.0), (0.5, 1.32, 0.95), (1.0, 1.44, 0.74), (2.0, 0.82, 0.32), (f64::INFINITY, 0.60, 0.24)],
            provenance: Provenance::Published,
        }
    }
}

impl VarianceModel {
    pub fn new(mut entries: Vec<(f64, f64, f64)>, provenance: Provenance) -> Result<Self> {
        for e in &mut entries {
            e.0 = e.0.abs();
            if !(e.1 > 0.0) || !e.1.is_finite() || !e.2.is_finite() {
                return Err(Error::Variance(format!("bad coefficients a={} b={} for alpha {}", e.1, e.2, e.0)));
            }
        }
        entries.sort_by(|x, y| x.0.total_cmp(&y.0));
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Variance("duplicate alpha entry".into()));
        }
        Ok(VarianceModel { entries, provenance })
    }

    pub fn entries(&self) -> &[(f64, f64, f64)] {
        &self.entries
    }

    pub fn coefficients(&self, alpha: f64) -> Result<(f64, f64)> {
        let key = alpha.abs();
        self.entries
            .iter()
            .find(|e| e.0 == key || (e.0 - key).abs() < 1e-9)
            .map(|e| (e.1, e.2))
            .ok_or_else(|| Error::Variance(format!("no entry for alpha {alpha}; fit one with `fit-variance`")))
    }

    /// `σ'²(α, n) = min(a / n^b, 1)`. The cap keeps tiny windows from
    /// reporting more spread than a single input has.
    pub fn ratio(&self, alpha: f64, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::Variance("window size must be at least 1".into()));
        }
        let (a, b) = self.coefficients(alpha)?;
        Ok((a / (n as f64).powf(b)).min(1.0))
    }

    /// Output multiplier `σ_{s,∞} / σ_{s,α}` for soft hit-or-miss layers.
    pub fn alpha_scale(&self, alpha: f64, n: usize) -> Result<f64> {
        Ok((self.ratio(f64::INFINITY, n)? / self.ratio(alpha, n)?).sqrt())
    }

    /// One `alpha a b` line per entry; `inf` for the max/min entry.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# alpha a b\n");
        for &(al, a, b) in &self.entries {
            let al = if al.is_infinite() { "inf".to_string() } else { al.to_string() };
            let _ = writeln!(s, "{al} {a} {b}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|t| match t {
                    "inf" | "+inf" | "-inf" => Ok(f64::INFINITY),
                    _ => t.parse::<f64>(),
                })
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("variance table line {}: {e}", i + 1)))?;
            let [al, a, b] = nums[..] else {
                return Err(Error::Format(format!("variance table line {}: expected `alpha a b`", i + 1)));
            };
            entries.push((al, a, b));
        }
        Self::new(entries, Provenance::Fitted)
    }
}

fn smooth_or_extreme(x: &[f64], alpha: f64, scratch: &mut [f64]) -> f64 {
    if alpha == f64::INFINITY {
        x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    } else if alpha == f64::NEG_INFINITY {
        x.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        crate::smooth::smooth_max_into(x, alpha, scratch)
    }
}

/// Monte-Carlo estimate of `Var(s_α(x)) / Var(x)` for `x ~ N(0, I_n)`.
pub fn variance_ratio(alpha: f64, n: usize, trials: usize, rng: &mut Rng) -> f64 {
    let mut x = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let (mut sum, mut sq) = (0.0, 0.0);
    let (mut xs, mut xq) = (0.0, 0.0);
    for _ in 0..trials {
        rng.fill_normal(&mut x, 0.0, 1.0);
        for &v in &x {
            xs += v;
            xq += v * v;
        }
        let s = smooth_or_extreme(&x, alpha, &mut scratch);
        sum += s;
        sq += s * s;
    }
    let t = trials as f64;
    let var_s = (sq - sum * sum / t) / (t - 1.0);
    let m = t * n as f64;
    let var_x = (xq - xs * xs / m) / (m - 1.0);
    var_s / var_x
}

/// Fits `σ'² ≈ a / n^b` to Monte-Carlo ratios.
///
/// A log-space line fit seeds Gauss-Newton on the squared residuals of the
/// ratios themselves; the linear-space fit is what matches the shipped
/// coefficients, since the log fit overweights the large-`n` tail.
pub fn fit_variance_model(alpha: f64, sizes: &[usize], trials: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    if trials < 2 {
        return Err(Error::Variance("need at least two trials per size".into()));
    }
    let ratios: Vec<f64> = sizes.iter().map(|&n| variance_ratio(alpha, n, trials, rng)).collect();
    fit_power_law(sizes, &ratios)
}

/// Least-squares fit of `y ≈ a / n^b`.
pub fn fit_power_law(sizes: &[usize], ratios: &[f64]) -> Result<(f64, f64)> {
    let mut distinct: Vec<usize> = sizes.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 || sizes.len() != ratios.len() || distinct[0] == 0 {
        return Err(Error::Variance("need at least two distinct positive window sizes".into()));
    }
    if ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::Variance("variance ratios must be positive".into()));
    }
    let ln: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    let k = ln.len() as f64;
    let (mx, my) = (ln.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxx: f64 = ln.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = ln.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let (mut a, mut b) = ((my - slope * mx).exp(), -slope);

    for _ in 0..100 {
        // residual r = y − a·n^{−b}; J = [−n^{−b}, a·ln n·n^{−b}]
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for ((&y, &l), _) in ratios.iter().zip(&ln).zip(sizes) {
            let p = (-b * l).exp();
            let r = y - a * p;
            let j = [-p, a * l * p];
            for u in 0..2 {
                jtr[u] += j[u] * r;
                for v in 0..2 {
                    jtj[u][v] += j[u] * j[v];
                }
            }
        }
        let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            return Err(Error::Variance("singular fit".into()));
        }
        let da = -(jtj[1][1] * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let db = -(jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det;
        a += da;
        b += db;
        if da.abs() < 1e-12 * a.abs() && db.abs() < 1e-12 {
            break;
        }
    }
    if !(a > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Variance(format!("fit diverged (a={a}, b={b})")));
    }
    Ok((a, b))
}

/// Weight variance for generalized convolutions over `n` cells:
/// `1 / (n² σ'²)`.
pub fn gc_init_variance(n: usize, alpha: f64, model: &VarianceModel) -> Result<f64> {
    let r = model.ratio(alpha, n)?;
    Ok(1.0 / ((n * n) as f64 * r))
}

/// Variance of the normal underlying half-normal hit/miss elements:
/// `(1/σ_hn²)(1/σ'² − 1) σ_f²`.
pub fn shm_init_variance(sigma_f2: f64, alpha: f64, n: usize, model: &VarianceModel) -> Result<f64> {
    if !(sigma_f2 > 0.0) {
        return Err(Error::Variance(format!("input variance must be positive, got {sigma_f2}")));
    }
    let r = model.ratio(alpha, n)?;
    if r >= 1.0 {
        return Err(Error::Variance(format!(
            "σ'² = {r} ≥ 1 at alpha {alpha}, n {n}; initialize with the max/min entry and scale the output instead"
        )));
    }
    Ok((1.0 / r - 1.0) * sigma_f2 / HALF_NORMAL_VAR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
    Normal { std: f64 },
    HalfNormal { std: f64 },
    /// `N(0, 2 / fan_in)`.
    Kaiming,
    /// Half-normal with the max/min-entry hit-or-miss variance.
    ShmVariance,
    /// `N(0, 1 / (n² σ'²_α))`.
    GcVariance {
        #[serde(with = "crate::serde_f64")]
        alpha: f64,
    },
}

impl InitSpec {
    /// Parses `constant:0.01`, `uniform:-0.01,0.01`, `normal:1`, `half-normal:1`,
    /// `kaiming`, `shm-variance`, `gc-variance:0.5`.
    pub fn parse(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            arg.split(',')
                .filter(|t| !t.is_empty())
                .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number `{t}` in init spec `{s}`"))))
                .collect()
        };
        let need = |k: usize| -> Result<Vec<f64>> {
            let v = nums()?;
            if v.len() != k {
                return Err(Error::Config(format!("init spec `{s}` needs {k} argument(s)")));
            }
            Ok(v)
        };
        Ok(match name.trim().replace('_', "-").as_str() {
            "constant" => InitSpec::Constant { value: need(1)?[0] },
            "uniform" => {
                let v = need(2)?;
                InitSpec::Uniform { lo: v[0], hi: v[1] }
            }
            "normal" => InitSpec::Normal { std: need(1)?[0] },
            "half-normal" => InitSpec::HalfNormal { std: need(1)?[0] },
            "kaiming" => InitSpec::Kaiming,
            "shm-variance" => InitSpec::ShmVariance,
            "gc-variance" => InitSpec::GcVariance { alpha: need(1)?[0] },
            other => return Err(Error::Config(format!("unknown init scheme `{other}`"))),
        })
    }
}

/// What an initializer may depend on besides the shape.
#[derive(Clone, Debug)]
pub struct InitContext<'a> {
    /// Cells feeding one output (`in_ch · k · k`).
    pub fan_in: usize,
    /// Variance of the layer input.
    pub sigma_f2: f64,
    pub model: &'a VarianceModel,
}

pub fn initialize<T: Scalar>(spec: &InitSpec, shape: &[usize], ctx: &InitContext<'_>, rng: &mut Rng) -> Result<Tensor<T>> {
    let n = ctx.fan_in.max(1);
    let mut t = Tensor::zeros(shape);
    let d = t.data_mut();
    match *spec {
        InitSpec::Constant { value } => d.fill(T::of(value)),
        InitSpec::Uniform { lo, hi } => {
            if !(hi >= lo) {
                return Err(Error::Config(format!("uniform init needs lo <= hi, got {lo}, {hi}")));
            }
            rng.fill_uniform(d, lo, hi)
        }
        InitSpec::Normal { std } => rng.fill_normal(d, 0.0, std),
        InitSpec::HalfNormal { std } => d.iter_mut().for_each(|v| *v = T::of(rng.half_normal(std))),
        InitSpec::Kaiming => rng.fill_normal(d, 0.0, (2.0 / n as f64).sqrt()),
        InitSpec::ShmVariance => {
            let std = shm_init_variance(ctx.sigma_f2, f64::INFINITY, n, ctx.model)?.sqrt();
            d.iter_mut().for_each(|v| *v = T::of(rng.half_normal(std)));
        }
        InitSpec::GcVariance { alpha } => rng.fill_normal(d, 0.0, gc_init_variance(n, alpha, ctx.model)?.sqrt()),
    }
    if !t.all_finite() {
        return Err(Error::NonFinite(format!("{spec:?} produced non-finite weights")));
    }
    Ok(t)
}
