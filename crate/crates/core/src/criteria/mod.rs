//! Elementary and compound design criteria: DP/LP inference precision,
//! lack-of-fit detectability, and MSE protection against polynomial model
//! contamination, with pure-error degrees of freedom throughout.
//!
//! All criteria are minimized. A design with zero pure-error degrees of
//! freedom evaluates every F-bearing criterion to +infinity (efficiency 0).

mod bundle;

pub use bundle::{projection_matrix, Grams, MatrixBundle};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{pure_error_dof, Design, DofSummary};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::numerics::{f_upper_quantile, Matrix};

/// Which pair of elementary forms the compound criterion combines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Determinant,
    Trace,
}

/// Estimator of the MSE bias expectation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Monte-Carlo average over the scaled prior draws.
    Mc,
    /// Point prior at the prior standard deviation (closed form).
    PointPrior,
}

/// Non-negative weights for (inference, lack-of-fit, mse), summing to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub inference: f64,
    pub lof: f64,
    pub mse: f64,
}

impl Weights {
    pub fn new(inference: f64, lof: f64, mse: f64) -> Result<Self> {
        let w = Weights {
            inference,
            lof,
            mse,
        };
        w.validate("kappa")?;
        Ok(w)
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let parts = [self.inference, self.lof, self.mse];
        if parts.iter().any(|&k| !(k >= 0.0) || !k.is_finite()) {
            return Err(Error::config(path, "weights must be non-negative"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                path,
                format!("weights must sum to 1 (got {sum})"),
            ));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.inference, self.lof, self.mse]
    }
}

/// Everything a compound evaluation needs besides the design and model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriterionConfig {
    pub family: Family,
    pub weights: Weights,
    /// Prior scaling of the potential terms relative to the error variance.
    pub tau2: f64,
    pub alpha_dp: f64,
    pub alpha_lp: f64,
    pub alpha_lof: f64,
    /// Diagonal weight matrix W of the LP criterion (defaults to ones).
    pub w_diag: Option<Vec<f64>>,
    /// Diagonal of PP' in the lack-of-fit LP criterion (defaults to ones).
    pub lof_pp_diag: Option<Vec<f64>>,
    pub estimator: Estimator,
    /// Monte-Carlo sample size N.
    pub mc_samples: usize,
    pub mc_seed: u64,
}

impl CriterionConfig {
    pub fn new(family: Family, weights: Weights, tau2: f64) -> Self {
        CriterionConfig {
            family,
            weights,
            tau2,
            alpha_dp: 0.05,
            alpha_lp: 0.05,
            alpha_lof: 0.05,
            w_diag: None,
            lof_pp_diag: None,
            estimator: Estimator::PointPrior,
            mc_samples: 1000,
            mc_seed: 0,
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        self.weights.validate("criterion.kappa")?;
        if !(self.tau2 > 0.0) || !self.tau2.is_finite() {
            return Err(Error::config("criterion.tau2", "tau2 must be positive"));
        }
        for (alpha, path) in [
            (self.alpha_dp, "criterion.alpha_dp"),
            (self.alpha_lp, "criterion.alpha_lp"),
            (self.alpha_lof, "criterion.alpha_lof"),
        ] {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::config(path, "significance level must be in (0, 1)"));
            }
        }
        let p_s = if spec.has_intercept() {
            spec.p() - 1
        } else {
            spec.p()
        };
        if let Some(w) = &self.w_diag {
            if w.len() != p_s {
                return Err(Error::config(
                    "criterion.w_diag",
                    format!("expected {p_s} entries, got {}", w.len()),
                ));
            }
            if w.iter().any(|&v| v < 0.0) {
                return Err(Error::config("criterion.w_diag", "weights must be >= 0"));
            }
        }
        if let Some(w) = &self.lof_pp_diag {
            if w.len() != spec.q() {
                return Err(Error::config(
                    "criterion.lof_pp_diag",
                    format!("expected {} entries, got {}", spec.q(), w.len()),
                ));
            }
        }
        if self.estimator == Estimator::Mc && self.mc_samples == 0 {
            return Err(Error::config(
                "criterion.mc_samples",
                "Monte-Carlo estimation needs at least 1 sample",
            ));
        }
        Ok(())
    }

    /// Whether any positively weighted component carries an F quantile, i.e.
    /// whether the compound value is infinite at zero pure-error dof.
    pub fn needs_pure_error(&self) -> bool {
        self.weights.inference > 0.0 || self.weights.lof > 0.0
    }

    /// Sampler matching this configuration (for MC estimation).
    pub fn sampler(&self, q: usize) -> MseSampler {
        MseSampler::new(self.mc_samples, q, self.tau2, self.mc_seed)
    }
}

/// Frozen draws of the scaled potential coefficients, `beta_q / sigma`,
/// shared across every design evaluated within one search so exchange
/// comparisons use common random numbers.
#[derive(Clone, Debug)]
pub struct MseSampler {
    n_samples: usize,
    q: usize,
    tau2: f64,
    seed: u64,
    /// n_samples x q, row-major.
    samples: Vec<f64>,
}

impl MseSampler {
    pub fn new(n_samples: usize, q: usize, tau2: f64, seed: u64) -> Self {
        assert!(n_samples >= 1, "sampler needs at least one draw");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = tau2.sqrt();
        let samples = (0..n_samples * q)
            .map(|_| tau * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        MseSampler {
            n_samples,
            q,
            tau2,
            seed,
            samples,
        }
    }

    pub fn matches(&self, n_samples: usize, q: usize, tau2: f64, seed: u64) -> bool {
        self.n_samples == n_samples && self.q == q && self.tau2 == tau2 && self.seed == seed
    }

    pub fn len(&self) -> usize {
        self.n_samples
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples == 0
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn draw(&self, i: usize) -> &[f64] {
        &self.samples[i * self.q..(i + 1) * self.q]
    }
}

/// Average of `log(1 + beta' S beta)` across the sampler draws, with the
/// standard error of the mean. Deterministic given (seed, N).
pub fn mc_bias_on(sandwich: &Matrix, sampler: &MseSampler) -> (f64, f64) {
    assert_eq!(sandwich.rows(), sampler.q(), "sampler dimension mismatch");
    let q = sampler.q();
    let n = sampler.len();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut sv = vec![0.0; q];
    for i in 0..n {
        let beta = sampler.draw(i);
        for (r, s) in sv.iter_mut().enumerate() {
            let row = sandwich.row(r);
            *s = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        }
        let quad: f64 = sv.iter().zip(beta).map(|(a, b)| a * b).sum();
        let v = quad.max(0.0).ln_1p();
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n as f64;
    let se = if n > 1 {
        ((sumsq - sum * sum / n as f64).max(0.0) / ((n - 1) as f64 * n as f64)).sqrt()
    } else {
        0.0
    };
    (mean, se)
}

/// Point-prior bias on an explicit sandwich: `log(1 + tau2 * sum_ij S_ij)`.
pub fn point_prior_bias_on(sandwich: &Matrix, tau2: f64) -> f64 {
    (tau2 * sandwich.sum()).max(0.0).ln_1p()
}

/// MSE bias expectation under the point prior, S-form sandwich.
pub fn mse_bias_point_prior(bundle: &MatrixBundle, tau2: f64) -> f64 {
    point_prior_bias_on(bundle.sandwich(), tau2)
}

/// MSE bias expectation by Monte Carlo, S-form sandwich; returns the
/// estimate and its standard error.
pub fn mse_bias_mc(bundle: &MatrixBundle, sampler: &MseSampler) -> (f64, f64) {
    mc_bias_on(bundle.sandwich(), sampler)
}

fn bias_for(bundle: &MatrixBundle, cfg: &CriterionConfig, sampler: Option<&MseSampler>) -> f64 {
    match cfg.estimator {
        Estimator::PointPrior => mse_bias_point_prior(bundle, cfg.tau2),
        Estimator::Mc => match sampler {
            Some(s) => {
                debug_assert!(s.matches(cfg.mc_samples, bundle.q, cfg.tau2, cfg.mc_seed));
                mse_bias_mc(bundle, s).0
            }
            None => mse_bias_mc(bundle, &cfg.sampler(bundle.q)).0,
        },
    }
}

// ---------------------------------------------------------------------------
// elementary criteria (log scale internally, value wrappers for callers)
// ---------------------------------------------------------------------------

/// Inference-precision determinant criterion:
/// `|M0|^{-1/(p-1)} F_{p-1,d;1-alpha}` unblocked,
/// `|X_p'QX_p|^{-1/p} F_{p,dB;1-alpha}` blocked. +infinity at d = 0.
pub fn dp_s(bundle: &MatrixBundle, dof: &DofSummary, alpha_dp: f64) -> Result<f64> {
    log_dp_s(bundle, dof, alpha_dp).map(f64::exp)
}

pub fn log_dp_s(bundle: &MatrixBundle, dof: &DofSummary, alpha_dp: f64) -> Result<f64> {
    if dof.d == 0 {
        return Ok(f64::INFINITY);
    }
    let f = f_upper_quantile(bundle.p_s as u32, dof.d as u32, 1.0 - alpha_dp)?;
    Ok(-bundle.log_det_information() / bundle.p_s as f64 + f.ln())
}

/// Trace form of the inference criterion:
/// `(1/p_s) tr(W M0^{-1}) F_{1,d;1-alpha}`. +infinity at d = 0.
pub fn lp_s(
    bundle: &MatrixBundle,
    dof: &DofSummary,
    alpha_lp: f64,
    w_diag: Option<&[f64]>,
) -> Result<f64> {
    log_lp_s(bundle, dof, alpha_lp, w_diag).map(f64::exp)
}

pub fn log_lp_s(
    bundle: &MatrixBundle,
    dof: &DofSummary,
    alpha_lp: f64,
    w_diag: Option<&[f64]>,
) -> Result<f64> {
    if dof.d == 0 {
        return Ok(f64::INFINITY);
    }
    let f = f_upper_quantile(1, dof.d as u32, 1.0 - alpha_lp)?;
    let inv = bundle.information_factor().inverse();
    let tr = weighted_trace(&inv, w_diag);
    Ok((tr / bundle.p_s as f64).ln() + f.ln())
}

fn weighted_trace(m: &Matrix, w_diag: Option<&[f64]>) -> f64 {
    match w_diag {
        None => m.trace(),
        Some(w) => (0..m.rows()).map(|i| w[i] * m[(i, i)]).sum(),
    }
}

/// The dispersion matrix L (or tilde-L when blocked).
pub fn dispersion_matrix(bundle: &MatrixBundle) -> &Matrix {
    bundle.dispersion()
}

/// Lack-of-fit determinant criterion: `|L + I/tau2|^{-1/q} F_{q,d;1-alpha}`.
pub fn lof_dp(bundle: &MatrixBundle, dof: &DofSummary, tau2: f64, alpha_lof: f64) -> Result<f64> {
    log_lof_dp(bundle, dof, tau2, alpha_lof).map(f64::exp)
}

pub fn log_lof_dp(
    bundle: &MatrixBundle,
    dof: &DofSummary,
    tau2: f64,
    alpha_lof: f64,
) -> Result<f64> {
    if dof.d == 0 {
        return Ok(f64::INFINITY);
    }
    let f = f_upper_quantile(bundle.q as u32, dof.d as u32, 1.0 - alpha_lof)?;
    let shifted = bundle.dispersion().shifted(1.0 / tau2);
    let log_det = shifted.log_det_psd().map_err(|_| Error::SingularInformation)?;
    Ok(-log_det / bundle.q as f64 + f.ln())
}

/// Lack-of-fit trace criterion:
/// `(1/q) tr(PP'(L + I/tau2)^{-1}) F_{1,d;1-alpha}` with diagonal PP'.
pub fn lof_lp(
    bundle: &MatrixBundle,
    dof: &DofSummary,
    tau2: f64,
    alpha_lof: f64,
    pp_diag: Option<&[f64]>,
) -> Result<f64> {
    log_lof_lp(bundle, dof, tau2, alpha_lof, pp_diag).map(f64::exp)
}

pub fn log_lof_lp(
    bundle: &MatrixBundle,
    dof: &DofSummary,
    tau2: f64,
    alpha_lof: f64,
    pp_diag: Option<&[f64]>,
) -> Result<f64> {
    if dof.d == 0 {
        return Ok(f64::INFINITY);
    }
    let f = f_upper_quantile(1, dof.d as u32, 1.0 - alpha_lof)?;
    let shifted = bundle.dispersion().shifted(1.0 / tau2);
    let inv = shifted
        .cholesky()
        .map_err(|_| Error::SingularInformation)?
        .inverse();
    let tr = weighted_trace(&inv, pp_diag);
    Ok((tr / bundle.q as f64).ln() + f.ln())
}

/// Determinant MSE criterion, S-form (the one entering the compound):
/// `[|M0|^{-1} exp(bias)]^{1/p_s}` with the bias from the configured
/// estimator of `E log(1 + beta' S beta)`.
pub fn mse_d(
    bundle: &MatrixBundle,
    cfg: &CriterionConfig,
    sampler: Option<&MseSampler>,
) -> Result<f64> {
    log_mse_d(bundle, cfg, sampler).map(f64::exp)
}

pub fn log_mse_d(
    bundle: &MatrixBundle,
    cfg: &CriterionConfig,
    sampler: Option<&MseSampler>,
) -> Result<f64> {
    let bias = bias_for(bundle, cfg, sampler);
    Ok((-bundle.log_det_information() + bias) / bundle.p_s as f64)
}

/// Determinant MSE criterion on the full information matrix (with the
/// intercept): `|X_p'X_p|^{-1/p} exp{bias}^{1/p}`. Unblocked only.
pub fn mse_d_full(
    bundle: &MatrixBundle,
    cfg: &CriterionConfig,
    sampler: Option<&MseSampler>,
) -> Result<f64> {
    let chol = bundle
        .full_information_factor()
        .ok_or(Error::SingularInformation)?;
    let sandwich = bundle.sandwich_full().ok_or(Error::SingularInformation)?;
    let bias = match cfg.estimator {
        Estimator::PointPrior => point_prior_bias_on(&sandwich, cfg.tau2),
        Estimator::Mc => match sampler {
            Some(s) => mc_bias_on(&sandwich, s).0,
            None => mc_bias_on(&sandwich, &cfg.sampler(bundle.q)).0,
        },
    };
    Ok(((-chol.log_det() + bias) / bundle.p_terms as f64).exp())
}

/// Trace MSE criterion, S-form. Unblocked:
/// `(1/(p-1)) tr[M^{-1} + tau2 A A']_{[p-1,p-1]}` (first row and column
/// dropped); blocked: `(1/p)[tr (X_p'QX_p)^{-1} + tau2 tr(R_Q R_Q')]`.
pub fn mse_l(bundle: &MatrixBundle, tau2: f64) -> Result<f64> {
    log_mse_l(bundle, tau2).map(f64::exp)
}

pub fn log_mse_l(bundle: &MatrixBundle, tau2: f64) -> Result<f64> {
    let value = if bundle.is_blocked() {
        let inv_tr = bundle.information_factor().inverse().trace();
        (inv_tr + tau2 * bundle.alias().frobenius_sq()) / bundle.p_s as f64
    } else {
        let m_inv = bundle
            .full_information_factor()
            .ok_or(Error::SingularInformation)?
            .inverse();
        let alias = bundle.alias();
        let mut tr = 0.0;
        for i in 1..bundle.p_terms {
            tr += m_inv[(i, i)];
            let row = alias.row(i);
            tr += tau2 * row.iter().map(|v| v * v).sum::<f64>();
        }
        tr / bundle.p_s as f64
    };
    Ok(value.ln())
}

/// Trace MSE criterion on all p parameters:
/// `(1/p) tr{(X_p'X_p)^{-1} + tau2 A A'}`. Unblocked only.
pub fn mse_l_full(bundle: &MatrixBundle, tau2: f64) -> Result<f64> {
    let m_inv = bundle
        .full_information_factor()
        .ok_or(Error::SingularInformation)?
        .inverse();
    Ok((m_inv.trace() + tau2 * bundle.alias().frobenius_sq()) / bundle.p_terms as f64)
}

/// Blocked alias matrix `R_Q = (X_p'QX_p)^{-1} X_p'QX_q`.
pub fn blocked_alias(bundle: &MatrixBundle) -> Result<&Matrix> {
    if !bundle.is_blocked() {
        return Err(Error::Domain(
            "blocked_alias requires a blocked design".into(),
        ));
    }
    Ok(bundle.alias())
}

// ---------------------------------------------------------------------------
// compound criterion
// ---------------------------------------------------------------------------

/// Per-component log criterion values of one evaluation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ComponentLogs {
    /// log DP_S (determinant family) or log LP_S (trace family).
    pub inference: f64,
    /// log LoF(DP) or log LoF(LP).
    pub lof: f64,
    /// log MSE(D) or log MSE(L).
    pub mse: f64,
}

impl ComponentLogs {
    pub fn as_array(&self) -> [f64; 3] {
        [self.inference, self.lof, self.mse]
    }
}

/// Result of evaluating the compound criterion on one design.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Evaluation {
    pub log_components: ComponentLogs,
    /// Weighted sum of the component logs over the active (kappa > 0)
    /// components; +infinity when an active F-bearing component has d = 0.
    pub compound_log: f64,
    pub dof: DofSummary,
}

/// Evaluate the compound criterion, creating a Monte-Carlo sampler from the
/// configuration when needed.
pub fn compound(design: &Design, spec: &ModelSpec, cfg: &CriterionConfig) -> Result<Evaluation> {
    let sampler = match cfg.estimator {
        Estimator::Mc => Some(cfg.sampler(spec.q())),
        Estimator::PointPrior => None,
    };
    compound_with_sampler(design, spec, cfg, sampler.as_ref())
}

/// Evaluate the compound criterion reusing a caller-managed sampler
/// (common random numbers across designs).
pub fn compound_with_sampler(
    design: &Design,
    spec: &ModelSpec,
    cfg: &CriterionConfig,
    sampler: Option<&MseSampler>,
) -> Result<Evaluation> {
    let dof = pure_error_dof(design, spec)?;
    let bundle = MatrixBundle::build(design, spec)?;
    compound_from_bundle(&bundle, &dof, cfg, sampler)
}

/// Evaluate the compound criterion from precomputed matrices.
pub fn compound_from_bundle(
    bundle: &MatrixBundle,
    dof: &DofSummary,
    cfg: &CriterionConfig,
    sampler: Option<&MseSampler>,
) -> Result<Evaluation> {
    let logs = match cfg.family {
        Family::Determinant => ComponentLogs {
            inference: log_dp_s(bundle, dof, cfg.alpha_dp)?,
            lof: log_lof_dp(bundle, dof, cfg.tau2, cfg.alpha_lof)?,
            mse: log_mse_d(bundle, cfg, sampler)?,
        },
        Family::Trace => ComponentLogs {
            inference: log_lp_s(bundle, dof, cfg.alpha_lp, cfg.w_diag.as_deref())?,
            lof: log_lof_lp(bundle, dof, cfg.tau2, cfg.alpha_lof, cfg.lof_pp_diag.as_deref())?,
            mse: log_mse_l(bundle, cfg.tau2)?,
        },
    };
    let mut compound_log = 0.0;
    for (kappa, log) in cfg.weights.as_array().iter().zip(logs.as_array()) {
        if *kappa > 0.0 {
            compound_log += kappa * log;
        }
    }
    Ok(Evaluation {
        log_components: logs,
        compound_log,
        dof: *dof,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Design;
    use crate::model::{FactorSpace, ModelSpec, Term};
    use approx::assert_relative_eq;

    fn fixture_1f() -> (Design, ModelSpec) {
        let space = FactorSpace::shared(1, &[-1.0, 0.0, 1.0]).unwrap();
        let spec = ModelSpec::new(
            space,
            vec![Term::new(vec![0]), Term::new(vec![1]), Term::new(vec![2])],
            vec![Term::new(vec![3])],
        )
        .unwrap();
        let design =
            Design::unblocked(vec![vec![-1.0], vec![0.0], vec![1.0], vec![1.0]]).unwrap();
        (design, spec)
    }

    fn eval_parts(tau2: f64) -> (MatrixBundle, DofSummary, CriterionConfig) {
        let (design, spec) = fixture_1f();
        let bundle = MatrixBundle::build(&design, &spec).unwrap();
        let dof = pure_error_dof(&design, &spec).unwrap();
        let cfg = CriterionConfig::new(
            Family::Determinant,
            Weights::new(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap(),
            tau2,
        );
        (bundle, dof, cfg)
    }

    // expected values below were computed with an independent explicit
    // matrix-arithmetic oracle (numpy route over the printed formulas)
    // before this module was written

    #[test]
    fn fixture_dp_s() {
        let (bundle, dof, _) = eval_parts(1.0);
        assert_relative_eq!(
            dp_s(&bundle, &dof, 0.05).unwrap(),
            141.06780284671603,
            max_relative = 1e-8
        );
    }

    #[test]
    fn fixture_lof_values() {
        let (bundle, dof, _) = eval_parts(1.0);
        // q = 1: both LoF forms equal (L + 1/tau2)^{-1} F_{1,1;0.95}
        assert_relative_eq!(
            lof_dp(&bundle, &dof, 1.0, 0.05).unwrap(),
            161.44763879758827,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            lof_lp(&bundle, &dof, 1.0, 0.05, None).unwrap(),
            161.44763879758827,
            max_relative = 1e-8
        );
    }

    #[test]
    fn fixture_mse_values() {
        let (bundle, dof, cfg) = eval_parts(1.0);
        let _ = dof;
        assert_relative_eq!(
            mse_bias_point_prior(&bundle, 1.0),
            1.3217558399823195,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            mse_d(&bundle, &cfg, None).unwrap(),
            1.3693063937629153,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            mse_d_full(&bundle, &cfg, None).unwrap(),
            0.7937005259840998,
            max_relative = 1e-10
        );
        assert_relative_eq!(mse_l(&bundle, 1.0).unwrap(), 1.375, max_relative = 1e-10);
        assert_relative_eq!(
            mse_l_full(&bundle, 1.0).unwrap(),
            1.25,
            max_relative = 1e-10
        );
    }

    #[test]
    fn fixture_lp_s() {
        let (bundle, dof, _) = eval_parts(1.0);
        assert_relative_eq!(
            lp_s(&bundle, &dof, 0.05, None).unwrap(),
            141.26668394788973,
            max_relative = 1e-8
        );
    }

    #[test]
    fn lp_s_matches_elementwise_inverse() {
        let (bundle, dof, _) = eval_parts(1.0);
        let inv = bundle.information().inverse().unwrap();
        let expected = (inv[(0, 0)] + inv[(1, 1)]) / 2.0
            * f_upper_quantile(1, dof.d as u32, 0.95).unwrap();
        assert_relative_eq!(
            lp_s(&bundle, &dof, 0.05, None).unwrap(),
            expected,
            max_relative = 1e-10
        );
    }

    #[test]
    fn zero_pure_error_gives_infinite_f_criteria() {
        let (_, spec) = fixture_1f();
        let saturated =
            Design::unblocked(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        let bundle = MatrixBundle::build(&saturated, &spec).unwrap();
        let dof = pure_error_dof(&saturated, &spec).unwrap();
        assert_eq!(dof.d, 0);
        assert!(dp_s(&bundle, &dof, 0.05).unwrap().is_infinite());
        assert!(lof_dp(&bundle, &dof, 1.0, 0.05).unwrap().is_infinite());
        assert!(lp_s(&bundle, &dof, 0.05, None).unwrap().is_infinite());
        assert!(lof_lp(&bundle, &dof, 1.0, 0.05, None).unwrap().is_infinite());
        // MSE components stay finite
        let cfg = CriterionConfig::new(
            Family::Determinant,
            Weights::new(0.0, 0.0, 1.0).unwrap(),
            1.0,
        );
        assert!(mse_d(&bundle, &cfg, None).unwrap().is_finite());
        assert!(mse_l(&bundle, 1.0).unwrap().is_finite());
        // compound under mse-only weights is finite, under F-bearing weights infinite
        let eval = compound_from_bundle(&bundle, &dof, &cfg, None).unwrap();
        assert!(eval.compound_log.is_finite());
        let cfg_dp = CriterionConfig::new(
            Family::Determinant,
            Weights::new(1.0, 0.0, 0.0).unwrap(),
            1.0,
        );
        let eval = compound_from_bundle(&bundle, &dof, &cfg_dp, None).unwrap();
        assert!(eval.compound_log.is_infinite());
    }

    #[test]
    fn lof_limits() {
        // L = 0 under complete aliasing: criterion reduces to F itself
        let space = FactorSpace::shared(1, &[-1.0, 0.0, 1.0]).unwrap();
        let spec = ModelSpec::new(
            space,
            vec![Term::new(vec![0]), Term::new(vec![1])],
            // x^3 on levels {-1,0,1} equals x, so it is fully aliased
            vec![Term::new(vec![3])],
        )
        .unwrap();
        let design = Design::unblocked(vec![
            vec![-1.0],
            vec![0.0],
            vec![1.0],
            vec![-1.0],
            vec![0.0],
            vec![1.0],
        ])
        .unwrap();
        let bundle = MatrixBundle::build(&design, &spec).unwrap();
        let dof = pure_error_dof(&design, &spec).unwrap();
        assert!(bundle.dispersion().max_abs() < 1e-12);
        let f = f_upper_quantile(1, dof.d as u32, 0.95).unwrap();
        assert_relative_eq!(
            lof_dp(&bundle, &dof, 1.0, 0.05).unwrap(),
            f,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            lof_lp(&bundle, &dof, 1.0, 0.05, None).unwrap(),
            f,
            max_relative = 1e-10
        );
    }

    /// 2^2 factorial replicated once, primary {1, x1, x2}, potential {x1x2}:
    /// orthogonal contrasts give the scalar dispersion matrix L = [8].
    fn factorial_parts() -> (MatrixBundle, DofSummary) {
        let space = FactorSpace::shared(2, &[-1.0, 1.0]).unwrap();
        let spec = ModelSpec::new(
            space,
            vec![
                Term::new(vec![0, 0]),
                Term::new(vec![1, 0]),
                Term::new(vec![0, 1]),
            ],
            vec![Term::new(vec![1, 1])],
        )
        .unwrap();
        let mut runs = vec![
            vec![-1.0, -1.0],
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![1.0, 1.0],
        ];
        runs.extend(runs.clone());
        let design = Design::unblocked(runs).unwrap();
        let bundle = MatrixBundle::build(&design, &spec).unwrap();
        let dof = pure_error_dof(&design, &spec).unwrap();
        (bundle, dof)
    }

    #[test]
    fn dispersion_of_orthogonal_potential_column() {
        let (bundle, _) = factorial_parts();
        assert_relative_eq!(bundle.dispersion()[(0, 0)], 8.0, epsilon = 1e-12);
        // unreplicated 2^2 factorial: L = [4]
        let space = FactorSpace::shared(2, &[-1.0, 1.0]).unwrap();
        let spec = ModelSpec::new(
            space,
            vec![
                Term::new(vec![0, 0]),
                Term::new(vec![1, 0]),
                Term::new(vec![0, 1]),
            ],
            vec![Term::new(vec![1, 1])],
        )
        .unwrap();
        let design = Design::unblocked(vec![
            vec![-1.0, -1.0],
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let b4 = MatrixBundle::build(&design, &spec).unwrap();
        assert_relative_eq!(b4.dispersion()[(0, 0)], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn lof_dp_tau2_infinity_limit() {
        // PD dispersion matrix: at tau2 = 1e12 the criterion matches |L|^{-1/q} F
        let (bundle, dof) = factorial_parts();
        let l = bundle.dispersion();
        assert!(l[(0, 0)] > 0.1);
        let expect = (-l.log_det_psd().unwrap() / bundle.q as f64).exp()
            * f_upper_quantile(bundle.q as u32, dof.d as u32, 0.95).unwrap();
        assert_relative_eq!(
            lof_dp(&bundle, &dof, 1e12, 0.05).unwrap(),
            expect,
            max_relative = 1e-6
        );
    }

    #[test]
    fn mse_bias_trivial_cases() {
        let (bundle, _, _) = eval_parts(1.0);
        assert_relative_eq!(mse_bias_point_prior(&bundle, 1e-300), 0.0, epsilon = 1e-12);
        let zero = Matrix::zeros(2, 2);
        let sampler = MseSampler::new(100, 2, 1.0, 7);
        let (mean, se) = mc_bias_on(&zero, &sampler);
        assert_eq!(mean, 0.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn mc_bias_matches_scalar_reimplementation() {
        // q = 1: beta' S beta is s * beta^2; average log1p directly
        let s = 2.75;
        let sandwich = Matrix::from_rows(&[vec![s]]);
        let sampler = MseSampler::new(5000, 1, 1.0, 42);
        let (mean, _) = mc_bias_on(&sandwich, &sampler);
        let direct: f64 = (0..5000)
            .map(|i| (s * sampler.draw(i)[0] * sampler.draw(i)[0]).ln_1p())
            .sum::<f64>()
            / 5000.0;
        assert_relative_eq!(mean, direct, max_relative = 1e-12);
    }

    #[test]
    fn mc_bias_is_deterministic_given_seed() {
        let (bundle, _, _) = eval_parts(1.0);
        let s1 = MseSampler::new(500, 1, 1.0, 11);
        let s2 = MseSampler::new(500, 1, 1.0, 11);
        assert_eq!(
            mse_bias_mc(&bundle, &s1).0,
            mse_bias_mc(&bundle, &s2).0
        );
    }

    #[test]
    fn compound_degenerate_weights_equal_elementary() {
        let (bundle, dof, mut cfg) = eval_parts(1.0);
        cfg.weights = Weights::new(1.0, 0.0, 0.0).unwrap();
        let eval = compound_from_bundle(&bundle, &dof, &cfg, None).unwrap();
        assert_relative_eq!(
            eval.compound_log,
            dp_s(&bundle, &dof, cfg.alpha_dp).unwrap().ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn compound_combines_component_logs() {
        let (bundle, dof, cfg) = eval_parts(1.0);
        let eval = compound_from_bundle(&bundle, &dof, &cfg, None).unwrap();
        let hand = (eval.log_components.inference
            + eval.log_components.lof
            + eval.log_components.mse)
            / 3.0;
        assert_relative_eq!(eval.compound_log, hand, max_relative = 1e-12);
    }

    #[test]
    fn blocked_alias_needs_blocks() {
        let (bundle, _, _) = eval_parts(1.0);
        assert!(blocked_alias(&bundle).is_err());
    }

    #[test]
    fn lof_nondecreasing_in_tau2() {
        // growing tau2 shrinks L + I/tau2, so the inverse-power criteria grow
        // toward their |L|-limit
        let (bundle, dof) = factorial_parts();
        let mut prev_dp = 0.0;
        let mut prev_lp = 0.0;
        for &tau2 in &[0.01, 0.5, 1.0, 100.0] {
            let v_dp = lof_dp(&bundle, &dof, tau2, 0.05).unwrap();
            let v_lp = lof_lp(&bundle, &dof, tau2, 0.05, None).unwrap();
            assert!(v_dp >= prev_dp - 1e-12);
            assert!(v_lp >= prev_lp - 1e-12);
            prev_dp = v_dp;
            prev_lp = v_lp;
        }
    }
}
