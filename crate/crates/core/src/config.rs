//! TOML experiment configuration: factor space, model, design layout,
//! criterion settings (possibly many weight/tau2 combinations) and search
//! budget, validated into ready-to-run objects with path-qualified errors.

use serde::{Deserialize, Serialize};

use crate::criteria::{CriterionConfig, Estimator, Family, Weights};
use crate::error::{Error, Result};
use crate::model::{
    candidate_set, full_second_order_terms, third_order_potential_terms, FactorSpace, ModelSpec,
    Term,
};
use crate::search::{FixedRun, SearchConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub factors: FactorsSection,
    pub model: ModelSection,
    pub design: DesignSection,
    pub criterion: CriterionSection,
    #[serde(default)]
    pub search: SearchSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorsSection {
    pub count: usize,
    /// Either one shared level list or one list per factor.
    pub levels: LevelsSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelsSpec {
    Shared(Vec<f64>),
    PerFactor(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// "full-second-order" (with intercept), "full-second-order-no-intercept",
    /// or explicit exponent vectors.
    pub primary: TermsSpec,
    /// "third-order", "third-order-with-cubic", or explicit exponent vectors.
    pub potential: TermsSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TermsSpec {
    Named(String),
    Explicit(Vec<Vec<u32>>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub n: usize,
    /// Block sizes; omit for a completely randomized design.
    #[serde(default)]
    pub blocks: Vec<usize>,
    #[serde(default)]
    pub fixed: Vec<FixedRunSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedRunSpec {
    pub point: Vec<f64>,
    /// 1-based block index.
    #[serde(default)]
    pub block: Option<usize>,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSection {
    pub family: Family,
    /// One or more (inference, lof, mse) weight triples.
    pub kappa: Vec<[f64; 3]>,
    /// One or more scaling values; `"1/q"` resolves against the potential
    /// term count.
    pub tau2: Vec<Tau2Spec>,
    #[serde(default = "default_alpha")]
    pub alpha_dp: f64,
    #[serde(default = "default_alpha")]
    pub alpha_lp: f64,
    #[serde(default = "default_alpha")]
    pub alpha_lof: f64,
    #[serde(default)]
    pub w_diag: Option<Vec<f64>>,
    #[serde(default)]
    pub lof_pp_diag: Option<Vec<f64>>,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    /// Monte-Carlo sample sizes: one shared value or one per tau2 entry.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: Vec<usize>,
    #[serde(default)]
    pub mc_seed: u64,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_estimator() -> Estimator {
    Estimator::PointPrior
}

fn default_mc_samples() -> Vec<usize> {
    vec![1000]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tau2Spec {
    Value(f64),
    /// The literal string "1/q".
    OverQ(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub restarts: usize,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            restarts: 20,
            max_passes: 50,
            seed: 0,
        }
    }
}

/// One (weights, tau2) combination of the experiment's cross product,
/// carried as a full criterion configuration.
#[derive(Clone, Debug)]
pub struct Combination {
    pub weights: Weights,
    pub tau2: f64,
    pub criterion: CriterionConfig,
}

/// A validated experiment, ready for search and evaluation.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: ModelSpec,
    pub combinations: Vec<Combination>,
    pub tau2s: Vec<f64>,
    pub search: SearchConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Validate every field and assemble the runnable experiment.
    pub fn build(&self) -> Result<Experiment> {
        let k = self.factors.count;
        if k == 0 {
            return Err(Error::config("factors.count", "need at least one factor"));
        }
        let space = match &self.factors.levels {
            LevelsSpec::Shared(levels) => FactorSpace::shared(k, levels)?,
            LevelsSpec::PerFactor(per) => {
                if per.len() != k {
                    return Err(Error::config(
                        "factors.levels",
                        format!("expected {k} level lists, got {}", per.len()),
                    ));
                }
                FactorSpace::new(per.clone())?
            }
        };
        let blocked = !self.design.blocks.is_empty();
        let primary = resolve_terms(&self.model.primary, &space, true, blocked, "model.primary")?;
        let potential =
            resolve_terms(&self.model.potential, &space, false, blocked, "model.potential")?;
        let spec = ModelSpec::new(space.clone(), primary, potential)?;
        if spec.q() == 0 {
            return Err(Error::config(
                "model.potential",
                "at least one potential term is required",
            ));
        }
        if blocked && spec.has_intercept() {
            return Err(Error::config(
                "model.primary",
                "blocked experiments must exclude the intercept (aliased with blocks)",
            ));
        }
        if !blocked && !spec.has_intercept() {
            return Err(Error::config(
                "model.primary",
                "completely randomized experiments require the intercept term",
            ));
        }

        // tau2 entries
        let mut tau2s = Vec::new();
        for (i, spec_t) in self.criterion.tau2.iter().enumerate() {
            let v = match spec_t {
                Tau2Spec::Value(v) => *v,
                Tau2Spec::OverQ(s) if s.trim() == "1/q" => 1.0 / spec.q() as f64,
                Tau2Spec::OverQ(s) => {
                    return Err(Error::config(
                        format!("criterion.tau2[{i}]"),
                        format!("expected a number or \"1/q\", got {s:?}"),
                    ))
                }
            };
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(
                    format!("criterion.tau2[{i}]"),
                    "tau2 must be positive",
                ));
            }
            tau2s.push(v);
        }
        if tau2s.is_empty() {
            return Err(Error::config("criterion.tau2", "need at least one value"));
        }
        let mc_samples = &self.criterion.mc_samples;
        if mc_samples.len() != 1 && mc_samples.len() != tau2s.len() {
            return Err(Error::config(
                "criterion.mc_samples",
                format!(
                    "expected 1 or {} entries (one per tau2), got {}",
                    tau2s.len(),
                    mc_samples.len()
                ),
            ));
        }
        if self.criterion.kappa.is_empty() {
            return Err(Error::config("criterion.kappa", "need at least one triple"));
        }

        let mut combinations = Vec::new();
        for (ki, kappa) in self.criterion.kappa.iter().enumerate() {
            let weights = Weights {
                inference: kappa[0],
                lof: kappa[1],
                mse: kappa[2],
            };
            weights.validate(&format!("criterion.kappa[{ki}]"))?;
            for (ti, &tau2) in tau2s.iter().enumerate() {
                let n = if mc_samples.len() == 1 {
                    mc_samples[0]
                } else {
                    mc_samples[ti]
                };
                let criterion = CriterionConfig {
                    family: self.criterion.family,
                    weights,
                    tau2,
                    alpha_dp: self.criterion.alpha_dp,
                    alpha_lp: self.criterion.alpha_lp,
                    alpha_lof: self.criterion.alpha_lof,
                    w_diag: self.criterion.w_diag.clone(),
                    lof_pp_diag: self.criterion.lof_pp_diag.clone(),
                    estimator: self.criterion.estimator,
                    mc_samples: n,
                    mc_seed: self.criterion.mc_seed,
                };
                criterion.validate(&spec)?;
                combinations.push(Combination {
                    weights,
                    tau2,
                    criterion,
                });
            }
        }

        // fixed runs (config uses 1-based blocks)
        let mut fixed = Vec::new();
        for (i, f) in self.design.fixed.iter().enumerate() {
            if f.point.len() != k {
                return Err(Error::config(
                    format!("design.fixed[{i}].point"),
                    format!("expected {k} coordinates"),
                ));
            }
            let block = match (blocked, f.block) {
                (true, Some(b)) if b >= 1 && b <= self.design.blocks.len() => Some(b - 1),
                (true, Some(b)) => {
                    return Err(Error::config(
                        format!("design.fixed[{i}].block"),
                        format!("block {b} out of range 1..={}", self.design.blocks.len()),
                    ))
                }
                (true, None) => {
                    return Err(Error::config(
                        format!("design.fixed[{i}].block"),
                        "fixed runs in a blocked design need a block",
                    ))
                }
                (false, Some(_)) => {
                    return Err(Error::config(
                        format!("design.fixed[{i}].block"),
                        "design is not blocked",
                    ))
                }
                (false, None) => None,
            };
            for _ in 0..f.count.max(1) {
                fixed.push(FixedRun {
                    point: f.point.clone(),
                    block,
                });
            }
        }

        let search = SearchConfig {
            n: self.design.n,
            block_sizes: self.design.blocks.clone(),
            fixed,
            candidates: candidate_set(&space),
            restarts: self.search.restarts,
            max_passes: self.search.max_passes,
            seed: self.search.seed,
        };
        search.validate(&spec)?;

        Ok(Experiment {
            spec,
            combinations,
            tau2s,
            search,
        })
    }
}

fn resolve_terms(
    spec: &TermsSpec,
    space: &FactorSpace,
    primary: bool,
    blocked: bool,
    path: &str,
) -> Result<Vec<Term>> {
    match spec {
        TermsSpec::Named(name) => match (name.as_str(), primary) {
            ("full-second-order", true) => {
                let mut terms = full_second_order_terms(space);
                if blocked {
                    terms.retain(|t| !t.is_intercept());
                }
                Ok(terms)
            }
            ("third-order", false) => Ok(third_order_potential_terms(space, false)),
            ("third-order-with-cubic", false) => Ok(third_order_potential_terms(space, true)),
            _ => Err(Error::config(
                path,
                format!(
                    "unknown term set {name:?}; expected {} or explicit exponent vectors",
                    if primary {
                        "\"full-second-order\""
                    } else {
                        "\"third-order\" / \"third-order-with-cubic\""
                    }
                ),
            )),
        },
        TermsSpec::Explicit(exponents) => Ok(exponents
            .iter()
            .map(|e| Term::new(e.clone()))
            .collect()),
    }
}
