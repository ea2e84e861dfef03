//! Efficiencies against reference optima and paper-style summary tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::criteria::{
    log_dp_s, log_lof_dp, log_lof_lp, log_lp_s, log_mse_d, log_mse_l, compound_with_sampler,
    CriterionConfig, Estimator, Family, MatrixBundle, MseSampler, Weights,
};
use crate::design::{pure_error_dof, Design, DofSummary};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::search::{optimize, SearchConfig};

/// Efficiencies above this margin over 100% mark a reference as stale
/// (a later-found better design exposes the stored optimum as non-optimal).
pub const STALENESS_TOLERANCE: f64 = 5.0;

/// The six elementary criteria reported in the summary tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementaryCriterion {
    Dp,
    LofDp,
    MseD,
    Lp,
    LofLp,
    MseL,
}

impl ElementaryCriterion {
    pub const ALL: [ElementaryCriterion; 6] = [
        ElementaryCriterion::Dp,
        ElementaryCriterion::LofDp,
        ElementaryCriterion::MseD,
        ElementaryCriterion::Lp,
        ElementaryCriterion::LofLp,
        ElementaryCriterion::MseL,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ElementaryCriterion::Dp => "DP",
            ElementaryCriterion::LofDp => "LoF(DP)",
            ElementaryCriterion::MseD => "MSE(D)",
            ElementaryCriterion::Lp => "LP",
            ElementaryCriterion::LofLp => "LoF(LP)",
            ElementaryCriterion::MseL => "MSE(L)",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }

    /// Whether the criterion carries an F quantile (infinite at d = 0).
    pub fn is_f_bearing(&self) -> bool {
        !matches!(self, ElementaryCriterion::MseD | ElementaryCriterion::MseL)
    }

    /// Whether the criterion value depends on tau2.
    pub fn depends_on_tau2(&self) -> bool {
        !matches!(self, ElementaryCriterion::Dp | ElementaryCriterion::Lp)
    }

    /// Family and degenerate weights whose compound optimum is this
    /// criterion's optimum.
    pub fn search_target(&self) -> (Family, Weights) {
        let w = |i, l, m| Weights {
            inference: i,
            lof: l,
            mse: m,
        };
        match self {
            ElementaryCriterion::Dp => (Family::Determinant, w(1.0, 0.0, 0.0)),
            ElementaryCriterion::LofDp => (Family::Determinant, w(0.0, 1.0, 0.0)),
            ElementaryCriterion::MseD => (Family::Determinant, w(0.0, 0.0, 1.0)),
            ElementaryCriterion::Lp => (Family::Trace, w(1.0, 0.0, 0.0)),
            ElementaryCriterion::LofLp => (Family::Trace, w(0.0, 1.0, 0.0)),
            ElementaryCriterion::MseL => (Family::Trace, w(0.0, 0.0, 1.0)),
        }
    }
}

/// Log value of one elementary criterion under a configuration's levels,
/// weights and estimator (+infinity for F-bearing criteria at d = 0).
pub fn elementary_log_value(
    bundle: &MatrixBundle,
    dof: &DofSummary,
    criterion: ElementaryCriterion,
    cfg: &CriterionConfig,
    sampler: Option<&MseSampler>,
) -> Result<f64> {
    match criterion {
        ElementaryCriterion::Dp => log_dp_s(bundle, dof, cfg.alpha_dp),
        ElementaryCriterion::LofDp => log_lof_dp(bundle, dof, cfg.tau2, cfg.alpha_lof),
        ElementaryCriterion::MseD => log_mse_d(bundle, cfg, sampler),
        ElementaryCriterion::Lp => log_lp_s(bundle, dof, cfg.alpha_lp, cfg.w_diag.as_deref()),
        ElementaryCriterion::LofLp => log_lof_lp(
            bundle,
            dof,
            cfg.tau2,
            cfg.alpha_lof,
            cfg.lof_pp_diag.as_deref(),
        ),
        ElementaryCriterion::MseL => log_mse_l(bundle, cfg.tau2),
    }
}

/// Value (not log) of one elementary criterion for a design.
pub fn elementary_value(
    design: &Design,
    spec: &ModelSpec,
    criterion: ElementaryCriterion,
    cfg: &CriterionConfig,
) -> Result<f64> {
    let bundle = MatrixBundle::build(design, spec)?;
    let dof = pure_error_dof(design, spec)?;
    let sampler = match cfg.estimator {
        Estimator::Mc => Some(cfg.sampler(spec.q())),
        Estimator::PointPrior => None,
    };
    elementary_log_value(&bundle, &dof, criterion, cfg, sampler.as_ref()).map(f64::exp)
}

/// Best known value of one elementary criterion, with the design achieving
/// it and the search settings that produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Reference {
    pub criterion: String,
    pub tau2: f64,
    /// Criterion value (per-parameter scale, as reported by the ops).
    pub value: f64,
    pub log_value: f64,
    pub design: Design,
    pub seed: u64,
    pub restarts: usize,
}

/// Persisted set of reference optima.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub references: Vec<Reference>,
}

impl ReferenceSet {
    pub fn lookup(&self, criterion: ElementaryCriterion, tau2: f64) -> Option<&Reference> {
        self.references.iter().find(|r| {
            r.criterion == criterion.name()
                && (!criterion.depends_on_tau2() || close(r.tau2, tau2))
        })
    }

    pub fn insert(&mut self, reference: Reference) {
        self.references.retain(|r| {
            !(r.criterion == reference.criterion && close(r.tau2, reference.tau2))
        });
        self.references.push(reference);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Every stored reference must evaluate to its stored value.
    pub fn verify(&self, spec: &ModelSpec, base: &CriterionConfig) -> Result<()> {
        for r in &self.references {
            let criterion = ElementaryCriterion::from_name(&r.criterion).ok_or_else(|| {
                Error::config("references", format!("unknown criterion {}", r.criterion))
            })?;
            let mut cfg = base.clone();
            cfg.tau2 = r.tau2;
            let value = elementary_value(&r.design, spec, criterion, &cfg)?;
            if !((value - r.value).abs() <= 1e-10 * value.abs().max(1.0)) {
                return Err(Error::config(
                    "references",
                    format!(
                        "stored {} value {} does not match re-evaluation {}",
                        r.criterion, r.value, value
                    ),
                ));
            }
        }
        Ok(())
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Search the optimum of each elementary criterion for every tau2 and
/// collect the results as a reference set.
pub fn compute_references(
    spec: &ModelSpec,
    base: &CriterionConfig,
    search: &SearchConfig,
    tau2s: &[f64],
) -> Result<ReferenceSet> {
    let mut set = ReferenceSet::default();
    for criterion in ElementaryCriterion::ALL {
        let tau2s_for_criterion: &[f64] = if criterion.depends_on_tau2() {
            tau2s
        } else {
            &tau2s[..1]
        };
        for &tau2 in tau2s_for_criterion {
            let (family, weights) = criterion.search_target();
            let mut cfg = base.clone();
            cfg.family = family;
            cfg.weights = weights;
            cfg.tau2 = tau2;
            let result = optimize(spec, &cfg, search)?;
            // compound_log with degenerate weights IS the criterion log value
            let log_value = result.evaluation.compound_log;
            set.insert(Reference {
                criterion: criterion.name().to_string(),
                tau2,
                value: log_value.exp(),
                log_value,
                design: result.design,
                seed: search.seed,
                restarts: search.restarts,
            });
        }
    }
    Ok(set)
}

/// Efficiency percentage of a design value against a reference value, on the
/// log scale: `100 * exp(log_ref - log_design)`. Infinite design values give
/// 0.00.
pub fn efficiency_from_logs(design_log: f64, reference_log: f64) -> f64 {
    if design_log.is_infinite() {
        return 0.0;
    }
    100.0 * (reference_log - design_log).exp()
}

/// Efficiency of a design under one elementary criterion and a reference.
pub fn efficiency(
    design: &Design,
    spec: &ModelSpec,
    criterion: ElementaryCriterion,
    cfg: &CriterionConfig,
    reference: &Reference,
) -> Result<f64> {
    if !reference.log_value.is_finite() {
        return Err(Error::config(
            "references",
            format!("reference for {} is not finite", criterion.name()),
        ));
    }
    let value = elementary_value(design, spec, criterion, cfg)?;
    Ok(efficiency_from_logs(value.ln(), reference.log_value))
}

/// One design to summarize, with the full criterion configuration (weights,
/// tau2, estimator and sample plan) it was optimized under.
#[derive(Clone, Debug)]
pub struct DesignEntry {
    pub criterion: CriterionConfig,
    pub design: Design,
    /// Compound log optimum of an unconstrained search, when fixed runs were
    /// imposed on this design's search; drives the relative-efficiency column.
    pub unconstrained_log: Option<f64>,
}

/// One row of the summary table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub weights: [f64; 3],
    pub tau2: f64,
    pub pure_error_dof: usize,
    pub lof_dof: usize,
    /// Efficiency percentage per criterion in `ElementaryCriterion::ALL`
    /// order, rounded to 2 decimals.
    pub efficiencies: Vec<f64>,
    /// Names of criteria whose efficiency exceeds 100 (stale reference).
    pub stale: Vec<String>,
    pub compound_log: f64,
    pub relative_efficiency: Option<f64>,
}

/// Paper-style summary: DoF split and all six elementary efficiencies per
/// (weight combination, tau2) row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub family: Family,
    pub criteria: Vec<String>,
    pub rows: Vec<ReportRow>,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Build the summary table: one row per entry, in order.
pub fn summarize(
    entries: &[DesignEntry],
    spec: &ModelSpec,
    references: &ReferenceSet,
) -> Result<EfficiencyReport> {
    let family = entries
        .first()
        .map(|e| e.criterion.family)
        .unwrap_or(Family::Determinant);
    let mut rows = Vec::with_capacity(entries.len());
    for entry in entries {
        let cfg = &entry.criterion;
        let bundle = MatrixBundle::build(&entry.design, spec)?;
        let dof = pure_error_dof(&entry.design, spec)?;
        let sampler = match cfg.estimator {
            Estimator::Mc => Some(cfg.sampler(spec.q())),
            Estimator::PointPrior => None,
        };
        let compound = compound_with_sampler(&entry.design, spec, cfg, sampler.as_ref())?;
        let mut efficiencies = Vec::with_capacity(6);
        let mut stale = Vec::new();
        for criterion in ElementaryCriterion::ALL {
            let reference = references.lookup(criterion, cfg.tau2).ok_or_else(|| {
                Error::config(
                    "references",
                    format!(
                        "missing reference for {} at tau2 = {}",
                        criterion.name(),
                        cfg.tau2
                    ),
                )
            })?;
            let log = elementary_log_value(&bundle, &dof, criterion, cfg, sampler.as_ref())?;
            let eff = round2(efficiency_from_logs(log, reference.log_value));
            if eff > 100.0 {
                stale.push(criterion.name().to_string());
            }
            efficiencies.push(eff);
        }
        let relative_efficiency = entry
            .unconstrained_log
            .map(|opt| round2(efficiency_from_logs(compound.compound_log, opt)));
        rows.push(ReportRow {
            weights: cfg.weights.as_array(),
            tau2: cfg.tau2,
            pure_error_dof: dof.d,
            lof_dof: dof.lof,
            efficiencies,
            stale,
            compound_log: compound.compound_log,
            relative_efficiency,
        });
    }
    Ok(EfficiencyReport {
        family,
        criteria: ElementaryCriterion::ALL
            .iter()
            .map(|c| c.name().to_string())
            .collect(),
        rows,
    })
}

impl EfficiencyReport {
    /// CSV rendering with the table's column names: weight columns, tau2,
    /// the DoF split (PE | LoF) and one efficiency column per criterion.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let weight_names = match self.family {
            Family::Determinant => ["kappa_DP", "kappa_LoF(DP)", "kappa_MSE(D)"],
            Family::Trace => ["kappa_LP", "kappa_LoF(LP)", "kappa_MSE(L)"],
        };
        let mut header: Vec<String> = weight_names.iter().map(|s| s.to_string()).collect();
        header.push("tau2".into());
        header.push("PE".into());
        header.push("LoF".into());
        header.extend(self.criteria.iter().cloned());
        let any_relative = self.rows.iter().any(|r| r.relative_efficiency.is_some());
        if any_relative {
            header.push("Relative Efficiency".into());
        }
        header.push("stale".into());
        wtr.write_record(&header)
            .map_err(|e| Error::DesignFormat(e.to_string()))?;
        for row in &self.rows {
            let mut rec: Vec<String> = row.weights.iter().map(|w| format!("{w}")).collect();
            rec.push(format!("{}", row.tau2));
            rec.push(row.pure_error_dof.to_string());
            rec.push(row.lof_dof.to_string());
            for eff in &row.efficiencies {
                rec.push(format!("{eff:.2}"));
            }
            if any_relative {
                rec.push(
                    row.relative_efficiency
                        .map(|r| format!("{r:.2}"))
                        .unwrap_or_default(),
                );
            }
            rec.push(row.stale.join(" "));
            wtr.write_record(&rec)
                .map_err(|e| Error::DesignFormat(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::compound;
    use crate::model::{candidate_set, FactorSpace, Term};

    fn one_factor() -> (ModelSpec, SearchConfig, CriterionConfig) {
        let space = FactorSpace::shared(1, &[-1.0, 0.0, 1.0]).unwrap();
        let spec = ModelSpec::new(
            space.clone(),
            vec![Term::new(vec![0]), Term::new(vec![1]), Term::new(vec![2])],
            vec![Term::new(vec![3])],
        )
        .unwrap();
        let search = SearchConfig {
            n: 6,
            block_sizes: vec![],
            fixed: vec![],
            candidates: candidate_set(&space),
            restarts: 10,
            max_passes: 50,
            seed: 23,
        };
        let cfg = CriterionConfig::new(
            Family::Determinant,
            Weights::new(1.0, 0.0, 0.0).unwrap(),
            1.0,
        );
        (spec, search, cfg)
    }

    #[test]
    fn reference_reports_hundred_for_itself() {
        let (spec, search, cfg) = one_factor();
        let refs = compute_references(&spec, &cfg, &search, &[1.0]).unwrap();
        refs.verify(&spec, &cfg).unwrap();
        for criterion in ElementaryCriterion::ALL {
            let r = refs.lookup(criterion, 1.0).unwrap();
            let eff = efficiency(&r.design, &spec, criterion, &cfg, r).unwrap();
            assert!((eff - 100.0).abs() < 1e-8, "{}: {eff}", criterion.name());
        }
    }

    #[test]
    fn zero_pure_error_design_reports_zero_for_f_criteria() {
        let (spec, search, cfg) = one_factor();
        let refs = compute_references(&spec, &cfg, &search, &[1.0]).unwrap();
        let d0 = Design::unblocked(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        for criterion in ElementaryCriterion::ALL {
            let r = refs.lookup(criterion, 1.0).unwrap();
            let eff = efficiency(&d0, &spec, criterion, &cfg, r).unwrap();
            if criterion.is_f_bearing() {
                assert_eq!(eff, 0.0, "{}", criterion.name());
            } else {
                assert!(eff > 0.0);
            }
        }
    }

    #[test]
    fn summary_row_shape_and_staleness_flag() {
        let (spec, search, cfg) = one_factor();
        let mut refs = compute_references(&spec, &cfg, &search, &[1.0]).unwrap();
        let d = refs.lookup(ElementaryCriterion::Dp, 1.0).unwrap().design.clone();
        // corrupt the DP reference to look worse than the design: staleness
        for r in refs.references.iter_mut() {
            if r.criterion == "DP" {
                r.log_value += 0.05;
                r.value = r.log_value.exp();
            }
        }
        let entries = [DesignEntry {
            criterion: cfg.clone(),
            design: d.clone(),
            unconstrained_log: Some(
                compound(&d, &spec, &cfg).unwrap().compound_log - 0.01,
            ),
        }];
        let report = summarize(&entries, &spec, &refs).unwrap();
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.efficiencies.len(), 6);
        assert!(row.efficiencies[0] > 100.0);
        assert!(row.stale.contains(&"DP".to_string()));
        let rel = row.relative_efficiency.unwrap();
        assert!(rel < 100.0);
        // CSV and JSON carry identical 2-decimal numbers
        let mut csv_buf = Vec::new();
        report.to_csv(&mut csv_buf).unwrap();
        let csv_text = String::from_utf8(csv_buf).unwrap();
        assert!(csv_text.contains(&format!("{:.2}", row.efficiencies[0])));
        let json = report.to_json().unwrap();
        let parsed: EfficiencyReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.rows[0].efficiencies, row.efficiencies);
    }

    #[test]
    fn efficiency_scale_consistency() {
        // scaling value and reference alike leaves the percentage unchanged
        let base = efficiency_from_logs(2.0_f64.ln(), 1.5_f64.ln());
        let scaled = efficiency_from_logs((2.0_f64 * 7.0).ln(), (1.5_f64 * 7.0).ln());
        assert!((base - scaled).abs() < 1e-10);
    }
}
