//! Shipped experiment presets and published design fixtures.

use crate::config::ExperimentConfig;
use crate::design::Design;
use crate::error::{Error, Result};

/// TOML source of the 5-factor, 40-run completely randomized experiment.
pub const EXAMPLE1_TOML: &str = include_str!("../presets/example1.toml");

/// TOML source of the 3-factor, 36-run blocked case study with fixed
/// center points.
pub const CASE_STUDY_TOML: &str = include_str!("../presets/case_study.toml");

/// Published 40-run design for the 5-factor experiment (CSV).
pub const APPENDIX_A_CSV: &str = include_str!("../fixtures/appendix_a.csv");

/// Published 36-run, 2-block design for the case study (CSV).
pub const APPENDIX_C_CSV: &str = include_str!("../fixtures/appendix_c.csv");

pub const PRESET_NAMES: [&str; 2] = ["example1", "case-study"];

/// Raw TOML text of a named preset.
pub fn preset_toml(name: &str) -> Option<&'static str> {
    match name {
        "example1" => Some(EXAMPLE1_TOML),
        "case-study" | "case_study" => Some(CASE_STUDY_TOML),
        _ => None,
    }
}

/// Parsed configuration of a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = preset_toml(name).ok_or_else(|| {
        Error::config(
            "preset",
            format!("unknown preset {name:?}; available: {}", PRESET_NAMES.join(", ")),
        )
    })?;
    ExperimentConfig::from_toml(text)
}

/// The published 40-run design of the 5-factor experiment.
pub fn appendix_a_design() -> Design {
    Design::from_csv(APPENDIX_A_CSV.as_bytes()).expect("embedded fixture parses")
}

/// The published 36-run blocked design of the case study.
pub fn appendix_c_design() -> Design {
    Design::from_csv(APPENDIX_C_CSV.as_bytes()).expect("embedded fixture parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::pure_error_dof;

    #[test]
    fn presets_parse_and_build() {
        for name in PRESET_NAMES {
            let exp = preset(name).unwrap().build().unwrap();
            assert!(!exp.combinations.is_empty(), "{name}");
        }
    }

    #[test]
    fn example1_shape() {
        let exp = preset("example1").unwrap().build().unwrap();
        assert_eq!(exp.spec.k(), 5);
        assert_eq!(exp.spec.p(), 21);
        assert_eq!(exp.spec.q(), 30);
        assert_eq!(exp.search.n, 40);
        assert_eq!(exp.search.candidates.len(), 243);
        // first combination: kappa = (1,0,0), tau2 = 1/q
        let first = &exp.combinations[0];
        assert_eq!(first.weights.as_array(), [1.0, 0.0, 0.0]);
        assert!((first.tau2 - 1.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn case_study_shape() {
        let exp = preset("case-study").unwrap().build().unwrap();
        assert_eq!(exp.spec.k(), 3);
        assert_eq!(exp.spec.p(), 9);
        assert_eq!(exp.spec.q(), 10);
        assert_eq!(exp.search.block_sizes, vec![18, 18]);
        assert_eq!(exp.search.fixed.len(), 4);
        assert_eq!(exp.search.candidates.len(), 125);
        // N = 500 for tau2 = 1 and N = 1000 for tau2 = 1/q
        let combos: Vec<_> = exp
            .combinations
            .iter()
            .map(|c| (c.tau2, c.criterion.mc_samples))
            .collect();
        assert!(combos.contains(&(1.0, 500)));
        assert!(combos.contains(&(0.1, 1000)));
    }

    #[test]
    fn fixtures_have_expected_layout() {
        let a = appendix_a_design();
        assert_eq!((a.n(), a.k()), (40, 5));
        assert!(!a.is_blocked());
        assert_eq!(a.unique_treatments(), 22);

        let c = appendix_c_design();
        assert_eq!((c.n(), c.k()), (36, 3));
        assert_eq!(c.block_count(), 2);
        assert_eq!(c.unique_treatments(), 21);
    }

    #[test]
    fn fixtures_evaluate_to_published_dof() {
        let exp = preset("example1").unwrap().build().unwrap();
        let dof = pure_error_dof(&appendix_a_design(), &exp.spec).unwrap();
        assert_eq!((dof.t, dof.d, dof.lof), (22, 18, 1));

        let exp = preset("case-study").unwrap().build().unwrap();
        let dof = pure_error_dof(&appendix_c_design(), &exp.spec).unwrap();
        assert_eq!((dof.d, dof.lof, dof.residual), (14, 11, 25));
    }
}
