//! Factor spaces, polynomial term sets, candidate grids and model matrices.

use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Coded experimental region: one ordered level list per factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSpace {
    levels: Vec<Vec<f64>>,
}

impl FactorSpace {
    pub fn new(levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::config("factors", "at least one factor is required"));
        }
        let mut sorted = Vec::with_capacity(levels.len());
        for (i, lv) in levels.into_iter().enumerate() {
            let mut lv: Vec<f64> = lv.into_iter().map(normalize_level).collect();
            if lv.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(
                    format!("factors.levels[{i}]"),
                    "levels must be finite",
                ));
            }
            lv.sort_by(|a, b| a.partial_cmp(b).unwrap());
            lv.dedup();
            if lv.len() < 2 {
                return Err(Error::config(
                    format!("factors.levels[{i}]"),
                    "each factor needs at least 2 distinct levels",
                ));
            }
            sorted.push(lv);
        }
        Ok(FactorSpace { levels: sorted })
    }

    /// All `k` factors share the same level list.
    pub fn shared(k: usize, levels: &[f64]) -> Result<Self> {
        FactorSpace::new(vec![levels.to_vec(); k])
    }

    pub fn k(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self, factor: usize) -> &[f64] {
        &self.levels[factor]
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.k()
            && point
                .iter()
                .zip(&self.levels)
                .all(|(v, lv)| lv.iter().any(|l| l.to_bits() == normalize_level(*v).to_bits()))
    }
}

/// Canonical representation of a coded level; collapses -0.0 into 0.0 so
/// exact bitwise treatment comparison is well defined.
pub fn normalize_level(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// A polynomial model term as a vector of per-factor exponents; the all-zero
/// vector is the intercept.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Term {
    pub exponents: Vec<u32>,
}

impl Term {
    pub fn new(exponents: Vec<u32>) -> Self {
        Term { exponents }
    }

    pub fn intercept(k: usize) -> Self {
        Term::new(vec![0; k])
    }

    pub fn is_intercept(&self) -> bool {
        self.exponents.iter().all(|&e| e == 0)
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    /// Model-matrix entry for this term at one design point.
    pub fn eval(&self, point: &[f64]) -> f64 {
        let mut v = 1.0;
        for (x, &e) in point.iter().zip(&self.exponents) {
            if e > 0 {
                v *= x.powi(e as i32);
            }
        }
        v
    }

    fn single(k: usize, factor: usize, exponent: u32) -> Self {
        let mut e = vec![0; k];
        e[factor] = exponent;
        Term::new(e)
    }
}

impl std::fmt::Display for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_intercept() {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &e) in self.exponents.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            write!(f, "x{}", i + 1)?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

/// Primary (fitted) and potential (contamination) term lists over a factor
/// space. For blocked experiments the intercept is excluded from the primary
/// list, as it is aliased with the block effects.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub space: FactorSpace,
    pub primary: Vec<Term>,
    pub potential: Vec<Term>,
}

impl ModelSpec {
    pub fn new(space: FactorSpace, primary: Vec<Term>, potential: Vec<Term>) -> Result<Self> {
        let k = space.k();
        let check = |list: &[Term], name: &str| -> Result<()> {
            if list.iter().any(|t| t.exponents.len() != k) {
                return Err(Error::config(
                    format!("model.{name}"),
                    format!("every term must have {k} exponents"),
                ));
            }
            let mut seen = std::collections::HashSet::new();
            for t in list {
                if !seen.insert(t.clone()) {
                    return Err(Error::config(
                        format!("model.{name}"),
                        format!("duplicate term {t}"),
                    ));
                }
            }
            Ok(())
        };
        check(&primary, "primary")?;
        check(&potential, "potential")?;
        if primary.is_empty() {
            return Err(Error::config("model.primary", "primary term list is empty"));
        }
        for t in &potential {
            if primary.contains(t) {
                return Err(Error::config(
                    "model.potential",
                    format!("term {t} appears in both primary and potential lists"),
                ));
            }
        }
        Ok(ModelSpec {
            space,
            primary,
            potential,
        })
    }

    pub fn k(&self) -> usize {
        self.space.k()
    }

    /// Number of primary terms (includes the intercept when present).
    pub fn p(&self) -> usize {
        self.primary.len()
    }

    pub fn q(&self) -> usize {
        self.potential.len()
    }

    pub fn has_intercept(&self) -> bool {
        self.primary.iter().any(Term::is_intercept)
    }
}

/// Full second-order model: intercept, linear, quadratic and bilinear terms,
/// in that order; 1 + 2k + k(k-1)/2 terms in total.
pub fn full_second_order_terms(space: &FactorSpace) -> Vec<Term> {
    let k = space.k();
    let mut terms = Vec::with_capacity(1 + 2 * k + k * (k - 1) / 2);
    terms.push(Term::intercept(k));
    for i in 0..k {
        terms.push(Term::single(k, i, 1));
    }
    for i in 0..k {
        terms.push(Term::single(k, i, 2));
    }
    for i in 0..k {
        for j in i + 1..k {
            let mut e = vec![0; k];
            e[i] = 1;
            e[j] = 1;
            terms.push(Term::new(e));
        }
    }
    terms
}

/// Third-order contamination terms: triple-linear interactions, then
/// quadratic-by-linear interactions, then (optionally) pure cubics.
pub fn third_order_potential_terms(space: &FactorSpace, include_pure_cubic: bool) -> Vec<Term> {
    let k = space.k();
    let mut terms = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            for c in b + 1..k {
                let mut e = vec![0; k];
                e[a] = 1;
                e[b] = 1;
                e[c] = 1;
                terms.push(Term::new(e));
            }
        }
    }
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let mut e = vec![0; k];
            e[i] = 2;
            e[j] = 1;
            terms.push(Term::new(e));
        }
    }
    if include_pure_cubic {
        for i in 0..k {
            terms.push(Term::single(k, i, 3));
        }
    }
    terms
}

/// Full factorial grid over the per-factor levels in lexicographic order.
pub fn candidate_set(space: &FactorSpace) -> Vec<Vec<f64>> {
    let k = space.k();
    let mut points = vec![vec![]];
    for f in 0..k {
        let mut next = Vec::with_capacity(points.len() * space.levels(f).len());
        for p in &points {
            for &lv in space.levels(f) {
                let mut q = p.clone();
                q.push(lv);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

/// n x |terms| model matrix for a design.
pub fn model_matrix(design: &Design, terms: &[Term]) -> Matrix {
    assert!(!terms.is_empty(), "model_matrix requires at least one term");
    let mut m = Matrix::zeros(design.n(), terms.len());
    for i in 0..design.n() {
        let run = design.run(i);
        for (j, t) in terms.iter().enumerate() {
            m[(i, j)] = t.eval(run);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Design;

    fn space(k: usize) -> FactorSpace {
        FactorSpace::shared(k, &[-1.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn second_order_counts() {
        assert_eq!(full_second_order_terms(&space(5)).len(), 21);
        assert_eq!(full_second_order_terms(&space(1)).len(), 3);
        assert_eq!(full_second_order_terms(&space(3)).len(), 10);
        for k in 1..=8 {
            let expect = 1 + 2 * k + k * (k - 1) / 2;
            assert_eq!(full_second_order_terms(&space(k)).len(), expect);
        }
    }

    #[test]
    fn third_order_counts() {
        assert_eq!(third_order_potential_terms(&space(5), false).len(), 30);
        assert_eq!(third_order_potential_terms(&space(3), true).len(), 10);
        let one = third_order_potential_terms(&space(1), true);
        assert_eq!(one, vec![Term::new(vec![3])]);
        for k in 2..=6 {
            let c3 = k * (k - 1) * (k - 2) / 6;
            assert_eq!(
                third_order_potential_terms(&space(k), false).len(),
                c3 + k * (k - 1)
            );
        }
    }

    #[test]
    fn candidate_grid_sizes_and_order() {
        assert_eq!(candidate_set(&space(5)).len(), 243);
        let five = FactorSpace::shared(3, &[-1.0, -0.5, 0.0, 0.5, 1.0]).unwrap();
        assert_eq!(candidate_set(&five).len(), 125);
        let two = FactorSpace::new(vec![vec![-1.0, 1.0]]).unwrap();
        assert_eq!(candidate_set(&two), vec![vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn model_matrix_single_run() {
        let d = Design::unblocked(vec![vec![-1.0, 1.0]]).unwrap();
        let terms = vec![
            Term::intercept(2),
            Term::new(vec![1, 0]),
            Term::new(vec![0, 1]),
            Term::new(vec![1, 1]),
        ];
        let m = model_matrix(&d, &terms);
        assert_eq!(m.row(0), &[1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn quadratic_term_values() {
        let t = Term::new(vec![2]);
        assert_eq!(t.eval(&[0.0]), 0.0);
        assert_eq!(t.eval(&[-1.0]), 1.0);
    }

    #[test]
    fn factorial_information_is_orthogonal() {
        let d = Design::unblocked(vec![
            vec![-1.0, -1.0],
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let terms = vec![
            Term::intercept(2),
            Term::new(vec![1, 0]),
            Term::new(vec![0, 1]),
        ];
        let m = model_matrix(&d, &terms).gram();
        assert_eq!(m, Matrix::identity(3).scale(4.0));
    }

    #[test]
    fn model_matrix_row_permutation_equivariance() {
        let runs = vec![vec![-1.0, 0.0], vec![0.0, 1.0], vec![1.0, -1.0]];
        let mut permuted = runs.clone();
        permuted.rotate_left(1);
        let terms = full_second_order_terms(&space(2));
        let a = model_matrix(&Design::unblocked(runs).unwrap(), &terms);
        let b = model_matrix(&Design::unblocked(permuted).unwrap(), &terms);
        for i in 0..3 {
            assert_eq!(a.row((i + 1) % 3), b.row(i));
        }
    }

    #[test]
    fn disjointness_is_validated() {
        let sp = space(2);
        let shared = Term::new(vec![1, 1]);
        let err = ModelSpec::new(
            sp,
            vec![Term::intercept(2), shared.clone()],
            vec![shared],
        );
        assert!(err.is_err());
    }
}
