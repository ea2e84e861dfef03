//! Exact designs: runs, blocks, fixed-run masks, replicate counting and
//! pure-error / lack-of-fit degrees of freedom.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize_level, ModelSpec};

/// An exact n-run design over coded factor levels. Immutable after
/// construction; the search works on modified copies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Design {
    k: usize,
    /// n*k coded levels, row-major.
    runs: Vec<f64>,
    /// 0-based block index per run, when blocked.
    blocks: Option<Vec<usize>>,
    /// Runs the search may not alter.
    fixed: Vec<bool>,
}

/// Degrees-of-freedom split of a design under a primary model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DofSummary {
    /// Number of unique treatments.
    pub t: usize,
    /// Pure-error degrees of freedom: n - t, or n - rank[Z:T] when blocked.
    pub d: usize,
    /// Lack-of-fit degrees of freedom.
    pub lof: usize,
    /// Total residual degrees of freedom (d + lof).
    pub residual: usize,
}

/// Exact-comparison key for one treatment.
pub(crate) fn treatment_key(run: &[f64]) -> Vec<u64> {
    run.iter().map(|v| normalize_level(*v).to_bits()).collect()
}

impl Design {
    pub fn new(
        runs: Vec<Vec<f64>>,
        blocks: Option<Vec<usize>>,
        fixed: Option<Vec<bool>>,
    ) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::DesignFormat("design has no runs".into()));
        }
        let k = runs[0].len();
        if k == 0 {
            return Err(Error::DesignFormat("runs have no coordinates".into()));
        }
        if runs.iter().any(|r| r.len() != k) {
            return Err(Error::DesignFormat("ragged run coordinates".into()));
        }
        let n = runs.len();
        if let Some(b) = &blocks {
            if b.len() != n {
                return Err(Error::DesignFormat(
                    "block vector length differs from run count".into(),
                ));
            }
        }
        let fixed = fixed.unwrap_or_else(|| vec![false; n]);
        if fixed.len() != n {
            return Err(Error::DesignFormat(
                "fixed mask length differs from run count".into(),
            ));
        }
        let mut flat = Vec::with_capacity(n * k);
        for r in &runs {
            flat.extend(r.iter().map(|v| normalize_level(*v)));
        }
        Ok(Design {
            k,
            runs: flat,
            blocks,
            fixed,
        })
    }

    pub fn unblocked(runs: Vec<Vec<f64>>) -> Result<Self> {
        Design::new(runs, None, None)
    }

    pub fn n(&self) -> usize {
        self.runs.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn run(&self, i: usize) -> &[f64] {
        &self.runs[i * self.k..(i + 1) * self.k]
    }

    pub fn runs_flat(&self) -> &[f64] {
        &self.runs
    }

    pub fn is_blocked(&self) -> bool {
        self.blocks.is_some()
    }

    pub fn blocks(&self) -> Option<&[usize]> {
        self.blocks.as_deref()
    }

    pub fn block_of(&self, i: usize) -> Option<usize> {
        self.blocks.as_ref().map(|b| b[i])
    }

    /// Number of blocks (0 for completely randomized designs).
    pub fn block_count(&self) -> usize {
        self.blocks
            .as_ref()
            .map(|b| b.iter().copied().max().unwrap_or(0) + 1)
            .unwrap_or(0)
    }

    pub fn fixed_mask(&self) -> &[bool] {
        &self.fixed
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.fixed[i]
    }

    /// Copy with one run replaced; block and fixed mask are preserved.
    pub fn with_run(&self, i: usize, point: &[f64]) -> Design {
        assert_eq!(point.len(), self.k);
        let mut out = self.clone();
        for (j, v) in point.iter().enumerate() {
            out.runs[i * self.k + j] = normalize_level(*v);
        }
        out
    }

    /// Number of distinct treatment combinations (exact coordinate equality).
    pub fn unique_treatments(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        for i in 0..self.n() {
            seen.insert(treatment_key(self.run(i)));
        }
        seen.len()
    }

    /// Validate this design against a model spec's factor space and, when
    /// blocked, check that every block index is in range.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        if self.k != spec.k() {
            return Err(Error::DesignFormat(format!(
                "design has {} factors but the model expects {}",
                self.k,
                spec.k()
            )));
        }
        for i in 0..self.n() {
            if !spec.space.contains(self.run(i)) {
                return Err(Error::DesignFormat(format!(
                    "run {} has a level outside the factor space: {:?}",
                    i + 1,
                    self.run(i)
                )));
            }
        }
        Ok(())
    }

    /// Read the plain CSV design format: k coordinate columns named `x1..xk`,
    /// optional `block` column (1-based) and optional `fixed` 0/1 column.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::DesignFormat(e.to_string()))?
            .clone();
        let mut coord_cols = Vec::new();
        let mut block_col = None;
        let mut fixed_col = None;
        for (idx, name) in headers.iter().enumerate() {
            let lower = name.to_ascii_lowercase();
            if lower == "block" {
                block_col = Some(idx);
            } else if lower == "fixed" {
                fixed_col = Some(idx);
            } else {
                coord_cols.push(idx);
            }
        }
        if coord_cols.is_empty() {
            return Err(Error::DesignFormat("no coordinate columns found".into()));
        }
        let mut runs = Vec::new();
        let mut blocks = Vec::new();
        let mut fixed = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::DesignFormat(e.to_string()))?;
            let mut row = Vec::with_capacity(coord_cols.len());
            for &c in &coord_cols {
                let field = record.get(c).ok_or_else(|| {
                    Error::DesignFormat(format!("row {}: missing column {}", line + 2, c + 1))
                })?;
                let v: f64 = field.parse().map_err(|_| {
                    Error::DesignFormat(format!(
                        "row {}: cannot parse coordinate {field:?}",
                        line + 2
                    ))
                })?;
                row.push(v);
            }
            runs.push(row);
            if let Some(c) = block_col {
                let field = record.get(c).unwrap_or("");
                let b: usize = field.parse().map_err(|_| {
                    Error::DesignFormat(format!("row {}: cannot parse block {field:?}", line + 2))
                })?;
                if b == 0 {
                    return Err(Error::DesignFormat(format!(
                        "row {}: block indices are 1-based",
                        line + 2
                    )));
                }
                blocks.push(b - 1);
            }
            if let Some(c) = fixed_col {
                let field = record.get(c).unwrap_or("0");
                fixed.push(field == "1");
            }
        }
        Design::new(
            runs,
            block_col.map(|_| blocks),
            fixed_col.map(|_| fixed),
        )
    }

    /// Write the CSV design format; coordinates use the shortest exact
    /// decimal representation so a round trip preserves values bit-for-bit.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.k).map(|i| format!("x{i}")).collect();
        if self.is_blocked() {
            header.push("block".into());
        }
        let any_fixed = self.fixed.iter().any(|&f| f);
        if any_fixed {
            header.push("fixed".into());
        }
        wtr.write_record(&header)
            .map_err(|e| Error::DesignFormat(e.to_string()))?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.run(i).iter().map(|v| format!("{v}")).collect();
            if let Some(b) = self.block_of(i) {
                rec.push((b + 1).to_string());
            }
            if any_fixed {
                rec.push(if self.fixed[i] { "1" } else { "0" }.into());
            }
            wtr.write_record(&rec)
                .map_err(|e| Error::DesignFormat(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn from_csv_path(path: &std::path::Path) -> Result<Self> {
        Design::from_csv(std::fs::File::open(path)?)
    }

    pub fn to_csv_path(&self, path: &std::path::Path) -> Result<()> {
        self.to_csv(std::fs::File::create(path)?)
    }
}

/// rank[Z:T] computed combinatorially as b + t - c, where c is the number of
/// connected components of the block-treatment bipartite graph. Exact integer
/// arithmetic; the numerical rank of [Z:T] is used as a test-time cross-check
/// only.
pub fn block_treatment_rank(design: &Design) -> usize {
    let blocks = design
        .blocks()
        .expect("block_treatment_rank requires a blocked design");
    let b = design.block_count();
    let mut treatment_ids: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut edges = Vec::with_capacity(design.n());
    for i in 0..design.n() {
        let next = treatment_ids.len();
        let tid = *treatment_ids
            .entry(treatment_key(design.run(i)))
            .or_insert(next);
        edges.push((blocks[i], tid));
    }
    let t = treatment_ids.len();
    let mut uf = UnionFind::new(b + t);
    for (blk, tid) in edges {
        uf.union(blk, b + tid);
    }
    // isolated block nodes (empty blocks) are still their own components
    let components = uf.component_count();
    b + t - components
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            self.parent[ra] = rb;
        }
    }

    pub(crate) fn component_count(&mut self) -> usize {
        let n = self.parent.len();
        (0..n).filter(|&i| self.find(i) == i).count()
    }
}

/// Pure-error and lack-of-fit degrees of freedom for a design under a model.
///
/// Unblocked: residual = n - p, d = n - t. Blocked: residual = n - b - p,
/// d = n - rank[Z:T]. Errors with [`Error::ModelTooLarge`] when the design
/// cannot supply non-negative residual or lack-of-fit degrees of freedom.
pub fn pure_error_dof(design: &Design, spec: &ModelSpec) -> Result<DofSummary> {
    let n = design.n() as i64;
    let p = spec.p() as i64;
    let t = design.unique_treatments();
    let (residual, d) = if design.is_blocked() {
        let b = design.block_count() as i64;
        let rank = block_treatment_rank(design) as i64;
        (n - b - p, n - rank)
    } else {
        (n - p, n - t as i64)
    };
    if residual < 0 {
        return Err(Error::ModelTooLarge { residual });
    }
    let lof = residual - d;
    if lof < 0 {
        // fewer estimable treatment contrasts than primary parameters
        return Err(Error::ModelTooLarge { residual: lof });
    }
    Ok(DofSummary {
        t,
        d: d as usize,
        lof: lof as usize,
        residual: residual as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FactorSpace, ModelSpec, Term};
    use crate::numerics::{Matrix, RANK_TOL};

    fn quad_1f_spec() -> ModelSpec {
        let space = FactorSpace::shared(1, &[-1.0, 0.0, 1.0]).unwrap();
        ModelSpec::new(
            space,
            vec![Term::new(vec![0]), Term::new(vec![1]), Term::new(vec![2])],
            vec![Term::new(vec![3])],
        )
        .unwrap()
    }

    #[test]
    fn unique_treatments_counts() {
        let center = Design::unblocked(vec![vec![0.0, 0.0]; 4]).unwrap();
        assert_eq!(center.unique_treatments(), 1);
        let ff = Design::unblocked(vec![
            vec![-1.0, -1.0],
            vec![-1.0, 1.0],
            vec![1.0, -1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        assert_eq!(ff.unique_treatments(), 4);
    }

    #[test]
    fn negative_zero_collapses() {
        let d = Design::unblocked(vec![vec![0.0], vec![-0.0]]).unwrap();
        assert_eq!(d.unique_treatments(), 1);
    }

    #[test]
    fn saturated_design_has_zero_dof() {
        let spec = quad_1f_spec();
        let d = Design::unblocked(vec![vec![-1.0], vec![0.0], vec![1.0]]).unwrap();
        let dof = pure_error_dof(&d, &spec).unwrap();
        assert_eq!((dof.t, dof.d, dof.lof, dof.residual), (3, 0, 0, 0));
    }

    #[test]
    fn replicate_increases_d_only() {
        let spec = quad_1f_spec();
        let base = Design::unblocked(vec![vec![-1.0], vec![0.0], vec![1.0], vec![1.0]]).unwrap();
        let dof = pure_error_dof(&base, &spec).unwrap();
        assert_eq!((dof.t, dof.d, dof.lof), (3, 1, 0));
        let more =
            Design::unblocked(vec![vec![-1.0], vec![0.0], vec![1.0], vec![1.0], vec![1.0]])
                .unwrap();
        let dof2 = pure_error_dof(&more, &spec).unwrap();
        assert_eq!((dof2.t, dof2.d), (dof.t, dof.d + 1));
    }

    #[test]
    fn model_too_large_rejected() {
        let spec = quad_1f_spec();
        let d = Design::unblocked(vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            pure_error_dof(&d, &spec),
            Err(Error::ModelTooLarge { .. })
        ));
    }

    #[test]
    fn blocked_rank_matches_numerical_rank() {
        // two blocks sharing one treatment: 2 + 3 - 1 = 4
        let d = Design::new(
            vec![vec![-1.0], vec![0.0], vec![0.0], vec![1.0]],
            Some(vec![0, 0, 1, 1]),
            None,
        )
        .unwrap();
        assert_eq!(block_treatment_rank(&d), 4);
        // explicit [Z:T]
        let z_t = Matrix::from_rows(&[
            vec![1.0, 0.0, 1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0, 1.0],
        ]);
        assert_eq!(z_t.rank(RANK_TOL), 4);
    }

    #[test]
    fn disconnected_blocks_lower_rank() {
        // blocks share no treatment: c = 2, rank = 2 + 2 - 2 = 2
        let d = Design::new(
            vec![vec![-1.0], vec![-1.0], vec![1.0], vec![1.0]],
            Some(vec![0, 0, 1, 1]),
            None,
        )
        .unwrap();
        assert_eq!(block_treatment_rank(&d), 2);
    }

    #[test]
    fn dof_invariant_under_reordering_and_block_relabeling() {
        // blocked use: intercept excluded from the primary list
        let space = FactorSpace::shared(1, &[-1.0, 0.0, 1.0]).unwrap();
        let spec = ModelSpec::new(
            space,
            vec![Term::new(vec![1]), Term::new(vec![2])],
            vec![Term::new(vec![3])],
        )
        .unwrap();
        let runs = vec![vec![-1.0], vec![0.0], vec![1.0], vec![0.0], vec![-1.0], vec![1.0]];
        let d1 = Design::new(runs.clone(), Some(vec![0, 0, 0, 1, 1, 1]), None).unwrap();
        let mut rev = runs.clone();
        rev.reverse();
        let d2 = Design::new(rev, Some(vec![0, 0, 0, 1, 1, 1]), None).unwrap();
        let d3 = Design::new(runs, Some(vec![1, 1, 1, 0, 0, 0]), None).unwrap();
        let a = pure_error_dof(&d1, &spec).unwrap();
        let b = pure_error_dof(&d2, &spec).unwrap();
        let c = pure_error_dof(&d3, &spec).unwrap();
        assert_eq!(a.d, b.d);
        assert_eq!(a.d, c.d);
    }

    #[test]
    fn csv_round_trip_preserves_everything() {
        let d = Design::new(
            vec![vec![-1.0, 0.5], vec![0.0, -0.5], vec![1.0, 1.0]],
            Some(vec![0, 0, 1]),
            Some(vec![true, false, false]),
        )
        .unwrap();
        let mut buf = Vec::new();
        d.to_csv(&mut buf).unwrap();
        let back = Design::from_csv(buf.as_slice()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn csv_rejects_bad_levels() {
        let text = "x1,x2\n-1,frog\n";
        assert!(Design::from_csv(text.as_bytes()).is_err());
    }
}
