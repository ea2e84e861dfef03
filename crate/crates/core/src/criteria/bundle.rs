//! Cached matrix quantities for one design: information matrices, dispersion
//! matrix, alias matrix and the bias sandwich, for completely randomized and
//! blocked experiments.

use crate::design::Design;
use crate::error::{Error, Result};
use crate::model::{model_matrix, ModelSpec};
use crate::numerics::{Cholesky, Matrix};

/// Sufficient statistics of a design for every implemented criterion.
/// The search maintains these incrementally under single-run exchanges.
#[derive(Clone, Debug)]
pub struct Grams {
    pub n: usize,
    /// X_p' X_p. Unblocked designs carry the intercept in column 0;
    /// blocked designs exclude it (aliased with block effects).
    pub mp: Matrix,
    /// X_p' X_q.
    pub g: Matrix,
    /// X_q' X_q.
    pub h: Matrix,
    /// Blocked only: per-block run counts.
    pub block_sizes: Vec<usize>,
    /// Blocked only: b x p per-block column sums of X_p.
    pub zc: Option<Matrix>,
    /// Blocked only: b x q per-block column sums of X_q.
    pub zd: Option<Matrix>,
}

impl Grams {
    pub fn from_design(design: &Design, spec: &ModelSpec) -> Result<Self> {
        validate_layout(design, spec)?;
        let xp = model_matrix(design, &spec.primary);
        let xq = model_matrix(design, &spec.potential);
        let n = design.n();
        let mp = xp.gram();
        let g = xp.cross(&xq);
        let h = xq.gram();
        if let Some(blocks) = design.blocks() {
            let b = design.block_count();
            let mut sizes = vec![0usize; b];
            let mut zc = Matrix::zeros(b, spec.p());
            let mut zd = Matrix::zeros(b, spec.q());
            for i in 0..n {
                let blk = blocks[i];
                sizes[blk] += 1;
                for j in 0..spec.p() {
                    zc[(blk, j)] += xp[(i, j)];
                }
                for j in 0..spec.q() {
                    zd[(blk, j)] += xq[(i, j)];
                }
            }
            if sizes.iter().any(|&s| s == 0) {
                return Err(Error::DesignFormat("empty block".into()));
            }
            Ok(Grams {
                n,
                mp,
                g,
                h,
                block_sizes: sizes,
                zc: Some(zc),
                zd: Some(zd),
            })
        } else {
            Ok(Grams {
                n,
                mp,
                g,
                h,
                block_sizes: Vec::new(),
                zc: None,
                zd: None,
            })
        }
    }

    pub fn is_blocked(&self) -> bool {
        self.zc.is_some()
    }

    /// Replace the contribution of one run: subtract the old model rows'
    /// outer products and add the new ones.
    pub fn swap_run(
        &mut self,
        old_p: &[f64],
        old_q: &[f64],
        new_p: &[f64],
        new_q: &[f64],
        block: Option<usize>,
    ) {
        rank_one_sym(&mut self.mp, old_p, -1.0);
        rank_one_sym(&mut self.mp, new_p, 1.0);
        rank_one(&mut self.g, old_p, old_q, -1.0);
        rank_one(&mut self.g, new_p, new_q, 1.0);
        rank_one_sym(&mut self.h, old_q, -1.0);
        rank_one_sym(&mut self.h, new_q, 1.0);
        if let Some(blk) = block {
            let zc = self.zc.as_mut().expect("blocked grams");
            for (j, (o, nw)) in old_p.iter().zip(new_p).enumerate() {
                zc[(blk, j)] += nw - o;
            }
            let zd = self.zd.as_mut().expect("blocked grams");
            for (j, (o, nw)) in old_q.iter().zip(new_q).enumerate() {
                zd[(blk, j)] += nw - o;
            }
        }
    }
}

fn rank_one_sym(m: &mut Matrix, v: &[f64], sign: f64) {
    let n = v.len();
    for i in 0..n {
        let s = sign * v[i];
        if s == 0.0 {
            continue;
        }
        for j in 0..n {
            m[(i, j)] += s * v[j];
        }
    }
}

fn rank_one(m: &mut Matrix, u: &[f64], v: &[f64], sign: f64) {
    for i in 0..u.len() {
        let s = sign * u[i];
        if s == 0.0 {
            continue;
        }
        for j in 0..v.len() {
            m[(i, j)] += s * v[j];
        }
    }
}

fn validate_layout(design: &Design, spec: &ModelSpec) -> Result<()> {
    if design.k() != spec.k() {
        return Err(Error::DesignFormat(format!(
            "design has {} factors but the model expects {}",
            design.k(),
            spec.k()
        )));
    }
    if spec.q() == 0 {
        return Err(Error::config(
            "model.potential",
            "at least one potential term is required",
        ));
    }
    if design.is_blocked() {
        if spec.has_intercept() {
            return Err(Error::config(
                "model.primary",
                "blocked experiments exclude the intercept: it is aliased with the block effects",
            ));
        }
    } else if !spec.has_intercept() {
        return Err(Error::config(
            "model.primary",
            "completely randomized experiments require an intercept term",
        ));
    }
    Ok(())
}

/// Matrix quantities for one design, ready for criterion evaluation.
///
/// Unblocked: `m0` is the intercept-excluded information matrix
/// `X'_{p-1} Q0 X_{p-1}`, `l` the dispersion matrix built from the full
/// primary matrix, `alias` the full alias matrix `M^{-1} X_p' X_q`, and
/// `sandwich` the projected bias kernel
/// `X_q' Q0 X_{p-1} M0^{-1} X_{p-1}' Q0 X_q`.
///
/// Blocked: `m0` is `X_p' Q X_p`, `l` the block-adjusted dispersion matrix,
/// `alias` is `R_Q = (X_p' Q X_p)^{-1} X_p' Q X_q`, and `sandwich` is
/// `X_q' Q X_p M~^{-1} X_p' Q X_q`.
#[derive(Clone, Debug)]
pub struct MatrixBundle {
    pub n: usize,
    /// Primary term count as in the model spec.
    pub p_terms: usize,
    pub q: usize,
    /// Number of blocks; 0 when completely randomized.
    pub b: usize,
    /// Per-parameter divisor of the S-form criteria: p-1 unblocked, p blocked.
    pub p_s: usize,
    blocked: bool,
    /// Full information matrix X_p'X_p (unblocked only).
    m: Option<Matrix>,
    chol_m: Option<Cholesky>,
    /// S-form information matrix (M0 or M-tilde) and its factorization.
    m0: Matrix,
    chol_m0: Cholesky,
    log_det_m0: f64,
    /// Dispersion matrix L (or tilde-L).
    l: Matrix,
    /// Bias sandwich for the S-form MSE component (q x q, PSD).
    sandwich: Matrix,
    /// Alias matrix: A = M^{-1}X_p'X_q unblocked, R_Q blocked.
    alias: Matrix,
    /// Model matrices, kept when built directly from a design.
    pub x_p: Option<Matrix>,
    pub x_q: Option<Matrix>,
}

impl MatrixBundle {
    /// Build from a design, storing the model matrices as well.
    pub fn build(design: &Design, spec: &ModelSpec) -> Result<Self> {
        let grams = Grams::from_design(design, spec)?;
        let mut bundle = MatrixBundle::from_grams(&grams)?;
        bundle.x_p = Some(model_matrix(design, &spec.primary));
        bundle.x_q = Some(model_matrix(design, &spec.potential));
        Ok(bundle)
    }

    /// Build from sufficient statistics alone (the search's hot path).
    pub fn from_grams(grams: &Grams) -> Result<Self> {
        if grams.is_blocked() {
            Self::from_grams_blocked(grams)
        } else {
            Self::from_grams_unblocked(grams)
        }
    }

    fn from_grams_unblocked(grams: &Grams) -> Result<Self> {
        let n = grams.n;
        let p = grams.mp.rows();
        let q = grams.h.rows();
        if p < 2 {
            return Err(Error::config(
                "model.primary",
                "the unblocked S-form criteria need at least one non-intercept term",
            ));
        }
        let nf = n as f64;
        let chol_m = grams.mp.cholesky().map_err(|_| Error::SingularInformation)?;
        // column sums live in the intercept row of the Gram matrices
        let m0 = Matrix::from_fn(p - 1, p - 1, |i, j| {
            grams.mp[(i + 1, j + 1)] - grams.mp[(0, i + 1)] * grams.mp[(0, j + 1)] / nf
        });
        let bmat = Matrix::from_fn(p - 1, q, |i, j| {
            grams.g[(i + 1, j)] - grams.mp[(0, i + 1)] * grams.g[(0, j)] / nf
        });
        let chol_m0 = m0.cholesky().map_err(|_| Error::SingularInformation)?;
        let log_det_m0 = chol_m0.log_det();
        let alias = chol_m.solve(&grams.g);
        let l = symmetrized(&grams.h.sub(&grams.g.transpose().matmul(&alias)));
        let v = chol_m0.solve(&bmat);
        let sandwich = symmetrized(&bmat.transpose().matmul(&v));
        Ok(MatrixBundle {
            n,
            p_terms: p,
            q,
            b: 0,
            p_s: p - 1,
            blocked: false,
            m: Some(grams.mp.clone()),
            chol_m: Some(chol_m),
            m0,
            chol_m0,
            log_det_m0,
            l,
            sandwich,
            alias,
            x_p: None,
            x_q: None,
        })
    }

    fn from_grams_blocked(grams: &Grams) -> Result<Self> {
        let n = grams.n;
        let p = grams.mp.rows();
        let q = grams.h.rows();
        let b = grams.block_sizes.len();
        let zc = grams.zc.as_ref().unwrap();
        let zd = grams.zd.as_ref().unwrap();
        let mut m0 = grams.mp.clone();
        let mut r = grams.g.clone();
        let mut hz = Matrix::zeros(q, q);
        for blk in 0..b {
            let w = 1.0 / grams.block_sizes[blk] as f64;
            for i in 0..p {
                let ci = zc[(blk, i)];
                if ci != 0.0 {
                    for j in 0..p {
                        m0[(i, j)] -= w * ci * zc[(blk, j)];
                    }
                    for j in 0..q {
                        r[(i, j)] -= w * ci * zd[(blk, j)];
                    }
                }
            }
            for i in 0..q {
                let di = zd[(blk, i)];
                if di != 0.0 {
                    for j in 0..q {
                        hz[(i, j)] += w * di * zd[(blk, j)];
                    }
                }
            }
        }
        let chol_m0 = m0.cholesky().map_err(|_| Error::SingularInformation)?;
        let log_det_m0 = chol_m0.log_det();
        // R_Q and the bias sandwich share one solve
        let alias = chol_m0.solve(&r);
        let sandwich = symmetrized(&r.transpose().matmul(&alias));
        let l = symmetrized(&grams.h.sub(&hz).sub(&sandwich));
        Ok(MatrixBundle {
            n,
            p_terms: p,
            q,
            b,
            p_s: p,
            blocked: true,
            m: None,
            chol_m: None,
            m0,
            chol_m0,
            log_det_m0,
            l,
            sandwich,
            alias,
            x_p: None,
            x_q: None,
        })
    }

    pub fn is_blocked(&self) -> bool {
        self.blocked
    }

    /// The S-form information matrix: `X'_{p-1} Q0 X_{p-1}` or `X_p' Q X_p`.
    pub fn information(&self) -> &Matrix {
        &self.m0
    }

    /// Full unblocked information matrix `X_p' X_p` (with intercept).
    pub fn full_information(&self) -> Option<&Matrix> {
        self.m.as_ref()
    }

    pub fn log_det_information(&self) -> f64 {
        self.log_det_m0
    }

    pub fn information_factor(&self) -> &Cholesky {
        &self.chol_m0
    }

    pub fn full_information_factor(&self) -> Option<&Cholesky> {
        self.chol_m.as_ref()
    }

    /// Dispersion matrix L (unblocked) or tilde-L (blocked).
    pub fn dispersion(&self) -> &Matrix {
        &self.l
    }

    /// Bias sandwich of the S-form MSE component.
    pub fn sandwich(&self) -> &Matrix {
        &self.sandwich
    }

    /// Bias sandwich of the full-information (intercept-including) MSE
    /// criterion, `X_q' X_p M^{-1} X_p' X_q`. Unblocked only.
    pub fn sandwich_full(&self) -> Option<Matrix> {
        // alias = M^{-1}G, so G' alias is the sandwich; recover G as M*alias
        let g = self.m.as_ref()?.matmul(&self.alias);
        Some(symmetrized(&g.transpose().matmul(&self.alias)))
    }

    /// Alias matrix: `A = (X_p'X_p)^{-1} X_p'X_q` unblocked,
    /// `R_Q = (X_p'QX_p)^{-1} X_p'QX_q` blocked.
    pub fn alias(&self) -> &Matrix {
        &self.alias
    }
}

fn symmetrized(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Materialize the projection matrix used by the bundle: `Q0 = I - 11'/n`
/// for completely randomized designs, `Q = I - Z(Z'Z)^{-1}Z'` for blocked
/// ones. Intended for tests; criteria never form these explicitly.
pub fn projection_matrix(design: &Design) -> Matrix {
    let n = design.n();
    if let Some(blocks) = design.blocks() {
        let b = design.block_count();
        let mut sizes = vec![0usize; b];
        for &blk in blocks {
            sizes[blk] += 1;
        }
        Matrix::from_fn(n, n, |i, j| {
            let same = (blocks[i] == blocks[j]) as usize as f64;
            (i == j) as usize as f64 - same / sizes[blocks[i]] as f64
        })
    } else {
        Matrix::from_fn(n, n, |i, j| (i == j) as usize as f64 - 1.0 / n as f64)
    }
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

    #[test]
    fn projections_are_idempotent_and_symmetric() {
        let (design, _) = fixture_1f();
        let q0 = projection_matrix(&design);
        assert!(q0.matmul(&q0).sub(&q0).max_abs() < 1e-10);
        assert!(q0.sub(&q0.transpose()).max_abs() < 1e-12);

        let blocked = Design::new(
            vec![vec![-1.0], vec![0.0], vec![1.0], vec![1.0]],
            Some(vec![0, 0, 1, 1]),
            None,
        )
        .unwrap();
        let q = projection_matrix(&blocked);
        assert!(q.matmul(&q).sub(&q).max_abs() < 1e-10);
    }

    #[test]
    fn unblocked_fixture_matrices() {
        let (design, spec) = fixture_1f();
        let bundle = MatrixBundle::build(&design, &spec).unwrap();
        // hand-computed: M0 = [[2.75, 0.25], [0.25, 0.75]], det = 2
        assert_relative_eq!(bundle.information()[(0, 0)], 2.75, epsilon = 1e-12);
        assert_relative_eq!(bundle.information()[(1, 1)], 0.75, epsilon = 1e-12);
        assert_relative_eq!(
            bundle.log_det_information(),
            2.0_f64.ln(),
            epsilon = 1e-12
        );
        // compound sandwich: scalar, computed by explicit matrix arithmetic
        assert_relative_eq!(bundle.sandwich()[(0, 0)], 2.75, epsilon = 1e-10);
        // Eq.(9) sandwich: scalar 3 (so bias = log 4)
        assert_relative_eq!(
            bundle.sandwich_full().unwrap()[(0, 0)],
            3.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn bundle_matches_explicit_projection_route() {
        let (design, spec) = fixture_1f();
        let bundle = MatrixBundle::build(&design, &spec).unwrap();
        let xp = crate::model::model_matrix(&design, &spec.primary);
        let xq = crate::model::model_matrix(&design, &spec.potential);
        let q0 = projection_matrix(&design);
        let xp1 = Matrix::from_fn(4, 2, |i, j| xp[(i, j + 1)]);
        let m0 = xp1.transpose().matmul(&q0).matmul(&xp1);
        assert!(m0.sub(bundle.information()).max_abs() < 1e-12);
        let minv = xp.gram().inverse().unwrap();
        let l = xq
            .gram()
            .sub(&xq.transpose().matmul(&xp).matmul(&minv).matmul(&xp.transpose()).matmul(&xq));
        assert!(l.sub(bundle.dispersion()).max_abs() < 1e-10);
    }

    #[test]
    fn single_block_reduces_to_unblocked_projection() {
        // with one block, Q equals Q0, so tilde-L equals the dispersion matrix
        // computed from [1, X_p]
        let space = FactorSpace::shared(1, &[-1.0, 0.0, 1.0]).unwrap();
        let spec_nointercept = ModelSpec::new(
            space.clone(),
            vec![Term::new(vec![1]), Term::new(vec![2])],
            vec![Term::new(vec![3])],
        )
        .unwrap();
        let spec_intercept = ModelSpec::new(
            space,
            vec![Term::new(vec![0]), Term::new(vec![1]), Term::new(vec![2])],
            vec![Term::new(vec![3])],
        )
        .unwrap();
        let runs = vec![vec![-1.0], vec![0.0], vec![1.0], vec![1.0]];
        let blocked =
            Design::new(runs.clone(), Some(vec![0, 0, 0, 0]), None).unwrap();
        let unblocked = Design::unblocked(runs).unwrap();
        let bb = MatrixBundle::build(&blocked, &spec_nointercept).unwrap();
        let ub = MatrixBundle::build(&unblocked, &spec_intercept).unwrap();
        assert!(bb.dispersion().sub(ub.dispersion()).max_abs() < 1e-10);
        assert!(bb.information().sub(ub.information()).max_abs() < 1e-10);
        assert!(bb.sandwich().sub(ub.sandwich()).max_abs() < 1e-10);
    }

    #[test]
    fn blocked_requires_no_intercept() {
        let space = FactorSpace::shared(1, &[-1.0, 0.0, 1.0]).unwrap();
        let spec = ModelSpec::new(
            space,
            vec![Term::new(vec![0]), Term::new(vec![1])],
            vec![Term::new(vec![3])],
        )
        .unwrap();
        let blocked = Design::new(
            vec![vec![-1.0], vec![1.0]],
            Some(vec![0, 1]),
            None,
        )
        .unwrap();
        assert!(MatrixBundle::build(&blocked, &spec).is_err());
    }

    #[test]
    fn grams_swap_matches_rebuild() {
        let (design, spec) = fixture_1f();
        let mut grams = Grams::from_design(&design, &spec).unwrap();
        let replaced = design.with_run(1, &[-1.0]);
        let old_p: Vec<f64> = spec.primary.iter().map(|t| t.eval(&[0.0])).collect();
        let old_q: Vec<f64> = spec.potential.iter().map(|t| t.eval(&[0.0])).collect();
        let new_p: Vec<f64> = spec.primary.iter().map(|t| t.eval(&[-1.0])).collect();
        let new_q: Vec<f64> = spec.potential.iter().map(|t| t.eval(&[-1.0])).collect();
        grams.swap_run(&old_p, &old_q, &new_p, &new_q, None);
        let fresh = Grams::from_design(&replaced, &spec).unwrap();
        assert!(grams.mp.sub(&fresh.mp).max_abs() < 1e-12);
        assert!(grams.g.sub(&fresh.g).max_abs() < 1e-12);
        assert!(grams.h.sub(&fresh.h).max_abs() < 1e-12);
    }
}
