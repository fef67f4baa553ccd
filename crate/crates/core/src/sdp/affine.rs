use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{usage, Result};
use crate::polymat::{ParamBox, PolyMatrix, Point, VarSet};

/// Polynomial-matrix expression affine in the decision vector `x`:
/// `constant + sum_i x_i * coeff_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffExpr {
    rows: usize,
    cols: usize,
    constant: PolyMatrix,
    terms: BTreeMap<usize, PolyMatrix>,
}

impl AffExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AffExpr { rows, cols, constant: PolyMatrix::zeros(rows, cols), terms: BTreeMap::new() }
    }

    pub fn constant(pm: PolyMatrix) -> Self {
        AffExpr { rows: pm.rows(), cols: pm.cols(), constant: pm, terms: BTreeMap::new() }
    }

    /// `x_index * coeff`.
    pub fn term(index: usize, coeff: PolyMatrix) -> Self {
        let mut e = AffExpr::zeros(coeff.rows(), coeff.cols());
        e.terms.insert(index, coeff);
        e
    }

    /// `-x_index * I_n`, the `-gamma^2 I` style block.
    pub fn scaled_identity(index: usize, n: usize, alpha: f64) -> Self {
        AffExpr::term(index, PolyMatrix::identity(n).scale(alpha))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn constant_part(&self) -> &PolyMatrix {
        &self.constant
    }

    pub fn linear_terms(&self) -> impl Iterator<Item = (usize, &PolyMatrix)> {
        self.terms.iter().map(|(i, p)| (*i, p))
    }

    pub fn vars(&self) -> VarSet {
        self.terms.values().fold(self.constant.vars(), |acc, p| acc.union(p.vars()))
    }

    pub fn max_degree(&self) -> u32 {
        use crate::polymat::Var;
        std::iter::once(&self.constant)
            .chain(self.terms.values())
            .map(|p| p.degree(Var::Rho).max(p.degree(Var::Theta)))
            .max()
            .unwrap_or(0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.constant.is_symmetric() && self.terms.values().all(PolyMatrix::is_symmetric)
    }

    fn map(&self, f: impl Fn(&PolyMatrix) -> Result<PolyMatrix>) -> Result<AffExpr> {
        let constant = f(&self.constant)?;
        let terms = self
            .terms
            .iter()
            .map(|(i, p)| Ok((*i, f(p)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(AffExpr { rows: constant.rows(), cols: constant.cols(), constant, terms })
    }

    fn combine(&self, other: &AffExpr, alpha: f64, op: &str) -> Result<AffExpr> {
        if self.shape() != other.shape() {
            return Err(usage(format!("{op}: shape {:?} vs {:?}", self.shape(), other.shape())));
        }
        let mut out = self.clone();
        out.constant = out.constant.add(&other.constant.scale(alpha))?;
        for (i, p) in &other.terms {
            let scaled = p.scale(alpha);
            let merged = match out.terms.remove(i) {
                Some(existing) => existing.add(&scaled)?,
                None => scaled,
            };
            out.terms.insert(*i, merged);
        }
        Ok(out)
    }

    pub fn add(&self, other: &AffExpr) -> Result<AffExpr> {
        self.combine(other, 1.0, "add")
    }

    pub fn sub(&self, other: &AffExpr) -> Result<AffExpr> {
        self.combine(other, -1.0, "sub")
    }

    pub fn add_const(&self, pm: &PolyMatrix) -> Result<AffExpr> {
        self.add(&AffExpr::constant(pm.clone()))
    }

    pub fn scale(&self, alpha: f64) -> AffExpr {
        self.map(|p| Ok(p.scale(alpha))).expect("scaling cannot fail")
    }

    pub fn neg(&self) -> AffExpr {
        self.scale(-1.0)
    }

    /// `L * self`.
    pub fn left_mul(&self, l: &PolyMatrix) -> Result<AffExpr> {
        self.map(|p| l.matmul(p))
    }

    /// `self * R`.
    pub fn right_mul(&self, r: &PolyMatrix) -> Result<AffExpr> {
        self.map(|p| p.matmul(r))
    }

    /// Product with a 1x1 polynomial.
    pub fn scale_poly(&self, s: &PolyMatrix) -> Result<AffExpr> {
        self.map(|p| p.scale_poly(s))
    }

    pub fn transpose(&self) -> AffExpr {
        self.map(|p| Ok(p.transpose())).expect("transpose cannot fail")
    }

    /// `M + M^T`.
    pub fn sym(&self) -> Result<AffExpr> {
        self.map(PolyMatrix::sym)
    }

    pub fn integrate_theta(&self, bx: &ParamBox) -> Result<AffExpr> {
        let theta = |p: &PolyMatrix| -> Result<PolyMatrix> {
            if p.vars().theta {
                p.integrate_theta(bx)
            } else {
                // Constant in theta: the integral is a multiplication by the box measure.
                Ok(p.scale(bx.measure()))
            }
        };
        if !self.vars().theta {
            return Err(usage("integrate_theta on an expression without theta"));
        }
        self.map(theta)
    }

    /// Numeric constant matrix and per-variable coefficient matrices at `point`.
    pub fn eval_parts(&self, point: &Point) -> (DMatrix<f64>, Vec<(usize, DMatrix<f64>)>) {
        let c = self.constant.eval_unchecked(point);
        let parts = self.terms.iter().map(|(i, p)| (*i, p.eval_unchecked(point))).collect();
        (c, parts)
    }

    /// Value at `point` for decision vector `x`.
    pub fn value(&self, point: &Point, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.eval_unchecked(point);
        for (i, p) in &self.terms {
            m += p.eval_unchecked(point) * x[*i];
        }
        m
    }

    /// Concrete polynomial matrix obtained by substituting `x`.
    pub fn substitute(&self, x: &[f64]) -> PolyMatrix {
        self.terms
            .iter()
            .fold(self.constant.clone(), |acc, (i, p)| acc.add(&p.scale(x[*i])).expect("same shape"))
            .pruned()
    }
}

impl From<PolyMatrix> for AffExpr {
    fn from(pm: PolyMatrix) -> Self {
        AffExpr::constant(pm)
    }
}

/// Block matrix of affine entries; missing entries are zero.
#[derive(Debug, Clone)]
pub struct BlockMatrix {
    row_sizes: Vec<usize>,
    col_sizes: Vec<usize>,
    entries: BTreeMap<(usize, usize), AffExpr>,
}

impl BlockMatrix {
    pub fn new(row_sizes: &[usize], col_sizes: &[usize]) -> Self {
        BlockMatrix {
            row_sizes: row_sizes.to_vec(),
            col_sizes: col_sizes.to_vec(),
            entries: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, i: usize, j: usize, e: impl Into<AffExpr>) -> Result<()> {
        let e = e.into();
        let want = (self.row_sizes[i], self.col_sizes[j]);
        if e.shape() != want {
            return Err(usage(format!(
                "block ({}, {}) has shape {:?}, expected {:?}",
                i + 1,
                j + 1,
                e.shape(),
                want
            )));
        }
        self.entries.insert((i, j), e);
        Ok(())
    }

    /// Symmetric block matrix from the upper-triangular entries `(i, j)` with `i <= j`
    /// (zero-based); lower blocks are the transposes.
    pub fn symmetric(sizes: &[usize], upper: Vec<(usize, usize, AffExpr)>) -> Result<AffExpr> {
        let mut b = BlockMatrix::new(sizes, sizes);
        for (i, j, e) in upper {
            if i > j {
                return Err(usage(format!("block ({}, {}) is below the diagonal", i + 1, j + 1)));
            }
            if i == j && !e.is_symmetric() {
                return Err(usage(format!("diagonal block ({}, {}) is not symmetric", i + 1, i + 1)));
            }
            if i != j {
                b.set(j, i, e.transpose())?;
            }
            b.set(i, j, e)?;
        }
        b.assemble()
    }

    pub fn assemble(&self) -> Result<AffExpr> {
        let rows: usize = self.row_sizes.iter().sum();
        let cols: usize = self.col_sizes.iter().sum();
        let row_off = offsets(&self.row_sizes);
        let col_off = offsets(&self.col_sizes);
        let embed = |p: &PolyMatrix, r0: usize, c0: usize| -> PolyMatrix {
            let terms = p.terms().map(|(m, c)| {
                let mut big = DMatrix::zeros(rows, cols);
                big.view_mut((r0, c0), c.shape()).copy_from(c);
                (*m, big)
            });
            PolyMatrix::from_terms(rows, cols, terms).expect("embedded shape").with_vars(p.vars())
        };
        let mut out = AffExpr::zeros(rows, cols);
        for ((i, j), e) in &self.entries {
            let (r0, c0) = (row_off[*i], col_off[*j]);
            out.constant = out.constant.add(&embed(&e.constant, r0, c0))?;
            for (k, p) in &e.terms {
                let placed = embed(p, r0, c0);
                let merged = match out.terms.remove(k) {
                    Some(existing) => existing.add(&placed)?,
                    None => placed,
                };
                out.terms.insert(*k, merged);
            }
        }
        Ok(out)
    }
}

fn offsets(sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mat;
    use crate::polymat::Monomial;

    #[test]
    fn symmetric_block_assembly_mirrors_transposes() {
        let a = AffExpr::term(0, PolyMatrix::constant(mat(1, 2, &[1.0, 2.0])));
        let d = AffExpr::term(1, PolyMatrix::identity(2));
        let m = BlockMatrix::symmetric(
            &[1, 2],
            vec![(0, 0, AffExpr::scaled_identity(2, 1, -1.0)), (0, 1, a), (1, 1, d)],
        )
        .unwrap();
        assert!(m.is_symmetric());
        let v = m.value(&Point::default(), &[3.0, 5.0, 7.0]);
        assert_eq!(v, mat(3, 3, &[-7.0, 3.0, 6.0, 3.0, 5.0, 0.0, 6.0, 0.0, 5.0]));
    }

    #[test]
    fn wrong_block_shape_rejected() {
        let e = AffExpr::zeros(2, 2);
        assert!(BlockMatrix::symmetric(&[1, 2], vec![(0, 1, e)]).is_err());
    }

    #[test]
    fn nonsymmetric_diagonal_rejected() {
        let e = AffExpr::constant(PolyMatrix::constant(mat(2, 2, &[0.0, 1.0, 0.0, 0.0])));
        assert!(BlockMatrix::symmetric(&[2], vec![(0, 0, e)]).is_err());
    }

    #[test]
    fn products_and_substitution() {
        let rho = PolyMatrix::monomial(Monomial::rho(1), DMatrix::identity(1, 1));
        let e = AffExpr::term(0, PolyMatrix::scalar(2.0)).left_mul(&rho).unwrap();
        let s = e.substitute(&[1.5]);
        assert_eq!(s.eval(&Point::rho(2.0)).unwrap()[(0, 0)], 6.0);
        let i = e
            .scale_poly(&PolyMatrix::monomial(Monomial::theta(1), DMatrix::identity(1, 1)))
            .unwrap()
            .integrate_theta(&ParamBox::unit())
            .unwrap();
        assert_eq!(i.value(&Point::rho(2.0), &[1.0])[(0, 0)], 2.0);
    }
}
