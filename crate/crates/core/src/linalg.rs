//! Compressed-row sparse matrices and a reusable sparse LU factorization.
//!
//! The numeric factorization is delegated to `faer` (COLAMD column ordering,
//! supernodal or simplicial LU with partial pivoting). A symbolic analysis can
//! be computed once and reused for every matrix sharing the same pattern,
//! which is the situation inside the time loop.

use std::io::Write;

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Mat, MatMut};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Coordinate-format accumulator. Duplicates are summed in insertion order.
#[derive(Debug, Clone)]
pub struct Triplets {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    /// Adds `scale * block` with its (0,0) entry placed at `(row0, col0)`.
    pub fn push_block(&mut self, block: &SparseMatrix, row0: usize, col0: usize, scale: f64) {
        for i in 0..block.nrows {
            for (j, v) in block.row(i) {
                self.push(row0 + i, col0 + j, scale * v);
            }
        }
    }

    /// Adds `scale * block^T` with its (0,0) entry placed at `(row0, col0)`.
    pub fn push_block_transposed(&mut self, block: &SparseMatrix, row0: usize, col0: usize, scale: f64) {
        for i in 0..block.nrows {
            for (j, v) in block.row(i) {
                self.push(row0 + j, col0 + i, scale * v);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn build(self) -> SparseMatrix {
        let Triplets { nrows, ncols, entries } = self;
        // Counting sort by row keeps insertion order within each row.
        let mut counts = vec![0usize; nrows + 1];
        for &(r, _, _) in &entries {
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut by_row = vec![(0usize, 0.0f64); entries.len()];
        for (r, c, v) in entries {
            by_row[next[r]] = (c, v);
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(by_row.len());
        let mut values = Vec::with_capacity(by_row.len());
        row_ptr.push(0);
        for i in 0..nrows {
            let row = &mut by_row[counts[i]..counts[i + 1]];
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut t = Triplets::new(nrows, ncols);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push(i, j, v);
                }
            }
        }
        t.build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub(crate) fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].binary_search(&j).ok().map(|k| r.start + k)
    }

    /// Entry `(i, j)`, zero when outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matvec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                col_idx[next[j]] = i;
                values[next[j]] = self.values[k];
                next[j] += 1;
            }
        }
        SparseMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self += alpha * other` for `other` placed at `(row0, col0)`; the
    /// pattern of `other` must be contained in the pattern of `self`.
    pub fn add_scaled_at(&mut self, other: &SparseMatrix, alpha: f64, row0: usize, col0: usize) -> Result<()> {
        if row0 + other.nrows > self.nrows || col0 + other.ncols > self.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.nrows,
                actual: row0 + other.nrows,
            });
        }
        for i in 0..other.nrows {
            let row = row0 + i;
            let (mut k, end) = (self.row_ptr[row], self.row_ptr[row + 1]);
            for (j, v) in other.row(i) {
                let col = col0 + j;
                while k < end && self.col_idx[k] < col {
                    k += 1;
                }
                if k == end || self.col_idx[k] != col {
                    return Err(Error::InvalidInput(format!(
                        "entry ({row}, {col}) is outside the target pattern"
                    )));
                }
                self.values[k] += alpha * v;
            }
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &SparseMatrix, alpha: f64) -> Result<()> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.nrows,
                actual: other.nrows,
            });
        }
        self.add_scaled_at(other, alpha, 0, 0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_ij - A_ji|` over the pattern.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Largest `|A_ij + A_ji|` over the pattern.
    pub fn max_skew_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v + self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Copy of the columns listed in `cols` (ascending), all others dropped.
    pub fn extract_columns(&self, cols: &[usize]) -> SparseMatrix {
        let mut keep = vec![false; self.ncols];
        for &c in cols {
            keep[c] = true;
        }
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                if keep[j] {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Replaces each listed row and column by the identity while keeping the
    /// sparsity pattern (eliminated entries become explicit zeros).
    pub fn eliminate_rows_cols(&mut self, dofs: &[usize]) -> Result<()> {
        if self.nrows != self.ncols {
            return Err(Error::InvalidInput("row/column elimination needs a square matrix".into()));
        }
        let mut mark = vec![false; self.nrows];
        for &d in dofs {
            if d >= self.nrows {
                return Err(Error::IndexOutOfRange {
                    index: d,
                    len: self.nrows,
                });
            }
            if self.position(d, d).is_none() {
                return Err(Error::InvalidInput(format!("diagonal entry {d} missing from pattern")));
            }
            mark[d] = true;
        }
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if mark[i] || mark[j] {
                    self.values[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
        }
        Ok(())
    }

    /// Coordinate text dump: header `nrows ncols nnz`, then `row col value` lines.
    pub fn write_coo<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                writeln!(out, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

/// Dirichlet enforcement by row/column elimination.
///
/// Each listed row becomes an identity row with right-hand side equal to the
/// prescribed value; the eliminated column contributions are moved into the
/// right-hand side, so a symmetric matrix stays symmetric.
pub fn apply_dirichlet(matrix: &mut SparseMatrix, rhs: &mut [f64], dofs: &[usize], values: &[f64]) -> Result<()> {
    if dofs.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: dofs.len(),
            actual: values.len(),
        });
    }
    if rhs.len() != matrix.nrows() {
        return Err(Error::DimensionMismatch {
            expected: matrix.nrows(),
            actual: rhs.len(),
        });
    }
    let lift = DirichletLift::new(matrix, dofs)?;
    lift.apply_rhs(rhs, values);
    matrix.eliminate_rows_cols(dofs)
}

/// The eliminated columns of a matrix, kept so that right-hand sides for
/// different boundary data can be lifted after the matrix was modified.
#[derive(Debug, Clone)]
pub struct DirichletLift {
    dofs: Vec<usize>,
    columns: SparseMatrix,
}

impl DirichletLift {
    pub fn new(matrix: &SparseMatrix, dofs: &[usize]) -> Result<Self> {
        let mut sorted = dofs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != dofs.len() {
            return Err(Error::InvalidInput("duplicate Dirichlet DOF".into()));
        }
        if let Some(&d) = sorted.last() {
            if d >= matrix.ncols() {
                return Err(Error::IndexOutOfRange {
                    index: d,
                    len: matrix.ncols(),
                });
            }
        }
        Ok(DirichletLift {
            dofs: dofs.to_vec(),
            columns: matrix.extract_columns(&sorted),
        })
    }

    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    /// `rhs -= A[:, dofs] g`, then `rhs[dofs] = g`.
    pub fn apply_rhs(&self, rhs: &mut [f64], values: &[f64]) {
        let mut g = vec![0.0; self.columns.ncols()];
        for (&d, &v) in self.dofs.iter().zip(values) {
            g[d] = v;
        }
        for i in 0..self.columns.nrows() {
            let mut s = 0.0;
            for (j, a) in self.columns.row(i) {
                s += a * g[j];
            }
            rhs[i] -= s;
        }
        for (&d, &v) in self.dofs.iter().zip(values) {
            rhs[d] = v;
        }
    }
}

/// Column ordering and elimination structure, reusable across matrices that
/// share one sparsity pattern.
///
/// Rows and columns listed as the border (typically a dense constraint row
/// and one node of the null space it removes) are replaced by scaled identity
/// rows before the sparse factorization and restored afterwards by a rank
/// `2k` Woodbury correction. A dense row couples every column it touches in
/// the `AᵀA` fill bound used by partial-pivoting LU, so keeping it out of
/// the sparse factor saves most of the fill.
#[derive(Debug, Clone)]
pub struct SymbolicAnalysis {
    inner: SymbolicLu<usize>,
    border: Vec<usize>,
    /// CSC arrays of the reduced matrix.
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// For each reduced CSC entry, its position in the CSR values of the
    /// original matrix; `usize::MAX` marks a border diagonal.
    source: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    nrows: usize,
}

impl SymbolicAnalysis {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        Self::with_border(a, &[])
    }

    pub fn with_border(a: &SparseMatrix, border: &[usize]) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::InvalidInput(format!(
                "cannot factorize a {}x{} matrix",
                a.nrows, a.ncols
            )));
        }
        let n = a.nrows;
        let mut sorted = border.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if let Some(&d) = sorted.last() {
            if d >= n {
                return Err(Error::IndexOutOfRange { index: d, len: n });
            }
        }
        let mut is_border = vec![false; n];
        for &d in &sorted {
            is_border[d] = true;
        }

        // Column-wise scatter of the kept CSR entries.
        let mut col_ptr = vec![0usize; n + 1];
        for i in 0..n {
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[k];
                if !is_border[i] && !is_border[j] {
                    col_ptr[j + 1] += 1;
                }
            }
        }
        for &d in &sorted {
            col_ptr[d + 1] += 1;
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        let nnz = col_ptr[n];
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0usize; nnz];
        let mut source = vec![0usize; nnz];
        for i in 0..n {
            if is_border[i] {
                let slot = next[i];
                row_idx[slot] = i;
                source[slot] = usize::MAX;
                next[i] += 1;
                continue;
            }
            for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[k];
                if !is_border[j] {
                    let slot = next[j];
                    row_idx[slot] = i;
                    source[slot] = k;
                    next[j] += 1;
                }
            }
        }

        let sym = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
        let inner = SymbolicLu::try_new(sym).map_err(|e| Error::InvalidInput(format!("symbolic LU failed: {e:?}")))?;
        Ok(SymbolicAnalysis {
            inner,
            border: sorted,
            col_ptr,
            row_idx,
            source,
            row_ptr: a.row_ptr.clone(),
            col_idx: a.col_idx.clone(),
            nrows: n,
        })
    }

    pub fn matches(&self, a: &SparseMatrix) -> bool {
        a.nrows == self.nrows && a.row_ptr == self.row_ptr && a.col_idx == self.col_idx
    }

    pub fn border(&self) -> &[usize] {
        &self.border
    }
}

/// Low-rank restoration of the border rows and columns.
///
/// With `A = A₀ + U Vᵀ`, `A⁻¹ b = y − W C⁻¹ Vᵀ y` where `y = A₀⁻¹ b`,
/// `W = A₀⁻¹ U` and `C = I + Vᵀ W`.
#[derive(Debug, Clone)]
struct BorderCorrection {
    /// Columns of `V` as sparse vectors.
    v: Vec<Vec<(usize, f64)>>,
    w: Vec<Vec<f64>>,
    c_inv: Mat<f64>,
}

impl BorderCorrection {
    fn apply(&self, mut x: MatMut<'_, f64>) {
        let r = self.v.len();
        for col in 0..x.ncols() {
            let z: Vec<f64> = self
                .v
                .iter()
                .map(|v| v.iter().map(|&(i, val)| val * x[(i, col)]).sum())
                .collect();
            for (k, wk) in self.w.iter().enumerate() {
                let coef: f64 = (0..r).map(|l| self.c_inv[(k, l)] * z[l]).sum();
                if coef != 0.0 {
                    for (i, &wi) in wk.iter().enumerate() {
                        x[(i, col)] -= wi * coef;
                    }
                }
            }
        }
    }
}

/// A factored square matrix; immutable and shareable across threads.
#[derive(Debug, Clone)]
pub struct Factorization {
    lu: Lu<usize, f64>,
    border: Option<BorderCorrection>,
    n: usize,
}

pub fn factorize(a: &SparseMatrix) -> Result<Factorization> {
    let symbolic = SymbolicAnalysis::new(a)?;
    factorize_with(&symbolic, a)
}

/// Numeric factorization reusing a symbolic analysis of the same pattern.
pub fn factorize_with(symbolic: &SymbolicAnalysis, a: &SparseMatrix) -> Result<Factorization> {
    if !symbolic.matches(a) {
        return Err(Error::InvalidInput("matrix pattern differs from the symbolic analysis".into()));
    }
    crate::exec::sync_faer();
    let n = a.nrows;
    // Border identity rows use the matrix scale so A₀ stays well balanced.
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let values: Vec<f64> = symbolic
        .source
        .iter()
        .map(|&k| if k == usize::MAX { scale } else { a.values[k] })
        .collect();
    let sym = SymbolicSparseColMatRef::new_checked(n, n, &symbolic.col_ptr, None, &symbolic.row_idx);
    let mat = SparseColMatRef::new(sym, &values);
    let lu = match Lu::try_new_with_symbolic(symbolic.inner.clone(), mat) {
        Ok(lu) => lu,
        Err(faer::sparse::linalg::LuError::SymbolicSingular { index }) => {
            return Err(Error::Singular { pivot: index })
        }
        Err(e) => return Err(Error::InvalidInput(format!("numeric LU failed: {e:?}"))),
    };
    let mut f = Factorization { lu, border: None, n };
    if !symbolic.border.is_empty() {
        f.border = Some(f.border_correction(a, &symbolic.border, scale)?);
    }
    f.check_pivots(a)?;
    Ok(f)
}

/// Relative residual above which a factorization is declared singular.
const PROBE_RESIDUAL_TOL: f64 = 1e-8;

impl Factorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Rejects factorizations with vanishing pivots. A probe system with a
    /// known solution is solved; a zero or negligible pivot shows up as a
    /// non-finite or inaccurate solution.
    fn check_pivots(&self, a: &SparseMatrix) -> Result<()> {
        if self.n == 0 {
            return Ok(());
        }
        let probe: Vec<f64> = (0..self.n).map(|i| 1.0 + (i % 7) as f64 / 7.0).collect();
        let b = a.matvec(&probe);
        let x = self.solve_unchecked(&b);
        if let Some(pivot) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Singular { pivot });
        }
        let r = a.matvec(&x);
        let num = r.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let den = b.iter().fold(0.0, |m: f64, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        if num / den > PROBE_RESIDUAL_TOL {
            let pivot = x
                .iter()
                .zip(&probe)
                .enumerate()
                .max_by(|(_, (x1, p1)), (_, (x2, p2))| (*x1 - *p1).abs().total_cmp(&(*x2 - *p2).abs()))
                .map_or(0, |(i, _)| i);
            return Err(Error::Singular { pivot });
        }
        Ok(())
    }

    /// Builds `U`, `V`, `W = A₀⁻¹ U` and `C⁻¹` for the border set.
    fn border_correction(&self, a: &SparseMatrix, border: &[usize], scale: f64) -> Result<BorderCorrection> {
        let n = self.n;
        let mut is_border = vec![false; n];
        for &d in border {
            is_border[d] = true;
        }
        let at = a.transpose();
        let k = border.len();
        let mut u = Mat::<f64>::zeros(n, 2 * k);
        let mut v = Vec::with_capacity(2 * k);
        // Rows: A[s,:] - scale e_sᵀ, paired with e_s.
        for (m, &s) in border.iter().enumerate() {
            u[(s, m)] = 1.0;
            let mut row: Vec<(usize, f64)> = a.row(s).collect();
            match row.iter_mut().find(|(j, _)| *j == s) {
                Some(e) => e.1 -= scale,
                None => row.push((s, -scale)),
            }
            v.push(row);
        }
        // Columns outside the border rows: A[:,s] masked, paired with e_s.
        for (m, &s) in border.iter().enumerate() {
            for (i, val) in at.row(s) {
                if !is_border[i] {
                    u[(i, k + m)] = val;
                }
            }
            v.push(vec![(s, 1.0)]);
        }
        self.lu.solve_in_place(u.as_mut());
        let r = 2 * k;
        let cap = Mat::<f64>::from_fn(r, r, |p, q| {
            let d = if p == q { 1.0 } else { 0.0 };
            d + v[p].iter().map(|&(i, val)| val * u[(i, q)]).sum::<f64>()
        });
        let c_inv = cap.partial_piv_lu().inverse();
        if c_inv.col_iter().any(|c| c.iter().any(|x| !x.is_finite())) {
            return Err(Error::Singular { pivot: border[0] });
        }
        Ok(BorderCorrection {
            v,
            w: (0..r).map(|q| u.col(q).iter().copied().collect()).collect(),
            c_inv,
        })
    }

    fn solve_block(&self, mut rhs: MatMut<'_, f64>) {
        self.lu.solve_in_place(rhs.as_mut());
        if let Some(border) = &self.border {
            border.apply(rhs);
        }
    }

    fn solve_unchecked(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.solve_block(rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: b.len(),
            });
        }
        Ok(self.solve_unchecked(b))
    }

    /// Solves for every right-hand side against the one factorization.
    pub fn solve_multi(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(bad) = rhs.iter().find(|b| b.len() != self.n) {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: bad.len(),
            });
        }
        if rhs.is_empty() {
            return Ok(Vec::new());
        }
        let mut block = Mat::<f64>::from_fn(self.n, rhs.len(), |i, j| rhs[j][i]);
        self.solve_block(block.as_mut());
        Ok((0..rhs.len())
            .map(|j| block.col(j).iter().copied().collect())
            .collect())
    }
}

/// `solve_multi` as a free function.
pub fn solve_multi(f: &Factorization, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    f.solve_multi(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> SparseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 4.0 + rng.gen::<f64>());
            for _ in 0..3 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v = rng.gen_range(-0.5..0.5);
                    t.push(i, j, v);
                    t.push(j, i, v);
                }
            }
        }
        t.build()
    }

    fn rel_residual(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
        let r = a.matvec(x);
        let num: f64 = r.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn triplets_sum_duplicates() {
        let mut t = Triplets::new(2, 3);
        t.push(1, 2, 1.0);
        t.push(0, 1, 2.0);
        t.push(1, 2, 0.5);
        t.push(1, 0, -1.0);
        let a = t.build();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(1, 2), 1.5);
        assert_eq!(a.get(1, 0), -1.0);
        assert_eq!(a.col_idx(), &[1, 0, 2]);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn identity_solve() {
        let f = factorize(&SparseMatrix::identity(5)).unwrap();
        let b = vec![1.0, -2.0, 3.0, 0.5, 7.0];
        assert_eq!(f.solve(&b).unwrap(), b);
    }

    #[test]
    fn permutation_needs_pivoting() {
        let a = SparseMatrix::from_dense(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let f = factorize(&a).unwrap();
        let x = f.solve(&[1.0, 2.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_spd_residual() {
        let a = random_spd(50, 7);
        let f = factorize(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = f.solve(&b).unwrap();
        assert!(rel_residual(&a, &x, &b) <= 1e-10);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(factorize(&a), Err(Error::Singular { .. })));
        let mut t = Triplets::new(3, 3);
        t.push(0, 0, 1.0);
        t.push(1, 1, 1.0);
        t.push(2, 1, 1.0);
        assert!(matches!(factorize(&t.build()), Err(Error::Singular { .. })));
    }

    #[test]
    fn multi_rhs() {
        let a = random_spd(40, 3);
        let f = factorize(&a).unwrap();
        let b = vec![1.0; 40];
        let single = f.solve(&b).unwrap();
        let batch = f.solve_multi(&[b.clone()]).unwrap();
        assert_eq!(batch[0], single);
        let batch = f.solve_multi(&[b.clone(), b.clone(), b.clone()]).unwrap();
        assert!(batch.iter().all(|x| *x == batch[0]));
        assert!(f.solve_multi(&[vec![1.0; 3]]).is_err());
        assert!(f.solve(&[1.0; 39]).is_err());
    }

    /// Nonsymmetric block with a dense last row and column.
    fn bordered(n: usize, seed: u64) -> SparseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = random_spd(n - 1, seed);
        let mut t = Triplets::new(n, n);
        t.push_block(&inner, 0, 0, 1.0);
        for i in 0..n - 1 {
            let j = rng.gen_range(0..n - 1);
            t.push(i, j, rng.gen_range(-0.3..0.3));
            t.push(i, n - 1, rng.gen_range(0.5..1.0));
            t.push(n - 1, i, rng.gen_range(0.5..1.0));
        }
        t.build()
    }

    #[test]
    fn border_correction_matches_plain_lu() {
        let a = bordered(60, 11);
        let b: Vec<f64> = (0..60).map(|i| (i as f64).sin()).collect();
        let plain = factorize(&a).unwrap().solve(&b).unwrap();
        let sym = SymbolicAnalysis::with_border(&a, &[3, 59]).unwrap();
        assert_eq!(sym.border(), &[3, 59]);
        let f = factorize_with(&sym, &a).unwrap();
        let x = f.solve(&b).unwrap();
        assert!(rel_residual(&a, &x, &b) <= 1e-12);
        for (p, q) in x.iter().zip(&plain) {
            assert!((p - q).abs() <= 1e-10 * (1.0 + q.abs()));
        }
        let multi = f.solve_multi(&[b.clone(), b.iter().map(|v| -v).collect()]).unwrap();
        assert_eq!(multi[0], x);
        assert!(multi[1].iter().zip(&x).all(|(p, q)| (p + q).abs() <= 1e-12 * (1.0 + q.abs())));
    }

    #[test]
    fn border_keeps_singularity_detection() {
        // Last two rows identical: singular although each border row alone is fine.
        let mut t = Triplets::new(4, 4);
        for i in 0..2 {
            t.push(i, i, 2.0);
        }
        for j in 0..4 {
            t.push(2, j, 1.0);
            t.push(3, j, 1.0);
        }
        let a = t.build();
        let sym = SymbolicAnalysis::with_border(&a, &[3]).unwrap();
        assert!(matches!(factorize_with(&sym, &a), Err(Error::Singular { .. })));
        assert!(matches!(
            SymbolicAnalysis::with_border(&a, &[4]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn dirichlet_preserves_symmetry() {
        let a0 = random_spd(20, 11);
        let mut a = a0.clone();
        let mut rhs = vec![1.0; 20];
        apply_dirichlet(&mut a, &mut rhs, &[0, 5, 19], &[2.0, -1.0, 0.5]).unwrap();
        assert_eq!(a.max_asymmetry(), 0.0);
        let x = factorize(&a).unwrap().solve(&rhs).unwrap();
        assert_eq!(x[0], 2.0);
        assert_eq!(x[5], -1.0);
        assert_eq!(x[19], 0.5);
        // Interior rows still satisfy the original equations.
        let r = a0.matvec(&x);
        for i in (0..20).filter(|i| ![0, 5, 19].contains(i)) {
            assert!((r[i] - 1.0).abs() < 1e-12);
        }
        assert!(apply_dirichlet(&mut a, &mut rhs, &[25], &[0.0]).is_err());
    }

    #[test]
    fn coo_dump() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 0.0], vec![2.0, 3.0]]);
        let mut buf = Vec::new();
        a.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("2 2 3"));
        let rows: Vec<(usize, usize, f64)> = lines
            .map(|l| {
                let p: Vec<&str> = l.split_whitespace().collect();
                (p[0].parse().unwrap(), p[1].parse().unwrap(), p[2].parse().unwrap())
            })
            .collect();
        assert_eq!(rows, vec![(0, 0, 1.0), (1, 0, 2.0), (1, 1, 3.0)]);
    }
}
