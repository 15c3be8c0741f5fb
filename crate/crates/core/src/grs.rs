//! Generalized Reed-Solomon generator matrices with a prescribed codeword.
//!
//! Row `i` (0-based) of a GRS generator is `(v_1 ω_1^i, ..., v_K ω_K^i)`. With
//! multipliers chosen as `v_j = c_j / p(ω_j)` for an annihilator `p` of degree
//! `R - 1`, the combination `Σ_i p_i g_i` equals `(v_j p(ω_j))_j`, which is the
//! codeword carrying `c_j` on the side-information support.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldParams, Polynomial};

/// Upper bound on `q^R` for row-space enumeration.
pub const CODEWORD_ENUMERATION_LIMIT: u128 = 10_000_000;

/// Field, length and evaluation points of a GRS code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeParams {
    field: FieldParams,
    omegas: Vec<FieldElement>,
}

impl CodeParams {
    /// Canonical evaluation points `ω_i = i - 1`, i.e. `0, 1, ..., K-1`.
    pub fn canonical(field: FieldParams, k: usize) -> Result<Self> {
        if k == 0 || k > field.modulus() as usize {
            return Err(Error::FieldTooSmall {
                q: field.modulus(),
                reason: "need q >= K >= 1 distinct evaluation points",
            });
        }
        Ok(Self {
            field,
            omegas: (0..k as u64).map(|i| field.elem(i)).collect(),
        })
    }

    pub fn with_omegas(field: FieldParams, omegas: Vec<FieldElement>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::InvalidParams("no evaluation points".into()));
        }
        let mut seen = vec![false; field.modulus() as usize];
        for w in &omegas {
            if w.params() != field {
                return Err(Error::ParamMismatch {
                    left: field.modulus(),
                    right: w.params().modulus(),
                });
            }
            if std::mem::replace(&mut seen[w.value() as usize], true) {
                return Err(Error::InvalidParams(format!(
                    "evaluation point {w} repeated"
                )));
            }
        }
        Ok(Self { field, omegas })
    }

    pub fn k(&self) -> usize {
        self.omegas.len()
    }

    pub fn field(&self) -> FieldParams {
        self.field
    }

    pub fn omegas(&self) -> &[FieldElement] {
        &self.omegas
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.k() {
            return Err(Error::InvalidIndex { index, k: self.k() });
        }
        Ok(())
    }
}

/// `∏_{i ∉ excluded} (x - ω_i)`: vanishes on every evaluation point outside
/// `excluded` and nowhere inside it.
pub fn build_annihilator(params: &CodeParams, excluded: &[usize]) -> Result<Polynomial> {
    let mut keep = vec![true; params.k()];
    for &i in excluded {
        params.check_index(i)?;
        keep[i] = false;
    }
    let roots: Vec<_> = params
        .omegas
        .iter()
        .zip(&keep)
        .filter_map(|(&w, &k)| k.then_some(w))
        .collect();
    Polynomial::from_roots(params.field, &roots)
}

/// An `R x K` matrix over GF(q), stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorMatrix {
    field: FieldParams,
    rows: Vec<Vec<FieldElement>>,
    multipliers: Option<Vec<FieldElement>>,
}

/// `R x K` GRS generator with entry `(i, j) = v_j ω_j^i`.
pub fn build_generator(
    params: &CodeParams,
    multipliers: &[FieldElement],
    num_rows: usize,
) -> Result<GeneratorMatrix> {
    let k = params.k();
    if multipliers.len() != k {
        return Err(Error::Dimension(format!(
            "{} multipliers for K = {k}",
            multipliers.len()
        )));
    }
    if num_rows == 0 || num_rows > k {
        return Err(Error::InvalidParams(format!(
            "row count {num_rows} outside 1..={k}"
        )));
    }
    if let Some(j) = multipliers.iter().position(|v| v.is_zero()) {
        return Err(Error::InvalidMultiplier(j));
    }
    let mut rows = Vec::with_capacity(num_rows);
    let mut current = multipliers.to_vec();
    for _ in 0..num_rows {
        rows.push(current.clone());
        for (c, &w) in current.iter_mut().zip(&params.omegas) {
            *c = *c * w;
        }
    }
    Ok(GeneratorMatrix {
        field: params.field,
        rows,
        multipliers: Some(multipliers.to_vec()),
    })
}

impl GeneratorMatrix {
    /// Wraps arbitrary rows, e.g. a received query or a diagnostic matrix.
    pub fn from_rows(field: FieldParams, rows: Vec<Vec<FieldElement>>) -> Result<Self> {
        let k = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || k == 0 {
            return Err(Error::Dimension("empty matrix".into()));
        }
        for row in &rows {
            if row.len() != k {
                return Err(Error::Dimension("ragged rows".into()));
            }
            if let Some(e) = row.iter().find(|e| e.params() != field) {
                return Err(Error::ParamMismatch {
                    left: field.modulus(),
                    right: e.params().modulus(),
                });
            }
        }
        Ok(Self {
            field,
            rows,
            multipliers: None,
        })
    }

    pub fn field(&self) -> FieldParams {
        self.field
    }

    pub fn rows(&self) -> &[Vec<FieldElement>] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.rows[0].len()
    }

    /// The column multipliers, when the matrix came from [`build_generator`].
    pub fn multipliers(&self) -> Option<&[FieldElement]> {
        self.multipliers.as_deref()
    }

    /// `Σ_i weights[i] · row_i`.
    pub fn combine(&self, weights: &[FieldElement]) -> Result<Vec<FieldElement>> {
        if weights.len() != self.num_rows() {
            return Err(Error::Dimension(format!(
                "{} weights for {} rows",
                weights.len(),
                self.num_rows()
            )));
        }
        let mut out = vec![self.field.zero(); self.num_cols()];
        for (row, &w) in self.rows.iter().zip(weights) {
            for (o, &e) in out.iter_mut().zip(row) {
                *o = *o + w * e;
            }
        }
        Ok(out)
    }

    /// Calls `visit` with every codeword of the row space, including zero.
    pub fn for_each_codeword(&self, mut visit: impl FnMut(&[u16])) -> Result<()> {
        let q = self.field.modulus() as u32;
        let r = self.num_rows();
        let atoms = (q as u128).checked_pow(r as u32).unwrap_or(u128::MAX);
        if atoms > CODEWORD_ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                atoms,
                limit: CODEWORD_ENUMERATION_LIMIT,
            });
        }
        let rows: Vec<Vec<u32>> = self
            .rows
            .iter()
            .map(|row| row.iter().map(|e| e.value() as u32).collect())
            .collect();
        // Odometer over message digits: each digit step is +1 mod q, so the
        // codeword changes by exactly one copy of that digit's row.
        let mut digits = vec![0u32; r];
        let mut word = vec![0u32; self.num_cols()];
        let mut out = vec![0u16; self.num_cols()];
        loop {
            for (o, &w) in out.iter_mut().zip(&word) {
                *o = w as u16;
            }
            visit(&out);
            let mut pos = 0;
            loop {
                if pos == r {
                    return Ok(());
                }
                for (w, &g) in word.iter_mut().zip(&rows[pos]) {
                    *w = (*w + g) % q;
                }
                digits[pos] += 1;
                if digits[pos] < q {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
        }
    }
}

/// Multipliers for the demand-outside-support protocol.
///
/// `free` supplies the multipliers of the indices outside `support`, in
/// ascending index order (the demand index included).
pub fn multipliers_model1(
    params: &CodeParams,
    support: &[usize],
    coeffs: &[FieldElement],
    demand: usize,
    p: &Polynomial,
    free: &[FieldElement],
) -> Result<Vec<FieldElement>> {
    params.check_index(demand)?;
    if support.contains(&demand) {
        return Err(Error::ModelViolation(format!(
            "demand {demand} lies inside the side-information support"
        )));
    }
    let mut v = constrained_multipliers(params, support, coeffs, p, free)?;
    fill_free(&mut v, free)?;
    Ok(v.into_iter().map(|e| e.expect("filled")).collect())
}

/// Multipliers for the demand-inside-support protocol.
///
/// The demand's multiplier is `c_star / p(ω_W)` instead of `c_W / p(ω_W)`;
/// `c_star` must differ from `c_W` and be nonzero.
pub fn multipliers_model2(
    params: &CodeParams,
    support: &[usize],
    coeffs: &[FieldElement],
    demand: usize,
    p: &Polynomial,
    c_star: FieldElement,
    free: &[FieldElement],
) -> Result<Vec<FieldElement>> {
    params.check_index(demand)?;
    if params.field.modulus() < 3 {
        return Err(Error::FieldTooSmall {
            q: params.field.modulus(),
            reason: "demand-inside-support protocol needs q >= 3",
        });
    }
    let Some(wpos) = support.iter().position(|&i| i == demand) else {
        return Err(Error::ModelViolation(format!(
            "demand {demand} lies outside the side-information support"
        )));
    };
    if c_star.is_zero() || Some(&c_star) == coeffs.get(wpos) {
        return Err(Error::InvalidParams(format!(
            "c* = {c_star} must be nonzero and differ from c_W"
        )));
    }
    let mut v = constrained_multipliers(params, support, coeffs, p, free)?;
    v[demand] = Some(c_star.try_div(p.eval(params.omegas[demand])?)?);
    fill_free(&mut v, free)?;
    Ok(v.into_iter().map(|e| e.expect("filled")).collect())
}

fn constrained_multipliers(
    params: &CodeParams,
    support: &[usize],
    coeffs: &[FieldElement],
    p: &Polynomial,
    free: &[FieldElement],
) -> Result<Vec<Option<FieldElement>>> {
    if support.len() != coeffs.len() {
        return Err(Error::Dimension(format!(
            "{} coefficients for a support of {}",
            coeffs.len(),
            support.len()
        )));
    }
    if free.len() + support.len() != params.k() {
        return Err(Error::Dimension(format!(
            "{} free multipliers for {} unconstrained indices",
            free.len(),
            params.k() - support.len().min(params.k())
        )));
    }
    let mut v = vec![None; params.k()];
    for (&i, &c) in support.iter().zip(coeffs) {
        params.check_index(i)?;
        if c.is_zero() {
            return Err(Error::InvalidCoefficient(i));
        }
        let at = p.eval(params.omegas[i])?;
        if at.is_zero() {
            return Err(Error::Invariant("annihilator vanishes on the support"));
        }
        if v[i].replace(c.try_div(at)?).is_some() {
            return Err(Error::InvalidParams(format!(
                "index {i} repeated in support"
            )));
        }
    }
    Ok(v)
}

fn fill_free(v: &mut [Option<FieldElement>], free: &[FieldElement]) -> Result<()> {
    let mut it = free.iter();
    for (j, slot) in v.iter_mut().enumerate() {
        if slot.is_none() {
            let &f = it.next().expect("length checked");
            if f.is_zero() {
                return Err(Error::InvalidMultiplier(j));
            }
            *slot = Some(f);
        }
    }
    Ok(())
}

/// [`multipliers_model1`] with the free multipliers drawn uniformly from GF(q)^×.
pub fn derive_multipliers_model1<R: Rng + ?Sized>(
    params: &CodeParams,
    support: &[usize],
    coeffs: &[FieldElement],
    demand: usize,
    p: &Polynomial,
    rng: &mut R,
) -> Result<Vec<FieldElement>> {
    let free: Vec<_> = (0..params.k().saturating_sub(support.len()))
        .map(|_| params.field.random_nonzero(rng))
        .collect();
    multipliers_model1(params, support, coeffs, demand, p, &free)
}

/// [`multipliers_model2`] with `c_star` uniform over GF(q)^× ∖ {c_W} and the
/// free multipliers uniform over GF(q)^×. Returns `(multipliers, c_star)`.
pub fn derive_multipliers_model2<R: Rng + ?Sized>(
    params: &CodeParams,
    support: &[usize],
    coeffs: &[FieldElement],
    demand: usize,
    p: &Polynomial,
    rng: &mut R,
) -> Result<(Vec<FieldElement>, FieldElement)> {
    let q = params.field.modulus();
    if q < 3 {
        return Err(Error::FieldTooSmall {
            q,
            reason: "demand-inside-support protocol needs q >= 3",
        });
    }
    let Some(wpos) = support.iter().position(|&i| i == demand) else {
        return Err(Error::ModelViolation(format!(
            "demand {demand} lies outside the side-information support"
        )));
    };
    let c_w = coeffs
        .get(wpos)
        .ok_or_else(|| Error::Dimension("missing coefficient for the demand".into()))?;
    // uniform over the q - 2 admissible values, skipping c_W
    let mut c = rng.random_range(1..q - 1);
    if c >= c_w.value() {
        c += 1;
    }
    let c_star = params.field.elem(c as u64);
    let free: Vec<_> = (0..params.k().saturating_sub(support.len()))
        .map(|_| params.field.random_nonzero(rng))
        .collect();
    let v = multipliers_model2(params, support, coeffs, demand, p, c_star, &free)?;
    Ok((v, c_star))
}

/// True iff every `R x R` column submatrix is nonsingular.
pub fn is_mds(g: &GeneratorMatrix) -> bool {
    let r = g.num_rows();
    let k = g.num_cols();
    if r > k {
        return false;
    }
    let mut cols: Vec<usize> = (0..r).collect();
    loop {
        let sub: Vec<Vec<FieldElement>> = g
            .rows
            .iter()
            .map(|row| cols.iter().map(|&c| row[c]).collect())
            .collect();
        if determinant(sub).is_zero() {
            return false;
        }
        if !next_combination(&mut cols, k) {
            return true;
        }
    }
}

/// Determinant by Gaussian elimination over GF(q).
pub fn determinant(mut m: Vec<Vec<FieldElement>>) -> FieldElement {
    let n = m.len();
    let field = m[0][0].params();
    let mut det = field.one();
    for col in 0..n {
        let Some(pivot) = (col..n).find(|&r| !m[r][col].is_zero()) else {
            return field.zero();
        };
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        let pv = m[col][col];
        det = det * pv;
        let inv = pv.inv();
        let (top, rest) = m.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for row in rest {
            let factor = row[col] * inv;
            if factor.is_zero() {
                continue;
            }
            for (x, &y) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *x = *x - factor * y;
            }
        }
    }
    det
}

/// Advances a sorted `k`-subset of `0..n` to the next one in lexicographic
/// order. Returns false after the last subset.
pub(crate) fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
        return false;
    };
    idx[i] += 1;
    for j in i + 1..k {
        idx[j] = idx[j - 1] + 1;
    }
    true
}

/// Minimum nonzero weight of a row space and the number of codewords of that
/// weight on each support.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightCensus {
    pub min_weight: usize,
    /// Support (sorted 0-based indices) to codeword count.
    pub counts: BTreeMap<Vec<usize>, u64>,
}

impl WeightCensus {
    /// The common count when every support carries the same number of
    /// codewords.
    pub fn uniform_count(&self) -> Option<u64> {
        let mut it = self.counts.values();
        let first = *it.next()?;
        it.all(|&c| c == first).then_some(first)
    }
}

/// Exhaustive census of minimum-weight codewords per support.
pub fn min_weight_support_census(g: &GeneratorMatrix) -> Result<WeightCensus> {
    let mut min_weight = usize::MAX;
    let mut counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    g.for_each_codeword(|word| {
        let weight = word.iter().filter(|&&x| x != 0).count();
        if weight == 0 || weight > min_weight {
            return;
        }
        if weight < min_weight {
            min_weight = weight;
            counts.clear();
        }
        let support: Vec<usize> = (0..word.len()).filter(|&j| word[j] != 0).collect();
        *counts.entry(support).or_default() += 1;
    })?;
    if counts.is_empty() {
        return Err(Error::InvalidParams("row space is trivial".into()));
    }
    Ok(WeightCensus { min_weight, counts })
}
