//! Exhaustive, exact audits of the retrieval protocol at small parameters.
//!
//! Every atom of client randomness is enumerated rather than sampled, and all
//! probabilities are kept as exact rationals, so a passing privacy audit means
//! the server's posterior over `(W, S)` equals its prior identically.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::FieldElement;
use crate::grs::{next_combination, GeneratorMatrix};
use crate::protocol::{
    build_query_with, run_local, Database, Model, ProtocolParams, Query, QueryRandomness,
    SideInformation,
};

/// Upper bound on the number of weighted atoms in a privacy audit.
pub const POSTERIOR_ENUMERATION_LIMIT: u128 = 100_000_000;

/// Upper bound on `q^K` for the answer census.
pub const DATABASE_ENUMERATION_LIMIT: u128 = 10_000_000;

/// Exact probability.
pub type Prob = Ratio<i128>;

/// A demand together with a side-information support, `(W, S)`.
pub type DemandSupport = (usize, Vec<usize>);

/// Transmitted query rows flattened row-major. Queries collide only when
/// byte-identical.
pub type QueryKey = Vec<u16>;

/// Joint weights of every (query, W, S) reachable by the protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditReport {
    pub q: u16,
    pub k: usize,
    pub side_info_size: usize,
    pub model: Model,
    /// Query to `(W, S)` to number of atoms producing it.
    pub joint: BTreeMap<QueryKey, BTreeMap<DemandSupport, u64>>,
    /// Prior `P(W, S | I)`.
    pub prior: BTreeMap<DemandSupport, Prob>,
    /// Atoms enumerated for each `(W, S)`: coefficient sequences times
    /// client randomness.
    pub atoms_per_pair: u64,
    pub worst_deviation: Prob,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

impl AuditReport {
    pub fn total_atoms(&self) -> u64 {
        self.joint.values().flat_map(|m| m.values()).sum()
    }
}

/// Binomial coefficient.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// The prior `P(W = w, S = s | I = θ)`: `(K-M)^{-1} C(K,M)^{-1}` for model I
/// and `M^{-1} C(K,M)^{-1}` for model II, on every admissible pair.
pub fn prior(k: usize, side_info_size: usize, model: Model) -> BTreeMap<DemandSupport, Prob> {
    let n_sets = binomial(k, side_info_size) as i128;
    let per_set = match model {
        Model::I => (k - side_info_size) as i128,
        Model::II => side_info_size as i128,
    };
    let p = Prob::new(1, n_sets * per_set);
    admissible_pairs(k, side_info_size, model)
        .into_iter()
        .map(|pair| (pair, p))
        .collect()
}

/// Every `(W, S)` with `|S| = M` admissible under the model, in
/// lexicographic order of `S` then `W`.
pub fn admissible_pairs(k: usize, side_info_size: usize, model: Model) -> Vec<DemandSupport> {
    let mut out = Vec::new();
    if side_info_size > k {
        return out;
    }
    let mut s: Vec<usize> = (0..side_info_size).collect();
    loop {
        for w in 0..k {
            if model.admits(w, &s) {
                out.push((w, s.clone()));
            }
        }
        if !next_combination(&mut s, k) {
            return out;
        }
    }
}

/// Number of atoms [`enumerate_posterior`] would visit.
pub fn posterior_atom_count(params: &ProtocolParams) -> u128 {
    let q = params.field().modulus() as u128;
    let pairs = admissible_pairs(params.k(), params.side_info_size(), params.model()).len() as u128;
    let c = (q - 1).pow(params.side_info_size() as u32);
    let free = (q - 1).pow(params.num_free_multipliers() as u32);
    let c_star = match params.model() {
        Model::I => 1,
        Model::II => q - 2,
    };
    pairs * c * free * c_star * factorial(params.num_rows())
}

/// Full enumeration of the protocol's query distribution with exact
/// posterior check.
pub fn enumerate_posterior(params: &ProtocolParams) -> Result<AuditReport> {
    enumerate_posterior_with(params, |si, rnd| {
        let (query, _) = build_query_with(si, params, rnd)?;
        Ok(query_key(&query))
    })
}

/// Enumeration with a caller-supplied query builder, so that variant
/// protocols can be put through the same audit.
pub fn enumerate_posterior_with<F>(params: &ProtocolParams, mut build: F) -> Result<AuditReport>
where
    F: FnMut(&SideInformation, &QueryRandomness) -> Result<QueryKey>,
{
    let atoms = posterior_atom_count(params);
    if atoms > POSTERIOR_ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            atoms,
            limit: POSTERIOR_ENUMERATION_LIMIT,
        });
    }
    let field = params.field();
    let m = params.side_info_size();
    let pairs = admissible_pairs(params.k(), m, params.model());
    let nonzero: Vec<FieldElement> = field.nonzero_elements().collect();
    let mut joint: BTreeMap<QueryKey, BTreeMap<DemandSupport, u64>> = BTreeMap::new();
    let mut per_pair: BTreeMap<DemandSupport, u64> = BTreeMap::new();

    for (w, s) in &pairs {
        for coeffs in tuples(&nonzero, m) {
            let si = SideInformation {
                support: s.clone(),
                coeffs: coeffs.clone(),
                value: vec![field.zero(); params.message_len()],
                demand: *w,
            };
            let c_stars: Vec<Option<FieldElement>> = match params.model() {
                Model::I => vec![None],
                Model::II => {
                    let c_w = coeffs[s.iter().position(|i| i == w).expect("W in S")];
                    nonzero
                        .iter()
                        .filter(|&&c| c != c_w)
                        .map(|&c| Some(c))
                        .collect()
                }
            };
            for free in tuples(&nonzero, params.num_free_multipliers()) {
                for &c_star in &c_stars {
                    for sigma in permutations(params.num_rows()) {
                        let rnd = QueryRandomness {
                            free_multipliers: free.clone(),
                            c_star,
                            sigma,
                        };
                        let key = build(&si, &rnd)?;
                        *joint
                            .entry(key)
                            .or_default()
                            .entry((*w, s.clone()))
                            .or_default() += 1;
                        *per_pair.entry((*w, s.clone())).or_default() += 1;
                    }
                }
            }
        }
    }

    let atoms_per_pair = per_pair.values().next().copied().unwrap_or(0);
    if per_pair.values().any(|&n| n != atoms_per_pair) || per_pair.len() != pairs.len() {
        return Err(Error::Invariant("randomness space differs across (W, S)"));
    }
    let mut report = AuditReport {
        q: field.modulus(),
        k: params.k(),
        side_info_size: m,
        model: params.model(),
        joint,
        prior: prior(params.k(), m, params.model()),
        atoms_per_pair,
        worst_deviation: Prob::from_integer(0),
        verdict: Verdict::Pass,
    };
    let check = check_ws_privacy(&report)?;
    report.worst_deviation = check.worst_deviation;
    report.verdict = check.verdict;
    Ok(report)
}

pub fn query_key(query: &Query) -> QueryKey {
    query.rows.iter().flatten().map(|e| e.value()).collect()
}

/// Outcome of [`check_ws_privacy`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivacyCheck {
    pub verdict: Verdict,
    pub worst_deviation: Prob,
    /// The query and `(W', S')` attaining the worst deviation, when nonzero.
    pub offending: Option<(QueryKey, DemandSupport)>,
    pub queries: usize,
    pub summary: String,
}

/// Recomputes every posterior from the joint weights and compares it with
/// the prior.
///
/// With `n(Q, W, S)` atoms out of `N` per pair, the posterior is
/// `π(W,S) n(Q,W,S) / Σ π(W',S') n(Q,W',S')`.
pub fn check_ws_privacy(report: &AuditReport) -> Result<PrivacyCheck> {
    if report.joint.is_empty() || report.prior.is_empty() {
        return Err(Error::MalformedReport("no atoms"));
    }
    let mut conserved: BTreeMap<&DemandSupport, u64> = BTreeMap::new();
    for counts in report.joint.values() {
        for (pair, &n) in counts {
            if !report.prior.contains_key(pair) {
                return Err(Error::MalformedReport(
                    "weight on a pair outside the prior's support",
                ));
            }
            *conserved.entry(pair).or_default() += n;
        }
    }
    let prior_total: Prob = report.prior.values().sum();
    if prior_total != Prob::from_integer(1) {
        return Err(Error::MalformedReport("prior does not sum to one"));
    }

    let mut worst = Prob::from_integer(0);
    let mut offending = None;
    for (key, counts) in &report.joint {
        let evidence: Prob = counts
            .iter()
            .map(|(pair, &n)| report.prior[pair] * Prob::from_integer(n as i128))
            .sum();
        if evidence == Prob::from_integer(0) {
            continue;
        }
        for (pair, &pi) in &report.prior {
            let n = counts.get(pair).copied().unwrap_or(0);
            let posterior = pi * Prob::from_integer(n as i128) / evidence;
            let dev = if posterior > pi {
                posterior - pi
            } else {
                pi - posterior
            };
            if dev > worst {
                worst = dev;
                offending = Some((key.clone(), pair.clone()));
            }
        }
    }
    // Unequal per-pair totals also break the weighting assumed above.
    let uneven = conserved.values().any(|&n| n != report.atoms_per_pair)
        || conserved.len() != report.prior.len();
    let verdict = if worst == Prob::from_integer(0) && !uneven {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let mut summary = format!(
        "model {} K={} M={} q={}: {} distinct queries, {} atoms, worst deviation {}",
        report.model,
        report.k,
        report.side_info_size,
        report.q,
        report.joint.len(),
        report.total_atoms(),
        worst
    );
    if uneven {
        summary.push_str("; per-pair weight not conserved");
    }
    if let Some((key, (w, s))) = &offending {
        summary.push_str(&format!("; offending query {key:?} for W={w} S={s:?}"));
    }
    summary.push_str(&format!(": {verdict}"));
    Ok(PrivacyCheck {
        verdict,
        worst_deviation: worst,
        offending,
        queries: report.joint.len(),
        summary,
    })
}

/// A codeword and side-information coefficients showing that `X_{W*}` is
/// recoverable from the answers and `Y^{[S*, C*]}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lemma1Witness {
    pub codeword: Vec<u16>,
    /// `C*`, positionally matching the sorted `S*`.
    pub coeffs: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lemma1Outcome {
    pub verdict: Verdict,
    pub witnesses: BTreeMap<DemandSupport, Option<Lemma1Witness>>,
}

impl Lemma1Outcome {
    pub fn missing(&self) -> impl Iterator<Item = &DemandSupport> {
        self.witnesses
            .iter()
            .filter(|(_, w)| w.is_none())
            .map(|(pair, _)| pair)
    }
}

/// For every `(W*, S*)` with indicator `theta`, searches the row space of `g`
/// for a codeword that, combined with some admissible side information on
/// `S*`, isolates `X_{W*}`.
///
/// Outside-support demands need `u_{W*} ≠ 0`, `u_j ≠ 0` on `S*` (taken as
/// `C*`) and zero elsewhere. Inside-support demands need `u` zero outside
/// `S*` and nonzero on `S* ∖ {W*}`; `c*_{W*}` is then any nonzero value
/// other than `u_{W*}`.
pub fn audit_lemma1(
    g: &GeneratorMatrix,
    theta: Model,
    params: &ProtocolParams,
) -> Result<Lemma1Outcome> {
    let k = params.k();
    if g.num_cols() != k {
        return Err(Error::Dimension(format!(
            "matrix has {} columns for K = {k}",
            g.num_cols()
        )));
    }
    let q = g.field().modulus();
    let pairs = admissible_pairs(k, params.side_info_size(), theta);
    let mut witnesses: BTreeMap<DemandSupport, Option<Lemma1Witness>> =
        pairs.iter().cloned().map(|p| (p, None)).collect();
    let mut open = pairs.len();
    let masks: Vec<(usize, u64)> = pairs
        .iter()
        .map(|(w, s)| (*w, s.iter().fold(0u64, |acc, &j| acc | 1 << j)))
        .collect();
    g.for_each_codeword(|u| {
        if open == 0 {
            return;
        }
        let support = u
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &x)| if x != 0 { acc | 1 << j } else { acc });
        for ((w, s_mask), (pair, slot)) in masks.iter().zip(witnesses.iter_mut()) {
            if slot.is_some() {
                continue;
            }
            let found = match theta {
                Model::I => {
                    // support must be exactly S* ∪ {W*}
                    support == s_mask | 1 << w
                }
                Model::II => {
                    let others = s_mask & !(1 << w);
                    support & !s_mask == 0 && support & others == others
                }
            };
            if !found {
                continue;
            }
            let coeffs = pair
                .1
                .iter()
                .map(|&j| {
                    if j == *w {
                        // smallest nonzero residue differing from u_W
                        if u[j] == 1 {
                            2
                        } else {
                            1
                        }
                    } else {
                        u[j]
                    }
                })
                .collect();
            if theta == Model::II && q < 3 && u[*w] != 0 {
                continue;
            }
            *slot = Some(Lemma1Witness {
                codeword: u.to_vec(),
                coeffs,
            });
            open -= 1;
        }
    })?;
    let verdict = if open == 0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(Lemma1Outcome { verdict, witnesses })
}

/// Histogram of answers over every database with `m = 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerCensus {
    pub q: u16,
    pub k: usize,
    pub rows: usize,
    pub histogram: BTreeMap<Vec<u16>, u64>,
}

impl AnswerCensus {
    /// Every one of the `q^R` answer tuples occurs exactly `q^(K-R)` times.
    pub fn is_uniform(&self) -> bool {
        let q = self.q as u64;
        let expected_count = q.pow((self.k - self.rows) as u32);
        self.histogram.len() as u64 == q.pow(self.rows as u32)
            && self.histogram.values().all(|&c| c == expected_count)
    }
}

pub fn answer_uniformity_census(query: &Query, params: &ProtocolParams) -> Result<AnswerCensus> {
    let k = params.k();
    let q = params.field().modulus() as u32;
    if query.rows.is_empty() || query.rows.iter().any(|r| r.len() != k) {
        return Err(Error::Dimension("query rows must have length K".into()));
    }
    if query.rows.iter().any(|r| r.iter().all(|e| e.is_zero())) {
        return Err(Error::InvalidParams(
            "query contains an all-zero row".into(),
        ));
    }
    let atoms = (q as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if atoms > DATABASE_ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            atoms,
            limit: DATABASE_ENUMERATION_LIMIT,
        });
    }
    let rows: Vec<Vec<u32>> = query
        .rows
        .iter()
        .map(|r| r.iter().map(|e| e.value() as u32).collect())
        .collect();
    let mut histogram: BTreeMap<Vec<u16>, u64> = BTreeMap::new();
    let mut db = vec![0u32; k];
    for _ in 0..atoms {
        let answer: Vec<u16> = rows
            .iter()
            .map(|r| (r.iter().zip(&db).map(|(a, x)| a * x).sum::<u32>() % q) as u16)
            .collect();
        *histogram.entry(answer).or_default() += 1;
        for d in db.iter_mut() {
            *d += 1;
            if *d < q {
                break;
            }
            *d = 0;
        }
    }
    Ok(AnswerCensus {
        q: q as u16,
        k,
        rows: rows.len(),
        histogram,
    })
}

/// `m` divided by the mean number of downloaded symbols over `trials` runs,
/// each on a fresh uniform database.
pub fn measure_rate<R: Rng + ?Sized>(
    params: &ProtocolParams,
    trials: usize,
    rng: &mut R,
) -> Result<Ratio<u64>> {
    if trials == 0 {
        return Err(Error::InvalidParams("at least one trial required".into()));
    }
    let mut downloaded = 0u64;
    for _ in 0..trials {
        let db = Database::random(params.field(), params.k(), params.message_len(), rng)?;
        let run = run_local(params, &db, rng)?;
        if run.recovered != db.messages()[run.side_info.demand] {
            return Err(Error::Invariant("retrieval returned the wrong message"));
        }
        downloaded += run.downloaded_symbols as u64;
    }
    Ok(exact_rate(
        params.message_len() * trials,
        downloaded as usize,
    ))
}

/// `message_symbols / downloaded_symbols` in lowest terms.
pub fn exact_rate(message_symbols: usize, downloaded_symbols: usize) -> Ratio<u64> {
    Ratio::new(message_symbols as u64, downloaded_symbols as u64)
}

/// All `len`-tuples over `alphabet`, first position varying fastest.
fn tuples<T: Copy>(alphabet: &[T], len: usize) -> Vec<Vec<T>> {
    let mut out = vec![Vec::with_capacity(len)];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                alphabet.iter().map(move |&a| {
                    let mut t = prefix.clone();
                    t.push(a);
                    t
                })
            })
            .collect();
    }
    out
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..n).collect();
    let mut out = vec![p.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).expect("exists");
        p.swap(i - 1, j);
        p[i..].reverse();
        out.push(p.clone());
    }
}
