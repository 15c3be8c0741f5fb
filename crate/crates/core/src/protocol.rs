//! Client and server roles of the retrieval protocol.
//!
//! The client holds `Y = Σ_{i∈S} c_i X_i` and wants `X_W`. Under
//! [`Model::I`] the demand lies outside `S` and the query has `K - M` rows;
//! under [`Model::II`] it lies inside `S` and the query has `K - M + 1` rows.
//! Indices are 0-based throughout the library.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldParams, Polynomial};
use crate::grs::{
    build_annihilator, build_generator, multipliers_model1, multipliers_model2, CodeParams,
    GeneratorMatrix,
};

/// Which side of the side-information support the demand lies on. The
/// server knows this bit a priori.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Model {
    /// Demand outside the support (`W ∉ S`).
    I,
    /// Demand inside the support (`W ∈ S`).
    II,
}

impl Model {
    /// The public indicator bit: 0 for model I, 1 for model II.
    pub fn indicator(self) -> u8 {
        match self {
            Model::I => 0,
            Model::II => 1,
        }
    }

    pub fn from_indicator(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Model::I),
            1 => Some(Model::II),
            _ => None,
        }
    }

    /// Whether `(demand, support)` is admissible under this model.
    pub fn admits(self, demand: usize, support: &[usize]) -> bool {
        support.contains(&demand) == (self == Model::II)
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Model::I => f.write_str("I"),
            Model::II => f.write_str("II"),
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "i" | "1" => Ok(Model::I),
            "II" | "ii" | "2" => Ok(Model::II),
            other => Err(Error::InvalidParams(format!("unknown model {other:?}"))),
        }
    }
}

/// Public protocol configuration shared by client and server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolParams {
    side_info_size: usize,
    message_len: usize,
    model: Model,
    code: CodeParams,
}

impl ProtocolParams {
    pub fn new(
        code: CodeParams,
        side_info_size: usize,
        message_len: usize,
        model: Model,
    ) -> Result<Self> {
        let k = code.k();
        let m = side_info_size;
        match model {
            Model::I if m >= k => {
                return Err(Error::InvalidParams(format!(
                    "model I needs 0 <= M <= K-1, got M = {m}, K = {k}"
                )))
            }
            Model::II if m < 2 || m > k => {
                return Err(Error::InvalidParams(format!(
                    "model II needs 2 <= M <= K, got M = {m}, K = {k}"
                )))
            }
            _ => {}
        }
        if model == Model::II && code.field().modulus() < 3 {
            return Err(Error::FieldTooSmall {
                q: code.field().modulus(),
                reason: "demand-inside-support protocol needs q >= 3",
            });
        }
        if message_len == 0 || message_len > u16::MAX as usize {
            return Err(Error::InvalidParams(format!(
                "message length {message_len} outside 1..=65535"
            )));
        }
        Ok(Self {
            side_info_size,
            message_len,
            model,
            code,
        })
    }

    /// Canonical evaluation points over GF(q).
    pub fn canonical(
        q: u32,
        k: usize,
        side_info_size: usize,
        message_len: usize,
        model: Model,
    ) -> Result<Self> {
        let code = CodeParams::canonical(FieldParams::new(q)?, k)?;
        Self::new(code, side_info_size, message_len, model)
    }

    pub fn k(&self) -> usize {
        self.code.k()
    }

    /// `M`, the number of messages combined into the side information.
    pub fn side_info_size(&self) -> usize {
        self.side_info_size
    }

    /// `m`, the number of base-field symbols per message.
    pub fn message_len(&self) -> usize {
        self.message_len
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn code(&self) -> &CodeParams {
        &self.code
    }

    pub fn field(&self) -> FieldParams {
        self.code.field()
    }

    /// Number of query rows (and answer values).
    pub fn num_rows(&self) -> usize {
        match self.model {
            Model::I => self.k() - self.side_info_size,
            Model::II => self.k() - self.side_info_size + 1,
        }
    }

    /// Count of multipliers not pinned by the side information.
    pub fn num_free_multipliers(&self) -> usize {
        self.k() - self.side_info_size
    }

    /// Base-field symbols downloaded per retrieval.
    pub fn download_symbols(&self) -> usize {
        self.num_rows() * self.message_len
    }

    /// The server-side view of a database must match `K` and `m`.
    pub fn check_database(&self, db: &Database) -> Result<()> {
        if db.field() != self.field() || db.k() != self.k() || db.message_len() != self.message_len
        {
            return Err(Error::Dimension(format!(
                "database GF({})^({}x{}) does not match parameters GF({})^({}x{})",
                db.field().modulus(),
                db.k(),
                db.message_len(),
                self.field().modulus(),
                self.k(),
                self.message_len
            )));
        }
        Ok(())
    }
}

/// `K` messages of `m` symbols each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Database {
    field: FieldParams,
    messages: Vec<Vec<FieldElement>>,
}

impl Database {
    pub fn new(field: FieldParams, messages: Vec<Vec<FieldElement>>) -> Result<Self> {
        let m = messages.first().map(Vec::len).unwrap_or(0);
        if messages.is_empty() || m == 0 {
            return Err(Error::Dimension(
                "database must hold at least one nonempty message".into(),
            ));
        }
        for msg in &messages {
            if msg.len() != m {
                return Err(Error::Dimension("messages differ in length".into()));
            }
            if let Some(e) = msg.iter().find(|e| e.params() != field) {
                return Err(Error::ParamMismatch {
                    left: field.modulus(),
                    right: e.params().modulus(),
                });
            }
        }
        Ok(Self { field, messages })
    }

    /// i.i.d. uniform symbols.
    pub fn random<R: Rng + ?Sized>(
        field: FieldParams,
        k: usize,
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let messages = (0..k)
            .map(|_| (0..m).map(|_| field.random(rng)).collect())
            .collect();
        Self::new(field, messages)
    }

    pub fn field(&self) -> FieldParams {
        self.field
    }

    pub fn k(&self) -> usize {
        self.messages.len()
    }

    pub fn message_len(&self) -> usize {
        self.messages[0].len()
    }

    pub fn messages(&self) -> &[Vec<FieldElement>] {
        &self.messages
    }

    pub fn message(&self, index: usize) -> Result<&[FieldElement]> {
        self.messages
            .get(index)
            .map(Vec::as_slice)
            .ok_or(Error::InvalidIndex { index, k: self.k() })
    }
}

/// The user's private side information and demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SideInformation {
    /// Sorted, distinct 0-based indices `S`.
    pub support: Vec<usize>,
    /// `c_i` for each index of `support`, positionally; all nonzero.
    pub coeffs: Vec<FieldElement>,
    /// `Y = Σ c_i X_i`.
    pub value: Vec<FieldElement>,
    /// The demand index `W`.
    pub demand: usize,
}

impl SideInformation {
    /// Computes `Y` from the database.
    pub fn from_database(
        db: &Database,
        support: Vec<usize>,
        coeffs: Vec<FieldElement>,
        demand: usize,
    ) -> Result<Self> {
        let value = compute_side_info_value(&support, &coeffs, db)?;
        Ok(Self {
            support,
            coeffs,
            value,
            demand,
        })
    }

    /// Checks the structural invariants against the public parameters.
    pub fn validate(&self, params: &ProtocolParams) -> Result<()> {
        let k = params.k();
        if self.support.len() != params.side_info_size() {
            return Err(Error::InvalidParams(format!(
                "side information covers {} messages, expected M = {}",
                self.support.len(),
                params.side_info_size()
            )));
        }
        if self.coeffs.len() != self.support.len() {
            return Err(Error::Dimension(
                "coefficient count differs from support size".into(),
            ));
        }
        if let Some(&index) = self.support.iter().find(|&&i| i >= k) {
            return Err(Error::InvalidIndex { index, k });
        }
        if self.demand >= k {
            return Err(Error::InvalidIndex {
                index: self.demand,
                k,
            });
        }
        if self.support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams(
                "support must be sorted and distinct".into(),
            ));
        }
        for (&i, c) in self.support.iter().zip(&self.coeffs) {
            if c.is_zero() {
                return Err(Error::InvalidCoefficient(i));
            }
            if c.params() != params.field() {
                return Err(Error::ParamMismatch {
                    left: params.field().modulus(),
                    right: c.params().modulus(),
                });
            }
        }
        if self.value.len() != params.message_len() {
            return Err(Error::Dimension(
                "side-information value has wrong length".into(),
            ));
        }
        if !params.model().admits(self.demand, &self.support) {
            return Err(Error::ModelViolation(match params.model() {
                Model::I => format!(
                    "model I requires demand index {} outside the support",
                    self.demand
                ),
                Model::II => format!(
                    "model II requires demand index {} inside the support",
                    self.demand
                ),
            }));
        }
        Ok(())
    }
}

/// `Y = Σ_{i∈S} c_i X_i`, coordinatewise.
pub fn compute_side_info_value(
    support: &[usize],
    coeffs: &[FieldElement],
    db: &Database,
) -> Result<Vec<FieldElement>> {
    if support.len() != coeffs.len() {
        return Err(Error::Dimension(
            "coefficient count differs from support size".into(),
        ));
    }
    let mut y = vec![db.field().zero(); db.message_len()];
    for (&i, &c) in support.iter().zip(coeffs) {
        let x = db.message(i)?;
        if c.params() != db.field() {
            return Err(Error::ParamMismatch {
                left: db.field().modulus(),
                right: c.params().modulus(),
            });
        }
        for (acc, &xi) in y.iter_mut().zip(x) {
            *acc = *acc + c * xi;
        }
    }
    Ok(y)
}

/// Samples `(S, C, W)` from the model's distribution: `S` uniform over
/// `M`-subsets, `C` uniform over `(GF(q)^×)^M`, and `W` uniform over the
/// complement of `S` (model I) or over `S` (model II).
pub fn sample_instance<R: Rng + ?Sized>(
    params: &ProtocolParams,
    db: &Database,
    rng: &mut R,
) -> Result<SideInformation> {
    params.check_database(db)?;
    let k = params.k();
    let mut support = rand::seq::index::sample(rng, k, params.side_info_size()).into_vec();
    support.sort_unstable();
    let coeffs: Vec<_> = support
        .iter()
        .map(|_| params.field().random_nonzero(rng))
        .collect();
    let demand = match params.model() {
        Model::I => {
            let outside: Vec<usize> = (0..k).filter(|i| !support.contains(i)).collect();
            outside[rng.random_range(0..outside.len())]
        }
        Model::II => support[rng.random_range(0..support.len())],
    };
    SideInformation::from_database(db, support, coeffs, demand)
}

/// Samples `S` and `C` conditioned on a fixed demand `W`.
pub fn sample_side_info_for_demand<R: Rng + ?Sized>(
    params: &ProtocolParams,
    db: &Database,
    demand: usize,
    rng: &mut R,
) -> Result<SideInformation> {
    params.check_database(db)?;
    let k = params.k();
    if demand >= k {
        return Err(Error::InvalidIndex { index: demand, k });
    }
    let others: Vec<usize> = (0..k).filter(|&i| i != demand).collect();
    let take = match params.model() {
        Model::I => params.side_info_size(),
        Model::II => params.side_info_size() - 1,
    };
    let mut support: Vec<usize> = rand::seq::index::sample(rng, others.len(), take)
        .into_iter()
        .map(|i| others[i])
        .collect();
    if params.model() == Model::II {
        support.push(demand);
    }
    support.sort_unstable();
    let coeffs = support
        .iter()
        .map(|_| params.field().random_nonzero(rng))
        .collect();
    SideInformation::from_database(db, support, coeffs, demand)
}

/// The rows the server receives, in transmission order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    pub model: Model,
    pub rows: Vec<Vec<FieldElement>>,
}

impl Query {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.rows.first().map(Vec::len).unwrap_or(0)
    }
}

/// Server response; `values[i]` answers `rows[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub values: Vec<Vec<FieldElement>>,
}

/// Every random choice the client makes for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRandomness {
    /// Multipliers for the indices outside `S`, ascending index order.
    pub free_multipliers: Vec<FieldElement>,
    /// Model II's replacement coefficient for the demand.
    pub c_star: Option<FieldElement>,
    /// `sigma[i]` is the transmitted position of generator row `i`.
    pub sigma: Vec<usize>,
}

impl QueryRandomness {
    pub fn sample<R: Rng + ?Sized>(
        params: &ProtocolParams,
        si: &SideInformation,
        rng: &mut R,
    ) -> Result<Self> {
        let field = params.field();
        let q = field.modulus();
        let c_star = match params.model() {
            Model::I => None,
            Model::II => {
                let pos = si
                    .support
                    .iter()
                    .position(|&i| i == si.demand)
                    .ok_or_else(|| Error::ModelViolation("model II requires W inside S".into()))?;
                let c_w = si.coeffs[pos].value();
                let mut c = rng.random_range(1..q - 1);
                if c >= c_w {
                    c += 1;
                }
                Some(field.elem(c as u64))
            }
        };
        let free_multipliers = (0..params.num_free_multipliers())
            .map(|_| field.random_nonzero(rng))
            .collect();
        let mut sigma: Vec<usize> = (0..params.num_rows()).collect();
        sigma.shuffle(rng);
        Ok(Self {
            free_multipliers,
            c_star,
            sigma,
        })
    }
}

/// Secrets the client keeps between query and recovery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientState {
    pub sigma: Vec<usize>,
    pub annihilator: Polynomial,
    pub side_info: SideInformation,
    pub c_star: Option<FieldElement>,
    /// Coefficient of `X_W` in `combination - Y`: `v_W p(ω_W)` for model I,
    /// `c_star - c_W` for model II.
    pub recovery_coeff: FieldElement,
}

/// The un-permuted generator matrix for given side information and
/// randomness, plus the annihilator and the model-II `c_star`.
pub fn build_generator_for(
    si: &SideInformation,
    params: &ProtocolParams,
    randomness: &QueryRandomness,
) -> Result<(GeneratorMatrix, Polynomial)> {
    si.validate(params)?;
    let code = params.code();
    let (p, v) = match params.model() {
        Model::I => {
            let mut excluded = si.support.clone();
            excluded.push(si.demand);
            let p = build_annihilator(code, &excluded)?;
            let v = multipliers_model1(
                code,
                &si.support,
                &si.coeffs,
                si.demand,
                &p,
                &randomness.free_multipliers,
            )?;
            (p, v)
        }
        Model::II => {
            let p = build_annihilator(code, &si.support)?;
            let c_star = randomness
                .c_star
                .ok_or_else(|| Error::InvalidParams("model II needs c*".into()))?;
            let v = multipliers_model2(
                code,
                &si.support,
                &si.coeffs,
                si.demand,
                &p,
                c_star,
                &randomness.free_multipliers,
            )?;
            (p, v)
        }
    };
    let g = build_generator(code, &v, params.num_rows())?;
    Ok((g, p))
}

/// Deterministic query construction from explicit randomness.
pub fn build_query_with(
    si: &SideInformation,
    params: &ProtocolParams,
    randomness: &QueryRandomness,
) -> Result<(Query, ClientState)> {
    let (g, p) = build_generator_for(si, params, randomness)?;
    let r = params.num_rows();
    check_permutation(&randomness.sigma, r)?;
    let mut rows = vec![Vec::new(); r];
    for (row, &pos) in g.rows().iter().zip(&randomness.sigma) {
        rows[pos] = row.clone();
    }
    let recovery_coeff = match (params.model(), randomness.c_star) {
        (Model::I, _) => {
            let v = g.multipliers().expect("built from multipliers");
            v[si.demand] * p.eval(params.code().omegas()[si.demand])?
        }
        (Model::II, Some(c_star)) => {
            let pos = si
                .support
                .iter()
                .position(|&i| i == si.demand)
                .expect("validated");
            c_star - si.coeffs[pos]
        }
        (Model::II, None) => unreachable!("checked in build_generator_for"),
    };
    if recovery_coeff.is_zero() {
        return Err(Error::Invariant("zero recovery coefficient"));
    }
    let query = Query {
        model: params.model(),
        rows,
    };
    let state = ClientState {
        sigma: randomness.sigma.clone(),
        annihilator: p,
        side_info: si.clone(),
        c_star: randomness.c_star,
        recovery_coeff,
    };
    Ok((query, state))
}

fn check_permutation(sigma: &[usize], r: usize) -> Result<()> {
    let mut seen = vec![false; r];
    if sigma.len() != r {
        return Err(Error::InvalidParams(format!(
            "permutation of length {} for {r} rows",
            sigma.len()
        )));
    }
    for &s in sigma {
        if s >= r || std::mem::replace(&mut seen[s], true) {
            return Err(Error::InvalidParams("sigma is not a permutation".into()));
        }
    }
    Ok(())
}

/// Client steps 1-2: build the generator, shuffle its rows, keep the secrets.
pub fn client_build_query<R: Rng + ?Sized>(
    si: &SideInformation,
    params: &ProtocolParams,
    rng: &mut R,
) -> Result<(Query, ClientState)> {
    si.validate(params)?;
    let randomness = QueryRandomness::sample(params, si, rng)?;
    build_query_with(si, params, &randomness)
}

/// Server step: `values[i] = Σ_j rows[i][j] X_j`. The rows are treated as
/// opaque coefficient vectors.
pub fn server_answer(query: &Query, db: &Database) -> Result<Answer> {
    let k = db.k();
    if query.rows.is_empty() {
        return Err(Error::Dimension("empty query".into()));
    }
    let field = db.field();
    let values = query
        .rows
        .iter()
        .map(|row| {
            if row.len() != k {
                return Err(Error::Dimension(format!(
                    "query row of length {} against K = {k}",
                    row.len()
                )));
            }
            let mut acc = vec![field.zero(); db.message_len()];
            for (&coef, msg) in row.iter().zip(db.messages()) {
                if coef.params() != field {
                    return Err(Error::ParamMismatch {
                        left: field.modulus(),
                        right: coef.params().modulus(),
                    });
                }
                if coef.is_zero() {
                    continue;
                }
                for (a, &x) in acc.iter_mut().zip(msg) {
                    *a = *a + coef * x;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(Answer { values })
}

/// Client step 4: undo the permutation, form `Σ_i p_i A_i`, strip the side
/// information and normalize.
pub fn client_recover(
    answer: &Answer,
    state: &ClientState,
    params: &ProtocolParams,
) -> Result<Vec<FieldElement>> {
    let r = state.sigma.len();
    if answer.values.len() != r {
        return Err(Error::Dimension(format!(
            "{} answer values for {r} query rows",
            answer.values.len()
        )));
    }
    let weights = state.annihilator.coeffs();
    if weights.len() != r {
        return Err(Error::Invariant(
            "annihilator degree does not match row count",
        ));
    }
    let m = params.message_len();
    let field = params.field();
    let mut combo = vec![field.zero(); m];
    for (&w, &pos) in weights.iter().zip(&state.sigma) {
        let a = &answer.values[pos];
        if a.len() != m {
            return Err(Error::Dimension(format!(
                "answer value of length {} for m = {m}",
                a.len()
            )));
        }
        for (c, &x) in combo.iter_mut().zip(a) {
            *c = *c + w * x;
        }
    }
    let inv = state
        .recovery_coeff
        .try_inv()
        .map_err(|_| Error::Invariant("zero recovery coefficient"))?;
    Ok(combo
        .into_iter()
        .zip(&state.side_info.value)
        .map(|(c, &y)| (c - y) * inv)
        .collect())
}

/// Outcome of an in-process retrieval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalRun {
    pub side_info: SideInformation,
    pub recovered: Vec<FieldElement>,
    pub downloaded_symbols: usize,
}

/// Samples an instance and runs all four protocol steps in-process.
pub fn run_local<R: Rng + ?Sized>(
    params: &ProtocolParams,
    db: &Database,
    rng: &mut R,
) -> Result<LocalRun> {
    let si = sample_instance(params, db, rng)?;
    retrieve_local(params, db, si, rng)
}

/// Runs the protocol for given side information.
pub fn retrieve_local<R: Rng + ?Sized>(
    params: &ProtocolParams,
    db: &Database,
    side_info: SideInformation,
    rng: &mut R,
) -> Result<LocalRun> {
    params.check_database(db)?;
    let (query, state) = client_build_query(&side_info, params, rng)?;
    let answer = server_answer(&query, db)?;
    let recovered = client_recover(&answer, &state, params)?;
    let downloaded_symbols = answer.values.iter().map(Vec::len).sum();
    Ok(LocalRun {
        side_info,
        recovered,
        downloaded_symbols,
    })
}
