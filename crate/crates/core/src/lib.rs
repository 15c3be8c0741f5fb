//! Single-server private information retrieval with private coded side
//! information.
//!
//! A user who privately knows one linear combination `Y = Σ_{i∈S} c_i X_i`
//! of `M` database messages retrieves a demanded message `X_W` from a single
//! server while hiding both `W` and `S`. Queries are rows of a Generalized
//! Reed-Solomon generator matrix whose multipliers are tuned so that one
//! codeword carries exactly the side-information coefficients.
//!
//! * [`field`]: GF(q) arithmetic and polynomials.
//! * [`grs`]: generator construction, MDS check, minimum-weight census.
//! * [`protocol`]: client query, server answer, client recovery.
//! * [`audit`]: exact enumeration of privacy, recoverability and rate.
//! * [`net`]: framed TCP transport.

pub mod audit;
pub mod error;
pub mod field;
pub mod grs;
pub mod net;
pub mod protocol;

pub use error::{Error, Result};
pub use field::{FieldElement, FieldParams, Polynomial};
pub use grs::{CodeParams, GeneratorMatrix};
pub use protocol::{
    Answer, ClientState, Database, Model, ProtocolParams, Query, QueryRandomness, SideInformation,
};
