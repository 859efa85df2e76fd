use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Domain errors. Anything recoverable by changing inputs or budgets lands
/// here; logic errors inside the crate are panics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("duplicate modulus {0}")]
    DuplicateModulus(u64),

    #[error("modulus {0} is smaller than 2")]
    ModulusTooSmall(u64),

    #[error("no explicit moduli and no tail family")]
    EmptyModuli,

    #[error("residue {residue} out of range for modulus {modulus}")]
    ResidueOutOfRange { modulus: u64, residue: u64 },

    #[error("forbidden set of modulus {0} covers every residue class")]
    WindowFull(u64),

    #[error("modulus {0} does not belong to the scheme")]
    LevelMismatch(u64),

    #[error("residues {ra} mod {a} and {rb} mod {b} are CRT-incompatible")]
    IncompatibleResidues { a: u64, ra: u64, b: u64, rb: u64 },

    #[error("level {requested} exceeds the {available} available moduli")]
    LevelUnavailable { requested: usize, available: usize },

    #[error("lcm {lcm} exceeds the enumeration bound {bound}")]
    LcmOverflow { lcm: String, bound: u64 },

    #[error("{zeros} zero-constrained positions exceed the inclusion-exclusion cap {cap}")]
    ExponentialBlowup { zeros: usize, cap: usize },

    #[error("tail family not enumerable: {0}")]
    TailNotEnumerable(String),

    #[error("center {0} lies outside a patch interval")]
    CenterOutOfRange(i64),

    #[error("block length {block} exceeds construction level {level}")]
    BlockExceedsLevel { block: usize, level: usize },

    #[error("alpha {0} is outside (0,1] or rational with denominator <= 10^6")]
    RationalAlpha(f64),

    #[error("interval [{0}, {1}] is empty")]
    EmptyInterval(i64, i64),

    #[error("pattern query has no positions")]
    EmptyPattern,

    #[error("position {0} constrained twice")]
    DuplicatePosition(i64),

    #[error("period group of order {order} exceeds the listing bound {bound}")]
    GroupTooLarge { order: String, bound: u64 },

    #[error("inclusion-exclusion path requires pairwise coprime moduli")]
    RequiresCoprime,

    #[error("invalid scheme description: {0}")]
    InvalidScheme(String),

    #[error("invalid patch description: {0}")]
    InvalidPatch(String),
}
