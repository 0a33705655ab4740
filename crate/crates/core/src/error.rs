use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input vector has zero total mass")]
    ZeroMassInput,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("normalization constant A = {total} must exceed the input dimension D = {dim}")]
    InvalidA { total: f64, dim: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("weight W[{unit}][{dim}] = {value} is not strictly positive")]
    NonPositiveWeight { unit: usize, dim: usize, value: f64 },

    #[error("every middle-layer unit has zero input mass")]
    AllUnitsDead,

    #[error("unit {0} is active but has no connections to any class")]
    OrphanColumn(usize),

    #[error("best-versus-second-best needs at least two classes")]
    TooFewClasses,

    #[error("learning rate {rate} times accumulated activity {activity} reaches 1")]
    RateTooLarge { rate: f64, activity: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("class {0} has no labeled sample to initialize from")]
    MissingClassLabels(usize),

    #[error("delta initialization of R needs C == K, got C = {units}, K = {classes}")]
    DeltaInitShapeMismatch { units: usize, classes: usize },

    #[error("no labeled samples available for supervised top-layer learning")]
    NoLabels,

    #[error("training aborted by user")]
    UserAbort,

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("unsupported checkpoint format (found version {found}, expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },

    #[error("malformed checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("bad magic number 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic { expected: u32, found: u32 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("class {class} has {available} samples, {wanted} labels requested")]
    InfeasibleSplit {
        class: usize,
        wanted: usize,
        available: usize,
    },

    #[error("unit {0} has no label assignment")]
    UncoveredUnit(usize),

    #[error("unit index {unit} out of range for {units} units")]
    UnitOutOfRange { unit: usize, units: usize },
}
