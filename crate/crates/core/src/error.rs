use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("softmax over an empty neighborhood")]
    EmptyNeighborhood,

    #[error("node {0} has no active neighbors")]
    IsolatedNode(usize),

    #[error("cosine similarity of a near-zero vector")]
    ZeroNorm,

    #[error("epoch {epoch} outside a {total}-epoch schedule")]
    EpochOutOfRange { epoch: usize, total: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate region: attention over patches {0:?} sums to zero")]
    DegenerateRegion(Vec<usize>),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {}: {detail}", path.display())]
    Manifest { path: PathBuf, detail: String },

    #[error("header mismatch in {}: {detail}", path.display())]
    HeaderMismatch { path: PathBuf, detail: String },

    #[error("blob {} has {found} bytes, expected {expected}", path.display())]
    BlobLength {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("unknown export format `{0}`")]
    UnknownFormat(String),

    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }
}
