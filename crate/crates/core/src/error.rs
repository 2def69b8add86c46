use std::io;

use crate::composer::ComposeError;
use crate::embedding::EmbedError;
use crate::gridworld::{GridError, RewardSpecError};
use crate::harness::HarnessError;
use crate::learner::LearnerError;
use crate::oracle::OracleError;
use crate::predictor::PredictorError;
use crate::retrieval::RetrievalError;
use crate::store::StoreError;
use crate::strategies::StrategyError;

/// Any error the pipeline can produce.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Spec(#[from] RewardSpecError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for failures of the file system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Learner(LearnerError::Io(_)) => true,
            Error::Store(StoreError::Io(_)) => true,
            Error::Harness(HarnessError::Io(_)) => true,
            Error::Csv(e) => e.is_io_error(),
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }

    /// Stable machine-readable name of the error variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Grid(e) => match e {
                GridError::UnsupportedSize(_) => "UnsupportedSize",
                GridError::CountsDoNotFit { .. } => "CountsDoNotFit",
                GridError::FeasibilityExhausted(_) => "FeasibilityExhausted",
                GridError::OutOfBounds { .. } => "OutOfBounds",
                GridError::OverlappingRoles { .. } => "OverlappingRoles",
                GridError::TooManyGold(_) => "TooManyGold",
            },
            Error::Spec(_) => "InvalidRewardSpec",
            Error::Learner(e) => match e {
                LearnerError::InvalidConfig(_) => "InvalidConfig",
                LearnerError::ConflictingTransition { .. } => "ConflictingTransition",
                LearnerError::Parse { .. } => "ParseError",
                LearnerError::Io(_) => "IoFailure",
            },
            Error::Store(e) => match e {
                StoreError::NotFound(_) => "NotFound",
                StoreError::DuplicateId(_) => "DuplicateId",
                StoreError::CorruptArtifact { .. } => "CorruptArtifact",
                StoreError::LayoutMismatch { .. } => "LayoutMismatch",
                StoreError::Invalid(_) => "InvalidArtifact",
                StoreError::Io(_) => "IoFailure",
            },
            Error::Retrieval(e) => match e {
                RetrievalError::NoSubtasksRecognized(_) => "NoSubtasksRecognized",
                RetrievalError::EmptyLibrary => "EmptyLibrary",
                RetrievalError::ZeroTopM => "InvalidTopM",
            },
            Error::Embed(EmbedError::EmptyReferenceSet) => "EmptyReferenceSet",
            Error::Predictor(e) => match e {
                PredictorError::TooFewExamples(_) => "TooFewExamples",
                PredictorError::DimensionMismatch { .. } => "DimensionMismatch",
                PredictorError::DegenerateData => "DegenerateData",
                PredictorError::NonFinite => "NonFinite",
                PredictorError::InvalidParams(_) => "InvalidParams",
                PredictorError::EmptyStage => "EmptyStage",
            },
            Error::Compose(e) => match e {
                ComposeError::NoMembers => "NoMembers",
                ComposeError::WeightLengthMismatch { .. } => "WeightLengthMismatch",
                ComposeError::InconsistentDynamics { .. } => "InconsistentDynamics",
                ComposeError::InvalidGamma(_) => "InvalidGamma",
                ComposeError::NonConvergence { .. } => "NonConvergence",
            },
            Error::Strategy(e) => match e {
                StrategyError::EmptyCandidates(_) => "EmptyCandidates",
                StrategyError::CombinationCapExceeded { .. } => "CombinationCapExceeded",
                StrategyError::MissingArtifact(_) => "NotFound",
                StrategyError::InvalidK => "InvalidK",
            },
            Error::Oracle(e) => match e {
                OracleError::BudgetExceeded(_) => "BudgetExceeded",
                OracleError::NotConverged { .. } => "NotConverged",
                OracleError::InvalidGamma(_) => "InvalidGamma",
            },
            Error::Harness(e) => match e {
                HarnessError::EmptyReport => "EmptyReport",
                HarnessError::EmptyStage(_) => "EmptyStage",
                HarnessError::InvalidPlan(_) => "InvalidPlan",
                HarnessError::Io(_) => "IoFailure",
            },
            Error::Json(e) if e.is_io() => "IoFailure",
            Error::Json(_) => "ParseError",
            Error::Csv(e) if e.is_io_error() => "IoFailure",
            Error::Csv(_) => "ParseError",
            Error::Io(_) => "IoFailure",
        }
    }
}
