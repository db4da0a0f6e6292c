use thiserror::Error;

pub type Result<T> = std::result::Result<T, MvcError>;

/// Identifiability or regularity condition whose violation stopped an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// det Γ_N must stay above a positive floor: the concentration vectors
    /// must be linearly independent for the components to be identifiable.
    GramianNonsingular,
    /// The component's regressor second-moment matrix D^(m) must be nonsingular.
    SecondMomentNonsingular,
}

impl Condition {
    pub fn key(self) -> &'static str {
        match self {
            Condition::GramianNonsingular => "gramian_nonsingular",
            Condition::SecondMomentNonsingular => "second_moment_nonsingular",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Condition::GramianNonsingular => {
                "concentration Gramian must be nonsingular (det Γ_N > C); \
                 concentration vectors are linearly dependent and components are not identifiable"
            }
            Condition::SecondMomentNonsingular => {
                "regressor second-moment matrix D^(m) of the component must be nonsingular"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MvcError {
    #[error("invalid concentrations at row {row}: {reason}")]
    InvalidConcentrations { row: usize, reason: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("component index {index} out of range for {n_components} components")]
    ComponentIndex { index: usize, n_components: usize },

    #[error("singular concentration Gramian: det Γ_N = {det:e} <= tolerance {tol:e}")]
    SingularGramian { det: f64, tol: f64 },

    #[error(
        "singular weighted normal matrix for component {component}: condition number {condition:e} > tolerance {tol:e}"
    )]
    SingularNormalMatrix {
        component: usize,
        condition: f64,
        tol: f64,
    },

    #[error("degenerate weights for component {component}: mean |a| = {mass:e}")]
    DegenerateWeights { component: usize, mass: f64 },

    #[error("non-finite moment contribution at row {row}")]
    NonFiniteMoment { row: usize },

    #[error("singular second-moment matrix D for component {component}")]
    SingularD { component: usize },

    #[error("component {component} has no successful fit")]
    MissingFit { component: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("study failed: {failures} of {reps} replications failed at N = {n_obs}")]
    StudyFailed {
        n_obs: usize,
        failures: usize,
        reps: usize,
    },
}

impl MvcError {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        MvcError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// The violated model condition, if the error is a condition failure.
    pub fn condition(&self) -> Option<Condition> {
        match self {
            MvcError::SingularGramian { .. } => Some(Condition::GramianNonsingular),
            MvcError::SingularNormalMatrix { .. } | MvcError::SingularD { .. } => {
                Some(Condition::SecondMomentNonsingular)
            }
            _ => None,
        }
    }
}
