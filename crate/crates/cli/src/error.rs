use mvcreg::MvcError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("cannot read `{path}`: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },

    #[error("cannot write output: {0}")]
    Write(#[from] std::io::Error),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Model(MvcError),

    #[error("{failed} component(s) failed to fit")]
    ComponentsFailed { failed: usize, first: MvcError },

    #[error("{failed} of {checked} enforced cells outside tolerance")]
    Comparison { failed: usize, checked: usize },
}

impl From<MvcError> for CliError {
    fn from(e: MvcError) -> Self {
        match e {
            MvcError::Config { path, message } => CliError::Config { path, message },
            MvcError::InvalidConcentrations { .. }
            | MvcError::InvalidDataset(_)
            | MvcError::DimensionMismatch(_) => CliError::Input(user_message(&e)),
            other => CliError::Model(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Read { .. } | CliError::Config { .. } => 2,
            CliError::Model(MvcError::SingularGramian { .. }) => 3,
            CliError::Model(MvcError::SingularNormalMatrix { .. })
            | CliError::Model(MvcError::SingularD { .. })
            | CliError::ComponentsFailed { .. } => 4,
            CliError::Comparison { .. } => 5,
            CliError::Model(_) | CliError::Write(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) | CliError::Read { .. } => "malformed_input",
            CliError::Config { .. } => "config",
            CliError::Write(_) => "io",
            CliError::Model(e) | CliError::ComponentsFailed { first: e, .. } => model_kind(e),
            CliError::Comparison { .. } => "comparison_failed",
        }
    }

    fn model_error(&self) -> Option<&MvcError> {
        match self {
            CliError::Model(e) | CliError::ComponentsFailed { first: e, .. } => Some(e),
            _ => None,
        }
    }

    /// One line: a machine-parsable prefix followed by human text.
    pub fn diagnostic(&self) -> String {
        let mut line = format!("error[{}] exit={}", self.kind(), self.exit_code());
        if let CliError::Config { path, .. } = self {
            line.push_str(&format!(" field={path}"));
        }
        let condition = self.model_error().and_then(MvcError::condition);
        if let Some(c) = condition {
            line.push_str(&format!(" condition={}", c.key()));
        }
        line.push_str(": ");
        match (self, self.model_error()) {
            (CliError::ComponentsFailed { failed, .. }, Some(first)) => {
                line.push_str(&format!(
                    "{failed} component(s) failed; first: {}",
                    user_message(first)
                ));
            }
            (CliError::Model(e), _) => line.push_str(&user_message(e)),
            _ => line.push_str(&self.to_string()),
        }
        if let Some(c) = condition {
            line.push_str(&format!("; violated condition: {}", c.describe()));
        }
        line.replace('\n', " ")
    }
}

/// The library's message with components and rows numbered from 1, matching
/// the `p1..pM` columns and CSV data rows.
pub fn user_message(e: &MvcError) -> String {
    match e {
        MvcError::InvalidConcentrations { row, reason } => {
            format!("invalid concentrations in CSV row {}: {reason}", row + 1)
        }
        MvcError::NonFiniteMoment { row } => {
            format!("non-finite moment contribution at CSV row {}", row + 1)
        }
        MvcError::SingularNormalMatrix {
            component,
            condition,
            tol,
        } => format!(
            "singular weighted normal matrix for component {}: condition number {condition:e} > tolerance {tol:e}",
            component + 1
        ),
        MvcError::DegenerateWeights { component, mass } => format!(
            "degenerate weights for component {}: mean |a| = {mass:e}",
            component + 1
        ),
        MvcError::SingularD { component } => format!(
            "singular second-moment matrix D for component {}",
            component + 1
        ),
        MvcError::MissingFit { component } => {
            format!("component {} has no successful fit", component + 1)
        }
        other => other.to_string(),
    }
}

pub fn model_kind(e: &MvcError) -> &'static str {
    match e {
        MvcError::SingularGramian { .. } => "singular_gramian",
        MvcError::SingularNormalMatrix { .. } => "singular_normal_matrix",
        MvcError::SingularD { .. } => "singular_d",
        MvcError::DegenerateWeights { .. } => "degenerate_weights",
        MvcError::NonFiniteMoment { .. } => "non_finite_moment",
        MvcError::MissingFit { .. } => "missing_fit",
        MvcError::StudyFailed { .. } => "study_failed",
        MvcError::ComponentIndex { .. } => "component_index",
        MvcError::Config { .. } => "config",
        MvcError::InvalidConcentrations { .. }
        | MvcError::InvalidDataset(_)
        | MvcError::DimensionMismatch(_) => "malformed_input",
    }
}
