use std::fmt;
use std::path::PathBuf;

/// Failures that originate in the command layer rather than the library.
#[derive(Debug)]
pub enum CliError {
    /// Options that contradict each other or an upstream artifact.
    ConfigConflict(String),
    /// An input file or directory that does not exist or is incomplete.
    MissingInput(String),
    /// Directory tree not in the expected dataset layout.
    Layout(Vec<PathBuf>),
    InvalidArgument(String),
    Image { path: PathBuf, message: String },
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigConflict(_) => "config_conflict",
            CliError::MissingInput(_) => "missing_input",
            CliError::Layout(_) => "layout",
            CliError::InvalidArgument(_) => "invalid_argument",
            CliError::Image { .. } => "image",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::ConfigConflict(m) => write!(f, "config conflict: {m}"),
            CliError::MissingInput(m) => write!(f, "missing input: {m}"),
            CliError::Layout(paths) => {
                write!(f, "unexpected dataset layout, missing:")?;
                for p in paths {
                    write!(f, " {}", p.display())?;
                }
                Ok(())
            }
            CliError::InvalidArgument(m) => write!(f, "invalid argument: {m}"),
            CliError::Image { path, message } => write!(f, "{}: {message}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

/// Prints `{"kind": ..., "error": ..., "context": [...]}` on stderr.
pub fn report_failure(err: &anyhow::Error) {
    let kind = err
        .chain()
        .find_map(|cause| {
            if let Some(e) = cause.downcast_ref::<patchcluster::Error>() {
                Some(e.kind())
            } else {
                cause.downcast_ref::<CliError>().map(CliError::kind)
            }
        })
        .unwrap_or("other");
    let mut body = serde_json::json!({
        "kind": kind,
        "error": format!("{err:#}"),
    });
    if let Some(CliError::Layout(paths)) = err.chain().find_map(|c| c.downcast_ref::<CliError>()) {
        body["missing"] = paths.iter().map(|p| p.display().to_string()).collect();
    }
    eprintln!("{body}");
}
