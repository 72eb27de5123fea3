use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no input trajectories")]
    NoTrajectories,
    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),
    #[error("boundary: window of {rows}x{cols} centered at ({row}, {col}) exceeds the grid")]
    Boundary {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("vehicle overlap: vehicle {id} has gap {gap}")]
    VehicleOverlap { id: u32, gap: f64 },
    #[error("collision: follower {follower} overlaps leader {leader}")]
    Collision { follower: u32, leader: u32 },
    #[error("unsupported width {0}: kernel width must be a positive even integer")]
    UnsupportedWidth(i64),
    #[error("grid too small: {n_x}x{n_t} grid cannot hold a {k_rows}x{k_cols} kernel")]
    GridTooSmall {
        n_x: usize,
        n_t: usize,
        k_rows: usize,
        k_cols: usize,
    },
    #[error("incompatible replications: {0}")]
    IncompatibleReplications(String),
    #[error("empty map: no valid cells")]
    EmptyMap,
    #[error("replication {index} failed: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("unsorted input: station {station} at line {line}")]
    UnsortedInput { station: String, line: usize },
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("config error{}, key `{key}`: {msg}", at_line(*line))]
    Config {
        line: usize,
        key: String,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Line 0 marks a problem with a defaulted value.
fn at_line(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!(" at line {line}")
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
