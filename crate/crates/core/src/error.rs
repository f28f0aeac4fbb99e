use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: dimension mismatch between shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: division by zero at element {index}")]
    DivisionByZero { op: &'static str, index: usize },

    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("degenerate calibration range on channel {channel}: upper == lower == {value}")]
    DegenerateRange { channel: usize, value: f64 },

    #[error("infeasible clip bounds on channel {channel}: upper {upper} < lower {lower}")]
    InfeasibleClip {
        channel: usize,
        upper: f64,
        lower: f64,
    },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("layer {layer}: {source}")]
    Layer {
        layer: String,
        #[source]
        source: Box<CoreError>,
    },
}

impl CoreError {
    pub fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        CoreError::Domain {
            op,
            msg: msg.into(),
        }
    }

    /// Attach the pipeline layer id an error surfaced in.
    pub fn at_layer(self, layer: impl Into<String>) -> Self {
        CoreError::Layer {
            layer: layer.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
