//! Segmentation networks: a plain residual encoder-decoder (ResUNet) and its
//! hypernetwork variant, where every convolution kernel is generated from a
//! latent code derived from the Tversky loss hyperparameter.
//!
//! Both variants share one block structure. Encoder levels are residual
//! units (conv, batch norm, PReLU, plus a projection skip) that halve the
//! resolution from the second level on; decoder levels upsample with a
//! stride-2 transposed convolution, concatenate the encoder skip feature,
//! and apply conv, batch norm, PReLU; a 1x1 convolution and a sigmoid
//! produce the probability map. In the hyper variant a mapping network turns
//! h = (alpha, beta) into a hypervector z_h, and two dense generators per
//! convolution site turn z_h into that site's kernel and bias. The
//! generators and mapping network are the trainable parameters; the
//! generated kernels are not.

mod checkpoint;
mod resunet;

pub use checkpoint::{Checkpoint, TrainMeta, CHECKPOINT_FORMAT_VERSION};
pub use resunet::{BoundParams, HyperModel, PlainModel};

use thiserror::Error;

use crate::tensor::TensorError;

/// Only 2-D grids are supported; the value is recorded in checkpoints so a
/// future rank-3 build rejects old files cleanly.
pub const SPATIAL_RANK: usize = 2;

/// Initial PReLU slope for every channel.
pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model spec: {0}")]
    InvalidSpec(String),
    #[error(
        "input {h}x{w} must be divisible by {divisor} for {levels} levels; \
         pad to {ph}x{pw}"
    )]
    IndivisibleExtent {
        h: usize,
        w: usize,
        divisor: usize,
        levels: usize,
        ph: usize,
        pw: usize,
    },
    #[error("input has {got} channels, spec expects {expected}")]
    ChannelMismatch { got: usize, expected: usize },
    #[error("checkpoint kind mismatch: stored {stored}, requested {requested}")]
    KindMismatch {
        stored: &'static str,
        requested: &'static str,
    },
    #[error("checkpoint {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("checkpoint tensor table: {0}")]
    InventoryMismatch(String),
    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Plain,
    Hyper,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Plain => "plain",
            ModelKind::Hyper => "hyper",
        }
    }
}

/// Architecture description for both network kinds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Channels per encoder level, mirrored by the decoder.
    pub kernel_depths: Vec<usize>,
    pub input_channels: usize,
    /// Square kernel extent of the non-projection convolutions (odd).
    pub kernel_size: usize,
    /// Length of the hypervector z_h (hyper kind only).
    pub hypervector_size: Option<usize>,
    /// Dense+ReLU stages in the mapping network (hyper kind only).
    pub mapping_layers: Option<usize>,
}

impl ModelSpec {
    pub fn plain(kernel_depths: Vec<usize>, input_channels: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Plain,
            kernel_depths,
            input_channels,
            kernel_size: 3,
            hypervector_size: None,
            mapping_layers: None,
        }
    }

    pub fn hyper(
        kernel_depths: Vec<usize>,
        input_channels: usize,
        hypervector_size: usize,
        mapping_layers: usize,
    ) -> Self {
        ModelSpec {
            kind: ModelKind::Hyper,
            kernel_depths,
            input_channels,
            kernel_size: 3,
            hypervector_size: Some(hypervector_size),
            mapping_layers: Some(mapping_layers),
        }
    }

    pub fn levels(&self) -> usize {
        self.kernel_depths.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.kernel_depths.is_empty() {
            return Err(ModelError::InvalidSpec("kernel_depths is empty".into()));
        }
        if self.kernel_depths.iter().any(|&d| d == 0) {
            return Err(ModelError::InvalidSpec(
                "kernel_depths must all be positive".into(),
            ));
        }
        if self.input_channels == 0 {
            return Err(ModelError::InvalidSpec("input_channels must be >= 1".into()));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(ModelError::InvalidSpec(format!(
                "kernel_size {} must be odd",
                self.kernel_size
            )));
        }
        match self.kind {
            ModelKind::Plain => {
                if self.hypervector_size.is_some() || self.mapping_layers.is_some() {
                    return Err(ModelError::InvalidSpec(
                        "plain kind takes no hypervector/mapping fields".into(),
                    ));
                }
            }
            ModelKind::Hyper => {
                if self.hypervector_size.unwrap_or(0) < 1 {
                    return Err(ModelError::InvalidSpec(
                        "hyper kind requires hypervector_size >= 1".into(),
                    ));
                }
                if self.mapping_layers.unwrap_or(0) < 1 {
                    return Err(ModelError::InvalidSpec(
                        "hyper kind requires mapping_layers >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One convolution site in the network body.
#[derive(Clone, Debug)]
pub(crate) struct ConvSite {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl ConvSite {
    pub fn weight_shape(&self) -> Vec<usize> {
        if self.transposed {
            vec![self.cin, self.cout, self.k, self.k]
        } else {
            vec![self.cout, self.cin, self.k, self.k]
        }
    }

    pub fn kernel_count(&self) -> usize {
        self.cin * self.cout * self.k * self.k
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }
}

/// One batch-norm + PReLU site.
#[derive(Clone, Debug)]
pub(crate) struct NormSite {
    pub name: String,
    pub channels: usize,
}

pub(crate) struct EncBlock {
    pub conv: ConvSite,
    pub proj: Option<ConvSite>,
    pub norm: NormSite,
}

pub(crate) struct DecBlock {
    pub convtr: ConvSite,
    pub conv: ConvSite,
    pub norm: NormSite,
}

/// The network body in execution order.
pub(crate) struct Layout {
    pub enc: Vec<EncBlock>,
    /// Decoder blocks from the deepest level up; `dec[i]` lifts level
    /// `levels-1-i` to `levels-2-i`.
    pub dec: Vec<DecBlock>,
    pub head: ConvSite,
}

impl Layout {
    pub fn conv_sites(&self) -> Vec<&ConvSite> {
        let mut sites = Vec::new();
        for b in &self.enc {
            sites.push(&b.conv);
            if let Some(p) = &b.proj {
                sites.push(p);
            }
        }
        for b in &self.dec {
            sites.push(&b.convtr);
            sites.push(&b.conv);
        }
        sites.push(&self.head);
        sites
    }

    pub fn norm_sites(&self) -> Vec<&NormSite> {
        self.enc
            .iter()
            .map(|b| &b.norm)
            .chain(self.dec.iter().map(|b| &b.norm))
            .collect()
    }
}

pub(crate) fn layout(spec: &ModelSpec) -> Layout {
    let d = &spec.kernel_depths;
    let levels = d.len();
    let k = spec.kernel_size;
    let pad = (k - 1) / 2;

    let mut enc = Vec::with_capacity(levels);
    for l in 0..levels {
        let cin = if l == 0 { spec.input_channels } else { d[l - 1] };
        let stride = if l == 0 { 1 } else { 2 };
        let conv = ConvSite {
            name: format!("enc{l}.conv"),
            cin,
            cout: d[l],
            k,
            stride,
            padding: pad,
            transposed: false,
        };
        let proj = (cin != d[l] || stride != 1).then(|| ConvSite {
            name: format!("enc{l}.proj"),
            cin,
            cout: d[l],
            k: 1,
            stride,
            padding: 0,
            transposed: false,
        });
        enc.push(EncBlock {
            conv,
            proj,
            norm: NormSite {
                name: format!("enc{l}"),
                channels: d[l],
            },
        });
    }

    let mut dec = Vec::with_capacity(levels.saturating_sub(1));
    for l in (1..levels).rev() {
        // Kernel 2, stride 2 doubles the extent exactly.
        let convtr = ConvSite {
            name: format!("dec{l}.convtr"),
            cin: d[l],
            cout: d[l - 1],
            k: 2,
            stride: 2,
            padding: 0,
            transposed: true,
        };
        let conv = ConvSite {
            name: format!("dec{l}.conv"),
            cin: 2 * d[l - 1],
            cout: d[l - 1],
            k,
            stride: 1,
            padding: pad,
            transposed: false,
        };
        dec.push(DecBlock {
            convtr,
            conv,
            norm: NormSite {
                name: format!("dec{l}"),
                channels: d[l - 1],
            },
        });
    }

    let head = ConvSite {
        name: "head.conv".into(),
        cin: d[0],
        cout: 1,
        k: 1,
        stride: 1,
        padding: 0,
        transposed: false,
    };

    Layout { enc, dec, head }
}

/// Exact count of trainable scalars, from per-site closed forms. The model
/// constructor instantiates tensors from an independent inventory walk; the
/// two are cross-checked in tests.
pub fn count_params(spec: &ModelSpec) -> usize {
    let lay = layout(spec);
    let norm_total: usize = lay.norm_sites().iter().map(|n| 3 * n.channels).sum();
    match spec.kind {
        ModelKind::Plain => {
            let conv_total: usize = lay
                .conv_sites()
                .iter()
                .map(|s| s.kernel_count() + s.cout)
                .sum();
            conv_total + norm_total
        }
        ModelKind::Hyper => {
            let z = spec.hypervector_size.expect("validated");
            let m = spec.mapping_layers.expect("validated");
            // Per site: a [kernel, z] dense for the weights and a [cout, z]
            // dense for the biases, each with its own bias vector.
            let gen_total: usize = lay
                .conv_sites()
                .iter()
                .map(|s| s.kernel_count() * (z + 1) + s.cout * (z + 1))
                .sum();
            // Mapping network: 2 -> z, then z -> z for the remaining stages.
            let mapping_total = (2 * z + z) + (m - 1) * (z * z + z);
            gen_total + mapping_total + norm_total
        }
    }
}
