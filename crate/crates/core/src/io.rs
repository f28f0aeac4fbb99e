//! File formats: a JSON manifest next to a little-endian binary blob.
//!
//! Every tensor-bearing file is a pair: `<name>.json` holding structure and
//! quantizer records, and a sibling blob holding f32 tensors and u8 code
//! arrays referenced by byte (offset, len). Scale/zero-point style vectors
//! are inlined in the manifest when they have at most 64 channels, otherwise
//! they live in the blob. All stored reals are f32-valued.

use crate::model::{
    ActSite, LayerNormParams, LinearLayerParams, ToyModel, TransformerBlock, WeightKind,
};
use crate::pipeline::{
    AblationRow, ActQuant, EvalMetrics, LayerReport, QuantConfig, QuantizedModel, ReparamAudit,
    WeightQuant,
};
use crate::quant::{uniform_dequant, Granularity, UniformQuantParams};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;

/// How many channels a vector may have and still be inlined in the manifest.
const INLINE_LIMIT: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("unsupported format version {found} (supported: {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("{0}")]
    Core(#[from] crate::error::CoreError),
}

type Result<T> = std::result::Result<T, FormatError>;

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

// ---------------------------------------------------------------------------
// Blob encoding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobRef {
    pub offset: usize,
    pub len: usize,
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Default)]
struct BlobWriter {
    bytes: Vec<u8>,
}

impl BlobWriter {
    fn push_f32(&mut self, shape: &[usize], data: &[f64]) -> BlobRef {
        let offset = self.bytes.len();
        for &v in data {
            self.bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        BlobRef {
            offset,
            len: self.bytes.len() - offset,
            dtype: "f32".into(),
            shape: shape.to_vec(),
        }
    }

    fn push_u8(&mut self, shape: &[usize], data: &[f64]) -> Result<BlobRef> {
        let offset = self.bytes.len();
        for &v in data {
            if v != v.trunc() || !(0.0..=255.0).contains(&v) {
                return Err(FormatError::Format(format!(
                    "code {} does not fit an unsigned 8-bit integer",
                    v
                )));
            }
            self.bytes.push(v as u8);
        }
        Ok(BlobRef {
            offset,
            len: self.bytes.len() - offset,
            dtype: "u8".into(),
            shape: shape.to_vec(),
        })
    }
}

struct BlobReader {
    bytes: Vec<u8>,
}

impl BlobReader {
    fn read(&self, r: &BlobRef) -> Result<Tensor> {
        let end = r
            .offset
            .checked_add(r.len)
            .ok_or_else(|| FormatError::Format("blob reference overflows".into()))?;
        if end > self.bytes.len() {
            return Err(FormatError::Format(format!(
                "blob reference {}..{} exceeds blob of {} bytes",
                r.offset,
                end,
                self.bytes.len()
            )));
        }
        let n: usize = r.shape.iter().product();
        let raw = &self.bytes[r.offset..end];
        let data: Vec<f64> = match r.dtype.as_str() {
            "f32" => {
                if r.len != 4 * n {
                    return Err(FormatError::Format("f32 blob length mismatch".into()));
                }
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect()
            }
            "u8" => {
                if r.len != n {
                    return Err(FormatError::Format("u8 blob length mismatch".into()));
                }
                raw.iter().map(|&b| b as f64).collect()
            }
            other => {
                return Err(FormatError::Format(format!("unknown dtype {:?}", other)));
            }
        };
        Tensor::new(r.shape.clone(), data).map_err(FormatError::Core)
    }
}

/// A vector either inlined in the manifest or stored in the blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum VecOrRef {
    Inline(Vec<f64>),
    Ref(BlobRef),
}

fn write_vec(blob: &mut BlobWriter, v: &[f64]) -> VecOrRef {
    if v.len() <= INLINE_LIMIT {
        VecOrRef::Inline(v.iter().map(|&x| f32_round(x)).collect())
    } else {
        VecOrRef::Ref(blob.push_f32(&[v.len()], v))
    }
}

fn read_vec(blob: &BlobReader, v: &VecOrRef) -> Result<Vec<f64>> {
    match v {
        VecOrRef::Inline(data) => Ok(data.clone()),
        VecOrRef::Ref(r) => Ok(blob.read(r)?.into_data()),
    }
}

// ---------------------------------------------------------------------------
// Manifest schemas
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LayerNormManifest {
    gamma: BlobRef,
    beta: BlobRef,
    eps: f64,
}

#[derive(Serialize, Deserialize)]
struct LinearManifest {
    weight: BlobRef,
    bias: BlobRef,
}

#[derive(Serialize, Deserialize)]
struct BlockManifest {
    ln1: LayerNormManifest,
    ln2: LayerNormManifest,
    wq: LinearManifest,
    wk: LinearManifest,
    wv: LinearManifest,
    wo: LinearManifest,
    mlp_up: LinearManifest,
    mlp_down: LinearManifest,
    heads: usize,
    causal: bool,
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    format_version: u32,
    kind: String,
    blob: String,
    embed_dim: usize,
    tokens: usize,
    blocks: Vec<BlockManifest>,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    kind: String,
    blob: String,
    data: BlobRef,
}

#[derive(Serialize, Deserialize)]
struct UniformParamsManifest {
    scale: VecOrRef,
    zero_point: VecOrRef,
    bits: u32,
    granularity: Granularity,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ActQuantManifest {
    Uniform { params: UniformParamsManifest },
    Log2 { scale: f64, bits: u32 },
    Log2Reparam { scale: f64, bits: u32 },
}

#[derive(Serialize, Deserialize)]
struct ActRecordManifest {
    block: usize,
    site: ActSite,
    quant: ActQuantManifest,
}

#[derive(Serialize, Deserialize)]
struct WeightRecordManifest {
    block: usize,
    name: WeightKind,
    params: UniformParamsManifest,
    codes: BlobRef,
    bias: BlobRef,
    cholesky_fallback: bool,
}

#[derive(Serialize, Deserialize)]
struct AuditManifest {
    block: usize,
    site: ActSite,
    r1: VecOrRef,
    r2: VecOrRef,
    scale: f64,
    zero_point: f64,
    zero_point_exact: f64,
    zero_point_residual: f64,
}

#[derive(Serialize, Deserialize)]
struct LayerNormSlotManifest {
    block: usize,
    slot: String,
    ln: LayerNormManifest,
}

#[derive(Serialize, Deserialize)]
struct QuantizedManifest {
    format_version: u32,
    kind: String,
    blob: String,
    config: QuantConfig,
    embed_dim: usize,
    tokens: usize,
    heads: usize,
    causal: bool,
    n_blocks: usize,
    layernorms: Vec<LayerNormSlotManifest>,
    acts: Vec<ActRecordManifest>,
    weights: Vec<WeightRecordManifest>,
    audits: Vec<AuditManifest>,
}

#[derive(Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: u32,
    pub kind: String,
    pub config: QuantConfig,
    pub layers: Vec<LayerReport>,
}

#[derive(Serialize, Deserialize)]
pub struct MetricsFile {
    pub format_version: u32,
    pub kind: String,
    pub config: QuantConfig,
    pub metrics: EvalMetrics,
}

#[derive(Serialize, Deserialize)]
pub struct GridFile {
    pub format_version: u32,
    pub kind: String,
    pub config: QuantConfig,
    pub rows: Vec<AblationRow>,
}

// ---------------------------------------------------------------------------
// Read/write plumbing
// ---------------------------------------------------------------------------

fn blob_path(manifest_path: &Path, blob_name: &str) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(blob_name)
}

fn default_blob_name(path: &Path) -> Result<String> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| FormatError::Format(format!("bad output path {:?}", path)))?;
    Ok(format!("{}.bin", stem))
}

fn write_pair<T: Serialize>(
    path: &Path,
    manifest: &T,
    blob: BlobWriter,
    blob_name: &str,
) -> Result<()> {
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    std::fs::write(path, json)?;
    std::fs::write(blob_path(path, blob_name), &blob.bytes)?;
    Ok(())
}

fn read_manifest<T: for<'de> Deserialize<'de>>(path: &Path, want_kind: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| FormatError::Format("missing format_version".into()))?
        as u32;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version { found: version });
    }
    let kind = value
        .get("kind")
        .and_then(|v| v.as_str())
        .ok_or_else(|| FormatError::Format("missing kind".into()))?;
    if kind != want_kind {
        return Err(FormatError::Format(format!(
            "expected a {:?} file, found kind {:?}",
            want_kind, kind
        )));
    }
    Ok(serde_json::from_value(value)?)
}

fn load_blob(path: &Path, blob_name: &str) -> Result<BlobReader> {
    Ok(BlobReader {
        bytes: std::fs::read(blob_path(path, blob_name))?,
    })
}

fn ln_to_manifest(blob: &mut BlobWriter, ln: &LayerNormParams) -> LayerNormManifest {
    LayerNormManifest {
        gamma: blob.push_f32(&[ln.gamma.len()], &ln.gamma),
        beta: blob.push_f32(&[ln.beta.len()], &ln.beta),
        eps: ln.eps,
    }
}

fn ln_from_manifest(blob: &BlobReader, m: &LayerNormManifest) -> Result<LayerNormParams> {
    Ok(LayerNormParams {
        gamma: blob.read(&m.gamma)?.into_data(),
        beta: blob.read(&m.beta)?.into_data(),
        eps: m.eps,
    })
}

fn linear_to_manifest(blob: &mut BlobWriter, lin: &LinearLayerParams) -> LinearManifest {
    LinearManifest {
        weight: blob.push_f32(lin.weight.shape(), lin.weight.data()),
        bias: blob.push_f32(&[lin.bias.len()], &lin.bias),
    }
}

fn linear_from_manifest(blob: &BlobReader, m: &LinearManifest) -> Result<LinearLayerParams> {
    LinearLayerParams::new(blob.read(&m.weight)?, blob.read(&m.bias)?.into_data())
        .map_err(FormatError::Core)
}

fn params_to_manifest(blob: &mut BlobWriter, p: &UniformQuantParams) -> UniformParamsManifest {
    UniformParamsManifest {
        scale: write_vec(blob, &p.scale),
        zero_point: write_vec(blob, &p.zero_point),
        bits: p.bits,
        granularity: p.granularity,
    }
}

fn params_from_manifest(blob: &BlobReader, m: &UniformParamsManifest) -> Result<UniformQuantParams> {
    UniformQuantParams::new(
        read_vec(blob, &m.scale)?,
        read_vec(blob, &m.zero_point)?,
        m.bits,
        m.granularity,
    )
    .map_err(FormatError::Core)
}

// ---------------------------------------------------------------------------
// Public API
// ---------------------------------------------------------------------------

pub fn write_model(path: &Path, model: &ToyModel) -> Result<()> {
    let blob_name = default_blob_name(path)?;
    let mut blob = BlobWriter::default();
    let blocks = model
        .blocks
        .iter()
        .map(|b| BlockManifest {
            ln1: ln_to_manifest(&mut blob, &b.ln1),
            ln2: ln_to_manifest(&mut blob, &b.ln2),
            wq: linear_to_manifest(&mut blob, &b.wq),
            wk: linear_to_manifest(&mut blob, &b.wk),
            wv: linear_to_manifest(&mut blob, &b.wv),
            wo: linear_to_manifest(&mut blob, &b.wo),
            mlp_up: linear_to_manifest(&mut blob, &b.mlp_up),
            mlp_down: linear_to_manifest(&mut blob, &b.mlp_down),
            heads: b.heads,
            causal: b.causal,
        })
        .collect();
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        kind: "model".into(),
        blob: blob_name.clone(),
        embed_dim: model.embed_dim,
        tokens: model.tokens,
        blocks,
    };
    write_pair(path, &manifest, blob, &blob_name)
}

pub fn read_model(path: &Path) -> Result<ToyModel> {
    let manifest: ModelManifest = read_manifest(path, "model")?;
    let blob = load_blob(path, &manifest.blob)?;
    let blocks = manifest
        .blocks
        .iter()
        .map(|b| -> Result<TransformerBlock> {
            Ok(TransformerBlock {
                ln1: ln_from_manifest(&blob, &b.ln1)?,
                ln2: ln_from_manifest(&blob, &b.ln2)?,
                wq: linear_from_manifest(&blob, &b.wq)?,
                wk: linear_from_manifest(&blob, &b.wk)?,
                wv: linear_from_manifest(&blob, &b.wv)?,
                wo: linear_from_manifest(&blob, &b.wo)?,
                mlp_up: linear_from_manifest(&blob, &b.mlp_up)?,
                mlp_down: linear_from_manifest(&blob, &b.mlp_down)?,
                heads: b.heads,
                causal: b.causal,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = ToyModel {
        blocks,
        embed_dim: manifest.embed_dim,
        tokens: manifest.tokens,
    };
    model.validate().map_err(FormatError::Core)?;
    Ok(model)
}

pub fn write_dataset(path: &Path, data: &Tensor) -> Result<()> {
    let blob_name = default_blob_name(path)?;
    let mut blob = BlobWriter::default();
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        kind: "dataset".into(),
        blob: blob_name.clone(),
        data: blob.push_f32(data.shape(), data.data()),
    };
    write_pair(path, &manifest, blob, &blob_name)
}

pub fn read_dataset(path: &Path) -> Result<Tensor> {
    let manifest: DatasetManifest = read_manifest(path, "dataset")?;
    let blob = load_blob(path, &manifest.blob)?;
    blob.read(&manifest.data)
}

pub fn write_quantized(path: &Path, qm: &QuantizedModel) -> Result<()> {
    if qm.config.weight_bits > 8 || qm.config.act_bits > 8 {
        return Err(FormatError::Format(format!(
            "artifact stores codes as u8; bit-widths {}/{} exceed 8",
            qm.config.weight_bits, qm.config.act_bits
        )));
    }
    let blob_name = default_blob_name(path)?;
    let mut blob = BlobWriter::default();
    let model = &qm.model;

    let mut layernorms = Vec::new();
    for (i, b) in model.blocks.iter().enumerate() {
        for (slot, ln) in [("ln1", &b.ln1), ("ln2", &b.ln2)] {
            layernorms.push(LayerNormSlotManifest {
                block: i,
                slot: slot.into(),
                ln: ln_to_manifest(&mut blob, ln),
            });
        }
    }

    let acts = qm
        .acts
        .iter()
        .map(|((block, site), q)| ActRecordManifest {
            block: *block,
            site: *site,
            quant: match q {
                ActQuant::Uniform { params } => ActQuantManifest::Uniform {
                    params: params_to_manifest(&mut blob, params),
                },
                ActQuant::Log2 { scale, bits } => ActQuantManifest::Log2 {
                    scale: f32_round(*scale),
                    bits: *bits,
                },
                ActQuant::Log2Reparam { scale, bits } => ActQuantManifest::Log2Reparam {
                    scale: f32_round(*scale),
                    bits: *bits,
                },
            },
        })
        .collect();

    let weights = qm
        .weights
        .iter()
        .map(|((block, kind), w)| -> Result<WeightRecordManifest> {
            let bias = match kind {
                WeightKind::Wq => &model.blocks[*block].wq.bias,
                WeightKind::Wk => &model.blocks[*block].wk.bias,
                WeightKind::Wv => &model.blocks[*block].wv.bias,
                WeightKind::Wo => &model.blocks[*block].wo.bias,
                WeightKind::MlpUp => &model.blocks[*block].mlp_up.bias,
                WeightKind::MlpDown => &model.blocks[*block].mlp_down.bias,
            };
            Ok(WeightRecordManifest {
                block: *block,
                name: *kind,
                params: params_to_manifest(&mut blob, &w.params),
                codes: blob.push_u8(w.codes.shape(), w.codes.data())?,
                bias: blob.push_f32(&[bias.len()], bias),
                cholesky_fallback: w.cholesky_fallback,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let audits = qm
        .audits
        .iter()
        .map(|a| AuditManifest {
            block: a.block,
            site: a.site,
            r1: write_vec(&mut blob, &a.r1),
            r2: write_vec(&mut blob, &a.r2),
            scale: a.scale,
            zero_point: a.zero_point,
            zero_point_exact: a.zero_point_exact,
            zero_point_residual: a.zero_point_residual,
        })
        .collect();

    let manifest = QuantizedManifest {
        format_version: FORMAT_VERSION,
        kind: "quantized-model".into(),
        blob: blob_name.clone(),
        config: qm.config.clone(),
        embed_dim: model.embed_dim,
        tokens: model.tokens,
        heads: model.blocks[0].heads,
        causal: model.blocks[0].causal,
        n_blocks: model.blocks.len(),
        layernorms,
        acts,
        weights,
        audits,
    };
    write_pair(path, &manifest, blob, &blob_name)
}

pub fn read_quantized(path: &Path) -> Result<QuantizedModel> {
    let manifest: QuantizedManifest = read_manifest(path, "quantized-model")?;
    let blob = load_blob(path, &manifest.blob)?;

    let mut lns: BTreeMap<(usize, String), LayerNormParams> = BTreeMap::new();
    for slot in &manifest.layernorms {
        lns.insert(
            (slot.block, slot.slot.clone()),
            ln_from_manifest(&blob, &slot.ln)?,
        );
    }

    let mut weights: BTreeMap<(usize, WeightKind), WeightQuant> = BTreeMap::new();
    let mut linears: BTreeMap<(usize, WeightKind), LinearLayerParams> = BTreeMap::new();
    for w in &manifest.weights {
        let params = params_from_manifest(&blob, &w.params)?;
        let codes = blob.read(&w.codes)?;
        let bias = blob.read(&w.bias)?.into_data();
        let dequant = uniform_dequant(&codes, &params).map_err(FormatError::Core)?;
        linears.insert(
            (w.block, w.name),
            LinearLayerParams::new(dequant, bias).map_err(FormatError::Core)?,
        );
        weights.insert(
            (w.block, w.name),
            WeightQuant {
                params,
                cholesky_fallback: w.cholesky_fallback,
                codes,
            },
        );
    }

    let mut blocks = Vec::with_capacity(manifest.n_blocks);
    for b in 0..manifest.n_blocks {
        let take = |kind: WeightKind| -> Result<LinearLayerParams> {
            linears
                .get(&(b, kind))
                .cloned()
                .ok_or_else(|| FormatError::Format(format!("missing weight {}/{}", b, kind)))
        };
        let take_ln = |slot: &str| -> Result<LayerNormParams> {
            lns.get(&(b, slot.to_string()))
                .cloned()
                .ok_or_else(|| FormatError::Format(format!("missing layernorm {}/{}", b, slot)))
        };
        blocks.push(TransformerBlock {
            ln1: take_ln("ln1")?,
            ln2: take_ln("ln2")?,
            wq: take(WeightKind::Wq)?,
            wk: take(WeightKind::Wk)?,
            wv: take(WeightKind::Wv)?,
            wo: take(WeightKind::Wo)?,
            mlp_up: take(WeightKind::MlpUp)?,
            mlp_down: take(WeightKind::MlpDown)?,
            heads: manifest.heads,
            causal: manifest.causal,
        });
    }

    let mut acts = BTreeMap::new();
    for a in &manifest.acts {
        let quant = match &a.quant {
            ActQuantManifest::Uniform { params } => ActQuant::Uniform {
                params: params_from_manifest(&blob, params)?,
            },
            ActQuantManifest::Log2 { scale, bits } => ActQuant::Log2 {
                scale: *scale,
                bits: *bits,
            },
            ActQuantManifest::Log2Reparam { scale, bits } => ActQuant::Log2Reparam {
                scale: *scale,
                bits: *bits,
            },
        };
        acts.insert((a.block, a.site), quant);
    }

    let audits = manifest
        .audits
        .iter()
        .map(|a| -> Result<ReparamAudit> {
            Ok(ReparamAudit {
                block: a.block,
                site: a.site,
                r1: read_vec(&blob, &a.r1)?,
                r2: read_vec(&blob, &a.r2)?,
                scale: a.scale,
                zero_point: a.zero_point,
                zero_point_exact: a.zero_point_exact,
                zero_point_residual: a.zero_point_residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let model = ToyModel {
        blocks,
        embed_dim: manifest.embed_dim,
        tokens: manifest.tokens,
    };
    model.validate().map_err(FormatError::Core)?;
    Ok(QuantizedModel {
        model,
        acts,
        weights,
        audits,
        config: manifest.config,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    std::fs::write(path, json)?;
    Ok(())
}

pub fn write_report(path: &Path, config: &QuantConfig, layers: &[LayerReport]) -> Result<()> {
    write_json(
        path,
        &ReportFile {
            format_version: FORMAT_VERSION,
            kind: "report".into(),
            config: config.clone(),
            layers: layers.to_vec(),
        },
    )
}

pub fn write_metrics(path: &Path, config: &QuantConfig, metrics: &EvalMetrics) -> Result<()> {
    write_json(
        path,
        &MetricsFile {
            format_version: FORMAT_VERSION,
            kind: "metrics".into(),
            config: config.clone(),
            metrics: metrics.clone(),
        },
    )
}

pub fn write_grid(path: &Path, config: &QuantConfig, rows: &[AblationRow]) -> Result<()> {
    write_json(
        path,
        &GridFile {
            format_version: FORMAT_VERSION,
            kind: "ablation-grid".into(),
            config: config.clone(),
            rows: rows.to_vec(),
        },
    )
}

/// Any of the JSON output documents, for CSV conversion.
pub enum OutputDoc {
    Report(ReportFile),
    Metrics(MetricsFile),
    Grid(GridFile),
}

pub fn read_output(path: &Path) -> Result<OutputDoc> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| FormatError::Format("missing format_version".into()))?
        as u32;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version { found: version });
    }
    match value.get("kind").and_then(|v| v.as_str()) {
        Some("report") => Ok(OutputDoc::Report(serde_json::from_value(value)?)),
        Some("metrics") => Ok(OutputDoc::Metrics(serde_json::from_value(value)?)),
        Some("ablation-grid") => Ok(OutputDoc::Grid(serde_json::from_value(value)?)),
        other => Err(FormatError::Format(format!(
            "not a convertible report file (kind {:?})",
            other
        ))),
    }
}

/// Flatten a report document into CSV for external plotting.
pub fn to_csv(doc: &OutputDoc) -> String {
    let mut out = String::new();
    match doc {
        OutputDoc::Report(r) => {
            out.push_str("layer,kind,pre_loss,post_loss,clip_best_iter,flags\n");
            for l in &r.layers {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    l.layer,
                    l.kind,
                    l.pre_loss,
                    l.post_loss,
                    l.clip_best_iter.map(|i| i.to_string()).unwrap_or_default(),
                    l.flags.join(";")
                ));
            }
        }
        OutputDoc::Metrics(m) => {
            out.push_str("metric,value\n");
            out.push_str(&format!("output_mse,{}\n", m.metrics.output_mse));
            out.push_str(&format!(
                "cosine_similarity,{}\n",
                m.metrics.cosine_similarity
            ));
            for e in &m.metrics.per_layer_sqnr {
                out.push_str(&format!("sqnr_db[{}],{}\n", e.layer, e.sqnr_db));
            }
        }
        OutputDoc::Grid(g) => {
            out.push_str("label,clip,gptq,output_mse,cosine_similarity\n");
            for r in &g.rows {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.label, r.clip, r.gptq, r.output_mse, r.cosine_similarity
                ));
            }
        }
    }
    out
}
