//! Binary `.gtms` scene files and `.gtmc` training checkpoints.
//!
//! All integers and floats are little-endian. The full byte layout is in
//! `docs/file-formats.md`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{GtmError, Result};
use crate::mlp::{Linear, MlpParams};
use crate::model::{AnchorSet, EncoderMode, HeadSet, ModelConfig, SceneModel, TimeEmbeddingTable};
use crate::optim::{AdamState, Moments};
use crate::train::AdaptStats;

pub const SCENE_MAGIC: &[u8; 4] = b"GTMS";
pub const SCENE_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GTMC";
pub const CHECKPOINT_VERSION: u16 = 1;

const FLAG_POSITIONAL: u16 = 1;
/// Fixed header bytes before the head dimension table.
const SCENE_HEADER_LEN: usize = 52;
const NUM_HEADS: usize = 5;

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| GtmError::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(GtmError::io(path, e));
    }
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.0.reserve(v.len() * 4);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn blob(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(GtmError::Format(format!(
                "truncated at byte {}: {what} needs {n} bytes, {} remain",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| GtmError::Format(format!("{what}: element count {n} overflows")))?;
        let raw = self.take(len, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| GtmError::Format(format!("{what}: element count {n} overflows")))?;
        let raw = self.take(len, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn blob(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.u64(what)?;
        let n = usize::try_from(n).map_err(|_| GtmError::Format(format!("{what}: length {n} too large")))?;
        self.take(n, what)
    }
    fn magic(&mut self, want: &[u8; 4], kind: &str) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != want {
            return Err(GtmError::Format(format!("not a {kind} file (bad magic {got:?})")));
        }
        Ok(())
    }
    fn finish(&self, kind: &str) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(GtmError::Format(format!(
                "{kind} has {} trailing bytes after byte {}",
                self.bytes.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

const HEAD_NAMES: [&str; NUM_HEADS] = ["opacity", "static_color", "dynamic_color", "blend", "covariance"];

fn expected_head_dims(config: &ModelConfig) -> [Vec<usize>; NUM_HEADS] {
    let k = config.offsets_per_anchor;
    [
        config.head_dims(true, k),
        config.head_dims(false, 3 * k),
        config.head_dims(true, 3 * k),
        config.head_dims(true, k),
        config.head_dims(false, 7 * k),
    ]
}

/// Serializes a scene; the model is stored in single precision.
pub fn encode_scene(model: &SceneModel<f32>) -> Result<Vec<u8>> {
    model.validate()?;
    let cfg = &model.config;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(SCENE_MAGIC);
    w.u16(SCENE_VERSION);
    w.u16(if cfg.encoder == EncoderMode::Positional {
        FLAG_POSITIONAL
    } else {
        0
    });
    w.u32(model.anchors.len());
    w.u32(cfg.offsets_per_anchor);
    w.u32(cfg.feature_dim);
    w.u32(cfg.time_dim());
    w.u32(model.num_times());
    w.u32(cfg.embedding_dim);
    w.u32(cfg.pe_levels);
    w.f64(model.scene_extent);
    w.u32(cfg.hidden_layers);
    w.u32(cfg.hidden_width);
    debug_assert_eq!(w.0.len(), SCENE_HEADER_LEN);
    for head in model.heads.heads() {
        for d in head.dims() {
            w.u32(d);
        }
    }
    let a = &model.anchors;
    w.f32s(&a.centers);
    w.f32s(&a.features);
    w.f32s(&a.offsets);
    w.f32s(&a.log_scalings);
    for head in model.heads.heads() {
        for layer in &head.layers {
            w.f32s(&layer.weight);
            w.f32s(&layer.bias);
        }
    }
    w.f32s(&model.embeddings.data);
    Ok(w.0)
}

pub fn decode_scene(bytes: &[u8]) -> Result<SceneModel<f32>> {
    let mut r = Reader::new(bytes);
    let model = read_scene(&mut r)?;
    r.finish("scene")?;
    Ok(model)
}

fn read_scene(r: &mut Reader<'_>) -> Result<SceneModel<f32>> {
    r.magic(SCENE_MAGIC, "GTMS scene")?;
    let version = r.u16("version")?;
    if version != SCENE_VERSION {
        return Err(GtmError::Format(format!("unsupported scene version {version}")));
    }
    let flags = r.u16("flags")?;
    if flags & !FLAG_POSITIONAL != 0 {
        return Err(GtmError::Format(format!("unknown scene flags {flags:#06x}")));
    }
    let n = r.u32("anchor count")?;
    let k = r.u32("offsets per anchor")?;
    let f = r.u32("feature dim")?;
    let time_dim = r.u32("time vector width")?;
    let num_times = r.u32("time count")?;
    let embedding_dim = r.u32("embedding dim")?;
    let pe_levels = r.u32("positional levels")?;
    let scene_extent = r.f64("scene extent")?;
    let hidden_layers = r.u32("hidden layer count")?;
    let hidden_width = r.u32("hidden width")?;
    let config = ModelConfig {
        feature_dim: f,
        offsets_per_anchor: k,
        embedding_dim,
        hidden_width,
        hidden_layers,
        encoder: if flags & FLAG_POSITIONAL != 0 {
            EncoderMode::Positional
        } else {
            EncoderMode::Embedding
        },
        pe_levels,
    };
    config
        .validate()
        .map_err(|e| GtmError::Format(format!("invalid header: {e}")))?;
    if config.time_dim() != time_dim {
        return Err(GtmError::Format(format!(
            "header time width {time_dim} disagrees with encoder width {}",
            config.time_dim()
        )));
    }
    if !(scene_extent.is_finite() && scene_extent > 0.0) {
        return Err(GtmError::Format(format!("invalid scene extent {scene_extent}")));
    }
    if num_times == 0 {
        return Err(GtmError::Format("scene has zero time steps".into()));
    }

    let expected = expected_head_dims(&config);
    for (name, want) in HEAD_NAMES.iter().zip(&expected) {
        let table_at = r.pos;
        let got = r.u32s(hidden_layers + 2, "head dimension table")?;
        if got.iter().zip(want).any(|(&g, &w)| g as usize != w) {
            return Err(GtmError::Format(format!(
                "{name} head dims {got:?} at byte {table_at} are inconsistent with the header (expected {want:?})"
            )));
        }
    }

    let anchors = AnchorSet {
        feature_dim: f,
        offsets_per_anchor: k,
        centers: r.f32s(n * 3, "anchor centers")?,
        features: r.f32s(n * f, "anchor features")?,
        offsets: r.f32s(n * k * 3, "anchor offsets")?,
        log_scalings: r.f32s(n * 3, "anchor scalings")?,
    };
    let mut heads = Vec::with_capacity(NUM_HEADS);
    for (name, dims) in HEAD_NAMES.iter().zip(&expected) {
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for win in dims.windows(2) {
            let (in_dim, out_dim) = (win[0], win[1]);
            layers.push(Linear {
                in_dim,
                out_dim,
                weight: r.f32s(in_dim * out_dim, &format!("{name} head weights"))?,
                bias: r.f32s(out_dim, &format!("{name} head bias"))?,
            });
        }
        heads.push(MlpParams::from_layers(layers)?);
    }
    let mut heads = heads.into_iter();
    let mut next = || heads.next().expect("five heads");
    let heads = HeadSet {
        opacity: next(),
        static_color: next(),
        dynamic_color: next(),
        blend: next(),
        covariance: next(),
    };
    let embeddings = TimeEmbeddingTable {
        num_times,
        dim: time_dim,
        data: r.f32s(num_times * time_dim, "time embeddings")?,
    };
    let model = SceneModel {
        config,
        scene_extent,
        anchors,
        embeddings,
        heads,
    };
    model
        .validate()
        .map_err(|e| GtmError::Format(format!("invalid scene: {e}")))?;
    Ok(model)
}

pub fn save_scene(path: impl AsRef<Path>, model: &SceneModel<f32>) -> Result<()> {
    write_atomic(path, &encode_scene(model)?)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneModel<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| GtmError::io(path, e))?;
    decode_scene(&bytes).map_err(|e| match e {
        GtmError::Format(m) => GtmError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Everything needed to resume a training run bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Number of completed iterations.
    pub iteration: u64,
    pub model: SceneModel<f32>,
    pub adam: AdamState<f32>,
    pub adapt: AdaptStats,
    /// Training configuration as JSON.
    pub config_json: String,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.adam.check_shapes(&ckpt.model)?;
    ckpt.adapt.check_shapes(&ckpt.model)?;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.u16(0);
    w.u64(ckpt.iteration);
    w.u64(ckpt.adam.step);
    w.blob(&encode_scene(&ckpt.model)?);
    w.u32(ckpt.adam.moments.len());
    for mo in &ckpt.adam.moments {
        w.u64(mo.m.len() as u64);
        w.f32s(&mo.m);
        w.f32s(&mo.v);
    }
    w.u32(ckpt.adapt.max_opacity.len());
    w.f32s(&ckpt.adapt.max_opacity);
    w.u64(ckpt.adapt.grad_accum.len() as u64);
    w.f32s(&ckpt.adapt.grad_accum);
    for &c in &ckpt.adapt.grad_count {
        w.u32(c as usize);
    }
    w.blob(ckpt.config_json.as_bytes());
    Ok(w.0)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC, "GTMC checkpoint")?;
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(GtmError::Format(format!("unsupported checkpoint version {version}")));
    }
    r.u16("reserved")?;
    let iteration = r.u64("iteration")?;
    let step = r.u64("optimizer step")?;
    let scene_at = r.pos + 8;
    let scene = r.blob("embedded scene")?;
    let model = decode_scene(scene).map_err(|e| match e {
        GtmError::Format(m) => GtmError::Format(format!("embedded scene at byte {scene_at}: {m}")),
        other => other,
    })?;
    let count = r.u32("moment tensor count")?;
    let mut moments = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u64("moment length")? as usize;
        moments.push(Moments {
            m: r.f32s(len, "first moments")?,
            v: r.f32s(len, "second moments")?,
        });
    }
    let anchors = r.u32("anchor statistics count")?;
    let max_opacity = r.f32s(anchors, "max opacities")?;
    let slots = r.u64("gradient slot count")? as usize;
    let grad_accum = r.f32s(slots, "gradient accumulators")?;
    let grad_count = r.u32s(slots, "gradient counts")?;
    let config_json = String::from_utf8(r.blob("training config")?.to_vec())
        .map_err(|_| GtmError::Format("training config is not UTF-8".into()))?;
    r.finish("checkpoint")?;
    let ckpt = Checkpoint {
        iteration,
        model,
        adam: AdamState { step, moments },
        adapt: AdaptStats {
            max_opacity,
            grad_accum,
            grad_count,
        },
        config_json,
    };
    ckpt.adam
        .check_shapes(&ckpt.model)
        .and_then(|_| ckpt.adapt.check_shapes(&ckpt.model))
        .map_err(|e| GtmError::Format(format!("checkpoint is inconsistent: {e}")))?;
    Ok(ckpt)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| GtmError::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        GtmError::Format(m) => GtmError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
