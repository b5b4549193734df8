//! Checkpoint archives: a safetensors file holding every parameter, the
//! optimizer moments and the replay buffer, with the remaining run state as
//! JSON under the `__metadata__` key `g2gan`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::step::{RunningAverages, Trainer};
use super::TrainConfig;
use crate::networks::{build_generator_pair, GeneratorPair, NetworkConfig, Param, Parameterized};
use crate::{Error, Result};

const META_KEY: &str = "g2gan";
const FORMAT_VERSION: u32 = 1;

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch}.archive")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    version: u32,
    config: TrainConfig,
    network: NetworkConfig,
    epoch: usize,
    iteration: usize,
    rng: RngState,
    /// Optimizer name to per-parameter step counts.
    steps: BTreeMap<String, BTreeMap<String, u64>>,
    buffer_len: usize,
    buffer_counts: (u64, u64),
    running: RunningAverages,
    #[serde(default)]
    domain_names: Vec<String>,
}

fn to_bytes(t: &Tensor) -> Result<(Dtype, Vec<usize>, Vec<u8>)> {
    let shape = t.dims().to_vec();
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => (
            Dtype::F64,
            shape,
            flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
        _ => (
            Dtype::F32,
            shape,
            flat.to_dtype(DType::F32)?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        ),
    })
}

fn from_view(view: &TensorView<'_>, dtype: DType) -> Result<Tensor> {
    let data = view.data();
    let t = match view.dtype() {
        Dtype::F64 => {
            let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, view.shape(), &Device::Cpu)?
        }
        Dtype::F32 => {
            let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, view.shape(), &Device::Cpu)?
        }
        other => return Err(Error::Checkpoint(format!("unsupported tensor dtype {other:?}"))),
    };
    Ok(t.to_dtype(dtype)?)
}

fn ckpt_err(e: safetensors::SafeTensorError) -> Error {
    Error::Checkpoint(e.to_string())
}

/// Writes the full trainer state. The archive is written beside `path` and
/// renamed into place, so an interrupted write never clobbers an existing
/// checkpoint.
pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let mut entries: Vec<(String, (Dtype, Vec<usize>, Vec<u8>))> = Vec::new();
    for p in trainer.parameters() {
        entries.push((p.name.clone(), to_bytes(p.var.as_tensor())?));
    }
    let mut steps = BTreeMap::new();
    for (opt_name, opt) in trainer.optimizers() {
        let mut counts = BTreeMap::new();
        for (p, m) in opt.params().iter().zip(opt.moments()) {
            entries.push((format!("optim.{opt_name}.m.{}", p.name), to_bytes(&m.m)?));
            entries.push((format!("optim.{opt_name}.v.{}", p.name), to_bytes(&m.v)?));
            counts.insert(p.name.clone(), m.step);
        }
        steps.insert(opt_name.to_string(), counts);
    }
    for (i, img) in trainer.buffer.images().iter().enumerate() {
        entries.push((format!("buffer.{i:03}"), to_bytes(img)?));
    }
    let rng = &trainer.rng;
    let meta = Metadata {
        version: FORMAT_VERSION,
        config: trainer.cfg.clone(),
        network: trainer.net,
        epoch: trainer.epoch,
        iteration: trainer.iteration,
        rng: RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        },
        steps,
        buffer_len: trainer.buffer.len(),
        buffer_counts: trainer.buffer.swap_counts(),
        running: trainer.running.clone(),
        domain_names: trainer.domain_names.clone(),
    };
    let views = entries
        .iter()
        .map(|(name, (dtype, shape, data))| Ok((name.clone(), TensorView::new(*dtype, shape.clone(), data).map_err(ckpt_err)?)))
        .collect::<Result<Vec<_>>>()?;
    let info = HashMap::from([(META_KEY.to_string(), serde_json::to_string(&meta)?)]);
    let bytes = safetensors::tensor::serialize(views, Some(info)).map_err(ckpt_err)?;
    let tmp = temp_path(path);
    std::fs::write(&tmp, bytes).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(&tmp, e)
    })?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

struct Archive {
    bytes: Vec<u8>,
    meta: Metadata,
}

impl Archive {
    fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(ckpt_err)?;
        let json = header
            .metadata()
            .as_ref()
            .and_then(|m| m.get(META_KEY))
            .ok_or_else(|| Error::Checkpoint(format!("{} has no run metadata", path.display())))?;
        let meta: Metadata = serde_json::from_str(json)?;
        if meta.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", meta.version)));
        }
        Ok(Archive { bytes, meta })
    }

    fn tensors(&self) -> Result<SafeTensors<'_>> {
        SafeTensors::deserialize(&self.bytes).map_err(ckpt_err)
    }
}

fn load_params(st: &SafeTensors<'_>, params: &[Param]) -> Result<()> {
    for p in params {
        let view = st
            .tensor(&p.name)
            .map_err(|_| Error::Checkpoint(format!("missing parameter {}", p.name)))?;
        let target = p.var.as_tensor();
        if view.shape() != target.dims() {
            return Err(Error::Checkpoint(format!(
                "{}: stored shape {:?}, expected {:?}",
                p.name,
                view.shape(),
                target.dims()
            )));
        }
        p.var.set(&from_view(&view, target.dtype())?)?;
    }
    Ok(())
}

/// Rebuilds a trainer exactly as it was when the checkpoint was written.
pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let archive = Archive::open(path)?;
    let meta = &archive.meta;
    let mut trainer = Trainer::new(meta.config.clone(), meta.network.m, meta.network.resolution)?;
    let st = archive.tensors()?;
    load_params(&st, &trainer.parameters())?;
    let dtype = trainer.dtype;
    for (opt_name, opt) in [("d", &mut trainer.opt_d), ("gt", &mut trainer.opt_gt), ("gr", &mut trainer.opt_gr)] {
        let names: Vec<String> = opt.params().iter().map(|p| p.name.clone()).collect();
        let counts = meta.steps.get(opt_name);
        for (name, state) in names.iter().zip(opt.moments_mut()) {
            let read = |kind: &str| -> Result<Tensor> {
                let key = format!("optim.{opt_name}.{kind}.{name}");
                let view = st.tensor(&key).map_err(|_| Error::Checkpoint(format!("missing {key}")))?;
                from_view(&view, dtype)
            };
            state.m = read("m")?;
            state.v = read("v")?;
            state.step = counts.and_then(|c| c.get(name)).copied().unwrap_or(0);
        }
    }
    let mut pool = Vec::with_capacity(meta.buffer_len);
    for i in 0..meta.buffer_len {
        let key = format!("buffer.{i:03}");
        let view = st.tensor(&key).map_err(|_| Error::Checkpoint(format!("missing {key}")))?;
        pool.push(from_view(&view, dtype)?);
    }
    trainer.buffer.restore(pool, meta.buffer_counts);
    let mut rng = ChaCha8Rng::from_seed(meta.rng.seed);
    rng.set_stream(meta.rng.stream);
    rng.set_word_pos(
        meta.rng
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng position".into()))?,
    );
    trainer.rng = rng;
    trainer.epoch = meta.epoch;
    trainer.iteration = meta.iteration;
    trainer.running = meta.running.clone();
    trainer.domain_names = meta.domain_names.clone();
    Ok(trainer)
}

/// Generators and run description restored from a checkpoint.
pub struct GeneratorCheckpoint {
    pub generators: GeneratorPair,
    pub config: TrainConfig,
    pub network: NetworkConfig,
    /// Empty when the trainer never saw a dataset.
    pub domain_names: Vec<String>,
}

/// Just the generators, for translation and evaluation.
pub fn load_generators(path: &Path) -> Result<GeneratorCheckpoint> {
    let archive = Archive::open(path)?;
    let meta = &archive.meta;
    let generators = build_generator_pair(&meta.network, meta.config.sharing_mode, meta.config.precision.dtype())?;
    load_params(&archive.tensors()?, &generators.parameters())?;
    Ok(GeneratorCheckpoint {
        generators,
        config: meta.config.clone(),
        network: meta.network,
        domain_names: meta.domain_names.clone(),
    })
}

/// Name a parameter of `pair` may carry in an archive written under a
/// different sharing mode: `translator.*` and `reconstructor.*` fall back to
/// `shared.*`.
fn shared_alias(name: &str) -> Option<String> {
    ["translator.", "reconstructor."]
        .iter()
        .find_map(|p| name.strip_prefix(p))
        .map(|rest| format!("shared.{rest}"))
}

/// Copies generator weights from any checkpoint into `pair`, whatever the
/// sharing mode either side was built with. Weights stored once under a
/// shared name load into both generators. Returns how many parameters
/// were filled; every parameter of `pair` must be found.
pub fn seed_generators(path: &Path, pair: &GeneratorPair) -> Result<usize> {
    let archive = Archive::open(path)?;
    let st = archive.tensors()?;
    let names: std::collections::HashSet<String> = st.names().into_iter().map(str::to_string).collect();
    let params = pair.parameters();
    for p in &params {
        let source = if names.contains(&p.name) {
            p.name.clone()
        } else {
            shared_alias(&p.name)
                .filter(|alias| names.contains(alias))
                .ok_or_else(|| Error::Checkpoint(format!("{} holds no weights for {}", path.display(), p.name)))?
        };
        let renamed = Param {
            name: source,
            ..p.clone()
        };
        load_params(&st, std::slice::from_ref(&renamed))?;
    }
    Ok(params.len())
}
