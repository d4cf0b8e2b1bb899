//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!   magic        8 bytes  b"GCNCKPT\0"
//!   version      u32      currently 1
//!   topology     u8       0 = global taps, 1 = last block only
//!   class_count  u32
//!   bias flag    u8
//!   block count  u32
//!   per block:   padding u32, pool_after u8, activation u8
//!                (0 = relu; 1 = learnable piecewise, followed by
//!                 sharing u8, learn mode u8, unit count u32, n u32)
//!   manifest     u32 count, then per tensor: name (u32 len + utf8),
//!                rank u32, dims u32 each
//!   payload      f64 little-endian values, manifest order
//!
//! Activation parameters are serialized in ascending order (endpoints
//! l_-n..l_n, then the matching slopes). Normalization running
//! statistics are included so evaluation resumes exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grelu::{GReluLayer, GReluParams, LearnMode, SharingMode};
use crate::layers::{Activation, BatchNorm, Conv2d};
use crate::net::{Block, Classifier, GcNet, Topology};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"GCNCKPT\0";
const FORMAT_VERSION: u32 = 1;

struct Writer {
    bytes: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { bytes: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.bytes.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn name(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "checkpoint ends early: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let b = self.take(8 * count)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let b = self.take(len)?;
        String::from_utf8(b.to_vec())
            .map_err(|_| Error::Format("tensor name is not valid utf-8".to_string()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// One manifest row: tensor name and shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ManifestEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct BlockInfo {
    pub padding: usize,
    pub pool_after: bool,
    pub activation: String,
    pub act_units: usize,
    pub act_n: usize,
    pub learn_mode: String,
}

/// Header-level description of a checkpoint, for inspection without
/// rebuilding the model.
#[derive(Clone, Debug)]
pub struct CheckpointInfo {
    pub format_version: u32,
    pub topology: Topology,
    pub class_count: usize,
    pub with_bias: bool,
    pub blocks: Vec<BlockInfo>,
    pub manifest: Vec<ManifestEntry>,
}

impl CheckpointInfo {
    pub fn value_count(&self) -> usize {
        self.manifest.iter().map(|e| e.len()).sum()
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "format version {}\ntopology: {}\nclasses: {}\nclassifier bias: {}\n",
            self.format_version,
            match self.topology {
                Topology::Global => "every block feeds the classifier",
                Topology::LastOnly => "last block only",
            },
            self.class_count,
            if self.with_bias { "yes" } else { "no" },
        );
        for (i, b) in self.blocks.iter().enumerate() {
            s.push_str(&format!(
                "block {}: activation {}{}, padding {}, {}\n",
                i + 1,
                b.activation,
                if b.activation == "relu" {
                    String::new()
                } else {
                    format!(
                        " ({} unit{} of {} scalars each, {})",
                        b.act_units,
                        if b.act_units == 1 { "" } else { "s" },
                        4 * b.act_n,
                        b.learn_mode
                    )
                },
                b.padding,
                if b.pool_after {
                    "pooled after"
                } else {
                    "no pooling"
                },
            ));
        }
        s.push_str("tensors:\n");
        for e in &self.manifest {
            s.push_str(&format!("  {:<28} {:?}\n", e.name, e.shape));
        }
        s.push_str(&format!("total stored values: {}\n", self.value_count()));
        s
    }
}

fn learn_mode_code(m: LearnMode) -> u8 {
    match m {
        LearnMode::All => 0,
        LearnMode::Frozen => 1,
        LearnMode::NegSlopesOnly => 2,
    }
}

fn learn_mode_from(code: u8) -> Result<LearnMode> {
    match code {
        0 => Ok(LearnMode::All),
        1 => Ok(LearnMode::Frozen),
        2 => Ok(LearnMode::NegSlopesOnly),
        other => Err(Error::Format(format!("unknown learn mode code {other}"))),
    }
}

fn learn_mode_name(m: LearnMode) -> &'static str {
    match m {
        LearnMode::All => "all scalars learn",
        LearnMode::Frozen => "frozen",
        LearnMode::NegSlopesOnly => "negative slopes learn",
    }
}

/// The manifest and payload a network serializes to, in order.
fn tensors_of(net: &GcNet) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for (i, block) in net.blocks.iter().enumerate() {
        let b = i + 1;
        out.push((
            format!("block{b}.conv.weight"),
            block.conv.weight.shape().to_vec(),
            block.conv.weight.data().to_vec(),
        ));
        out.push((
            format!("block{b}.conv.bias"),
            vec![block.conv.bias.len()],
            block.conv.bias.clone(),
        ));
        out.push((
            format!("block{b}.norm.gamma"),
            vec![block.bn.gamma.len()],
            block.bn.gamma.clone(),
        ));
        out.push((
            format!("block{b}.norm.beta"),
            vec![block.bn.beta.len()],
            block.bn.beta.clone(),
        ));
        out.push((
            format!("block{b}.norm.running_mean"),
            vec![block.bn.running_mean.len()],
            block.bn.running_mean.clone(),
        ));
        out.push((
            format!("block{b}.norm.running_var"),
            vec![block.bn.running_var.len()],
            block.bn.running_var.clone(),
        ));
        if let Activation::GRelu(layer) = &block.act {
            for (u, unit) in layer.units().iter().enumerate() {
                out.push((
                    format!("block{b}.act.u{u}.endpoints"),
                    vec![2 * unit.n()],
                    unit.ascending_endpoints(),
                ));
                out.push((
                    format!("block{b}.act.u{u}.slopes"),
                    vec![2 * unit.n()],
                    unit.ascending_slopes(),
                ));
            }
        }
    }
    if let Some(c) = &net.classifier {
        out.push((
            "classifier.weight".to_string(),
            c.weight.shape().to_vec(),
            c.weight.data().to_vec(),
        ));
        if let Some(bias) = &c.bias {
            out.push(("classifier.bias".to_string(), vec![bias.len()], bias.clone()));
        }
    }
    out
}

pub fn save(net: &GcNet, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.bytes.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u8(match net.topology {
        Topology::Global => 0,
        Topology::LastOnly => 1,
    });
    w.u32(net.class_count as u32);
    w.u8(net.classifier.as_ref().is_some_and(|c| c.bias.is_some()) as u8);
    w.u32(net.blocks.len() as u32);
    for block in &net.blocks {
        w.u32(block.conv.padding as u32);
        w.u8(block.pool_after as u8);
        match &block.act {
            Activation::Relu => w.u8(0),
            Activation::GRelu(layer) => {
                w.u8(1);
                w.u8(match layer.sharing() {
                    SharingMode::Shared => 0,
                    SharingMode::PerChannel => 1,
                });
                w.u8(learn_mode_code(layer.units()[0].learn_mode));
                w.u32(layer.units().len() as u32);
                w.u32(layer.units()[0].n() as u32);
            }
        }
    }
    let tensors = tensors_of(net);
    w.u32(tensors.len() as u32);
    for (name, shape, _) in &tensors {
        w.name(name);
        w.u32(shape.len() as u32);
        for &d in shape {
            w.u32(d as u32);
        }
    }
    for (_, _, data) in &tensors {
        w.f64s(data);
    }
    fs::write(path, w.bytes)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(())
}

struct RawCheckpoint {
    info: CheckpointInfo,
    act_meta: Vec<Option<(SharingMode, LearnMode, usize, usize)>>,
    tensors: Vec<(ManifestEntry, Vec<f64>)>,
}

fn read_raw(path: &Path) -> Result<RawCheckpoint> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut r = Reader::new(&bytes);
    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a model checkpoint (bad magic bytes)",
            path.display()
        )));
    }
    let format_version = r.u32()?;
    if format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint format version {format_version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let topology = match r.u8()? {
        0 => Topology::Global,
        1 => Topology::LastOnly,
        other => return Err(Error::Format(format!("unknown topology code {other}"))),
    };
    let class_count = r.u32()? as usize;
    let with_bias = r.u8()? != 0;
    let block_count = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(block_count);
    let mut act_meta = Vec::with_capacity(block_count);
    for _ in 0..block_count {
        let padding = r.u32()? as usize;
        let pool_after = r.u8()? != 0;
        match r.u8()? {
            0 => {
                blocks.push(BlockInfo {
                    padding,
                    pool_after,
                    activation: "relu".to_string(),
                    act_units: 0,
                    act_n: 0,
                    learn_mode: String::new(),
                });
                act_meta.push(None);
            }
            1 => {
                let sharing = match r.u8()? {
                    0 => SharingMode::Shared,
                    1 => SharingMode::PerChannel,
                    other => {
                        return Err(Error::Format(format!("unknown sharing code {other}")))
                    }
                };
                let mode = learn_mode_from(r.u8()?)?;
                let units = r.u32()? as usize;
                let n = r.u32()? as usize;
                blocks.push(BlockInfo {
                    padding,
                    pool_after,
                    activation: "learnable piecewise".to_string(),
                    act_units: units,
                    act_n: n,
                    learn_mode: learn_mode_name(mode).to_string(),
                });
                act_meta.push(Some((sharing, mode, units, n)));
            }
            other => {
                return Err(Error::Format(format!("unknown activation code {other}")))
            }
        }
    }
    let manifest_count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(manifest_count);
    for _ in 0..manifest_count {
        let name = r.name()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        manifest.push(ManifestEntry { name, shape });
    }
    let mut tensors = Vec::with_capacity(manifest_count);
    for entry in &manifest {
        let data = r.f64s(entry.len())?;
        tensors.push((entry.clone(), data));
    }
    if !r.done() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the declared payload",
            bytes.len() - r.pos
        )));
    }
    Ok(RawCheckpoint {
        info: CheckpointInfo {
            format_version,
            topology,
            class_count,
            with_bias,
            blocks,
            manifest,
        },
        act_meta,
        tensors,
    })
}

/// Reads only the structural description of a checkpoint.
pub fn inspect(path: &Path) -> Result<CheckpointInfo> {
    Ok(read_raw(path)?.info)
}

/// Rebuilds the full network, running statistics included.
pub fn load(path: &Path) -> Result<GcNet> {
    let raw = read_raw(path)?;
    let mut by_name: std::collections::BTreeMap<String, (Vec<usize>, Vec<f64>)> = raw
        .tensors
        .into_iter()
        .map(|(e, d)| (e.name, (e.shape, d)))
        .collect();
    let mut take = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
        by_name
            .remove(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))
    };

    let mut net = GcNet::empty(raw.info.class_count);
    net.topology = raw.info.topology;
    for (i, (binfo, meta)) in raw.info.blocks.iter().zip(&raw.act_meta).enumerate() {
        let b = i + 1;
        let (wshape, wdata) = take(&format!("block{b}.conv.weight"))?;
        if wshape.len() != 4 {
            return Err(Error::Format(format!(
                "block{b}.conv.weight should be rank 4, found {wshape:?}"
            )));
        }
        let weight = Tensor::new(wshape, wdata)?;
        let (_, bias) = take(&format!("block{b}.conv.bias"))?;
        let conv = Conv2d {
            weight,
            bias,
            padding: binfo.padding,
        };
        let channels = conv.out_channels();
        let (_, gamma) = take(&format!("block{b}.norm.gamma"))?;
        let (_, beta) = take(&format!("block{b}.norm.beta"))?;
        let (_, running_mean) = take(&format!("block{b}.norm.running_mean"))?;
        let (_, running_var) = take(&format!("block{b}.norm.running_var"))?;
        if gamma.len() != channels
            || beta.len() != channels
            || running_mean.len() != channels
            || running_var.len() != channels
        {
            return Err(Error::Format(format!(
                "block{b} normalization vectors disagree with {channels} channels"
            )));
        }
        let mut bn = BatchNorm::new(channels);
        bn.gamma = gamma;
        bn.beta = beta;
        bn.running_mean = running_mean;
        bn.running_var = running_var;
        let act = match meta {
            None => Activation::Relu,
            Some((sharing, mode, units, n)) => {
                let mut list = Vec::with_capacity(*units);
                for u in 0..*units {
                    let (_, asc_l) = take(&format!("block{b}.act.u{u}.endpoints"))?;
                    let (_, asc_k) = take(&format!("block{b}.act.u{u}.slopes"))?;
                    if asc_l.len() != 2 * n || asc_k.len() != 2 * n {
                        return Err(Error::Format(format!(
                            "block{b}.act.u{u} should hold {} values per vector",
                            2 * n
                        )));
                    }
                    let params = GReluParams::new(
                        asc_l[..*n].iter().rev().cloned().collect(),
                        asc_l[*n..].to_vec(),
                        asc_k[..*n].iter().rev().cloned().collect(),
                        asc_k[*n..].to_vec(),
                        *mode,
                    )
                    .map_err(|e| {
                        Error::Format(format!("block{b}.act.u{u} is not a valid parameter set: {e}"))
                    })?;
                    list.push(params);
                }
                Activation::GRelu(
                    GReluLayer::from_units(list, *sharing)
                        .map_err(|e| Error::Format(format!("block{b}.act: {e}")))?,
                )
            }
        };
        net.blocks.push(Block::new(conv, bn, act, binfo.pool_after));
    }

    let m = net.feature_width();
    let (wshape, wdata) = take("classifier.weight")?;
    if wshape.len() != 2 || wshape[0] != m || wshape[1] != raw.info.class_count {
        return Err(Error::Format(format!(
            "classifier.weight shape {wshape:?} does not match {m} features x {} classes",
            raw.info.class_count
        )));
    }
    let bias = if raw.info.with_bias {
        Some(take("classifier.bias")?.1)
    } else {
        None
    };
    net.classifier = Some(Classifier {
        weight: Tensor::new(wshape, wdata)?,
        bias,
    });
    if !by_name.is_empty() {
        let names: Vec<String> = by_name.keys().cloned().collect();
        return Err(Error::Format(format!(
            "checkpoint holds unexpected tensors: {names:?}"
        )));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::kernels::Mode;
    use crate::net::{build_chain, build_smallnet, ActivationKind};
    use crate::trainer::{train, TrainConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64) -> GcNet {
        build_chain(
            &[3, 4],
            &[true, false],
            1,
            3,
            ActivationKind::GRelu,
            Topology::Global,
            true,
            seed,
        )
    }

    #[test]
    fn save_and_load_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut net = toy(5);
        // Train a little so running statistics differ from their
        // initialization and must survive the round trip.
        let ds = synth_blobs(3, 4, 8, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            freeze_epochs: 0,
            deterministic: true,
            ..TrainConfig::default()
        };
        train(&mut net, &ds, None, &cfg).unwrap();

        save(&net, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.flatten_params(), net.flatten_params());
        assert_eq!(loaded.blocks[0].bn.running_mean, net.blocks[0].bn.running_mean);
        assert_eq!(loaded.blocks[0].bn.running_var, net.blocks[0].bn.running_var);
        assert_eq!(loaded.class_count, net.class_count);
        assert_eq!(loaded.topology, net.topology);

        let mut a = net.clone();
        let mut b = loaded;
        let x = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            Tensor::uniform(vec![2, 1, 8, 8], -1.0, 1.0, &mut rng)
        };
        let (la, _) = a.forward(&x, Mode::Eval).unwrap();
        let (lb, _) = b.forward(&x, Mode::Eval).unwrap();
        assert_eq!(la, lb);
    }

    #[test]
    fn relu_baseline_round_trips_too() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("relu.ckpt");
        let net = build_chain(
            &[2, 3],
            &[true, false],
            1,
            4,
            ActivationKind::Relu,
            Topology::LastOnly,
            false,
            9,
        );
        save(&net, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.flatten_params(), net.flatten_params());
        assert!(loaded.classifier.as_ref().unwrap().bias.is_none());
        assert_eq!(loaded.topology, Topology::LastOnly);
        assert!(matches!(loaded.blocks[0].act, Activation::Relu));
    }

    #[test]
    fn inspection_reports_structure_without_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let net = build_smallnet(ActivationKind::GRelu, Topology::Global, true, 1);
        save(&net, &path).unwrap();
        let info = inspect(&path).unwrap();
        assert_eq!(info.class_count, 10);
        assert_eq!(info.blocks.len(), 3);
        assert!(info.blocks.iter().all(|b| b.act_n == 2 && b.act_units == 1));
        assert!(info.manifest.iter().any(|e| e.name == "classifier.weight"));
        let rendered = info.render();
        assert!(rendered.contains("block 1"));
        assert!(rendered.contains("8 scalars"));
    }

    #[test]
    fn tampered_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&toy(1), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] ^= 0xFF;
        fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&toy(1), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn future_format_versions_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&toy(1), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn per_channel_activations_round_trip() {
        let mut net = toy(12);
        let channels = net.blocks[0].conv.out_channels();
        net.blocks[0].act = Activation::GRelu(GReluLayer::per_channel(
            GReluParams::default_init(),
            channels,
        ));
        // Make the units distinct so sharing bugs cannot hide.
        if let Activation::GRelu(layer) = &mut net.blocks[0].act {
            for (u, unit) in layer.units_mut().iter_mut().enumerate() {
                let mut l = unit.ascending_endpoints();
                let k = unit.ascending_slopes();
                for v in &mut l {
                    *v += 0.01 * u as f64;
                }
                unit.set_from_ascending(&l, &k).unwrap();
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pc.ckpt");
        save(&net, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.flatten_params(), net.flatten_params());
        if let Activation::GRelu(layer) = &loaded.blocks[0].act {
            assert_eq!(layer.units().len(), channels);
            assert_eq!(layer.sharing(), SharingMode::PerChannel);
        } else {
            panic!("activation kind lost in round trip");
        }
    }
}
