//! Canonical binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LGCK" | u16 version | u8 kind (1 lego, 2 single, 3 fixsisa)
//! u32 len | config block: canonical JSON
//! payload blocks (kind specific, see encode_*)
//! 32-byte SHA-256 over every preceding byte
//! ```
//!
//! Parameters are written as raw IEEE-754 f32 bits and never pass through
//! text, so equal states always produce equal bytes and vice versa.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterModel, TrainerConfig};
use crate::baselines::{FixSisaModel, SingleHeadModel};
use crate::digest::{bytes_digest, hex, Digest};
use crate::error::{LegoError, Result};
use crate::keyspace::KeySet;
use crate::lego_model::{LegoConfig, LegoNetState, SampleRecords};

pub const CKPT_MAGIC: &[u8; 4] = b"LGCK";
pub const CKPT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    Lego,
    Single,
    Fixsisa,
}

impl SystemKind {
    fn tag(self) -> u8 {
        match self {
            SystemKind::Lego => 1,
            SystemKind::Single => 2,
            SystemKind::Fixsisa => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(SystemKind::Lego),
            2 => Ok(SystemKind::Single),
            3 => Ok(SystemKind::Fixsisa),
            t => Err(LegoError::Format(format!("unknown system kind tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Lego(LegoNetState),
    Single(SingleHeadModel),
    FixSisa(FixSisaModel),
}

impl Checkpoint {
    pub fn kind(&self) -> SystemKind {
        match self {
            Checkpoint::Lego(_) => SystemKind::Lego,
            Checkpoint::Single(_) => SystemKind::Single,
            Checkpoint::FixSisa(_) => SystemKind::Fixsisa,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LegoHeader {
    classes: usize,
    dim: usize,
    lego: LegoConfig,
}

#[derive(Serialize, Deserialize)]
struct HeadHeader {
    classes: usize,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shards: Option<usize>,
    trainer: TrainerConfig,
    seed: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn ids(&mut self, ids: &[u64]) {
        self.u32(ids.len());
        for id in ids {
            self.u64(*id);
        }
    }
    fn adapter(&mut self, a: &AdapterModel) {
        self.u64(a.train_seed);
        self.bytes(&a.trained_on_hash);
        self.u8(a.bias.is_some() as u8);
        self.f32s(&a.weights);
        if let Some(b) = &a.bias {
            self.f32s(b);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| LegoError::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn digest(&mut self) -> Result<Digest> {
        Ok(self.take(32)?.try_into().unwrap())
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| LegoError::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
    fn ids(&mut self) -> Result<Vec<u64>> {
        let n = self.u32()?;
        (0..n).map(|_| self.u64()).collect()
    }
    fn adapter(&mut self, classes: usize, dim: usize) -> Result<AdapterModel> {
        let seed = self.u64()?;
        let hash = self.digest()?;
        let has_bias = match self.u8()? {
            0 => false,
            1 => true,
            b => return Err(LegoError::Format(format!("bad bias flag {b}"))),
        };
        let weights = self.f32s(classes * dim)?;
        let bias = if has_bias {
            Some(self.f32s(classes)?)
        } else {
            None
        };
        AdapterModel::from_parts(classes, dim, weights, bias, seed, hash)
    }
}

fn canonical_json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("config serializes")
}

/// Canonical byte encoding, digest included.
pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.bytes(CKPT_MAGIC);
    w.bytes(&CKPT_VERSION.to_le_bytes());
    w.u8(ckpt.kind().tag());
    match ckpt {
        Checkpoint::Lego(st) => encode_lego(&mut w, st),
        Checkpoint::Single(m) => {
            let header = HeadHeader {
                classes: m.model.classes(),
                dim: m.model.dim(),
                shards: None,
                trainer: m.trainer,
                seed: m.seed,
            };
            let json = canonical_json(&header);
            w.u32(json.len());
            w.bytes(&json);
            w.bytes(&m.data_digest);
            w.adapter(&m.model);
            w.ids(&m.trained_ids);
        }
        Checkpoint::FixSisa(m) => {
            let header = HeadHeader {
                classes: m.models[0].classes(),
                dim: m.models[0].dim(),
                shards: Some(m.num_shards()),
                trainer: m.trainer,
                seed: m.seed,
            };
            let json = canonical_json(&header);
            w.u32(json.len());
            w.bytes(&json);
            w.bytes(&m.data_digest);
            for (ids, model) in m.shards.iter().zip(&m.models) {
                w.adapter(model);
                w.ids(ids);
            }
        }
    }
    let digest = bytes_digest(&w.0);
    w.bytes(&digest);
    w.0
}

/// Lego payload: data digest; key init seed, per-dimension perturbation std
/// (f64 bits), n x d key components; n adapter blocks; n record id lists;
/// the retained id list.
fn encode_lego(w: &mut Writer, st: &LegoNetState) {
    let header = LegoHeader {
        classes: st.classes(),
        dim: st.dim(),
        lego: st.config,
    };
    let json = canonical_json(&header);
    w.u32(json.len());
    w.bytes(&json);
    w.bytes(&st.data_digest);
    w.u64(st.keys.init_seed);
    for s in &st.keys.perturb_std {
        w.u64(s.to_bits());
    }
    for key in st.keys.iter() {
        w.f32s(key);
    }
    for a in &st.adapters {
        w.adapter(a);
    }
    for list in st.records.lists() {
        w.ids(list);
    }
    let retained: Vec<u64> = st.records.retained_ids().collect();
    w.ids(&retained);
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 + 2 + 1 + 32 {
        return Err(LegoError::Format("checkpoint too short".into()));
    }
    if &bytes[..4] != CKPT_MAGIC {
        return Err(LegoError::Format("bad magic, expected LGCK".into()));
    }
    let (body, stored) = bytes.split_at(bytes.len() - 32);
    let computed = bytes_digest(body);
    if stored != computed {
        return Err(LegoError::DigestMismatch {
            stored: hex(stored.try_into().unwrap()),
            computed: hex(&computed),
        });
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u16()?;
    if version != CKPT_VERSION {
        return Err(LegoError::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let kind = SystemKind::from_tag(r.u8()?)?;
    let json_len = r.u32()?;
    let json = r.take(json_len)?;
    let bad_json = |e: serde_json::Error| LegoError::Format(format!("config block: {e}"));
    let ckpt = match kind {
        SystemKind::Lego => {
            let h: LegoHeader = serde_json::from_slice(json).map_err(bad_json)?;
            Checkpoint::Lego(decode_lego(&mut r, h)?)
        }
        SystemKind::Single => {
            let h: HeadHeader = serde_json::from_slice(json).map_err(bad_json)?;
            let data_digest = r.digest()?;
            let model = r.adapter(h.classes, h.dim)?;
            let trained_ids = r.ids()?;
            Checkpoint::Single(SingleHeadModel {
                model,
                trained_ids,
                trainer: h.trainer,
                seed: h.seed,
                data_digest,
            })
        }
        SystemKind::Fixsisa => {
            let h: HeadHeader = serde_json::from_slice(json).map_err(bad_json)?;
            let s = h
                .shards
                .filter(|s| *s >= 1)
                .ok_or_else(|| LegoError::Format("fixsisa config lacks shard count".into()))?;
            let data_digest = r.digest()?;
            let mut shards = Vec::with_capacity(s);
            let mut models = Vec::with_capacity(s);
            for _ in 0..s {
                models.push(r.adapter(h.classes, h.dim)?);
                shards.push(r.ids()?);
            }
            Checkpoint::FixSisa(FixSisaModel {
                shards,
                models,
                trainer: h.trainer,
                seed: h.seed,
                data_digest,
            })
        }
    };
    if r.pos != body.len() {
        return Err(LegoError::Format(format!(
            "{} unexpected bytes before digest",
            body.len() - r.pos
        )));
    }
    Ok(ckpt)
}

fn decode_lego(r: &mut Reader<'_>, h: LegoHeader) -> Result<LegoNetState> {
    let n = h.lego.n();
    let data_digest = r.digest()?;
    let init_seed = r.u64()?;
    let perturb_std = (0..h.dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let keys = (0..n)
        .map(|_| r.f32s(h.dim))
        .collect::<Result<Vec<_>>>()?;
    let keys = KeySet::from_parts(keys, init_seed, perturb_std)?;
    let adapters = (0..n)
        .map(|_| r.adapter(h.classes, h.dim))
        .collect::<Result<Vec<_>>>()?;
    let lists = (0..n).map(|_| r.ids()).collect::<Result<Vec<_>>>()?;
    let records = SampleRecords::from_lists(lists, h.lego.k)?;
    let retained = r.ids()?;
    if !retained.iter().copied().eq(records.retained_ids()) {
        return Err(LegoError::Validation(
            "retained id list disagrees with record lists".into(),
        ));
    }
    LegoNetState::from_parts(h.lego, keys, adapters, records, data_digest, h.classes)
}

/// Writes the checkpoint and returns its trailing digest.
pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<Digest> {
    let bytes = encode(ckpt);
    fs::write(path, &bytes).map_err(|e| LegoError::io(path, e))?;
    Ok(bytes[bytes.len() - 32..].try_into().unwrap())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| LegoError::io(path, e))?;
    decode(&bytes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Comparison {
    pub equal: bool,
    pub first_difference: Option<String>,
}

/// Compares two checkpoint files; both must load.
pub fn states_equal(a: &Path, b: &Path) -> Result<Comparison> {
    let ba = fs::read(a).map_err(|e| LegoError::io(a, e))?;
    let bb = fs::read(b).map_err(|e| LegoError::io(b, e))?;
    let ca = decode(&ba)?;
    let cb = decode(&bb)?;
    if ba == bb {
        return Ok(Comparison {
            equal: true,
            first_difference: None,
        });
    }
    let diff = first_difference(&ca, &cb).unwrap_or_else(|| "payload bytes".to_string());
    Ok(Comparison {
        equal: false,
        first_difference: Some(diff),
    })
}

fn adapter_difference(label: &str, a: &AdapterModel, b: &AdapterModel) -> Option<String> {
    if a.train_seed != b.train_seed {
        return Some(format!("{label}.train_seed"));
    }
    if a.trained_on_hash != b.trained_on_hash {
        return Some(format!("{label}.trained_on_hash"));
    }
    if let Some(i) = (0..a.weights.len().min(b.weights.len()))
        .find(|&i| a.weights[i].to_bits() != b.weights[i].to_bits())
    {
        return Some(format!("{label}.weights[{i}]"));
    }
    if a.weights.len() != b.weights.len() {
        return Some(format!("{label}.weights shape"));
    }
    let bits = |v: &Option<Vec<f32>>| v.as_ref().map(|b| b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    if bits(&a.bias) != bits(&b.bias) {
        return Some(format!("{label}.bias"));
    }
    None
}

fn first_difference(a: &Checkpoint, b: &Checkpoint) -> Option<String> {
    match (a, b) {
        (Checkpoint::Lego(x), Checkpoint::Lego(y)) => {
            if x.config != y.config || x.classes() != y.classes() || x.dim() != y.dim() {
                return Some("config".into());
            }
            if x.data_digest != y.data_digest {
                return Some("data_digest".into());
            }
            if x.keys.init_seed != y.keys.init_seed || x.keys.perturb_std != y.keys.perturb_std {
                return Some("keys.provenance".into());
            }
            for j in 0..x.n() {
                if x.keys.key(j) != y.keys.key(j) {
                    return Some(format!("keys[{j}]"));
                }
            }
            for j in 0..x.n() {
                if let Some(d) = adapter_difference(&format!("adapter[{j}]"), &x.adapters[j], &y.adapters[j]) {
                    return Some(d);
                }
            }
            for j in 0..x.n() {
                if x.records.list(j) != y.records.list(j) {
                    return Some(format!("records[{j}]"));
                }
            }
            None
        }
        (Checkpoint::Single(x), Checkpoint::Single(y)) => {
            if x.trainer != y.trainer || x.seed != y.seed {
                return Some("config".into());
            }
            if x.data_digest != y.data_digest {
                return Some("data_digest".into());
            }
            if let Some(d) = adapter_difference("head", &x.model, &y.model) {
                return Some(d);
            }
            (x.trained_ids != y.trained_ids).then(|| "trained_ids".into())
        }
        (Checkpoint::FixSisa(x), Checkpoint::FixSisa(y)) => {
            if x.trainer != y.trainer || x.seed != y.seed || x.num_shards() != y.num_shards() {
                return Some("config".into());
            }
            if x.data_digest != y.data_digest {
                return Some("data_digest".into());
            }
            for s in 0..x.num_shards() {
                if let Some(d) = adapter_difference(&format!("shard[{s}]"), &x.models[s], &y.models[s]) {
                    return Some(d);
                }
                if x.shards[s] != y.shards[s] {
                    return Some(format!("shard[{s}].ids"));
                }
            }
            None
        }
        _ => Some("system kind".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, EmbeddingDataset, SynthConfig};
    use crate::lego_model::fit;

    fn fixture() -> EmbeddingDataset {
        synth_generate(&SynthConfig {
            num_classes: 3,
            dim: 4,
            samples_per_class: 30,
            cluster_separation: 3.0,
            noise_std: 1.0,
            seed: 2,
        })
        .unwrap()
    }

    fn lego() -> LegoNetState {
        let mut cfg = LegoConfig::new(6, 2, 3);
        cfg.trainer.epochs = 3;
        cfg.trainer.use_bias = true;
        fit(&fixture(), &cfg).unwrap()
    }

    #[test]
    fn round_trip_every_kind() {
        let ds = fixture();
        let trainer = TrainerConfig {
            epochs: 3,
            ..TrainerConfig::default()
        };
        let ckpts = vec![
            Checkpoint::Lego(lego()),
            Checkpoint::Single(SingleHeadModel::fit(&ds, &trainer, 1).unwrap()),
            Checkpoint::FixSisa(FixSisaModel::fit(&ds, 4, &trainer, 1, 1).unwrap()),
        ];
        for c in ckpts {
            let bytes = encode(&c);
            let back = decode(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn any_flipped_byte_is_detected() {
        let bytes = encode(&Checkpoint::Lego(lego()));
        for pos in [0usize, 7, 40, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x01;
            assert!(decode(&bad).is_err(), "flip at {pos} not detected");
        }
        let mut bad = bytes.clone();
        bad[bytes.len() / 2] ^= 0x80;
        assert!(matches!(decode(&bad), Err(LegoError::DigestMismatch { .. })));
    }

    #[test]
    fn save_load_save_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let c = Checkpoint::Lego(lego());
        let d1 = save(&c, &p1).unwrap();
        let loaded = load(&p1).unwrap();
        let d2 = save(&loaded, &p2).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert!(states_equal(&p1, &p2).unwrap().equal);
    }

    #[test]
    fn diff_names_the_adapter() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let st = lego();
        let mut other = st.clone();
        other.adapters[4].weights[2] += 1.0;
        save(&Checkpoint::Lego(st), &p1).unwrap();
        save(&Checkpoint::Lego(other), &p2).unwrap();
        let cmp = states_equal(&p1, &p2).unwrap();
        assert!(!cmp.equal);
        assert_eq!(cmp.first_difference.as_deref(), Some("adapter[4].weights[2]"));
    }
}
