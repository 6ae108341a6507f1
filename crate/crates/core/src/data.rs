//! Embedding datasets: the fixed encoder's output space.
//!
//! A dataset is a list of `(id, label, encoding)` records kept in strictly
//! ascending id order. Two on-disk forms are supported:
//!
//! * LGEM binary (little-endian): magic `LGEM`, `u16` version = 1, `u32` N,
//!   `u32` d, `u32` C, then N records of `(u64 id, u32 label, d x f32)`.
//! * CSV with header `id,label,e0,...,e{d-1}`. The class count is not stored
//!   in CSV and is taken as `max(label) + 1` (at least 2) unless given.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::{Digest, Hasher};
use crate::error::{LegoError, Result};
use crate::rng;

pub const LGEM_MAGIC: &[u8; 4] = b"LGEM";
pub const LGEM_VERSION: u16 = 1;
const LGEM_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4;

/// Rejected center placements allowed before `synth_generate` gives up.
pub const SYNTH_RETRY_BUDGET: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub label: u32,
    pub encoding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    samples: Vec<Sample>,
    dim: usize,
    num_classes: usize,
    pub provenance: String,
}

impl EmbeddingDataset {
    /// Builds a dataset, sorting samples by id and checking every invariant.
    pub fn new(
        mut samples: Vec<Sample>,
        dim: usize,
        num_classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(LegoError::Validation("dimension must be at least 1".into()));
        }
        if num_classes < 2 {
            return Err(LegoError::Validation(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        samples.sort_by_key(|s| s.id);
        for w in samples.windows(2) {
            if w[0].id == w[1].id {
                return Err(LegoError::Validation(format!(
                    "duplicate sample id {}",
                    w[0].id
                )));
            }
        }
        for s in &samples {
            if s.encoding.len() != dim {
                return Err(LegoError::Validation(format!(
                    "sample id {} has dimension {}, expected {dim}",
                    s.id,
                    s.encoding.len()
                )));
            }
            if s.label as usize >= num_classes {
                return Err(LegoError::Validation(format!(
                    "sample id {} has label {} outside [0, {num_classes})",
                    s.id, s.label
                )));
            }
            if let Some(j) = s.encoding.iter().position(|v| !v.is_finite()) {
                return Err(LegoError::Validation(format!(
                    "sample id {} has non-finite component {j}",
                    s.id
                )));
            }
        }
        Ok(EmbeddingDataset {
            samples,
            dim,
            num_classes,
            provenance: provenance.into(),
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn get(&self, id: u64) -> Option<&Sample> {
        self.samples
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &self.samples[i])
    }

    pub fn contains(&self, id: u64) -> bool {
        self.get(id).is_some()
    }

    /// Ids of every sample with the given label, ascending.
    pub fn class_ids(&self, label: u32) -> Vec<u64> {
        self.samples
            .iter()
            .filter(|s| s.label == label)
            .map(|s| s.id)
            .collect()
    }

    /// Copy of the dataset with the given ids removed. Unknown ids are ignored.
    pub fn without(&self, ids: &BTreeSet<u64>) -> EmbeddingDataset {
        self.filtered(|s| !ids.contains(&s.id))
    }

    /// Copy of the dataset restricted to the given ids.
    pub fn restricted_to(&self, ids: &BTreeSet<u64>) -> EmbeddingDataset {
        self.filtered(|s| ids.contains(&s.id))
    }

    fn filtered(&self, keep: impl Fn(&Sample) -> bool) -> EmbeddingDataset {
        EmbeddingDataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            dim: self.dim,
            num_classes: self.num_classes,
            provenance: self.provenance.clone(),
        }
    }

    /// Content digest over header and records in LGEM layout (provenance excluded).
    pub fn digest(&self) -> Digest {
        digest_samples(self.dim, self.num_classes, self.samples.iter())
    }

    pub fn to_lgem_bytes(&self) -> Vec<u8> {
        let rec = 8 + 4 + 4 * self.dim;
        let mut out = Vec::with_capacity(LGEM_HEADER_LEN + rec * self.len());
        out.extend_from_slice(LGEM_MAGIC);
        out.extend_from_slice(&LGEM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        for s in &self.samples {
            write_record(&mut out, s);
        }
        out
    }

    pub fn from_lgem_bytes(bytes: &[u8], provenance: &str) -> Result<Self> {
        if bytes.len() < LGEM_HEADER_LEN {
            return Err(LegoError::Format("LGEM header truncated".into()));
        }
        if &bytes[..4] != LGEM_MAGIC {
            return Err(LegoError::Format("bad magic, expected LGEM".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != LGEM_VERSION {
            return Err(LegoError::Format(format!(
                "unsupported LGEM version {version}"
            )));
        }
        let n = read_u32(&bytes[6..10]) as usize;
        let dim = read_u32(&bytes[10..14]) as usize;
        let num_classes = read_u32(&bytes[14..18]) as usize;
        let rec = 8 + 4 + 4 * dim;
        let body = &bytes[LGEM_HEADER_LEN..];
        let expected = rec
            .checked_mul(n)
            .ok_or_else(|| LegoError::Format("record count overflows".into()))?;
        if body.len() < expected {
            return Err(LegoError::Format(format!(
                "header declares {n} records but file holds {}",
                body.len() / rec.max(1)
            )));
        }
        if body.len() > expected {
            return Err(LegoError::Format(format!(
                "{} trailing bytes after {n} records",
                body.len() - expected
            )));
        }
        let mut samples = Vec::with_capacity(n);
        for chunk in body.chunks_exact(rec) {
            let id = u64::from_le_bytes(chunk[..8].try_into().unwrap());
            let label = read_u32(&chunk[8..12]);
            let encoding = chunk[12..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            samples.push(Sample {
                id,
                label,
                encoding,
            });
        }
        Self::new(samples, dim, num_classes, provenance)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("id,label");
        for j in 0..self.dim {
            out.push_str(&format!(",e{j}"));
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!("{},{}", s.id, s.label));
            for v in &s.encoding {
                // Display for f32 prints the shortest string that round-trips.
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_reader<R: std::io::Read>(
        reader: R,
        num_classes: Option<usize>,
        provenance: &str,
    ) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| LegoError::Format(format!("csv header: {e}")))?
            .clone();
        if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
            return Err(LegoError::Format(
                "csv header must be id,label,e0,...".into(),
            ));
        }
        for (j, name) in header.iter().skip(2).enumerate() {
            if name != format!("e{j}") {
                return Err(LegoError::Format(format!(
                    "csv column {} should be e{j}, found {name}",
                    j + 2
                )));
            }
        }
        let dim = header.len() - 2;
        let mut samples = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| LegoError::Format(format!("csv row {}: {e}", line + 1)))?;
            let field_err =
                |what: &str| LegoError::Format(format!("csv row {}: bad {what}", line + 1));
            let id: u64 = rec[0].trim().parse().map_err(|_| field_err("id"))?;
            let label: u32 = rec[1].trim().parse().map_err(|_| field_err("label"))?;
            let encoding = rec
                .iter()
                .skip(2)
                .map(|v| v.trim().parse::<f32>().map_err(|_| field_err("encoding value")))
                .collect::<Result<Vec<f32>>>()?;
            samples.push(Sample {
                id,
                label,
                encoding,
            });
        }
        let classes = num_classes.unwrap_or_else(|| {
            samples
                .iter()
                .map(|s| s.label as usize + 1)
                .max()
                .unwrap_or(2)
                .max(2)
        });
        Self::new(samples, dim, classes, provenance)
    }

    /// Writes LGEM, or CSV when the path ends in `.csv`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = if is_csv(path) {
            self.to_csv_string().into_bytes()
        } else {
            self.to_lgem_bytes()
        };
        let mut f = fs::File::create(path).map_err(|e| LegoError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| LegoError::io(path, e))
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}

fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().unwrap())
}

fn write_record(out: &mut Vec<u8>, s: &Sample) {
    out.extend_from_slice(&s.id.to_le_bytes());
    out.extend_from_slice(&s.label.to_le_bytes());
    for v in &s.encoding {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Digest of a sample sequence in LGEM record layout.
pub fn digest_samples<'a>(
    dim: usize,
    num_classes: usize,
    samples: impl Iterator<Item = &'a Sample>,
) -> Digest {
    let mut h = Hasher::new();
    h.update(&(dim as u32).to_le_bytes());
    h.update(&(num_classes as u32).to_le_bytes());
    let mut buf = Vec::new();
    let mut count = 0u64;
    for s in samples {
        buf.clear();
        write_record(&mut buf, s);
        h.update(&buf);
        count += 1;
    }
    h.update(&count.to_le_bytes());
    h.finish()
}

/// Loads a dataset, sniffing LGEM by magic and falling back to CSV.
pub fn load_dataset(path: &Path) -> Result<EmbeddingDataset> {
    let bytes = fs::read(path).map_err(|e| LegoError::io(path, e))?;
    let provenance = path.display().to_string();
    if bytes.starts_with(LGEM_MAGIC) || !is_csv(path) {
        EmbeddingDataset::from_lgem_bytes(&bytes, &provenance)
    } else {
        EmbeddingDataset::from_csv_reader(bytes.as_slice(), None, &provenance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub cluster_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

/// Isotropic Gaussian mixture with one cluster per class.
///
/// Centers are drawn uniformly from the cube `[-h, h]^d` with
/// `h = separation * C^(1/d)` and accepted only if they are at least
/// `separation` away from every earlier center; at most
/// [`SYNTH_RETRY_BUDGET`] rejections are tolerated in total. Component `j` of
/// a sample is `center[j] + noise_std * z` with `z` standard normal, computed
/// in f64 and rounded to f32. Sample ids run `0..C*m` class-major.
pub fn synth_generate(config: &SynthConfig) -> Result<EmbeddingDataset> {
    let SynthConfig {
        num_classes,
        dim,
        samples_per_class,
        cluster_separation: sep,
        noise_std,
        seed,
    } = *config;
    if num_classes < 2 || dim == 0 || samples_per_class == 0 {
        return Err(LegoError::Config(
            "synth needs classes >= 2, dim >= 1, samples per class >= 1".into(),
        ));
    }
    if !(sep > 0.0 && sep.is_finite() && noise_std > 0.0 && noise_std.is_finite()) {
        return Err(LegoError::Config(
            "cluster separation and noise std must be positive and finite".into(),
        ));
    }
    let mut rng = rng::seeded(seed);
    let half = sep * libm::pow(num_classes as f64, 1.0 / dim as f64);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    let mut rejections = 0usize;
    while centers.len() < num_classes {
        let cand: Vec<f64> = (0..dim)
            .map(|_| (2.0 * rng::uniform(&mut rng) - 1.0) * half)
            .collect();
        let ok = centers.iter().all(|c| {
            let d2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 >= sep * sep
        });
        if ok {
            centers.push(cand);
        } else {
            rejections += 1;
            if rejections > SYNTH_RETRY_BUDGET {
                return Err(LegoError::Config(format!(
                    "could not place {num_classes} centers {sep} apart in {dim} dimensions \
                     after {SYNTH_RETRY_BUDGET} rejections"
                )));
            }
        }
    }
    let mut samples = Vec::with_capacity(num_classes * samples_per_class);
    for (label, center) in centers.iter().enumerate() {
        for i in 0..samples_per_class {
            let encoding = center
                .iter()
                .map(|c| (c + noise_std * rng::gaussian(&mut rng)) as f32)
                .collect();
            samples.push(Sample {
                id: (label * samples_per_class + i) as u64,
                label: label as u32,
                encoding,
            });
        }
    }
    EmbeddingDataset::new(
        samples,
        dim,
        num_classes,
        format!(
            "synth:C={num_classes},d={dim},m={samples_per_class},sep={sep},std={noise_std},seed={seed}"
        ),
    )
}

/// Splits into `(train, test)` by id.
///
/// The test size is `round(fraction * N)`. When every class has at least two
/// samples the test quota is spread over classes by largest remainder (ties to
/// the lower class) and each class is shuffled separately; otherwise the
/// whole id list is shuffled once. Classes are visited in ascending order on a
/// single seeded stream.
pub fn split(
    dataset: &EmbeddingDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(EmbeddingDataset, EmbeddingDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(LegoError::Config(format!(
            "test fraction {test_fraction} must lie in (0, 1)"
        )));
    }
    let n = dataset.len();
    let target = (test_fraction * n as f64).round() as usize;
    if target == 0 || target >= n {
        return Err(LegoError::Config(format!(
            "test fraction {test_fraction} of {n} samples leaves an empty split"
        )));
    }
    let mut rng = rng::seeded(seed);
    let per_class: Vec<Vec<u64>> = (0..dataset.num_classes() as u32)
        .map(|c| dataset.class_ids(c))
        .collect();
    let stratify = per_class.iter().all(|ids| ids.len() >= 2 || ids.is_empty());

    let mut test_ids = BTreeSet::new();
    if stratify {
        let quotas: Vec<f64> = per_class
            .iter()
            .map(|ids| test_fraction * ids.len() as f64)
            .collect();
        let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut remaining = target.saturating_sub(take.iter().sum());
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for c in order {
            if remaining == 0 {
                break;
            }
            if take[c] < per_class[c].len() {
                take[c] += 1;
                remaining -= 1;
            }
        }
        for (ids, t) in per_class.iter().zip(take) {
            let mut ids = ids.clone();
            rng::shuffle(&mut rng, &mut ids);
            test_ids.extend(ids.into_iter().take(t));
        }
    } else {
        let mut ids = dataset.ids();
        rng::shuffle(&mut rng, &mut ids);
        test_ids.extend(ids.into_iter().take(target));
    }
    let test = dataset.restricted_to(&test_ids);
    let train = dataset.without(&test_ids);
    Ok((train, test))
}
