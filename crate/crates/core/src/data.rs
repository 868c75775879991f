//! Synthetic image data and client partitioning.
//!
//! Each class is a small binary shape drawn at a class-specific position on
//! a 16×16 single-channel canvas, plus clamped Gaussian pixel noise. Shapes
//! differ in local structure (orientation, crossings, texture) so a network
//! with global average pooling can still tell them apart; the positions give
//! the class activation maps a well-defined spatial footprint.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::seeding::{self, Stream};
use crate::tensor::Tensor;

pub const SIDE: usize = 16;
const PATCH: usize = 7;
const SHAPES: usize = 10;
const MAGIC: &[u8; 4] = b"CGDS";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        self.images.first().map(|t| t.shape()).unwrap_or(&[])
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Stratified split: `test_fraction` of every class goes to the second
    /// dataset (at least one sample per class on each side when possible).
    pub fn stratified_split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidParameter(format!(
                "test fraction {test_fraction} outside [0, 1)"
            )));
        }
        let mut rng = seeding::rng(seeding::derive(seed, Stream::Split, &[]));
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..self.num_classes {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            idx.shuffle(&mut rng);
            let mut n_test = (idx.len() as f64 * test_fraction).round() as usize;
            if test_fraction > 0.0 && idx.len() >= 2 {
                n_test = n_test.clamp(1, idx.len() - 1);
            }
            test.extend_from_slice(&idx[..n_test]);
            train.extend_from_slice(&idx[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let shape = self.image_shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::Format("dataset images must be C×H×W".into()));
        }
        w.write_all(MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for d in &shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        w.write_all(&(self.num_classes as u32).to_le_bytes())?;
        for &l in &self.labels {
            w.write_all(&(l as u32).to_le_bytes())?;
        }
        for img in &self.images {
            for v in img.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a dataset container".into()));
        }
        let read_u32 = |r: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Format(format!(
                "unsupported dataset version {version}"
            )));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let shape: Vec<usize> = (0..3)
            .map(|_| read_u32(&mut r).map(|v| v as usize))
            .collect::<Result<_>>()?;
        let num_classes = read_u32(&mut r)? as usize;
        let labels: Vec<usize> = (0..n)
            .map(|_| read_u32(&mut r).map(|v| v as usize))
            .collect::<Result<_>>()?;
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(Error::Format("label out of range".into()));
        }
        let per: usize = shape.iter().product();
        let mut images = Vec::with_capacity(n);
        for _ in 0..n {
            let mut data = Vec::with_capacity(per);
            for _ in 0..per {
                r.read_exact(&mut b8)?;
                data.push(f64::from_le_bytes(b8));
            }
            images.push(Tensor::new(shape.clone(), data)?);
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }
}

fn shape_pixel(shape: usize, y: usize, x: usize) -> bool {
    let (c, last) = (PATCH / 2, PATCH - 1);
    match shape {
        0 => y == c,
        1 => x == c,
        2 => y == x,
        3 => y + x == last,
        4 => y == c || x == c,
        5 => y == x || y + x == last,
        6 => y == 0 || x == 0 || y == last || x == last,
        7 => (c - 1..=c + 1).contains(&y) && (c - 1..=c + 1).contains(&x),
        8 => (y + x).is_multiple_of(2),
        9 => y == 1 || y == last - 1,
        _ => unreachable!(),
    }
}

fn class_position(class: usize) -> (usize, usize) {
    let room = SIDE - PATCH + 1;
    let round = class / SHAPES;
    (
        (3 * class + round) % room,
        (7 * class + 2 + 3 * round) % room,
    )
}

/// Noise-free 1×16×16 pattern of `class`.
pub fn class_template(class: usize) -> Tensor {
    let mut data = vec![0.0; SIDE * SIDE];
    let (oy, ox) = class_position(class);
    let shape = class % SHAPES;
    for y in 0..PATCH {
        for x in 0..PATCH {
            if shape_pixel(shape, y, x) {
                data[(oy + y) * SIDE + ox + x] = 1.0;
            }
        }
    }
    Tensor::new(vec![1, SIDE, SIDE], data).expect("static shape")
}

pub fn generate_synthetic(
    num_classes: usize,
    samples_per_class: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two classes, got {num_classes}"
        )));
    }
    if samples_per_class == 0 {
        return Err(Error::InvalidParameter(
            "samples_per_class must be ≥ 1".into(),
        ));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be a finite value ≥ 0, got {noise_sigma}"
        )));
    }
    let templates: Vec<Tensor> = (0..num_classes).map(class_template).collect();
    let mut rng = seeding::rng(seeding::derive(seed, Stream::Data, &[]));
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut images = Vec::with_capacity(num_classes * samples_per_class);
    let mut labels = Vec::with_capacity(num_classes * samples_per_class);
    for _ in 0..samples_per_class {
        for (c, t) in templates.iter().enumerate() {
            let data = t
                .data()
                .iter()
                .map(|&v| {
                    if noise_sigma == 0.0 {
                        v
                    } else {
                        (v + noise.sample(&mut rng)).clamp(0.0, 1.0)
                    }
                })
                .collect();
            images.push(Tensor::new(t.shape().to_vec(), data)?);
            labels.push(c);
        }
    }
    Ok(Dataset {
        images,
        labels,
        num_classes,
    })
}

/// Assignment of training-sample indices to benign clients.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
    pub claimed_sizes: Vec<f64>,
}

impl Partition {
    fn from_indices(client_indices: Vec<Vec<usize>>) -> Self {
        let claimed_sizes = client_indices.iter().map(|s| s.len() as f64).collect();
        Self {
            client_indices,
            claimed_sizes,
        }
    }

    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }

    /// Per-client class histogram.
    pub fn class_histograms(&self, dataset: &Dataset) -> Vec<Vec<usize>> {
        self.client_indices
            .iter()
            .map(|idx| {
                let mut h = vec![0; dataset.num_classes];
                for &i in idx {
                    h[dataset.labels[i]] += 1;
                }
                h
            })
            .collect()
    }
}

/// Random equal-size (±1) disjoint shards.
pub fn partition_iid(dataset: &Dataset, num_clients: usize, seed: u64) -> Result<Partition> {
    if num_clients == 0 || num_clients > dataset.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot split {} samples across {num_clients} clients",
            dataset.len()
        )));
    }
    let mut rng = seeding::rng(seeding::derive(seed, Stream::Partition, &[0]));
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut rng);
    let base = idx.len() / num_clients;
    let extra = idx.len() % num_clients;
    let mut shards = Vec::with_capacity(num_clients);
    let mut start = 0;
    for c in 0..num_clients {
        let size = base + usize::from(c < extra);
        let mut shard = idx[start..start + size].to_vec();
        shard.sort_unstable();
        shards.push(shard);
        start += size;
    }
    Ok(Partition::from_indices(shards))
}

const DIRICHLET_ATTEMPTS: usize = 1000;

/// Label-skewed split: for each class, client proportions are drawn from a
/// symmetric Dirichlet(alpha). Smaller alpha means more heterogeneous
/// clients. Redrawn until every client holds at least one sample.
pub fn partition_dirichlet(
    dataset: &Dataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "dirichlet concentration must be > 0, got {alpha}"
        )));
    }
    if num_clients == 0 || num_clients > dataset.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot split {} samples across {num_clients} clients",
            dataset.len()
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for attempt in 0..DIRICHLET_ATTEMPTS {
        let mut rng = seeding::rng(seeding::derive(
            seed,
            Stream::Partition,
            &[1, attempt as u64],
        ));
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
        for members in &by_class {
            let mut idx = members.clone();
            idx.shuffle(&mut rng);
            let draws: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            if total.is_nan() || total <= 0.0 {
                // Every draw underflowed; hand the class to one client.
                let k = attempt % num_clients;
                shards[k].extend_from_slice(&idx);
                continue;
            }
            let n = idx.len() as f64;
            let mut cum = 0.0;
            let mut start = 0;
            for (k, d) in draws.iter().enumerate() {
                cum += d / total;
                let end = if k + 1 == num_clients {
                    idx.len()
                } else {
                    ((cum * n).round() as usize).clamp(start, idx.len())
                };
                shards[k].extend_from_slice(&idx[start..end]);
                start = end;
            }
        }
        if shards.iter().all(|s| !s.is_empty()) {
            for s in &mut shards {
                s.sort_unstable();
            }
            return Ok(Partition::from_indices(shards));
        }
    }
    Err(Error::Configuration(format!(
        "no dirichlet({alpha}) draw gave every one of {num_clients} clients a sample"
    )))
}
