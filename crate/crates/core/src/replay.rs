//! Reservoir-sampled replay memory.
//!
//! Every item stores the soft logits the model produced when the item was
//! inserted. Those logits are never refreshed; they are the distillation
//! targets for logit matching.
//!
//! # Snapshot format
//!
//! All integers are little-endian `u64` unless noted, floats are
//! little-endian IEEE-754 `f64`:
//!
//! ```text
//! magic          8 bytes  "MGSRBUF\0"
//! version        u32      1
//! capacity, feature_dim, class_count, stream_count, item_count
//! item_count x { task_id, label, x[feature_dim], z[class_count] }
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"MGSRBUF\0";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryItem {
    pub x: Vec<f64>,
    pub y: usize,
    /// Soft logits captured at insertion.
    pub z: Vec<f64>,
    pub task_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    capacity: usize,
    feature_dim: usize,
    class_count: usize,
    items: Vec<MemoryItem>,
    stream_count: u64,
}

impl MemoryBuffer {
    pub fn new(capacity: usize, feature_dim: usize, class_count: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config(
                "memory buffer capacity must be at least 1".into(),
            ));
        }
        if class_count == 0 {
            return Err(Error::Config(
                "memory buffer needs at least one class".into(),
            ));
        }
        Ok(Self {
            capacity,
            feature_dim,
            class_count,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            stream_count: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of items offered so far, accepted or not.
    pub fn stream_count(&self) -> u64 {
        self.stream_count
    }

    pub fn items(&self) -> &[MemoryItem] {
        &self.items
    }

    fn validate(&self, item: &MemoryItem) -> Result<()> {
        if item.z.len() != self.class_count {
            return Err(Error::Input(format!(
                "soft logits have {} entries, buffer holds {} classes",
                item.z.len(),
                self.class_count
            )));
        }
        if item.x.len() != self.feature_dim {
            return Err(Error::Input(format!(
                "input has {} features, buffer holds {}",
                item.x.len(),
                self.feature_dim
            )));
        }
        if item.y >= self.class_count {
            return Err(Error::Input(format!(
                "label {} outside class range 0..{}",
                item.y, self.class_count
            )));
        }
        Ok(())
    }

    /// Reservoir step: fill while there is room, afterwards keep the new item
    /// with probability `capacity / stream_count`, evicting a uniform slot.
    pub fn offer<R: Rng + ?Sized>(&mut self, item: MemoryItem, rng: &mut R) -> Result<bool> {
        self.validate(&item)?;
        self.stream_count += 1;
        if self.items.len() < self.capacity {
            self.items.push(item);
            return Ok(true);
        }
        let j = rng.random_range(0..self.stream_count);
        if j < self.capacity as u64 {
            self.items[j as usize] = item;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Indices of `min(k, len)` distinct residents, uniformly at random.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        let n = self.items.len();
        if n == 0 || k == 0 {
            return Vec::new();
        }
        index::sample(rng, n, k.min(n)).into_vec()
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<&MemoryItem> {
        self.sample_indices(k, rng)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        for v in [
            self.capacity as u64,
            self.feature_dim as u64,
            self.class_count as u64,
            self.stream_count,
            self.items.len() as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for item in &self.items {
            w.write_all(&(item.task_id as u64).to_le_bytes())?;
            w.write_all(&(item.y as u64).to_le_bytes())?;
            for v in item.x.iter().chain(&item.z) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::format("magic", "not a memory buffer snapshot"));
        }
        let mut v4 = [0u8; 4];
        read_exact(&mut r, &mut v4, "version")?;
        let version = u32::from_le_bytes(v4);
        if version != SNAPSHOT_VERSION {
            return Err(Error::format(
                "version",
                format!("unsupported snapshot version {version}"),
            ));
        }
        let capacity = read_count(&mut r, "capacity")?;
        let feature_dim = read_count(&mut r, "feature_dim")?;
        let class_count = read_count(&mut r, "class_count")?;
        let stream_count = read_u64(&mut r, "stream_count")?;
        let n = read_count(&mut r, "item_count")?;
        if n > capacity {
            return Err(Error::format(
                "item_count",
                format!("{n} items exceed capacity {capacity}"),
            ));
        }
        if (n as u64) > stream_count {
            return Err(Error::format(
                "stream_count",
                "fewer offers than resident items",
            ));
        }
        let mut buf = MemoryBuffer::new(capacity, feature_dim, class_count)
            .map_err(|e| Error::format("header", e.to_string()))?;
        buf.stream_count = stream_count;
        for _ in 0..n {
            let task_id = read_count(&mut r, "item.task_id")?;
            let y = read_count(&mut r, "item.label")?;
            let x = read_f64s(&mut r, feature_dim, "item.x")?;
            let z = read_f64s(&mut r, class_count, "item.z")?;
            let item = MemoryItem { x, y, z, task_id };
            buf.validate(&item)
                .map_err(|e| Error::format("item", e.to_string()))?;
            buf.items.push(item);
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        self.write_snapshot(BufWriter::new(file))
            .map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_snapshot(BufReader::new(file))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], field: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::format(field, format!("truncated snapshot ({e})")))
}

fn read_u64<R: Read>(r: &mut R, field: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, field)?;
    Ok(u64::from_le_bytes(b))
}

fn read_count<R: Read>(r: &mut R, field: &str) -> Result<usize> {
    let v = read_u64(r, field)?;
    usize::try_from(v).map_err(|_| Error::format(field, format!("value {v} does not fit in usize")))
}

fn read_f64s<R: Read>(r: &mut R, n: usize, field: &str) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| read_u64(r, field).map(f64::from_bits))
        .collect()
}
