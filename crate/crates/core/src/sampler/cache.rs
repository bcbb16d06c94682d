//! Binary cache for sampled context sequences.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "HNSQ" | version u32 | S u64 | D u64 | policy u8 | seed u64
//! graph checksum [u8; 32] | sequence count u64
//! then per sequence: target u64, then S pairs of (node u64, hop u16)
//! ```
//!
//! Padded positions store node = u64::MAX; the validity mask is implied.
//! A cache is valid only if every header field matches the requesting
//! configuration and the stored targets equal the requested id list; any
//! mismatch or truncation makes the reader report a miss, never an error.

use std::fs;
use std::io::{self, Read};
use std::path::Path;

use super::{ContextSequence, SamplePolicy, SamplerConfig, PAD};
use crate::graph::HeteroGraph;

const MAGIC: &[u8; 4] = b"HNSQ";
const VERSION: u32 = 1;

fn policy_tag(p: SamplePolicy) -> u8 {
    match p {
        SamplePolicy::Deterministic => 0,
        SamplePolicy::SeededRandom => 1,
    }
}

pub fn write_cache(
    path: &Path,
    checksum: &[u8; 32],
    cfg: &SamplerConfig,
    seqs: &[ContextSequence],
) -> io::Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(64 + seqs.len() * (8 + cfg.length * 10));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(cfg.length as u64).to_le_bytes());
    buf.extend_from_slice(&(cfg.depth as u64).to_le_bytes());
    buf.push(policy_tag(cfg.policy));
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.extend_from_slice(checksum);
    buf.extend_from_slice(&(seqs.len() as u64).to_le_bytes());
    for seq in seqs {
        buf.extend_from_slice(&(seq.target as u64).to_le_bytes());
        for i in 0..cfg.length {
            let node = if seq.nodes[i] == PAD {
                u64::MAX
            } else {
                seq.nodes[i] as u64
            };
            buf.extend_from_slice(&node.to_le_bytes());
            buf.extend_from_slice(&(seq.hop[i] as u16).to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)
}

/// Read a cache file. Returns `Ok(None)` when the file is absent, stale
/// (header mismatch), or does not cover exactly `ids`.
pub fn read_cache(
    path: &Path,
    checksum: &[u8; 32],
    cfg: &SamplerConfig,
    ids: &[usize],
) -> io::Result<Option<Vec<ContextSequence>>> {
    let mut file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };

    let header_ok = (|| -> Option<bool> {
        if r.bytes(4)? != MAGIC {
            return Some(false);
        }
        if r.u32()? != VERSION {
            return Some(false);
        }
        if r.u64()? != cfg.length as u64 || r.u64()? != cfg.depth as u64 {
            return Some(false);
        }
        if r.u8()? != policy_tag(cfg.policy) || r.u64()? != cfg.seed {
            return Some(false);
        }
        Some(r.bytes(32)? == checksum)
    })();
    if header_ok != Some(true) {
        return Ok(None);
    }

    let count = match r.u64() {
        Some(c) => c as usize,
        None => return Ok(None),
    };
    if count != ids.len() {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(count);
    for &want in ids {
        let target = match r.u64() {
            Some(t) => t as usize,
            None => return Ok(None),
        };
        if target != want {
            return Ok(None);
        }
        let mut nodes = Vec::with_capacity(cfg.length);
        let mut hop = Vec::with_capacity(cfg.length);
        let mut mask = Vec::with_capacity(cfg.length);
        for _ in 0..cfg.length {
            let (n, h) = match (r.u64(), r.u16()) {
                (Some(n), Some(h)) => (n, h),
                _ => return Ok(None),
            };
            if n == u64::MAX {
                nodes.push(PAD);
                hop.push(0);
                mask.push(false);
            } else {
                nodes.push(n as usize);
                hop.push(h as usize);
                mask.push(true);
            }
        }
        out.push(ContextSequence {
            target,
            nodes,
            hop,
            mask,
        });
    }
    Ok(Some(out))
}

/// Sample with a file cache: a valid cache is returned as-is, otherwise the
/// sequences are sampled and the cache rewritten.
pub fn sample_all_cached(
    g: &HeteroGraph,
    ids: &[usize],
    cfg: &SamplerConfig,
    path: &Path,
) -> Result<Vec<ContextSequence>, crate::graph::GraphError> {
    let checksum = g.structure_checksum();
    match read_cache(path, &checksum, cfg, ids) {
        Ok(Some(seqs)) => return Ok(seqs),
        Ok(None) => {}
        Err(e) => log::warn!("ignoring unreadable sequence cache {}: {}", path.display(), e),
    }
    let seqs = super::sample_all(g, ids, cfg)?;
    if let Err(e) = write_cache(path, &checksum, cfg, &seqs) {
        log::warn!("could not write sequence cache {}: {}", path.display(), e);
    }
    Ok(seqs)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return None;
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.bytes(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.bytes(2).map(|b| u16::from_le_bytes(b.try_into().unwrap()))
    }

    fn u32(&mut self) -> Option<u32> {
        self.bytes(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.bytes(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FeatureRow, FeatureTable, HeteroGraph};
    use crate::sampler::sample_all;

    fn toy_graph() -> HeteroGraph {
        let features = FeatureTable {
            per_type_dim: vec![4],
            onehot_types: vec![true],
            rows: (0..4).map(FeatureRow::OneHot).collect(),
        };
        HeteroGraph::from_parts(1, 1, vec![0; 4], &[(0, 1, 0), (1, 2, 0), (2, 3, 0)], features)
            .unwrap()
    }

    fn cfg() -> SamplerConfig {
        SamplerConfig {
            depth: 2,
            length: 3,
            policy: SamplePolicy::Deterministic,
            seed: 5,
        }
    }

    #[test]
    fn roundtrip_hits_cache() {
        let g = toy_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seqs.bin");
        let cfg = cfg();
        let ids = vec![0, 2, 3];
        let checksum = g.structure_checksum();

        let fresh = sample_all(&g, &ids, &cfg).unwrap();
        write_cache(&path, &checksum, &cfg, &fresh).unwrap();
        let hit = read_cache(&path, &checksum, &cfg, &ids).unwrap();
        assert_eq!(hit, Some(fresh));
    }

    #[test]
    fn checksum_mismatch_is_a_miss() {
        let g = toy_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seqs.bin");
        let cfg = cfg();
        let ids = vec![0];
        let seqs = sample_all(&g, &ids, &cfg).unwrap();
        write_cache(&path, &g.structure_checksum(), &cfg, &seqs).unwrap();

        let mut other = g.structure_checksum();
        other[0] ^= 0xff;
        assert_eq!(read_cache(&path, &other, &cfg, &ids).unwrap(), None);
    }

    #[test]
    fn config_or_id_mismatch_is_a_miss() {
        let g = toy_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seqs.bin");
        let cfg = cfg();
        let ids = vec![0, 1];
        let seqs = sample_all(&g, &ids, &cfg).unwrap();
        let checksum = g.structure_checksum();
        write_cache(&path, &checksum, &cfg, &seqs).unwrap();

        let mut deeper = cfg;
        deeper.depth += 1;
        assert_eq!(read_cache(&path, &checksum, &deeper, &ids).unwrap(), None);
        assert_eq!(read_cache(&path, &checksum, &cfg, &[0, 2]).unwrap(), None);
        assert_eq!(read_cache(&path, &checksum, &cfg, &[0]).unwrap(), None);
    }

    #[test]
    fn truncated_file_is_a_miss_not_an_error() {
        let g = toy_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seqs.bin");
        let cfg = cfg();
        let ids = vec![0, 1];
        let seqs = sample_all(&g, &ids, &cfg).unwrap();
        let checksum = g.structure_checksum();
        write_cache(&path, &checksum, &cfg, &seqs).unwrap();

        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        assert_eq!(read_cache(&path, &checksum, &cfg, &ids).unwrap(), None);
    }

    #[test]
    fn cached_sampler_repopulates_after_invalidation() {
        let g = toy_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seqs.bin");
        let cfg = cfg();
        let ids = vec![3, 1];

        let first = sample_all_cached(&g, &ids, &cfg, &path).unwrap();
        assert!(path.exists());
        let second = sample_all_cached(&g, &ids, &cfg, &path).unwrap();
        assert_eq!(first, second);

        std::fs::write(&path, b"garbage").unwrap();
        let third = sample_all_cached(&g, &ids, &cfg, &path).unwrap();
        assert_eq!(first, third);
        let fourth = read_cache(&path, &g.structure_checksum(), &cfg, &ids).unwrap();
        assert_eq!(fourth, Some(first));
    }
}
