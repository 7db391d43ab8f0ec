//! Versioned binary cache of approximation graphs.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 8    | magic `FRACGRPH`                        |
//! | 8      | 4    | format version (`1`)                    |
//! | 12     | 8    | spec content hash                       |
//! | 20     | 4    | level                                   |
//! | 24     | 8    | cell count                              |
//! | 32     | 8    | edge count `m`                          |
//! | 40     | 16m  | edges `(a, b)` as `u64` pairs, `a < b`, sorted |
//!
//! Only graphs are cached. Solver output depends on tolerances and is
//! always recomputed.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::GraphError;
use crate::graph::{build_graph, rebuild_from_cache, ApproximationGraph, CellNetwork};
use crate::spec::FractalSpec;

pub const MAGIC: [u8; 8] = *b"FRACGRPH";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 40;

/// Environment variable that overrides the cache directory.
pub const CACHE_DIR_ENV: &str = "FRACLAB_CACHE_DIR";

pub fn encode(graph: &ApproximationGraph) -> Vec<u8> {
    let edges = graph.edges();
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * edges.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&graph.spec().content_hash().to_le_bytes());
    out.extend_from_slice(&graph.level().to_le_bytes());
    out.extend_from_slice(&(graph.cell_count() as u64).to_le_bytes());
    out.extend_from_slice(&(edges.len() as u64).to_le_bytes());
    for (a, b) in edges {
        out.extend_from_slice(&u64::from(a).to_le_bytes());
        out.extend_from_slice(&u64::from(b).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
}

/// Reads a graph of `spec` back. Rejects foreign specs, other versions and
/// malformed edge lists.
pub fn decode(spec: &FractalSpec, bytes: &[u8]) -> Result<ApproximationGraph, GraphError> {
    let bad = |m: &str| GraphError::Cache(m.to_string());
    if bytes.len() < HEADER_LEN {
        return Err(bad("truncated header"));
    }
    if bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(bytes, 8);
    if version != FORMAT_VERSION {
        return Err(GraphError::Cache(format!("unsupported version {version}")));
    }
    if read_u64(bytes, 12) != spec.content_hash() {
        return Err(bad("spec hash mismatch"));
    }
    let level = read_u32(bytes, 20);
    let cells = read_u64(bytes, 24);
    let m = read_u64(bytes, 32) as usize;
    if (bytes.len() - HEADER_LEN) / 16 != m || (bytes.len() - HEADER_LEN) % 16 != 0 {
        return Err(bad("edge section length does not match header"));
    }
    if u128::from(cells) != crate::graph::cell_count_for(spec, level) {
        return Err(bad("cell count does not match spec and level"));
    }
    let mut edges = Vec::with_capacity(m);
    let mut prev: Option<(u64, u64)> = None;
    for i in 0..m {
        let at = HEADER_LEN + 16 * i;
        let e = (read_u64(bytes, at), read_u64(bytes, at + 8));
        if e.0 >= e.1 || e.1 >= cells || prev.is_some_and(|p| p >= e) {
            return Err(GraphError::Cache(format!("edge {i} out of order or range")));
        }
        prev = Some(e);
        edges.push(e);
    }
    Ok(rebuild_from_cache(spec, level, cells as usize, &edges))
}

/// Directory of cached graphs, one file per (spec, level).
#[derive(Clone, Debug)]
pub struct GraphCache {
    dir: PathBuf,
}

impl GraphCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Uses `FRACLAB_CACHE_DIR` when set, else `fallback`.
    pub fn from_env_or(fallback: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => Self::new(d),
            _ => Self::new(fallback),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, spec: &FractalSpec, level: u32) -> PathBuf {
        self.dir.join(format!("{:016x}-L{level}.fgc", spec.content_hash()))
    }

    /// `Ok(None)` when no entry exists.
    pub fn load(&self, spec: &FractalSpec, level: u32) -> Result<Option<ApproximationGraph>, GraphError> {
        let path = self.path_for(spec, level);
        match fs::read(&path) {
            Ok(bytes) => {
                let g = decode(spec, &bytes)?;
                if g.level() != level {
                    return Err(GraphError::Cache(format!("{} holds level {}", path.display(), g.level())));
                }
                Ok(Some(g))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Writes through a temporary file so readers never see partial entries.
    pub fn store(&self, graph: &ApproximationGraph) -> Result<PathBuf, GraphError> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path_for(graph.spec(), graph.level());
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, encode(graph))?;
        fs::rename(&tmp, &path)?;
        Ok(path)
    }

    /// Cached graph if present and valid, else a fresh build that is then stored.
    /// A corrupt entry is rebuilt and overwritten.
    pub fn get_or_build(&self, spec: &FractalSpec, level: u32) -> Result<(ApproximationGraph, bool), GraphError> {
        if let Ok(Some(g)) = self.load(spec, level) {
            return Ok((g, true));
        }
        let g = build_graph(spec, level)?;
        self.store(&g)?;
        Ok((g, false))
    }
}
