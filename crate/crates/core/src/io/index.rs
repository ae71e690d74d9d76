//! Persisted indexes. Both formats refer to rows of an external vector file
//! by row position.
//!
//! `TLIVF1`: d, n, p as u64; p*d f32 centroids; p u64 list lengths; the
//! concatenated u64 row ids of every list.
//!
//! `TLHNSW1`: d, n, M, max_layer as u64; n u64 node levels; for each layer
//! from 0 to max_layer, n+1 u64 CSR offsets then the u64 neighbour ids;
//! finally the u64 global entry.

use std::path::Path;
use std::sync::Arc;

use super::atomic_write;
use super::binary::{put_f32s, put_u64, ByteReader};
use crate::clustering::{CentroidSet, PostingLists};
use crate::error::Result;
use crate::hnsw::HnswGraph;
use crate::ivf::IvfIndex;
use crate::vector::{DocId, VectorStore};
use crate::Scalar;

pub const IVF_MAGIC: &[u8; 6] = b"TLIVF1";
pub const HNSW_MAGIC: &[u8; 7] = b"TLHNSW1";

fn check_shape<T: Scalar>(r: &ByteReader, store: &VectorStore<T>, d: usize, n: usize) -> Result<()> {
    if d != store.dim() || n != store.len() {
        return Err(r.fail(
            0,
            format!(
                "index is for {n} rows of dimension {d}, store has {} of dimension {}",
                store.len(),
                store.dim()
            ),
        ));
    }
    Ok(())
}

fn row_id(r: &ByteReader, at: usize, v: u64, n: usize) -> Result<DocId> {
    if v >= n as u64 {
        return Err(r.fail(at, format!("row id {v} out of range (n={n})")));
    }
    Ok(DocId(v as u32))
}

pub fn write_ivf<T: Scalar>(index: &IvfIndex<T>, path: &Path) -> Result<()> {
    atomic_write(path, |w| {
        w.write_all(IVF_MAGIC)?;
        put_u64(w, index.dim() as u64)?;
        put_u64(w, index.store().len() as u64)?;
        put_u64(w, index.p() as u64)?;
        put_f32s(w, index.centroids().as_slice().iter().map(|v| v.to_f64_lossy() as f32))?;
        for list in index.lists().iter() {
            put_u64(w, list.len() as u64)?;
        }
        for list in index.lists().iter() {
            for id in list {
                put_u64(w, id.0 as u64)?;
            }
        }
        Ok(())
    })
}

pub fn read_ivf<T: Scalar>(path: &Path, store: Arc<VectorStore<T>>) -> Result<IvfIndex<T>> {
    let mut r = ByteReader::open(path)?;
    r.magic(IVF_MAGIC)?;
    let d = r.count("dimension")?;
    let n = r.count("row count")?;
    let p_at = r.offset();
    let p = r.count("centroid count")?;
    check_shape(&r, &store, d, n)?;
    if p == 0 || p > n {
        return Err(r.fail(p_at, format!("p={p} must lie in 1..={n}")));
    }
    let centroids = r.f32s(p * d, "centroids")?;
    let lens_at = r.offset();
    let lens = r.u64s(p, "list lengths")?;
    let total: u128 = lens.iter().map(|&l| l as u128).sum();
    if total != n as u128 {
        return Err(r.fail(lens_at, format!("list lengths sum to {total}, expected {n}")));
    }
    let mut lists = Vec::with_capacity(p);
    for len in lens {
        let at = r.offset();
        let raw = r.u64s(len as usize, "list ids")?;
        let ids = raw
            .iter()
            .enumerate()
            .map(|(i, &v)| row_id(&r, at + 8 * i, v, n))
            .collect::<Result<Vec<_>>>()?;
        lists.push(ids);
    }
    r.finish()?;
    let centroids = CentroidSet::new(d, centroids.into_iter().map(|v| T::from_f64_lossy(v as f64)).collect())?;
    let lists = PostingLists::new(lists, n).map_err(|e| r.fail(lens_at, e.to_string()))?;
    IvfIndex::from_parts(store, centroids, lists)
}

pub fn write_hnsw<T: Scalar>(graph: &HnswGraph<T>, path: &Path) -> Result<()> {
    let links = graph.links();
    atomic_write(path, |w| {
        w.write_all(HNSW_MAGIC)?;
        put_u64(w, graph.store().dim() as u64)?;
        put_u64(w, graph.len() as u64)?;
        put_u64(w, graph.m() as u64)?;
        put_u64(w, graph.max_layer() as u64)?;
        for node in links {
            put_u64(w, (node.len() - 1) as u64)?;
        }
        for layer in 0..=graph.max_layer() {
            let mut offset = 0u64;
            put_u64(w, 0)?;
            for node in links {
                offset += node.get(layer).map_or(0, Vec::len) as u64;
                put_u64(w, offset)?;
            }
            for node in links {
                for nb in node.get(layer).into_iter().flatten() {
                    put_u64(w, nb.0 as u64)?;
                }
            }
        }
        put_u64(w, graph.global_entry().0 as u64)?;
        Ok(())
    })
}

pub fn read_hnsw<T: Scalar>(path: &Path, store: Arc<VectorStore<T>>) -> Result<HnswGraph<T>> {
    let mut r = ByteReader::open(path)?;
    r.magic(HNSW_MAGIC)?;
    let d = r.count("dimension")?;
    let n = r.count("row count")?;
    let m = r.count("M")?;
    let top_at = r.offset();
    let max_layer = r.count("max layer")?;
    check_shape(&r, &store, d, n)?;
    if max_layer > 64 {
        return Err(r.fail(top_at, format!("max layer {max_layer} is implausible")));
    }
    let levels_at = r.offset();
    let levels = r.u64s(n, "node levels")?;
    if let Some(i) = levels.iter().position(|&l| l > max_layer as u64) {
        return Err(r.fail(levels_at + 8 * i, format!("node {i} level exceeds max layer")));
    }
    if n > 0 && levels.iter().max() != Some(&(max_layer as u64)) {
        return Err(r.fail(top_at, "no node reaches the max layer"));
    }
    let mut links: Vec<Vec<Vec<DocId>>> = levels.iter().map(|&l| vec![Vec::new(); l as usize + 1]).collect();
    for layer in 0..=max_layer {
        let off_at = r.offset();
        let offsets = r.u64s(n + 1, "layer offsets")?;
        if offsets[0] != 0 || offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(r.fail(off_at, format!("layer {layer} offsets are not monotone from 0")));
        }
        let ids_at = r.offset();
        let ids = r.u64s(offsets[n] as usize, "neighbour ids")?;
        for node in 0..n {
            let (lo, hi) = (offsets[node] as usize, offsets[node + 1] as usize);
            if hi == lo {
                continue;
            }
            if levels[node] < layer as u64 {
                return Err(r.fail(off_at + 8 * node, format!("node {node} has links above its level")));
            }
            links[node][layer] = (lo..hi)
                .map(|i| row_id(&r, ids_at + 8 * i, ids[i], n))
                .collect::<Result<_>>()?;
        }
    }
    let entry_at = r.offset();
    let entry = r.u64("global entry")?;
    let entry = row_id(&r, entry_at, entry, n)?;
    r.finish()?;
    HnswGraph::from_parts(store, m, links, entry)
}
