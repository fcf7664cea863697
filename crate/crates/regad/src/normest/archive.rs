//! Stats archive: a safetensors file holding `mean` (`H×W×C`) and
//! `cov_cholesky` (`H×W×C(C+1)/2`, packed lower rows) as f32, plus text
//! metadata under a single header key.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::grid::{packed_len, GaussianGrid};
use super::GridMeta;
use crate::kv::{self, KvMap};
use crate::{RegadError, Result};

const META_KEY: &str = "regad";
const PACKING: &str = "lower_row_major";

fn archive_err(path: &Path, e: impl std::fmt::Display) -> RegadError {
    RegadError::Archive(format!("{}: {e}", path.display()))
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn read_f32(path: &Path, st: &SafeTensors, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    let t = st.tensor(name).map_err(|e| archive_err(path, e))?;
    if t.dtype() != Dtype::F32 {
        return Err(archive_err(path, format!("`{name}` is {:?}, expected F32", t.dtype())));
    }
    if t.shape() != shape {
        return Err(archive_err(
            path,
            format!("`{name}` has shape {:?}, expected {:?}", t.shape(), shape),
        ));
    }
    Ok(t.data()
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect())
}

/// Serializes grid and metadata to bytes; identical inputs give identical bytes.
pub fn to_bytes(grid: &GaussianGrid, meta: &GridMeta) -> Result<Vec<u8>> {
    let (h, w, c) = (grid.height, grid.width, grid.channels);
    let mean = f32_bytes(&grid.mean);
    let chol = f32_bytes(&grid.chol);
    let mut info = meta.to_kv();
    info.insert("epsilon".into(), format!("{:?}", grid.epsilon));
    info.insert("n".into(), grid.n.to_string());
    info.insert("height".into(), h.to_string());
    info.insert("width".into(), w.to_string());
    info.insert("channels".into(), c.to_string());
    info.insert("packing".into(), PACKING.into());
    let header = HashMap::from([(META_KEY.to_string(), kv::format(&info))]);

    let err = |e: safetensors::SafeTensorError| RegadError::Archive(e.to_string());
    let tensors = vec![
        ("cov_cholesky", TensorView::new(Dtype::F32, vec![h, w, packed_len(c)], &chol).map_err(err)?),
        ("mean", TensorView::new(Dtype::F32, vec![h, w, c], &mean).map_err(err)?),
    ];
    safetensors::serialize(tensors, Some(header)).map_err(err)
}

pub fn write_stats(path: &Path, grid: &GaussianGrid, meta: &GridMeta) -> Result<()> {
    let bytes = to_bytes(grid, meta)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| RegadError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| RegadError::io(path, e))
}

pub fn read_stats(path: &Path) -> Result<(GaussianGrid, GridMeta)> {
    let bytes = fs::read(path).map_err(|e| RegadError::io(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| archive_err(path, e))?;
    let text = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| archive_err(path, "missing metadata"))?;
    let info: KvMap = kv::parse(text)?;
    if kv::get(&info, "packing")? != PACKING {
        return Err(archive_err(path, "unsupported packing"));
    }
    let h: usize = kv::get_parsed(&info, "height")?;
    let w: usize = kv::get_parsed(&info, "width")?;
    let c: usize = kv::get_parsed(&info, "channels")?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| archive_err(path, e))?;
    let grid = GaussianGrid {
        height: h,
        width: w,
        channels: c,
        mean: read_f32(path, &st, "mean", &[h, w, c])?,
        chol: read_f32(path, &st, "cov_cholesky", &[h, w, packed_len(c)])?,
        epsilon: kv::get_parsed(&info, "epsilon")?,
        n: kv::get_parsed(&info, "n")?,
    };
    Ok((grid, GridMeta::from_kv(&info)?))
}
