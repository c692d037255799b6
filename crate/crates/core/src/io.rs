//! On-disk formats. Binary formats are little-endian with an 8-byte magic;
//! text formats are CSV with a header row.
//!
//! Dataset (`AIMLDS01`):
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0 | 8 | magic `AIMLDS01` |
//! | 8 | 8 | `m` (u64) |
//! | 16 | 8 | `n` (u64) |
//! | 24 | 8 | `D` (u64) |
//! | 32 | 8 | seed (u64) |
//! | 40 | 1 | manifold code, 0 when absent |
//! | 41 | 32 | four manifold parameters (f64) |
//! | 73 | 1 | 1 when latents follow, else 0 |
//! | 74 | 8mnD | points, sample-major then view then coordinate |
//! | ... | 8m + 8mn | `phi`, then `psi` (sample-major), if flagged |
//!
//! Weight matrix (`AIMLW001`): `m` (u64), `t` (f64), `n_views` (u64), then
//! `m * m` f64 values row by row.
//!
//! Encoder checkpoint (`AIMLCK01`): number of layer sizes `L` (u64), the `L`
//! sizes (u64), hidden activation (u8: 0 tanh, 1 identity), input shift and
//! input scale (`D` f64 each), then for every layer its `out x in` weight
//! matrix row by row followed by its `out` biases.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::json;

use crate::encoder::{Activation, EncoderParams};
use crate::error::{Error, Result};
use crate::kernel::WeightMatrix;
use crate::manifold::{ManifoldKind, ManifoldSpec, MultiViewDataset};
use crate::objective::EpochLoss;
use crate::spectral::{Embedding, Method};

pub const DATASET_MAGIC: &[u8; 8] = b"AIMLDS01";
pub const WEIGHTS_MAGIC: &[u8; 8] = b"AIMLW001";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AIMLCK01";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != magic {
            return Err(Error::parse(
                0,
                format!("expected magic {}", String::from_utf8_lossy(magic)),
            ));
        }
        Ok(Reader { bytes, pos: 8 })
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::parse(self.pos, format!("stream ends inside {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        usize::try_from(self.u64(what)?).map_err(|_| Error::parse(at, format!("{what} too large")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| Error::parse(self.pos, format!("{what} size overflows")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::parse(
                self.pos,
                format!("{} unexpected trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn dataset_to_bytes(ds: &MultiViewDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(74 + 8 * ds.points().len());
    out.extend_from_slice(DATASET_MAGIC);
    for v in [ds.m() as u64, ds.n() as u64, ds.dim() as u64, ds.seed()] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match ds.spec() {
        Some(spec) => {
            out.push(spec.kind().code());
            put_f64s(&mut out, &spec.params());
        }
        None => {
            out.push(0);
            put_f64s(&mut out, &[0.0; 4]);
        }
    }
    let latents = ds.latent_phi().zip(ds.latent_psi());
    out.push(latents.is_some() as u8);
    put_f64s(&mut out, ds.points());
    if let Some((phi, psi)) = latents {
        put_f64s(&mut out, phi);
        put_f64s(&mut out, psi);
    }
    out
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<MultiViewDataset> {
    let mut r = Reader::new(bytes, DATASET_MAGIC)?;
    let m = r.usize("m")?;
    let n = r.usize("n")?;
    let dim = r.usize("D")?;
    let seed = r.u64("seed")?;
    let code_at = r.pos;
    let code = r.u8("manifold code")?;
    let params: [f64; 4] = r.f64s(4, "manifold parameters")?.try_into().unwrap();
    let spec = if code == 0 {
        None
    } else {
        let kind = [
            ManifoldKind::Torus,
            ManifoldKind::SwissRoll1,
            ManifoldKind::SwissRoll2,
            ManifoldKind::CliffordTorus,
        ]
        .into_iter()
        .find(|k| k.code() == code)
        .ok_or_else(|| Error::parse(code_at, format!("unknown manifold code {code}")))?;
        Some(ManifoldSpec::from_params(kind, params)?)
    };
    let flag_at = r.pos;
    let has_latents = match r.u8("latent flag")? {
        0 => false,
        1 => true,
        other => return Err(Error::parse(flag_at, format!("latent flag must be 0 or 1, got {other}"))),
    };
    let count = m
        .checked_mul(n)
        .and_then(|v| v.checked_mul(dim))
        .ok_or_else(|| Error::parse(8, "dataset shape overflows"))?;
    let points = r.f64s(count, "points")?;
    let (phi, psi) = if has_latents {
        (Some(r.f64s(m, "phi")?), Some(r.f64s(m * n, "psi")?))
    } else {
        (None, None)
    };
    r.finish()?;
    MultiViewDataset::from_parts(m, n, dim, points, phi, psi, spec, seed)
}

pub fn save_dataset(path: &Path, ds: &MultiViewDataset) -> Result<()> {
    write_file(path, &dataset_to_bytes(ds))
}

pub fn load_dataset(path: &Path) -> Result<MultiViewDataset> {
    dataset_from_bytes(&std::fs::read(path)?)
}

pub fn weights_to_bytes(w: &WeightMatrix) -> Vec<u8> {
    let m = w.m();
    let mut out = Vec::with_capacity(32 + 8 * m * m);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out.extend_from_slice(&w.bandwidth_t().to_le_bytes());
    out.extend_from_slice(&(w.n_views() as u64).to_le_bytes());
    for i in 0..m {
        for j in 0..m {
            out.extend_from_slice(&w.values()[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<WeightMatrix> {
    let mut r = Reader::new(bytes, WEIGHTS_MAGIC)?;
    let m = r.usize("m")?;
    let t = r.f64("bandwidth")?;
    let n_views = r.usize("view count")?;
    let size = m.checked_mul(m).ok_or_else(|| Error::parse(8, "matrix size overflows"))?;
    let values = r.f64s(size, "weights")?;
    r.finish()?;
    WeightMatrix::from_matrix(DMatrix::from_row_slice(m, m, &values), t, n_views)
}

pub fn checkpoint_to_bytes(p: &EncoderParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(p.layer_dims.len() as u64).to_le_bytes());
    for &d in &p.layer_dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(match p.hidden_activation {
        Activation::Tanh => 0,
        Activation::Identity => 1,
    });
    put_f64s(&mut out, &p.input_shift);
    put_f64s(&mut out, &p.input_scale);
    for layer in &p.layers {
        for i in 0..layer.weight.nrows() {
            for j in 0..layer.weight.ncols() {
                out.extend_from_slice(&layer.weight[(i, j)].to_le_bytes());
            }
        }
        put_f64s(&mut out, layer.bias.as_slice());
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<EncoderParams> {
    let mut r = Reader::new(bytes, CHECKPOINT_MAGIC)?;
    let count = r.usize("layer count")?;
    if !(2..=64).contains(&count) {
        return Err(Error::parse(8, format!("implausible layer count {count}")));
    }
    let dims = (0..count).map(|_| r.usize("layer sizes")).collect::<Result<Vec<_>>>()?;
    let act_at = r.pos;
    let activation = match r.u8("activation")? {
        0 => Activation::Tanh,
        1 => Activation::Identity,
        other => return Err(Error::parse(act_at, format!("unknown activation code {other}"))),
    };
    let mut p = EncoderParams::zeros(&dims, activation)?;
    p.input_shift = r.f64s(dims[0], "input shift")?;
    p.input_scale = r.f64s(dims[0], "input scale")?;
    for (l, layer) in p.layers.iter_mut().enumerate() {
        let (out, inp) = (dims[l + 1], dims[l]);
        layer.weight = DMatrix::from_row_slice(out, inp, &r.f64s(out * inp, "weights")?);
        layer.bias.copy_from_slice(&r.f64s(out, "biases")?);
    }
    r.finish()?;
    if !p.is_finite() {
        return Err(Error::Data("checkpoint holds non-finite parameters".into()));
    }
    Ok(p)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn csv_string(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Coordinates, one row per sample, plus `phi` and the first view's `psi`
/// when the dataset carries latents.
pub fn embedding_csv(emb: &Embedding, dataset: Option<&MultiViewDataset>) -> Result<String> {
    let latents = dataset.and_then(|d| d.latent_phi().zip(d.latent_psi()).map(|l| (l, d.n())));
    let mut header = vec!["sample".to_string()];
    header.extend((1..=emb.n_components()).map(|k| format!("coord_{k}")));
    if latents.is_some() {
        header.extend(["phi".to_string(), "psi".to_string()]);
    }
    let rows = (0..emb.m()).map(|i| {
        let mut row = vec![i.to_string()];
        row.extend(emb.coords.row(i).iter().map(|v| v.to_string()));
        if let Some(((phi, psi), n)) = latents {
            row.push(phi[i].to_string());
            row.push(psi[i * n].to_string());
        }
        row
    });
    csv_string(&header, rows)
}

pub fn eigenvalues_csv(emb: &Embedding) -> Result<String> {
    let header = ["component", "eigenvalue", "transition_eigenvalue"].map(String::from);
    let rows = (0..emb.n_components()).map(|k| {
        vec![
            (k + 1).to_string(),
            emb.eigenvalues[k].to_string(),
            emb.transition_eigenvalues[k].to_string(),
        ]
    });
    csv_string(&header, rows)
}

/// JSON sidecar describing an embedding.
pub fn embedding_metadata(emb: &Embedding) -> serde_json::Value {
    let (method, alpha, l) = match emb.method {
        Method::LaplacianEigenmaps => ("laplacian_eigenmaps", None, None),
        Method::DiffusionMaps { alpha, diffusion_time } => ("diffusion_maps", Some(alpha), Some(diffusion_time)),
    };
    json!({
        "method": method,
        "alpha": alpha,
        "diffusion_time": l,
        "bandwidth_t": emb.bandwidth_t,
        "m": emb.m(),
        "n_components": emb.n_components(),
        "eigenvalues": emb.eigenvalues,
        "transition_eigenvalues": emb.transition_eigenvalues,
        "skipped_trivial": emb.skipped_trivial,
        "warnings": emb.warnings,
    })
}

pub fn trajectory_csv(trajectory: &[EpochLoss]) -> Result<String> {
    let header = ["epoch", "total", "unsup", "selfsup", "reg"].map(String::from);
    let rows = trajectory.iter().map(|e| {
        vec![
            e.epoch.to_string(),
            e.loss.total.to_string(),
            e.loss.unsup.to_string(),
            e.loss.selfsup.to_string(),
            e.loss.reg.to_string(),
        ]
    });
    csv_string(&header, rows)
}

pub fn result_table_csv(table: &crate::experiment::ResultTable) -> Result<String> {
    let header = ["manifold", "representation", "s_or_delta", "mean_error", "stderr", "repeats", "seed"]
        .map(String::from);
    let rows = table.rows.iter().map(|r| {
        vec![
            table.manifold.clone(),
            r.representation.clone(),
            r.sweep_value.to_string(),
            r.mean_error.to_string(),
            r.stderr.to_string(),
            r.errors.len().to_string(),
            table.seed.to_string(),
        ]
    });
    csv_string(&header, rows)
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents)?;
    Ok(())
}
