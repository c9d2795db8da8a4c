//! Binary pack files.
//!
//! Layout, little-endian: `"RWPK"`, `u32` version, `u8` d, `u64` dims[d],
//! `f64` spacing[d], `f64` beta, `u32` m, `u64` N, `f64` eigenvalues[m],
//! `f32` d_sqrt[N], `f32` Q column-major `N x m`, `u64` xxh64 of all
//! preceding bytes, then the 32-byte image hash.
//!
//! Build details that the format has no room for (eigensolver tolerance and
//! creation time) go to a JSON sidecar next to the pack.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use fastwalk_core::fast::{PackMeta, Provenance, SpectralBasis, SpectralPack};
use fastwalk_core::graph::Neighborhood;
use fastwalk_core::linalg::EigenBasis;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::Xxh64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RWPK";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "rwpk";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    eig_tol: Option<f64>,
    created_unix: Option<u64>,
}

/// Path of the provenance sidecar, `<pack>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// The pack as it reads back from disk: vectors and `D^{1/2}` rounded to
/// `f32`.
pub fn quantize(pack: &SpectralPack) -> SpectralPack {
    let mut meta = pack.meta().clone();
    meta.d_sqrt.iter_mut().for_each(|v| *v = f64::from(*v as f32));
    let basis = pack.basis();
    let vectors = basis.vectors().iter().map(|&v| f64::from(v as f32)).collect();
    let basis = EigenBasis::new(basis.n(), basis.values().to_vec(), vectors).expect("same shape");
    SpectralPack::new(meta, basis, *pack.provenance()).expect("quantizing keeps invariants")
}

struct HashingWriter<W> {
    inner: W,
    hasher: Xxh64,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Writes the pack and its sidecar.
pub fn save_pack(pack: &SpectralPack, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(io)?;
    let mut w = HashingWriter { inner: BufWriter::new(file), hasher: Xxh64::new(0) };
    let meta = pack.meta();
    let basis = pack.basis();
    let mut put = |bytes: &[u8]| w.write_all(bytes);
    put(MAGIC).map_err(io)?;
    put(&VERSION.to_le_bytes()).map_err(io)?;
    put(&[meta.dims.len() as u8]).map_err(io)?;
    for &d in &meta.dims {
        put(&(d as u64).to_le_bytes()).map_err(io)?;
    }
    for &s in &meta.spacing {
        put(&s.to_le_bytes()).map_err(io)?;
    }
    put(&meta.beta.to_le_bytes()).map_err(io)?;
    put(&(basis.m() as u32).to_le_bytes()).map_err(io)?;
    put(&(basis.n() as u64).to_le_bytes()).map_err(io)?;
    for &v in basis.values() {
        put(&v.to_le_bytes()).map_err(io)?;
    }
    for &v in &meta.d_sqrt {
        put(&(v as f32).to_le_bytes()).map_err(io)?;
    }
    for chunk in basis.vectors().chunks(1 << 16) {
        let bytes: Vec<u8> = chunk.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        put(&bytes).map_err(io)?;
    }
    let checksum = w.hasher.digest();
    let mut inner = w.inner;
    inner.write_all(&checksum.to_le_bytes()).map_err(io)?;
    inner.write_all(&meta.image_hash).map_err(io)?;
    inner.flush().map_err(io)?;

    let prov = pack.provenance();
    let sidecar = Sidecar { eig_tol: prov.eig_tol, created_unix: prov.created_unix };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_string_pretty(&sidecar).expect("serializes")).map_err(|e| Error::io(&sp, e))
}

struct Header {
    meta: PackMeta,
    values: Vec<f64>,
    n: usize,
    m: usize,
    q_offset: u64,
    provenance: Provenance,
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(path, "truncated pack file"),
        _ => Error::io(path, e),
    })
}

fn read_u64<R: Read>(r: &mut R, path: &Path) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, path)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R, path: &Path) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r, path)?))
}

fn read_f32s<R: Read>(r: &mut R, count: usize, path: &Path) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 4];
    read_exact(r, &mut bytes, path)?;
    Ok(bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect())
}

/// Reads and validates everything except `Q`; the checksum is verified over
/// the whole file.
fn read_header(file: &mut File, path: &Path) -> Result<Header> {
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(&mut *file);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::format(path, "bad magic, not a pack file"));
    }
    let mut b4 = [0u8; 4];
    read_exact(&mut r, &mut b4, path)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported pack version {version}")));
    }
    let mut b1 = [0u8; 1];
    read_exact(&mut r, &mut b1, path)?;
    let d = b1[0] as usize;
    if !(2..=3).contains(&d) {
        return Err(Error::format(path, format!("unsupported dimensionality {d}")));
    }
    let dims = (0..d).map(|_| read_u64(&mut r, path).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let spacing = (0..d).map(|_| read_f64(&mut r, path)).collect::<Result<Vec<_>>>()?;
    let beta = read_f64(&mut r, path)?;
    read_exact(&mut r, &mut b4, path)?;
    let m = u32::from_le_bytes(b4) as usize;
    let n = read_u64(&mut r, path)? as usize;
    if dims.iter().product::<usize>() != n {
        return Err(Error::format(path, format!("dims {dims:?} do not multiply to N = {n}")));
    }
    let header_len = 4 + 4 + 1 + 16 * d as u64 + 8 + 4 + 8;
    let q_offset = header_len + 8 * m as u64 + 4 * n as u64;
    let expected = q_offset + 4 * (n as u64) * (m as u64) + 8 + 32;
    if len != expected {
        return Err(Error::format(path, format!("file has {len} bytes, expected {expected}")));
    }
    let values = (0..m).map(|_| read_f64(&mut r, path)).collect::<Result<Vec<_>>>()?;
    let d_sqrt = read_f32s(&mut r, n, path)?;

    // Checksum pass over everything before the trailer.
    r.seek(SeekFrom::Start(0)).map_err(|e| Error::io(path, e))?;
    let body = expected - 40;
    let mut hasher = Xxh64::new(0);
    let mut buf = vec![0u8; 1 << 20];
    let mut left = body;
    while left > 0 {
        let take = left.min(buf.len() as u64) as usize;
        read_exact(&mut r, &mut buf[..take], path)?;
        hasher.update(&buf[..take]);
        left -= take as u64;
    }
    let stored = read_u64(&mut r, path)?;
    let computed = hasher.digest();
    if stored != computed {
        return Err(Error::ChecksumMismatch { path: path.to_path_buf(), stored, computed });
    }
    let mut image_hash = [0u8; 32];
    read_exact(&mut r, &mut image_hash, path)?;

    let provenance = match std::fs::read_to_string(sidecar_path(path)) {
        Ok(text) => serde_json::from_str::<Sidecar>(&text)
            .map(|s| Provenance { eig_tol: s.eig_tol, created_unix: s.created_unix })
            .unwrap_or_default(),
        Err(_) => Provenance::default(),
    };
    let meta = PackMeta { neighborhood: Neighborhood::for_ndim(d), dims, spacing, beta, d_sqrt, image_hash };
    Ok(Header { meta, values, n, m, q_offset, provenance })
}

/// Loads a whole pack into memory.
pub fn load_pack(path: &Path) -> Result<SpectralPack> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let h = read_header(&mut file, path)?;
    file.seek(SeekFrom::Start(h.q_offset)).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let vectors = read_f32s(&mut r, h.n * h.m, path)?;
    let basis = EigenBasis::new(h.n, h.values, vectors).map_err(|e| Error::format(path, e.to_string()))?;
    SpectralPack::new(h.meta, basis, h.provenance).map_err(|e| Error::format(path, e.to_string()))
}

/// A pack whose vectors stay on disk and are read a block of columns at a
/// time.
#[derive(Debug)]
pub struct PackReader {
    path: PathBuf,
    file: Mutex<File>,
    meta: PackMeta,
    values: Vec<f64>,
    q_offset: u64,
    provenance: Provenance,
}

impl PackReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let h = read_header(&mut file, path)?;
        if h.values.is_empty() {
            return Err(Error::format(path, "pack holds no eigenpairs"));
        }
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            meta: h.meta,
            values: h.values,
            q_offset: h.q_offset,
            provenance: h.provenance,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }
}

impl SpectralBasis for PackReader {
    fn meta(&self) -> &PackMeta {
        &self.meta
    }

    fn values(&self) -> &[f64] {
        &self.values
    }

    fn read_columns(&self, start: usize, out: &mut [f64]) -> fastwalk_core::Result<()> {
        let n = self.meta.len();
        let count = out.len() / n.max(1);
        if start + count > self.values.len() {
            return Err(fastwalk_core::Error::Index { index: start + count, len: self.values.len() });
        }
        let src = |e: std::io::Error| fastwalk_core::Error::Source(format!("{}: {e}", self.path.display()));
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.seek(SeekFrom::Start(self.q_offset + 4 * (start * n) as u64)).map_err(src)?;
        let mut bytes = vec![0u8; out.len() * 4];
        file.read_exact(&mut bytes).map_err(src)?;
        for (o, c) in out.iter_mut().zip(bytes.chunks_exact(4)) {
            *o = f64::from(f32::from_le_bytes(c.try_into().unwrap()));
        }
        Ok(())
    }
}
