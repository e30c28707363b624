//! NIT1 tensors, binary PGM ingestion and synthetic image generation.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linops::Geometry;
use crate::rng::rng_from_seed;

const MAGIC: &[u8; 4] = b"NIT1";
const VERSION: u8 = 1;

/// A dense tensor stored as `f32` on disk and `f64` in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(Error::Format(format!(
                "tensor dims {dims:?} hold {count} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            dims: vec![data.len()],
            data,
        }
    }

    /// `[H, W]` for one channel, `[C, H, W]` otherwise.
    pub fn image(geometry: Geometry, data: Vec<f64>) -> Result<Self> {
        let dims = if geometry.channels == 1 {
            vec![geometry.height, geometry.width]
        } else {
            vec![geometry.channels, geometry.height, geometry.width]
        };
        Tensor::new(dims, data)
    }

    pub fn geometry(&self) -> Result<Geometry> {
        match self.dims[..] {
            [h, w] => Geometry::new(h, w, 1),
            [c, h, w] => Geometry::new(h, w, c),
            _ => Err(Error::Format(format!("expected an [H, W] or [C, H, W] tensor, got {:?}", self.dims))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.dims.len() > u8::MAX as usize {
            return Err(Error::Format("too many tensor dimensions".into()));
        }
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dims.len() as u8);
        out.extend_from_slice(&[0, 0]);
        for &d in &self.dims {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for (i, &v) in self.data.iter().enumerate() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::NonFinite(format!("tensor value {i} ({v}) is not a finite f32")));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing NIT1 magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!("unsupported NIT1 version {}", bytes[4])));
        }
        if bytes[6] != 0 || bytes[7] != 0 {
            return Err(Error::Format("nonzero NIT1 header padding".into()));
        }
        let ndim = bytes[5] as usize;
        let header = 8 + 4 * ndim;
        if bytes.len() < header {
            return Err(Error::Format("truncated NIT1 header".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let dims: Vec<usize> = (0..ndim).map(|i| word(8 + 4 * i) as usize).collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("NIT1 dims overflow".into()))?;
        if bytes.len() != header + 4 * count {
            return Err(Error::Format(format!(
                "NIT1 payload has {} bytes, dims {dims:?} need {}",
                bytes.len() - header,
                4 * count
            )));
        }
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let v = f32::from_le_bytes(bytes[header + 4 * i..header + 4 * i + 4].try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("NIT1 value {i} is {v}")));
            }
            data.push(v as f64);
        }
        Ok(Tensor { dims, data })
    }
}

pub fn write_nit1(path: &Path, tensor: &Tensor) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, tensor.to_bytes()?)?;
    Ok(())
}

pub fn read_nit1(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| with_path(e, path))?;
    Tensor::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Binary PGM (`P5`, maxval ≤ 255) scaled to `[0, 1]` by `v / 255`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(Geometry, Vec<f64>)> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Format("only binary PGM (P5) is supported".into()));
    }
    let mut number = |what: &str| -> Result<usize> {
        token()?
            .parse()
            .map_err(|_| Error::Format(format!("bad PGM {what}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("PGM maxval {maxval} unsupported (need 1..=255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let count = width * height;
    if bytes.len() < start + count {
        return Err(Error::Format("truncated PGM raster".into()));
    }
    let data = bytes[start..start + count].iter().map(|&v| v as f64 / 255.0).collect();
    Ok((Geometry::new(height, width, 1)?, data))
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Loads a PGM (`.pgm`) or NIT1 image.
pub fn load_image(path: &Path) -> Result<(Geometry, Vec<f64>)> {
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let bytes = fs::read(path).map_err(|e| with_path(e, path))?;
        parse_pgm(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    } else {
        let t = read_nit1(path)?;
        Ok((t.geometry()?, t.data))
    }
}

/// Seeded dictionary of smooth atoms. Image `k` is `0.5` plus a random
/// combination of the atoms drawn from stream `k`, so images share a
/// low-dimensional subspace that linear reconstructors can learn.
#[derive(Debug, Clone)]
pub struct SmoothDictionary {
    geometry: Geometry,
    atoms: Vec<Vec<f64>>,
    seed: u64,
}

impl SmoothDictionary {
    pub fn new(geometry: Geometry, components: usize, seed: u64) -> Result<Self> {
        if components == 0 {
            return Err(Error::Parameter("dictionary needs at least one component".into()));
        }
        let mut rng = rng_from_seed(seed);
        let (h, w) = (geometry.height as f64, geometry.width as f64);
        let atoms = (0..components)
            .map(|_| {
                let fy = rng.random_range(0..=3) as f64;
                let fx = rng.random_range(0..=3) as f64;
                let phases: Vec<f64> = (0..geometry.channels)
                    .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
                    .collect();
                let mut atom = Vec::with_capacity(geometry.len());
                for phase in &phases {
                    for r in 0..geometry.height {
                        for c in 0..geometry.width {
                            let t = std::f64::consts::TAU * (fy * r as f64 / h + fx * c as f64 / w) + phase;
                            atom.push(t.cos());
                        }
                    }
                }
                atom
            })
            .collect();
        Ok(SmoothDictionary { geometry, atoms, seed })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// Image `index`, with coefficients uniform in `±0.4/√K` so values
    /// stay near `[0, 1]`.
    pub fn image(&self, index: u64) -> Vec<f64> {
        let mut rng = crate::rng::stream_rng(self.seed, index.wrapping_add(1) << 20);
        let scale = 0.4 / (self.atoms.len() as f64).sqrt();
        let mut out = vec![0.5; self.geometry.len()];
        for atom in &self.atoms {
            let c = scale * (2.0 * rng.random::<f64>() - 1.0);
            for (o, a) in out.iter_mut().zip(atom) {
                *o += c * a;
            }
        }
        out
    }
}
