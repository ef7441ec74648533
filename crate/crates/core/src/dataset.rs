//! Random band-limited initial conditions, `(phi0, phi_T)` dataset
//! generation and the `ESNETDS1` binary format.
//!
//! File layout (all little-endian):
//!
//! ```text
//! magic     8 bytes  "ESNETDS1"
//! version   u32      1
//! dims      u32
//! n         u32
//! epsilon   f64
//! t_end     f64
//! count     u64
//! base_seed u64
//! count x { seed u64, phi0 [f64; n^dims], phiT [f64; n^dims] }  (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{Field, Grid, Spectral};
use crate::solver::{integrate, SolverConfig};

pub const MAGIC: &[u8; 8] = b"ESNETDS1";
pub const VERSION: u32 = 1;
/// Initial conditions use Fourier modes with `|m| < MAX_FREQUENCY` per axis.
pub const MAX_FREQUENCY: i64 = 8;

const HEADER_LEN: usize = 8 + 4 * 3 + 8 * 4;

/// One step of the splitmix64 generator.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-sample seed, independent of generation order.
pub fn sample_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base_seed) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Real Fourier amplitude of one mode: the field gains
/// `cos_coeff * cos(pi m.x) + sin_coeff * sin(pi m.x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCoeff {
    pub mx: i64,
    pub my: i64,
    pub cos_coeff: f64,
    pub sin_coeff: f64,
}

/// Modes of the half plane with `|m| < MAX_FREQUENCY` per axis, zero mode
/// first. Each one has an independent cosine and sine amplitude (the zero
/// mode only a cosine one).
fn half_plane_modes(dims: usize) -> Vec<(i64, i64)> {
    let k = MAX_FREQUENCY - 1;
    let mut modes = vec![(0, 0)];
    if dims == 1 {
        modes.extend((1..=k).map(|mx| (mx, 0)));
    } else {
        modes.extend((1..=k).map(|my| (0, my)));
        for mx in 1..=k {
            modes.extend((-k..=k).map(|my| (mx, my)));
        }
    }
    modes
}

/// Draws standard-normal amplitudes for every admissible mode.
pub fn sample_mode_coefficients(dims: usize, rng: &mut impl rand::Rng) -> Vec<ModeCoeff> {
    half_plane_modes(dims)
        .into_iter()
        .map(|(mx, my)| {
            let cos_coeff: f64 = StandardNormal.sample(rng);
            let sin_coeff: f64 = if mx == 0 && my == 0 {
                0.0
            } else {
                StandardNormal.sample(rng)
            };
            ModeCoeff {
                mx,
                my,
                cos_coeff,
                sin_coeff,
            }
        })
        .collect()
}

/// Synthesizes the field described by `coeffs` on `grid`.
pub fn synthesize_modes(grid: Grid, coeffs: &[ModeCoeff]) -> Field {
    let modes: Vec<(i64, i64, Complex64)> = coeffs
        .iter()
        .map(|c| {
            let amp = if c.mx == 0 && c.my == 0 {
                Complex64::new(c.cos_coeff, 0.0)
            } else {
                Complex64::new(0.5 * c.cos_coeff, -0.5 * c.sin_coeff)
            };
            (c.mx, c.my, amp)
        })
        .collect();
    Spectral::for_grid(grid).synthesize(&modes)
}

/// Random initial condition: band-limited normal Fourier series rescaled by
/// `1 / max(1, ||phi0||_inf)`.
pub fn sample_ic(grid: Grid, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = sample_mode_coefficients(grid.dims(), &mut rng);
    let phi = synthesize_modes(grid, &coeffs);
    let scale = 1.0 / phi.max_abs().max(1.0);
    phi.scale(scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub phi0: Field,
    pub phi_t: Field,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub dims: u32,
    pub n: u32,
    pub epsilon: f64,
    pub t_end: f64,
    pub count: u64,
    pub base_seed: u64,
}

impl DatasetHeader {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims as usize, self.n as usize)
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        let mut w = &mut buf[..];
        w.write_all(MAGIC).unwrap();
        w.write_all(&self.version.to_le_bytes()).unwrap();
        w.write_all(&self.dims.to_le_bytes()).unwrap();
        w.write_all(&self.n.to_le_bytes()).unwrap();
        w.write_all(&self.epsilon.to_le_bytes()).unwrap();
        w.write_all(&self.t_end.to_le_bytes()).unwrap();
        w.write_all(&self.count.to_le_bytes()).unwrap();
        w.write_all(&self.base_seed.to_le_bytes()).unwrap();
        buf
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: Grid,
    pub epsilon: f64,
    pub t_end: f64,
    pub base_seed: u64,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            version: VERSION,
            dims: self.grid.dims() as u32,
            n: self.grid.n() as u32,
            epsilon: self.epsilon,
            t_end: self.t_end,
            count: self.samples.len() as u64,
            base_seed: self.base_seed,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of training samples for a split fraction: `floor(fraction * count)`.
    pub fn train_len(&self, fraction: f64) -> usize {
        ((fraction * self.samples.len() as f64).floor() as usize).min(self.samples.len())
    }

    /// First `floor(fraction * count)` samples train, the rest test.
    pub fn split(&self, fraction: f64) -> (&[Sample], &[Sample]) {
        self.samples.split_at(self.train_len(fraction))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.samples.is_empty() {
            return Err(Error::format(path, "refusing to write an empty dataset"));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(&self.header().encode()).map_err(io)?;
        for s in &self.samples {
            s.phi0.grid().check_same(&self.grid)?;
            s.phi_t.grid().check_same(&self.grid)?;
            w.write_all(&s.seed.to_le_bytes()).map_err(io)?;
            write_f64s(&mut w, s.phi0.values()).map_err(io)?;
            write_f64s(&mut w, s.phi_t.values()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let header = read_header(&mut r, path)?;
        let grid = header
            .grid()
            .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        let len = grid.len();
        let mut samples = Vec::with_capacity(header.count.min(1 << 20) as usize);
        let mut buf = vec![0u8; 8 + 16 * len];
        for i in 0..header.count {
            r.read_exact(&mut buf).map_err(|_| {
                Error::format(path, format!("truncated at sample {i} of {}", header.count))
            })?;
            let seed = u64::from_le_bytes(buf[..8].try_into().unwrap());
            let phi0 = decode_f64s(&buf[8..8 + 8 * len]);
            let phi_t = decode_f64s(&buf[8 + 8 * len..]);
            let field = |v| {
                Field::new(grid, v).map_err(|e| Error::format(path, format!("sample {i}: {e}")))
            };
            samples.push(Sample {
                seed,
                phi0: field(phi0)?,
                phi_t: field(phi_t)?,
            });
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::format(path, "trailing bytes after last sample"));
        }
        Ok(Dataset {
            grid,
            epsilon: header.epsilon,
            t_end: header.t_end,
            base_seed: header.base_seed,
            samples,
        })
    }

    /// One row per grid point: `sample,index,x[,y],phi0,phiT`.
    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let n = self.grid.n();
        if self.grid.dims() == 1 {
            writeln!(w, "sample,index,x,phi0,phiT").map_err(io)?;
        } else {
            writeln!(w, "sample,index,x,y,phi0,phiT").map_err(io)?;
        }
        for (s, sample) in self.samples.iter().enumerate() {
            for (idx, (a, b)) in sample.phi0.values().iter().zip(sample.phi_t.values()).enumerate() {
                if self.grid.dims() == 1 {
                    writeln!(w, "{s},{idx},{:?},{a:?},{b:?}", self.grid.coord(idx)).map_err(io)?;
                } else {
                    let (x, y) = (self.grid.coord(idx % n), self.grid.coord(idx / n));
                    writeln!(w, "{s},{idx},{x:?},{y:?},{a:?},{b:?}").map_err(io)?;
                }
            }
        }
        w.flush().map_err(io)
    }
}

/// Reads and validates only the header of a dataset file.
pub fn read_header_from(path: impl AsRef<Path>) -> Result<DatasetHeader> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_header(&mut BufReader::new(file), path)
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<DatasetHeader> {
    let mut buf = [0u8; HEADER_LEN];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &buf[..8] != MAGIC {
        return Err(Error::format(path, "bad magic, not an ESNETDS1 dataset"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let header = DatasetHeader {
        version: u32_at(8),
        dims: u32_at(12),
        n: u32_at(16),
        epsilon: f64::from_bits(u64_at(20)),
        t_end: f64::from_bits(u64_at(28)),
        count: u64_at(36),
        base_seed: u64_at(44),
    };
    if header.version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {} (expected {VERSION})", header.version),
        ));
    }
    if header.dims != 1 && header.dims != 2 {
        return Err(Error::format(path, format!("bad dims {}", header.dims)));
    }
    if header.count == 0 {
        return Err(Error::format(path, "empty dataset (count = 0)"));
    }
    Ok(header)
}

pub(crate) fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn decode_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// Generates `count` samples. Results depend only on `(grid, cfg, count,
/// base_seed)`; `workers` only changes wall time. `progress` is called with
/// each finished sample index (in completion order).
pub fn generate(
    grid: Grid,
    cfg: &SolverConfig,
    count: usize,
    base_seed: u64,
    workers: usize,
    progress: impl Fn(usize) + Sync,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::SolverConfig("dataset count must be at least 1".into()));
    }
    cfg.validate()?;
    let one = |i: usize| -> Result<Sample> {
        let seed = sample_seed(base_seed, i as u64);
        let phi0 = sample_ic(grid, seed);
        let traj = integrate(&phi0, cfg).map_err(|e| Error::Sample {
            index: i,
            seed,
            source: Box::new(e),
        })?;
        progress(i);
        Ok(Sample {
            seed,
            phi0,
            phi_t: traj.last().clone(),
        })
    };
    let samples: Result<Vec<Sample>> = if workers <= 1 {
        (0..count).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        pool.install(|| (0..count).into_par_iter().map(one).collect())
    };
    Ok(Dataset {
        grid,
        epsilon: cfg.epsilon,
        t_end: cfg.t_end,
        base_seed,
        samples: samples?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("estable-dataset-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn sample_ic_is_deterministic_and_bounded() {
        for grid in [Grid::new(1, 256).unwrap(), Grid::new(2, 32).unwrap()] {
            let a = sample_ic(grid, 42);
            let b = sample_ic(grid, 42);
            assert_eq!(a.values(), b.values());
            assert!(a.max_abs() <= 1.0 + 1e-15);
            assert_ne!(sample_ic(grid, 43).values(), a.values());
        }
    }

    #[test]
    fn sample_ic_is_band_limited() {
        for grid in [Grid::new(1, 64).unwrap(), Grid::new(2, 32).unwrap()] {
            let phi = sample_ic(grid, 9);
            let sp = Spectral::for_grid(grid);
            let spec = sp.forward(&phi);
            let scale = spec.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let mut high = 0.0f64;
            let mut low = 0.0f64;
            sp.for_each_mode(|idx, mx, my| {
                let mag = spec.coeffs[idx].norm();
                if mx.abs() >= MAX_FREQUENCY || my.abs() >= MAX_FREQUENCY {
                    high = high.max(mag);
                } else {
                    low = low.max(mag);
                }
            });
            assert!(high <= 1e-13 * scale, "{grid}: {high}");
            assert!(low > 0.0);
        }
    }

    #[test]
    fn mode_counts() {
        assert_eq!(half_plane_modes(1).len(), 8);
        // 225 real amplitudes in 2D: one for the zero mode, two for each of 112 modes.
        assert_eq!(half_plane_modes(2).len(), 113);
    }

    #[test]
    fn mode_coefficient_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut values = Vec::new();
        for _ in 0..10_000 {
            for c in sample_mode_coefficients(1, &mut rng) {
                values.push(c.cos_coeff);
                if c.mx != 0 {
                    values.push(c.sin_coeff);
                }
            }
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.05, "mean {mean}");
        assert!((0.9..=1.1).contains(&var), "variance {var}");
    }

    #[test]
    fn seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| sample_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    fn small_dataset(count: usize, workers: usize) -> Dataset {
        let grid = Grid::new(1, 32).unwrap();
        let cfg = SolverConfig::new(0.05, 0.5);
        generate(grid, &cfg, count, 11, workers, |_| {}).unwrap()
    }

    #[test]
    fn generation_is_worker_independent() {
        let a = small_dataset(4, 1);
        let b = small_dataset(4, 3);
        assert_eq!(a, b);
        let pa = tmp("w1.bin");
        let pb = tmp("w3.bin");
        a.write(&pa).unwrap();
        b.write(&pb).unwrap();
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
    }

    #[test]
    fn write_read_round_trip() {
        let ds = small_dataset(3, 1);
        let path = tmp("rt.bin");
        ds.write(&path).unwrap();
        let back = Dataset::read(&path).unwrap();
        assert_eq!(back, ds);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 3 * (8 + 2 * 32 * 8));
        assert_eq!(&bytes[..8], MAGIC);
    }

    #[test]
    fn read_rejects_corrupt_files() {
        let ds = small_dataset(2, 1);
        let path = tmp("corrupt.bin");
        ds.write(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let truncated = tmp("truncated.bin");
        std::fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
        let err = Dataset::read(&truncated).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        std::fs::write(&truncated, &bytes[..20]).unwrap();
        assert!(Dataset::read(&truncated).unwrap_err().to_string().contains("header"));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&truncated, &bad).unwrap();
        assert!(Dataset::read(&truncated).unwrap_err().to_string().contains("magic"));

        let mut bad = bytes.clone();
        bad[8] = 9;
        std::fs::write(&truncated, &bad).unwrap();
        assert!(Dataset::read(&truncated).unwrap_err().to_string().contains("version"));

        let mut bad = bytes;
        bad.push(0);
        std::fs::write(&truncated, &bad).unwrap();
        assert!(Dataset::read(&truncated).is_err());
    }

    #[test]
    fn split_is_floor_of_fraction() {
        let ds = small_dataset(3, 1);
        let (train, test) = ds.split(0.7);
        assert_eq!((train.len(), test.len()), (2, 1));
        let count: usize = 1120;
        assert_eq!((0.7 * count as f64).floor() as usize, 784);
        assert_eq!(((2048.0 / 2528.0) * 2528.0f64).floor() as usize, 2048);
    }

    #[test]
    fn generate_rejects_zero_count() {
        let grid = Grid::new(1, 32).unwrap();
        assert!(generate(grid, &SolverConfig::new(0.01, 1.0), 0, 1, 1, |_| {}).is_err());
    }
}
