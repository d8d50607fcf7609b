//! 2-D Gaussian mixture benchmarks and flat-vector dataset files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{Matrix, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureKind {
    Grid25,
    Grid49,
    Ring8,
    Circle,
    Custom,
}

/// One mixture mode. `multiplicity` counts coincident components merged into
/// it (three for the centre of the circle dataset, otherwise one).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureMode {
    pub center: [f64; 2],
    pub sigma: f64,
    pub weight: f64,
    pub multiplicity: u32,
}

/// Isotropic 2-D Gaussian mixture whose modes double as the reference
/// distribution for the mode-collapse metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub kind: MixtureKind,
    modes: Vec<MixtureMode>,
}

impl GaussianMixtureSpec {
    pub fn new(kind: MixtureKind, modes: Vec<MixtureMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(invalid("mixture needs at least one mode"));
        }
        let total: f64 = modes.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mode weights sum to {total}, expected 1")));
        }
        for (i, m) in modes.iter().enumerate() {
            if !(m.sigma > 0.0) || !(m.weight > 0.0) || m.multiplicity == 0 {
                return Err(invalid(format!("mode {i}: sigma, weight and multiplicity must be positive")));
            }
            if modes[..i].iter().any(|o| o.center == m.center) {
                return Err(invalid(format!("mode {i}: duplicate center {:?}", m.center)));
            }
        }
        Ok(Self { kind, modes })
    }

    pub fn modes(&self) -> &[MixtureMode] {
        &self.modes
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    /// Number of mixture components before coincident ones are merged.
    pub fn component_count(&self) -> usize {
        self.modes.iter().map(|m| m.multiplicity as usize).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.weight).collect()
    }

    /// Index of the mode at the origin, if any.
    pub fn center_mode(&self) -> Option<usize> {
        self.modes.iter().position(|m| m.center == [0.0, 0.0])
    }

    /// Weighted mean of the mode centers.
    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for mode in &self.modes {
            m[0] += mode.weight * mode.center[0];
            m[1] += mode.weight * mode.center[1];
        }
        m
    }

    /// `n` draws: pick a mode by weight, then add `N(0, sigma^2 I)`.
    pub fn sample(&self, rng: &mut RngState, n: usize) -> Matrix {
        let mut cumulative = Vec::with_capacity(self.modes.len());
        let mut acc = 0.0;
        for m in &self.modes {
            acc += m.weight;
            cumulative.push(acc);
        }
        let mut out = Matrix::zeros(n, 2);
        for i in 0..n {
            let u = rng.uniform() * acc;
            let k = cumulative.partition_point(|&c| c <= u).min(self.modes.len() - 1);
            let mode = &self.modes[k];
            let dx = rng.normal();
            let dy = rng.normal();
            out[(i, 0)] = mode.center[0] + mode.sigma * dx;
            out[(i, 1)] = mode.center[1] + mode.sigma * dy;
        }
        out
    }

    /// Named presets: `grid25`, `grid49`, `ring8`, `circle`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "grid25" => make_grid(5, 4.0, 0.05),
            "grid49" => make_grid(7, 4.0, 0.05),
            "ring8" => make_ring(8, 1.0, 0.01),
            "circle" => Ok(make_circle()),
            other => Err(invalid(format!(
                "unknown preset {other:?}; expected grid25, grid49, ring8 or circle"
            ))),
        }
    }
}

/// `per_side^2` equally weighted modes on the uniform lattice over `[-extent, extent]^2`.
pub fn make_grid(per_side: usize, extent: f64, sigma: f64) -> Result<GaussianMixtureSpec> {
    if per_side < 2 {
        return Err(invalid("a grid needs at least 2 modes per side"));
    }
    let step = 2.0 * extent / (per_side - 1) as f64;
    let weight = 1.0 / (per_side * per_side) as f64;
    let mut modes = Vec::with_capacity(per_side * per_side);
    for i in 0..per_side {
        for j in 0..per_side {
            modes.push(MixtureMode {
                center: [-extent + step * i as f64, -extent + step * j as f64],
                sigma,
                weight,
                multiplicity: 1,
            });
        }
    }
    let kind = match (per_side, extent, sigma) {
        (5, 4.0, 0.05) => MixtureKind::Grid25,
        (7, 4.0, 0.05) => MixtureKind::Grid49,
        _ => MixtureKind::Custom,
    };
    GaussianMixtureSpec::new(kind, modes)
}

/// Equally weighted modes at angles `2 pi i / n`, counterclockwise from `(radius, 0)`.
pub fn make_ring(n: usize, radius: f64, sigma: f64) -> Result<GaussianMixtureSpec> {
    if n < 2 {
        return Err(invalid("a ring needs at least 2 modes"));
    }
    let modes = ring_centers(n, radius)
        .into_iter()
        .map(|center| MixtureMode {
            center,
            sigma,
            weight: 1.0 / n as f64,
            multiplicity: 1,
        })
        .collect();
    let kind = if (n, radius, sigma) == (8, 1.0, 0.01) {
        MixtureKind::Ring8
    } else {
        MixtureKind::Custom
    };
    GaussianMixtureSpec::new(kind, modes)
}

/// 100 modes on the radius-2 circle plus three coincident components at the
/// origin, all with sigma 0.05 and equal component weight 1/103. The centre
/// components form a single mode of weight 3/103.
pub fn make_circle() -> GaussianMixtureSpec {
    const RING: usize = 100;
    const CENTER: u32 = 3;
    let per = 1.0 / (RING as f64 + f64::from(CENTER));
    let mut modes: Vec<MixtureMode> = ring_centers(RING, 2.0)
        .into_iter()
        .map(|center| MixtureMode {
            center,
            sigma: 0.05,
            weight: per,
            multiplicity: 1,
        })
        .collect();
    modes.push(MixtureMode {
        center: [0.0, 0.0],
        sigma: 0.05,
        weight: f64::from(CENTER) * per,
        multiplicity: CENTER,
    });
    GaussianMixtureSpec::new(MixtureKind::Circle, modes).expect("circle preset is valid")
}

fn ring_centers(n: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            [radius * theta.cos(), radius * theta.sin()]
        })
        .collect()
}

/// A flat-vector dataset: one example per row.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorDataset {
    pub samples: Matrix,
}

impl VectorDataset {
    pub fn new(samples: Matrix) -> Result<Self> {
        if samples.rows() == 0 || samples.cols() == 0 {
            return Err(invalid("dataset needs at least one non-empty row"));
        }
        if !samples.is_finite() {
            return Err(Error::NonFinite("dataset entries".into()));
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// `n` rows drawn uniformly with replacement.
    pub fn sample(&self, rng: &mut RngState, n: usize) -> Matrix {
        let idx: Vec<usize> = (0..n)
            .map(|_| ((rng.uniform() * self.len() as f64) as usize).min(self.len() - 1))
            .collect();
        self.samples.select_rows(&idx)
    }

    /// Linear map of the global value range onto `[-1, 1]`.
    pub fn rescale_unit(&mut self) {
        let (lo, hi) = self
            .samples
            .as_slice()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let span = hi - lo;
        self.samples.as_mut_slice().iter_mut().for_each(|v| {
            *v = if span > 0.0 { 2.0 * (*v - lo) / span - 1.0 } else { 0.0 };
        });
    }
}

/// Where a trainer draws real samples from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Mixture(GaussianMixtureSpec),
    Vectors(VectorDataset),
}

impl DataSource {
    pub fn dim(&self) -> usize {
        match self {
            DataSource::Mixture(_) => 2,
            DataSource::Vectors(ds) => ds.dim(),
        }
    }

    pub fn sample(&self, rng: &mut RngState, n: usize) -> Matrix {
        match self {
            DataSource::Mixture(spec) => spec.sample(rng, n),
            DataSource::Vectors(ds) => ds.sample(rng, n),
        }
    }

    pub fn mixture(&self) -> Option<&GaussianMixtureSpec> {
        match self {
            DataSource::Mixture(spec) => Some(spec),
            DataSource::Vectors(_) => None,
        }
    }
}

const BIN_MAGIC: &[u8; 8] = b"OKGVEC\0\x01";

/// Loads a dataset from CSV (headerless, one example per row) or, for a
/// `.bin` extension, the raw little-endian binary format.
pub fn load_vectors(path: impl AsRef<Path>, rescale: bool) -> Result<VectorDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    let samples = if path.extension().is_some_and(|e| e == "bin") {
        read_bin(path, BufReader::new(file))?
    } else {
        read_csv(path, file)?
    };
    let mut ds = VectorDataset::new(samples)?;
    if rescale {
        ds.rescale_unit();
    }
    Ok(ds)
}

fn read_csv(path: &Path, file: File) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let expected = *cols.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RaggedRows {
                path: path.to_path_buf(),
                row,
                expected,
                found: record.len(),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                row,
                col,
                value: field.to_string(),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

fn read_bin(path: &Path, mut r: impl Read) -> Result<Matrix> {
    let mut header = [0u8; 24];
    if let Err(e) = r.read_exact(&mut header) {
        return Err(if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::EmptyDataset(path.to_path_buf())
        } else {
            e.into()
        });
    }
    if &header[..8] != BIN_MAGIC {
        return Err(invalid(format!("{} is not a vector dataset file", path.display())));
    }
    let n = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
    let d = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes")) as usize;
    if n == 0 || d == 0 {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * d * 8 {
        return Err(Error::RaggedRows {
            path: path.to_path_buf(),
            row: bytes.len() / 8 / d,
            expected: d,
            found: (bytes.len() / 8) % d,
        });
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Matrix::from_vec(n, d, data)
}

/// Writes one row per line with shortest round-trip float formatting.
pub fn save_vectors_csv(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_vectors_bin(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BIN_MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_presets() {
        let g = make_grid(5, 4.0, 0.05).unwrap();
        assert_eq!(g.kind, MixtureKind::Grid25);
        assert_eq!(g.num_modes(), 25);
        let lattice = [-4.0, -2.0, 0.0, 2.0, 4.0];
        for m in g.modes() {
            assert!(lattice.contains(&m.center[0]) && lattice.contains(&m.center[1]));
        }
        assert_eq!(make_grid(7, 4.0, 0.05).unwrap().num_modes(), 49);
        let corners = make_grid(2, 1.0, 0.3).unwrap();
        let mut cs: Vec<[f64; 2]> = corners.modes().iter().map(|m| m.center).collect();
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(cs, vec![[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]);
        assert!(make_grid(1, 1.0, 0.1).is_err());
    }

    #[test]
    fn ring_presets() {
        let r = make_ring(8, 1.0, 0.01).unwrap();
        assert_eq!(r.kind, MixtureKind::Ring8);
        assert_eq!(r.modes()[0].center, [1.0, 0.0]);
        for m in r.modes() {
            assert!(((m.center[0].powi(2) + m.center[1].powi(2)).sqrt() - 1.0).abs() < 1e-15);
        }
        let four = make_ring(4, 1.0, 0.1).unwrap();
        let expect = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (m, e) in four.modes().iter().zip(expect) {
            assert!((m.center[0] - e[0]).abs() < 1e-15 && (m.center[1] - e[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn circle_preset() {
        let c = make_circle();
        assert_eq!(c.component_count(), 103);
        assert_eq!(c.num_modes(), 101);
        let center = c.center_mode().unwrap();
        assert!((c.modes()[center].weight - 3.0 / 103.0).abs() < 1e-15);
        assert!(c
            .modes()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != center)
            .all(|(_, m)| (m.weight - 1.0 / 103.0).abs() < 1e-15));
    }

    #[test]
    fn degenerate_noise_stays_on_centers() {
        let mut spec = make_grid(3, 1.0, 0.1).unwrap();
        spec.modes.iter_mut().for_each(|m| m.sigma = 1e-9);
        let x = spec.sample(&mut RngState::new(1), 200);
        for row in x.row_iter() {
            let near = spec
                .modes()
                .iter()
                .any(|m| (m.center[0] - row[0]).hypot(m.center[1] - row[1]) < 1e-6);
            assert!(near);
        }
    }

    #[test]
    fn mode_frequencies_follow_weights() {
        let spec = make_circle();
        let n = 100_000;
        let x = spec.sample(&mut RngState::new(2), n);
        let mut counts = vec![0usize; spec.num_modes()];
        for row in x.row_iter() {
            let k = spec
                .modes()
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = (a.1.center[0] - row[0]).hypot(a.1.center[1] - row[1]);
                    let db = (b.1.center[0] - row[0]).hypot(b.1.center[1] - row[1]);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
                .0;
            counts[k] += 1;
        }
        for (c, m) in counts.iter().zip(spec.modes()) {
            let sd = (n as f64 * m.weight * (1.0 - m.weight)).sqrt();
            assert!((*c as f64 - n as f64 * m.weight).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn presets_by_name() {
        for name in ["grid25", "grid49", "ring8", "circle"] {
            let spec = GaussianMixtureSpec::preset(name).unwrap();
            let total: f64 = spec.weights().iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
        assert!(GaussianMixtureSpec::preset("moons").is_err());
    }
}
