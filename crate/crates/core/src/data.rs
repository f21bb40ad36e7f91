//! Training data: Gaussian sources, the denoising corruption, and the MNIST
//! plaquette pipeline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::parameterization::Dims;
use crate::rng::RngState;

pub const MNIST_SIDE: usize = 28;
pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";

fn default_noise() -> f64 {
    0.3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataKind {
    Isotropic,
    /// Diagonal covariance with `D_ii ∝ i^(-exponent)`, `tr D = N`.
    Anisotropic {
        #[serde(default = "default_exponent")]
        anisotropy_exponent: f64,
    },
    /// MNIST averaged over `block × block` pixel plaquettes. In a
    /// proportional sweep the ladder supplies the blocks instead.
    Mnist {
        #[serde(default)]
        block: Option<usize>,
        /// Falls back to the `DENSEAM_MNIST_DIR` environment variable.
        #[serde(default)]
        mnist_dir: Option<PathBuf>,
    },
}

fn default_exponent() -> f64 {
    0.4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    #[serde(flatten)]
    pub kind: DataKind,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
}

impl DataSpec {
    pub fn isotropic() -> Self {
        DataSpec {
            kind: DataKind::Isotropic,
            noise_std: default_noise(),
        }
    }
}

/// Clean inputs, one column per sample.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: Matrix,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.x.rows()
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }
}

/// Diagonal of the power-law covariance.
pub fn power_law_diagonal(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-exponent)).collect();
    let scale = n as f64 / raw.iter().sum::<f64>();
    raw.into_iter().map(|d| d * scale).collect()
}

/// Draws a Gaussian dataset. MNIST data goes through [`mnist_dataset`].
pub fn generate(spec: &DataSpec, dims: &Dims, rng: &mut RngState) -> Result<Dataset> {
    let (n, p) = (dims.n, dims.p);
    let x = match &spec.kind {
        DataKind::Isotropic => crate::rng::sample_gaussian(rng, n, p, 1.0),
        DataKind::Anisotropic { anisotropy_exponent } => {
            let sd: Vec<f64> = power_law_diagonal(n, *anisotropy_exponent)
                .into_iter()
                .map(f64::sqrt)
                .collect();
            let mut x = crate::rng::sample_gaussian(rng, n, p, 1.0);
            for (i, s) in sd.iter().enumerate() {
                x.row_mut(i).iter_mut().for_each(|v| *v *= s);
            }
            x
        }
        DataKind::Mnist { .. } => {
            return Err(Error::Config(
                "MNIST data must be prepared from IDX files, not sampled".into(),
            ))
        }
    };
    Ok(Dataset { x })
}

/// `(X + ε, X)` for the selected columns with fresh `ε ~ N(0, σ²)`.
pub fn noisy_batch(data: &Dataset, idx: &[usize], noise_std: f64, rng: &mut RngState) -> (Matrix, Matrix) {
    assert!(noise_std >= 0.0, "noise std must be non-negative");
    let y = data.x.select_cols(idx);
    let mut x = y.clone();
    if noise_std > 0.0 {
        for v in x.as_mut_slice() {
            *v += noise_std * rng.normal();
        }
    }
    (x, y)
}

// ---------------------------------------------------------------------------
// Plaquette downsampling

/// Coarse side length `⌈side / block⌉`.
pub fn coarse_side(side: usize, block: usize) -> usize {
    side.div_ceil(block)
}

/// Output dimension `⌈28/j⌉²`.
pub fn plaquette_dim(block: usize) -> usize {
    coarse_side(MNIST_SIDE, block).pow(2)
}

/// Averages a row-major `side × side` image over `block × block` tiles.
/// Edge tiles are truncated and averaged over the pixels they contain.
pub fn downsample_square(image: &[f64], side: usize, block: usize) -> Vec<f64> {
    assert!(block >= 1 && block <= side, "block must lie in 1..={side}");
    assert_eq!(image.len(), side * side, "image is not {side}x{side}");
    let cs = coarse_side(side, block);
    let mut out = vec![0.0; cs * cs];
    for br in 0..cs {
        for bc in 0..cs {
            let (r0, c0) = (br * block, bc * block);
            let (r1, c1) = ((r0 + block).min(side), (c0 + block).min(side));
            let mut acc = 0.0;
            for r in r0..r1 {
                acc += image[r * side + c0..r * side + c1].iter().sum::<f64>();
            }
            out[br * cs + bc] = acc / ((r1 - r0) * (c1 - c0)) as f64;
        }
    }
    out
}

pub fn plaquette_downsample(image: &[f64], block: usize) -> Vec<f64> {
    downsample_square(image, MNIST_SIDE, block)
}

/// Maps a 784-dimensional weight row with the same averaging as images.
pub fn project_weights(row: &[f64], block: usize) -> Vec<f64> {
    plaquette_downsample(row, block)
}

/// The linear map `D_j` as an explicit `N_j × 784` matrix.
pub fn plaquette_matrix(block: usize) -> Matrix {
    let n = MNIST_SIDE * MNIST_SIDE;
    let mut d = Matrix::zeros(plaquette_dim(block), n);
    let mut e = vec![0.0; n];
    for i in 0..n {
        e[i] = 1.0;
        d.set_col(i, &plaquette_downsample(&e, block));
        e[i] = 0.0;
    }
    d
}

// ---------------------------------------------------------------------------
// IDX files

/// Parsed IDX tensor with values converted to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub type_code: u8,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

const IDX_UBYTE: u8 = 0x08;
const IDX_F64: u8 = 0x0E;

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(format_err(path, 0, format!("expected 4 header bytes, found {}", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(path, 0, format!("bad magic number {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3])));
    }
    let type_code = bytes[2];
    let width = match type_code {
        IDX_UBYTE => 1,
        IDX_F64 => 8,
        t => return Err(format_err(path, 2, format!("unsupported IDX element type 0x{t:02x}"))),
    };
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated header: expected {header} bytes, found {}", bytes.len()),
        ));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|d| {
            let o = 4 + 4 * d;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    let expected = header + count * width;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            bytes.len().min(expected),
            format!("expected {expected} bytes for dims {dims:?}, found {}", bytes.len()),
        ));
    }
    let payload = &bytes[header..];
    let data = match type_code {
        IDX_UBYTE => payload.iter().map(|&b| b as f64).collect(),
        _ => payload
            .chunks_exact(8)
            .map(|c| f64::from_be_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    Ok(IdxArray { type_code, dims, data })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

pub fn encode_idx_u8(dims: &[usize], data: &[u8]) -> Vec<u8> {
    assert_eq!(dims.iter().product::<usize>(), data.len(), "IDX payload size");
    let mut out = vec![0, 0, IDX_UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Writes `data` as a big-endian `f64` IDX tensor.
pub fn write_idx_f64(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    assert_eq!(dims.iter().product::<usize>(), data.len(), "IDX payload size");
    let mut out = vec![0, 0, IDX_F64, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// MNIST images scaled to `[0, 1]`, one image per row-major `Vec` chunk.
#[derive(Clone, Debug)]
pub struct Images {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

impl Images {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols)
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let s = self.rows * self.cols;
        &self.pixels[i * s..(i + 1) * s]
    }
}

pub fn load_mnist_images(path: &Path) -> Result<Images> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() >= 4 && bytes[..4] != [0, 0, 0x08, 0x03] {
        return Err(format_err(
            path,
            0,
            format!(
                "expected image magic 0x00000803, found 0x{:02x}{:02x}{:02x}{:02x}",
                bytes[0], bytes[1], bytes[2], bytes[3]
            ),
        ));
    }
    let arr = parse_idx(&bytes, path)?;
    Ok(Images {
        rows: arr.dims[1],
        cols: arr.dims[2],
        pixels: arr.data.into_iter().map(|v| v / 255.0).collect(),
    })
}

pub fn load_mnist_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() >= 4 && bytes[..4] != [0, 0, 0x08, 0x01] {
        return Err(format_err(path, 0, "expected label magic 0x00000801"));
    }
    let arr = parse_idx(&bytes, path)?;
    Ok(arr.data.into_iter().map(|v| v as u8).collect())
}

/// Resolves the MNIST directory from an explicit path or `DENSEAM_MNIST_DIR`.
pub fn mnist_dir(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("DENSEAM_MNIST_DIR").map(PathBuf::from))
}

/// Downsampled, per-pixel centered images.
#[derive(Clone, Debug)]
pub struct PreparedImages {
    pub block: usize,
    pub side: usize,
    /// `N_j × count`.
    pub x: Matrix,
    /// Per-pixel mean removed from `x`.
    pub mean: Vec<f64>,
}

/// Downsamples every image and centers each coarse pixel across the set.
pub fn prepare_images(images: &Images, block: usize) -> PreparedImages {
    assert_eq!(images.rows, images.cols, "images must be square");
    let side = images.rows;
    let nj = coarse_side(side, block).pow(2);
    let count = images.count();
    let mut x = Matrix::zeros(nj, count);
    for i in 0..count {
        x.set_col(i, &downsample_square(images.image(i), side, block));
    }
    let mean: Vec<f64> = x.row_sums().into_iter().map(|s| s / count as f64).collect();
    for (r, m) in mean.iter().enumerate() {
        x.row_mut(r).iter_mut().for_each(|v| *v -= m);
    }
    PreparedImages { block, side, x, mean }
}

/// `P` images drawn without replacement.
pub fn mnist_dataset(prepared: &PreparedImages, p: usize, rng: &mut RngState) -> Dataset {
    let p = p.min(prepared.x.cols());
    let perm = rng.permutation(prepared.x.cols());
    Dataset {
        x: prepared.x.select_cols(&perm[..p]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parameterization::{dims_for, ScalingRegime};

    fn dims(n: usize, p: usize) -> Dims {
        Dims { n, k: n, p, b: 1 }
    }

    #[test]
    fn isotropic_variance() {
        let d = generate(&DataSpec::isotropic(), &dims(1000, 1000), &mut RngState::new(1)).unwrap();
        for i in [0, 499, 999] {
            let row = d.x.row(i);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 1000.0;
            assert!((var - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn power_law_normalization() {
        let d = power_law_diagonal(100, 0.4);
        assert!((d.iter().sum::<f64>() - 100.0).abs() < 1e-10);
        assert!((d[0] / d[99] - 100f64.powf(0.4)).abs() < 1e-10);
        let spec = DataSpec {
            kind: DataKind::Anisotropic {
                anisotropy_exponent: 0.4,
            },
            noise_std: 0.0,
        };
        let data = generate(&spec, &dims(100, 20000), &mut RngState::new(2)).unwrap();
        let v0 = data.x.row(0).iter().map(|v| v * v).sum::<f64>() / 20000.0;
        assert!((v0 / d[0] - 1.0).abs() < 0.05);
    }

    #[test]
    fn isotropic_marginals_agree_across_scales() {
        let regime = ScalingRegime::Proportional {
            kappa: 1.0,
            rho: 4.0,
            beta: 0.1,
        };
        let stats = |n: usize| {
            let d = generate(&DataSpec::isotropic(), &dims_for(&regime, n), &mut RngState::new(3)).unwrap();
            let s = d.x.as_slice();
            let m2 = s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64;
            (m2, s.len())
        };
        let (a, na) = stats(32);
        let (b, nb) = stats(64);
        // Sample variance of x² is 2; compare within three standard errors.
        let se = (2.0 / na as f64 + 2.0 / nb as f64).sqrt();
        assert!((a - b).abs() < 3.0 * se);
    }

    #[test]
    fn noise_properties() {
        let data = generate(&DataSpec::isotropic(), &dims(100, 1000), &mut RngState::new(4)).unwrap();
        let idx: Vec<usize> = (0..1000).collect();
        let (x, y) = noisy_batch(&data, &idx, 0.0, &mut RngState::new(5));
        assert_eq!(x, y);
        let (x, y) = noisy_batch(&data, &idx, 0.3, &mut RngState::new(5));
        let var = x.sub(&y).frobenius_sq() / 1e5;
        assert!((var / 0.09 - 1.0).abs() < 0.05);
        let (x2, _) = noisy_batch(&data, &idx, 0.3, &mut RngState::new(5));
        assert_eq!(x, x2);
    }

    #[test]
    fn plaquette_examples() {
        let img: Vec<f64> = (0..784).map(|i| (i as f64).sin()).collect();
        assert_eq!(plaquette_downsample(&img, 1), img);
        assert_eq!(plaquette_dim(2), 196);
        assert_eq!(plaquette_dim(3), 100);
        assert_eq!(plaquette_dim(4), 49);
        let c = plaquette_downsample(&[0.7; 784], 2);
        assert!(c.len() == 196 && c.iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let mean = img.iter().sum::<f64>() / 784.0;
        let one = plaquette_downsample(&img, 28);
        assert!(one.len() == 1 && (one[0] - mean).abs() < 1e-12);
        // Truncated edge tile for j = 3: last tile is 1 pixel wide.
        let d = plaquette_downsample(&img, 3);
        assert!((d[9] - (img[27] + img[28 + 27] + img[56 + 27]) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn weight_projection_is_the_image_map() {
        let mut rng = RngState::new(6);
        let a: Vec<f64> = (0..784).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..784).map(|_| rng.normal()).collect();
        assert_eq!(project_weights(&a, 1), a);
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = project_weights(&sum, 2);
        let rhs: Vec<f64> = project_weights(&a, 2).iter().zip(project_weights(&b, 2)).map(|(x, y)| x + y).collect();
        assert!(lhs.iter().zip(&rhs).all(|(x, y)| (x - y).abs() < 1e-12));
        let d = plaquette_matrix(2);
        let via = crate::linalg::matvec(&d, &a, false);
        assert!(via.iter().zip(project_weights(&a, 2)).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    fn synthetic_images(count: usize, seed: u64) -> Vec<u8> {
        let mut rng = RngState::new(seed);
        (0..count * 784).map(|_| rng.below(256) as u8).collect()
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imgs");
        let raw = synthetic_images(2, 1);
        fs::write(&path, encode_idx_u8(&[2, 28, 28], &raw)).unwrap();
        let imgs = load_mnist_images(&path).unwrap();
        assert_eq!(imgs.count(), 2);
        assert_eq!(imgs.image(1)[5], raw[784 + 5] as f64 / 255.0);

        let mut bytes = encode_idx_u8(&[2, 28, 28], &raw);
        bytes.truncate(1000);
        fs::write(&path, &bytes).unwrap();
        let err = load_mnist_images(&path).unwrap_err().to_string();
        assert!(err.contains("expected 1584 bytes") && err.contains("found 1000"), "{err}");

        fs::write(&path, encode_idx_u8(&[1, 3], &[1, 2, 3])).unwrap();
        let err = load_mnist_images(&path).unwrap_err().to_string();
        assert!(err.contains("0x00000803"), "{err}");
        assert!(load_mnist_labels(&path).is_err());

        let f = dir.path().join("f64");
        write_idx_f64(&f, &[2, 3], &[0.1, -2.0, 1e-300, 3.5, 7.0, f64::MAX]).unwrap();
        let arr = read_idx(&f).unwrap();
        assert_eq!(arr.dims, vec![2, 3]);
        assert_eq!(arr.data, vec![0.1, -2.0, 1e-300, 3.5, 7.0, f64::MAX]);
    }

    #[test]
    fn prepared_images_are_centered_and_commute_with_mean() {
        let raw = synthetic_images(50, 2);
        let images = Images {
            rows: 28,
            cols: 28,
            pixels: raw.iter().map(|&b| b as f64 / 255.0).collect(),
        };
        let prep = prepare_images(&images, 2);
        assert_eq!(prep.x.rows(), 196);
        for m in prep.x.row_sums() {
            assert!((m / 50.0).abs() < 1e-10);
        }
        let mut full_mean = vec![0.0; 784];
        for i in 0..50 {
            for (a, v) in full_mean.iter_mut().zip(images.image(i)) {
                *a += v / 50.0;
            }
        }
        let dm = plaquette_downsample(&full_mean, 2);
        assert!(dm.iter().zip(&prep.mean).all(|(a, b)| (a - b).abs() < 1e-12));
        let ds = mnist_dataset(&prep, 20, &mut RngState::new(1));
        assert_eq!(ds.len(), 20);
    }
}
