use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::net::{forward_batch, init_params, Dataset, NetworkConfig, Split};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// An image tensor plus labels as stored in a pair of IDX files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count · rows · cols` bytes, image-major, row-major within an image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let s = self.rows * self.cols;
        &self.pixels[i * s..(i + 1) * s]
    }

    /// Pixels scaled to `[0, 1]`, one image per row.
    pub fn to_pool(&self) -> LabeledPool {
        let s = self.rows * self.cols;
        let x = DMatrix::from_fn(self.count, s, |i, j| self.pixels[i * s + j] as f64 / 255.0);
        LabeledPool {
            x,
            labels: self.labels.iter().map(|&l| l as f64).collect(),
        }
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated { path: path.into() })
}

fn expect_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

/// `(count, rows, cols, pixels)` from an IDX image buffer.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    expect_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let len = count * rows * cols;
    let body = bytes.get(16..16 + len).ok_or_else(|| Error::Truncated { path: path.into() })?;
    Ok((count, rows, cols, body.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    expect_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let body = bytes.get(8..8 + count).ok_or_else(|| Error::Truncated { path: path.into() })?;
    Ok(body.to_vec())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<IdxImages> {
    let img = fs::read(images_path)?;
    let lab = fs::read(labels_path)?;
    let (count, rows, cols, pixels) = parse_idx_images(&img, images_path)?;
    let labels = parse_idx_labels(&lab, labels_path)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
        labels,
    })
}

pub fn encode_idx_images(data: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + data.pixels.len());
    for v in [IDX_IMAGES_MAGIC, data.count as u32, data.rows as u32, data.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&data.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx(images_path: &Path, labels_path: &Path, data: &IdxImages) -> Result<()> {
    fs::write(images_path, encode_idx_images(data))?;
    fs::write(labels_path, encode_idx_labels(&data.labels))?;
    Ok(())
}

/// Unnormalized samples with real labels, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    pub x: DMatrix<f64>,
    pub labels: Vec<f64>,
}

/// Plain text matrix: one sample per line, first column the label, the
/// rest features; separated by commas and/or whitespace. Blank lines and
/// lines starting with `#` are skipped.
pub fn load_text_matrix(path: &Path) -> Result<LabeledPool> {
    let text = fs::read_to_string(path)?;
    let malformed = |line: usize, msg: String| Error::MalformedData {
        path: path.into(),
        msg: format!("line {line}: {msg}"),
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| malformed(no + 1, format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() < 2 {
            return Err(malformed(no + 1, "need a label and at least one feature".into()));
        }
        if let Some(first) = rows.first() {
            if first.len() != vals.len() {
                return Err(malformed(no + 1, format!("expected {} columns, found {}", first.len(), vals.len())));
            }
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::MalformedData {
            path: path.into(),
            msg: "no samples".into(),
        });
    }
    let d = rows[0].len() - 1;
    let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j + 1]);
    Ok(LabeledPool {
        x,
        labels: rows.iter().map(|r| r[0]).collect(),
    })
}

/// Train, validation and test sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

fn scaled_splits(pool: &LabeledPool, labels: &[f64], idx: [&[usize]; 3]) -> Splits {
    let make = |rows: &[usize], split| {
        Dataset::new(
            pool.x.select_rows(rows),
            DVector::from_iterator(rows.len(), rows.iter().map(|&i| labels[i])),
            split,
        )
    };
    let mut train = make(idx[0], Split::Train);
    let mut val = make(idx[1], Split::Validation);
    let mut test = make(idx[2], Split::Test);
    // one global factor from the training set keeps the relative geometry
    let scale = train.max_norm();
    if scale > 0.0 {
        for ds in [&mut train, &mut val, &mut test] {
            ds.x /= scale;
        }
    }
    Splits { train, val, test }
}

/// Two-class subset with labels `class_a → 0`, `class_b → 1`, class
/// balanced per split (odd sizes give class `a` the extra sample). Inputs are
/// divided by the largest training-set norm, so training inputs lie in the
/// unit ball; validation/test inputs may exceed it and are not clipped.
pub fn prepare_binary_task(
    pool: &LabeledPool,
    class_a: f64,
    class_b: f64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Splits> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = [class_a, class_b].map(|c| {
        pool.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == c)
            .map(|(i, _)| i)
            .collect::<Vec<_>>()
    });
    for (c, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        let sizes = [n_train, n_val, n_test];
        let need: usize = if c == 0 {
            sizes.iter().map(|n| n.div_ceil(2)).sum()
        } else {
            sizes.iter().map(|n| n / 2).sum()
        };
        if idx.len() < need {
            return Err(Error::InsufficientSamples(format!(
                "class {} has {} samples, {} needed",
                [class_a, class_b][c],
                idx.len(),
                need
            )));
        }
    }
    let mut cursor = [0usize; 2];
    let mut take = |n: usize| -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        for (c, count) in [(0, n.div_ceil(2)), (1, n / 2)] {
            out.extend_from_slice(&by_class[c][cursor[c]..cursor[c] + count]);
            cursor[c] += count;
        }
        out.sort_unstable();
        out
    };
    let (tr, va, te) = (take(n_train), take(n_val), take(n_test));
    let labels: Vec<f64> = pool.labels.iter().map(|&l| if l == class_b { 1.0 } else { 0.0 }).collect();
    Ok(scaled_splits(pool, &labels, [&tr, &va, &te]))
}

/// Random disjoint split of a pool, keeping its labels.
pub fn split_pool(pool: &LabeledPool, n_train: usize, n_val: usize, n_test: usize, seed: u64) -> Result<Splits> {
    let n = pool.x.nrows();
    if n_train + n_val + n_test > n {
        return Err(Error::InsufficientSamples(format!(
            "pool has {n} samples, {} requested",
            n_train + n_val + n_test
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (tr, rest) = idx.split_at(n_train);
    let (va, rest) = rest.split_at(n_val);
    let te = &rest[..n_test];
    Ok(scaled_splits(pool, &pool.labels, [tr, va, te]))
}

/// Synthetic regression task.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub input_dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Seeds the inputs, the teacher and the noise.
    pub seed: u64,
    /// Radii are uniform on `[min_radius, 1]`.
    pub min_radius: f64,
    pub noise: f64,
    /// The teacher network; drawn with the seed.
    pub teacher: NetworkConfig,
}

impl SynthSpec {
    pub fn new(input_dim: usize, n_train: usize, n_val: usize, n_test: usize, seed: u64) -> Self {
        SynthSpec {
            input_dim,
            n_train,
            n_val,
            n_test,
            seed,
            min_radius: 0.5,
            noise: 0.0,
            teacher: NetworkConfig::new(2, input_dim, 64, 1.0),
        }
    }
}

/// Uniform directions on the sphere times uniform radii; labels from a fixed
/// random teacher plus optional Gaussian noise.
pub fn synth_inputs(d: usize, n: usize, min_radius: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
        let r = rng.random_range(min_radius..=1.0);
        x.row_mut(i).copy_from(&(dir * r).transpose());
    }
    x
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<Splits> {
    if spec.input_dim < 2 {
        return Err(Error::InvalidConfig("synthetic inputs need d >= 2".into()));
    }
    if !(0.0..=1.0).contains(&spec.min_radius) {
        return Err(Error::InvalidConfig(format!("min_radius must lie in [0, 1], got {}", spec.min_radius)));
    }
    let teacher_cfg = NetworkConfig {
        input_dim: spec.input_dim,
        ..spec.teacher.clone()
    };
    teacher_cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let teacher = init_params(&teacher_cfg, rng.random());
    let make = |n: usize, split: Split, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let x = synth_inputs(spec.input_dim, n, spec.min_radius, rng);
        let mut y = forward_batch(&teacher_cfg, &teacher, &x)?;
        if spec.noise > 0.0 {
            for v in y.iter_mut() {
                *v += spec.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Dataset::new(x, y, split))
    };
    Ok(Splits {
        train: make(spec.n_train, Split::Train, &mut rng)?,
        val: make(spec.n_val, Split::Validation, &mut rng)?,
        test: make(spec.n_test, Split::Test, &mut rng)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_hand_made_idx() {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
        img.extend_from_slice(&[0, 255, 17, 3]);
        let (count, rows, cols, px) = parse_idx_images(&img, Path::new("x")).unwrap();
        assert_eq!((count, rows, cols), (1, 2, 2));
        assert_eq!(px, vec![0, 255, 17, 3]);
        let labels = [0, 0, 8, 1, 0, 0, 0, 1, 7];
        assert!(matches!(
            parse_idx_images(&labels, Path::new("x")),
            Err(Error::BadMagic {
                expected: IDX_IMAGES_MAGIC,
                found: IDX_LABELS_MAGIC
            })
        ));
        assert!(matches!(parse_idx_images(&img[..18], Path::new("x")), Err(Error::Truncated { .. })));
        assert_eq!(parse_idx_labels(&labels, Path::new("y")).unwrap(), vec![7]);
    }

    #[test]
    fn idx_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = IdxImages {
            count: 10,
            rows: 3,
            cols: 4,
            pixels: (0..120).map(|_| rng.random()).collect(),
            labels: (0..10).map(|_| rng.random_range(0..10)).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&a, &b, &data).unwrap();
        assert_eq!(load_idx(&a, &b).unwrap(), data);
        assert_eq!(fs::read(&a).unwrap(), encode_idx_images(&data));
        fs::write(&b, encode_idx_labels(&data.labels[..9])).unwrap();
        assert!(matches!(load_idx(&a, &b), Err(Error::CountMismatch { images: 10, labels: 9 })));
    }

    #[test]
    fn binary_task_is_balanced_scaled_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let count = 60;
        let data = IdxImages {
            count,
            rows: 2,
            cols: 2,
            pixels: (0..count * 4).map(|_| rng.random()).collect(),
            labels: (0..count).map(|i| (i % 3) as u8).collect(),
        };
        let pool = data.to_pool();
        let s = prepare_binary_task(&pool, 0.0, 1.0, 10, 4, 5, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (10, 4, 5));
        assert_eq!(s.train.y.sum(), 5.0);
        assert_eq!(s.test.y.sum(), 2.0);
        assert!((s.train.max_norm() - 1.0).abs() < 1e-15);
        let again = prepare_binary_task(&pool, 0.0, 1.0, 10, 4, 5, 3).unwrap();
        assert_eq!(s.train.x, again.train.x);
        assert!(prepare_binary_task(&pool, 0.0, 1.0, 30, 10, 10, 3).is_err());
    }

    #[test]
    fn text_matrix_parses_and_reports_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        fs::write(&p, "# label x1 x2\n1, 0.5, 0.25\n0 0.1 0.2\n").unwrap();
        let pool = load_text_matrix(&p).unwrap();
        assert_eq!(pool.labels, vec![1.0, 0.0]);
        assert_eq!(pool.x[(1, 1)], 0.2);
        fs::write(&p, "1, 0.5\n0, 0.1, oops\n").unwrap();
        let err = load_text_matrix(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn synthetic_data_is_reproducible_and_non_degenerate() {
        let spec = SynthSpec::new(5, 1000, 3, 4, 9);
        let a = synth_dataset(&spec).unwrap();
        let b = synth_dataset(&spec).unwrap();
        assert_eq!(a.train.x, b.train.x);
        assert_eq!(a.test.y, b.test.y);
        assert!(a.train.is_non_degenerate());
        assert!(a.train.unit_ball_violations(1e-12).is_empty());
        assert!(synth_dataset(&SynthSpec::new(1, 3, 0, 0, 0)).is_err());
    }
}
