//! Dataset loading and generation: CIFAR-10 binary files plus a
//! self-contained synthetic glyph dataset so every experiment can run
//! offline.

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::noise::{LabelSet, CIFAR10_CLASSES};
use crate::rng::{derive_seed, seeded_rng};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::io::Read;
use std::path::Path;

const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Images with labels; uniform shape, one label per image.
#[derive(Debug, Clone)]
pub struct LabeledImageDataset {
    pub images: Vec<ImageTensor>,
    pub labels: LabelSet,
    pub class_names: Option<Vec<String>>,
}

impl LabeledImageDataset {
    pub fn new(
        images: Vec<ImageTensor>,
        labels: LabelSet,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            if images.iter().any(|img| img.shape() != first.shape()) {
                return Err(Error::invalid("images disagree on shape"));
            }
        }
        Ok(LabeledImageDataset {
            images,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn k(&self) -> usize {
        self.labels.k()
    }

    /// Same images with a different label assignment (noisy labels).
    pub fn with_labels(&self, labels: LabelSet) -> Result<Self> {
        Self::new(self.images.clone(), labels, self.class_names.clone())
    }

    /// Writes `{class}/{index}.ppm` under `dir`.
    pub fn export_ppm(&self, dir: &Path) -> Result<()> {
        for (i, (img, &label)) in self.images.iter().zip(self.labels.labels()).enumerate() {
            let sub = dir.join(label.to_string());
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            img.write_ppm(&sub.join(format!("{i}.ppm")))?;
        }
        Ok(())
    }
}

/// Loads CIFAR-10 binary batch files: records of one label byte followed by
/// 3072 pixel bytes in planar R, G, B order, 32 x 32 per plane. Pixels are
/// scaled to `[0, 1]` as value / 255 and record order is preserved across
/// the file list.
pub fn load_cifar10_binary(paths: &[impl AsRef<Path>]) -> Result<LabeledImageDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() % CIFAR_RECORD != 0 {
            let offset = (bytes.len() / CIFAR_RECORD) * CIFAR_RECORD;
            return Err(Error::parse(
                path,
                format!("byte offset {offset}"),
                format!(
                    "file size {} is not a multiple of {CIFAR_RECORD}",
                    bytes.len()
                ),
            ));
        }
        for (rec, chunk) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            let offset = rec * CIFAR_RECORD;
            let label = chunk[0] as usize;
            if label > 9 {
                return Err(Error::parse(
                    path,
                    format!("byte offset {offset}"),
                    format!("label byte {label} out of range 0-9"),
                ));
            }
            let planes = &chunk[1..];
            let mut data = vec![0.0; CIFAR_SIDE * CIFAR_SIDE * 3];
            for c in 0..3 {
                for i in 0..CIFAR_SIDE * CIFAR_SIDE {
                    data[i * 3 + c] = planes[c * CIFAR_SIDE * CIFAR_SIDE + i] as f64 / 255.0;
                }
            }
            images.push(ImageTensor::new(CIFAR_SIDE, CIFAR_SIDE, 3, data)?);
            labels.push(label);
        }
    }
    LabeledImageDataset::new(
        images,
        LabelSet::new(10, labels)?,
        Some(CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect()),
    )
}

/// Serializes a 32 x 32 x 3 dataset back into the CIFAR-10 binary record
/// format; loading then re-serializing a CIFAR-10 file is byte-identical.
pub fn to_cifar10_bytes(dataset: &LabeledImageDataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD);
    for (img, &label) in dataset.images.iter().zip(dataset.labels.labels()) {
        if img.shape() != (CIFAR_SIDE, CIFAR_SIDE, 3) {
            return Err(Error::invalid(format!(
                "expected 32x32x3 images, got {:?}",
                img.shape()
            )));
        }
        out.push(label as u8);
        for c in 0..3 {
            for i in 0..CIFAR_SIDE * CIFAR_SIDE {
                let v = img.data()[i * 3 + c];
                out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(out)
}

/// Number of glyph templates available to [`synth_shapes`].
pub const SYNTH_TEMPLATE_COUNT: usize = 10;

/// Renders the zero-offset glyph template for class `g` on a `side x side`
/// canvas: background 0, glyph 1.
pub fn synth_template(g: usize, side: usize) -> Result<ImageTensor> {
    if g >= SYNTH_TEMPLATE_COUNT {
        return Err(Error::invalid(format!(
            "template {g} beyond the {SYNTH_TEMPLATE_COUNT} available glyphs"
        )));
    }
    if side < 8 {
        return Err(Error::invalid("side must be at least 8"));
    }
    // Wide bars, disks, and a thick diagonal cross. Every glyph keeps most
    // of its self-overlap under the +/-2 px toroidal offsets the sampler
    // applies (worst-case squared-distance margin 12 over all shifts and
    // class pairs), which is what makes the nearest-template oracle
    // reliable.
    let s = side as f64;
    let disk = move |yf: f64, xf: f64, ny: f64, nx: f64, r: f64| -> bool {
        let (dy, dx) = (yf - ny * (s - 1.0), xf - nx * (s - 1.0));
        (dy * dy + dx * dx).sqrt() <= r * s
    };
    let band = |t: f64, lo: f64| -> bool { t >= lo * s && t < (lo + 0.375) * s };
    let on = move |y: usize, x: usize| -> bool {
        let (yf, xf) = (y as f64, x as f64);
        match g {
            // horizontal bar: top, middle, bottom third
            0 => band(yf, 0.0),
            1 => band(yf, 0.3125),
            2 => band(yf, 0.625),
            // vertical bar: left, middle, right third
            3 => band(xf, 0.0),
            4 => band(xf, 0.3125),
            5 => band(xf, 0.625),
            // centered disk
            6 => disk(yf, xf, 0.5, 0.5, 0.32),
            // disk pair on the main diagonal
            7 => disk(yf, xf, 0.25, 0.25, 0.21) || disk(yf, xf, 0.75, 0.75, 0.21),
            // disk pair on the anti-diagonal
            8 => disk(yf, xf, 0.25, 0.75, 0.21) || disk(yf, xf, 0.75, 0.25, 0.21),
            // thick diagonal cross
            9 => (yf - xf).abs() <= 0.15 * s || (yf + xf - (s - 1.0)).abs() <= 0.15 * s,
            _ => unreachable!(),
        }
    };
    let mut data = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            if on(y, x) {
                data[y * side + x] = 1.0;
            }
        }
    }
    ImageTensor::new(side, side, 1, data)
}

/// Toroidal shift: content leaving one edge re-enters at the opposite one,
/// so an offset never erases glyph mass.
fn shift_image(img: &ImageTensor, dy: i64, dx: i64) -> ImageTensor {
    let (h, w, c) = img.shape();
    let mut out = img.clone();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let sy = (y - dy).rem_euclid(h as i64) as usize;
            let sx = (x - dx).rem_euclid(w as i64) as usize;
            for ch in 0..c {
                out.set(y as usize, x as usize, ch, img.get(sy, sx, ch));
            }
        }
    }
    out
}

/// Balanced synthetic dataset of `k` glyph classes: each example is its
/// class template shifted by a random integer offset in `[-2, 2]` with
/// additive Gaussian pixel noise, clipped to `[0, 1]`. Deterministic per
/// seed.
pub fn synth_shapes(
    k: usize,
    n_per_class: usize,
    side: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<LabeledImageDataset> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if k > SYNTH_TEMPLATE_COUNT {
        return Err(Error::invalid(format!(
            "k={k} beyond the {SYNTH_TEMPLATE_COUNT} available glyphs"
        )));
    }
    if noise_sd < 0.0 {
        return Err(Error::invalid("noise_sd must be nonnegative"));
    }
    let templates: Vec<ImageTensor> = (0..k).map(|g| synth_template(g, side)).collect::<Result<_>>()?;
    let mut images = Vec::with_capacity(k * n_per_class);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for class in 0..k {
        for i in 0..n_per_class {
            let mut rng = seeded_rng(derive_seed(seed, &[class as u64, i as u64]));
            let dy = rng.random_range(-2..=2);
            let dx = rng.random_range(-2..=2);
            let base = shift_image(&templates[class], dy, dx);
            let data = if noise_sd > 0.0 {
                let normal = Normal::new(0.0, noise_sd).expect("valid sd");
                base.data()
                    .iter()
                    .map(|&v| v + normal.sample(&mut rng))
                    .collect()
            } else {
                base.data().to_vec()
            };
            images.push(base.with_clipped_data(data));
            labels.push(class);
        }
    }
    LabeledImageDataset::new(images, LabelSet::new(k, labels)?, None)
}

/// Seeded shuffle followed by a disjoint, exhaustive split.
pub fn split(
    dataset: &LabeledImageDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledImageDataset, LabeledImageDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 examples to split"));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(derive_seed(seed, &[0x5b]));
    indices.shuffle(&mut rng);
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let take = |idx: &[usize]| -> Result<LabeledImageDataset> {
        let images = idx.iter().map(|&i| dataset.images[i].clone()).collect();
        let labels = idx.iter().map(|&i| dataset.labels.labels()[i]).collect();
        LabeledImageDataset::new(
            images,
            LabelSet::new(dataset.k(), labels)?,
            dataset.class_names.clone(),
        )
    };
    Ok((take(&indices[..n_train])?, take(&indices[n_train..])?))
}
