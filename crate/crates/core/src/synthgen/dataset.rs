use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gen_translation_sample, SceneObject, SceneSpec, Shape};
use crate::datamodel::{flo_read, flo_write, load_image, save_image, FlowField, ImagePair};
use crate::error::{Error, Result};
use crate::par;

/// SplitMix64 finalizer over `(master, index)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random scene parameters used to populate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneDistribution {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Cap on every velocity magnitude, px/frame.
    pub max_flow: f32,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Object half-size range, px.
    pub min_size: f32,
    pub max_size: f32,
    pub noise: f32,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        SceneDistribution {
            height: 96,
            width: 128,
            channels: 3,
            max_flow: 8.0,
            min_objects: 1,
            max_objects: 4,
            min_size: 5.0,
            max_size: 18.0,
            noise: 0.0,
        }
    }
}

impl SceneDistribution {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects > self.max_objects {
            return Err(Error::arg("min_objects exceeds max_objects"));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size) {
            return Err(Error::arg("object size range is empty"));
        }
        if !(self.max_flow > 0.0) {
            return Err(Error::arg("max_flow must be positive"));
        }
        let span = 2.0 * self.max_size + self.max_flow;
        if span >= (self.height.min(self.width) - 1) as f32 {
            return Err(Error::arg(format!(
                "objects of half-size {} moving {} px do not fit a {}x{} canvas",
                self.max_size, self.max_flow, self.height, self.width
            )));
        }
        Ok(())
    }
}

fn random_velocity(rng: &mut ChaCha8Rng, cap: f32) -> (f32, f32) {
    // Uniform over the disc of radius `cap`.
    let r = cap * rng.random_range(0.0f32..1.0).sqrt();
    let theta = rng.random_range(0.0..std::f32::consts::TAU);
    (r * theta.cos(), r * theta.sin())
}

/// Draw a valid scene from `dist`.
pub fn sample_scene(seed: u64, dist: &SceneDistribution) -> Result<SceneSpec> {
    dist.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(dist.min_objects..=dist.max_objects);
    let (hmax, wmax) = ((dist.height - 1) as f32, (dist.width - 1) as f32);
    let objects = (0..n)
        .map(|_| {
            let shape = if rng.random_bool(0.5) {
                Shape::Disc {
                    radius: rng.random_range(dist.min_size..=dist.max_size),
                }
            } else {
                Shape::Rectangle {
                    half_height: rng.random_range(dist.min_size..=dist.max_size),
                    half_width: rng.random_range(dist.min_size..=dist.max_size),
                }
            };
            let velocity = random_velocity(&mut rng, dist.max_flow);
            let (ey, ex) = shape.half_extent();
            // Both frame positions must keep the footprint on the canvas.
            let (vy, vx) = (velocity.1, velocity.0);
            const EPS: f32 = 1e-3;
            let y_lo = ey.max(ey - vy) + EPS;
            let y_hi = (hmax - ey).min(hmax - ey - vy) - EPS;
            let x_lo = ex.max(ex - vx) + EPS;
            let x_hi = (wmax - ex).min(wmax - ex - vx) - EPS;
            let start = (rng.random_range(y_lo..=y_hi), rng.random_range(x_lo..=x_hi));
            SceneObject {
                shape,
                start,
                velocity,
            }
        })
        .collect();
    Ok(SceneSpec {
        height: dist.height,
        width: dist.width,
        channels: dist.channels,
        background_seed: rng.random(),
        background_velocity: random_velocity(&mut rng, dist.max_flow),
        objects,
        noise: dist.noise,
        max_flow: dist.max_flow,
    })
}

/// One training example with frames stored as 8-bit codes, exactly as they
/// round-trip through PNG.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    height: usize,
    width: usize,
    channels: usize,
    codes: Vec<u8>,
    pub flow: FlowField,
}

impl Sample {
    pub fn new(pair: &ImagePair, flow: FlowField) -> Result<Self> {
        if (pair.height(), pair.width()) != (flow.height(), flow.width()) {
            return Err(Error::arg("sample pair and flow dims differ"));
        }
        Ok(Sample {
            height: pair.height(),
            width: pair.width(),
            channels: pair.channels(),
            codes: pair.data().iter().map(|&v| crate::datamodel::to_code(v)).collect(),
            flow,
        })
    }

    /// Draw scene `seed` from `dist` and render it.
    pub fn generate(seed: u64, dist: &SceneDistribution) -> Result<Self> {
        let spec = sample_scene(seed, dist)?;
        let (pair, flow) = gen_translation_sample(seed, &spec)?;
        Sample::new(&pair, flow)
    }

    pub fn pair(&self) -> ImagePair {
        let data = self.codes.iter().map(|&c| c as f32 / 255.0).collect();
        ImagePair::from_stacked(self.height, self.width, self.channels, data)
            .expect("sample codes are well-formed")
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub index: usize,
    pub seed: u64,
    pub img1: String,
    pub img2: String,
    pub flo: String,
    pub mask: Option<String>,
}

/// Line-oriented dataset index: `index, seed, img1, img2, flo[, mask]`.
/// Header comment lines carry the master seed and distribution so the dataset
/// can be regenerated.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub master_seed: u64,
    pub distribution: SceneDistribution,
    pub records: Vec<ManifestRecord>,
}

pub const MANIFEST_NAME: &str = "manifest.txt";

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# edgeflow synthetic dataset v1");
        let _ = writeln!(s, "# master_seed={}", self.master_seed);
        let _ = writeln!(
            s,
            "# distribution={}",
            serde_json::to_string(&self.distribution).expect("distribution serializes")
        );
        for r in &self.records {
            let _ = write!(s, "{}, {}, {}, {}, {}", r.index, r.seed, r.img1, r.img2, r.flo);
            if let Some(m) = &r.mask {
                let _ = write!(s, ", {m}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut master_seed = None;
        let mut distribution = None;
        let mut records = Vec::new();
        let mut offset = 0u64;
        for line in text.lines() {
            let here = offset;
            offset += line.len() as u64 + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fmt = |msg: String| Error::Format { offset: here, msg };
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("master_seed=") {
                    master_seed = Some(v.parse().map_err(|_| fmt(format!("bad seed {v:?}")))?);
                } else if let Some(v) = rest.strip_prefix("distribution=") {
                    distribution = Some(
                        serde_json::from_str(v).map_err(|e| fmt(format!("bad distribution: {e}")))?,
                    );
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !(5..=6).contains(&fields.len()) {
                return Err(fmt(format!("expected 5 or 6 fields, got {}", fields.len())));
            }
            records.push(ManifestRecord {
                index: fields[0]
                    .parse()
                    .map_err(|_| fmt(format!("bad index {:?}", fields[0])))?,
                seed: fields[1]
                    .parse()
                    .map_err(|_| fmt(format!("bad seed {:?}", fields[1])))?,
                img1: fields[2].to_string(),
                img2: fields[3].to_string(),
                flo: fields[4].to_string(),
                mask: fields.get(5).map(|s| s.to_string()),
            });
        }
        Ok(Manifest {
            master_seed: master_seed.unwrap_or(0),
            distribution: distribution.unwrap_or_default(),
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Manifest::parse(&text)
    }

    /// Load every record's frames and flow, resolving paths against `root`.
    pub fn load_samples(&self, root: impl AsRef<Path>) -> Result<Vec<Sample>> {
        let root = root.as_ref();
        par::map(&self.records, |r| {
            let a = load_image(root.join(&r.img1))?;
            let b = load_image(root.join(&r.img2))?;
            let flow = flo_read(root.join(&r.flo))?;
            Sample::new(&ImagePair::from_frames(&a, &b)?, flow)
        })
        .into_iter()
        .collect()
    }
}

fn write_sample(dir: &Path, record: &ManifestRecord, sample: &Sample) -> Result<()> {
    let pair = sample.pair();
    save_image(&pair.frame(0), dir.join(&record.img1))?;
    save_image(&pair.frame(1), dir.join(&record.img2))?;
    flo_write(&sample.flow, dir.join(&record.flo))
}

/// Generate `count` samples into `out_dir` and write `manifest.txt`.
pub fn gen_dataset(
    count: usize,
    dist: &SceneDistribution,
    master_seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    dist.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records: Vec<ManifestRecord> = (0..count)
        .map(|i| ManifestRecord {
            index: i,
            seed: derive_seed(master_seed, i as u64),
            img1: format!("{i:05}_img1.png"),
            img2: format!("{i:05}_img2.png"),
            flo: format!("{i:05}_flow.flo"),
            mask: None,
        })
        .collect();
    par::map(&records, |r| {
        let sample = Sample::generate(r.seed, dist)?;
        write_sample(out_dir, r, &sample)
    })
    .into_iter()
    .collect::<Result<Vec<()>>>()?;
    let manifest = Manifest {
        master_seed,
        distribution: dist.clone(),
        records,
    };
    let path = out_dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Re-render every sample listed in a manifest into `out_dir`.
pub fn regenerate(manifest: &Manifest, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    par::map(&manifest.records, |r| {
        let sample = Sample::generate(r.seed, &manifest.distribution)?;
        write_sample(out_dir, r, &sample)
    })
    .into_iter()
    .collect::<Result<Vec<()>>>()?;
    let path = out_dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Render `count` samples in memory, identical to what [`gen_dataset`] writes.
pub fn generate_samples(count: usize, dist: &SceneDistribution, master_seed: u64) -> Result<Vec<Sample>> {
    dist.validate()?;
    par::map_range(count, |i| Sample::generate(derive_seed(master_seed, i as u64), dist))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_has_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_dataset(0, &SceneDistribution::default(), 1, dir.path()).unwrap();
        assert!(m.records.is_empty());
        let back = Manifest::load(dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let dist = SceneDistribution::default();
        let ma = gen_dataset(2, &dist, 42, a.path()).unwrap();
        gen_dataset(2, &dist, 42, b.path()).unwrap();
        for r in &ma.records {
            for f in [&r.img1, &r.img2, &r.flo] {
                assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
            }
        }
        assert_eq!(
            fs::read(a.path().join(MANIFEST_NAME)).unwrap(),
            fs::read(b.path().join(MANIFEST_NAME)).unwrap()
        );
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let dist = SceneDistribution {
            height: 48,
            width: 64,
            max_size: 10.0,
            ..SceneDistribution::default()
        };
        let m = gen_dataset(3, &dist, 9, a.path()).unwrap();
        let parsed = Manifest::load(a.path().join(MANIFEST_NAME)).unwrap();
        regenerate(&parsed, b.path()).unwrap();
        for r in &m.records {
            for f in [&r.img1, &r.img2, &r.flo] {
                assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
            }
        }
        let loaded = parsed.load_samples(a.path()).unwrap();
        let mem = generate_samples(3, &dist, 9).unwrap();
        assert_eq!(loaded, mem);
    }

    #[test]
    fn manifest_parse_errors_carry_offset() {
        let text = "# master_seed=1\n0, 1, a.png, b.png\n";
        match Manifest::parse(text) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn optional_mask_column() {
        let text = "0, 5, a.png, b.png, f.flo, m.png\n";
        let m = Manifest::parse(text).unwrap();
        assert_eq!(m.records[0].mask.as_deref(), Some("m.png"));
        assert_eq!(Manifest::parse(&m.to_text()).unwrap().records, m.records);
    }

    #[test]
    fn hundred_samples_respect_flow_cap() {
        let dir = tempfile::tempdir().unwrap();
        let dist = SceneDistribution::default();
        let m = gen_dataset(100, &dist, 2024, dir.path()).unwrap();
        let mut max = 0.0f32;
        for r in &m.records {
            let f = flo_read(dir.path().join(&r.flo)).unwrap();
            max = max.max(f.max_magnitude());
        }
        assert!(max <= dist.max_flow, "max |flow| {max}");
        assert!(max > 0.5 * dist.max_flow);
    }
}
