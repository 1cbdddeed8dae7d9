use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shortest wavelength in the procedural textures, in pixels. Keeps bilinear
/// resampling error of a warped frame under 2/255.
pub const MIN_WAVELENGTH: f32 = 16.0;
pub const MAX_WAVELENGTH: f32 = 40.0;
const COMPONENTS: usize = 6;
const TOTAL_AMPLITUDE: f32 = 0.3;

#[derive(Clone, Debug)]
struct Wave {
    kx: f32,
    ky: f32,
    phase: f32,
    amp: [f32; 3],
}

/// Band-limited procedural texture: a colored base plus a sum of sinusoids
/// with random orientation and wavelength in `[MIN_WAVELENGTH, MAX_WAVELENGTH]`.
/// Defined on continuous coordinates so translated copies are exact.
#[derive(Clone, Debug)]
pub struct Texture {
    base: [f32; 3],
    waves: Vec<Wave>,
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = [
            rng.random_range(0.35..0.65),
            rng.random_range(0.35..0.65),
            rng.random_range(0.35..0.65),
        ];
        Self::with_base(&mut rng, base)
    }

    /// Texture around an explicit base color.
    pub fn tinted(seed: u64, base: [f32; 3]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_base(&mut rng, base)
    }

    fn with_base(rng: &mut ChaCha8Rng, base: [f32; 3]) -> Self {
        let per = TOTAL_AMPLITUDE / COMPONENTS as f32;
        let waves = (0..COMPONENTS)
            .map(|_| {
                let lambda = rng.random_range(MIN_WAVELENGTH..MAX_WAVELENGTH);
                let theta = rng.random_range(0.0..std::f32::consts::TAU);
                let k = std::f32::consts::TAU / lambda;
                Wave {
                    kx: k * theta.cos(),
                    ky: k * theta.sin(),
                    phase: rng.random_range(0.0..std::f32::consts::TAU),
                    amp: [
                        per * rng.random_range(0.6..1.0),
                        per * rng.random_range(0.6..1.0),
                        per * rng.random_range(0.6..1.0),
                    ],
                }
            })
            .collect();
        Texture { base, waves }
    }

    /// Sample all three color channels at continuous position `(y, x)`.
    #[inline]
    pub fn sample(&self, y: f32, x: f32) -> [f32; 3] {
        let mut out = self.base;
        for w in &self.waves {
            let s = (w.kx * x + w.ky * y + w.phase).sin();
            out[0] += w.amp[0] * s;
            out[1] += w.amp[1] * s;
            out[2] += w.amp[2] * s;
        }
        out
    }
}
