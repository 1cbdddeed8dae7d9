//! Synthetic image pairs with analytically exact ground-truth flow.
//!
//! A scene is a textured background plus a stack of textured objects, each
//! translating rigidly between the two frames. Textures are continuous
//! procedural functions, so frame 2 is an exact translated copy of frame 1
//! and the flow at every pixel is known without approximation.

mod dataset;
mod texture;

pub use dataset::{
    derive_seed, gen_dataset, generate_samples, regenerate, sample_scene, Manifest, ManifestRecord, Sample, MANIFEST_NAME,
    SceneDistribution,
};
pub use texture::{Texture, MAX_WAVELENGTH, MIN_WAVELENGTH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{FlowField, Image, ImagePair, Mask};
use crate::error::{Error, Result};

/// Object footprint, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Disc { radius: f32 },
    Rectangle { half_height: f32, half_width: f32 },
}

impl Shape {
    #[inline]
    fn contains(&self, dy: f32, dx: f32) -> bool {
        match *self {
            Shape::Disc { radius } => dy * dy + dx * dx <= radius * radius,
            Shape::Rectangle {
                half_height,
                half_width,
            } => dy.abs() <= half_height && dx.abs() <= half_width,
        }
    }

    /// Half extents `(y, x)` of the bounding box.
    fn half_extent(&self) -> (f32, f32) {
        match *self {
            Shape::Disc { radius } => (radius, radius),
            Shape::Rectangle {
                half_height,
                half_width,
            } => (half_height, half_width),
        }
    }
}

/// A rigidly translating foreground object. Positions are `(y, x)` in pixel
/// index coordinates; velocity is `(u, v)` = (horizontal, vertical).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub start: (f32, f32),
    pub velocity: (f32, f32),
}

impl SceneObject {
    fn center(&self, frame: usize) -> (f32, f32) {
        if frame == 0 {
            self.start
        } else {
            (self.start.0 + self.velocity.1, self.start.1 + self.velocity.0)
        }
    }

    #[inline]
    fn covers(&self, frame: usize, y: f32, x: f32) -> bool {
        let (cy, cx) = self.center(frame);
        self.shape.contains(y - cy, x - cx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Channels per frame (1 or 3).
    pub channels: usize,
    pub background_seed: u64,
    /// Background translation `(u, v)`.
    pub background_velocity: (f32, f32),
    /// Painted in order; later objects occlude earlier ones.
    pub objects: Vec<SceneObject>,
    /// Uniform per-pixel noise amplitude added independently to each frame.
    pub noise: f32,
    pub max_flow: f32,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < Image::MIN_DIM || self.width < Image::MIN_DIM {
            return Err(Error::Spec(format!(
                "canvas {}x{} below minimum {}",
                self.height,
                self.width,
                Image::MIN_DIM
            )));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Spec(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Spec("noise amplitude must be non-negative".into()));
        }
        let speed = |(u, v): (f32, f32)| (u * u + v * v).sqrt();
        if speed(self.background_velocity) > self.max_flow {
            return Err(Error::Spec(format!(
                "background speed {:.3} exceeds cap {}",
                speed(self.background_velocity),
                self.max_flow
            )));
        }
        let (hmax, wmax) = ((self.height - 1) as f32, (self.width - 1) as f32);
        for (i, obj) in self.objects.iter().enumerate() {
            if speed(obj.velocity) > self.max_flow {
                return Err(Error::Spec(format!(
                    "object {i} speed {:.3} exceeds cap {}",
                    speed(obj.velocity),
                    self.max_flow
                )));
            }
            let (ey, ex) = obj.shape.half_extent();
            if !(ey > 0.0 && ex > 0.0) {
                return Err(Error::Spec(format!("object {i} has empty extent")));
            }
            for frame in 0..2 {
                let (cy, cx) = obj.center(frame);
                if cy - ey < 0.0 || cy + ey > hmax || cx - ex < 0.0 || cx + ex > wmax {
                    return Err(Error::Spec(format!(
                        "object {i} leaves the canvas in frame {}",
                        frame + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Index of the topmost object covering `(y, x)` in `frame`, if any.
    fn visible(&self, frame: usize, y: f32, x: f32) -> Option<usize> {
        self.objects.iter().rposition(|o| o.covers(frame, y, x))
    }
}

fn object_texture_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64 + 1)
}

fn render_frame(
    spec: &SceneSpec,
    frame: usize,
    background: &Texture,
    textures: &[Texture],
    rng: &mut ChaCha8Rng,
) -> Image {
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let (bu, bv) = if frame == 0 {
        (0.0, 0.0)
    } else {
        spec.background_velocity
    };
    let mut data = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f32, x as f32);
            let rgb = match spec.visible(frame, yf, xf) {
                Some(i) => {
                    let (cy, cx) = spec.objects[i].center(frame);
                    textures[i].sample(yf - cy, xf - cx)
                }
                None => background.sample(yf - bv, xf - bu),
            };
            if c == 3 {
                for v in rgb {
                    data.push(v);
                }
            } else {
                data.push((rgb[0] + rgb[1] + rgb[2]) / 3.0);
            }
        }
    }
    if spec.noise > 0.0 {
        for v in &mut data {
            *v += rng.random_range(-spec.noise..=spec.noise);
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Image::new(h, w, c, data).expect("rendered frame is well-formed")
}

fn render_flow(spec: &SceneSpec) -> FlowField {
    let mut flow = FlowField::zeros(spec.height, spec.width);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (u, v) = match spec.visible(0, y as f32, x as f32) {
                Some(i) => spec.objects[i].velocity,
                None => spec.background_velocity,
            };
            flow.set(y, x, u, v);
        }
    }
    flow
}

/// Render a pair and its exact flow. Flow at a pixel is the velocity of the
/// surface visible there in frame 1 (topmost object, else background).
pub fn gen_translation_sample(seed: u64, spec: &SceneSpec) -> Result<(ImagePair, FlowField)> {
    spec.validate()?;
    let background = Texture::new(spec.background_seed);
    let textures: Vec<Texture> = (0..spec.objects.len())
        .map(|i| Texture::new(object_texture_seed(seed, i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let f1 = render_frame(spec, 0, &background, &textures, &mut rng);
    let f2 = render_frame(spec, 1, &background, &textures, &mut rng);
    let pair = ImagePair::from_frames(&f1, &f2)?;
    Ok((pair, render_flow(spec)))
}

/// Canvas and texture settings for the moving-ball scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallScene {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub background_seed: u64,
    pub ball_seed: u64,
}

impl Default for BallScene {
    fn default() -> Self {
        BallScene {
            height: 480,
            width: 352,
            channels: 3,
            background_seed: 0x5eed_ba11,
            ball_seed: 0xba11,
        }
    }
}

/// Ball radii (px) for the "ball at varying distance" sweep, nearest first:
/// 64 down to 8 in steps of 8.
pub fn ball_sweep_radii() -> Vec<f32> {
    (1..=8).rev().map(|k| 8.0 * k as f32).collect()
}

impl BallScene {
    /// Frame-1 ball center. Seam-centered balls sit on the canvas center, which
    /// is exactly where the horizontal and vertical 2×2 chunk seams cross.
    pub fn ball_center(&self, center_on_seam: bool) -> (f32, f32) {
        let (h, w) = (self.height as f32, self.width as f32);
        if center_on_seam {
            ((h - 1.0) / 2.0, (w - 1.0) / 2.0)
        } else {
            ((h - 1.0) / 4.0, (w - 1.0) / 4.0)
        }
    }

    pub fn generate(
        &self,
        radius_px: f32,
        center_on_seam: bool,
        ball_speed_px: f32,
    ) -> Result<(ImagePair, FlowField, Mask)> {
        if !(radius_px >= 2.0) {
            return Err(Error::Spec(format!("ball radius must be >= 2 px, got {radius_px}")));
        }
        if !(ball_speed_px >= 0.0) {
            return Err(Error::Spec(format!("ball speed must be >= 0, got {ball_speed_px}")));
        }
        let (cy, cx) = self.ball_center(center_on_seam);
        // Horizontal motion centered on the seam: the frame-1 disc is the
        // ground-truth footprint.
        let spec = SceneSpec {
            height: self.height,
            width: self.width,
            channels: self.channels,
            background_seed: self.background_seed,
            background_velocity: (0.0, 0.0),
            objects: vec![SceneObject {
                shape: Shape::Disc { radius: radius_px },
                start: (cy, cx),
                velocity: (ball_speed_px, 0.0),
            }],
            noise: 0.0,
            max_flow: ball_speed_px.max(1.0),
        };
        spec.validate().map_err(|e| match e {
            Error::Spec(m) => Error::Spec(format!("ball radius {radius_px} too large: {m}")),
            other => other,
        })?;
        let background = Texture::new(self.background_seed);
        let ball = Texture::tinted(self.ball_seed, [0.8, 0.25, 0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f1 = render_frame(&spec, 0, &background, std::slice::from_ref(&ball), &mut rng);
        let f2 = render_frame(&spec, 1, &background, std::slice::from_ref(&ball), &mut rng);
        let pair = ImagePair::from_frames(&f1, &f2)?;
        let flow = render_flow(&spec);
        let mask = Mask::from_fn(self.height, self.width, |y, x| {
            spec.objects[0].covers(0, y as f32, x as f32)
        });
        Ok((pair, flow, mask))
    }
}

/// Ball scene on the default 480×352 canvas.
pub fn gen_ball_scene(
    radius_px: f32,
    center_on_seam: bool,
    ball_speed_px: f32,
) -> Result<(ImagePair, FlowField, Mask)> {
    BallScene::default().generate(radius_px, center_on_seam, ball_speed_px)
}
