/// Dense channels-first activation map (`C × H × W`) for a single sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_data(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor buffer size");
        Tensor { c, h, w, data }
    }

    /// Convert an interleaved `H × W × C` buffer.
    pub fn from_hwc(h: usize, w: usize, c: usize, src: &[f32]) -> Self {
        let mut data = vec![0.0; c * h * w];
        let plane = h * w;
        for (p, px) in src.chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * plane + p] = v;
            }
        }
        Tensor { c, h, w, data }
    }

    /// Interleaved `H × W × C` copy.
    pub fn to_hwc(&self) -> Vec<f32> {
        let plane = self.h * self.w;
        let mut out = Vec::with_capacity(self.data.len());
        for p in 0..plane {
            for ch in 0..self.c {
                out.push(self.data[ch * plane + p]);
            }
        }
        out
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
