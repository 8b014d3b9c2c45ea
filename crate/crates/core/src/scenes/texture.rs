use serde::{Deserialize, Serialize};

/// Band-limited value noise painted on a primitive, in surface metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    /// Base colour mixed into the noise, each channel in [0, 1].
    pub tint: [f64; 3],
    /// Lattice spacing of the coarsest octave, metres.
    pub cell: f64,
}

impl Texture {
    pub const FLAT: Texture = Texture {
        seed: 0,
        tint: [0.5, 0.5, 0.5],
        cell: 0.0,
    };

    /// RGB at surface coordinates `(a, b)`, every channel in [0.05, 0.95].
    pub fn color(&self, a: f64, b: f64) -> [f64; 3] {
        if self.cell <= 0.0 {
            return self.tint.map(|t| 0.05 + 0.9 * t);
        }
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let v = octave_noise(self.seed.wrapping_add(ch as u64 * 0x51_7cc1), a / self.cell, b / self.cell);
            // Luminance-dominated noise with a per-channel detail term.
            let lum = octave_noise(self.seed, a / self.cell, b / self.cell);
            let mixed = 0.3 * self.tint[ch] + 0.5 * lum + 0.2 * v;
            *o = 0.05 + 0.9 * mixed.clamp(0.0, 1.0);
        }
        out
    }
}

/// Three octaves of value noise, normalized to [0, 1].
fn octave_noise(seed: u64, x: f64, y: f64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0;
    let mut norm = 0.0;
    for o in 0..3u64 {
        sum += amp * value_noise(seed.wrapping_mul(31).wrapping_add(o), x * freq, y * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (xf, yf) = (x.floor(), y.floor());
    let (ix, iy) = (xf as i64, yf as i64);
    let (fx, fy) = (fade(x - xf), fade(y - yf));
    let v00 = lattice(seed, ix, iy);
    let v10 = lattice(seed, ix + 1, iy);
    let v01 = lattice(seed, ix, iy + 1);
    let v11 = lattice(seed, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * fx;
    let bottom = v01 + (v11 - v01) * fx;
    top + (bottom - top) * fy
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64((ix as u64).wrapping_mul(0x9E37_79B9) ^ (iy as u64).rotate_left(32)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
