//! Procedurally generated corpora for offline experiments.
//!
//! `glyphs` renders 36 handwriting-like characters (digits 0-9 as classes
//! 0-9, letters A-Z as classes 10-35) at 1×28×28 from stroke skeletons under
//! random affine distortion, vertex jitter and stroke width. `scenes` renders
//! ten coloured shape categories at 3×16×16 over cluttered backgrounds.
//! Every sample is a pure function of (seed, split, class, index).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{LabeledDataset, Sample, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GLYPH_CLASSES: u32 = 36;
pub const SCENE_CLASSES: u32 = 10;
pub const SCENE_NAMES: [&str; 10] = [
    "disk", "square", "triangle", "ring", "plus", "hbars", "vbars", "diamond", "cross", "checker",
];

const GLYPH_SIDE: usize = 28;
const SCENE_SIDE: usize = 16;

/// Character drawn for a glyph class.
pub fn glyph_char(class: u32) -> Option<char> {
    match class {
        0..=9 => char::from_digit(class, 10),
        10..=35 => Some((b'A' + (class - 10) as u8) as char),
        _ => None,
    }
}

pub fn glyph_class(c: char) -> Option<u32> {
    match c {
        '0'..='9' => c.to_digit(10),
        'A'..='Z' => Some(c as u32 - 'A' as u32 + 10),
        _ => None,
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sample_rng(seed: u64, split: Split, class: u32, index: usize) -> ChaCha8Rng {
    let tag = match split {
        Split::Train => 0x7452,
        Split::Test => 0x5445,
    };
    let s = mix(seed ^ mix(tag ^ mix(u64::from(class) << 32 ^ index as u64)));
    ChaCha8Rng::seed_from_u64(s)
}

fn generate(
    classes: &[u32],
    limit: u32,
    per_class: usize,
    split: Split,
    seed: u64,
    render: fn(u32, &mut ChaCha8Rng) -> Tensor,
) -> Result<LabeledDataset> {
    if let Some(&c) = classes.iter().find(|&&c| c >= limit) {
        return Err(Error::invalid(format!("class {c} is outside the corpus' {limit} classes")));
    }
    let mut samples = Vec::with_capacity(classes.len() * per_class);
    for i in 0..per_class {
        for &c in classes {
            let mut rng = sample_rng(seed, split, c, i);
            samples.push(Sample {
                id: u64::from(c) * 1_000_000 + i as u64,
                input: render(c, &mut rng),
                label: c,
            });
        }
    }
    LabeledDataset::new(samples, split)
}

pub fn glyphs(classes: &[u32], per_class: usize, split: Split, seed: u64) -> Result<LabeledDataset> {
    generate(classes, GLYPH_CLASSES, per_class, split, seed, render_glyph)
}

pub fn scenes(classes: &[u32], per_class: usize, split: Split, seed: u64) -> Result<LabeledDataset> {
    generate(classes, SCENE_CLASSES, per_class, split, seed, render_scene)
}

type Stroke = Vec<(f64, f64)>;

fn line(pts: &[(f64, f64)]) -> Stroke {
    pts.to_vec()
}

/// Elliptical arc; angles in degrees with y pointing down.
fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64) -> Stroke {
    let n = (((a1 - a0).abs() / 360.0) * 20.0).ceil().max(3.0) as usize;
    (0..=n)
        .map(|i| {
            let a = (a0 + (a1 - a0) * i as f64 / n as f64).to_radians();
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

fn join(parts: &[Stroke]) -> Stroke {
    parts.iter().flatten().copied().collect()
}

fn skeleton(class: u32) -> Vec<Stroke> {
    let ch = glyph_char(class).expect("class checked by caller");
    match ch {
        '0' => vec![arc(0.5, 0.5, 0.22, 0.36, 0.0, 360.0)],
        '1' => vec![line(&[(0.34, 0.26), (0.52, 0.12), (0.52, 0.88)])],
        '2' => vec![join(&[
            arc(0.5, 0.32, 0.2, 0.19, 180.0, 390.0),
            line(&[(0.27, 0.88), (0.75, 0.88)]),
        ])],
        '3' => vec![
            arc(0.48, 0.31, 0.2, 0.18, 200.0, 450.0),
            arc(0.48, 0.68, 0.22, 0.2, 270.0, 520.0),
        ],
        '4' => vec![line(&[(0.62, 0.88), (0.62, 0.12), (0.24, 0.65), (0.78, 0.65)])],
        '5' => vec![join(&[
            line(&[(0.72, 0.12), (0.33, 0.12), (0.3, 0.46)]),
            arc(0.49, 0.65, 0.22, 0.22, 225.0, 500.0),
        ])],
        '6' => vec![
            line(&[(0.66, 0.13), (0.42, 0.3), (0.3, 0.6)]),
            arc(0.5, 0.66, 0.21, 0.21, 0.0, 360.0),
        ],
        '7' => vec![line(&[(0.25, 0.12), (0.75, 0.12), (0.42, 0.88)])],
        '8' => vec![
            arc(0.5, 0.3, 0.17, 0.17, 0.0, 360.0),
            arc(0.5, 0.68, 0.21, 0.2, 0.0, 360.0),
        ],
        '9' => vec![
            arc(0.5, 0.33, 0.2, 0.2, 0.0, 360.0),
            line(&[(0.7, 0.35), (0.62, 0.62), (0.45, 0.88)]),
        ],
        'A' => vec![
            line(&[(0.22, 0.88), (0.5, 0.12), (0.78, 0.88)]),
            line(&[(0.33, 0.6), (0.67, 0.6)]),
        ],
        'B' => vec![
            line(&[(0.28, 0.12), (0.28, 0.88)]),
            join(&[
                line(&[(0.28, 0.12), (0.54, 0.12)]),
                arc(0.54, 0.3, 0.16, 0.18, 270.0, 450.0),
                line(&[(0.28, 0.48), (0.57, 0.48)]),
                arc(0.57, 0.68, 0.18, 0.2, 270.0, 450.0),
                line(&[(0.28, 0.88)]),
            ]),
        ],
        'C' => vec![arc(0.53, 0.5, 0.26, 0.37, 320.0, 40.0)],
        'D' => vec![
            line(&[(0.28, 0.12), (0.28, 0.88)]),
            join(&[
                line(&[(0.28, 0.12), (0.44, 0.12)]),
                arc(0.44, 0.5, 0.28, 0.38, 270.0, 450.0),
                line(&[(0.28, 0.88)]),
            ]),
        ],
        'E' => vec![
            line(&[(0.72, 0.12), (0.3, 0.12), (0.3, 0.88), (0.72, 0.88)]),
            line(&[(0.3, 0.5), (0.62, 0.5)]),
        ],
        'F' => vec![
            line(&[(0.72, 0.12), (0.3, 0.12), (0.3, 0.88)]),
            line(&[(0.3, 0.5), (0.62, 0.5)]),
        ],
        'G' => vec![join(&[
            arc(0.53, 0.5, 0.26, 0.37, 320.0, 45.0),
            line(&[(0.73, 0.55), (0.55, 0.55)]),
        ])],
        'H' => vec![
            line(&[(0.27, 0.12), (0.27, 0.88)]),
            line(&[(0.73, 0.12), (0.73, 0.88)]),
            line(&[(0.27, 0.5), (0.73, 0.5)]),
        ],
        'I' => vec![
            line(&[(0.5, 0.12), (0.5, 0.88)]),
            line(&[(0.35, 0.12), (0.65, 0.12)]),
            line(&[(0.35, 0.88), (0.65, 0.88)]),
        ],
        'J' => vec![
            line(&[(0.4, 0.12), (0.7, 0.12)]),
            join(&[line(&[(0.6, 0.12), (0.6, 0.68)]), arc(0.44, 0.68, 0.16, 0.2, 0.0, 170.0)]),
        ],
        'K' => vec![
            line(&[(0.28, 0.12), (0.28, 0.88)]),
            line(&[(0.72, 0.12), (0.28, 0.56)]),
            line(&[(0.41, 0.44), (0.74, 0.88)]),
        ],
        'L' => vec![line(&[(0.3, 0.12), (0.3, 0.88), (0.72, 0.88)])],
        'M' => vec![line(&[(0.2, 0.88), (0.24, 0.12), (0.5, 0.6), (0.76, 0.12), (0.8, 0.88)])],
        'N' => vec![line(&[(0.26, 0.88), (0.26, 0.12), (0.74, 0.88), (0.74, 0.12)])],
        'O' => vec![arc(0.5, 0.5, 0.29, 0.37, 0.0, 360.0)],
        'P' => vec![join(&[
            line(&[(0.3, 0.88), (0.3, 0.12), (0.52, 0.12)]),
            arc(0.52, 0.3, 0.19, 0.18, 270.0, 450.0),
            line(&[(0.3, 0.48)]),
        ])],
        'Q' => vec![
            arc(0.5, 0.48, 0.27, 0.35, 0.0, 360.0),
            line(&[(0.56, 0.68), (0.8, 0.92)]),
        ],
        'R' => vec![
            join(&[
                line(&[(0.3, 0.88), (0.3, 0.12), (0.52, 0.12)]),
                arc(0.52, 0.3, 0.19, 0.18, 270.0, 450.0),
                line(&[(0.3, 0.48)]),
            ]),
            line(&[(0.46, 0.48), (0.74, 0.88)]),
        ],
        'S' => vec![join(&[
            arc(0.5, 0.3, 0.2, 0.18, 330.0, 90.0),
            arc(0.5, 0.68, 0.22, 0.2, 270.0, 510.0),
        ])],
        'T' => vec![line(&[(0.22, 0.12), (0.78, 0.12)]), line(&[(0.5, 0.12), (0.5, 0.88)])],
        'U' => vec![join(&[
            line(&[(0.27, 0.12), (0.27, 0.62)]),
            arc(0.5, 0.62, 0.23, 0.26, 180.0, 0.0),
            line(&[(0.73, 0.12)]),
        ])],
        'V' => vec![line(&[(0.22, 0.12), (0.5, 0.88), (0.78, 0.12)])],
        'W' => vec![line(&[(0.15, 0.12), (0.32, 0.88), (0.5, 0.4), (0.68, 0.88), (0.85, 0.12)])],
        'X' => vec![line(&[(0.25, 0.12), (0.75, 0.88)]), line(&[(0.75, 0.12), (0.25, 0.88)])],
        'Y' => vec![
            line(&[(0.24, 0.12), (0.5, 0.5), (0.76, 0.12)]),
            line(&[(0.5, 0.5), (0.5, 0.88)]),
        ],
        'Z' => vec![line(&[(0.25, 0.12), (0.75, 0.12), (0.25, 0.88), (0.75, 0.88)])],
        _ => unreachable!(),
    }
}

fn seg_dist(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders one distorted glyph as `[1, 28, 28]` with values in [0, 1].
pub fn render_glyph(class: u32, rng: &mut ChaCha8Rng) -> Tensor {
    let theta: f64 = rng.random_range(-0.22..0.22);
    let scale = rng.random_range(0.78..1.04);
    let aspect = rng.random_range(0.82..1.15);
    let shear = rng.random_range(-0.22..0.22);
    let (tx, ty) = (rng.random_range(-0.07..0.07), rng.random_range(-0.06..0.06));
    let width: f64 = rng.random_range(1.3..2.7);
    let ink = rng.random_range(0.75..1.0);
    let jitter = Normal::new(0.0, 0.018).unwrap();
    let (c, s) = (theta.cos(), theta.sin());
    let side = GLYPH_SIDE as f64;

    let strokes: Vec<Stroke> = skeleton(class)
        .into_iter()
        .map(|stroke| {
            stroke
                .into_iter()
                .map(|(x, y)| {
                    let (x, y) = (x - 0.5 + jitter.sample(rng), y - 0.5 + jitter.sample(rng));
                    let (x, y) = (scale * aspect * (x + shear * y), scale * y);
                    let (x, y) = (c * x - s * y, s * x + c * y);
                    ((x + 0.5 + tx) * side, (y + 0.5 + ty) * side)
                })
                .collect()
        })
        .collect();

    let half = width / 2.0;
    Tensor::from_fn(&[1, GLYPH_SIDE, GLYPH_SIDE], |i| {
        let p = ((i % GLYPH_SIDE) as f64 + 0.5, (i / GLYPH_SIDE) as f64 + 0.5);
        let d = strokes
            .iter()
            .flat_map(|st| st.windows(2).map(|w| seg_dist(p, w[0], w[1])))
            .fold(f64::INFINITY, f64::min);
        ink * (half + 0.5 - d).clamp(0.0, 1.0)
    })
}

fn in_shape(class: u32, u: f64, v: f64) -> bool {
    let r = (u * u + v * v).sqrt();
    match class {
        0 => r <= 1.0,
        1 => u.abs() <= 0.85 && v.abs() <= 0.85,
        2 => v <= 0.8 && v >= -0.9 + 2.0 * u.abs() * 0.95,
        3 => (0.55..=1.0).contains(&r),
        4 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
        5 => u.abs() <= 1.0 && ((-0.85..=-0.35).contains(&v) || (0.35..=0.85).contains(&v)),
        6 => v.abs() <= 1.0 && ((-0.85..=-0.35).contains(&u) || (0.35..=0.85).contains(&u)),
        7 => u.abs() + v.abs() <= 1.05,
        8 => (u - v).abs() <= 0.38 && r <= 1.1 || (u + v).abs() <= 0.38 && r <= 1.1,
        9 => u.abs() <= 0.9 && v.abs() <= 0.9 && ((u >= 0.0) == (v >= 0.0)),
        _ => unreachable!(),
    }
}

fn colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Renders one scene as `[3, 16, 16]` with values in [0, 1].
pub fn render_scene(class: u32, rng: &mut ChaCha8Rng) -> Tensor {
    let bg = colour(rng);
    let grad = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
    let mut fg = colour(rng);
    let contrast: f64 = fg.iter().zip(&bg).map(|(a, b)| (a - b).abs()).sum();
    if contrast < 0.6 {
        fg = bg.map(|b| if b > 0.5 { b - 0.55 } else { b + 0.55 });
    }
    let side = SCENE_SIDE as f64;
    let radius = rng.random_range(3.6..6.2);
    let (cx, cy) = (
        side / 2.0 + rng.random_range(-2.2..2.2),
        side / 2.0 + rng.random_range(-2.2..2.2),
    );
    let angle = if matches!(class, 0 | 3) { 0.0 } else { rng.random_range(-0.35..0.35) };
    let (ca, sa) = (f64::cos(angle), f64::sin(angle));
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(1..=3))
        .map(|_| {
            (
                rng.random_range(0.0..side),
                rng.random_range(0.0..side),
                rng.random_range(0.8..1.8),
                colour(rng),
            )
        })
        .collect();
    let noise = Normal::new(0.0, 0.07).unwrap();

    let n = SCENE_SIDE * SCENE_SIDE;
    let mut data = vec![0.0; 3 * n];
    for y in 0..SCENE_SIDE {
        for x in 0..SCENE_SIDE {
            let mut px = [0.0; 3];
            for ch in 0..3 {
                px[ch] = bg[ch] + grad[0] * (x as f64 / side - 0.5) + grad[1] * (y as f64 / side - 0.5);
            }
            for &(bx, by, br, bc) in &blobs {
                if (x as f64 + 0.5 - bx).abs() <= br && (y as f64 + 0.5 - by).abs() <= br {
                    px = bc;
                }
            }
            let mut cover = 0.0;
            for sy in 0..2 {
                for sx in 0..2 {
                    let dx = x as f64 + 0.25 + 0.5 * sx as f64 - cx;
                    let dy = y as f64 + 0.25 + 0.5 * sy as f64 - cy;
                    let (u, v) = ((ca * dx + sa * dy) / radius, (-sa * dx + ca * dy) / radius);
                    if in_shape(class, u, v) {
                        cover += 0.25;
                    }
                }
            }
            for ch in 0..3 {
                let v = cover * fg[ch] + (1.0 - cover) * px[ch] + noise.sample(rng);
                data[ch * n + y * SCENE_SIDE + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, SCENE_SIDE, SCENE_SIDE], data).expect("fixed shape")
}

/// Ink-weighted centroid, for sanity checks on rendered glyphs.
pub fn centroid(t: &Tensor) -> (f64, f64) {
    let w = *t.shape().last().unwrap();
    let (mut sx, mut sy, mut m) = (0.0, 0.0, 0.0);
    for (i, &v) in t.data().iter().enumerate() {
        sx += v * (i % w) as f64;
        sy += v * ((i / w) % w) as f64;
        m += v;
    }
    (sx / m, sy / m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_chars_round_trip() {
        for c in 0..GLYPH_CLASSES {
            assert_eq!(glyph_class(glyph_char(c).unwrap()), Some(c));
        }
        assert_eq!(glyph_char(10), Some('A'));
        assert_eq!(glyph_char(36), None);
    }

    #[test]
    fn glyphs_are_deterministic_and_subset_stable() {
        let a = glyphs(&[3, 12], 4, Split::Train, 1).unwrap();
        let b = glyphs(&[12], 4, Split::Train, 1).unwrap();
        let from_a: Vec<_> = a.samples().iter().filter(|s| s.label == 12).collect();
        assert_eq!(from_a.len(), 4);
        for (x, y) in from_a.iter().zip(b.samples()) {
            assert_eq!(x.input, y.input);
            assert_eq!(x.id, y.id);
        }
        let t = glyphs(&[12], 4, Split::Test, 1).unwrap();
        assert_ne!(t.samples()[0].input, b.samples()[0].input);
    }

    #[test]
    fn glyphs_have_ink_near_the_centre() {
        let d = glyphs(&(0..GLYPH_CLASSES).collect::<Vec<_>>(), 2, Split::Train, 3).unwrap();
        for s in d.samples() {
            let ink: f64 = s.input.data().iter().sum();
            assert!(ink > 25.0, "class {} has too little ink", s.label);
            let (x, y) = centroid(&s.input);
            assert!((8.0..20.0).contains(&x) && (8.0..20.0).contains(&y), "class {}", s.label);
            assert!(s.input.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn scenes_have_expected_shape() {
        let d = scenes(&[0, 9], 3, Split::Test, 5).unwrap();
        assert_eq!(d.input_shape(), &[3, 16, 16]);
        assert_eq!(d.len(), 6);
        assert!(scenes(&[10], 1, Split::Test, 5).is_err());
    }
}
