//! Seeded two-domain generator.
//!
//! Image mode draws a chest-like scene: a bright body ellipse, two dark lung
//! ellipses (also emitted as the foreground mask) and, for positives, a bright
//! Gaussian opacity inside one lung whose amplitude scales with
//! `separation`. Domain nuisances scale with `shift` and ignore the label.
//! Pediatric images carry a randomly scaled elongated shadow beside one lung.
//! Adult images are blurred and then overlaid with horizontal rib stripes.
//! With `shift = 0` both domains come from the same process.
//!
//! Vector mode places the signal along a fixed direction; the adult domain
//! rescales half of the coordinates and adds a fixed offset.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::sample::{Dataset, Domain, LabeledSample, Split};
use crate::error::{Error, Result};
use crate::util::rng_for;
use crate::Tensor64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthMode {
    Image,
    Vector,
}

impl SynthMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthMode::Image => "image",
            SynthMode::Vector => "vector",
        }
    }
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(SynthMode::Image),
            "vector" => Ok(SynthMode::Vector),
            other => Err(Error::Config(format!("unknown mode `{other}` (image|vector)"))),
        }
    }
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Named domain-shift magnitudes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftPreset {
    None,
    Mild,
    Moderate,
    Strong,
}

impl ShiftPreset {
    pub fn value(self) -> f64 {
        match self {
            ShiftPreset::None => 0.0,
            ShiftPreset::Mild => 0.5,
            ShiftPreset::Moderate => 1.0,
            ShiftPreset::Strong => 2.0,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(ShiftPreset::None),
            "mild" => Some(ShiftPreset::Mild),
            "moderate" => Some(ShiftPreset::Moderate),
            "strong" => Some(ShiftPreset::Strong),
            _ => None,
        }
    }
}

/// Parses either a preset name or a non-negative number.
pub fn parse_shift(s: &str) -> Result<f64> {
    if let Some(p) = ShiftPreset::parse(s) {
        return Ok(p.value());
    }
    s.parse::<f64>()
        .map_err(|_| Error::Config(format!("shift `{s}` is neither a preset nor a number")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_per_cell: usize,
    pub mode: SynthMode,
    pub shift: f64,
    pub separation: f64,
    /// Standard deviation of the additive Gaussian pixel/feature noise.
    pub noise: f64,
    /// Side length of generated images (before cropping and resizing).
    pub image_size: usize,
    pub vector_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_per_cell: 200,
            mode: SynthMode::Image,
            shift: ShiftPreset::Moderate.value(),
            separation: 1.0,
            noise: 0.1,
            image_size: 40,
            vector_dim: 32,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.n_per_cell < 4 {
            bad.push(format!("n_per_cell must be >= 4, got {}", self.n_per_cell));
        }
        if !(self.shift >= 0.0) || !self.shift.is_finite() {
            bad.push(format!("shift must be >= 0, got {}", self.shift));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            bad.push(format!("separation must be >= 0, got {}", self.separation));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            bad.push(format!("noise must be >= 0, got {}", self.noise));
        }
        if self.mode == SynthMode::Image && self.image_size < 16 {
            bad.push(format!("image_size must be >= 16, got {}", self.image_size));
        }
        if self.mode == SynthMode::Vector && self.vector_dim < 2 {
            bad.push(format!("vector_dim must be >= 2, got {}", self.vector_dim));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Key/value echo stored in manifests.
    pub fn echo(&self) -> Vec<(String, String)> {
        vec![
            ("seed".into(), self.seed.to_string()),
            ("mode".into(), self.mode.to_string()),
            ("n_per_cell".into(), self.n_per_cell.to_string()),
            ("shift".into(), self.shift.to_string()),
            ("separation".into(), self.separation.to_string()),
            ("noise".into(), self.noise.to_string()),
            ("image_size".into(), self.image_size.to_string()),
            ("vector_dim".into(), self.vector_dim.to_string()),
        ]
    }
}

pub fn sample_id(domain: Domain, label: u8, index: usize) -> String {
    format!("{}{}-{:05}", domain.as_str(), label, index)
}

/// Generates `n_per_cell` samples for each (domain, class) cell, ordered
/// P0, P1, A0, A1. Every sample is drawn from its own seeded stream.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let mut samples = Vec::with_capacity(4 * config.n_per_cell);
    let vector_basis = (config.mode == SynthMode::Vector).then(|| VectorBasis::new(config));
    for domain in Domain::ALL {
        for label in [0u8, 1] {
            for index in 0..config.n_per_cell {
                let id = sample_id(domain, label, index);
                let mut rng = rng_for(config.seed, &["synthetic", &id]);
                let (image, mask) = match &vector_basis {
                    None => {
                        let (img, mask) = draw_image(config, domain, label, &mut rng)?;
                        (img, Some(mask))
                    }
                    Some(basis) => (basis.draw(config, domain, label, &mut rng)?, None),
                };
                samples.push(LabeledSample {
                    id,
                    image,
                    mask,
                    label,
                    domain,
                    split: Split::Train,
                });
            }
        }
    }
    Dataset::new(samples)
}

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.cy) / self.ry;
        let dx = (x - self.cx) / self.rx;
        dy * dy + dx * dx <= 1.0
    }
}

fn jitter(rng: &mut ChaCha8Rng, spread: f64) -> f64 {
    1.0 + rng.random_range(-spread..=spread)
}

const BODY_LEVEL: f64 = 0.7;
const LUNG_LEVEL: f64 = 0.25;
const OPACITY_LEVEL: f64 = 0.35;
/// Opacity standard deviation as a fraction of the image side.
const OPACITY_WIDTH: f64 = 0.1;
/// Adult-domain blur per unit shift, in opacity widths.
const ADULT_BLUR: f64 = 0.2;
/// Peak pediatric thymus-like shadow per unit shift.
const THYMUS_LEVEL: f64 = 1.0;
const RIB_LEVEL: f64 = 0.12;
const RIB_PERIOD: f64 = 5.0;

fn draw_image(
    config: &SyntheticConfig,
    domain: Domain,
    label: u8,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor64, Tensor64)> {
    let n = config.image_size;
    let s = n as f64;
    let body = Ellipse {
        cy: s * 0.5,
        cx: s * 0.5,
        ry: s * 0.46,
        rx: s * 0.44,
    };
    let cy = s * 0.5 * jitter(rng, 0.05);
    let gap = s * 0.2 * jitter(rng, 0.1);
    let lungs = [-1.0, 1.0].map(|side| Ellipse {
        cy,
        cx: s * 0.5 + side * gap,
        ry: s * 0.3 * jitter(rng, 0.1),
        rx: s * 0.13 * jitter(rng, 0.1),
    });

    let opacity = (label == 1).then(|| {
        let lung = &lungs[rng.random_range(0..2)];
        // uniform in the inner 60% of the chosen lung
        let (u, v) = loop {
            let u: f64 = rng.random_range(-1.0..=1.0);
            let v: f64 = rng.random_range(-1.0..=1.0);
            if u * u + v * v <= 1.0 {
                break (u, v);
            }
        };
        (lung.cy + 0.6 * u * lung.ry, lung.cx + 0.6 * v * lung.rx)
    });
    let thymus = {
        let lung = &lungs[rng.random_range(0..2)];
        let side = if lung.cx < s * 0.5 { 1.0 } else { -1.0 };
        let amp = THYMUS_LEVEL * config.shift * rng.random_range(0.0..=1.0);
        (lung.cy - 0.4 * lung.ry, lung.cx + side * 0.5 * lung.rx, amp)
    };
    let rib_phase = rng.random_range(0.0..2.0 * PI);
    let sigma = s * OPACITY_WIDTH;
    let amplitude = config.separation * OPACITY_LEVEL;
    let adult = domain == Domain::Adult && config.shift > 0.0;

    let mut img = vec![0.0; n * n];
    let mut mask = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut v = 0.0;
            if body.contains(y, x) {
                v = BODY_LEVEL;
            }
            if lungs.iter().any(|l| l.contains(y, x)) {
                v = LUNG_LEVEL;
                mask[r * n + c] = 1.0;
            }
            if let Some((oy, ox)) = opacity {
                let d2 = (y - oy).powi(2) + (x - ox).powi(2);
                v += amplitude * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            if domain == Domain::Pediatric {
                let (ty, tx, ta) = thymus;
                let q = ((y - ty) / (0.12 * s)).powi(2) + ((x - tx) / (0.05 * s)).powi(2);
                v += ta * (-0.5 * q).exp();
            }
            img[r * n + c] = v;
        }
    }
    if adult {
        img = gaussian_blur(&img, n, ADULT_BLUR * config.shift * sigma);
        for r in 0..n {
            for c in 0..n {
                let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                if body.contains(y, x) {
                    img[r * n + c] += config.shift * RIB_LEVEL * (2.0 * PI * y / RIB_PERIOD + rib_phase).sin();
                }
            }
        }
    }
    if config.noise > 0.0 {
        let noise = Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?;
        for v in &mut img {
            *v += noise.sample(rng);
        }
    }
    Ok((Tensor64::new(vec![1, n, n], img)?, Tensor64::new(vec![n, n], mask)?))
}

/// Separable Gaussian blur with clamped borders, truncated at 3σ.
fn gaussian_blur(img: &[f64], n: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return img.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    let at = |i: isize| i.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            rows[r * n + c] = (-radius..=radius)
                .zip(&taps)
                .map(|(k, w)| w * img[r * n + at(c as isize + k)])
                .sum::<f64>()
                / total;
        }
    }
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            out[r * n + c] = (-radius..=radius)
                .zip(&taps)
                .map(|(k, w)| w * rows[at(r as isize + k) * n + c])
                .sum::<f64>()
                / total;
        }
    }
    out
}

/// Fixed directions for vector mode, derived from the seed alone.
struct VectorBasis {
    signal: Vec<f64>,
    nuisance: Vec<f64>,
}

fn unit_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid");
    let v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

impl VectorBasis {
    fn new(config: &SyntheticConfig) -> Self {
        let mut rng = rng_for(config.seed, &["synthetic", "vector-basis"]);
        Self {
            signal: unit_direction(&mut rng, config.vector_dim),
            nuisance: unit_direction(&mut rng, config.vector_dim),
        }
    }

    fn draw(&self, config: &SyntheticConfig, domain: Domain, label: u8, rng: &mut ChaCha8Rng) -> Result<Tensor64> {
        let dim = config.vector_dim;
        let normal = Normal::new(0.0, 1.0).expect("valid");
        let half = dim / 2;
        let x: Vec<f64> = (0..dim)
            .map(|k| {
                let mut v = config.noise * normal.sample(rng);
                if label == 1 {
                    v += config.separation * self.signal[k];
                }
                if domain == Domain::Adult && config.shift > 0.0 {
                    if k < half {
                        v *= 1.0 + 0.5 * config.shift;
                    }
                    v += config.shift * self.nuisance[k];
                }
                v
            })
            .collect();
        Tensor64::vector(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: SynthMode) -> SyntheticConfig {
        SyntheticConfig {
            n_per_cell: 5,
            mode,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn cell_counts_and_shapes() {
        let d = generate_synthetic(&small(SynthMode::Image)).unwrap();
        assert_eq!(d.len(), 20);
        assert_eq!(d.sample_shape(), Some(&[1, 40, 40][..]));
        for domain in Domain::ALL {
            let idx = d.indices(domain, Split::Train);
            assert_eq!(idx.len(), 10);
            assert_eq!(idx.iter().filter(|&&i| d.get(i).label == 1).count(), 5);
        }
        assert!(d.samples().iter().all(|s| s.mask.as_ref().unwrap().sum() > 0.0));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_synthetic(&small(SynthMode::Image)).unwrap();
        let b = generate_synthetic(&small(SynthMode::Image)).unwrap();
        assert_eq!(a, b);
        let mut other = small(SynthMode::Image);
        other.seed = 4;
        assert_ne!(a, generate_synthetic(&other).unwrap());
    }

    fn mean_image(d: &Dataset, domain: Domain, label: Option<u8>) -> Vec<f64> {
        let idx: Vec<usize> = d
            .indices(domain, Split::Train)
            .into_iter()
            .filter(|&i| label.is_none_or(|l| d.get(i).label == l))
            .collect();
        let len = d.get(idx[0]).image.len();
        let mut m = vec![0.0; len];
        for &i in &idx {
            for (a, v) in m.iter_mut().zip(d.get(i).image.data()) {
                *a += v / idx.len() as f64;
            }
        }
        m
    }

    fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn domains_coincide_without_shift_and_separate_with_it() {
        let mut c = small(SynthMode::Image);
        c.n_per_cell = 60;
        c.shift = 0.0;
        let d = generate_synthetic(&c).unwrap();
        let same = mean_abs_diff(&mean_image(&d, Domain::Pediatric, None), &mean_image(&d, Domain::Adult, None));
        c.shift = 2.0;
        let d = generate_synthetic(&c).unwrap();
        let apart = mean_abs_diff(&mean_image(&d, Domain::Pediatric, None), &mean_image(&d, Domain::Adult, None));
        assert!(apart > 3.0 * same, "{same} vs {apart}");
    }

    /// Welch t statistic of per-image totals between the two classes.
    fn class_t(d: &Dataset, domain: Domain) -> f64 {
        let totals = |label: u8| -> Vec<f64> {
            d.indices(domain, Split::Train)
                .into_iter()
                .filter(|&i| d.get(i).label == label)
                .map(|i| d.get(i).image.sum())
                .collect()
        };
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var / v.len() as f64)
        };
        let ((m0, s0), (m1, s1)) = (stats(&totals(0)), stats(&totals(1)));
        (m1 - m0) / (s0 + s1).sqrt()
    }

    #[test]
    fn nuisance_does_not_depend_on_the_label() {
        let mut c = small(SynthMode::Image);
        c.n_per_cell = 80;
        c.shift = 2.0;
        c.separation = 0.0;
        let null = generate_synthetic(&c).unwrap();
        c.separation = 1.0;
        let signal = generate_synthetic(&c).unwrap();
        for domain in Domain::ALL {
            assert!(class_t(&null, domain).abs() < 4.0, "{domain:?}");
            assert!(class_t(&signal, domain) > 4.0, "{domain:?}");
        }
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let flat = vec![0.3; 64];
        assert!(gaussian_blur(&flat, 8, 1.5).iter().all(|v| (v - 0.3).abs() < 1e-12));
        let mut spike = vec![0.0; 15 * 15];
        spike[7 * 15 + 7] = 1.0;
        let b = gaussian_blur(&spike, 15, 1.0);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(gaussian_blur(&spike, 15, 0.0), spike);
    }

    #[test]
    fn separation_zero_makes_classes_share_a_distribution() {
        let mut c = small(SynthMode::Image);
        c.separation = 0.0;
        c.noise = 0.0;
        c.shift = 0.0;
        let d = generate_synthetic(&c).unwrap();
        let max = |s: &LabeledSample| s.image.data().iter().cloned().fold(f64::MIN, f64::max);
        let p0 = max(&d.samples()[0]);
        let p1 = max(&d.samples()[5]);
        assert_eq!(p0, BODY_LEVEL);
        assert_eq!(p1, BODY_LEVEL);
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut c = SyntheticConfig::default();
        c.n_per_cell = 3;
        c.shift = -1.0;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("n_per_cell") && msg.contains("shift"), "{msg}");
    }

    #[test]
    fn shift_presets() {
        assert_eq!(parse_shift("moderate").unwrap(), 1.0);
        assert_eq!(parse_shift("0.25").unwrap(), 0.25);
        assert!(parse_shift("huge").is_err());
    }
}
