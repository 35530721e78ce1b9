//! Synthetic training distributions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum DatasetSpec {
    /// Eight isotropic Gaussians evenly spaced on a circle. Mode `k` sits at
    /// angle `k * pi / 4`, so mode 0 is `(radius, 0)`.
    #[serde(rename = "eight-gaussians-2d")]
    EightGaussians { radius: f64, std: f64 },
    /// Uniform points on the dark cells of a `cells x cells` checkerboard
    /// covering `[-extent, extent]^2`.
    #[serde(rename = "checker-2d")]
    Checker { cells: usize, extent: f64 },
    /// 8x8 grayscale glyphs (square, disk, cross) in `[-1, 1]`, labelled by
    /// glyph.
    #[serde(rename = "shapes-8x8")]
    Shapes { noise: f64 },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::EightGaussians {
            radius: 2.0,
            std: 0.1,
        }
    }
}

pub const SHAPE_CLASSES: usize = 3;

impl DatasetSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::EightGaussians { .. } => "eight-gaussians-2d",
            DatasetSpec::Checker { .. } => "checker-2d",
            DatasetSpec::Shapes { .. } => "shapes-8x8",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetSpec::EightGaussians { .. } | DatasetSpec::Checker { .. } => 2,
            DatasetSpec::Shapes { .. } => 64,
        }
    }

    pub fn n_conditions(&self) -> usize {
        match self {
            DatasetSpec::EightGaussians { .. } | DatasetSpec::Checker { .. } => 1,
            DatasetSpec::Shapes { .. } => SHAPE_CLASSES,
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, DatasetSpec::Shapes { .. })
    }

    /// Mode centres of the eight-Gaussians distribution.
    pub fn modes(&self) -> Vec<[f64; 2]> {
        match self {
            DatasetSpec::EightGaussians { radius, .. } => (0..8)
                .map(|k| {
                    let a = k as f64 * std::f64::consts::FRAC_PI_4;
                    [radius * a.cos(), radius * a.sin()]
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn generate<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> ToyDataset {
        let mut samples = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let (x, c) = self.draw(rng);
            samples.push(x);
            labels.push(c);
        }
        ToyDataset {
            spec: self.clone(),
            samples,
            labels,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, usize) {
        match *self {
            DatasetSpec::EightGaussians { radius, std } => {
                let k = rng.random_range(0..8);
                let a = k as f64 * std::f64::consts::FRAC_PI_4;
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                (vec![radius * a.cos() + std * nx, radius * a.sin() + std * ny], 0)
            }
            DatasetSpec::Checker { cells, extent } => {
                let cell = 2.0 * extent / cells as f64;
                loop {
                    let i = rng.random_range(0..cells);
                    let j = rng.random_range(0..cells);
                    if (i + j) % 2 == 0 {
                        let x = -extent + (i as f64 + rng.random::<f64>()) * cell;
                        let y = -extent + (j as f64 + rng.random::<f64>()) * cell;
                        return (vec![x, y], 0);
                    }
                }
            }
            DatasetSpec::Shapes { noise } => {
                let class = rng.random_range(0..SHAPE_CLASSES);
                let cx = rng.random_range(3..=4) as i32;
                let cy = rng.random_range(3..=4) as i32;
                let r = rng.random_range(2..=3) as i32;
                let mut img = vec![-1.0; 64];
                for y in 0..8i32 {
                    for x in 0..8i32 {
                        let (dx, dy) = (x - cx, y - cy);
                        let on = match class {
                            0 => dx.abs().max(dy.abs()) == r,
                            1 => dx * dx + dy * dy <= r * r,
                            _ => (dx == 0 && dy.abs() <= r) || (dy == 0 && dx.abs() <= r),
                        };
                        if on {
                            img[(y * 8 + x) as usize] = 1.0;
                        }
                    }
                }
                for p in img.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *p = (*p + noise * e).clamp(-1.0, 1.0);
                }
                (img, class)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub spec: DatasetSpec,
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dims_and_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for spec in [
            DatasetSpec::default(),
            DatasetSpec::Checker {
                cells: 4,
                extent: 2.0,
            },
            DatasetSpec::Shapes { noise: 0.05 },
        ] {
            let d = spec.generate(200, &mut rng);
            assert_eq!(d.len(), 200);
            assert!(d.samples.iter().all(|s| s.len() == spec.dim()));
            assert!(d.labels.iter().all(|&l| l < spec.n_conditions()));
        }
    }

    #[test]
    fn eight_gaussians_within_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = DatasetSpec::default().generate(2000, &mut rng);
        assert!(d.samples.iter().flatten().all(|v| v.abs() < 3.0));
        let modes = DatasetSpec::default().modes();
        assert_eq!(modes[0], [2.0, 0.0]);
    }

    #[test]
    fn spec_serializes_with_dataset_name() {
        let s = serde_json::to_string(&DatasetSpec::default()).unwrap();
        assert!(s.contains("\"name\":\"eight-gaussians-2d\""), "{s}");
        let back: DatasetSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, DatasetSpec::default());
    }
}
