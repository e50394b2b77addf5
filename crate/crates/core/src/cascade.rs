//! Cascaded forest regression of landmark shapes.
//!
//! Starting from the mean training shape, every stage crops a patch around
//! each current landmark estimate, stacks the patches as channels, and lets a
//! regression forest predict an additive shape update. Stages are trained
//! greedily on the residual left by the stages before them.

use ndf_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{normalize_pixel, RegressionSet, Samples};
use crate::error::{NdfError, Result};
use crate::forest::{AssignmentScheme, Forest, LeafInit};
use crate::network::Network;
use crate::saliency::ScoreHistogram;
use crate::training::{train_regressor, EpochMetrics, TrainConfig};

/// Side of the synthetic images.
pub const SYNTH_SIDE: usize = 64;
/// Landmarks per synthetic face: eye centres, nose tip, mouth corners.
pub const SYNTH_LANDMARKS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(NdfError::Config(format!(
                "{width}×{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Intensity in `[0, 1]`, or 0 outside the frame.
    pub fn at(&self, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            0.0
        } else {
            f64::from(self.pixels[y as usize * self.width + x as usize]) / 255.0
        }
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p) / 255.0).collect()
    }
}

/// Landmarks as `(x, y)` pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub points: Vec<[f64; 2]>,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `[x0, y0, x1, y1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        Self {
            points: values.chunks_exact(2).map(|p| [p[0], p[1]]).collect(),
        }
    }

    pub fn offset(&self, delta: &[f64]) -> Self {
        let flat: Vec<f64> = self
            .flatten()
            .iter()
            .zip(delta)
            .map(|(a, b)| a + b)
            .collect();
        Self::from_flat(&flat)
    }

    /// Mean Euclidean distance between corresponding landmarks.
    pub fn mean_error(&self, other: &Shape) -> f64 {
        let total: f64 = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .sum();
        total / self.points.len() as f64
    }
}

/// Crops a `side × side` patch centred on each rounded landmark and stacks
/// them as `[L, side, side]`. Pixels outside the image are zero.
pub fn extract_patches(image: &GrayImage, shape: &Shape, side: usize) -> Result<Tensor> {
    if side % 2 == 0 {
        return Err(NdfError::Config(format!(
            "patch side must be odd, got {side}"
        )));
    }
    let half = (side / 2) as i64;
    let mut data = Vec::with_capacity(shape.len() * side * side);
    for p in &shape.points {
        let (cx, cy) = (p[0].round() as i64, p[1].round() as i64);
        for r in 0..side as i64 {
            for c in 0..side as i64 {
                data.push(image.at(cx - half + c, cy - half + r));
            }
        }
    }
    Ok(Tensor::new(vec![shape.len(), side, side], data)?)
}

/// Per-landmark mean of the training shapes.
pub fn init_shape(shapes: &[Shape]) -> Result<Shape> {
    let first = shapes.first().ok_or(NdfError::EmptyDataset)?;
    let mut sum = vec![0.0; 2 * first.len()];
    for s in shapes {
        if s.len() != first.len() {
            return Err(NdfError::Config("shapes disagree on landmark count".into()));
        }
        for (acc, v) in sum.iter_mut().zip(s.flatten()) {
            *acc += v;
        }
    }
    let n = shapes.len() as f64;
    Ok(Shape::from_flat(
        &sum.iter().map(|v| v / n).collect::<Vec<_>>(),
    ))
}

/// Images with ground-truth landmark shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    pub images: Vec<GrayImage>,
    pub shapes: Vec<Shape>,
}

impl LandmarkSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn landmarks(&self) -> usize {
        self.shapes.first().map_or(0, Shape::len)
    }

    /// Whole images (normalized to `[-0.5, 0.5]`, shape `[1, H, W]`) paired
    /// with absolute landmark coordinates.
    pub fn to_regression_set(&self) -> Result<RegressionSet> {
        let first = self.images.first().ok_or(NdfError::EmptyDataset)?;
        let (h, w) = (first.height, first.width);
        let mut pixels = Vec::with_capacity(self.len() * h * w);
        for img in &self.images {
            if (img.height, img.width) != (h, w) {
                return Err(NdfError::Config("images differ in size".into()));
            }
            pixels.extend(img.pixels.iter().map(|&p| normalize_pixel(p)));
        }
        let targets = self.shapes.iter().flat_map(Shape::flatten).collect();
        RegressionSet::new(
            Samples::new(vec![1, h, w], pixels)?,
            targets,
            2 * self.landmarks(),
        )
    }

    pub fn split_at(&self, n: usize) -> (LandmarkSet, LandmarkSet) {
        let (ia, ib) = self.images.split_at(n);
        let (sa, sb) = self.shapes.split_at(n);
        (
            LandmarkSet {
                images: ia.to_vec(),
                shapes: sa.to_vec(),
            },
            LandmarkSet {
                images: ib.to_vec(),
                shapes: sb.to_vec(),
            },
        )
    }
}

// Face geometry in unscaled, unrotated face coordinates.
const FACE_AXES: (f64, f64) = (18.0, 23.0);
const EYE_OFFSET: (f64, f64) = (8.0, -6.0);
const EYE_AXES: (f64, f64) = (3.5, 2.2);
const NOSE: (f64, f64) = (0.0, 4.0);
const MOUTH_HALF_WIDTH: f64 = 8.0;
const MOUTH_Y: f64 = 11.0;

/// Procedurally rendered 64×64 faces with five landmarks and random
/// translation, scale and rotation. Deterministic for a given seed.
pub fn synth_dataset(count: usize, seed: u64) -> LandmarkSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(count);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let c = [
            SYNTH_SIDE as f64 / 2.0 + rng.gen_range(-4.0..4.0),
            SYNTH_SIDE as f64 / 2.0 + rng.gen_range(-4.0..4.0),
        ];
        let scale: f64 = rng.gen_range(0.9..1.1);
        let theta: f64 = rng.gen_range(-0.15..0.15);
        let (sin, cos) = theta.sin_cos();
        let to_image = |u: f64, v: f64| -> [f64; 2] {
            let (x, y) = (u * scale, v * scale);
            // stored at f32 precision so the on-disk cache round-trips exactly
            [
                f64::from((c[0] + cos * x - sin * y) as f32),
                f64::from((c[1] + sin * x + cos * y) as f32),
            ]
        };
        let shape = Shape {
            points: vec![
                to_image(-EYE_OFFSET.0, EYE_OFFSET.1),
                to_image(EYE_OFFSET.0, EYE_OFFSET.1),
                to_image(NOSE.0, NOSE.1),
                to_image(-MOUTH_HALF_WIDTH, MOUTH_Y),
                to_image(MOUTH_HALF_WIDTH, MOUTH_Y),
            ],
        };
        let mut pixels = Vec::with_capacity(SYNTH_SIDE * SYNTH_SIDE);
        for row in 0..SYNTH_SIDE {
            for col in 0..SYNTH_SIDE {
                let (dx, dy) = (col as f64 - c[0], row as f64 - c[1]);
                let u = (cos * dx + sin * dy) / scale;
                let v = (-sin * dx + cos * dy) / scale;
                let base = face_intensity(u, v);
                let noisy = base + rng.gen_range(-8.0..8.0);
                pixels.push(noisy.round().clamp(0.0, 255.0) as u8);
            }
        }
        images.push(GrayImage {
            width: SYNTH_SIDE,
            height: SYNTH_SIDE,
            pixels,
        });
        shapes.push(shape);
    }
    LandmarkSet { images, shapes }
}

/// Samples `start..start + count` of the stream `synth_dataset` draws for
/// `seed`. Sample `i` does not depend on how many are requested, so disjoint
/// ranges of one seed give disjoint train and test sets.
pub fn synth_range(seed: u64, start: usize, count: usize) -> LandmarkSet {
    synth_dataset(start + count, seed).split_at(start).1
}

fn face_intensity(u: f64, v: f64) -> f64 {
    let inside =
        |cx: f64, cy: f64, a: f64, b: f64| ((u - cx) / a).powi(2) + ((v - cy) / b).powi(2) <= 1.0;
    if inside(-EYE_OFFSET.0, EYE_OFFSET.1, EYE_AXES.0, EYE_AXES.1)
        || inside(EYE_OFFSET.0, EYE_OFFSET.1, EYE_AXES.0, EYE_AXES.1)
    {
        return 45.0;
    }
    if inside(NOSE.0, NOSE.1, 2.0, 2.0) {
        return 90.0;
    }
    if u.abs() <= MOUTH_HALF_WIDTH {
        let arc = MOUTH_Y + 3.0 * (1.0 - (u / MOUTH_HALF_WIDTH).powi(2));
        if (v - arc).abs() <= 1.0 {
            return 60.0;
        }
    }
    if inside(0.0, 0.0, FACE_AXES.0, FACE_AXES.1) {
        170.0
    } else {
        40.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub stages: usize,
    pub trees: usize,
    pub depth: usize,
    pub patch_side: usize,
    /// Hidden width of each stage's patch extractor.
    pub hidden: usize,
    pub train: TrainConfig,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            stages: 10,
            trees: 3,
            depth: 5,
            patch_side: 11,
            hidden: 64,
            train: TrainConfig {
                epochs: 30,
                batch_size: 32,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel {
    pub stages: Vec<Forest>,
    pub mean_shape: Shape,
    pub patch_side: usize,
}

/// Shape estimate before and after every stage, plus the updates applied.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeTrace {
    /// `stages + 1` shapes; the first is the mean shape.
    pub estimates: Vec<Shape>,
    pub updates: Vec<Vec<f64>>,
}

impl CascadeTrace {
    pub fn final_shape(&self) -> &Shape {
        self.estimates.last().expect("at least the initial shape")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    pub epochs: Vec<EpochMetrics>,
    /// Mean landmark error on the training set after this stage.
    pub train_error: f64,
}

impl CascadeModel {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(NdfError::Config("cascade needs at least one stage".into()));
        }
        let l = self.mean_shape.len();
        let expected = vec![l, self.patch_side, self.patch_side];
        for f in &self.stages {
            if f.extractor.input_shape != expected || f.output_dim() != 2 * l {
                return Err(NdfError::Config(
                    "stage shapes disagree with landmark count or patch side".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn predict(&self, image: &GrayImage) -> Result<CascadeTrace> {
        let mut current = self.mean_shape.clone();
        let mut estimates = vec![current.clone()];
        let mut updates = Vec::with_capacity(self.stages.len());
        for forest in &self.stages {
            let patches = extract_patches(image, &current, self.patch_side)?;
            let delta = forest.predict(&patches.data)?;
            current = current.offset(&delta);
            estimates.push(current.clone());
            updates.push(delta);
        }
        Ok(CascadeTrace { estimates, updates })
    }

    /// Patch bundles for `images` at the given shape estimates.
    pub fn stage_inputs(&self, images: &[GrayImage], estimates: &[Shape]) -> Result<Samples> {
        patch_samples(images, estimates, self.patch_side)
    }

    /// Runs all images through the cascade, returning per-stage estimates
    /// (`stages + 1` entries, each with one shape per image).
    pub fn predict_all(&self, images: &[GrayImage]) -> Result<Vec<Vec<Shape>>> {
        let mut current = vec![self.mean_shape.clone(); images.len()];
        let mut out = vec![current.clone()];
        for forest in &self.stages {
            let inputs = self.stage_inputs(images, &current)?;
            let deltas = forest.predict_samples(&inputs)?;
            let dim = forest.output_dim();
            current = current
                .iter()
                .enumerate()
                .map(|(i, s)| s.offset(&deltas[i * dim..(i + 1) * dim]))
                .collect();
            out.push(current.clone());
        }
        Ok(out)
    }

    /// Mean landmark error after each stage; entry 0 is the mean-shape error.
    pub fn stage_errors(&self, data: &LandmarkSet) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(NdfError::EmptyDataset);
        }
        Ok(self
            .predict_all(&data.images)?
            .iter()
            .map(|est| mean_landmark_error(est, &data.shapes))
            .collect())
    }

    /// Routing probabilities of every stage over `images`, one vector per stage.
    pub fn stage_scores(&self, images: &[GrayImage]) -> Result<Vec<Vec<f64>>> {
        let estimates = self.predict_all(images)?;
        self.stages
            .iter()
            .zip(&estimates)
            .map(|(forest, est)| {
                let inputs = self.stage_inputs(images, est)?;
                Ok(forest
                    .scores_samples(&inputs)?
                    .into_iter()
                    .flatten()
                    .collect())
            })
            .collect()
    }

    pub fn stage_score_histograms(
        &self,
        images: &[GrayImage],
        bins: usize,
    ) -> Result<Vec<ScoreHistogram>> {
        self.stage_scores(images)?
            .iter()
            .map(|s| ScoreHistogram::from_scores(s, bins))
            .collect()
    }
}

pub fn mean_landmark_error(estimates: &[Shape], truth: &[Shape]) -> f64 {
    let total: f64 = estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| e.mean_error(t))
        .sum();
    total / truth.len() as f64
}

fn patch_samples(images: &[GrayImage], estimates: &[Shape], side: usize) -> Result<Samples> {
    let l = estimates.first().map_or(0, Shape::len);
    let mut data = Vec::with_capacity(images.len() * l * side * side);
    for (img, s) in images.iter().zip(estimates) {
        data.extend(extract_patches(img, s, side)?.data);
    }
    Samples::new(vec![l, side, side], data)
}

pub fn train_cascade(
    data: &LandmarkSet,
    config: &CascadeConfig,
) -> Result<(CascadeModel, Vec<StageReport>)> {
    train_cascade_with(data, config, |_| {})
}

/// Greedy stage-wise training; `on_stage` is called after each stage.
pub fn train_cascade_with(
    data: &LandmarkSet,
    config: &CascadeConfig,
    mut on_stage: impl FnMut(&StageReport),
) -> Result<(CascadeModel, Vec<StageReport>)> {
    if data.is_empty() {
        return Err(NdfError::EmptyDataset);
    }
    if config.stages == 0 || config.trees == 0 || config.hidden == 0 {
        return Err(NdfError::Config(
            "stages, trees and hidden width must be positive".into(),
        ));
    }
    let mean_shape = init_shape(&data.shapes)?;
    let l = mean_shape.len();
    let side = config.patch_side;
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let mut current = vec![mean_shape.clone(); data.len()];
    let mut stages = Vec::with_capacity(config.stages);
    let mut reports = Vec::with_capacity(config.stages);
    let splits = config.trees * ((1usize << config.depth) - 1);
    for stage in 0..config.stages {
        let inputs = patch_samples(&data.images, &current, side)?;
        let targets: Vec<f64> = current
            .iter()
            .zip(&data.shapes)
            .flat_map(|(c, t)| t.flatten().into_iter().zip(c.flatten()).map(|(a, b)| a - b))
            .collect();
        let set = RegressionSet::new(inputs, targets, 2 * l)?;
        let extractor = Network::mlp(vec![l, side, side], &[config.hidden], splits, &mut rng)?;
        let mut forest = Forest::new(
            extractor,
            config.depth,
            config.trees,
            LeafInit::Regression(2 * l),
            AssignmentScheme::Sequential,
            &mut rng,
        )?;
        let train = TrainConfig {
            seed: config.train.seed.wrapping_add(stage as u64),
            ..config.train.clone()
        };
        let epochs = train_regressor(&mut forest, &set, &train)?;
        let deltas = forest.predict_samples(&set.inputs)?;
        current = current
            .iter()
            .enumerate()
            .map(|(i, s)| s.offset(&deltas[i * 2 * l..(i + 1) * 2 * l]))
            .collect();
        let report = StageReport {
            stage,
            epochs,
            train_error: mean_landmark_error(&current, &data.shapes),
        };
        on_stage(&report);
        reports.push(report);
        stages.push(forest);
    }
    let model = CascadeModel {
        stages,
        mean_shape,
        patch_side: side,
    };
    model.validate()?;
    Ok((model, reports))
}
