//! Seeded synthetic tracking sequences.
//!
//! Objects move with constant velocity perturbed by Gaussian acceleration and
//! bounce off the image borders. Each visible object is detected unless missed,
//! false positives are sprinkled in, and detected boxes may be jittered.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::encoders::AppearanceProvider;
use crate::error::{Error, Result};
use crate::graph::{BBox, Detection};
use crate::rng::{derive_seed, stream_rng};
use crate::trajectory::{TrackBox, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_tracks: usize,
    pub n_frames: usize,
    pub native_fps: f64,
    pub width: f64,
    pub height: f64,
    /// Shortest lifetime of a track, in frames.
    pub min_track_frames: usize,
    /// Box heights are drawn uniformly from this range; widths are `aspect × height`.
    pub min_box_height: f64,
    pub max_box_height: f64,
    pub aspect: f64,
    /// Largest initial speed, in pixels per frame.
    pub max_speed: f64,
    /// Standard deviation of the per-frame acceleration, in pixels per frame².
    pub accel_noise: f64,
    pub miss_prob: f64,
    /// Mean number of false positives per frame.
    pub fp_rate: f64,
    pub appearance_dim: usize,
    pub appearance_sigma: f64,
    /// Standard deviation of box noise as a fraction of the box size.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_tracks: 20,
            n_frames: 300,
            native_fps: 30.0,
            width: 1920.0,
            height: 1080.0,
            min_track_frames: 60,
            min_box_height: 80.0,
            max_box_height: 220.0,
            aspect: 0.4,
            max_speed: 4.0,
            accel_noise: 0.1,
            miss_prob: 0.0,
            fp_rate: 0.0,
            appearance_dim: 32,
            appearance_sigma: 0.1,
            jitter: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.n_frames == 0 || self.native_fps <= 0.0 {
            return bad("n_frames and native_fps must be positive");
        }
        if !(0.0..=1.0).contains(&self.miss_prob) {
            return bad("miss_prob must lie in [0, 1]");
        }
        if self.fp_rate < 0.0 || self.jitter < 0.0 || self.appearance_sigma < 0.0 || self.accel_noise < 0.0 {
            return bad("noise parameters must be nonnegative");
        }
        if !(self.min_box_height > 0.0 && self.max_box_height >= self.min_box_height && self.aspect > 0.0) {
            return bad("invalid box size range");
        }
        if self.width <= self.max_box_height * self.aspect || self.height <= self.max_box_height {
            return bad("image smaller than the largest box");
        }
        if self.appearance_dim == 0 {
            return bad("appearance_dim must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    /// Detections ordered by frame; `id` is the position in this list and
    /// `gt_track` the true identity (`None` for false positives).
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<Trajectory>,
    pub n_frames: usize,
    pub fps: f64,
}

// Stream indices for independent random sources.
const TRACKS: u64 = 1;
const DETECTIONS: u64 = 2;
const APPEARANCE: u64 = 3;

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticSequence> {
    cfg.validate()?;
    let mut ground_truth = Vec::with_capacity(cfg.n_tracks);
    let mut rng = stream_rng(cfg.seed, TRACKS);
    let accel = Normal::new(0.0, cfg.accel_noise).expect("validated");
    let min_len = cfg.min_track_frames.clamp(1, cfg.n_frames);
    for track in 0..cfg.n_tracks {
        let start = rng.random_range(0..=cfg.n_frames - min_len);
        let end = rng.random_range(start + min_len..=cfg.n_frames);
        let h = rng.random_range(cfg.min_box_height..=cfg.max_box_height);
        let w = cfg.aspect * h;
        let mut x = rng.random_range(0.0..cfg.width - w);
        let mut y = rng.random_range(0.0..cfg.height - h);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let speed = rng.random_range(0.0..=cfg.max_speed);
        let (mut vx, mut vy) = (speed * angle.cos(), speed * angle.sin());
        let mut boxes = Vec::with_capacity(end - start);
        for frame in start..end {
            boxes.push(TrackBox {
                frame,
                bbox: BBox::new(x, y, w, h),
                detection: None,
            });
            vx += accel.sample(&mut rng);
            vy += accel.sample(&mut rng);
            x += vx;
            y += vy;
            (x, vx) = reflect(x, vx, cfg.width - w);
            (y, vy) = reflect(y, vy, cfg.height - h);
        }
        ground_truth.push(Trajectory::new(track as u32, boxes));
    }

    let mut rng = stream_rng(cfg.seed, DETECTIONS);
    let fp_count = (cfg.fp_rate > 0.0).then(|| Poisson::new(cfg.fp_rate).expect("validated"));
    let mut detections = Vec::new();
    for frame in 0..cfg.n_frames {
        for traj in &ground_truth {
            let Some(tb) = traj.box_at(frame) else { continue };
            if rng.random::<f64>() < cfg.miss_prob {
                continue;
            }
            let b = tb.bbox;
            let bbox = if cfg.jitter > 0.0 {
                let n = |s: f64, r: &mut rand_chacha::ChaCha8Rng| Normal::new(0.0, cfg.jitter * s).unwrap().sample(r);
                let dw = n(b.w, &mut rng);
                let dh = n(b.h, &mut rng);
                BBox::new(
                    b.x + n(b.w, &mut rng),
                    b.y + n(b.h, &mut rng),
                    (b.w + dw).max(0.25 * b.w),
                    (b.h + dh).max(0.25 * b.h),
                )
            } else {
                b
            };
            let conf = rng.random_range(0.6..=1.0);
            detections.push(
                Detection::new(detections.len(), frame, bbox)
                    .with_track(traj.id)
                    .with_confidence(conf),
            );
        }
        if let Some(pois) = &fp_count {
            let n = pois.sample(&mut rng) as usize;
            for _ in 0..n {
                let h = rng.random_range(cfg.min_box_height..=cfg.max_box_height);
                let w = cfg.aspect * h;
                let bbox = BBox::new(
                    rng.random_range(0.0..cfg.width - w),
                    rng.random_range(0.0..cfg.height - h),
                    w,
                    h,
                );
                let conf = rng.random_range(0.2..=1.0);
                detections.push(Detection::new(detections.len(), frame, bbox).with_confidence(conf));
            }
        }
    }

    let provider = AppearanceProvider::Synthetic {
        dim: cfg.appearance_dim,
        sigma: cfg.appearance_sigma,
        seed: derive_seed(cfg.seed, APPEARANCE),
    };
    provider.assign(&mut detections)?;

    Ok(SyntheticSequence {
        detections,
        ground_truth,
        n_frames: cfg.n_frames,
        fps: cfg.native_fps,
    })
}

fn reflect(mut pos: f64, mut vel: f64, max: f64) -> (f64, f64) {
    if pos < 0.0 {
        pos = -pos;
        vel = -vel;
    }
    if pos > max {
        pos = 2.0 * max - pos;
        vel = -vel;
    }
    (pos.clamp(0.0, max), vel)
}
