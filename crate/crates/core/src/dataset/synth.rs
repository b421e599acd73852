use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetManifest, Result, Source};
use crate::features::{assemble_sequence, Detection, LabeledSequence, LaneInfo, Maneuver, NUM_CLASSES, SEQ_LEN};

/// Class counts of the public in-cabin/exterior driving dataset.
pub const PAPER_CLASS_COUNTS: [usize; NUM_CLASSES] = [234, 124, 58, 123, 55];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_sequences: usize,
    pub class_distribution: [f64; NUM_CLASSES],
    /// Probability that a maneuver shows an anticipatory gaze drift.
    pub gaze_signal_strength: f64,
    /// Probability that a scene's lanes and neighbours are consistent with the label.
    pub exterior_signal_strength: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sequences: 500,
            class_distribution: [0.2; NUM_CLASSES],
            gaze_signal_strength: 0.7,
            exterior_signal_strength: 0.8,
            noise_sigma: 0.05,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn paper_distribution() -> [f64; NUM_CLASSES] {
        let total: usize = PAPER_CLASS_COUNTS.iter().sum();
        PAPER_CLASS_COUNTS.map(|c| c as f64 / total as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DatasetError::Config(m));
        let sum: f64 = self.class_distribution.iter().sum();
        if self.class_distribution.iter().any(|p| p.is_nan() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!(
                "class_distribution must be non-negative and sum to 1, sums to {sum}"
            ));
        }
        for (name, v) in [
            ("gaze_signal_strength", self.gaze_signal_strength),
            ("exterior_signal_strength", self.exterior_signal_strength),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            ));
        }
        if self.n_sequences == 0 {
            return bad("n_sequences must be positive".into());
        }
        Ok(())
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = WeightedIndex::new(cfg.class_distribution).map_err(|e| DatasetError::Config(e.to_string()))?;
    let plan: Vec<(Maneuver, u64)> = (0..cfg.n_sequences)
        .map(|_| (Maneuver::ALL[classes.sample(&mut master)], master.next_u64()))
        .collect();
    let sequences = plan
        .par_iter()
        .enumerate()
        .map(|(i, &(label, seed))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            generate_one(&mut rng, format!("synth-{:05}", i), label, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest::new(
        sequences,
        Source::Synthetic { config: cfg.clone() },
    ))
}

#[derive(Debug, Clone, Copy)]
struct Scene {
    lanes: LaneInfo,
    left_car: bool,
    right_car: bool,
}

fn lanes(
    rng: &mut ChaCha8Rng,
    min_lanes: u32,
    position: impl FnOnce(&mut ChaCha8Rng, u32) -> u32,
    near: bool,
) -> LaneInfo {
    let num_lanes = rng.random_range(min_lanes..=4);
    LaneInfo {
        lane_position: position(rng, num_lanes),
        num_lanes,
        near_intersection: near,
    }
}

fn any_position(rng: &mut ChaCha8Rng, n: u32) -> u32 {
    rng.random_range(1..=n)
}

/// Label-independent scene.
fn base_scene(rng: &mut ChaCha8Rng) -> Scene {
    let near = rng.random_bool(0.3);
    Scene {
        lanes: lanes(rng, 1, any_position, near),
        left_car: rng.random_bool(0.5),
        right_car: rng.random_bool(0.5),
    }
}

/// Scene consistent with the maneuver: lane changes need a free lane on that
/// side, turns happen at intersections from the matching edge lane.
fn informative_scene(rng: &mut ChaCha8Rng, label: Maneuver) -> Scene {
    let l = match label {
        Maneuver::Straight => lanes(rng, 1, any_position, false),
        Maneuver::LeftLaneChange => lanes(rng, 2, |r, n| r.random_range(2..=n), false),
        Maneuver::RightLaneChange => lanes(rng, 2, |r, n| r.random_range(1..n), false),
        Maneuver::LeftTurn => lanes(rng, 1, |_, _| 1, true),
        Maneuver::RightTurn => lanes(rng, 1, |_, n| n, true),
    };
    let has_left = l.lane_position > 1;
    let has_right = l.lane_position < l.num_lanes;
    let (p_left, p_right) = match label {
        Maneuver::Straight => (0.7, 0.7),
        Maneuver::LeftLaneChange | Maneuver::LeftTurn => (0.0, 0.5),
        Maneuver::RightLaneChange | Maneuver::RightTurn => (0.5, 0.0),
    };
    Scene {
        lanes: l,
        left_car: has_left && rng.random_bool(p_left),
        right_car: has_right && rng.random_bool(p_right),
    }
}

fn scene_objects(rng: &mut ChaCha8Rng, scene: &Scene) -> Vec<Detection> {
    let car = |rng: &mut ChaCha8Rng, cx: f64| Detection {
        cx: cx + rng.random_range(-0.05..0.05),
        cy: 0.6 + rng.random_range(-0.05..0.05),
        w: 0.22 + rng.random_range(-0.03..0.03),
        h: 0.18 + rng.random_range(-0.03..0.03),
        class_id: 0,
    };
    let mut out = Vec::new();
    if scene.left_car {
        out.push(car(rng, 0.15));
    }
    if scene.right_car {
        out.push(car(rng, 0.85));
    }
    if rng.random_bool(0.6) {
        out.push(Detection {
            cx: 0.5 + rng.random_range(-0.05..0.05),
            cy: 0.5,
            w: 0.12,
            h: 0.1,
            class_id: 0,
        });
    }
    for _ in 0..rng.random_range(0..=3) {
        out.push(Detection {
            cx: rng.random_range(0.05..0.95),
            cy: rng.random_range(0.05..0.95),
            w: rng.random_range(0.02..0.06),
            h: rng.random_range(0.02..0.06),
            class_id: rng.random_range(1..=4),
        });
    }
    out
}

/// Gaze-x offset over time: a staircase of three saccades toward the
/// maneuver side, held until the end of the window.
fn drift_profile(rng: &mut ChaCha8Rng, label: Maneuver) -> Vec<f64> {
    let mut level = vec![0.0; SEQ_LEN];
    let amplitude = if label.is_turn() { 0.9 } else { 0.5 } * rng.random_range(0.8..1.2);
    let onset = rng.random_range(30..=120usize);
    let mut t = onset;
    for _ in 0..3 {
        for v in &mut level[t.min(SEQ_LEN)..] {
            *v += label.side() * amplitude / 3.0;
        }
        t += rng.random_range(3..=8usize);
    }
    level
}

fn generate_one(rng: &mut ChaCha8Rng, id: String, label: Maneuver, cfg: &SynthConfig) -> Result<LabeledSequence> {
    let sigma = cfg.noise_sigma;
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let n = |rng: &mut ChaCha8Rng| if sigma > 0.0 { noise.sample(rng) } else { 0.0 };

    let scene = if rng.random_bool(cfg.exterior_signal_strength) {
        informative_scene(rng, label)
    } else {
        base_scene(rng)
    };
    let objects = scene_objects(rng, &scene);

    let mut drift = if label != Maneuver::Straight && rng.random_bool(cfg.gaze_signal_strength) {
        drift_profile(rng, label)
    } else {
        vec![0.0; SEQ_LEN]
    };
    if rng.random_bool(0.4) {
        let start = rng.random_range(0..140usize);
        let len = rng.random_range(6..=15usize);
        let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let amp = rng.random_range(0.3..0.7);
        for v in &mut drift[start..(start + len).min(SEQ_LEN)] {
            *v += side * amp;
        }
    }

    let wander = Normal::new(0.0, 0.02).expect("valid sigma");
    let (hx0, hy0) = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let (mut wx, mut wy) = (0.0, 0.0);
    let mut head_follow = 0.0;
    let mut gaze = Vec::with_capacity(SEQ_LEN);
    for d in &drift {
        wx = 0.9 * wx + wander.sample(rng);
        wy = 0.9 * wy + wander.sample(rng);
        head_follow += 0.1 * (0.5 * d - head_follow);
        let hx = hx0 + head_follow + wx;
        let hy = hy0 + wy;
        gaze.push([hx + n(rng), hy + n(rng), hx + d - head_follow + n(rng), hy + n(rng)]);
    }

    let per_frame: Vec<Vec<Detection>> = (0..SEQ_LEN)
        .map(|_| {
            objects
                .iter()
                .map(|o| Detection {
                    cx: (o.cx + n(rng)).clamp(0.0, 1.0),
                    cy: (o.cy + n(rng)).clamp(0.0, 1.0),
                    w: (o.w + n(rng)).max(1e-3),
                    h: (o.h + n(rng)).max(1e-3),
                    class_id: o.class_id,
                })
                .collect()
        })
        .collect();
    let lanes = vec![scene.lanes; SEQ_LEN];
    Ok(assemble_sequence(id, &gaze, &per_frame, &lanes, label)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_distribution() {
        let cfg = SynthConfig {
            class_distribution: [0.5, 0.5, 0.5, 0.0, 0.0],
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(DatasetError::Config(_))));
    }

    #[test]
    fn rejects_strength_out_of_range() {
        let cfg = SynthConfig {
            gaze_signal_strength: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn paper_distribution_sums_to_one() {
        let p = SynthConfig::paper_distribution();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_run_has_requested_size() {
        let cfg = SynthConfig {
            n_sequences: 12,
            ..Default::default()
        };
        let m = generate_synthetic(&cfg).unwrap();
        assert_eq!(m.len(), 12);
        assert_eq!(m.class_counts.iter().sum::<usize>(), 12);
        assert!(m.sequences.iter().all(|s| s.frames.len() == SEQ_LEN));
    }
}
