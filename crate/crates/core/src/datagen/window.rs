use super::{discounted_return, TrajectoryRecord};
use crate::world::Action;

/// Fixed-length slice of an episode. Frames past the episode end repeat the
/// final frame with zero actions, i.e. the robot holds the target view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub record: usize,
    pub start: usize,
    /// Number of frames (`N + 1`).
    pub frames: usize,
}

impl Window {
    /// Index into the episode's per-frame channels for window column `k`.
    pub fn frame(&self, rec: &TrajectoryRecord, k: usize) -> usize {
        (self.start + k).min(rec.len())
    }

    /// Action moving column `k` to column `k + 1`.
    pub fn action(&self, rec: &TrajectoryRecord, k: usize) -> Action {
        rec.actions.get(self.start + k).copied().unwrap_or(Action::ZERO)
    }

    pub fn rewards(&self, rec: &TrajectoryRecord) -> Vec<f64> {
        (0..self.frames).map(|k| rec.rewards[self.frame(rec, k)]).collect()
    }

    /// Discounted return of this window's own rewards.
    pub fn discounted_return(&self, rec: &TrajectoryRecord, discount: f64) -> f64 {
        discounted_return(&self.rewards(rec), discount)
    }
}

/// Window start offsets `0, stride, 2*stride, ...` up to and including the
/// final frame of an episode with `len` actions.
pub fn window_starts(len: usize, stride: usize) -> impl Iterator<Item = usize> {
    let stride = stride.max(1);
    let mut starts: Vec<usize> = (0..=len).step_by(stride).collect();
    if *starts.last().unwrap() != len {
        starts.push(len);
    }
    starts.into_iter()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{FeaturePose, Image, RobotPose};

    fn record(len: usize) -> TrajectoryRecord {
        let img = Image::from_raw(1, 1, vec![0, 0, 0]);
        let fp = FeaturePose {
            r: 1.0,
            theta: 0.0,
            phi: 0.0,
            gamma: 0.0,
        };
        TrajectoryRecord {
            seed: 1,
            images: vec![img; len + 1],
            feature_poses: vec![fp; len + 1],
            actions: (0..len).map(|i| Action::new(i as f64, 0.0, 0.0)).collect(),
            rewards: (0..=len).map(|i| -(i as f64)).collect(),
            poses: vec![RobotPose::new(1.0, 1.0, 0.0); len + 1],
            raw_return: 0.0,
            norm_return: 0.0,
            arrived: true,
        }
    }

    #[test]
    fn padding_repeats_last_frame_with_zero_action() {
        let rec = record(3);
        let w = Window {
            record: 0,
            start: 2,
            frames: 4,
        };
        let frames: Vec<usize> = (0..4).map(|k| w.frame(&rec, k)).collect();
        assert_eq!(frames, vec![2, 3, 3, 3]);
        assert_eq!(w.action(&rec, 0), Action::new(2.0, 0.0, 0.0));
        assert_eq!(w.action(&rec, 1), Action::ZERO);
        assert_eq!(w.rewards(&rec), vec![-2.0, -3.0, -3.0, -3.0]);
        assert_eq!(w.discounted_return(&rec, 0.5), -2.0 - 1.5 - 0.75 - 0.375);
    }

    #[test]
    fn starts_cover_the_final_frame() {
        assert_eq!(window_starts(7, 3).collect::<Vec<_>>(), vec![0, 3, 6, 7]);
        assert_eq!(window_starts(6, 3).collect::<Vec<_>>(), vec![0, 3, 6]);
        assert_eq!(window_starts(0, 4).collect::<Vec<_>>(), vec![0]);
    }
}
