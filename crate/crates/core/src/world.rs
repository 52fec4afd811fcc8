//! Planar room with a wall-mounted visual target and an egocentric raycast
//! camera.
//!
//! World frame: x east, y north, z up; heading `psi` is measured from +x,
//! counter-clockwise. The room is the square `[0, room_size]^2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl RobotPose {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            psi: wrap_angle(psi),
        }
    }

    pub fn distance_to(&self, other: &RobotPose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn yaw_error_to(&self, other: &RobotPose) -> f64 {
        wrap_angle(self.psi - other.psi).abs()
    }
}

/// Body-frame velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub v_fwd: f64,
    pub v_lat: f64,
    pub omega: f64,
}

impl Action {
    pub const ZERO: Action = Action {
        v_fwd: 0.0,
        v_lat: 0.0,
        omega: 0.0,
    };

    pub fn new(v_fwd: f64, v_lat: f64, omega: f64) -> Self {
        Self { v_fwd, v_lat, omega }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.v_fwd, self.v_lat, self.omega]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn norm(&self) -> f64 {
        (self.v_fwd * self.v_fwd + self.v_lat * self.v_lat + self.omega * self.omega).sqrt()
    }
}

/// Target position relative to the robot: range, azimuth, elevation, and the
/// yaw of the robot heading relative to the direction facing the target wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeaturePose {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
    pub gamma: f64,
}

impl FeaturePose {
    pub fn to_array(self) -> [f64; 4] {
        [self.r, self.theta, self.phi, self.gamma]
    }

    /// Relative target position in the robot frame.
    pub fn to_cartesian(&self) -> [f64; 3] {
        spherical_to_cartesian(self.r, self.theta, self.phi)
    }

    /// Robot-to-target vector expressed in the target-facing frame, so that
    /// offsets taken at different headings are directly comparable.
    pub fn target_frame_offset(&self) -> [f64; 3] {
        let [bx, by, bz] = self.to_cartesian();
        let (s, c) = self.gamma.sin_cos();
        [c * bx - s * by, s * bx + c * by, bz]
    }

    /// Distance between the camera positions at which two poses were seen.
    pub fn position_distance(&self, other: &FeaturePose) -> f64 {
        let (a, b) = (self.target_frame_offset(), other.target_frame_offset());
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    pub fn yaw_error(&self, other: &FeaturePose) -> f64 {
        wrap_angle(self.gamma - other.gamma).abs()
    }
}

pub fn spherical_to_cartesian(r: f64, theta: f64, phi: f64) -> [f64; 3] {
    [
        r * phi.cos() * theta.cos(),
        r * phi.cos() * theta.sin(),
        r * phi.sin(),
    ]
}

/// Returns `(r, theta, phi)`.
pub fn cartesian_to_spherical(p: [f64; 3]) -> (f64, f64, f64) {
    let horizontal = p[0].hypot(p[1]);
    let r = horizontal.hypot(p[2]);
    (r, wrap_angle(p[1].atan2(p[0])), p[2].atan2(horizontal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wall {
    East,
    North,
    West,
    South,
}

impl Wall {
    pub const ALL: [Wall; 4] = [Wall::East, Wall::North, Wall::West, Wall::South];

    /// Unit normal pointing into the room.
    pub fn inward_normal(self) -> [f64; 2] {
        match self {
            Wall::East => [-1.0, 0.0],
            Wall::North => [0.0, -1.0],
            Wall::West => [1.0, 0.0],
            Wall::South => [0.0, 1.0],
        }
    }

    /// Heading of a robot looking straight at this wall.
    pub fn facing_heading(self) -> f64 {
        match self {
            Wall::East => 0.0,
            Wall::North => PI / 2.0,
            Wall::West => PI,
            Wall::South => -PI / 2.0,
        }
    }

    fn color(self) -> [f64; 3] {
        match self {
            Wall::East => [0.85, 0.22, 0.18],
            Wall::North => [0.20, 0.72, 0.25],
            Wall::West => [0.18, 0.32, 0.88],
            Wall::South => [0.88, 0.80, 0.16],
        }
    }
}

pub const TARGET_COLOR: [u8; 3] = [255, 255, 255];
const FLOOR_COLOR: [f64; 3] = [0.26, 0.24, 0.22];
const CEILING_COLOR: [f64; 3] = [0.55, 0.55, 0.60];
const WALL_FADE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Side of the square room, meters.
    pub room_size: f64,
    pub room_height: f64,
    /// Minimum distance kept between the robot and any wall.
    pub wall_margin: f64,
    pub target_wall: Wall,
    /// Target center coordinate along its wall, meters.
    pub target_center: f64,
    /// Side of the square target patch, meters.
    pub target_width: f64,
    pub target_height: f64,
    pub camera_height: f64,
    /// Horizontal field of view, radians.
    pub fov: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub max_linear_speed: f64,
    pub max_yaw_rate: f64,
    pub dt: f64,
    /// Distance from the target wall of the pose at which the target view is
    /// captured.
    pub target_view_distance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            room_size: 5.0,
            room_height: 5.0,
            wall_margin: 0.1,
            target_wall: Wall::East,
            target_center: 2.5,
            target_width: 1.0,
            target_height: 1.5,
            camera_height: 1.0,
            fov: 1.21,
            image_width: 32,
            image_height: 32,
            max_linear_speed: 1.0,
            max_yaw_rate: 1.0,
            dt: 0.1,
            target_view_distance: 1.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.room_size > 2.0 * self.wall_margin) || self.wall_margin < 0.0 {
            return Err("room_size must exceed twice wall_margin".into());
        }
        if !(self.fov > 0.0 && self.fov < PI) {
            return Err("fov must be in (0, pi)".into());
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err("image dimensions must be positive".into());
        }
        if !(self.dt > 0.0) || !(self.max_linear_speed > 0.0) || !(self.max_yaw_rate > 0.0) {
            return Err("dt and velocity limits must be positive".into());
        }
        if !(self.target_width > 0.0)
            || self.target_center - self.target_width / 2.0 < 0.0
            || self.target_center + self.target_width / 2.0 > self.room_size
        {
            return Err("target patch must lie on its wall".into());
        }
        if !(self.camera_height > 0.0 && self.camera_height < self.room_height) {
            return Err("camera_height must be inside the room".into());
        }
        let view = self.target_view_distance;
        if !(view > self.wall_margin && view < self.room_size - self.wall_margin) {
            return Err("target_view_distance must keep the view pose inside the room".into());
        }
        Ok(())
    }
}

/// RGB image stored as 8-bit levels in row-major `H x W x 3` order; channel
/// values are `level / 255` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn from_raw(height: usize, width: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), height * width * 3);
        Self {
            height,
            width,
            data,
        }
    }

    /// Quantizes planar `[3, H, W]` values (clamped to `[0, 1]`).
    pub fn from_planar(height: usize, width: usize, planar: &[f64]) -> Self {
        assert_eq!(planar.len(), 3 * height * width);
        let plane = height * width;
        let mut data = vec![0u8; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                data[i * 3 + c] = to_level(planar[c * plane + i]);
            }
        }
        Self::from_raw(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [
            self.data[i] as f64 / 255.0,
            self.data[i + 1] as f64 / 255.0,
            self.data[i + 2] as f64 / 255.0,
        ]
    }

    pub fn is_target_pixel(&self, row: usize, col: usize) -> bool {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3] == TARGET_COLOR
    }

    /// Values as planar `[3, H, W]`, the layout consumed by the networks.
    pub fn to_planar(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                out[c * plane + i] = self.data[i * 3 + c] as f64 / 255.0;
            }
        }
        out
    }

    pub fn target_pixel_count(&self) -> usize {
        self.data.chunks(3).filter(|p| *p == TARGET_COLOR).count()
    }

    /// Columns containing at least one target pixel.
    pub fn target_columns(&self) -> Vec<usize> {
        (0..self.width)
            .filter(|&c| (0..self.height).any(|r| self.is_target_pixel(r, c)))
            .collect()
    }
}

fn to_level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub pose: RobotPose,
    /// The applied action is this clamped command.
    pub action: Action,
    pub action_clamped: bool,
    pub position_clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RayHit {
    distance: f64,
    wall: Wall,
    along: f64,
}

/// The simulator. All methods are pure functions of their arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    cfg: WorldConfig,
    focal: f64,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Self {
        let focal = (cfg.image_width as f64 / 2.0) / (cfg.fov / 2.0).tan();
        Self { cfg, focal }
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    /// Focal length in pixels.
    pub fn focal_length(&self) -> f64 {
        self.focal
    }

    pub fn target_center(&self) -> [f64; 3] {
        let (s, c, h) = (self.cfg.room_size, self.cfg.target_center, self.cfg.target_height);
        match self.cfg.target_wall {
            Wall::East => [s, c, h],
            Wall::North => [c, s, h],
            Wall::West => [0.0, c, h],
            Wall::South => [c, 0.0, h],
        }
    }

    /// Pose on the target normal, `target_view_distance` from the wall,
    /// looking at the target.
    pub fn target_view_pose(&self) -> RobotPose {
        let [tx, ty, _] = self.target_center();
        let n = self.cfg.target_wall.inward_normal();
        let d = self.cfg.target_view_distance;
        RobotPose::new(tx + n[0] * d, ty + n[1] * d, self.cfg.target_wall.facing_heading())
    }

    pub fn clamp_action(&self, a: Action) -> (Action, bool) {
        let (vl, vw) = (self.cfg.max_linear_speed, self.cfg.max_yaw_rate);
        let c = Action::new(
            a.v_fwd.clamp(-vl, vl),
            a.v_lat.clamp(-vl, vl),
            a.omega.clamp(-vw, vw),
        );
        (c, c != a)
    }

    fn clamp_position(&self, x: f64, y: f64) -> (f64, f64, bool) {
        let (lo, hi) = (self.cfg.wall_margin, self.cfg.room_size - self.cfg.wall_margin);
        let (cx, cy) = (x.clamp(lo, hi), y.clamp(lo, hi));
        (cx, cy, cx != x || cy != y)
    }

    /// Integrates a body-frame velocity command for `dt` seconds.
    pub fn step(&self, pose: RobotPose, action: Action, dt: f64) -> StepOutcome {
        let (a, action_clamped) = self.clamp_action(action);
        let (s, c) = pose.psi.sin_cos();
        let vx = a.v_fwd * c - a.v_lat * s;
        let vy = a.v_fwd * s + a.v_lat * c;
        let (x, y, position_clamped) = self.clamp_position(pose.x + vx * dt, pose.y + vy * dt);
        StepOutcome {
            pose: RobotPose {
                x,
                y,
                psi: wrap_angle(pose.psi + a.omega * dt),
            },
            action: a,
            action_clamped,
            position_clamped,
        }
    }

    /// Heading offset (left positive) of the ray through column `col`.
    pub fn column_angle(&self, col: usize) -> f64 {
        let u = (self.cfg.image_width as f64 / 2.0 - (col as f64 + 0.5)) / self.focal;
        u.atan()
    }

    fn cast(&self, x: f64, y: f64, angle: f64) -> RayHit {
        let s = self.cfg.room_size;
        let (dy, dx) = angle.sin_cos();
        let mut best = RayHit {
            distance: f64::INFINITY,
            wall: Wall::East,
            along: 0.0,
        };
        let mut consider = |t: f64, wall: Wall, along: f64| {
            if t > 0.0 && t < best.distance {
                best = RayHit {
                    distance: t,
                    wall,
                    along,
                };
            }
        };
        if dx > 0.0 {
            let t = (s - x) / dx;
            consider(t, Wall::East, y + t * dy);
        } else if dx < 0.0 {
            let t = -x / dx;
            consider(t, Wall::West, y + t * dy);
        }
        if dy > 0.0 {
            let t = (s - y) / dy;
            consider(t, Wall::North, x + t * dx);
        } else if dy < 0.0 {
            let t = -y / dy;
            consider(t, Wall::South, x + t * dx);
        }
        best
    }

    /// Egocentric camera image at `pose`.
    pub fn render(&self, pose: &RobotPose) -> Image {
        let (h, w) = (self.cfg.image_height, self.cfg.image_width);
        let half_target = self.cfg.target_width / 2.0;
        let mut data = vec![0u8; h * w * 3];
        let floor = FLOOR_COLOR.map(to_level);
        let ceiling = CEILING_COLOR.map(to_level);
        for col in 0..w {
            let rel = self.column_angle(col);
            let hit = self.cast(pose.x, pose.y, pose.psi + rel);
            let depth = hit.distance * rel.cos();
            let fade = 1.0 / (1.0 + WALL_FADE * hit.distance);
            let wall = hit.wall.color().map(|c| to_level(c * fade));
            let on_target_wall = hit.wall == self.cfg.target_wall
                && (hit.along - self.cfg.target_center).abs() <= half_target;
            for row in 0..h {
                let v = (h as f64 / 2.0 - (row as f64 + 0.5)) / self.focal;
                let z = self.cfg.camera_height + v * depth;
                let px = if z < 0.0 {
                    floor
                } else if z > self.cfg.room_height {
                    ceiling
                } else if on_target_wall && (z - self.cfg.target_height).abs() <= half_target {
                    TARGET_COLOR
                } else {
                    wall
                };
                let i = (row * w + col) * 3;
                data[i..i + 3].copy_from_slice(&px);
            }
        }
        Image::from_raw(h, w, data)
    }

    /// Exact relative pose of the target center in the robot frame.
    pub fn feature_pose(&self, pose: &RobotPose) -> FeaturePose {
        let [tx, ty, tz] = self.target_center();
        let (dx, dy, dz) = (tx - pose.x, ty - pose.y, tz - self.cfg.camera_height);
        let (s, c) = pose.psi.sin_cos();
        let body = [c * dx + s * dy, -s * dx + c * dy, dz];
        let (r, theta, phi) = cartesian_to_spherical(body);
        FeaturePose {
            r,
            theta,
            phi,
            gamma: wrap_angle(pose.psi - self.cfg.target_wall.facing_heading()),
        }
    }

    /// Minus the 3-D distance between camera and target center.
    pub fn reward(&self, pose: &RobotPose) -> f64 {
        let [tx, ty, tz] = self.target_center();
        let (dx, dy, dz) = (tx - pose.x, ty - pose.y, tz - self.cfg.camera_height);
        -(dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// True when the target patch is rendered in the camera image at `pose`.
    pub fn target_visible(&self, pose: &RobotPose) -> bool {
        self.render(pose).target_pixel_count() > 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        World::new(WorldConfig::default())
    }

    #[test]
    fn step_examples() {
        let w = World::new(WorldConfig {
            max_yaw_rate: 2.0,
            ..WorldConfig::default()
        });
        let p = RobotPose::new(1.0, 1.0, 0.0);
        assert_eq!(w.step(p, Action::ZERO, 0.1).pose, p);
        let out = w.step(p, Action::new(1.0, 0.0, 0.0), 1.0);
        assert_eq!(out.pose, RobotPose::new(2.0, 1.0, 0.0));
        assert!(!out.action_clamped && !out.position_clamped);
        let out = w.step(p, Action::new(0.0, 0.0, PI / 2.0), 1.0);
        assert_eq!(out.pose, RobotPose::new(1.0, 1.0, PI / 2.0));
    }

    #[test]
    fn step_clamps_actions_and_walls() {
        let w = world();
        let out = w.step(RobotPose::new(1.0, 1.0, 0.0), Action::new(3.0, 0.0, -5.0), 0.1);
        assert!(out.action_clamped);
        assert_eq!(out.action, Action::new(1.0, 0.0, -1.0));
        let out = w.step(RobotPose::new(4.95, 1.0, 0.0), Action::new(1.0, 0.0, 0.0), 1.0);
        assert!(out.position_clamped);
        assert_eq!(out.pose.x, 5.0 - w.config().wall_margin);
    }

    #[test]
    fn lateral_velocity_is_body_frame() {
        let w = world();
        let out = w.step(RobotPose::new(2.0, 2.0, PI / 2.0), Action::new(0.0, 1.0, 0.0), 0.5);
        assert!((out.pose.x - 1.5).abs() < 1e-12);
        assert!((out.pose.y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn feature_pose_on_normal() {
        let w = World::new(WorldConfig {
            target_height: 1.0,
            ..WorldConfig::default()
        });
        let fp = w.feature_pose(&RobotPose::new(3.0, 2.5, 0.0));
        assert!((fp.r - 2.0).abs() < 1e-12);
        assert_eq!(fp.theta, 0.0);
        assert_eq!(fp.phi, 0.0);
        assert_eq!(fp.gamma, 0.0);
    }

    #[test]
    fn feature_pose_elevation_and_lateral() {
        let w = world();
        let fp = w.feature_pose(&RobotPose::new(3.0, 2.5, 0.0));
        assert!((fp.phi - 0.5f64.atan2(2.0)).abs() < 1e-12);
        let fp = w.feature_pose(&RobotPose::new(3.0, 1.7, 0.0));
        assert!((fp.theta - 0.8f64.atan2(2.0)).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        let w = World::new(WorldConfig {
            target_height: 1.0,
            ..WorldConfig::default()
        });
        assert!((w.reward(&RobotPose::new(3.0, 2.5, 1.0)) + 2.0).abs() < 1e-12);
        let w = world();
        let near = w.reward(&RobotPose::new(4.0, 2.5, 0.0));
        let far = w.reward(&RobotPose::new(2.0, 2.5, 0.0));
        assert!(near > far);
    }

    #[test]
    fn facing_away_sees_no_target() {
        let w = world();
        let img = w.render(&RobotPose::new(3.0, 2.5, PI));
        assert_eq!(img.target_pixel_count(), 0);
        assert!(w.render(&RobotPose::new(3.0, 2.5, 0.0)).target_pixel_count() > 0);
    }

    #[test]
    fn planar_round_trip() {
        let w = world();
        let img = w.render(&RobotPose::new(1.3, 3.2, 0.4));
        let back = Image::from_planar(img.height(), img.width(), &img.to_planar());
        assert_eq!(img, back);
    }
}
