//! Learnable static and dynamic code grids and their temporal sampling.
//!
//! Static codes sit on sparse timeline anchors and a frame's static code is the
//! distance-weighted blend of the two adjacent anchors. Dynamic codes are
//! resampled to the video length by endpoint-aligned linear interpolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Standard deviation of the normal initialization of both grids.
pub const CODE_INIT_STD: f64 = 0.02;

/// Video length and code counts along the timeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineConfig {
    pub frames: usize,
    pub static_codes: usize,
    pub dynamic_codes: usize,
}

impl TimelineConfig {
    pub fn new(frames: usize, static_codes: usize, dynamic_codes: usize) -> Result<Self> {
        let timeline = Self {
            frames,
            static_codes,
            dynamic_codes,
        };
        timeline.validate()?;
        Ok(timeline)
    }

    /// Builds the timeline from the static factor `T_f`, with one extra code on the last frame.
    pub fn from_static_factor(
        frames: usize,
        static_factor: usize,
        dynamic_codes: usize,
    ) -> Result<Self> {
        Self::new(frames, static_factor + 1, dynamic_codes)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            frames,
            static_codes,
            dynamic_codes,
        } = *self;
        if frames < 2 {
            return Err(Error::DegenerateTimeline(format!(
                "need at least 2 frames, got {frames}"
            )));
        }
        if static_codes < 2 || static_codes > frames {
            return Err(Error::DegenerateTimeline(format!(
                "static code count {static_codes} must lie in [2, {frames}]"
            )));
        }
        if dynamic_codes < 1 || dynamic_codes > frames {
            return Err(Error::DegenerateTimeline(format!(
                "dynamic code count {dynamic_codes} must lie in [1, {frames}]"
            )));
        }
        static_anchor_positions(self).map(|_| ())
    }

    /// `z_s = floor(T / l_s)`.
    pub fn static_interval(&self) -> usize {
        self.frames / self.static_codes
    }

    /// `T_f = l_s - 1`.
    pub fn static_factor(&self) -> usize {
        self.static_codes - 1
    }
}

/// Frame positions of the static codes.
///
/// Anchor `i` sits at `i * (z_s + 1)` and the final anchor is pinned to the last
/// frame. Coinciding anchors mean the code count is too large for the video.
pub fn static_anchor_positions(timeline: &TimelineConfig) -> Result<Vec<usize>> {
    let last = timeline.frames - 1;
    let step = timeline.static_interval() + 1;
    let count = timeline.static_codes;
    let mut anchors: Vec<usize> = (0..count - 1).map(|i| (i * step).min(last)).collect();
    anchors.push(last);
    if let Some(w) = anchors.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::DegenerateTimeline(format!(
            "{count} static codes over {} frames place two anchors at frame {}",
            timeline.frames, w[1]
        )));
    }
    Ok(anchors)
}

/// The two anchors contributing to a frame's static code and their weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaticBlend<T> {
    pub i: usize,
    pub j: usize,
    pub w_i: T,
    pub w_j: T,
}

/// Endpoint-aligned linear interpolation position on the dynamic grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicBlend<T> {
    pub lo: usize,
    pub hi: usize,
    pub frac: T,
}

fn check_index(t: f64, frames: usize) -> Result<()> {
    if !(t.is_finite() && t >= 0.0 && t <= (frames - 1) as f64) {
        return Err(Error::IndexOutOfRange { index: t, frames });
    }
    Ok(())
}

/// Weights of the two anchors bracketing `t`.
pub fn static_blend<T: Real>(anchors: &[usize], frames: usize, t: f64) -> Result<StaticBlend<T>> {
    check_index(t, frames)?;
    let n = anchors.len();
    assert!(n >= 2 && anchors[0] == 0 && anchors[n - 1] == frames - 1);
    let i = anchors
        .iter()
        .rposition(|&p| p as f64 <= t)
        .expect("first anchor is frame 0")
        .min(n - 2);
    let j = i + 1;
    let dis_i = T::lit((t - anchors[i] as f64).abs());
    let dis_j = T::lit((t - anchors[j] as f64).abs());
    let total = dis_i + dis_j;
    Ok(StaticBlend {
        i,
        j,
        w_i: dis_j / total,
        w_j: dis_i / total,
    })
}

pub fn dynamic_blend<T: Real>(
    dynamic_codes: usize,
    frames: usize,
    t: f64,
) -> Result<DynamicBlend<T>> {
    check_index(t, frames)?;
    let pos = t * (dynamic_codes - 1) as f64 / (frames - 1) as f64;
    let lo = (pos.floor() as usize).min(dynamic_codes - 1);
    let hi = (lo + 1).min(dynamic_codes - 1);
    let frac = if hi == lo { 0.0 } else { pos - lo as f64 };
    Ok(DynamicBlend {
        lo,
        hi,
        frac: T::lit(frac),
    })
}

fn blend_into<T: Real>(a: &[T], wa: T, b: &[T], wb: T, out: &mut [T]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = wa * x + wb * y;
    }
}

/// Spatial shape `(h, w, dim)` of one code.
pub type CodeShape = (usize, usize, usize);

/// Static code grid `[l_s, h_s, w_s, dim_s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticCodes<T> {
    pub grid: Tensor<T>,
    pub timeline: TimelineConfig,
    anchors: Vec<usize>,
}

impl<T: Real> StaticCodes<T> {
    pub fn new(grid: Tensor<T>, timeline: TimelineConfig) -> Result<Self> {
        timeline.validate()?;
        if grid.shape().len() != 4 || grid.shape()[0] != timeline.static_codes {
            return Err(Error::ShapeMismatch(format!(
                "static grid {:?} does not hold {} codes",
                grid.shape(),
                timeline.static_codes
            )));
        }
        let anchors = static_anchor_positions(&timeline)?;
        Ok(Self {
            grid,
            timeline,
            anchors,
        })
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn code_shape(&self) -> CodeShape {
        let s = self.grid.shape();
        (s[1], s[2], s[3])
    }

    pub fn blend(&self, t: f64) -> Result<StaticBlend<T>> {
        static_blend(&self.anchors, self.timeline.frames, t)
    }

    /// Static code for frame `t` in `[h_s, w_s, dim_s]` layout.
    pub fn sample(&self, t: f64) -> Result<Tensor<T>> {
        let blend = self.blend(t)?;
        let (h, w, d) = self.code_shape();
        let mut out = Tensor::zeros(&[h, w, d]);
        blend_into(
            self.grid.slice(blend.i),
            blend.w_i,
            self.grid.slice(blend.j),
            blend.w_j,
            out.data_mut(),
        );
        Ok(out)
    }

    /// Adds the gradient of a sampled code back onto the grid.
    pub fn accumulate_grad(blend: &StaticBlend<T>, d_code: &[T], grad_grid: &mut Tensor<T>) {
        for (g, &d) in grad_grid.slice_mut(blend.i).iter_mut().zip(d_code) {
            *g += blend.w_i * d;
        }
        for (g, &d) in grad_grid.slice_mut(blend.j).iter_mut().zip(d_code) {
            *g += blend.w_j * d;
        }
    }
}

/// Dynamic code grid `[l_d, h_d, w_d, dim_d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicCodes<T> {
    pub grid: Tensor<T>,
    pub timeline: TimelineConfig,
}

impl<T: Real> DynamicCodes<T> {
    pub fn new(grid: Tensor<T>, timeline: TimelineConfig) -> Result<Self> {
        timeline.validate()?;
        if grid.shape().len() != 4 || grid.shape()[0] != timeline.dynamic_codes {
            return Err(Error::ShapeMismatch(format!(
                "dynamic grid {:?} does not hold {} codes",
                grid.shape(),
                timeline.dynamic_codes
            )));
        }
        Ok(Self { grid, timeline })
    }

    pub fn code_shape(&self) -> CodeShape {
        let s = self.grid.shape();
        (s[1], s[2], s[3])
    }

    pub fn blend(&self, t: f64) -> Result<DynamicBlend<T>> {
        dynamic_blend(self.timeline.dynamic_codes, self.timeline.frames, t)
    }

    /// Dynamic code for frame `t`, computed directly from its two grid neighbours.
    pub fn sample(&self, t: f64) -> Result<Tensor<T>> {
        let blend = self.blend(t)?;
        let (h, w, d) = self.code_shape();
        let mut out = Tensor::zeros(&[h, w, d]);
        blend_into(
            self.grid.slice(blend.lo),
            T::one() - blend.frac,
            self.grid.slice(blend.hi),
            blend.frac,
            out.data_mut(),
        );
        Ok(out)
    }

    /// The grid resampled to one code per frame, `[T, h_d, w_d, dim_d]`.
    pub fn interpolate(&self) -> Tensor<T> {
        let frames = self.timeline.frames;
        let (h, w, d) = self.code_shape();
        let mut out = Tensor::zeros(&[frames, h, w, d]);
        for t in 0..frames {
            let blend = self.blend(t as f64).expect("integer frame in range");
            blend_into(
                self.grid.slice(blend.lo),
                T::one() - blend.frac,
                self.grid.slice(blend.hi),
                blend.frac,
                out.slice_mut(t),
            );
        }
        out
    }

    pub fn accumulate_grad(blend: &DynamicBlend<T>, d_code: &[T], grad_grid: &mut Tensor<T>) {
        let w_lo = T::one() - blend.frac;
        for (g, &d) in grad_grid.slice_mut(blend.lo).iter_mut().zip(d_code) {
            *g += w_lo * d;
        }
        if blend.hi != blend.lo {
            for (g, &d) in grad_grid.slice_mut(blend.hi).iter_mut().zip(d_code) {
                *g += blend.frac * d;
            }
        }
    }
}

/// Static and dynamic codes sampled for one frame.
#[derive(Clone, Debug)]
pub struct SampledCodePair<T> {
    pub static_code: Tensor<T>,
    pub dynamic_code: Tensor<T>,
    pub static_blend: StaticBlend<T>,
    pub dynamic_blend: DynamicBlend<T>,
    pub t: f64,
}

pub fn sample_pair<T: Real>(
    statics: &StaticCodes<T>,
    dynamics: &DynamicCodes<T>,
    t: f64,
) -> Result<SampledCodePair<T>> {
    Ok(SampledCodePair {
        static_code: statics.sample(t)?,
        dynamic_code: dynamics.sample(t)?,
        static_blend: statics.blend(t)?,
        dynamic_blend: dynamics.blend(t)?,
        t,
    })
}

/// Draws both grids i.i.d. from `N(0, 0.02²)`; deterministic in `seed`.
pub fn init_codes<T: Real>(
    timeline: TimelineConfig,
    static_shape: CodeShape,
    dynamic_shape: CodeShape,
    seed: u64,
) -> Result<(StaticCodes<T>, DynamicCodes<T>)> {
    for (h, w, d) in [static_shape, dynamic_shape] {
        if h == 0 || w == 0 || d == 0 {
            return Err(Error::ShapeMismatch(format!(
                "code shape {h}x{w}x{d} has a zero dimension"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, CODE_INIT_STD).expect("valid std");
    let mut draw = |count: usize, shape: CodeShape| {
        let dims = [count, shape.0, shape.1, shape.2];
        let data = (0..dims.iter().product::<usize>())
            .map(|_| T::lit(normal.sample(&mut rng)))
            .collect();
        Tensor::from_vec(&dims, data).expect("sized to shape")
    };
    let static_grid = draw(timeline.static_codes, static_shape);
    let dynamic_grid = draw(timeline.dynamic_codes, dynamic_shape);
    Ok((
        StaticCodes::new(static_grid, timeline)?,
        DynamicCodes::new(dynamic_grid, timeline)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(shape: [usize; 4], f: impl Fn(usize) -> f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(&shape, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn anchors_for_twelve_frames() {
        let tl = TimelineConfig::from_static_factor(12, 3, 6).unwrap();
        assert_eq!(tl.static_interval(), 3);
        assert_eq!(static_anchor_positions(&tl).unwrap(), vec![0, 4, 8, 11]);
    }

    #[test]
    fn anchors_for_two_frames() {
        let tl = TimelineConfig::new(2, 2, 1).unwrap();
        assert_eq!(static_anchor_positions(&tl).unwrap(), vec![0, 1]);
    }

    #[test]
    fn anchors_for_bunny_timeline() {
        let tl = TimelineConfig::from_static_factor(132, 12, 66).unwrap();
        assert_eq!(tl.static_codes, 13);
        assert_eq!(tl.static_interval(), 10);
        let mut expect: Vec<usize> = (0..12).map(|i| i * 11).collect();
        expect.push(131);
        assert_eq!(static_anchor_positions(&tl).unwrap(), expect);
    }

    #[test]
    fn crowded_anchors_are_rejected() {
        // z_s = 1, spacing 2: anchors 0,2,4,6,8,9,9 collide.
        let err = TimelineConfig::new(10, 7, 2).unwrap_err();
        assert!(matches!(err, Error::DegenerateTimeline(_)));
        assert!(TimelineConfig::new(1, 2, 1).is_err());
        assert!(TimelineConfig::new(8, 1, 1).is_err());
        assert!(TimelineConfig::new(8, 2, 9).is_err());
    }

    #[test]
    fn static_weights_by_hand() {
        let b = static_blend::<f64>(&[0, 4, 8, 11], 12, 1.0).unwrap();
        assert_eq!((b.i, b.j), (0, 1));
        assert_eq!((b.w_i, b.w_j), (0.75, 0.25));
        let mid = static_blend::<f64>(&[0, 4, 8, 11], 12, 6.0).unwrap();
        assert_eq!((mid.w_i, mid.w_j), (0.5, 0.5));
    }

    #[test]
    fn anchor_hit_returns_stored_code() {
        let tl = TimelineConfig::new(12, 4, 3).unwrap();
        let codes = StaticCodes::new(grid([4, 2, 2, 3], |i| (i as f64 * 0.37).sin()), tl).unwrap();
        for (k, &p) in codes.anchors().iter().enumerate() {
            let s = codes.sample(p as f64).unwrap();
            assert_eq!(s.data(), codes.grid.slice(k));
        }
        let last = codes.blend(11.0).unwrap();
        assert_eq!((last.i, last.j, last.w_i, last.w_j), (2, 3, 0.0, 1.0));
    }

    #[test]
    fn out_of_range_index() {
        let tl = TimelineConfig::new(12, 4, 3).unwrap();
        let (s, d) = init_codes::<f64>(tl, (1, 1, 1), (1, 1, 1), 0).unwrap();
        assert!(matches!(s.sample(12.0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(d.sample(-0.5), Err(Error::IndexOutOfRange { .. })));
        assert!(d.sample(f64::NAN).is_err());
    }

    #[test]
    fn interpolation_identity_when_one_code_per_frame() {
        let tl = TimelineConfig::new(5, 2, 5).unwrap();
        let codes = DynamicCodes::new(grid([5, 2, 1, 2], |i| i as f64 * 1.3 - 4.0), tl).unwrap();
        assert_eq!(codes.interpolate(), codes.grid);
    }

    #[test]
    fn interpolation_midpoint_of_two_codes() {
        let tl = TimelineConfig::new(3, 2, 2).unwrap();
        let codes = DynamicCodes::new(
            grid([2, 1, 1, 3], |i| [1.0, 2.0, 3.0, 5.0, 8.0, 13.0][i]),
            tl,
        )
        .unwrap();
        assert_eq!(codes.interpolate().slice(1), &[3.0, 5.0, 8.0]);
    }

    #[test]
    fn interpolation_three_codes_over_five_frames() {
        let tl = TimelineConfig::new(5, 2, 3).unwrap();
        let (a, b, c) = (1.0, -3.0, 10.0);
        let codes = DynamicCodes::new(grid([3, 1, 1, 1], |i| [a, b, c][i]), tl).unwrap();
        let up = codes.interpolate();
        assert_eq!(up.data(), &[a, (a + b) / 2.0, b, (b + c) / 2.0, c]);
        assert_eq!(codes.sample(0.0).unwrap().data(), &[a]);
        assert_eq!(codes.sample(4.0).unwrap().data(), &[c]);
    }

    #[test]
    fn init_is_seeded_and_small() {
        let tl = TimelineConfig::new(10, 2, 10).unwrap();
        let (s1, d1) = init_codes::<f64>(tl, (10, 10, 500), (4, 4, 4), 7).unwrap();
        let (s2, d2) = init_codes::<f64>(tl, (10, 10, 500), (4, 4, 4), 7).unwrap();
        let (s3, _) = init_codes::<f64>(tl, (10, 10, 500), (4, 4, 4), 8).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(d1, d2);
        assert_ne!(s1.grid, s3.grid);
        let data = s1.grid.data();
        assert_eq!(data.len(), 100_000);
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        assert!(mean.abs() < 3.0 * 0.02 / (1e5f64).sqrt());
        assert!(init_codes::<f64>(tl, (0, 1, 1), (1, 1, 1), 0).is_err());
    }
}
