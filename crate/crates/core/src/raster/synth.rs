//! Synthetic water-body scenes.
//!
//! Three archetypes are drawn: dam reservoirs (a triangular basin closed by a
//! straight, concrete-coloured wall at a multiple of 45 degrees), rounded
//! lakes and sinuous rivers. Dam and natural water share one colour
//! distribution, so shape and the wall are the only class cues.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BBox, LabelMask, Raster, DAM, LAND, NATURAL};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Smallest area a generated body may have, in pixels.
pub const MIN_BODY_AREA: usize = 200;
const MAX_ATTEMPTS: usize = 200;
/// Chebyshev clearance kept between bodies so that a 2 px dilation of both
/// neighbours still leaves them disconnected.
const CLEARANCE: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyKind {
    Dam,
    Lake,
    River,
}

impl BodyKind {
    /// Class value in a 3-class mask.
    pub fn mask_class(self) -> u8 {
        match self {
            BodyKind::Dam => DAM,
            BodyKind::Lake | BodyKind::River => NATURAL,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeMix {
    pub dam: f64,
    pub lake: f64,
    pub river: f64,
}

impl Default for ShapeMix {
    fn default() -> Self {
        ShapeMix {
            dam: 0.5,
            lake: 0.3,
            river: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub num_bodies: usize,
    pub shape_mix: ShapeMix,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise_level: f64,
    /// Probability that a body's mask outline is eroded or dilated by 1-2 px
    /// relative to the rendered water.
    pub contour_jitter: f64,
    pub cloud_probability: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 64,
            height: 64,
            num_bodies: 2,
            shape_mix: ShapeMix::default(),
            noise_level: 0.03,
            contour_jitter: 0.25,
            cloud_probability: 0.1,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ShapeMix { dam, lake, river } = self.shape_mix;
        for (name, p) in [
            ("shape_mix.dam", dam),
            ("shape_mix.lake", lake),
            ("shape_mix.river", river),
            ("contour_jitter", self.contour_jitter),
            ("cloud_probability", self.cloud_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidSpec(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if ((dam + lake + river) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!(
                "shape_mix sums to {}, expected 1",
                dam + lake + river
            )));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise_level = {}", self.noise_level)));
        }
        if self.width < 32 || self.height < 32 {
            return Err(Error::InvalidSpec(format!(
                "scene {}x{} is smaller than 32x32",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Ground-truth description of one generated body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyRecord {
    pub kind: BodyKind,
    /// Value of the body in the 3-class mask (1 natural, 2 dam).
    pub class: u8,
    pub bbox: BBox,
    pub area: usize,
}

struct Body {
    kind: BodyKind,
    /// Pixels rendered as water.
    water: Vec<usize>,
    /// Pixels rendered as dam wall (land in the mask).
    wall: Vec<usize>,
    /// Pixels labelled as water in the mask.
    label: Vec<usize>,
    color: [f64; 3],
}

#[derive(Clone, Copy)]
struct Canvas {
    width: usize,
    height: usize,
}

impl Canvas {
    /// Calls `f(index, x, y)` for every pixel whose centre lies in the
    /// (clipped) bounding box `[x0, x1] x [y0, y1]`.
    fn scan(&self, x0: f64, y0: f64, x1: f64, y1: f64, mut f: impl FnMut(usize, f64, f64)) {
        let c0 = x0.floor().max(0.0) as usize;
        let r0 = y0.floor().max(0.0) as usize;
        let c1 = (x1.ceil().max(0.0) as usize).min(self.width - 1);
        let r1 = (y1.ceil().max(0.0) as usize).min(self.height - 1);
        if x1 < 0.0 || y1 < 0.0 || c0 >= self.width || r0 >= self.height {
            return;
        }
        for r in r0..=r1 {
            for c in c0..=c1 {
                f(r * self.width + c, c as f64 + 0.5, r as f64 + 0.5);
            }
        }
    }
}

fn point_in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

fn water_color(rng: &mut Rng) -> [f64; 3] {
    let turbidity = rng.random_range(-0.04..0.06);
    [
        0.08 + turbidity,
        0.20 + turbidity * 1.2,
        0.40 + rng.random_range(-0.05..0.05),
    ]
}

fn draw_dam(canvas: Canvas, rng: &mut Rng) -> Option<Body> {
    // inward normal at a multiple of 45 degrees; the wall runs perpendicular
    let octant = rng.random_range(0..8u32);
    let theta = f64::from(octant) * std::f64::consts::FRAC_PI_4;
    let (vx, vy) = (theta.cos(), theta.sin());
    let (ux, uy) = (-vy, vx);
    let len = rng.random_range(16.0..28.0);
    let depth = rng.random_range(18.0..28.0);
    let apex = rng.random_range(-len / 6.0..len / 6.0);
    let shoulder_r = rng.random_range(0.45..0.7);
    let shoulder_l = rng.random_range(0.45..0.7);
    let local = [
        (-len / 2.0, 0.0),
        (len / 2.0, 0.0),
        (len / 2.0 * shoulder_r + apex * 0.5, depth * 0.5),
        (apex, depth),
        (-len / 2.0 * shoulder_l + apex * 0.5, depth * 0.5),
    ];
    let margin = 3.0;
    let mx = rng.random_range(margin..canvas.width as f64 - margin);
    let my = rng.random_range(margin..canvas.height as f64 - margin);
    let to_world = |(s, t): (f64, f64)| (mx + s * ux + t * vx, my + s * uy + t * vy);
    let poly: Vec<(f64, f64)> = local.iter().copied().map(to_world).collect();
    // both wall ends must be inside the scene so the straight edge is visible
    for p in &poly[..2] {
        if p.0 < 1.0 || p.1 < 1.0 || p.0 > canvas.width as f64 - 1.0 || p.1 > canvas.height as f64 - 1.0
        {
            return None;
        }
    }
    let (x0, x1) = poly.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (y0, y1) = poly.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let mut water = Vec::new();
    let mut wall = Vec::new();
    canvas.scan(x0 - 4.0, y0 - 4.0, x1 + 4.0, y1 + 4.0, |i, x, y| {
        let (dx, dy) = (x - mx, y - my);
        let s = dx * ux + dy * uy;
        let t = dx * vx + dy * vy;
        if point_in_polygon(x, y, &poly) {
            water.push(i);
        } else if (-2.4..0.0).contains(&t) && s.abs() <= len / 2.0 + 1.5 {
            wall.push(i);
        }
    });
    Some(Body {
        kind: BodyKind::Dam,
        label: water.clone(),
        water,
        wall,
        color: water_color(rng),
    })
}

fn draw_lake(canvas: Canvas, rng: &mut Rng) -> Option<Body> {
    let radius = rng.random_range(9.0..13.5);
    let aspect = rng.random_range(0.7..1.0);
    let rot = rng.random_range(0.0..std::f64::consts::PI);
    let (a2, p2) = (rng.random_range(0.0..0.12), rng.random_range(0.0..6.3));
    let (a3, p3) = (rng.random_range(0.0..0.08), rng.random_range(0.0..6.3));
    let cx = rng.random_range(radius * 0.6..canvas.width as f64 - radius * 0.6);
    let cy = rng.random_range(radius * 0.6..canvas.height as f64 - radius * 0.6);
    let (cr, sr) = (rot.cos(), rot.sin());
    let reach = radius * 1.25;
    let mut water = Vec::new();
    canvas.scan(cx - reach, cy - reach, cx + reach, cy + reach, |i, x, y| {
        let (dx, dy) = (x - cx, y - cy);
        let (lx, ly) = (dx * cr + dy * sr, (-dx * sr + dy * cr) / aspect);
        let ang = ly.atan2(lx);
        let rim = radius * (1.0 + a2 * (2.0 * ang + p2).cos() + a3 * (3.0 * ang + p3).cos());
        if (lx * lx + ly * ly).sqrt() <= rim {
            water.push(i);
        }
    });
    Some(Body {
        kind: BodyKind::Lake,
        label: water.clone(),
        water,
        wall: Vec::new(),
        color: water_color(rng),
    })
}

fn draw_river(canvas: Canvas, rng: &mut Rng) -> Option<Body> {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let (nx, ny) = (-dy, dx);
    let length = rng.random_range(40.0..64.0);
    let amp = rng.random_range(2.0..6.0);
    let freq = rng.random_range(0.5..1.5);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let width = rng.random_range(5.0..7.0);
    let cx = rng.random_range(0.0..canvas.width as f64);
    let cy = rng.random_range(0.0..canvas.height as f64);
    let line: Vec<(f64, f64)> = (0..=48)
        .map(|k| {
            let t = f64::from(k) / 48.0 - 0.5;
            let off = amp * (std::f64::consts::TAU * freq * t + phase).sin();
            (cx + t * length * dx + off * nx, cy + t * length * dy + off * ny)
        })
        .collect();
    let (x0, x1) = line.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (y0, y1) = line.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let half = width / 2.0;
    let mut water = Vec::new();
    canvas.scan(x0 - half, y0 - half, x1 + half, y1 + half, |i, x, y| {
        if line.windows(2).any(|w| segment_distance(x, y, w[0], w[1]) <= half) {
            water.push(i);
        }
    });
    Some(Body {
        kind: BodyKind::River,
        label: water.clone(),
        water,
        wall: Vec::new(),
        color: water_color(rng),
    })
}

/// 3x3 morphology on a pixel set; `allowed` gates which pixels may be added.
fn morph(canvas: Canvas, pixels: &[usize], dilate: bool, allowed: &[bool]) -> Vec<usize> {
    let (w, h) = (canvas.width, canvas.height);
    let mut inside = vec![false; w * h];
    for &i in pixels {
        inside[i] = true;
    }
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mut any = false;
            let mut all = true;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    // outside the scene counts as part of the body for
                    // erosion so border-touching bodies do not shrink there
                    let v = if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        inside[i]
                    } else {
                        inside[rr as usize * w + cc as usize]
                    };
                    any |= v;
                    all &= v;
                }
            }
            let keep = if dilate { inside[i] || (any && allowed[i]) } else { all };
            if keep {
                out.push(i);
            }
        }
    }
    out
}

fn is_single_component(canvas: Canvas, pixels: &[usize]) -> bool {
    let mut mask = LabelMask::zeros(canvas.width, canvas.height, 2);
    for &i in pixels {
        mask.values_mut()[i] = 1;
    }
    crate::extract::connected_components(&mask).len() == 1
}

/// Generates a scene and its 3-class mask. Deterministic in `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<(Raster, LabelMask)> {
    generate_scene_with_bodies(spec, seed).map(|(r, m, _)| (r, m))
}

/// Like [`generate_scene`], also returning a record per body.
pub fn generate_scene_with_bodies(
    spec: &SceneSpec,
    seed: u64,
) -> Result<(Raster, LabelMask, Vec<BodyRecord>)> {
    spec.validate()?;
    let mut rng = rng::stream(seed, "scene");
    let canvas = Canvas {
        width: spec.width,
        height: spec.height,
    };
    let n = spec.width * spec.height;

    // cells unavailable to new bodies (earlier bodies plus clearance)
    let mut blocked = vec![false; n];
    let mut bodies: Vec<Body> = Vec::with_capacity(spec.num_bodies);
    for b in 0..spec.num_bodies {
        let pick: f64 = rng.random();
        let mix = spec.shape_mix;
        let kind = if pick < mix.dam {
            BodyKind::Dam
        } else if pick < mix.dam + mix.lake {
            BodyKind::Lake
        } else {
            BodyKind::River
        };
        let mut placed = None;
        for _ in 0..MAX_ATTEMPTS {
            let candidate = match kind {
                BodyKind::Dam => draw_dam(canvas, &mut rng),
                BodyKind::Lake => draw_lake(canvas, &mut rng),
                BodyKind::River => draw_river(canvas, &mut rng),
            };
            let Some(body) = candidate else { continue };
            if body.water.len() < MIN_BODY_AREA
                || body.water.iter().chain(&body.wall).any(|&i| blocked[i])
                || !is_single_component(canvas, &body.water)
            {
                continue;
            }
            placed = Some(body);
            break;
        }
        let body = placed.ok_or(Error::PlacementFailure {
            body: b,
            requested: spec.num_bodies,
            attempts: MAX_ATTEMPTS,
        })?;
        for &i in body.water.iter().chain(&body.wall) {
            let (r, c) = ((i / spec.width) as i64, (i % spec.width) as i64);
            let k = CLEARANCE as i64;
            for rr in (r - k).max(0)..=(r + k).min(spec.height as i64 - 1) {
                for cc in (c - k).max(0)..=(c + k).min(spec.width as i64 - 1) {
                    blocked[rr as usize * spec.width + cc as usize] = true;
                }
            }
        }
        bodies.push(body);
    }

    // label jitter: the mask outline drifts from the rendered shoreline
    let mut wall_px = vec![false; n];
    for b in &bodies {
        for &i in &b.wall {
            wall_px[i] = true;
        }
    }
    for idx in 0..bodies.len() {
        let jitter = rng.random_bool(spec.contour_jitter);
        let dilate = rng.random_bool(0.5);
        let radius = rng.random_range(1..=2usize);
        if !jitter {
            continue;
        }
        let mut allowed = vec![true; n];
        for (j, other) in bodies.iter().enumerate() {
            if j != idx {
                for &i in &other.water {
                    allowed[i] = false;
                }
            }
        }
        for (i, &w) in wall_px.iter().enumerate() {
            if w {
                allowed[i] = false;
            }
        }
        let mut label = bodies[idx].label.clone();
        for _ in 0..radius {
            label = morph(canvas, &label, dilate, &allowed);
        }
        if label.len() >= MIN_BODY_AREA && is_single_component(canvas, &label) {
            bodies[idx].label = label;
        }
    }

    // render
    let mut raster = Raster::filled(spec.width, spec.height, 3, 0.0);
    let soil: f64 = rng.random();
    let land = [
        0.24 + 0.22 * soil,
        0.38 + 0.04 * soil,
        0.18 + 0.12 * soil,
    ];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.03..0.06),
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut base = vec![[0.0f64; 3]; n];
    for (i, px) in base.iter_mut().enumerate() {
        let (r, c) = ((i / spec.width) as f64, (i % spec.width) as f64);
        let field: f64 = waves.iter().map(|&(a, fx, fy, ph)| a * (fx * c + fy * r + ph).sin()).sum();
        *px = [land[0] + field, land[1] + field * 0.8, land[2] + field * 0.6];
    }
    for b in &bodies {
        for &i in &b.wall {
            base[i] = [0.64, 0.63, 0.60];
        }
        for &i in &b.water {
            base[i] = b.color;
        }
    }
    let cloud = if rng.random_bool(spec.cloud_probability) {
        Some((
            rng.random_range(0.0..spec.width as f64),
            rng.random_range(0.0..spec.height as f64),
            rng.random_range(5.0..10.0),
            rng.random_range(0.4..0.75),
        ))
    } else {
        None
    };
    for (i, px) in base.iter().enumerate() {
        let (r, c) = (i / spec.width, i % spec.width);
        let veil = cloud.map_or(0.0, |(cx, cy, s, a)| {
            let d2 = (c as f64 + 0.5 - cx).powi(2) + (r as f64 + 0.5 - cy).powi(2);
            a * (-d2 / (2.0 * s * s)).exp()
        });
        for (ch, &v) in px.iter().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let v = v + spec.noise_level * noise;
            raster.set(r, c, ch, v * (1.0 - veil) + 0.92 * veil);
        }
    }
    raster.quantize();

    let mut mask = LabelMask::zeros(spec.width, spec.height, 3);
    let mut records = Vec::with_capacity(bodies.len());
    for b in &bodies {
        let class = b.kind.mask_class();
        let coords: Vec<(usize, usize)> = b
            .label
            .iter()
            .map(|&i| (i / spec.width, i % spec.width))
            .collect();
        for &i in &b.label {
            mask.values_mut()[i] = class;
        }
        records.push(BodyRecord {
            kind: b.kind,
            class,
            bbox: BBox::of_pixels(&coords).expect("bodies are non-empty"),
            area: b.label.len(),
        });
    }
    debug_assert!(mask.values().iter().all(|&v| v == LAND || v == NATURAL || v == DAM));
    Ok((raster, mask, records))
}
