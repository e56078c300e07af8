use rayon::prelude::*;

use super::camera::{project, Camera, Projection};
use super::{RenderError, RenderTarget, SplatView, MAX_ALPHA, MIN_ALPHA, TILE_SIZE, TRANSMITTANCE_STOP};

/// A projected, invertible splat ready for compositing.
#[derive(Debug, Clone, Copy)]
struct Splat {
    mean: [f32; 2],
    /// Inverse 2D covariance `[xx, xy, yy]`.
    conic: [f32; 3],
    depth: f32,
    opacity: f32,
    /// Below this exponent `alpha` is certainly under the cutoff, so the
    /// exponential can be skipped. The margin dwarfs `exp` rounding.
    min_power: f32,
    color: [f32; 3],
    index: u32,
}

impl Splat {
    /// The splat and its 2D covariance.
    fn from_view(view: &SplatView<'_>, i: usize, camera: &Camera) -> Option<(Self, [f32; 3])> {
        let Projection::Visible(g) = project(view.positions[i], view.rotations[i], view.scales[i], camera) else {
            return None;
        };
        let [a, b, c] = g.cov;
        let det = a * c - b * b;
        if !(det > 0.0 && det.is_finite()) {
            return None;
        }
        let conic = [c / det, -b / det, a / det];
        if !conic.iter().all(|x| x.is_finite()) {
            return None;
        }
        let opacity = view.opacities[i];
        let min_power = (MIN_ALPHA / opacity).ln() - 1e-3;
        let s = Self { mean: g.mean, conic, depth: g.depth, opacity, min_power, color: view.colors[i], index: i as u32 };
        Some((s, g.cov))
    }

    #[inline]
    fn alpha(&self, px: f32, py: f32) -> Option<f32> {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let power = -0.5 * (self.conic[0] * dx * dx + self.conic[2] * dy * dy) - self.conic[1] * dx * dy;
        if power > 0.0 || power < self.min_power {
            return None;
        }
        let alpha = (self.opacity * power.exp()).min(MAX_ALPHA);
        if alpha < MIN_ALPHA {
            return None;
        }
        Some(alpha)
    }

    /// Inclusive pixel bounds outside of which `alpha` is below the cutoff,
    /// or `None` when the splat can never reach the cutoff on screen.
    fn pixel_bounds(&self, cov: [f32; 3], width: u32, height: u32) -> Option<[u32; 4]> {
        if !(self.opacity >= MIN_ALPHA) {
            return None;
        }
        // alpha >= 1/255 requires dᵀΣ⁻¹d <= 2 ln(255 o)
        let q = 2.0 * (255.0 * self.opacity).ln().max(0.0);
        let rx = (q * cov[0]).sqrt() + 1.0;
        let ry = (q * cov[2]).sqrt() + 1.0;
        let x0 = (self.mean[0] - rx).ceil().max(0.0);
        let y0 = (self.mean[1] - ry).ceil().max(0.0);
        let x1 = (self.mean[0] + rx).floor().min(width as f32 - 1.0);
        let y1 = (self.mean[1] + ry).floor().min(height as f32 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            return None;
        }
        Some([x0 as u32, y0 as u32, x1 as u32, y1 as u32])
    }
}

fn sort_key(a: &Splat, b: &Splat) -> std::cmp::Ordering {
    a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index))
}

/// Front-to-back compositing of one pixel over `splats` (already sorted).
/// Returns the accumulated color and the final transmittance.
#[inline]
fn composite<'s>(
    splats: impl Iterator<Item = &'s Splat>,
    px: f32,
    py: f32,
    stop: f32,
    mut on_contribution: impl FnMut(u32, f32),
) -> ([f32; 3], f32) {
    let mut t = 1.0f32;
    let mut c = [0.0f32; 3];
    for s in splats {
        let Some(alpha) = s.alpha(px, py) else { continue };
        let w = alpha * t;
        c[0] += w * s.color[0];
        c[1] += w * s.color[1];
        c[2] += w * s.color[2];
        on_contribution(s.index, w);
        t *= 1.0 - alpha;
        if t < stop {
            break;
        }
    }
    (c, t)
}

#[inline]
fn finish_pixel(c: [f32; 3], t: f32, bg: [f32; 3], rgb: &mut [f32], alpha: &mut f32) {
    for k in 0..3 {
        rgb[k] = (c[k] + t * bg[k]).clamp(0.0, 1.0);
    }
    *alpha = (1.0 - t).clamp(0.0, 1.0);
}

/// Weight `α_k · T_k` with which point `point` contributed to pixel `pixel`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub pixel: u32,
    pub point: u32,
    pub weight: f32,
}

/// Per-pixel contributions retained from a forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardRecord {
    pub width: u32,
    pub height: u32,
    pub points: usize,
    pub contributions: Vec<Contribution>,
}

/// Tiled rasterizer with reusable scratch buffers.
#[derive(Debug, Default)]
pub struct Rasterizer {
    projected: Vec<(Splat, [u32; 4])>,
    keys: Vec<u64>,
    splats: Vec<Splat>,
    bounds: Vec<[u32; 4]>,
    tile_offsets: Vec<u32>,
    tile_entries: Vec<u32>,
    cursor: Vec<u32>,
    record: Option<ForwardRecord>,
}

impl Rasterizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn render(&mut self, view: &SplatView<'_>, camera: &Camera, target: &mut RenderTarget) -> Result<(), RenderError> {
        self.record = None;
        self.run(view, camera, target, false)
    }

    /// Like [`Rasterizer::render`], additionally retaining every pixel's
    /// contribution weights for [`Rasterizer::color_backward`].
    pub fn render_recorded(
        &mut self,
        view: &SplatView<'_>,
        camera: &Camera,
        target: &mut RenderTarget,
    ) -> Result<(), RenderError> {
        self.record = None;
        self.run(view, camera, target, true)
    }

    pub fn record(&self) -> Option<&ForwardRecord> {
        self.record.as_ref()
    }

    /// Exact `dL/dc_k` for a pixel-wise loss with gradient `rgb_grad`
    /// (`[H][W][3]`) with respect to the rendered colors. Compositing is
    /// linear in the colors, so each pixel contributes `grad · α_k T_k`.
    pub fn color_backward(&self, rgb_grad: &[f32]) -> Result<Vec<[f64; 3]>, RenderError> {
        let rec = self.record.as_ref().ok_or(RenderError::NoForwardRecord)?;
        let expected = 3 * rec.width as usize * rec.height as usize;
        if rgb_grad.len() != expected {
            return Err(RenderError::GradientSize { expected, found: rgb_grad.len() });
        }
        let mut grads = vec![[0.0f64; 3]; rec.points];
        for c in &rec.contributions {
            let g = &rgb_grad[3 * c.pixel as usize..3 * c.pixel as usize + 3];
            let w = f64::from(c.weight);
            let out = &mut grads[c.point as usize];
            for k in 0..3 {
                out[k] += f64::from(g[k]) * w;
            }
        }
        Ok(grads)
    }

    fn run(&mut self, view: &SplatView<'_>, camera: &Camera, target: &mut RenderTarget, keep: bool) -> Result<(), RenderError> {
        view.check()?;
        check_target(camera, target)?;
        let (w, h) = (camera.width, camera.height);
        let tiles_x = (w as usize).div_ceil(TILE_SIZE);
        let tiles_y = (h as usize).div_ceil(TILE_SIZE);

        // project and keep splats that can reach the alpha cutoff on screen;
        // the parallel collect preserves point order
        self.projected.clear();
        self.projected.par_extend((0..view.len()).into_par_iter().filter_map(|i| {
            let (s, cov) = Splat::from_view(view, i, camera)?;
            Some((s, s.pixel_bounds(cov, w, h)?))
        }));

        // front to back; projected order is point order, so the low word breaks ties by index
        self.keys.clear();
        self.keys.extend(self.projected.iter().enumerate().map(|(k, (s, _))| (u64::from(depth_key(s.depth)) << 32) | k as u64));
        self.keys.sort_unstable();
        self.splats.clear();
        self.bounds.clear();
        for &k in &self.keys {
            let (s, b) = self.projected[(k & 0xffff_ffff) as usize];
            self.splats.push(s);
            self.bounds.push(b);
        }

        // bin into tiles; entries inherit the global sort order
        self.tile_offsets.clear();
        self.tile_offsets.resize(tiles_x * tiles_y + 1, 0);
        let tile_span = |b: &[u32; 4]| {
            let ts = TILE_SIZE as u32;
            (b[0] / ts, b[1] / ts, b[2] / ts, b[3] / ts)
        };
        for b in &self.bounds {
            let (tx0, ty0, tx1, ty1) = tile_span(b);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    self.tile_offsets[ty as usize * tiles_x + tx as usize + 1] += 1;
                }
            }
        }
        for t in 0..tiles_x * tiles_y {
            self.tile_offsets[t + 1] += self.tile_offsets[t];
        }
        self.tile_entries.clear();
        self.tile_entries.resize(self.tile_offsets[tiles_x * tiles_y] as usize, 0);
        self.cursor.clear();
        self.cursor.extend_from_slice(&self.tile_offsets[..tiles_x * tiles_y]);
        for (si, b) in self.bounds.iter().enumerate() {
            let (tx0, ty0, tx1, ty1) = tile_span(b);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    let t = ty as usize * tiles_x + tx as usize;
                    self.tile_entries[self.cursor[t] as usize] = si as u32;
                    self.cursor[t] += 1;
                }
            }
        }

        let splats = &self.splats;
        let bounds = &self.bounds;
        let offsets = &self.tile_offsets;
        let entries = &self.tile_entries;
        let bg = target.background;
        let width = w as usize;
        let height = h as usize;
        let row_pixels = TILE_SIZE * width;
        let records: Vec<Vec<Contribution>> = target
            .rgb
            .par_chunks_mut(3 * row_pixels)
            .zip(target.alpha.par_chunks_mut(row_pixels))
            .enumerate()
            .map(|(ty, (rgb, alpha))| {
                let mut rec = Vec::new();
                let y0 = ty * TILE_SIZE;
                let y1 = (y0 + TILE_SIZE).min(height);
                for tx in 0..tiles_x {
                    let t = ty * tiles_x + tx;
                    let list = &entries[offsets[t] as usize..offsets[t + 1] as usize];
                    let x0 = tx * TILE_SIZE;
                    let x1 = (x0 + TILE_SIZE).min(width);
                    let mut tile = TileState::new((x1 - x0) * (y1 - y0));
                    // splat-major over the tile: each pixel still sees its
                    // splats front to back, but only inside their bounds
                    for &si in list {
                        let s = &splats[si as usize];
                        let b = bounds[si as usize];
                        let (xa, xb) = ((b[0] as usize).max(x0), (b[2] as usize).min(x1 - 1));
                        let (ya, yb) = ((b[1] as usize).max(y0), (b[3] as usize).min(y1 - 1));
                        for y in ya..=yb {
                            for x in xa..=xb {
                                let l = (y - y0) * TILE_SIZE + (x - x0);
                                let tr = tile.trans[l];
                                if tr < TRANSMITTANCE_STOP {
                                    continue;
                                }
                                let Some(a) = s.alpha(x as f32, y as f32) else { continue };
                                let wgt = a * tr;
                                let c = &mut tile.color[l];
                                c[0] += wgt * s.color[0];
                                c[1] += wgt * s.color[1];
                                c[2] += wgt * s.color[2];
                                if keep {
                                    rec.push(Contribution { pixel: (y * width + x) as u32, point: s.index, weight: wgt });
                                }
                                let next = tr * (1.0 - a);
                                tile.trans[l] = next;
                                if next < TRANSMITTANCE_STOP {
                                    tile.live -= 1;
                                }
                            }
                        }
                        if tile.live == 0 {
                            break;
                        }
                    }
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let l = (y - y0) * TILE_SIZE + (x - x0);
                            let local = (y - y0) * width + x;
                            finish_pixel(tile.color[l], tile.trans[l], bg, &mut rgb[3 * local..3 * local + 3], &mut alpha[local]);
                        }
                    }
                }
                rec
            })
            .collect();
        if keep {
            self.record = Some(ForwardRecord {
                width: w,
                height: h,
                points: view.len(),
                contributions: records.into_iter().flatten().collect(),
            });
        }
        Ok(())
    }
}

/// Per-pixel accumulators of one tile, indexed `row * TILE_SIZE + col`.
struct TileState {
    color: [[f32; 3]; TILE_SIZE * TILE_SIZE],
    trans: [f32; TILE_SIZE * TILE_SIZE],
    /// Pixels still above the transmittance stop.
    live: usize,
}

impl TileState {
    fn new(pixels: usize) -> Self {
        Self { color: [[0.0; 3]; TILE_SIZE * TILE_SIZE], trans: [1.0; TILE_SIZE * TILE_SIZE], live: pixels }
    }
}

/// Maps a float to a `u32` whose unsigned order matches `f32::total_cmp`.
#[inline]
fn depth_key(d: f32) -> u32 {
    let b = d.to_bits();
    if b & 0x8000_0000 != 0 {
        !b
    } else {
        b | 0x8000_0000
    }
}

fn check_target(camera: &Camera, target: &RenderTarget) -> Result<(), RenderError> {
    let n = target.width as usize * target.height as usize;
    if (target.width, target.height) != (camera.width, camera.height) || target.rgb.len() != 3 * n || target.alpha.len() != n {
        return Err(RenderError::TargetSize {
            target: (target.width, target.height),
            camera: (camera.width, camera.height),
        });
    }
    Ok(())
}

/// Tiled render with fresh scratch buffers.
pub fn render(view: &SplatView<'_>, camera: &Camera, target: &mut RenderTarget) -> Result<(), RenderError> {
    Rasterizer::new().render(view, camera, target)
}

/// Reference renderer: every pixel composites every projected Gaussian in
/// global depth order, with no tiling, bounds or early termination.
pub fn render_oracle(view: &SplatView<'_>, camera: &Camera, target: &mut RenderTarget) -> Result<(), RenderError> {
    view.check()?;
    check_target(camera, target)?;
    let mut splats: Vec<Splat> = (0..view.len()).filter_map(|i| Splat::from_view(view, i, camera).map(|(s, _)| s)).collect();
    splats.sort_by(sort_key);
    let width = camera.width as usize;
    for y in 0..camera.height as usize {
        for x in 0..width {
            let p = y * width + x;
            let (c, t) = composite(splats.iter(), x as f32, y as f32, 0.0, |_, _| {});
            finish_pixel(c, t, target.background, &mut target.rgb[3 * p..3 * p + 3], &mut target.alpha[p]);
        }
    }
    Ok(())
}
