//! End-to-end enhancement of one view: neighbor selection, 3D alignment,
//! flow refinement, attention, fusion and the backbone.

use geofuse_numerics::{Graph, ParamSet, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    gather_aligned, gather_var, reproject_window, select_neighbors, visibility, Window, DEFAULT_LENIENCY,
};
use crate::model::{
    apply_attention, camera_attention, camera_input, encode, enhance_backbone, estimate_flow, fuse, normalize_depth,
    pixel_attention, warp2d, Encoder, Layers, FEATURES, FLOW_ITERS,
};
use crate::scene::SceneDataset;

/// Receptive-field radius of the encoders plus one tap of bilinear support;
/// neighbor crops carry this margin so their features match full-image
/// encoding at every sampled location.
const ENCODER_MARGIN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub neighbors: usize,
    pub leniency: f64,
    pub flow_iters: usize,
    /// Add the degraded render to the backbone output.
    pub residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            neighbors: 2,
            leniency: DEFAULT_LENIENCY,
            flow_iters: FLOW_ITERS,
            residual: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors == 0 || !(self.leniency >= 0.0) {
            return Err(Error::Argument(format!("invalid model config {self:?}")));
        }
        Ok(())
    }
}

/// Geometry-derived inputs for one neighbor, restricted to a window of the
/// novel view.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedNeighbor {
    pub view: usize,
    /// Neighbor ground-truth image, cropped to the region the window maps to
    /// (plus an encoder margin); `None` when nothing is visible.
    pub image: Option<Tensor<f64>>,
    /// `[2, h, w]` sample positions relative to the cropped image.
    pub grid: Tensor<f64>,
    /// `[1, h, w]` binary visibility.
    pub mask: Tensor<f64>,
    /// `[1, h, w]` gathered neighbor depth, normalized.
    pub depth: Tensor<f64>,
    /// Camera attention input.
    pub camera: Tensor<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedView {
    pub target: usize,
    pub window: Window,
    /// `[3, h, w]` degraded render inside the window.
    pub render: Tensor<f64>,
    /// `[1, h, w]` normalized render depth inside the window.
    pub depth: Tensor<f64>,
    pub neighbors: Vec<PreparedNeighbor>,
}

/// Crops a `[C, H, W]` map.
pub fn crop(t: &Tensor<f64>, w: Window) -> Result<Tensor<f64>> {
    let (c, h, wd) = t.dims3()?;
    if w.top + w.height > h || w.left + w.width > wd {
        return Err(Error::Argument(format!("window {w:?} exceeds {h}×{wd} map")));
    }
    Ok(Tensor::from_fn(&[c, w.height, w.width], |i| {
        let ch = i / (w.height * w.width);
        let y = (i / w.width) % w.height;
        let x = i % w.width;
        t.data()[(ch * h + y + w.top) * wd + x + w.left]
    }))
}

/// Selects neighbors for `target` among `candidates` (the target itself is
/// skipped) and computes every geometry-dependent input for `window`.
pub fn prepare_view(
    scene: &SceneDataset,
    target: usize,
    candidates: &[usize],
    window: Window,
    cfg: &ModelConfig,
) -> Result<PreparedView> {
    cfg.validate()?;
    let pool: Vec<usize> = candidates.iter().copied().filter(|&c| c != target).collect();
    let novel = scene
        .views
        .get(target)
        .ok_or_else(|| Error::Argument(format!("view {target} out of range")))?;
    let poses: Vec<_> = pool.iter().map(|&i| scene.views[i].pose).collect();
    let chosen = select_neighbors(&novel.pose, &poses, cfg.neighbors)?;
    let render = crop(scene.render(target)?, window)?;
    let depth_k = scene.depth(target)?;
    let neighbors = chosen
        .into_iter()
        .map(|j| prepare_neighbor(scene, target, pool[j], depth_k, window, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedView {
        target,
        window,
        render,
        depth: normalize_depth(&crop(depth_k, window)?),
        neighbors,
    })
}

fn prepare_neighbor(
    scene: &SceneDataset,
    target: usize,
    view: usize,
    depth_k: &Tensor<f64>,
    window: Window,
    cfg: &ModelConfig,
) -> Result<PreparedNeighbor> {
    let novel = &scene.views[target];
    let nb = &scene.views[view];
    let depth_i = scene.depth(view)?;
    let grid = reproject_window(depth_k, window, &novel.intrinsics, &novel.pose, &nb.intrinsics, &nb.pose)?;
    let mask = visibility(&grid, depth_i, cfg.leniency)?;
    let (_, gathered_depth) = gather_aligned(depth_i, depth_i, &grid, &mask)?;
    let camera = camera_input(&nb.pose, &novel.pose)?;

    let n = window.height * window.width;
    let (gx, gy) = grid.coords.data().split_at(n);
    let visible: Vec<usize> = (0..n).filter(|&p| mask.data()[p] > 0.0).collect();
    let (image, rel) = if visible.is_empty() {
        (None, grid.coords.clone())
    } else {
        let fold = |v: &[f64], f: fn(f64, f64) -> f64, init: f64| visible.iter().map(|&p| v[p]).fold(init, f);
        let (nh, nw) = (nb.height(), nb.width());
        let lo = |v: f64| (v.floor() as usize).saturating_sub(ENCODER_MARGIN);
        let hi = |v: f64, n: usize| ((v.floor() as usize) + 1 + ENCODER_MARGIN).min(n - 1);
        let (x0, x1) = (lo(fold(gx, f64::min, f64::INFINITY)), hi(fold(gx, f64::max, 0.0), nw));
        let (y0, y1) = (lo(fold(gy, f64::min, f64::INFINITY)), hi(fold(gy, f64::max, 0.0), nh));
        let bbox = Window {
            top: y0,
            left: x0,
            height: y1 - y0 + 1,
            width: x1 - x0 + 1,
        };
        let rel = Tensor::from_fn(&[2, window.height, window.width], |i| {
            if i < n {
                gx[i] - x0 as f64
            } else {
                gy[i - n] - y0 as f64
            }
        });
        (Some(crop(&nb.rgb, bbox)?), rel)
    };
    Ok(PreparedNeighbor {
        view,
        image,
        grid: rel,
        mask,
        depth: normalize_depth(&gathered_depth),
        camera,
    })
}

/// Network forward pass for a prepared view; returns the unclamped `[3, h,
/// w]` output.
pub fn forward<T: Real>(
    g: &mut Graph<T>,
    layers: &mut Layers<T>,
    view: &PreparedView,
    cfg: &ModelConfig,
) -> Result<Var> {
    if view.neighbors.is_empty() {
        return Err(Error::Argument("no neighbors to fuse".into()));
    }
    let (_, h, w) = view.render.dims3()?;
    let render = g.constant(view.render.cast());
    let render_f = encode(g, layers, Encoder::Render, render)?;
    let depth_k = g.constant(view.depth.cast());
    let mut attended = Vec::with_capacity(view.neighbors.len());
    for nb in &view.neighbors {
        let Some(image) = &nb.image else {
            // Nothing visible: gathered features, and so the attended ones,
            // are identically zero.
            attended.push(g.constant(Tensor::zeros(&[FEATURES, h, w])));
            continue;
        };
        let image = g.constant(image.cast());
        let feats = encode(g, layers, Encoder::Neighbor, image)?;
        let grid = g.constant(nb.grid.cast());
        let mask = g.constant(nb.mask.cast());
        let gathered = gather_var(g, feats, grid, mask)?;
        let flow = estimate_flow(g, layers, gathered, render_f, cfg.flow_iters)?;
        let refined = warp2d(g, gathered, flow)?;
        let depth_ik = g.constant(nb.depth.cast());
        let psi_pix = pixel_attention(g, layers, refined, render_f, depth_ik, depth_k)?;
        let cam = g.constant(nb.camera.cast());
        let psi_cam = camera_attention(g, layers, cam)?;
        attended.push(apply_attention(g, refined, psi_pix, psi_cam)?);
    }
    let pooled = fuse(g, &attended)?;
    let residual = cfg.residual.then_some(render);
    enhance_backbone(g, layers, render_f, pooled, residual)
}

/// Enhances view `target` of `scene` using the training split as the
/// neighbor pool (excluding the target). Output is clamped to `[0, 1]`.
pub fn enhance_view(
    scene: &SceneDataset,
    target: usize,
    params: &ParamSet<f32>,
    cfg: &ModelConfig,
) -> Result<Tensor<f64>> {
    let (train, _) = scene.split()?;
    let (h, w) = (scene.intrinsics.height, scene.intrinsics.width);
    let view = prepare_view(scene, target, &train, Window::full(h, w), cfg)?;
    enhance_prepared(&view, params, cfg)
}

/// Inference on an already prepared view.
pub fn enhance_prepared(view: &PreparedView, params: &ParamSet<f32>, cfg: &ModelConfig) -> Result<Tensor<f64>> {
    let mut g = Graph::<f32>::new();
    let mut layers = Layers::frozen(params);
    let out = forward(&mut g, &mut layers, view, cfg)?;
    Ok(g.value(out).cast::<f64>().map(|v| v.clamp(0.0, 1.0)))
}
