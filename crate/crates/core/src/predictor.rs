//! Toy-scale waypoint predictor: masked cross-attention fusion of per-view
//! RGB and depth features, a shared linear head producing the polar
//! heatmap, and full-batch gradient-descent training on the combined
//! regression + occupancy objective.
//!
//! Depth features are deterministic min-depth summaries of each view; RGB
//! features are seeded noise and carry no geometry. The analytic backward
//! pass is validated against central finite differences in the tests.

use crate::error::{Error, Result};
use crate::heatmap::{target_heatmap, PolarHeatmap};
use crate::losses::{grad_l_total, l_total, LossBreakdown};
use crate::polar::{
    occupancy_mask, reduce_depth_view, shortest_distance_profile, DepthCamera, DepthPanorama,
    OccupancyMask, ShortestDistanceProfile, ANGLE_BINS, BIN_DEG, DIST_BINS, DIST_STEP, MAX_RANGE,
    REDUCED_COLS,
};
use crate::world::{render_depth_panorama, AgentPose, FloorPlan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};

/// Default per-view feature width.
pub const FEATURE_DIM: usize = 16;
/// Panorama views.
pub const N_VIEWS: usize = 12;
/// Angle columns owned by each view in the tiled heatmap.
pub const COLS_PER_VIEW: usize = ANGLE_BINS / N_VIEWS;

/// One view's feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFeature {
    pub vector: Vec<f64>,
    pub view_index: usize,
}

/// 12x12 binary attention mask over views.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMask {
    pub allowed: [[bool; N_VIEWS]; N_VIEWS],
}

/// Cyclic +-1 neighborhood mask: every view attends to itself and its two
/// neighbors, matching the 90-degree view overlap of adjacent headings.
pub fn adjacency_mask() -> AdjacencyMask {
    let mut allowed = [[false; N_VIEWS]; N_VIEWS];
    for (i, row) in allowed.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let d = i.abs_diff(j);
            *cell = d.min(N_VIEWS - d) <= 1;
        }
    }
    AdjacencyMask { allowed }
}

/// Trainable parameters: query/key/value projections and the shared head
/// mapping each fused view feature to its 10x12 heatmap tile.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPredictorParams {
    pub feature_dim: usize,
    /// F x F row-major.
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    /// (COLS_PER_VIEW * DIST_BINS) x F row-major.
    pub w_head: Vec<f64>,
    pub learning_rate: f64,
    pub seed: u64,
}

impl ToyPredictorParams {
    /// Seeded small random initialization.
    pub fn init(feature_dim: usize, learning_rate: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.5 / (feature_dim as f64).sqrt();
        let mut mat = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
        };
        let f2 = feature_dim * feature_dim;
        Self {
            feature_dim,
            wq: mat(f2),
            wk: mat(f2),
            wv: mat(f2),
            w_head: mat(COLS_PER_VIEW * DIST_BINS * feature_dim),
            learning_rate,
            seed,
        }
    }

    pub fn zeros(feature_dim: usize, learning_rate: f64) -> Self {
        let f2 = feature_dim * feature_dim;
        Self {
            feature_dim,
            wq: vec![0.0; f2],
            wk: vec![0.0; f2],
            wv: vec![0.0; f2],
            w_head: vec![0.0; COLS_PER_VIEW * DIST_BINS * feature_dim],
            learning_rate,
            seed: 0,
        }
    }

    /// Versioned portable binary: magic "TWP1", dims, then the four
    /// matrices as row-major little-endian f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"TWP1")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.feature_dim as u32).to_le_bytes())?;
        w.write_all(&(COLS_PER_VIEW as u32).to_le_bytes())?;
        w.write_all(&(DIST_BINS as u32).to_le_bytes())?;
        w.write_all(&self.learning_rate.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for m in [&self.wq, &self.wk, &self.wv, &self.w_head] {
            for v in m {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 20];
        r.read_exact(&mut head)?;
        if &head[0..4] != b"TWP1" {
            return Err(Error::Validation("bad params magic".into()));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
        if version != 1 {
            return Err(Error::Validation(format!("unsupported params version {version}")));
        }
        let feature_dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
        let bins = u32::from_le_bytes(head[16..20].try_into().unwrap()) as usize;
        if cols != COLS_PER_VIEW || bins != DIST_BINS {
            return Err(Error::Validation(format!("unexpected head shape {cols}x{bins}")));
        }
        let mut f64_buf = [0u8; 8];
        r.read_exact(&mut f64_buf)?;
        let learning_rate = f64::from_le_bytes(f64_buf);
        r.read_exact(&mut f64_buf)?;
        let seed = u64::from_le_bytes(f64_buf);
        let mut read_mat = |n: usize| -> Result<Vec<f64>> {
            let mut m = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                m.push(f64::from_le_bytes(buf));
            }
            Ok(m)
        };
        let f2 = feature_dim * feature_dim;
        let wq = read_mat(f2)?;
        let wk = read_mat(f2)?;
        let wv = read_mat(f2)?;
        let w_head = read_mat(COLS_PER_VIEW * DIST_BINS * feature_dim)?;
        Ok(Self { feature_dim, wq, wk, wv, w_head, learning_rate, seed })
    }
}

fn matvec(m: &[f64], x: &[f64], out_dim: usize, in_dim: usize) -> Vec<f64> {
    let mut y = vec![0.0; out_dim];
    for (a, ya) in y.iter_mut().enumerate() {
        let row = &m[a * in_dim..(a + 1) * in_dim];
        *ya = row.iter().zip(x).map(|(w, v)| w * v).sum();
    }
    y
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Attention weights, zero outside the mask.
    pub weights: Vec<Vec<f64>>,
    pub fused: Vec<Vec<f64>>,
    logits: Vec<f64>,
    pub heatmap: PolarHeatmap,
}

/// Single-head scaled dot-product attention with RGB features as queries
/// and depth features as keys and values; masked positions get weight
/// exactly zero and each query's allowed weights sum to one.
pub fn masked_cross_attention(
    rgb: &[ViewFeature],
    depth: &[ViewFeature],
    mask: &AdjacencyMask,
    params: &ToyPredictorParams,
) -> Vec<ViewFeature> {
    let cache = attention_forward(rgb, depth, mask, params);
    cache
        .fused
        .into_iter()
        .enumerate()
        .map(|(i, vector)| ViewFeature { vector, view_index: i })
        .collect()
}

fn attention_forward(
    rgb: &[ViewFeature],
    depth: &[ViewFeature],
    mask: &AdjacencyMask,
    params: &ToyPredictorParams,
) -> ForwardCache {
    let f = params.feature_dim;
    let scale = 1.0 / (f as f64).sqrt();
    let q: Vec<Vec<f64>> = rgb.iter().map(|r| matvec(&params.wq, &r.vector, f, f)).collect();
    let k: Vec<Vec<f64>> = depth.iter().map(|d| matvec(&params.wk, &d.vector, f, f)).collect();
    let v: Vec<Vec<f64>> = depth.iter().map(|d| matvec(&params.wv, &d.vector, f, f)).collect();

    let mut weights = vec![vec![0.0; N_VIEWS]; N_VIEWS];
    let mut fused = vec![vec![0.0; f]; N_VIEWS];
    for i in 0..N_VIEWS {
        let allowed: Vec<usize> = (0..N_VIEWS).filter(|j| mask.allowed[i][*j]).collect();
        let scores: Vec<f64> = allowed
            .iter()
            .map(|&j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (idx, &j) in allowed.iter().enumerate() {
            let w = exps[idx] / sum;
            weights[i][j] = w;
            for (u, vj) in fused[i].iter_mut().zip(&v[j]) {
                *u += w * vj;
            }
        }
    }

    ForwardCache { q, k, v, weights, fused, logits: Vec::new(), heatmap: PolarHeatmap::zeros() }
}

/// Full forward pass: fuse, apply the shared head, squash into [0, 1], and
/// tile view v's 10x12 output into angle bins [10v, 10v+10).
pub fn forward(
    rgb: &[ViewFeature],
    depth: &[ViewFeature],
    params: &ToyPredictorParams,
) -> ForwardCache {
    let mask = adjacency_mask();
    let mut cache = attention_forward(rgb, depth, &mask, params);
    let f = params.feature_dim;
    let mut logits = vec![0.0; ANGLE_BINS * DIST_BINS];
    let mut map = PolarHeatmap::zeros();
    for view in 0..N_VIEWS {
        let tile = matvec(&params.w_head, &cache.fused[view], COLS_PER_VIEW * DIST_BINS, f);
        for c in 0..COLS_PER_VIEW {
            for j in 0..DIST_BINS {
                let k = view * COLS_PER_VIEW + c;
                let logit = tile[c * DIST_BINS + j];
                logits[k * DIST_BINS + j] = logit;
                map.set(k, j, sigmoid(logit));
            }
        }
    }
    cache.logits = logits;
    cache.heatmap = map;
    cache
}

/// Predict the polar heatmap for one panorama's features.
pub fn predict_heatmap(
    rgb: &[ViewFeature],
    depth: &[ViewFeature],
    params: &ToyPredictorParams,
) -> PolarHeatmap {
    forward(rgb, depth, params).heatmap
}

/// Parameter gradients, same layouts as [`ToyPredictorParams`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub w_head: Vec<f64>,
}

impl ParamGrads {
    fn zeros(f: usize) -> Self {
        Self {
            wq: vec![0.0; f * f],
            wk: vec![0.0; f * f],
            wv: vec![0.0; f * f],
            w_head: vec![0.0; COLS_PER_VIEW * DIST_BINS * f],
        }
    }

    fn scale(&mut self, s: f64) {
        for m in [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.w_head] {
            for v in m.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Accumulate parameter gradients for one scene given dL/dP.
fn backward(
    rgb: &[ViewFeature],
    depth: &[ViewFeature],
    params: &ToyPredictorParams,
    cache: &ForwardCache,
    d_heatmap: &[f64],
    grads: &mut ParamGrads,
) {
    let f = params.feature_dim;
    let scale = 1.0 / (f as f64).sqrt();
    let mask = adjacency_mask();

    // through the sigmoid and the shared head
    let mut d_fused = vec![vec![0.0; f]; N_VIEWS];
    for view in 0..N_VIEWS {
        for c in 0..COLS_PER_VIEW {
            for j in 0..DIST_BINS {
                let k = view * COLS_PER_VIEW + c;
                let idx = k * DIST_BINS + j;
                let p = cache.heatmap.as_slice()[idx];
                let d_logit = d_heatmap[idx] * p * (1.0 - p);
                if d_logit == 0.0 {
                    continue;
                }
                let row = c * DIST_BINS + j;
                for a in 0..f {
                    grads.w_head[row * f + a] += d_logit * cache.fused[view][a];
                    d_fused[view][a] += d_logit * params.w_head[row * f + a];
                }
            }
        }
    }

    // through the attention combination
    let mut d_v = vec![vec![0.0; f]; N_VIEWS];
    let mut d_q = vec![vec![0.0; f]; N_VIEWS];
    let mut d_k = vec![vec![0.0; f]; N_VIEWS];
    for i in 0..N_VIEWS {
        let allowed: Vec<usize> = (0..N_VIEWS).filter(|j| mask.allowed[i][*j]).collect();
        let d_w: Vec<f64> = allowed
            .iter()
            .map(|&j| {
                for a in 0..f {
                    d_v[j][a] += cache.weights[i][j] * d_fused[i][a];
                }
                d_fused[i].iter().zip(&cache.v[j]).map(|(a, b)| a * b).sum()
            })
            .collect();
        let dot: f64 = allowed
            .iter()
            .zip(&d_w)
            .map(|(&j, dw)| cache.weights[i][j] * dw)
            .sum();
        for (idx, &j) in allowed.iter().enumerate() {
            let d_s = cache.weights[i][j] * (d_w[idx] - dot);
            for a in 0..f {
                d_q[i][a] += d_s * cache.k[j][a] * scale;
                d_k[j][a] += d_s * cache.q[i][a] * scale;
            }
        }
    }

    // through the projections
    for i in 0..N_VIEWS {
        for a in 0..f {
            for b in 0..f {
                grads.wq[a * f + b] += d_q[i][a] * rgb[i].vector[b];
                grads.wk[a * f + b] += d_k[i][a] * depth[i].vector[b];
                grads.wv[a * f + b] += d_v[i][a] * depth[i].vector[b];
            }
        }
    }
}

/// One training example: per-view features plus the supervision targets.
#[derive(Debug, Clone)]
pub struct TrainScene {
    pub rgb: Vec<ViewFeature>,
    pub depth: Vec<ViewFeature>,
    pub p_star: PolarHeatmap,
    pub mask: OccupancyMask,
}

/// One row of the training loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub l_vis: f64,
    pub l_occ: f64,
    pub l_total: f64,
}

/// Successful training output.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ToyPredictorParams,
    pub curve: Vec<CurvePoint>,
}

/// Training diverged: the loss became non-finite at `epoch`.
#[derive(Debug, Clone)]
pub struct TrainError {
    pub epoch: usize,
    pub last_stable: ToyPredictorParams,
    pub curve: Vec<CurvePoint>,
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "loss became non-finite at epoch {}", self.epoch)
    }
}

fn mean_loss(scenes: &[TrainScene], params: &ToyPredictorParams, lambda_occ: f64) -> LossBreakdown {
    let mut acc = LossBreakdown { l_vis: 0.0, l_occ: 0.0, l_total: 0.0, lambda_occ };
    for scene in scenes {
        let cache = forward(&scene.rgb, &scene.depth, params);
        let b = l_total(&cache.heatmap, &scene.p_star, &scene.mask, lambda_occ)
            .expect("matching shapes");
        acc.l_vis += b.l_vis;
        acc.l_occ += b.l_occ;
        acc.l_total += b.l_total;
    }
    let n = scenes.len() as f64;
    acc.l_vis /= n;
    acc.l_occ /= n;
    acc.l_total /= n;
    acc
}

/// Full-batch gradient descent on the combined objective. The returned
/// curve holds the training-set loss before each update plus a final
/// point, so it has `epochs + 1` rows.
pub fn train_toy(
    scenes: &[TrainScene],
    lambda_occ: f64,
    epochs: usize,
    params: &ToyPredictorParams,
) -> std::result::Result<TrainResult, TrainError> {
    assert!(!scenes.is_empty(), "training set must be non-empty");
    let mut params = params.clone();
    let mut prev_params = params.clone();
    let f = params.feature_dim;
    let mut curve = Vec::with_capacity(epochs + 1);
    for epoch in 0..=epochs {
        let loss = mean_loss(scenes, &params, lambda_occ);
        curve.push(CurvePoint {
            epoch,
            l_vis: loss.l_vis,
            l_occ: loss.l_occ,
            l_total: loss.l_total,
        });
        if !loss.l_total.is_finite() {
            return Err(TrainError { epoch, last_stable: prev_params, curve });
        }
        if epoch == epochs {
            break;
        }
        prev_params = params.clone();
        let mut grads = ParamGrads::zeros(f);
        for scene in scenes {
            let cache = forward(&scene.rgb, &scene.depth, &params);
            let d_p = grad_l_total(&cache.heatmap, &scene.p_star, &scene.mask, lambda_occ);
            backward(&scene.rgb, &scene.depth, &params, &cache, &d_p, &mut grads);
        }
        grads.scale(1.0 / scenes.len() as f64);
        let lr = params.learning_rate;
        for (m, g) in [
            (&mut params.wq, &grads.wq),
            (&mut params.wk, &grads.wk),
            (&mut params.wv, &grads.wv),
            (&mut params.w_head, &grads.w_head),
        ] {
            for (w, d) in m.iter_mut().zip(g) {
                *w -= lr * d;
            }
        }
    }
    Ok(TrainResult { params, curve })
}

/// Deterministic per-view features for a panorama: the depth feature is a
/// 16-group min-depth summary of the reduced view (normalized by the render
/// range); the RGB feature is seeded noise carrying no geometry.
pub fn synth_features(
    pano: &DepthPanorama,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<ViewFeature>, Vec<ViewFeature>)> {
    let mut rgb = Vec::with_capacity(N_VIEWS);
    let mut depth = Vec::with_capacity(N_VIEWS);
    for (i, view) in pano.views.iter().enumerate() {
        let reduced = reduce_depth_view(view)?;
        let height = reduced.len() / REDUCED_COLS;
        // per-column minimum over rows
        let mut col_min = vec![f64::INFINITY; REDUCED_COLS];
        for row in 0..height {
            for (n, m) in col_min.iter_mut().enumerate() {
                *m = m.min(reduced[row * REDUCED_COLS + n]);
            }
        }
        // group 30 columns into FEATURE_DIM buckets, min per bucket
        let mut vector = vec![0.0; FEATURE_DIM];
        for (b, slot) in vector.iter_mut().enumerate() {
            let lo = b * REDUCED_COLS / FEATURE_DIM;
            let hi = ((b + 1) * REDUCED_COLS / FEATURE_DIM).max(lo + 1);
            let m = col_min[lo..hi].iter().cloned().fold(f64::INFINITY, f64::min);
            *slot = (m / MAX_RANGE).min(1.0);
        }
        depth.push(ViewFeature { vector, view_index: i });
        rgb.push(ViewFeature {
            vector: (0..FEATURE_DIM).map(|_| rng.gen_range(0.0..1.0)).collect(),
            view_index: i,
        });
    }
    Ok((rgb, depth))
}

/// Widest run (in bins) kept as a single opening; wider runs are split so
/// distinct directions through large open areas each get a waypoint.
const MAX_RUN_BINS: usize = 20;

/// Navigable-opening detection on a distance profile. Bins whose distance
/// reaches the render clamp look through to free space beyond the sensing
/// horizon; maximal cyclic runs of such bins are the openings. Fully
/// enclosed poses (no bin at the horizon) fall back to a scene-relative
/// threshold so the longest clear directions still produce waypoints. Each
/// opening yields a metric waypoint at its center bin, a quarter meter
/// short of the measured distance.
pub fn detect_openings(profile: &ShortestDistanceProfile) -> Vec<(f64, f64)> {
    let horizon = MAX_RANGE - 1e-6;
    let mut open: Vec<bool> = profile.distances.iter().map(|d| *d >= horizon).collect();
    if !open.iter().any(|o| *o) {
        let max_d = profile.distances.iter().cloned().fold(0.0, f64::max);
        let thresh = (0.8 * max_d).max(0.6);
        open = profile.distances.iter().map(|d| *d >= thresh).collect();
    }
    let waypoint = |k: usize| -> (f64, f64) {
        let dist = (profile.distances[k] - DIST_STEP).clamp(DIST_STEP, 3.0);
        (BIN_DEG * k as f64 + BIN_DEG / 2.0, dist)
    };
    let mut runs: Vec<(usize, usize)> = Vec::new(); // (start, len)
    if open.iter().all(|o| *o) {
        runs.push((0, ANGLE_BINS));
    } else {
        for k in 0..ANGLE_BINS {
            let prev = (k + ANGLE_BINS - 1) % ANGLE_BINS;
            if open[k] && !open[prev] {
                let mut len = 0;
                while open[(k + len) % ANGLE_BINS] {
                    len += 1;
                }
                runs.push((k, len));
            }
        }
        runs.sort_by_key(|(start, _)| *start);
    }
    let mut openings = Vec::new();
    for (start, len) in runs {
        if len < 2 {
            continue;
        }
        let chunks = len.div_ceil(MAX_RUN_BINS);
        for c in 0..chunks {
            let lo = c * len / chunks;
            let hi = (c + 1) * len / chunks;
            let center = (start + lo + (hi - lo - 1) / 2) % ANGLE_BINS;
            openings.push(waypoint(center));
        }
    }
    openings
}

/// The oracle heatmap: ground-truth opening waypoints rendered as soft blobs.
pub fn oracle_heatmap(profile: &ShortestDistanceProfile) -> Result<PolarHeatmap> {
    target_heatmap(&detect_openings(profile))
}

/// Where navigation heatmaps come from: the geometry oracle or a trained
/// toy predictor with seeded feature noise.
#[derive(Debug, Clone)]
pub enum PredictorSource {
    Oracle,
    Toy { params: ToyPredictorParams, feature_seed: u64 },
}

impl PredictorSource {
    /// Heatmap for the agent's current pose. `stream` decorrelates the RGB
    /// noise across episodes and steps without breaking determinism.
    pub fn heatmap_at(
        &self,
        plan: &FloorPlan,
        pose: &AgentPose,
        camera: &DepthCamera,
        stream: u64,
    ) -> Result<PolarHeatmap> {
        let pano = render_depth_panorama(plan, pose, camera)?;
        match self {
            PredictorSource::Oracle => {
                let profile = shortest_distance_profile(&pano, camera)?;
                oracle_heatmap(&profile)
            }
            PredictorSource::Toy { params, feature_seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*feature_seed);
                rng.set_stream(stream);
                let (rgb, depth) = synth_features(&pano, &mut rng)?;
                Ok(predict_heatmap(&rgb, &depth, params))
            }
        }
    }
}

/// Build one training scene from a plan and pose: features from the
/// rendered panorama, the occupancy mask from the distance profile, and
/// the target heatmap from the detected openings.
pub fn make_train_scene(
    plan: &FloorPlan,
    pose: &AgentPose,
    camera: &DepthCamera,
    rng: &mut ChaCha8Rng,
) -> Result<TrainScene> {
    let pano = render_depth_panorama(plan, pose, camera)?;
    let profile = shortest_distance_profile(&pano, camera)?;
    let mask = occupancy_mask(&profile);
    let p_star = target_heatmap(&detect_openings(&profile))?;
    let (rgb, depth) = synth_features(&pano, rng)?;
    Ok(TrainScene { rgb, depth, p_star, mask })
}
