//! Paired-cloud PointNet: a per-point trunk, a coordinatewise max-pool and
//! two linear heads (class logits and a 6D rotation).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointEntry};
use super::{hash_params, mlp_specs, Activation, Activations, Net, NnError, Result};
use crate::mesh::PointCloud;

pub const FEATURE_DIM: usize = 512;
pub const PAIRED_POINT_DIM: usize = 12;
/// Point coordinates are fed in units of this length (m) so they sit on the
/// same scale as the unit normals.
pub const POINT_UNIT: f64 = 0.05;
pub const DEFAULT_TRUNK: [usize; 3] = [64, 256, FEATURE_DIM];

const COMPONENT: &str = "encoder";

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    trunk: Net,
    class_head: Net,
    rot_head: Net,
    frozen: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct EncoderMeta {
    classes: usize,
    frozen: bool,
}

/// Gradient buffers matching an [`EncoderModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub trunk: Vec<f64>,
    pub class_head: Vec<f64>,
    pub rot_head: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros(model: &EncoderModel) -> Self {
        Self {
            trunk: vec![0.0; model.trunk.param_count()],
            class_head: vec![0.0; model.class_head.param_count()],
            rot_head: vec![0.0; model.rot_head.param_count()],
        }
    }

    /// Concatenation in the order trunk, class head, rotation head.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.trunk.clone();
        v.extend_from_slice(&self.class_head);
        v.extend_from_slice(&self.rot_head);
        v
    }
}

/// Result of encoding a batch of cloud pairs, with what backward needs.
#[derive(Debug, Clone)]
pub struct BatchEncoding {
    pub batch: usize,
    pub points: usize,
    /// `batch × classes`; empty when heads were skipped.
    pub class_logits: Vec<f64>,
    /// `batch × 6`; empty when heads were skipped.
    pub rot6: Vec<f64>,
    /// `batch × 512`.
    pub features: Vec<f64>,
    trunk_acts: Option<Activations>,
    /// Row (into the `batch·points` trunk rows) that won each pooled channel.
    argmax: Vec<usize>,
}

/// Single-pair output of [`pointnet_encode`].
#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub class_logits: Vec<f64>,
    pub rot6: [f64; 6],
    pub feature: Vec<f64>,
    pub cache: BatchEncoding,
}

/// Per-index concatenation `[p_cur, n_cur, p_goal, n_goal]`, points divided
/// by [`POINT_UNIT`].
pub fn pair_points(current: &PointCloud, goal: &PointCloud, out: &mut Vec<f64>) -> Result<()> {
    if current.len() != goal.len() {
        return Err(NnError::ShapeMismatch {
            expected: current.len(),
            got: goal.len(),
        });
    }
    if current.normals.len() != current.len() || goal.normals.len() != goal.len() {
        return Err(NnError::LengthMismatch(current.len(), current.normals.len()));
    }
    out.reserve(current.len() * PAIRED_POINT_DIM);
    let scaled = |p: &[f64; 3]| p.map(|v| v / POINT_UNIT);
    for i in 0..current.len() {
        out.extend_from_slice(&scaled(&current.points[i]));
        out.extend_from_slice(&current.normals[i]);
        out.extend_from_slice(&scaled(&goal.points[i]));
        out.extend_from_slice(&goal.normals[i]);
    }
    Ok(())
}

/// Encodes one (current, goal) pair.
pub fn pointnet_encode(
    model: &EncoderModel,
    current: &PointCloud,
    goal: &PointCloud,
) -> Result<EncodeOutput> {
    let enc = model.encode_batch(&[(current, goal)], true, true)?;
    let mut rot6 = [0.0; 6];
    rot6.copy_from_slice(&enc.rot6);
    Ok(EncodeOutput {
        class_logits: enc.class_logits.clone(),
        rot6,
        feature: enc.features.clone(),
        cache: enc,
    })
}

impl EncoderModel {
    /// `trunk` lists hidden widths after the 12-wide input; its last entry
    /// must be 512.
    pub fn new<R: Rng + ?Sized>(trunk: &[usize], classes: usize, rng: &mut R) -> Result<Self> {
        if trunk.last() != Some(&FEATURE_DIM) {
            return Err(NnError::ShapeMismatch {
                expected: FEATURE_DIM,
                got: trunk.last().copied().unwrap_or(0),
            });
        }
        if classes == 0 {
            return Err(NnError::BadLabel { label: 0, classes });
        }
        let mut widths = vec![PAIRED_POINT_DIM];
        widths.extend_from_slice(trunk);
        Ok(Self {
            trunk: Net::new(mlp_specs(&widths, Activation::Relu, Activation::Relu), rng),
            class_head: Net::new(
                mlp_specs(&[FEATURE_DIM, classes], Activation::Identity, Activation::Identity),
                rng,
            ),
            rot_head: Net::new(
                mlp_specs(&[FEATURE_DIM, 6], Activation::Identity, Activation::Identity),
                rng,
            ),
            frozen: false,
        })
    }

    pub fn classes(&self) -> usize {
        self.class_head.output_width()
    }

    pub fn trunk_widths(&self) -> Vec<usize> {
        self.trunk.layers().iter().map(|l| l.output).collect()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn trunk(&self) -> &Net {
        &self.trunk
    }

    pub fn class_head(&self) -> &Net {
        &self.class_head
    }

    pub fn rot_head(&self) -> &Net {
        &self.rot_head
    }

    /// Mutable parameter slices in the order trunk, class head, rotation head.
    pub fn params_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.trunk.params_mut(),
            self.class_head.params_mut(),
            self.rot_head.params_mut(),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.class_head.param_count() + self.rot_head.param_count()
    }

    pub fn param_hash(&self) -> String {
        hash_params([
            self.trunk.params(),
            self.class_head.params(),
            self.rot_head.params(),
        ])
    }

    /// Encodes a batch of pairs that all share the same point count.
    /// `heads` controls whether class and rotation outputs are computed;
    /// `keep_cache` retains what [`EncoderModel::backward`] needs.
    pub fn encode_batch(
        &self,
        pairs: &[(&PointCloud, &PointCloud)],
        heads: bool,
        keep_cache: bool,
    ) -> Result<BatchEncoding> {
        let batch = pairs.len();
        let points = pairs.first().map(|p| p.0.len()).unwrap_or(0);
        let mut input = Vec::with_capacity(batch * points * PAIRED_POINT_DIM);
        for (cur, goal) in pairs {
            if cur.len() != points {
                return Err(NnError::ShapeMismatch {
                    expected: points,
                    got: cur.len(),
                });
            }
            pair_points(cur, goal, &mut input)?;
        }
        self.encode_paired(&input, batch, points, heads, keep_cache)
    }

    /// Like [`EncoderModel::encode_batch`] on pre-paired `batch·points×12` rows.
    pub fn encode_paired(
        &self,
        input: &[f64],
        batch: usize,
        points: usize,
        heads: bool,
        keep_cache: bool,
    ) -> Result<BatchEncoding> {
        if points == 0 {
            return Err(NnError::ShapeMismatch {
                expected: 1,
                got: 0,
            });
        }
        let rows = batch * points;
        let (top, trunk_acts) = if keep_cache {
            let acts = self.trunk.forward(input, rows)?;
            (None, Some(acts))
        } else {
            (Some(self.trunk.predict(input, rows)?), None)
        };
        let top: &[f64] = match (&top, &trunk_acts) {
            (Some(t), _) => t,
            (None, Some(a)) => a.output(),
            _ => unreachable!(),
        };
        let mut features = vec![0.0; batch * FEATURE_DIM];
        let mut argmax = if keep_cache {
            vec![0usize; batch * FEATURE_DIM]
        } else {
            Vec::new()
        };
        for b in 0..batch {
            let feat = &mut features[b * FEATURE_DIM..(b + 1) * FEATURE_DIM];
            let base = b * points;
            feat.copy_from_slice(&top[base * FEATURE_DIM..(base + 1) * FEATURE_DIM]);
            if keep_cache {
                argmax[b * FEATURE_DIM..(b + 1) * FEATURE_DIM].fill(base);
            }
            for i in 1..points {
                let row = &top[(base + i) * FEATURE_DIM..(base + i + 1) * FEATURE_DIM];
                for j in 0..FEATURE_DIM {
                    if row[j] > feat[j] {
                        feat[j] = row[j];
                        if keep_cache {
                            argmax[b * FEATURE_DIM + j] = base + i;
                        }
                    }
                }
            }
        }
        let (class_logits, rot6) = if heads {
            (
                self.class_head.predict(&features, batch)?,
                self.rot_head.predict(&features, batch)?,
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(BatchEncoding {
            batch,
            points,
            class_logits,
            rot6,
            features,
            trunk_acts,
            argmax,
        })
    }

    /// Accumulates gradients for the given output gradients into `grads`.
    /// Any of the three output gradients may be omitted.
    pub fn backward(
        &self,
        enc: &BatchEncoding,
        grad_logits: Option<&[f64]>,
        grad_rot6: Option<&[f64]>,
        grad_features: Option<&[f64]>,
        grads: &mut EncoderGrads,
    ) -> Result<()> {
        let acts = enc
            .trunk_acts
            .as_ref()
            .ok_or_else(|| NnError::Checkpoint("encoding was made without a cache".into()))?;
        let batch = enc.batch;
        let mut pooled = match grad_features {
            Some(g) => {
                if g.len() != batch * FEATURE_DIM {
                    return Err(NnError::ShapeMismatch {
                        expected: batch * FEATURE_DIM,
                        got: g.len(),
                    });
                }
                g.to_vec()
            }
            None => vec![0.0; batch * FEATURE_DIM],
        };
        let head_input = Activations {
            batch,
            values: vec![enc.features.clone(), Vec::new()],
        };
        if let Some(g) = grad_logits {
            let d = self
                .class_head
                .backward(&head_input, g, &mut grads.class_head)?;
            add_into(&mut pooled, &d);
        }
        if let Some(g) = grad_rot6 {
            let d = self.rot_head.backward(&head_input, g, &mut grads.rot_head)?;
            add_into(&mut pooled, &d);
        }
        self.trunk_backward(acts, &enc.argmax, &pooled, &mut grads.trunk)
    }

    /// The max-pool routes each channel's gradient to one row only, so the
    /// last trunk layer is handled sparsely.
    fn trunk_backward(
        &self,
        acts: &Activations,
        argmax: &[usize],
        pooled: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let last = self.trunk.layers().len() - 1;
        let width_in = self.trunk.layers()[last].input;
        let x = &acts.values[last];
        let y = acts.output();
        let w = self.trunk.weights(last);
        let (w0, b0, _) = self.trunk.layer_range(last);
        let mut dx = vec![0.0; acts.batch * width_in];
        // Collect (row, channel, dz) triples, grouped per winning row so the
        // weight-gradient update becomes a small dense product.
        let mut active: Vec<(usize, usize, f64)> = Vec::new();
        for (idx, &g) in pooled.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let j = idx % FEATURE_DIM;
            let r = argmax[idx];
            if y[r * FEATURE_DIM + j] > 0.0 {
                active.push((r, j, g));
            }
        }
        for &(r, j, dz) in &active {
            let xr = &x[r * width_in..(r + 1) * width_in];
            let dxr = &mut dx[r * width_in..(r + 1) * width_in];
            for k in 0..width_in {
                grad[w0 + k * FEATURE_DIM + j] += dz * xr[k];
                dxr[k] += dz * w[k * FEATURE_DIM + j];
            }
            grad[b0 + j] += dz;
        }
        if last == 0 {
            return Ok(());
        }
        self.trunk.backward_from(acts, last, dx, grad).map(|_| ())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::to_string(&EncoderMeta {
            classes: self.classes(),
            frozen: self.frozen,
        })
        .expect("meta serializes");
        let mut ck = Checkpoint::new(COMPONENT, meta);
        ck.push(CheckpointEntry::net("trunk", &self.trunk));
        ck.push(CheckpointEntry::net("class_head", &self.class_head));
        ck.push(CheckpointEntry::net("rot_head", &self.rot_head));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_component(COMPONENT)?;
        let meta: EncoderMeta = serde_json::from_str(&ck.meta)
            .map_err(|e| NnError::Checkpoint(format!("encoder meta: {e}")))?;
        let trunk = ck.net("trunk")?;
        let class_head = ck.net("class_head")?;
        let rot_head = ck.net("rot_head")?;
        if trunk.input_width() != PAIRED_POINT_DIM
            || trunk.output_width() != FEATURE_DIM
            || class_head.input_width() != FEATURE_DIM
            || class_head.output_width() != meta.classes
            || rot_head.input_width() != FEATURE_DIM
            || rot_head.output_width() != 6
        {
            return Err(NnError::Checkpoint("encoder layer shapes are inconsistent".into()));
        }
        Ok(Self {
            trunk,
            class_head,
            rot_head,
            frozen: meta.frozen,
        })
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{cross_entropy, grad_check};
    use crate::rotmath::{project_to_so3, project_to_so3_backward, rotation_loss, RotMat};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use crate::nn::gemm;

    fn dense_last_layer_grad(model: &EncoderModel, acts: &Activations, dy: &[f64]) -> Vec<f64> {
        let last = model.trunk.layers().len() - 1;
        let n_in = model.trunk.layers()[last].input;
        let mut dw = vec![0.0; n_in * FEATURE_DIM];
        gemm(
            n_in,
            acts.batch,
            FEATURE_DIM,
            &acts.values[last],
            (1, n_in),
            dy,
            (FEATURE_DIM, 1),
            &mut dw,
            0.0,
        );
        dw
    }

    fn cloud(n: usize, rng: &mut ChaCha8Rng) -> PointCloud {
        let mut v = || [rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5];
        let points = (0..n).map(|_| v()).collect();
        let normals = (0..n).map(|_| v()).collect();
        PointCloud { points, normals }
    }

    fn small_model(seed: u64, classes: usize) -> EncoderModel {
        EncoderModel::new(&[16, 24, FEATURE_DIM], classes, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
    }

    #[test]
    fn feature_width_and_default_trunk() {
        let m = EncoderModel::new(&DEFAULT_TRUNK, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.trunk_widths(), vec![64, 256, 512]);
        assert!(EncoderModel::new(&[64, 256], 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn permutation_and_duplication_invariance() {
        let m = small_model(1, 3);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let cur = cloud(9, &mut r);
        let goal = cloud(9, &mut r);
        let base = pointnet_encode(&m, &cur, &goal).unwrap();
        let order = [4, 2, 8, 0, 1, 7, 3, 6, 5];
        let perm = pointnet_encode(&m, &cur.permuted(&order), &goal.permuted(&order)).unwrap();
        assert_eq!(base.feature, perm.feature);
        assert_eq!(base.class_logits, perm.class_logits);
        assert_eq!(base.rot6, perm.rot6);
        let dup: Vec<usize> = (0..9).chain(0..9).collect();
        let twice = pointnet_encode(&m, &cur.permuted(&dup), &goal.permuted(&dup)).unwrap();
        assert_eq!(base.feature, twice.feature);
    }

    #[test]
    fn mismatched_clouds_are_rejected() {
        let m = small_model(1, 3);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            pointnet_encode(&m, &cloud(5, &mut r), &cloud(6, &mut r)),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn batch_matches_single_pairs() {
        let m = small_model(3, 2);
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let a = (cloud(7, &mut r), cloud(7, &mut r));
        let b = (cloud(7, &mut r), cloud(7, &mut r));
        let both = m.encode_batch(&[(&a.0, &a.1), (&b.0, &b.1)], true, false).unwrap();
        let sa = pointnet_encode(&m, &a.0, &a.1).unwrap();
        let sb = pointnet_encode(&m, &b.0, &b.1).unwrap();
        assert_eq!(&both.features[..FEATURE_DIM], sa.feature.as_slice());
        assert_eq!(&both.features[FEATURE_DIM..], sb.feature.as_slice());
        assert_eq!(&both.rot6[6..], &sb.rot6);
    }

    fn encoder_loss(
        m: &EncoderModel,
        pairs: &[(PointCloud, PointCloud)],
        labels: &[usize],
        targets: &[RotMat],
        alpha: f64,
    ) -> (f64, EncoderGrads) {
        let refs: Vec<_> = pairs.iter().map(|(a, b)| (a, b)).collect();
        let enc = m.encode_batch(&refs, true, true).unwrap();
        let c = m.classes();
        let mut loss = 0.0;
        let mut gl = vec![0.0; enc.class_logits.len()];
        let mut gr = vec![0.0; enc.rot6.len()];
        for i in 0..pairs.len() {
            let (l, g) = cross_entropy(&enc.class_logits[i * c..(i + 1) * c], labels[i]).unwrap();
            loss += l;
            gl[i * c..(i + 1) * c].copy_from_slice(&g);
            let six: [f64; 6] = enc.rot6[i * 6..(i + 1) * 6].try_into().unwrap();
            let rm = project_to_so3(&six).unwrap();
            let (lr, g9) = rotation_loss(rm.as_array(), &targets[i]);
            loss += alpha * lr;
            let g6 = project_to_so3_backward(&six, &g9).unwrap();
            for k in 0..6 {
                gr[i * 6 + k] = alpha * g6[k];
            }
        }
        let mut grads = EncoderGrads::zeros(m);
        m.backward(&enc, Some(&gl), Some(&gr), None, &mut grads).unwrap();
        (loss, grads)
    }

    #[test]
    fn encoder_loss_gradient_matches_finite_differences() {
        let base = small_model(5, 3);
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let pairs: Vec<_> = (0..3).map(|_| (cloud(8, &mut r), cloud(8, &mut r))).collect();
        let labels = [0, 2, 1];
        let targets: Vec<RotMat> = (0..3)
            .map(|_| crate::rotmath::random_rotation_so3(&mut r).to_matrix())
            .collect();
        let n_trunk = base.trunk.param_count();
        let n_class = base.class_head.param_count();
        let flat: Vec<f64> = [base.trunk.params(), base.class_head.params(), base.rot_head.params()]
            .concat();
        let loss = |p: &[f64]| {
            let mut m = base.clone();
            m.trunk.params_mut().copy_from_slice(&p[..n_trunk]);
            m.class_head
                .params_mut()
                .copy_from_slice(&p[n_trunk..n_trunk + n_class]);
            m.rot_head.params_mut().copy_from_slice(&p[n_trunk + n_class..]);
            let (l, g) = encoder_loss(&m, &pairs, &labels, &targets, 1.0);
            (l, g.flat())
        };
        let err = grad_check(loss, &flat, 300, &mut r);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn sparse_pool_backward_matches_dense() {
        let m = small_model(7, 2);
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let (a, b) = (cloud(6, &mut r), cloud(6, &mut r));
        let enc = m.encode_batch(&[(&a, &b)], false, true).unwrap();
        let g: Vec<f64> = (0..FEATURE_DIM).map(|_| r.random::<f64>() - 0.5).collect();
        let mut grads = EncoderGrads::zeros(&m);
        m.backward(&enc, None, None, Some(&g), &mut grads).unwrap();
        let acts = enc.trunk_acts.as_ref().unwrap();
        let mut dy = vec![0.0; 6 * FEATURE_DIM];
        for j in 0..FEATURE_DIM {
            let row = enc.argmax[j];
            if acts.output()[row * FEATURE_DIM + j] > 0.0 {
                dy[row * FEATURE_DIM + j] = g[j];
            }
        }
        let dense = dense_last_layer_grad(&m, acts, &dy);
        let (w0, b0, _) = m.trunk.layer_range(2);
        for (s, d) in grads.trunk[w0..b0].iter().zip(&dense) {
            assert!((s - d).abs() < 1e-14);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = small_model(9, 4);
        m.freeze();
        let bytes = m.to_checkpoint().to_bytes();
        let back = EncoderModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.param_hash(), m.param_hash());
        assert_eq!(back.to_checkpoint().to_bytes(), bytes);
    }
}
