//! The two regression networks, assembled from engine layers, plus
//! subject-level inference (median fusion for the sliced 2D path).
//!
//! Both nets share the backbone pattern: blocks of two "same" convolutions
//! with ReLU after each, followed by 2× max pooling, with filter counts
//! doubling per block. The 3D head is GAP → dense(+ReLU) → dropout →
//! dense(1); the 2D head is GAP → dense → dropout → dense(1).

use crate::engine::{
    AdamState, Checkpoint, CheckpointHeader, CheckpointMeta, EngineError, Graph, LrSchedule,
    NodeId, Phase, Real, Tensor, TensorEntry,
};
use crate::nifti::Volume;
use crate::preprocess::Slice;
use crate::rng::{seeded, DOMAIN_INIT};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    BadSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected {expected} slices, got {got}")]
    WrongSliceCount { expected: usize, got: usize },
    #[error("slices belong to different subjects")]
    MixedSubjects,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "brainnet3d")]
    BrainNet3d,
    #[serde(rename = "slicenet2d")]
    SliceNet2d,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::BrainNet3d => write!(f, "brainnet3d"),
            ModelKind::SliceNet2d => write!(f, "slicenet2d"),
        }
    }
}

fn default_input_scale() -> f64 {
    0.04
}

/// Declarative layer stack: filter ladder, head width, dropout, input grid.
///
/// `input_shape` is the spatial tensor shape — `[z, y, x]` for volumes,
/// `[rows, cols]` for slices.
///
/// `input_scale` multiplies raw 0–255 intensities before the first
/// convolution; `output_offset` is added to the scalar output. Training sets
/// the offset to the train-split mean age when it is left at 0, so the head
/// regresses residuals instead of bridging a ~75-year gap from zero init.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub block_filters: Vec<usize>,
    pub head_units: usize,
    pub dropout_p: f64,
    pub input_shape: Vec<usize>,
    #[serde(default = "default_input_scale")]
    pub input_scale: f64,
    #[serde(default)]
    pub output_offset: f64,
}

impl ModelSpec {
    /// Whole-volume net on the 2 mm MNI grid: filters 16/32/64/128,
    /// dense(128) head, dropout 0.5.
    pub fn brainnet3d_default() -> Self {
        Self {
            kind: ModelKind::BrainNet3d,
            block_filters: vec![16, 32, 64, 128],
            head_units: 128,
            dropout_p: 0.5,
            input_shape: vec![91, 109, 91],
            input_scale: default_input_scale(),
            output_offset: 0.0,
        }
    }

    /// Sliced 2D net on center-cropped 86×104 axial slices, dense(1024) head.
    pub fn slicenet2d_default() -> Self {
        Self {
            kind: ModelKind::SliceNet2d,
            block_filters: vec![16, 32, 64, 128],
            head_units: 1024,
            dropout_p: 0.5,
            input_shape: vec![86, 104],
            input_scale: default_input_scale(),
            output_offset: 0.0,
        }
    }

    pub fn spatial_rank(&self) -> usize {
        match self.kind {
            ModelKind::BrainNet3d => 3,
            ModelKind::SliceNet2d => 2,
        }
    }

    fn kernel(&self) -> Vec<usize> {
        vec![3; self.spatial_rank()]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.block_filters.is_empty() {
            return Err(ModelError::BadSpec("block_filters is empty".into()));
        }
        if self.block_filters.windows(2).any(|w| w[1] != 2 * w[0]) || self.block_filters[0] == 0 {
            return Err(ModelError::BadSpec(format!(
                "block_filters must double per block, got {:?}",
                self.block_filters
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::BadSpec(format!("dropout_p {}", self.dropout_p)));
        }
        if self.head_units == 0 {
            return Err(ModelError::BadSpec("head_units must be positive".into()));
        }
        if self.input_shape.len() != self.spatial_rank() || self.input_shape.contains(&0) {
            return Err(ModelError::BadSpec(format!(
                "{} wants a rank-{} input shape, got {:?}",
                self.kind,
                self.spatial_rank(),
                self.input_shape
            )));
        }
        if !(self.input_scale > 0.0) || !self.input_scale.is_finite() {
            return Err(ModelError::BadSpec(format!(
                "input_scale {}",
                self.input_scale
            )));
        }
        if !self.output_offset.is_finite() {
            return Err(ModelError::BadSpec(format!(
                "output_offset {}",
                self.output_offset
            )));
        }
        Ok(())
    }

    /// Spatial extents after each block's pooling stage.
    pub fn spatial_trace(&self) -> Vec<Vec<usize>> {
        let halve = |s: &[usize]| -> Vec<usize> {
            s.iter().map(|&e| if e == 1 { 1 } else { e / 2 }).collect()
        };
        let mut cur = self.input_shape.clone();
        let mut trace = Vec::with_capacity(self.block_filters.len());
        for _ in &self.block_filters {
            cur = halve(&cur);
            trace.push(cur.clone());
        }
        trace
    }

    /// Parameter tensor names and shapes, in construction (= payload) order.
    pub fn parameter_layout(&self) -> Vec<TensorEntry> {
        let k = self.kernel();
        let mut out = Vec::new();
        let mut c_in = 1usize;
        for (bi, &f) in self.block_filters.iter().enumerate() {
            for (ci, cin) in [(1usize, c_in), (2usize, f)] {
                let mut wshape = vec![f, cin];
                wshape.extend_from_slice(&k);
                out.push(TensorEntry {
                    name: format!("block{}.conv{}.weight", bi + 1, ci),
                    shape: wshape,
                });
                out.push(TensorEntry {
                    name: format!("block{}.conv{}.bias", bi + 1, ci),
                    shape: vec![f],
                });
            }
            c_in = f;
        }
        out.push(TensorEntry {
            name: "head.dense1.weight".into(),
            shape: vec![c_in, self.head_units],
        });
        out.push(TensorEntry {
            name: "head.dense1.bias".into(),
            shape: vec![self.head_units],
        });
        out.push(TensorEntry {
            name: "head.dense2.weight".into(),
            shape: vec![self.head_units, 1],
        });
        out.push(TensorEntry {
            name: "head.dense2.bias".into(),
            shape: vec![1],
        });
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameter_layout()
            .iter()
            .map(|e| e.shape.iter().product::<usize>())
            .sum()
    }
}

/// A spec plus its parameter tensors, in [`ModelSpec::parameter_layout`] order.
pub struct Model<T: Real> {
    spec: ModelSpec,
    params: Vec<Tensor<T>>,
}

/// Builds the whole-volume 3D net with seeded He-uniform weights.
pub fn build_brainnet3d<T: Real>(spec: &ModelSpec, seed: u64) -> Result<Model<T>, ModelError> {
    if spec.kind != ModelKind::BrainNet3d {
        return Err(ModelError::BadSpec(format!(
            "build_brainnet3d got kind {}",
            spec.kind
        )));
    }
    Model::build(spec, seed)
}

/// Builds the sliced 2D net with seeded He-uniform weights.
pub fn build_slicenet2d<T: Real>(spec: &ModelSpec, seed: u64) -> Result<Model<T>, ModelError> {
    if spec.kind != ModelKind::SliceNet2d {
        return Err(ModelError::BadSpec(format!(
            "build_slicenet2d got kind {}",
            spec.kind
        )));
    }
    Model::build(spec, seed)
}

impl<T: Real> Model<T> {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = seeded(seed, DOMAIN_INIT, 0);
        let params = spec
            .parameter_layout()
            .into_iter()
            .map(|entry| {
                if entry.name.ends_with(".bias") {
                    Tensor::zeros(entry.shape)
                } else {
                    // fan-in: input features for dense [D, U] weights,
                    // input channels × kernel volume for conv [F, C, k..] weights
                    let fan_in: usize = if entry.shape.len() == 2 {
                        entry.shape[0]
                    } else {
                        entry.shape[1..].iter().product()
                    };
                    Tensor::he_uniform(entry.shape, fan_in, &mut rng)
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            params,
        })
    }

    pub fn from_parts(spec: ModelSpec, params: Vec<Tensor<T>>) -> Result<Self, ModelError> {
        spec.validate()?;
        let layout = spec.parameter_layout();
        if layout.len() != params.len() {
            return Err(ModelError::BadSpec(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for (e, p) in layout.iter().zip(&params) {
            if e.shape != p.shape() {
                return Err(ModelError::ShapeMismatch(format!(
                    "parameter {}: expected {:?}, got {:?}",
                    e.name,
                    e.shape,
                    p.shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Registers every parameter in the graph, returning ids in layout order.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<NodeId> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    /// Multiplies raw intensities by the spec's `input_scale`, in place.
    pub fn scale_input(&self, t: &mut Tensor<T>) {
        let s = T::from_f64(self.spec.input_scale);
        for v in t.data_mut() {
            *v *= s;
        }
    }

    /// Builds the forward graph from `input` (`[N, 1, spatial..]`, already
    /// `input_scale`d) to the `[N, 1]` output, which is in residual units:
    /// callers add the spec's `output_offset` to obtain ages.
    /// `rng` is only consulted for training-phase dropout.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        param_ids: &[NodeId],
        input: NodeId,
        phase: Phase,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, ModelError> {
        let in_shape = g.value(input).shape();
        if in_shape.len() != self.spec.spatial_rank() + 2
            || in_shape[1] != 1
            || in_shape[2..] != self.spec.input_shape
        {
            return Err(ModelError::ShapeMismatch(format!(
                "input {in_shape:?} does not match [N, 1, {:?}]",
                self.spec.input_shape
            )));
        }

        let mut ids = param_ids.iter().copied();
        let mut next = || ids.next().expect("parameter id for every layer");

        let mut x = input;
        for _ in &self.spec.block_filters {
            for _ in 0..2 {
                let w = next();
                let b = next();
                x = g.conv(x, w, b)?;
                x = g.relu(x);
            }
            x = g.maxpool(x)?;
        }
        x = g.global_avg_pool(x)?;

        let w1 = next();
        let b1 = next();
        x = g.dense(x, w1, b1)?;
        if self.spec.kind == ModelKind::BrainNet3d {
            x = g.relu(x);
        }
        if phase == Phase::Train && self.spec.dropout_p > 0.0 {
            let rng = rng
                .as_deref_mut()
                .expect("training forward needs a dropout rng");
            x = g.dropout(x, self.spec.dropout_p, phase, rng)?;
        }
        let w2 = next();
        let b2 = next();
        x = g.dense(x, w2, b2)?;
        Ok(x)
    }

    /// Inference on a stacked batch `[N, 1, spatial..]` of raw 0–255
    /// intensities; dropout off. Returns ages (offset applied).
    pub fn predict_batch(&self, batch: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        let mut scaled = batch.clone();
        self.scale_input(&mut scaled);
        let mut g = Graph::new();
        let input = g.input(scaled);
        let ids = self.bind(&mut g);
        let out = self.forward(&mut g, &ids, input, Phase::Infer, None)?;
        let offset = T::from_f64(self.spec.output_offset);
        Ok(g.value(out).data().iter().map(|&v| v + offset).collect())
    }
}

impl Model<f32> {
    /// Packages the model with optimizer state into the checkpoint container.
    pub fn to_checkpoint(
        &self,
        schedule: LrSchedule,
        adam: &[AdamState<f32>],
        meta: CheckpointMeta,
    ) -> Result<Checkpoint, ModelError> {
        if adam.len() != self.params.len() {
            return Err(ModelError::BadSpec(format!(
                "{} adam states for {} parameters",
                adam.len(),
                self.params.len()
            )));
        }
        let hyper = adam.first().map(|a| (a.beta1, a.beta2, a.epsilon, a.step_count()));
        let (beta1, beta2, epsilon, step) = hyper.unwrap_or((0.9, 0.999, 1e-8, 0));
        Ok(Checkpoint {
            header: CheckpointHeader {
                model: serde_json::to_value(&self.spec)
                    .map_err(|e| ModelError::BadSpec(e.to_string()))?,
                tensors: self.spec.parameter_layout(),
                schedule,
                adam: crate::engine::AdamHyper {
                    beta1: beta1 as f64,
                    beta2: beta2 as f64,
                    epsilon: epsilon as f64,
                    step,
                },
                meta,
            },
            params: self.params.clone(),
            adam_m: adam.iter().map(|a| a.moments().0.to_vec()).collect(),
            adam_v: adam.iter().map(|a| a.moments().1.to_vec()).collect(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Vec<AdamState<f32>>), ModelError> {
        let spec: ModelSpec = serde_json::from_value(ck.header.model.clone())
            .map_err(|e| ModelError::BadSpec(format!("model header: {e}")))?;
        let model = Model::from_parts(spec, ck.params.clone())?;
        let states = ck
            .adam_m
            .iter()
            .zip(&ck.adam_v)
            .map(|(m, v)| {
                AdamState::from_parts(
                    m.clone(),
                    v.clone(),
                    ck.header.adam.step,
                    ck.header.adam.beta1 as f32,
                    ck.header.adam.beta2 as f32,
                    ck.header.adam.epsilon as f32,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((model, states))
    }
}

/// One subject's fused prediction, with the per-slice values kept for the 2D path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectPrediction {
    pub subject_id: String,
    pub predicted_age: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slice_predictions: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_age: Option<f64>,
}

/// Median with the even-count convention: mean of the two central order
/// statistics. Quickselect-based; the test oracle sorts instead.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty set");
    let mut v = values.to_vec();
    let n = v.len();
    let (lo_part, upper, _) = v.select_nth_unstable_by(n / 2, |a, b| a.total_cmp(b));
    if n % 2 == 1 {
        *upper
    } else {
        let lower = lo_part.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + *upper) / 2.0
    }
}

/// Whole-volume inference for the 3D net.
pub fn predict_volume_3d(
    model: &Model<f32>,
    volume: &Volume,
    subject_id: &str,
) -> Result<SubjectPrediction, ModelError> {
    let t = volume.to_tensor();
    if t.shape() != model.spec().input_shape.as_slice() {
        return Err(ModelError::ShapeMismatch(format!(
            "volume grid {:?} vs model input {:?}",
            t.shape(),
            model.spec().input_shape
        )));
    }
    let mut shape = vec![1usize, 1];
    shape.extend_from_slice(t.shape());
    let n = t.len();
    let batch = t.reshape(shape).expect("same element count");
    debug_assert_eq!(batch.len(), n);
    let out = model.predict_batch(&batch)?;
    Ok(SubjectPrediction {
        subject_id: subject_id.to_string(),
        predicted_age: out[0] as f64,
        slice_predictions: None,
        true_age: None,
    })
}

/// Sliced inference for the 2D net: per-slice scalar predictions fused by
/// their median.
pub fn predict_subject_sliced(
    model: &Model<f32>,
    slices: &[Slice],
    expected: usize,
) -> Result<SubjectPrediction, ModelError> {
    if slices.len() != expected || slices.is_empty() {
        return Err(ModelError::WrongSliceCount {
            expected,
            got: slices.len(),
        });
    }
    let subject = &slices[0].subject_id;
    if slices.iter().any(|s| &s.subject_id != subject) {
        return Err(ModelError::MixedSubjects);
    }
    let tensors: Vec<Tensor<f32>> = slices.iter().map(|s| s.to_tensor()).collect();
    for t in &tensors {
        if t.shape() != model.spec().input_shape.as_slice() {
            return Err(ModelError::ShapeMismatch(format!(
                "slice {:?} vs model input {:?}",
                t.shape(),
                model.spec().input_shape
            )));
        }
    }
    let batch = Tensor::stack_batch(&tensors)?;
    let preds: Vec<f64> = model
        .predict_batch(&batch)?
        .into_iter()
        .map(|v| v as f64)
        .collect();
    Ok(SubjectPrediction {
        subject_id: subject.clone(),
        predicted_age: median(&preds),
        slice_predictions: Some(preds),
        true_age: None,
    })
}
