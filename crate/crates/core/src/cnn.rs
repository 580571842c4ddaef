//! The interpreted network: conv-pool-conv-pool-fc1-dropout-fc2, its
//! stochastic training loop, and fc1 activation export.

use log::info;

use crate::dataset::{next_batch, BatchPlan, Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, conv2d_backward, conv2d_forward, dropout_apply, fc_backward, fc_forward,
    maxpool_backward, maxpool_forward, relu, relu_backward, softmax_cross_entropy, AdamConfig,
    DropoutMask, Gradients, LayerParams, Pooled, Tensor,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub image_side: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel_size: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub fc1_neurons: usize,
    pub classes: usize,
    pub keep_probability: f64,
    /// Number of optimizer steps (mini-batches), not full passes.
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            image_side: 28,
            conv1_filters: 32,
            conv2_filters: 64,
            kernel_size: 5,
            pool_window: 2,
            pool_stride: 2,
            fc1_neurons: 128,
            classes: NUM_CLASSES,
            keep_probability: 0.5,
            steps: 1000,
            batch_size: 50,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

impl CnnConfig {
    pub fn pooled_side(&self) -> usize {
        self.image_side / self.pool_stride / self.pool_stride
    }

    pub fn fc1_inputs(&self) -> usize {
        self.pooled_side() * self.pooled_side() * self.conv2_filters
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("image_side", self.image_side),
            ("conv1_filters", self.conv1_filters),
            ("conv2_filters", self.conv2_filters),
            ("kernel_size", self.kernel_size),
            ("pool_window", self.pool_window),
            ("pool_stride", self.pool_stride),
            ("fc1_neurons", self.fc1_neurons),
            ("classes", self.classes),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.keep_probability > 0.0 && self.keep_probability <= 1.0) {
            return Err(Error::Config(format!(
                "keep probability {} not in (0, 1]",
                self.keep_probability
            )));
        }
        if self.image_side % (self.pool_stride * self.pool_stride) != 0 {
            return Err(Error::Config(format!(
                "image side {} does not pool evenly twice",
                self.image_side
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub conv1: LayerParams,
    pub conv2: LayerParams,
    pub fc1: LayerParams,
    pub fc2: LayerParams,
    pub config: CnnConfig,
    /// Mini-batch loss recorded at every optimizer step.
    pub training_log: Vec<f64>,
}

/// Logits plus post-ReLU, pre-dropout fc1 outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub fc1_activations: Tensor,
}

struct Cache {
    input: Tensor,
    conv1: Tensor,
    pool1: Pooled,
    pool1_input_shape: Vec<usize>,
    conv2: Tensor,
    pool2: Pooled,
    pool2_input_shape: Vec<usize>,
    flat: Tensor,
    fc1: Tensor,
    hidden: Tensor,
    mask: Option<DropoutMask>,
    dropped: Tensor,
    logits: Tensor,
}

impl CnnModel {
    /// Fresh parameters drawn from the config's seed.
    pub fn init(config: CnnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed::mix(config.seed, seed::STREAM_INIT));
        let k = config.kernel_size;
        let conv1 = LayerParams::conv(k, k, 1, config.conv1_filters, &mut rng);
        let conv2 = LayerParams::conv(k, k, config.conv1_filters, config.conv2_filters, &mut rng);
        let fc1 = LayerParams::dense(config.fc1_inputs(), config.fc1_neurons, &mut rng);
        let fc2 = LayerParams::dense(config.fc1_neurons, config.classes, &mut rng);
        Ok(Self { conv1, conv2, fc1, fc2, config, training_log: Vec::new() })
    }

    pub fn layers(&self) -> [&LayerParams; 4] {
        [&self.conv1, &self.conv2, &self.fc1, &self.fc2]
    }

    /// CRC32 over every parameter's little-endian bit pattern.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for layer in self.layers() {
            for v in layer.weights.data().iter().chain(layer.biases.data()) {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let (_, h, w, c) = batch.nhwc()?;
        let side = self.config.image_side;
        if (h, w, c) != (side, side, 1) {
            return Err(Error::ShapeMismatch(format!(
                "expected N x {side} x {side} x 1 images, got {:?}",
                batch.shape()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, batch: &Tensor, mask: Option<DropoutMask>) -> Result<Cache> {
        self.check_input(batch)?;
        let cfg = &self.config;
        let conv1 = conv2d_forward(batch, &self.conv1)?;
        let pool1 = maxpool_forward(&relu(&conv1), cfg.pool_window, cfg.pool_stride)?;
        let conv2 = conv2d_forward(&pool1.output, &self.conv2)?;
        let pool2 = maxpool_forward(&relu(&conv2), cfg.pool_window, cfg.pool_stride)?;
        let n = batch.shape()[0];
        let flat = pool2.output.clone().reshape(vec![n, cfg.fc1_inputs()])?;
        let fc1 = fc_forward(&flat, &self.fc1)?;
        let hidden = relu(&fc1);
        let dropped = match &mask {
            Some(m) => dropout_apply(&hidden, m, true)?,
            None => hidden.clone(),
        };
        let logits = fc_forward(&dropped, &self.fc2)?;
        Ok(Cache {
            input: batch.clone(),
            pool1_input_shape: conv1.shape().to_vec(),
            conv1,
            pool1,
            pool2_input_shape: conv2.shape().to_vec(),
            conv2,
            pool2,
            flat,
            fc1,
            hidden,
            mask,
            dropped,
            logits,
        })
    }

    /// Runs the network on an `N x 28 x 28 x 1` batch. With `training` set,
    /// fc1 outputs pass through a dropout mask drawn from `dropout_seed`
    /// before the readout layer; the returned activations are always the
    /// pre-dropout values.
    pub fn forward(&self, batch: &Tensor, training: bool, dropout_seed: u64) -> Result<ForwardOutput> {
        let mask = self.training_mask(batch, training, dropout_seed)?;
        let cache = self.forward_cached(batch, mask)?;
        Ok(ForwardOutput { logits: cache.logits, fc1_activations: cache.hidden })
    }

    fn training_mask(&self, batch: &Tensor, training: bool, dropout_seed: u64) -> Result<Option<DropoutMask>> {
        if !training {
            return Ok(None);
        }
        let n = batch.shape().first().copied().unwrap_or(0);
        DropoutMask::sample(&[n, self.config.fc1_neurons], self.config.keep_probability, dropout_seed)
            .map(Some)
    }

    /// Loss and parameter gradients for one batch, in layer order
    /// conv1, conv2, fc1, fc2.
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor,
        labels: &[u8],
        training: bool,
        dropout_seed: u64,
    ) -> Result<(f64, [Gradients; 4])> {
        let mask = self.training_mask(batch, training, dropout_seed)?;
        let c = self.forward_cached(batch, mask)?;
        let (loss, dlogits) = softmax_cross_entropy(&c.logits, labels)?;
        let (d_dropped, g_fc2) = fc_backward(&dlogits, &c.dropped, &self.fc2)?;
        let d_hidden = match &c.mask {
            Some(m) => dropout_apply(&d_dropped, m, true)?,
            None => d_dropped,
        };
        let d_fc1 = relu_backward(&d_hidden, &c.fc1)?;
        let (d_flat, g_fc1) = fc_backward(&d_fc1, &c.flat, &self.fc1)?;
        let d_pool2 = d_flat.reshape(c.pool2.output.shape().to_vec())?;
        let d_act2 = maxpool_backward(&d_pool2, &c.pool2.argmax, &c.pool2_input_shape)?;
        let d_conv2 = relu_backward(&d_act2, &c.conv2)?;
        let (d_pool1, g_conv2) = conv2d_backward(&d_conv2, &c.pool1.output, &self.conv2)?;
        let d_act1 = maxpool_backward(&d_pool1, &c.pool1.argmax, &c.pool1_input_shape)?;
        let d_conv1 = relu_backward(&d_act1, &c.conv1)?;
        let (_, g_conv1) = conv2d_backward(&d_conv1, &c.input, &self.conv1)?;
        Ok((loss, [g_conv1, g_conv2, g_fc1, g_fc2]))
    }

    /// One Adam step on a mini-batch; returns the batch loss.
    pub fn train_step(&mut self, batch: &Tensor, labels: &[u8], dropout_seed: u64) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(batch, labels, true, dropout_seed)?;
        let adam = AdamConfig::with_learning_rate(self.config.learning_rate);
        let [g1, g2, g3, g4] = grads;
        adam_step(&mut self.conv1, &g1, &adam)?;
        adam_step(&mut self.conv2, &g2, &adam)?;
        adam_step(&mut self.fc1, &g3, &adam)?;
        adam_step(&mut self.fc2, &g4, &adam)?;
        self.training_log.push(loss);
        Ok(loss)
    }

    /// Inference-mode logits for every example, `batch_size` at a time.
    pub fn predict_logits(&self, data: &Dataset, batch_size: usize) -> Result<Tensor> {
        let (_, logits) = self.run_inference(data, batch_size, false)?;
        Ok(logits)
    }

    fn run_inference(&self, data: &Dataset, batch_size: usize, want_hidden: bool) -> Result<(Vec<f64>, Tensor)> {
        let batch_size = batch_size.max(1);
        let mut logits = Vec::with_capacity(data.len() * self.config.classes);
        let mut hidden = Vec::new();
        let indices: Vec<usize> = (0..data.len()).collect();
        for chunk in indices.chunks(batch_size) {
            let out = self.forward(&data.batch_tensor(chunk), false, 0)?;
            logits.extend_from_slice(out.logits.data());
            if want_hidden {
                hidden.extend_from_slice(out.fc1_activations.data());
            }
        }
        Ok((hidden, Tensor::from_vec(vec![data.len(), self.config.classes], logits)?))
    }
}

/// Trains a fresh model for `config.steps` mini-batches.
pub fn train(config: CnnConfig, data: &Dataset) -> Result<CnnModel> {
    train_with(config, data, |_, _| {})
}

/// As [`train`], calling `on_step(step, loss)` after every update.
pub fn train_with(
    config: CnnConfig,
    data: &Dataset,
    mut on_step: impl FnMut(u64, f64),
) -> Result<CnnModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = CnnModel::init(config)?;
    let cfg = model.config.clone();
    let plan = BatchPlan::new(data.len(), cfg.batch_size.min(data.len()), seed::mix(cfg.seed, seed::STREAM_BATCH));
    let dropout_stream = seed::mix(cfg.seed, seed::STREAM_DROPOUT);
    for step in 0..cfg.steps {
        let batch = next_batch(data, &plan, step)?;
        let loss = model.train_step(&batch.images, &batch.labels, seed::mix(dropout_stream, step))?;
        if (step + 1) % 100 == 0 {
            info!("step {}/{} loss {:.4}", step + 1, cfg.steps, loss);
        }
        on_step(step, loss);
    }
    Ok(model)
}

/// Index of the largest entry per row; ties go to the lowest class.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let (_, width) = logits.rows_cols();
    if width == 0 {
        return Vec::new();
    }
    logits
        .data()
        .chunks_exact(width)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

pub fn accuracy_from_logits(logits: &Tensor, labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = argmax_rows(logits).iter().zip(labels).filter(|(&p, &l)| p == l as usize).count();
    hits as f64 / labels.len() as f64
}

pub const EVAL_BATCH: usize = 100;

/// Fraction of examples whose inference-mode argmax equals the label.
pub fn evaluate(model: &CnnModel, data: &Dataset) -> Result<f64> {
    let logits = model.predict_logits(data, EVAL_BATCH)?;
    Ok(accuracy_from_logits(&logits, data.labels()))
}

/// fc1 outputs laid out neuron-major: row `h` holds neuron `h`'s activation
/// on every instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    neurons: usize,
    instances: usize,
    values: Vec<f64>,
    labels: Vec<u8>,
}

impl ActivationMatrix {
    pub fn new(neurons: usize, instances: usize, values: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if values.len() != neurons * instances || labels.len() != instances {
            return Err(Error::ShapeMismatch(format!(
                "{} values and {} labels for {neurons} x {instances}",
                values.len(),
                labels.len()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::ShapeMismatch("activations must be finite and non-negative".into()));
        }
        Ok(Self { neurons, instances, values, labels })
    }

    /// Builds from an instance-major `N x H` buffer.
    pub fn from_instance_major(neurons: usize, rows: &[f64], labels: Vec<u8>) -> Result<Self> {
        let instances = labels.len();
        if rows.len() != neurons * instances {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {instances} instances of width {neurons}",
                rows.len()
            )));
        }
        let mut values = vec![0.0; rows.len()];
        for i in 0..instances {
            for h in 0..neurons {
                values[h * instances + i] = rows[i * neurons + h];
            }
        }
        Self::new(neurons, instances, values, labels)
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn instances(&self) -> usize {
        self.instances
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn neuron(&self, h: usize) -> &[f64] {
        &self.values[h * self.instances..(h + 1) * self.instances]
    }

    pub fn get(&self, neuron: usize, instance: usize) -> f64 {
        self.values[neuron * self.instances + instance]
    }

    /// One instance's activations restricted to `neurons`, in that order.
    pub fn project(&self, instance: usize, neurons: &[usize]) -> Vec<f64> {
        neurons.iter().map(|&h| self.get(h, instance)).collect()
    }
}

/// fc1 activations of every example with dropout disabled.
pub fn extract_activations(model: &CnnModel, data: &Dataset, batch_size: usize) -> Result<ActivationMatrix> {
    let (hidden, _) = model.run_inference(data, batch_size, true)?;
    ActivationMatrix::from_instance_major(model.config.fc1_neurons, &hidden, data.labels().to_vec())
}
