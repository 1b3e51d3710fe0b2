use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, LayerSpec, ParamSlot};
use super::tensor::{Shape, Tensor};
use super::{Mode, NnError, Result};

/// A sequential network mapping `(N, maps, height, width)` inputs to
/// `(N, K, 1, 1)` logits.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    input: [usize; 3],
    n_classes: usize,
    layers: Vec<Layer>,
    cache: Vec<Tensor>,
    aux: Vec<Vec<usize>>,
}

fn tag(index: usize, layer: &Layer) -> impl FnOnce(NnError) -> NnError + '_ {
    move |e| NnError::Layer {
        index,
        kind: layer.spec().kind_name(),
        source: Box::new(e),
    }
}

impl NetworkGraph {
    /// Builds the layers and checks the shape chain ends in `(1, K, 1, 1)`.
    pub fn new(input: [usize; 3], n_classes: usize, specs: &[LayerSpec]) -> Result<Self> {
        let layers = specs.iter().map(Layer::from_spec).collect::<Result<Vec<_>>>()?;
        let net = NetworkGraph {
            input,
            n_classes,
            layers,
            cache: Vec::new(),
            aux: Vec::new(),
        };
        let shapes = net.layer_shapes()?;
        let last = shapes.last().copied().unwrap_or([1, input[0], input[1], input[2]]);
        if last != [1, n_classes, 1, 1] {
            return Err(NnError::Shape(format!(
                "network ends in {last:?}, expected [1, {n_classes}, 1, 1]"
            )));
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.layers.iter().map(|l| l.spec().kind_name()).collect()
    }

    /// Output shape of every layer for a single-sample batch.
    pub fn layer_shapes(&self) -> Result<Vec<Shape>> {
        let mut s = [1, self.input[0], self.input[1], self.input[2]];
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            s = l.output_shape(s).map_err(tag(i, l))?;
            out.push(s);
        }
        Ok(out)
    }

    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.init_with(&mut rng);
    }

    pub fn init_with<R: Rng>(&mut self, rng: &mut R) {
        for l in &mut self.layers {
            l.init(rng);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn layer_param_counts(&self) -> Vec<(&'static str, usize)> {
        self.layers
            .iter()
            .map(|l| (l.spec().kind_name(), l.param_count()))
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, f, h, w] = x.shape();
        if [f, h, w] != self.input {
            return Err(NnError::Shape(format!(
                "input {:?} does not match network input {:?}",
                x.shape(),
                self.input
            )));
        }
        Ok(())
    }

    /// Training-mode forward pass; caches what `backward` needs.
    pub fn forward_train<R: Rng>(&mut self, x: &Tensor, rng: &mut R) -> Result<Tensor> {
        self.check_input(x)?;
        self.cache.clear();
        self.aux = vec![Vec::new(); self.layers.len()];
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let next = layer.forward(&cur, Mode::Train, rng, &mut self.aux[i]);
            let next = match next {
                Ok(t) => t,
                Err(e) => return Err(tag(i, layer)(e)),
            };
            self.cache.push(std::mem::replace(&mut cur, next));
        }
        Ok(cur)
    }

    /// Evaluation-mode forward pass.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            cur = l.infer(&cur).map_err(tag(i, l))?;
        }
        Ok(cur)
    }

    /// Backpropagates the logit gradient of the last `forward_train` call.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Tensor> {
        if self.cache.len() != self.layers.len() {
            return Err(NnError::Config("backward called without a training forward pass".into()));
        }
        let mut g = grad_logits.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &mut self.layers[i];
            g = match layer.backward(&self.cache[i], &g, &self.aux[i]) {
                Ok(t) => t,
                Err(e) => return Err(tag(i, layer)(e)),
            };
        }
        Ok(g)
    }

    pub fn param_slots(&mut self) -> Vec<ParamSlot<'_>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.param_slots(i))
            .collect()
    }

    /// All parameters then buffers per layer, flattened in layer order.
    pub fn state(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            for v in l.params().into_iter().chain(l.buffers()) {
                out.extend_from_slice(v);
            }
        }
        out
    }

    pub fn state_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.params().iter().chain(l.buffers().iter()).map(|v| v.len()).sum::<usize>())
            .sum()
    }

    pub fn load_state(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.state_len() {
            return Err(NnError::Format(format!(
                "state has {} values, network needs {}",
                values.len(),
                self.state_len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            for v in l.state_mut() {
                let n = v.len();
                v.copy_from_slice(&values[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// Rounds all state to single precision so a 32-bit save reloads exactly.
    pub fn round_to_f32(&mut self) {
        for l in &mut self.layers {
            for v in l.state_mut() {
                v.iter_mut().for_each(|x| *x = *x as f32 as f64);
            }
        }
    }

    pub fn apply_max_norm(&mut self, limit: f64) {
        self.layers.iter_mut().for_each(|l| l.apply_max_norm(limit));
    }
}
