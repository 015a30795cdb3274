//! The end-to-end network: per-view tokenisation and encoding with fusion
//! rounds between layers, per-view sequence pooling, a global encoder over
//! the pooled vectors, a final pooling step and a linear classifier.

pub mod checkpoint;
mod config;

pub use config::{default_labels, FusionLayers, ModelConfig, DEFAULT_LABELS};

use crate::encoder::{self, linear_drop_schedule, EncoderStack};
use crate::error::{Error, Result};
use crate::fusion::{self, CvafParams, SeqPoolParams};
use crate::numerics::{Grads, Rng, Scalar, Tape, Tensor, Var};
use crate::params::{init, Bound, Linear, ParamId, ParamStore};
use crate::tokenizer::{ascending_view_order, make_views, TubeletEmbedder};

/// Stream tags for stochastic depth; views use `VIEW_STREAM + view index`.
const VIEW_STREAM: u64 = 0x1000;
const GLOBAL_STREAM: u64 = 0x2000;

/// Sizes the model commits to at construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeLedger {
    /// Token count per view, ascending.
    pub view_tokens: Vec<usize>,
    /// Length of the global encoder's input sequence.
    pub global_len: usize,
    pub logits: usize,
    pub params: usize,
}

impl ShapeLedger {
    pub fn of(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut view_tokens = config
            .views
            .iter()
            .map(|t| t.token_count(&config.geometry))
            .collect::<Result<Vec<_>>>()?;
        view_tokens.sort_unstable();
        Ok(Self {
            global_len: view_tokens.len(),
            view_tokens,
            logits: config.classes,
            params: count_params(config)?,
        })
    }
}

/// Closed-form scalar parameter count of the model built from `config`.
pub fn count_params(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let d = config.d;
    let v = config.views.len();
    let mut total = 0;
    for t in &config.views {
        let n = t.token_count(&config.geometry)?;
        total += t.volume(config.geometry.channels) * d + d + n * d; // embedder
        total += d; // pooling
    }
    total += v * config.view_layers * config.view_stack().layer_param_count();
    let fused = config.fusion_layers.indices(config.view_layers).len();
    total += fused * v.saturating_sub(1) * CvafParams::param_count(d);
    total += v * d; // view-position embeddings
    total += config.global_layers * config.global_stack().layer_param_count();
    total += d; // global pooling
    total += d * config.classes + config.classes;
    Ok(total)
}

#[derive(Clone, Debug)]
struct Layout {
    embedders: Vec<TubeletEmbedder>,
    stacks: Vec<EncoderStack>,
    pools: Vec<SeqPoolParams>,
    /// `(layer, params per adjacent pair)` for each fused layer.
    fusion: Vec<(usize, Vec<CvafParams>)>,
    order: Vec<usize>,
    view_pos: ParamId,
    global: EncoderStack,
    global_pool: SeqPoolParams,
    head: Linear,
}

impl Layout {
    fn build<S: Scalar>(config: &ModelConfig, store: &mut ParamStore<S>, rng: &mut Rng) -> Result<Self> {
        let d = config.d;
        let view_cfgs = config.view_configs();
        let drops = linear_drop_schedule(config.view_layers, config.drop_path);
        let mut embedders = Vec::new();
        let mut stacks = Vec::new();
        let mut pools = Vec::new();
        for (i, vc) in view_cfgs.iter().enumerate() {
            embedders.push(TubeletEmbedder::init(
                store,
                &format!("view{i}.embed"),
                vc,
                &config.geometry,
                rng,
            )?);
            stacks.push(EncoderStack::init(
                store,
                &format!("view{i}"),
                &config.view_stack(),
                &drops,
                rng,
            ));
            pools.push(SeqPoolParams::init(store, &format!("view{i}.pool"), d, rng));
        }
        let pairs = config.views.len().saturating_sub(1);
        let fusion = config
            .fusion_layers
            .indices(config.view_layers)
            .into_iter()
            .map(|l| {
                let ps = (0..pairs)
                    .map(|j| CvafParams::init(store, &format!("fusion.layer{l}.pair{j}"), d, rng))
                    .collect();
                (l, ps)
            })
            .collect();
        let view_pos = store.add(
            "global.view_pos",
            init::normal(rng, &[config.views.len(), d], 0.02),
        );
        let global = EncoderStack::init(
            store,
            "global",
            &config.global_stack(),
            &vec![0.0; config.global_layers],
            rng,
        );
        let global_pool = SeqPoolParams::init(store, "global.pool", d, rng);
        let head = Linear::init(store, "head", d, config.classes, rng);
        Ok(Self {
            embedders,
            stacks,
            pools,
            fusion,
            order: ascending_view_order(&view_cfgs, &config.geometry)?,
            view_pos,
            global,
            global_pool,
            head,
        })
    }
}

/// Predicted class and softmax probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
}

/// Argmax with ties going to the lowest index, plus softmax probabilities.
pub fn predict_from_logits(logits: &[f64]) -> Prediction {
    let mut class = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[class] {
            class = i;
        }
    }
    let max = logits[class];
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Prediction {
        class,
        probs: exps.into_iter().map(|e| e / total).collect(),
    }
}

/// Loss, logits and per-parameter gradients of one clip.
#[derive(Clone, Debug)]
pub struct SampleGrad<S: Scalar> {
    pub loss: S,
    pub logits: Vec<S>,
    pub grads: Vec<Tensor<S>>,
}

#[derive(Clone, Debug)]
pub struct Model<S: Scalar> {
    config: ModelConfig,
    params: ParamStore<S>,
    layout: Layout,
    ledger: ShapeLedger,
}

impl<S: Scalar> Model<S> {
    /// Builds and initialises a model; every parameter draws from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let ledger = ShapeLedger::of(&config)?;
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, &mut params, &mut Rng::new(seed))?;
        assert_eq!(
            params.numel(),
            ledger.params,
            "closed-form parameter count disagrees with instantiated tensors"
        );
        assert_eq!(layout.order.len(), ledger.global_len);
        Ok(Self {
            config,
            params,
            layout,
            ledger,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn ledger(&self) -> &ShapeLedger {
        &self.ledger
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    /// Same architecture with the given parameters (names and shapes must
    /// match).
    pub fn with_params(&self, params: ParamStore<S>) -> Result<Self> {
        if params.names() != self.params.names() {
            let name = self
                .params
                .names()
                .iter()
                .zip(params.names())
                .find(|(a, b)| a != b)
                .map(|(a, _)| a.clone())
                .unwrap_or_else(|| "<count>".into());
            return Err(Error::CheckpointMismatch {
                name,
                detail: "parameter layout differs".into(),
            });
        }
        for ((name, a), b) in self.params.iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::CheckpointMismatch {
                    name: name.to_string(),
                    detail: format!("shape {:?} vs {:?}", a.shape(), b.shape()),
                });
            }
        }
        Ok(Self {
            params,
            ..self.clone()
        })
    }

    /// Same architecture at another precision.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
            ledger: self.ledger.clone(),
        }
    }

    /// Records the forward pass on `p`'s tape and returns the `1 × C` logits.
    pub fn forward_on<'t>(
        &self,
        p: &Bound<'t, S>,
        clip: &Tensor<S>,
        rng: &Rng,
        training: bool,
    ) -> Result<Var<'t, S>> {
        let geom = self.config.geometry;
        if clip.shape() != geom.shape() {
            return Err(Error::Config(format!(
                "clip shape {:?} does not match configured geometry {geom}",
                clip.shape()
            )));
        }
        let l = &self.layout;
        let mut views = make_views(p, clip, &self.config.view_configs(), &l.embedders)?;
        let mut fusion_rounds = l.fusion.iter().peekable();
        for layer in 0..self.config.view_layers {
            for view in views.iter_mut() {
                let i = view.view_index;
                let mut stream = rng.derive2(VIEW_STREAM + i as u64, layer as u64);
                let z = encoder::encoder_layer(
                    p,
                    view.tokens,
                    &l.stacks[i].layers[layer],
                    &mut stream,
                    training,
                );
                *view = view.with_tokens(z);
            }
            if let Some((_, pairs)) = fusion_rounds.next_if(|(fl, _)| *fl == layer) {
                views = fusion::fuse_all(p, &views, pairs)?;
            }
        }
        let pooled: Vec<_> = views
            .iter()
            .map(|v| fusion::sequence_pool(p, v.tokens, &l.pools[v.view_index]))
            .collect();
        let seq = Var::concat_rows(&pooled).add(p.var(l.view_pos));
        let seq = encoder::run_stack(p, seq, &l.global, &rng.derive(GLOBAL_STREAM), training);
        let rep = fusion::sequence_pool(p, seq, &l.global_pool);
        Ok(l.head.forward(p, rep))
    }

    /// Logits of one clip.
    pub fn logits(&self, clip: &Tensor<S>, rng: &Rng, training: bool) -> Result<Vec<S>> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let out = self.forward_on(&p, clip, rng, training)?;
        let logits = out.value().data().to_vec();
        Ok(logits)
    }

    /// Inference-mode class and probabilities.
    pub fn predict(&self, clip: &Tensor<S>) -> Result<Prediction> {
        let logits = self.logits(clip, &Rng::new(0), false)?;
        let logits: Vec<f64> = logits.iter().map(|x| x.as_f64()).collect();
        Ok(predict_from_logits(&logits))
    }

    /// Smoothed cross-entropy of one clip and its gradient w.r.t. every
    /// parameter, in store order.
    pub fn loss_and_grad(
        &self,
        clip: &Tensor<S>,
        target: usize,
        smoothing: f64,
        rng: &Rng,
        training: bool,
    ) -> Result<SampleGrad<S>> {
        if target >= self.config.classes {
            return Err(Error::Index {
                what: "class target",
                index: target,
                len: self.config.classes,
            });
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let logits = self.forward_on(&p, clip, rng, training)?;
        let loss = logits.smoothed_cross_entropy(target, S::lit(smoothing));
        let grads: Grads<S> = tape.backward(loss);
        let loss_value = loss.value().data()[0];
        Ok(SampleGrad {
            loss: loss_value,
            logits: logits.value().data().to_vec(),
            grads: p.vars().iter().map(|&v| grads.wrt(v)).collect(),
        })
    }
}
