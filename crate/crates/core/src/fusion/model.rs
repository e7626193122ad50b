use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::Batch;
use super::spec::{Mode, ModelSpec, QuerySide, Strategy};
use super::FusionError;
use crate::autodiff::{AutodiffError, ParamId, ParamSet, Tape, Tensor, Var};
use crate::gnn::{stack_param_count, GnnStack};
use crate::graph::TAU;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    fn new(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: params.add_glorot(format!("{name}.w"), fan_in, fan_out, rng),
            b: params.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out])),
        }
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, AutodiffError> {
        let h = tape.matmul(x, vars[self.w.0])?;
        tape.add(h, vars[self.b.0])
    }
}

/// Dense layers, each followed by ReLU and dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub dropout: f64,
    pub output_dim: usize,
}

impl Mlp {
    fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        sizes: &[usize],
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut dim = in_dim;
        let layers = sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let d = Dense::new(params, &format!("{name}.{i}"), dim, s, rng);
                dim = s;
                d
            })
            .collect();
        Self {
            layers,
            dropout,
            output_dim: dim,
        }
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var, train: bool) -> Result<Var, AutodiffError> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, vars, h)?;
            h = tape.relu(h)?;
            h = tape.dropout(h, self.dropout, train)?;
        }
        Ok(h)
    }
}

/// Query, key and value projections shared by both modalities' tokens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionBlock {
    /// `[token_width, key_dim]`
    pub wq: ParamId,
    /// `[token_width, key_dim]`
    pub wk: ParamId,
    /// `[token_width, token_width]`
    pub wv: ParamId,
    pub key_dim: usize,
    pub token_width: usize,
}

impl AttentionBlock {
    pub fn new(params: &mut ParamSet, name: &str, token_width: usize, key_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            wq: params.add_glorot(format!("{name}.wq"), token_width, key_dim, rng),
            wk: params.add_glorot(format!("{name}.wk"), token_width, key_dim, rng),
            wv: params.add_glorot(format!("{name}.wv"), token_width, token_width, rng),
            key_dim,
            token_width,
        }
    }
}

fn project(tape: &mut Tape, tokens: Var, w: Var) -> Result<Var, AutodiffError> {
    let shape = tape.value(tokens).shape().to_vec();
    let (b, n, m) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(tokens, &[b * n, m])?;
    let out = tape.matmul(flat, w)?;
    let width = tape.value(out).cols();
    tape.reshape(out, &[b, n, width])
}

/// `softmax(Q K^T / sqrt(d_k)) V` per instance. `query` is `[b, nq, m]`,
/// `kv` is `[b, nk, m]`; the result is `[b, nq, m]`.
pub fn cross_attention(
    tape: &mut Tape,
    vars: &[Var],
    query: Var,
    kv: Var,
    block: &AttentionBlock,
) -> Result<Var, FusionError> {
    if block.key_dim == 0 {
        return Err(FusionError::Invalid("attention key dimension must be positive".into()));
    }
    for (side, v) in [("query", query), ("key/value", kv)] {
        let s = tape.value(v).shape();
        if s.len() != 3 || s[2] != block.token_width {
            return Err(FusionError::Dimension {
                junction: format!("attention {side} tokens"),
                detail: format!("expected [batch, tokens, {}], got {s:?}", block.token_width),
            });
        }
    }
    let q = project(tape, query, vars[block.wq.0])?;
    let k = project(tape, kv, vars[block.wk.0])?;
    let v = project(tape, kv, vars[block.wv.0])?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (block.key_dim as f64).sqrt())?;
    let weights = tape.softmax_rows(scores)?;
    Ok(tape.matmul(weights, v)?)
}

#[derive(Clone, Debug, PartialEq)]
struct Encoders {
    /// `[instance][layer]`; a single instance when shared.
    stacks: Vec<Vec<GnnStack>>,
    output_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Arch {
    Lr(Dense),
    Dnn {
        body: Mlp,
        out: Dense,
    },
    Unimodal {
        encoders: Encoders,
        body: Mlp,
        out: Dense,
    },
    Bimodal {
        encoders: Encoders,
        /// τ networks for simple strategies, one for hybrid.
        net_a: Vec<Mlp>,
        net_b: Mlp,
        attention: Option<AttentionBlock>,
        body: Mlp,
        out: Dense,
    },
}

/// An assembled model: its spec, parameters and wiring.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub input_dim: usize,
    pub params: ParamSet,
    arch: Arch,
}

/// Token views of both modalities for one batch.
pub struct Tokens {
    /// `[b, n_network_tokens, m]`
    pub network: Var,
    /// `[b, n_tabular_tokens, m]`
    pub tabular: Var,
    pub network_flat: Var,
    pub tabular_flat: Var,
}

fn tokens_of(width: usize, token: usize, junction: &str) -> Result<usize, FusionError> {
    if !width.is_multiple_of(token) {
        return Err(FusionError::Dimension {
            junction: junction.to_string(),
            detail: format!("width {width} is not a multiple of token width {token}"),
        });
    }
    Ok(width / token)
}

impl Model {
    /// Builds the model for `spec` on `input_dim` node/tabular features.
    pub fn assemble(spec: &ModelSpec, input_dim: usize) -> Result<Self, FusionError> {
        spec.validate()?;
        if input_dim == 0 {
            return Err(FusionError::Dimension {
                junction: "input".into(),
                detail: "no input features".into(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.train.seed);
        let mut params = ParamSet::new();
        let p = &mut params;
        let arch = match spec.mode {
            Mode::BaselineLr => Arch::Lr(Dense::new(p, "lr", input_dim, 1, &mut rng)),
            Mode::BaselineDnn => {
                let body = Mlp::new(p, "dnn", input_dim, &spec.dnn, spec.dropout, &mut rng);
                let out = Dense::new(p, "out", body.output_dim, 1, &mut rng);
                Arch::Dnn { body, out }
            }
            Mode::Unimodal => {
                let encoders = Self::encoders(p, spec, input_dim, &mut rng)?;
                let body = Mlp::new(p, "fnn", TAU * encoders.output_dim, &spec.fnn, spec.dropout, &mut rng);
                let out = Dense::new(p, "out", body.output_dim, 1, &mut rng);
                Arch::Unimodal { encoders, body, out }
            }
            Mode::Bimodal => {
                let encoders = Self::encoders(p, spec, input_dim, &mut rng)?;
                let e = encoders.output_dim;
                let net_a: Vec<Mlp> = if spec.strategy.is_hybrid() {
                    vec![Mlp::new(p, "net_a", TAU * e, &spec.net_a, spec.dropout, &mut rng)]
                } else {
                    (0..TAU)
                        .map(|s| Mlp::new(p, &format!("net_a{s}"), e, &spec.net_a, spec.dropout, &mut rng))
                        .collect()
                };
                let net_b = Mlp::new(p, "net_b", input_dim, &spec.net_b, spec.dropout, &mut rng);
                let network_width: usize = net_a.iter().map(|m| m.output_dim).sum();
                let attention = if spec.strategy.has_attention() {
                    tokens_of(network_width, spec.token_width, "network A output -> attention tokens")?;
                    tokens_of(net_b.output_dim, spec.token_width, "network B output -> attention tokens")?;
                    Some(AttentionBlock::new(p, "att", spec.token_width, spec.key_dim, &mut rng))
                } else {
                    None
                };
                // attention output (query-side tokens) next to the query modality vector
                let fused = match (attention, spec.query_side) {
                    (None, _) => network_width + net_b.output_dim,
                    (Some(_), QuerySide::Network) => 2 * network_width,
                    (Some(_), QuerySide::Tabular) => 2 * net_b.output_dim,
                };
                let body = Mlp::new(p, "fnn", fused, &spec.fnn, spec.dropout, &mut rng);
                let out = Dense::new(p, "out", body.output_dim, 1, &mut rng);
                Arch::Bimodal {
                    encoders,
                    net_a,
                    net_b,
                    attention,
                    body,
                    out,
                }
            }
        };
        Ok(Self {
            spec: spec.clone(),
            input_dim,
            params,
            arch,
        })
    }

    fn encoders(
        params: &mut ParamSet,
        spec: &ModelSpec,
        input_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Encoders, FusionError> {
        if spec.layers.is_empty() {
            return Err(FusionError::Invalid("graph models need at least one layer".into()));
        }
        let cfg = spec.gnn_config();
        let instances = if spec.share_instances { 1 } else { TAU };
        let mut stacks = Vec::with_capacity(instances);
        let mut output_dim = 0;
        for s in 0..instances {
            let mut per_layer = Vec::new();
            for layer in &spec.layers {
                let name = format!("gnn{s}.{}", layer.to_string().to_ascii_lowercase());
                let stack = GnnStack::new(params, &name, input_dim, &cfg, rng)?;
                output_dim = stack.output_dim;
                per_layer.push(stack);
            }
            stacks.push(per_layer);
        }
        Ok(Encoders { stacks, output_dim })
    }

    /// Scalar parameters of the GNN encoders alone.
    pub fn encoder_param_count(&self) -> usize {
        match &self.arch {
            Arch::Unimodal { encoders, .. } | Arch::Bimodal { encoders, .. } => {
                encoders.stacks.len() * self.spec.layers.len() * stack_param_count(self.input_dim, &self.spec.gnn_config())
            }
            _ => 0,
        }
    }

    pub fn has_attention(&self) -> bool {
        matches!(&self.arch, Arch::Bimodal { attention: Some(_), .. })
    }

    pub fn attention_block(&self) -> Option<&AttentionBlock> {
        match &self.arch {
            Arch::Bimodal { attention, .. } => attention.as_ref(),
            _ => None,
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), FusionError> {
        let d = batch.tabular.cols();
        if d != self.input_dim {
            return Err(FusionError::FeatureMismatch {
                expected: self.input_dim,
                got: d,
            });
        }
        if self.spec.mode.uses_graph() {
            if batch.snapshots.len() != TAU {
                return Err(FusionError::Invalid(format!(
                    "graph model needs {TAU} snapshots per batch, got {}",
                    batch.snapshots.len()
                )));
            }
            for s in &batch.snapshots {
                if s.adjacency.len() != self.spec.layers.len() {
                    return Err(FusionError::Invalid(format!(
                        "snapshot carries {} layers, model expects {}",
                        s.adjacency.len(),
                        self.spec.layers.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Target-node embeddings of every snapshot, `τ` tensors of `[b, D]`.
    pub fn embed(&self, tape: &mut Tape, vars: &[Var], batch: &Batch, train: bool) -> Result<Vec<Var>, FusionError> {
        let encoders = match &self.arch {
            Arch::Unimodal { encoders, .. } | Arch::Bimodal { encoders, .. } => encoders,
            _ => return Ok(Vec::new()),
        };
        self.check_batch(batch)?;
        let targets = batch.target_index();
        let mut out = Vec::with_capacity(TAU);
        for (s, input) in batch.snapshots.iter().enumerate() {
            let stacks = &encoders.stacks[if encoders.stacks.len() == 1 { 0 } else { s }];
            let x = tape.constant(input.features.clone());
            let mut acc: Option<Var> = None;
            for (stack, adj) in stacks.iter().zip(&input.adjacency) {
                let z = stack.forward(tape, vars, x, adj, train)?;
                acc = Some(match acc {
                    None => z,
                    Some(a) => tape.add(a, z)?,
                });
            }
            let z = acc.expect("at least one layer");
            out.push(tape.gather_rows(z, targets.clone())?);
        }
        Ok(out)
    }

    /// Networks A and B turned into attention tokens. Bimodal models only.
    pub fn tokens(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        tabular: Var,
        embeddings: &[Var],
        train: bool,
    ) -> Result<Tokens, FusionError> {
        let Arch::Bimodal { net_a, net_b, .. } = &self.arch else {
            return Err(FusionError::Invalid("token views exist for bimodal models only".into()));
        };
        let network_flat = if self.spec.strategy.is_hybrid() {
            let early = tape.concat_cols(embeddings)?;
            net_a[0].forward(tape, vars, early, train)?
        } else {
            let parts = net_a
                .iter()
                .zip(embeddings)
                .map(|(a, &e)| a.forward(tape, vars, e, train))
                .collect::<Result<Vec<_>, _>>()?;
            tape.concat_cols(&parts)?
        };
        let tabular_flat = net_b.forward(tape, vars, tabular, train)?;
        let m = self.spec.token_width;
        let b = tape.value(tabular).rows();
        let nn = tokens_of(tape.value(network_flat).cols(), m, "network A output -> attention tokens")?;
        let nt = tokens_of(tape.value(tabular_flat).cols(), m, "network B output -> attention tokens")?;
        Ok(Tokens {
            network: tape.reshape(network_flat, &[b, nn, m])?,
            tabular: tape.reshape(tabular_flat, &[b, nt, m])?,
            network_flat,
            tabular_flat,
        })
    }

    /// Default probabilities `[b, 1]` from tabular rows and fixed snapshot embeddings.
    pub fn head(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        tabular: Var,
        embeddings: &[Var],
        train: bool,
    ) -> Result<Var, FusionError> {
        let logits = match &self.arch {
            Arch::Lr(d) => d.forward(tape, vars, tabular)?,
            Arch::Dnn { body, out } => {
                let h = body.forward(tape, vars, tabular, train)?;
                out.forward(tape, vars, h)?
            }
            Arch::Unimodal { body, out, .. } => {
                let e = tape.concat_cols(embeddings)?;
                let h = body.forward(tape, vars, e, train)?;
                out.forward(tape, vars, h)?
            }
            Arch::Bimodal {
                attention, body, out, ..
            } => {
                let t = self.tokens(tape, vars, tabular, embeddings, train)?;
                let fused = match attention {
                    None => tape.concat_cols(&[t.network_flat, t.tabular_flat])?,
                    Some(block) => {
                        let (q, kv, q_flat) = match self.spec.query_side {
                            QuerySide::Network => (t.network, t.tabular, t.network_flat),
                            QuerySide::Tabular => (t.tabular, t.network, t.tabular_flat),
                        };
                        let r = cross_attention(tape, vars, q, kv, block)?;
                        let b = tape.value(tabular).rows();
                        let width = tape.value(q_flat).cols();
                        let r = tape.reshape(r, &[b, width])?;
                        tape.concat_cols(&[r, q_flat])?
                    }
                };
                let h = body.forward(tape, vars, fused, train)?;
                out.forward(tape, vars, h)?
            }
        };
        Ok(tape.sigmoid(logits)?)
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], batch: &Batch, train: bool) -> Result<Var, FusionError> {
        self.check_batch(batch)?;
        let embeddings = self.embed(tape, vars, batch, train)?;
        let x = tape.constant(batch.tabular.clone());
        self.head(tape, vars, x, &embeddings, train)
    }

    /// Both attended directions for one batch: `R_N = Attn(Q_T, K_N, V_N)` and
    /// `R_T = Attn(Q_N, K_T, V_T)`, each `[b, tokens, m]`.
    pub fn attended_pair(&self, tape: &mut Tape, vars: &[Var], batch: &Batch) -> Result<(Var, Var), FusionError> {
        let Some(block) = self.attention_block().copied() else {
            return Err(FusionError::NoAttention(self.spec.strategy));
        };
        let embeddings = self.embed(tape, vars, batch, false)?;
        let x = tape.constant(batch.tabular.clone());
        let t = self.tokens(tape, vars, x, &embeddings, false)?;
        let r_n = cross_attention(tape, vars, t.tabular, t.network, &block)?;
        let r_t = cross_attention(tape, vars, t.network, t.tabular, &block)?;
        Ok((r_n, r_t))
    }

    /// Probabilities for the rows of `batch`, inference mode.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<f64>, FusionError> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let p = self.forward(&mut tape, &vars, batch, false)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Swaps in saved parameters after checking that every name and shape
    /// matches what `assemble` produced for this spec.
    pub fn load_params(&mut self, saved: ParamSet) -> Result<(), FusionError> {
        if saved.len() != self.params.len() {
            return Err(FusionError::Invalid(format!(
                "saved model has {} parameter tensors, spec builds {}",
                saved.len(),
                self.params.len()
            )));
        }
        for ((name, t), (saved_name, s)) in self.params.iter().zip(saved.iter()) {
            if name != saved_name || t.shape() != s.shape() {
                return Err(FusionError::Invalid(format!(
                    "saved parameter `{saved_name}` {:?} does not match `{name}` {:?}",
                    s.shape(),
                    t.shape()
                )));
            }
        }
        self.params = saved;
        Ok(())
    }

    pub fn strategy(&self) -> Option<Strategy> {
        (self.spec.mode == Mode::Bimodal).then_some(self.spec.strategy)
    }
}
