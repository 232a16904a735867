//! Spatio-temporal adaptation of a pretrained backbone to a node panel.
//!
//! For every `(node, context patch)` an identifier is built from learnable
//! node and calendar embeddings. Each identifier is scaled by a scalar gate
//! driven by three affinities (node, calendar, lagged history) and added to
//! the backbone's context-patch token. A low-rank block of prompt tokens is
//! prepended as an unrotated prefix. Nodes are then encoded independently,
//! so cost grows linearly in the node count.

use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, EncoderCache, PreparedWindow, QuantileForecast, TokenSequence};
use crate::config::{AdapterConfig, LossKind};
use crate::data::calendar::{CalendarCycle, CalendarIndex};
use crate::data::window::PanelWindow;
use crate::error::{Error, Result};
use crate::params::{Gradients, Init, ParamId, ParameterStore};
use crate::tensor::{self, dot, sigmoid, Mat};

/// Name prefix reserved for adapter parameters.
pub const ADAPTER_PREFIX: &str = "adapter/";

#[derive(Debug, Clone)]
pub struct AdapterIds {
    /// `N x id_dim`
    pub node_bank: ParamId,
    /// One `K_c x id_dim` bank per calendar cycle.
    pub calendar_banks: Vec<ParamId>,
    /// `(1 + cycles) * id_dim x d_model`
    pub w_meta: ParamId,
    /// `id_dim x d_model`
    pub proj_spatial: ParamId,
    /// `id_dim x d_model`
    pub proj_temporal: ParamId,
    /// `[w_s, w_t, w_d]`
    pub fusion_logits: ParamId,
    /// `N x max_lag`
    pub gamma: ParamId,
    /// `M x d_model`
    pub prototypes: ParamId,
    /// `K x r_p`
    pub prompt_u: ParamId,
    /// `d_model x r_p`
    pub prompt_v: ParamId,
}

#[derive(Debug, Clone)]
pub struct Adapter {
    pub cfg: AdapterConfig,
    pub ids: AdapterIds,
    d_model: usize,
}

fn calendar_name(c: CalendarCycle) -> String {
    format!("{ADAPTER_PREFIX}stmf.calendar.{}", c.name())
}

impl Adapter {
    /// Registers freshly initialized adapter parameters.
    ///
    /// The metadata projection starts at zero, so an untrained adapter adds
    /// nothing to the context tokens.
    pub fn init(cfg: AdapterConfig, d_model: usize, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate(d_model)?;
        let id = cfg.id_dim;
        let n = cfg.n_nodes;
        let name = |s: &str| format!("{ADAPTER_PREFIX}{s}");
        let small = Init::TruncNormal(0.02);
        let unit = Init::TruncNormal(1.0);
        let node_bank = store.add(&name("stmf.node_bank"), &[n, id], small, rng)?;
        let calendar_banks = cfg
            .calendar_cycles
            .iter()
            .map(|&c| store.add(&calendar_name(c), &[c.cardinality(), id], small, rng))
            .collect::<Result<Vec<_>>>()?;
        let meta_in = (1 + cfg.calendar_cycles.len()) * id;
        let ids = AdapterIds {
            node_bank,
            calendar_banks,
            w_meta: store.add(&name("stmf.w_meta"), &[meta_in, d_model], Init::Zeros, rng)?,
            proj_spatial: store.add(&name("stf.proj_spatial"), &[id, d_model], small, rng)?,
            proj_temporal: store.add(&name("stf.proj_temporal"), &[id, d_model], small, rng)?,
            fusion_logits: store.add(&name("stf.fusion_logits"), &[3], Init::Zeros, rng)?,
            gamma: store.add(&name("stf.gamma"), &[n, cfg.max_lag], Init::Zeros, rng)?,
            prototypes: store.add(&name("stf.prototypes"), &[cfg.n_prototypes, d_model], small, rng)?,
            prompt_u: store.add(&name("dspa.u"), &[cfg.n_prompts, cfg.prompt_rank], unit, rng)?,
            prompt_v: store.add(&name("dspa.v"), &[d_model, cfg.prompt_rank], small, rng)?,
        };
        Ok(Self { cfg, ids, d_model })
    }

    /// Resolves adapter entries of an existing store, checking shapes.
    pub fn bind(cfg: AdapterConfig, d_model: usize, store: &ParameterStore) -> Result<Self> {
        cfg.validate(d_model)?;
        let id = cfg.id_dim;
        let n = cfg.n_nodes;
        let req = |s: &str, shape: &[usize]| -> Result<ParamId> {
            let pid = store.require(&format!("{ADAPTER_PREFIX}{s}"))?;
            check_shape(store, pid, shape)?;
            Ok(pid)
        };
        let calendar_banks = cfg
            .calendar_cycles
            .iter()
            .map(|&c| {
                let pid = store.require(&calendar_name(c))?;
                check_shape(store, pid, &[c.cardinality(), id])?;
                Ok(pid)
            })
            .collect::<Result<Vec<_>>>()?;
        let meta_in = (1 + cfg.calendar_cycles.len()) * id;
        let ids = AdapterIds {
            node_bank: req("stmf.node_bank", &[n, id])?,
            calendar_banks,
            w_meta: req("stmf.w_meta", &[meta_in, d_model])?,
            proj_spatial: req("stf.proj_spatial", &[id, d_model])?,
            proj_temporal: req("stf.proj_temporal", &[id, d_model])?,
            fusion_logits: req("stf.fusion_logits", &[3])?,
            gamma: req("stf.gamma", &[n, cfg.max_lag])?,
            prototypes: req("stf.prototypes", &[cfg.n_prototypes, d_model])?,
            prompt_u: req("dspa.u", &[cfg.n_prompts, cfg.prompt_rank])?,
            prompt_v: req("dspa.v", &[d_model, cfg.prompt_rank])?,
        };
        Ok(Self { cfg, ids, d_model })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let i = &self.ids;
        let mut v = vec![i.node_bank];
        v.extend(&i.calendar_banks);
        v.extend([
            i.w_meta,
            i.proj_spatial,
            i.proj_temporal,
            i.fusion_logits,
            i.gamma,
            i.prototypes,
            i.prompt_u,
            i.prompt_v,
        ]);
        v
    }

    fn n_prefix(&self) -> usize {
        if self.cfg.use_dspa {
            self.cfg.n_prompts
        } else {
            0
        }
    }

    /// Calendar indices of each valid context patch, taken at its first step.
    pub fn patch_calendar(&self, panel: &PanelWindow, patch_len: usize, n_patches: usize) -> Vec<CalendarIndex> {
        let len = panel.context.cols as i64;
        (0..n_patches)
            .map(|p| {
                let first = len - ((n_patches - p) * patch_len) as i64;
                let ts = panel.context_time(first);
                CalendarIndex(self.cfg.calendar_cycles.iter().map(|c| c.index(ts)).collect())
            })
            .collect()
    }

    /// Forward over a whole panel; returns per-node forecasts and the loss
    /// when the panel carries targets.
    pub fn sta_forward(
        &self,
        bb: &Backbone,
        panel: &PanelWindow,
        store: &ParameterStore,
        loss_kind: LossKind,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<StaOutput> {
        self.run(bb, panel, store, loss_kind, dropout, false).map(|(o, _)| o)
    }

    /// As [`Adapter::sta_forward`] but keeps everything the backward needs.
    pub fn sta_forward_traced(
        &self,
        bb: &Backbone,
        panel: &PanelWindow,
        store: &ParameterStore,
        loss_kind: LossKind,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(StaOutput, StaTrace)> {
        self.run(bb, panel, store, loss_kind, dropout, true)
            .map(|(o, t)| (o, t.expect("trace requested")))
    }

    fn run(
        &self,
        bb: &Backbone,
        panel: &PanelWindow,
        store: &ParameterStore,
        loss_kind: LossKind,
        mut dropout: Option<&mut ChaCha8Rng>,
        keep: bool,
    ) -> Result<(StaOutput, Option<StaTrace>)> {
        let c = &self.cfg;
        let bc = &bb.cfg;
        let n = panel.n_nodes();
        if n != c.n_nodes {
            return Err(Error::AdapterShape(format!(
                "panel has {n} nodes, adapter configured for {}",
                c.n_nodes
            )));
        }
        if bc.d_model != self.d_model {
            return Err(Error::AdapterShape(format!(
                "adapter built for d_model {}, backbone has {}",
                self.d_model, bc.d_model
            )));
        }
        let h = panel.horizon();
        let want_loss = h > 0;
        let horizon = if want_loss { h } else { bc.max_horizon() };
        let l_mask = bb.inference_mask(panel.context.cols);
        let mut meter = Footprint::default();

        let prepared = (0..n)
            .map(|i| bb.prepare(panel.context.row(i), panel.target.row(i), horizon, l_mask))
            .collect::<Result<Vec<_>>>()?;
        let valid_from = prepared[0].l_mask;
        let n_patches = bc.max_ctx_patches - valid_from;

        let fusion = if c.use_stmf {
            if c.use_stf && c.max_lag >= n_patches {
                return Err(Error::LagConfig {
                    max_lag: c.max_lag,
                    patches: n_patches,
                });
            }
            let cal = self.patch_calendar(panel, bc.patch_len, n_patches);
            Some(self.fuse(store, &cal, n, n_patches, &mut meter)?)
        } else {
            None
        };

        let prompts = if c.use_dspa {
            Some(compose_prompts(
                store.values(self.ids.prompt_u),
                store.values(self.ids.prompt_v),
                c.n_prompts,
                c.prompt_rank,
                self.d_model,
            ))
        } else {
            None
        };
        let k = self.n_prefix();
        let n_tok = bc.n_tokens() + k;
        meter.note(n_tok * bc.d_model.max(bc.d_ff));
        meter.note(bc.n_heads * n_tok * n_tok);
        meter.note(n * horizon * bc.n_quantiles());

        let mut forecasts = Vec::with_capacity(n);
        let mut nodes = Vec::with_capacity(if keep { n } else { 0 });
        let mut total = 0.0;
        for (i, prep) in prepared.into_iter().enumerate() {
            let seq = bb.build_token_sequence(&prep.patches, prep.l_mask, prep.fut_count, store)?;
            let mut body = seq.tokens.clone();
            if let Some(f) = &fusion {
                for p in 0..n_patches {
                    let src = f.gated.row(i * n_patches + p);
                    for (t, s) in body.row_mut(valid_from + p).iter_mut().zip(src) {
                        *t += s;
                    }
                }
            }
            let (tokens, positions) = match &prompts {
                Some(pm) => {
                    let mut t = pm.data.clone();
                    t.extend_from_slice(&body.data);
                    let mut pos = vec![-1i64; k];
                    pos.extend(&seq.positions);
                    (Mat::from_vec(n_tok, bc.d_model, t), pos)
                }
                None => (body, seq.positions.clone()),
            };
            let (encoded, cache) = bb.encode(&tokens, &positions, store, dropout.as_deref_mut())?;
            let full = bb.quantile_head(&encoded, prep.fut_count, k, store)?;
            let nq = bc.n_quantiles();
            let pred = Mat::from_vec(horizon, nq, full.data[..horizon * nq].to_vec());
            let d_pred = if want_loss {
                let (l, g) = bb.loss(loss_kind, &pred, &prep.target);
                if !l.is_finite() {
                    return Err(Error::Numeric(format!("non-finite adapted loss at node {i}")));
                }
                total += l;
                Some(g)
            } else {
                None
            };
            forecasts.push(bb.denormalize_forecast(&pred, prep.stats));
            if keep {
                nodes.push(NodeTrace {
                    prepared: prep,
                    seq,
                    positions,
                    cache,
                    encoded,
                    d_pred,
                });
            }
        }
        let loss = want_loss.then(|| total / n as f64);
        let out = StaOutput {
            forecasts,
            loss,
            token_count: n_tok,
            peak_intermediate: meter.peak,
        };
        let trace = keep.then(|| StaTrace {
            nodes,
            fusion,
            n_patches,
            valid_from,
        });
        Ok((out, trace))
    }

    /// Identifier construction and gating for all `(node, patch)` rows.
    fn fuse(
        &self,
        store: &ParameterStore,
        cal: &[CalendarIndex],
        n: usize,
        n_patches: usize,
        meter: &mut Footprint,
    ) -> Result<FusionTrace> {
        let c = &self.cfg;
        let d = self.d_model;
        let nodes: Vec<usize> = (0..n).collect();
        let features = stmf_features(&nodes, cal, store, &self.ids, c)?;
        meter.note(features.len());
        let ident = tensor::linear_nobias(&features, store.values(self.ids.w_meta), d);
        meter.note(ident.len());
        if !c.use_stf {
            return Ok(FusionTrace {
                features,
                gated: ident.clone(),
                ident,
                calendar: cal.to_vec(),
                stf: None,
            });
        }
        let node_rows = Mat::from_vec(n, c.id_dim, store.values(self.ids.node_bank).to_vec());
        let node_proj = tensor::linear_nobias(&node_rows, store.values(self.ids.proj_spatial), d);
        let cal_mean = calendar_mean(cal, store, &self.ids, c);
        let cal_proj = tensor::linear_nobias(&cal_mean, store.values(self.ids.proj_temporal), d);
        let s_s = spatial_affinity(&ident, &node_proj, n_patches);
        let s_t = temporal_affinity(&ident, &cal_proj, n);
        let prototypes = Mat::from_vec(c.n_prototypes, d, store.values(self.ids.prototypes).to_vec());
        let (s_d, lag) = lagged_affinity(&ident, n, n_patches, store.values(self.ids.gamma), &prototypes, c.max_lag)?;
        meter.note(lag.weights.len());
        meter.note(lag.pooled.len());
        let logits = store.values(self.ids.fusion_logits);
        let (gated, gate) = stf_gate(&ident, &s_s, &s_t, &s_d, logits);
        meter.note(gated.len());
        Ok(FusionTrace {
            features,
            ident,
            gated,
            calendar: cal.to_vec(),
            stf: Some(StfTrace {
                node_proj,
                cal_mean,
                cal_proj,
                s_s,
                s_t,
                s_d,
                lag,
                gate,
                alpha: fusion_weights(logits),
            }),
        })
    }

    /// Accumulates gradients of the traced loss into `grads`.
    ///
    /// Backbone gradients are always produced; freezing is the optimizer's
    /// concern.
    pub fn sta_backward(&self, bb: &Backbone, trace: &StaTrace, store: &ParameterStore, grads: &mut Gradients) {
        let d = self.d_model;
        let k = self.n_prefix();
        let n = trace.nodes.len();
        let np = trace.n_patches;
        let mut d_prompts = Mat::zeros(k, d);
        let mut d_gated = Mat::zeros(n * np, d);
        let scale = 1.0 / n as f64;
        for (i, node) in trace.nodes.iter().enumerate() {
            let Some(dp) = &node.d_pred else { continue };
            let mut dp = dp.clone();
            dp.data.iter_mut().for_each(|g| *g *= scale);
            let d_enc = bb.quantile_head_backward(&node.encoded, node.prepared.fut_count, k, &dp, store, grads);
            let d_tok = bb.encode_backward(&node.cache, &d_enc, &node.positions, store, grads);
            for (a, b) in d_prompts.data.iter_mut().zip(&d_tok.data[..k * d]) {
                *a += b;
            }
            let body = Mat::from_vec(d_tok.rows - k, d, d_tok.data[k * d..].to_vec());
            bb.embed_backward(&node.seq, &body, grads);
            if trace.fusion.is_some() {
                for p in 0..np {
                    d_gated
                        .row_mut(i * np + p)
                        .copy_from_slice(body.row(trace.valid_from + p));
                }
            }
        }
        if k > 0 {
            let c = &self.cfg;
            let u = Mat::from_vec(c.n_prompts, c.prompt_rank, store.values(self.ids.prompt_u).to_vec());
            let v = Mat::from_vec(d, c.prompt_rank, store.values(self.ids.prompt_v).to_vec());
            let du = tensor::matmul(&d_prompts, &v);
            let dv = tensor::matmul_tn(&d_prompts, &u);
            add_into(grads.get_mut(self.ids.prompt_u), &du.data);
            add_into(grads.get_mut(self.ids.prompt_v), &dv.data);
        }
        if let Some(f) = &trace.fusion {
            self.fuse_backward(f, &d_gated, n, np, store, grads);
        }
    }

    fn fuse_backward(
        &self,
        f: &FusionTrace,
        d_gated: &Mat,
        n: usize,
        np: usize,
        store: &ParameterStore,
        grads: &mut Gradients,
    ) {
        let c = &self.cfg;
        let d = self.d_model;
        let ids = &self.ids;
        let d_ident = match &f.stf {
            None => d_gated.clone(),
            Some(st) => {
                let mut d_ident = Mat::zeros(n * np, d);
                let rows = n * np;
                let mut d_s = [vec![0.0; rows], vec![0.0; rows], vec![0.0; rows]];
                let mut d_alpha = [0.0; 3];
                for r in 0..rows {
                    let g = st.gate.data[r];
                    let dg = dot(d_gated.row(r), f.ident.row(r));
                    for (o, x) in d_ident.row_mut(r).iter_mut().zip(d_gated.row(r)) {
                        *o = g * x;
                    }
                    let dz = dg * g * (1.0 - g);
                    let s = [st.s_s.data[r], st.s_t.data[r], st.s_d.data[r]];
                    for j in 0..3 {
                        d_alpha[j] += dz * s[j];
                        d_s[j][r] = st.alpha[j] * dz;
                    }
                }
                let mean: f64 = (0..3).map(|j| st.alpha[j] * d_alpha[j]).sum();
                let gl = grads.get_mut(ids.fusion_logits);
                for j in 0..3 {
                    gl[j] += st.alpha[j] * (d_alpha[j] - mean);
                }

                // spatial: S_s = <I, E_n W_s>
                let mut d_node_proj = Mat::zeros(n, d);
                let mut d_cal_proj = Mat::zeros(np, d);
                for i in 0..n {
                    for p in 0..np {
                        let r = i * np + p;
                        let (ds, dt) = (d_s[0][r], d_s[1][r]);
                        axpy(d_ident.row_mut(r), ds, st.node_proj.row(i));
                        axpy(d_node_proj.row_mut(i), ds, f.ident.row(r));
                        axpy(d_ident.row_mut(r), dt, st.cal_proj.row(p));
                        axpy(d_cal_proj.row_mut(p), dt, f.ident.row(r));
                    }
                }
                let node_rows = Mat::from_vec(n, c.id_dim, store.values(ids.node_bank).to_vec());
                {
                    let w = store.values(ids.proj_spatial).to_vec();
                    let d_rows = tensor::linear_backward(&node_rows, &w, &d_node_proj, grads.get_mut(ids.proj_spatial), &mut vec![0.0; d]);
                    add_into(grads.get_mut(ids.node_bank), &d_rows.data);
                }
                {
                    let w = store.values(ids.proj_temporal).to_vec();
                    let d_mean = tensor::linear_backward(&st.cal_mean, &w, &d_cal_proj, grads.get_mut(ids.proj_temporal), &mut vec![0.0; d]);
                    let inv = 1.0 / c.calendar_cycles.len() as f64;
                    for (p, ci) in f.calendar.iter().enumerate() {
                        for (cyc, &idx) in ci.0.iter().enumerate() {
                            let bank = grads.get_mut(ids.calendar_banks[cyc]);
                            axpy(&mut bank[idx * c.id_dim..(idx + 1) * c.id_dim], inv, d_mean.row(p));
                        }
                    }
                }

                // lagged: S_d = sum_delta gamma * <I_p, A_{max(p - delta, 0)}>
                let gamma = store.values(ids.gamma);
                let mut d_pooled = Mat::zeros(rows, d);
                for i in 0..n {
                    for p in 0..np {
                        let r = i * np + p;
                        let dsd = d_s[2][r];
                        for delta in 1..=c.max_lag {
                            let q = i * np + p.saturating_sub(delta);
                            let gi = i * c.max_lag + delta - 1;
                            grads.get_mut(ids.gamma)[gi] += dsd * dot(f.ident.row(r), st.lag.pooled.row(q));
                            let gd = dsd * gamma[gi];
                            axpy(d_ident.row_mut(r), gd, st.lag.pooled.row(q));
                            axpy(d_pooled.row_mut(q), gd, f.ident.row(r));
                        }
                    }
                }
                let protos = Mat::from_vec(c.n_prototypes, d, store.values(ids.prototypes).to_vec());
                let inv_sqrt = 1.0 / (d as f64).sqrt();
                // pooled = W P  with W = softmax(I P^T / sqrt(d))
                tensor::accumulate_tn(grads.get_mut(ids.prototypes), &st.lag.weights, &d_pooled);
                let d_w = tensor::matmul_nt(&d_pooled, &protos);
                let mut d_scores = Mat::zeros(rows, c.n_prototypes);
                for r in 0..rows {
                    tensor::softmax_backward(st.lag.weights.row(r), d_w.row(r), d_scores.row_mut(r));
                }
                d_scores.data.iter_mut().for_each(|x| *x *= inv_sqrt);
                d_ident.add_assign(&tensor::matmul(&d_scores, &protos));
                tensor::accumulate_tn(grads.get_mut(ids.prototypes), &d_scores, &f.ident);
                d_ident
            }
        };
        // I = F W_meta
        let w_meta = store.values(ids.w_meta).to_vec();
        let d_feat = tensor::linear_backward(&f.features, &w_meta, &d_ident, grads.get_mut(ids.w_meta), &mut vec![0.0; d]);
        let id = c.id_dim;
        for i in 0..n {
            for p in 0..np {
                let row = d_feat.row(i * np + p);
                axpy(&mut grads.get_mut(ids.node_bank)[i * id..(i + 1) * id], 1.0, &row[..id]);
                let cal = &f.calendar[p].0;
                for (cyc, &idx) in cal.iter().enumerate() {
                    let bank = grads.get_mut(ids.calendar_banks[cyc]);
                    axpy(&mut bank[idx * id..(idx + 1) * id], 1.0, &row[(1 + cyc) * id..(2 + cyc) * id]);
                }
            }
        }
    }
}

fn check_shape(store: &ParameterStore, id: ParamId, shape: &[usize]) -> Result<()> {
    let e = store.entry(id);
    if e.shape != shape {
        return Err(Error::AdapterShape(format!(
            "`{}` has shape {:?}, config expects {shape:?}",
            e.name, e.shape
        )));
    }
    Ok(())
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn add_into(y: &mut [f64], x: &[f64]) {
    axpy(y, 1.0, x);
}

/// Tracks the largest single buffer allocated by a forward pass.
#[derive(Debug, Default, Clone, Copy)]
pub struct Footprint {
    pub peak: usize,
}

impl Footprint {
    pub fn note(&mut self, len: usize) {
        self.peak = self.peak.max(len);
    }
}

#[derive(Debug, Clone)]
pub struct StaOutput {
    pub forecasts: Vec<QuantileForecast>,
    /// Mean per-node loss on the normalized scale, when targets were given.
    pub loss: Option<f64>,
    /// Tokens seen by the encoder per node, prompts included.
    pub token_count: usize,
    /// Element count of the largest intermediate buffer.
    pub peak_intermediate: usize,
}

#[derive(Debug, Clone)]
pub struct NodeTrace {
    pub prepared: PreparedWindow,
    pub seq: TokenSequence,
    pub positions: Vec<i64>,
    pub cache: EncoderCache,
    pub encoded: Mat,
    pub d_pred: Option<Mat>,
}

#[derive(Debug, Clone)]
pub struct StfTrace {
    pub node_proj: Mat,
    pub cal_mean: Mat,
    pub cal_proj: Mat,
    pub s_s: Mat,
    pub s_t: Mat,
    pub s_d: Mat,
    pub lag: LagCache,
    pub gate: Mat,
    pub alpha: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct FusionTrace {
    /// `N*P x (1 + cycles) * id_dim`
    pub features: Mat,
    /// `N*P x d_model`, row `i * P + p`.
    pub ident: Mat,
    pub gated: Mat,
    /// Calendar indices of each valid patch.
    pub calendar: Vec<CalendarIndex>,
    pub stf: Option<StfTrace>,
}

#[derive(Debug, Clone)]
pub struct StaTrace {
    pub nodes: Vec<NodeTrace>,
    pub fusion: Option<FusionTrace>,
    pub n_patches: usize,
    pub valid_from: usize,
}

// ---------------------------------------------------------------------------
// building blocks

/// `concat(E_n[node], E_c[idx_c] for each cycle)` per `(node, patch)` row,
/// node-major.
pub fn stmf_features(
    nodes: &[usize],
    patch_cal: &[CalendarIndex],
    store: &ParameterStore,
    ids: &AdapterIds,
    cfg: &AdapterConfig,
) -> Result<Mat> {
    let id = cfg.id_dim;
    let nc = cfg.calendar_cycles.len();
    let width = (1 + nc) * id;
    let node_bank = store.values(ids.node_bank);
    let mut out = Mat::zeros(nodes.len() * patch_cal.len(), width);
    for (a, &node) in nodes.iter().enumerate() {
        if node >= cfg.n_nodes {
            return Err(Error::AdapterShape(format!("node id {node} outside 0..{}", cfg.n_nodes)));
        }
        for (p, ci) in patch_cal.iter().enumerate() {
            let row = out.row_mut(a * patch_cal.len() + p);
            row[..id].copy_from_slice(&node_bank[node * id..(node + 1) * id]);
            for (cyc, &idx) in ci.0.iter().enumerate() {
                let bank = store.entry(ids.calendar_banks[cyc]);
                let card = bank.shape[0];
                if idx >= card {
                    return Err(Error::Metadata {
                        cycle: cfg.calendar_cycles[cyc].name().to_string(),
                        index: idx,
                        cardinality: card,
                    });
                }
                row[(1 + cyc) * id..(2 + cyc) * id].copy_from_slice(&bank.values[idx * id..(idx + 1) * id]);
            }
        }
    }
    Ok(out)
}

/// Per-(node, patch) identifiers `I_st = features * W_meta`, `N*P x d_model`.
pub fn stmf_identifiers(
    nodes: &[usize],
    patch_cal: &[CalendarIndex],
    store: &ParameterStore,
    ids: &AdapterIds,
    cfg: &AdapterConfig,
    d_model: usize,
) -> Result<Mat> {
    let f = stmf_features(nodes, patch_cal, store, ids, cfg)?;
    Ok(tensor::linear_nobias(&f, store.values(ids.w_meta), d_model))
}

/// Mean of the retrieved calendar embeddings per patch, `P x id_dim`.
fn calendar_mean(cal: &[CalendarIndex], store: &ParameterStore, ids: &AdapterIds, cfg: &AdapterConfig) -> Mat {
    let id = cfg.id_dim;
    let inv = 1.0 / cfg.calendar_cycles.len() as f64;
    let mut m = Mat::zeros(cal.len(), id);
    for (p, ci) in cal.iter().enumerate() {
        for (cyc, &idx) in ci.0.iter().enumerate() {
            let bank = store.values(ids.calendar_banks[cyc]);
            axpy(m.row_mut(p), inv, &bank[idx * id..(idx + 1) * id]);
        }
    }
    m
}

/// `S_s[i, p] = <I[i, p], E'_n[i]>` as an `N x P` matrix.
pub fn spatial_affinity(ident: &Mat, node_proj: &Mat, n_patches: usize) -> Mat {
    Mat::from_fn(node_proj.rows, n_patches, |i, p| dot(ident.row(i * n_patches + p), node_proj.row(i)))
}

/// `S_t[i, p] = <I[i, p], E'_t[p]>` as an `N x P` matrix.
pub fn temporal_affinity(ident: &Mat, cal_proj: &Mat, n_nodes: usize) -> Mat {
    let np = cal_proj.rows;
    Mat::from_fn(n_nodes, np, |i, p| dot(ident.row(i * np + p), cal_proj.row(p)))
}

/// Softmax pooling weights and pooled prototypes for every identifier row.
#[derive(Debug, Clone)]
pub struct LagCache {
    /// `N*P x M`
    pub weights: Mat,
    /// `N*P x d_model`
    pub pooled: Mat,
}

/// `S_d[i, p] = sum_delta gamma[i, delta] <I[i, p], Agg(I[i, max(p - delta, 0)])>`
/// with `Agg(x) = softmax(x P^T / sqrt(d)) P`.
pub fn lagged_affinity(
    ident: &Mat,
    n_nodes: usize,
    n_patches: usize,
    gamma: &[f64],
    prototypes: &Mat,
    max_lag: usize,
) -> Result<(Mat, LagCache)> {
    if max_lag >= n_patches {
        return Err(Error::LagConfig {
            max_lag,
            patches: n_patches,
        });
    }
    let d = ident.cols;
    let mut weights = tensor::matmul_nt(ident, prototypes);
    let inv_sqrt = 1.0 / (d as f64).sqrt();
    for row in weights.data.chunks_exact_mut(prototypes.rows) {
        row.iter_mut().for_each(|x| *x *= inv_sqrt);
        tensor::softmax_in_place(row);
    }
    let pooled = tensor::matmul(&weights, prototypes);
    let s_d = Mat::from_fn(n_nodes, n_patches, |i, p| {
        let r = ident.row(i * n_patches + p);
        (1..=max_lag)
            .map(|delta| {
                let q = i * n_patches + p.saturating_sub(delta);
                gamma[i * max_lag + delta - 1] * dot(r, pooled.row(q))
            })
            .sum()
    });
    Ok((s_d, LagCache { weights, pooled }))
}

/// `softmax([w_s, w_t, w_d])`
pub fn fusion_weights(logits: &[f64]) -> [f64; 3] {
    let mut a = [logits[0], logits[1], logits[2]];
    tensor::softmax_in_place(&mut a);
    a
}

/// Scales each identifier row by `sigmoid(a_s S_s + a_t S_t + a_d S_d)`.
///
/// Returns the gated identifiers and the `N x P` gate values.
pub fn stf_gate(ident: &Mat, s_s: &Mat, s_t: &Mat, s_d: &Mat, logits: &[f64]) -> (Mat, Mat) {
    let a = fusion_weights(logits);
    let gate = Mat::from_fn(s_s.rows, s_s.cols, |i, p| {
        let k = i * s_s.cols + p;
        sigmoid(a[0] * s_s.data[k] + a[1] * s_t.data[k] + a[2] * s_d.data[k])
    });
    let mut out = ident.clone();
    for (r, g) in gate.data.iter().enumerate() {
        out.row_mut(r).iter_mut().for_each(|x| *x *= g);
    }
    (out, gate)
}

/// `P = U V^T` from flat `K x r` and `d x r` factors.
pub fn compose_prompts(u: &[f64], v: &[f64], k: usize, r: usize, d: usize) -> Mat {
    let mut p = Mat::zeros(k, d);
    tensor::gemm(k, r, d, 1.0, u, false, v, true, 0.0, &mut p.data);
    p
}
