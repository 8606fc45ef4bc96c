//! The 1D hierarchical VAE.
//!
//! Bottom-up, the encoder turns the input into one feature vector per level
//! (finest first). Top-down, a decoder state walks the L latent groups from
//! coarse to fine: each group's conditional prior is read off the current
//! state, the posterior is predicted as a residual on that prior from the
//! state and the matching level's encoder features, and the sampled group is
//! merged back into the state through a residual cell. The final state is
//! decoded to the mean of a diagonal-Gaussian observation model whose
//! per-feature log-variance is a free parameter.

use serde::{Deserialize, Serialize};

use super::gaussian::{GroupGaussian, LOGVAR_MAX, LOGVAR_MIN};
use super::params::{BlockId, ParamStore};
use super::spec::{Backbone, LatentHierarchySpec};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::store::NormalizationStats;

pub const DEFAULT_FREE_BITS: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: BlockId,
    b: BlockId,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: BlockId,
    b: BlockId,
    stride: usize,
}

#[derive(Debug, Clone, Copy)]
struct ResCell {
    a: Linear,
    b: Linear,
}

#[derive(Debug, Clone, Copy)]
struct ConvCell {
    a: Conv,
    b: Conv,
}

#[derive(Debug, Clone)]
enum Encoder {
    Affine {
        input: Linear,
        cells: Vec<ResCell>,
    },
    Conv {
        stem: Conv,
        cells: Vec<ConvCell>,
        downs: Vec<Conv>,
        heads: Vec<Linear>,
    },
}

#[derive(Debug, Clone)]
enum OutputNet {
    Affine { out: Linear },
    Conv { lift: Linear, cells: Vec<ConvCell>, out: Conv },
}

#[derive(Debug, Clone)]
struct GroupNet {
    prior: Option<(Linear, Linear)>,
    posterior: (Linear, Linear),
    inject: Linear,
    cell: ResCell,
}

#[derive(Debug, Clone)]
struct Topology {
    encoder: Encoder,
    groups: Vec<GroupNet>,
    output: OutputNet,
    state0: BlockId,
    obs_logvar: BlockId,
}

/// Progress of the optimisation that produced the current parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScheduleState {
    pub epochs_completed: usize,
    pub last_beta: f64,
    pub optimizer_steps: u64,
}

#[derive(Debug, Clone)]
pub struct HvaeModel {
    spec: LatentHierarchySpec,
    params: ParamStore,
    topo: Topology,
    norm_stats: Option<NormalizationStats>,
    free_bits_lambda: f64,
    schedule: ScheduleState,
}

/// Initialiser handed to the layer builders.
struct Init {
    rng: rng::Rng,
}

impl Init {
    fn normal(&mut self, std: f64) -> impl FnMut() -> f64 + '_ {
        move || std * rng::normal_vec(&mut self.rng, 1)[0]
    }
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    init: Init,
}

impl Builder<'_> {
    fn linear(&mut self, name: &str, inp: usize, out: usize, gain: f64) -> Linear {
        let std = gain / (inp as f64).sqrt();
        let w = self.store.add(format!("{name}.weight"), &[out, inp], self.init.normal(std));
        let b = self.store.add(format!("{name}.bias"), &[out], || 0.0);
        Linear { w, b }
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, stride: usize, gain: f64) -> Conv {
        let std = gain / ((cin * 3) as f64).sqrt();
        let w = self.store.add(format!("{name}.weight"), &[cout, cin, 3], self.init.normal(std));
        let b = self.store.add(format!("{name}.bias"), &[cout], || 0.0);
        Conv { w, b, stride }
    }

    fn res_cell(&mut self, name: &str, width: usize) -> ResCell {
        ResCell {
            a: self.linear(&format!("{name}.fc1"), width, width, 1.0),
            b: self.linear(&format!("{name}.fc2"), width, width, 0.1),
        }
    }

    fn conv_cell(&mut self, name: &str, ch: usize) -> ConvCell {
        ConvCell {
            a: self.conv(&format!("{name}.conv1"), ch, ch, 1, 1.0),
            b: self.conv(&format!("{name}.conv2"), ch, ch, 1, 0.1),
        }
    }
}

/// Per-group record of one forward pass.
pub(crate) struct GroupTrace {
    pub posterior: Option<(Var, Var)>,
    pub z: Var,
    pub kl: Option<Var>,
}

pub(crate) struct ForwardTrace {
    pub groups: Vec<GroupTrace>,
    pub x_mean: Var,
    pub x_logvar: Var,
}

/// How latent groups are produced during a forward pass.
pub(crate) enum Latents<'a> {
    /// Sample from the approximate posterior of `x` using the given standard
    /// normal noise (zeros give posterior means).
    Posterior { x: &'a [f64], noise: &'a [Vec<f64>] },
    /// Use the supplied group values.
    Given(&'a [Vec<f64>]),
    /// Ancestral sampling from the priors, standard deviations scaled by the
    /// temperature.
    Prior { temperature: f64, noise: &'a [Vec<f64>] },
}

pub fn build_model(spec: &LatentHierarchySpec, seed: u64) -> Result<HvaeModel> {
    HvaeModel::new(spec.clone(), seed)
}

impl HvaeModel {
    pub fn new(spec: LatentHierarchySpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            init: Init { rng: rng::rng(seed) },
        };
        let h = spec.hidden_size;
        let dz = spec.dims_per_group;
        let d = spec.input_dim;
        let ch = spec.conv_channels;

        let encoder = match spec.resolved_backbone() {
            Backbone::Conv1d => {
                let stem = b.conv("enc.stem", 1, ch, 1, 1.0);
                let mut cells = Vec::new();
                let mut downs = Vec::new();
                let mut heads = Vec::new();
                // Built coarsest-first so vector index == level.
                for level in 0..spec.levels {
                    cells.push(b.conv_cell(&format!("enc.level{level}.cell"), ch));
                    downs.push(b.conv(&format!("enc.level{level}.down"), ch, ch, 2, 1.0));
                    heads.push(b.linear(&format!("enc.level{level}.head"), ch * spec.level_len(level), h, 1.0));
                }
                Encoder::Conv {
                    stem,
                    cells,
                    downs,
                    heads,
                }
            }
            _ => Encoder::Affine {
                input: b.linear("enc.input", d, h, 1.0),
                cells: (0..spec.levels)
                    .map(|level| b.res_cell(&format!("enc.level{level}.cell"), h))
                    .collect(),
            },
        };

        let groups = (0..spec.num_groups())
            .map(|l| GroupNet {
                prior: (l > 0).then(|| {
                    (
                        b.linear(&format!("dec.group{l}.prior.fc1"), h, h, 1.0),
                        b.linear(&format!("dec.group{l}.prior.fc2"), h, 2 * dz, 0.1),
                    )
                }),
                posterior: (
                    b.linear(&format!("enc.group{l}.posterior.fc1"), 2 * h, h, 1.0),
                    b.linear(&format!("enc.group{l}.posterior.fc2"), h, 2 * dz, 0.0),
                ),
                inject: b.linear(&format!("dec.group{l}.inject"), dz, h, 1.0),
                cell: b.res_cell(&format!("dec.group{l}.cell"), h),
            })
            .collect();

        let output = match spec.resolved_backbone() {
            Backbone::Conv1d => OutputNet::Conv {
                lift: b.linear("dec.out.lift", h, ch * spec.level_len(0), 1.0),
                cells: (0..spec.levels)
                    .map(|level| b.conv_cell(&format!("dec.out.level{level}.cell"), ch))
                    .collect(),
                out: b.conv("dec.out.conv", ch, 1, 1, 1.0),
            },
            _ => OutputNet::Affine {
                out: b.linear("dec.out", h, d, 1.0),
            },
        };
        let state0 = b.store.add("dec.state0", &[h], b.init.normal(0.1));
        let obs_logvar = b.store.add("obs.logvar", &[d], || 0.0);

        Ok(Self {
            spec,
            params,
            topo: Topology {
                encoder,
                groups,
                output,
                state0,
                obs_logvar,
            },
            norm_stats: None,
            free_bits_lambda: DEFAULT_FREE_BITS,
            schedule: ScheduleState::default(),
        })
    }

    pub fn spec(&self) -> &LatentHierarchySpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Direct parameter access, for optimisers and gradient checks.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Names of encoder (inference) parameter blocks.
    pub fn encoder_blocks(&self) -> impl Iterator<Item = &str> {
        self.params.blocks().iter().map(|b| b.name.as_str()).filter(|n| n.starts_with("enc."))
    }

    /// Names of decoder (generative) parameter blocks.
    pub fn decoder_blocks(&self) -> impl Iterator<Item = &str> {
        self.params.blocks().iter().map(|b| b.name.as_str()).filter(|n| n.starts_with("dec."))
    }

    /// Observation log-variance, clamped.
    pub fn obs_logvar(&self) -> Vec<f64> {
        self.params
            .get(self.topo.obs_logvar)
            .iter()
            .map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX))
            .collect()
    }

    /// Keep the stored observation log-variance inside its clamp range.
    pub fn clamp_obs_logvar(&mut self) {
        for v in self.params.get_mut(self.topo.obs_logvar) {
            *v = v.clamp(LOGVAR_MIN, LOGVAR_MAX);
        }
    }

    pub fn norm_stats(&self) -> Option<&NormalizationStats> {
        self.norm_stats.as_ref()
    }

    pub fn set_norm_stats(&mut self, stats: NormalizationStats) -> Result<()> {
        if stats.dim != self.spec.input_dim {
            return Err(Error::validation(format!(
                "normalizer dimension {} does not match model input {}",
                stats.dim, self.spec.input_dim
            )));
        }
        self.norm_stats = Some(stats);
        Ok(())
    }

    pub fn free_bits_lambda(&self) -> f64 {
        self.free_bits_lambda
    }

    pub fn set_free_bits_lambda(&mut self, lambda: f64) {
        self.free_bits_lambda = lambda;
    }

    pub fn schedule(&self) -> &ScheduleState {
        &self.schedule
    }

    pub fn schedule_mut(&mut self) -> &mut ScheduleState {
        &mut self.schedule
    }

    pub(crate) fn from_parts(
        spec: LatentHierarchySpec,
        params: ParamStore,
        norm_stats: Option<NormalizationStats>,
        free_bits_lambda: f64,
        schedule: ScheduleState,
    ) -> Result<Self> {
        let mut model = Self::new(spec, 0)?;
        model.params.load_tensors(&params.to_tensors())?;
        model.norm_stats = norm_stats;
        model.free_bits_lambda = free_bits_lambda;
        model.schedule = schedule;
        Ok(model)
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::validation(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite() || v.abs() > 1.0 + 1e-9) {
            return Err(Error::validation(format!(
                "normalized input component {i} = {} is outside [-1, 1]",
                x[i]
            )));
        }
        Ok(())
    }

    pub(crate) fn check_latents(&self, z: &[Vec<f64>]) -> Result<()> {
        if z.len() != self.spec.num_groups() {
            return Err(Error::validation(format!(
                "expected {} latent groups, got {}",
                self.spec.num_groups(),
                z.len()
            )));
        }
        if let Some((l, g)) = z.iter().enumerate().find(|(_, g)| g.len() != self.spec.dims_per_group) {
            return Err(Error::validation(format!(
                "latent group {l} has {} dims, expected {}",
                g.len(),
                self.spec.dims_per_group
            )));
        }
        Ok(())
    }

    fn lin(t: &mut Tape, x: Var, l: Linear) -> Var {
        t.linear(x, l.w, l.b)
    }

    fn res(t: &mut Tape, h: Var, c: ResCell) -> Var {
        let a = t.silu(h);
        let a = Self::lin(t, a, c.a);
        let a = t.silu(a);
        let a = Self::lin(t, a, c.b);
        t.add(h, a)
    }

    fn conv(t: &mut Tape, x: Var, c: Conv) -> Var {
        t.conv1d(x, c.w, c.b, c.stride, 1)
    }

    fn conv_res(t: &mut Tape, m: Var, c: ConvCell) -> Var {
        let a = t.silu(m);
        let a = Self::conv(t, a, c.a);
        let a = t.silu(a);
        let a = Self::conv(t, a, c.b);
        t.add(m, a)
    }

    /// Bottom-up pass; returns one feature vector per level (index 0 =
    /// coarsest).
    fn encode_features(&self, t: &mut Tape, x: Var) -> Vec<Var> {
        let levels = self.spec.levels;
        let mut feats = vec![x; levels];
        match &self.topo.encoder {
            Encoder::Affine { input, cells } => {
                let h = Self::lin(t, x, *input);
                let mut h = t.silu(h);
                for level in (0..levels).rev() {
                    h = Self::res(t, h, cells[level]);
                    feats[level] = h;
                }
            }
            Encoder::Conv {
                stem,
                cells,
                downs,
                heads,
            } => {
                let mut m = Self::conv(t, x, *stem);
                for level in (0..levels).rev() {
                    m = Self::conv_res(t, m, cells[level]);
                    m = Self::conv(t, m, downs[level]);
                    let f = Self::lin(t, m, heads[level]);
                    feats[level] = t.silu(f);
                }
            }
        }
        feats
    }

    fn split_gaussian(t: &mut Tape, raw: Var, dz: usize) -> (Var, Var) {
        let m = t.slice(raw, 0, dz);
        let lv = t.slice(raw, dz, dz);
        (m, lv)
    }

    /// Record a full forward pass onto `t`.
    pub(crate) fn forward(&self, t: &mut Tape, latents: Latents<'_>) -> ForwardTrace {
        let dz = self.spec.dims_per_group;
        let feats = match &latents {
            Latents::Posterior { x, .. } => {
                let xv = t.constant(x.to_vec());
                Some(self.encode_features(t, xv))
            }
            _ => None,
        };
        let mut s = t.param(self.topo.state0);
        let mut groups = Vec::with_capacity(self.topo.groups.len());
        for (l, net) in self.topo.groups.iter().enumerate() {
            let (pm, plv) = match net.prior {
                None => (t.constant(vec![0.0; dz]), t.constant(vec![0.0; dz])),
                Some((fc1, fc2)) => {
                    let a = t.silu(s);
                    let a = Self::lin(t, a, fc1);
                    let a = t.silu(a);
                    let raw = Self::lin(t, a, fc2);
                    let (m, lv) = Self::split_gaussian(t, raw, dz);
                    (m, t.clamp(lv, LOGVAR_MIN, LOGVAR_MAX))
                }
            };
            let (z, posterior, kl) = match &latents {
                Latents::Posterior { noise, .. } => {
                    let feats = feats.as_ref().expect("posterior mode encodes");
                    let e = feats[self.spec.level_of(l)];
                    let inp = t.concat(s, e);
                    let a = t.silu(inp);
                    let a = Self::lin(t, a, net.posterior.0);
                    let a = t.silu(a);
                    let raw = Self::lin(t, a, net.posterior.1);
                    let (dm, dlv) = Self::split_gaussian(t, raw, dz);
                    let qm = t.add(pm, dm);
                    let qlv = t.add(plv, dlv);
                    let qlv = t.clamp(qlv, LOGVAR_MIN, LOGVAR_MAX);
                    let half = t.scale(qlv, 0.5);
                    let std = t.exp(half);
                    let eps = t.constant(noise[l].clone());
                    let step = t.mul(std, eps);
                    let z = t.add(qm, step);
                    let kl = t.kl_gauss(qm, qlv, pm, plv);
                    (z, Some((qm, qlv)), Some(kl))
                }
                Latents::Given(zs) => (t.constant(zs[l].clone()), None, None),
                Latents::Prior { temperature, noise } => {
                    let half = t.scale(plv, 0.5);
                    let std = t.exp(half);
                    let eps = t.constant(noise[l].iter().map(|e| temperature * e).collect());
                    let step = t.mul(std, eps);
                    (t.add(pm, step), None, None)
                }
            };
            let inj = Self::lin(t, z, net.inject);
            s = t.add(s, inj);
            s = Self::res(t, s, net.cell);
            groups.push(GroupTrace {
                posterior,
                z,
                kl,
            });
        }

        let pre = match &self.topo.output {
            OutputNet::Affine { out } => {
                let a = t.silu(s);
                Self::lin(t, a, *out)
            }
            OutputNet::Conv { lift, cells, out } => {
                let a = t.silu(s);
                let mut m = Self::lin(t, a, *lift);
                let ch = self.spec.conv_channels;
                for (level, cell) in cells.iter().enumerate() {
                    m = Self::conv_res(t, m, *cell);
                    let target = if level + 1 < self.spec.levels {
                        self.spec.level_len(level + 1)
                    } else {
                        self.spec.input_dim
                    };
                    m = t.upsample(m, ch, target);
                }
                let a = t.silu(m);
                Self::conv(t, a, *out)
            }
        };
        let x_mean = t.tanh(pre);
        let lv = t.param(self.topo.obs_logvar);
        let x_logvar = t.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        ForwardTrace {
            groups,
            x_mean,
            x_logvar,
        }
    }

    /// Approximate posterior of every group, coarse to fine. Each group is
    /// conditioned on the posterior means of the coarser groups, so the
    /// result is deterministic.
    pub fn encode(&self, x_norm: &[f64]) -> Result<Vec<GroupGaussian>> {
        self.check_input(x_norm)?;
        let zero = self.zero_noise();
        let mut t = Tape::new(&self.params);
        let tr = self.forward(&mut t, Latents::Posterior { x: x_norm, noise: &zero });
        tr.groups
            .iter()
            .map(|g| {
                let (m, lv) = g.posterior.expect("posterior mode");
                GroupGaussian::new(t.value(m).to_vec(), t.value(lv).to_vec())
            })
            .collect()
    }

    /// Observation-model parameters for the given latent groups.
    pub fn decode(&self, z: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_latents(z)?;
        let mut t = Tape::new(&self.params);
        let tr = self.forward(&mut t, Latents::Given(z));
        Ok((t.value(tr.x_mean).to_vec(), t.value(tr.x_logvar).to_vec()))
    }

    pub(crate) fn zero_noise(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.spec.dims_per_group]; self.spec.num_groups()]
    }
}
