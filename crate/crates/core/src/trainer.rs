//! Training loops: actor-critic, the vanilla pathwise-gradient baseline and
//! supervised regression onto reference solutions.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::actor::{actor_loss_and_grad, actor_targets_from_estimates, vanilla_cost_grad};
use crate::critic::{critic_loss_and_grad, TdVariant};
use crate::error::{Error, Result};
use crate::eval::{estimate_cost, rel_error, DomainSampler, TimeSampling};
use crate::func::{BatchFunction, Times};
use crate::nets::{
    Checkpoint, InputKind, NamedParams, NetFn, Network, NetworkArch, OutputTransform, ParamVector,
};
use crate::optim::AdamState;
use crate::problems::{
    AiyagariParams, AiyagariProblem, ControlProblem, Domain, LqParams, LqProblem,
};
use crate::rng::{derive_seed, Stream};
use crate::sde::sample_trajectories;

/// Critic loss above which a run is declared diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    #[default]
    #[serde(rename = "ac", alias = "actor-critic", alias = "actor_critic")]
    ActorCritic,
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "supervised")]
    Supervised,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown mode `{s}`")))
    }
}

/// Run configuration. Problem-specific keys are optional in files and are
/// filled with defaults by [`TrainConfig::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// `lq` or `aiyagari`.
    pub problem: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_a: Option<f64>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub dtau: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub dt: f64,
    pub eval_every: usize,
    pub eval_samples: usize,
    pub seed: u64,
    pub mode: Mode,
    pub hidden_width: usize,
    pub num_freq: usize,
    pub num_blocks: usize,
    #[serde(default)]
    pub td_variant: TdVariant,
    #[serde(default)]
    pub record_wall_clock: bool,
}

impl TrainConfig {
    /// Named presets: `lq1d`, `lq10d`, `aiyagari`.
    pub fn preset(name: &str) -> Result<Self> {
        let base = TrainConfig {
            problem: "lq".into(),
            dim: 1,
            beta: None,
            sigma_bar: None,
            horizon: None,
            alpha: None,
            delta: None,
            sigma_z: None,
            sigma_a: None,
            lr_actor: 0.05,
            lr_critic: 0.1,
            dtau: 0.5,
            iterations: 200,
            batch_size: 500,
            dt: 0.01,
            eval_every: 10,
            eval_samples: 4096,
            seed: 0,
            mode: Mode::ActorCritic,
            hidden_width: 64,
            num_freq: 4,
            num_blocks: 2,
            td_variant: TdVariant::Modified,
            record_wall_clock: false,
        };
        let cfg = match name {
            "lq1d" => TrainConfig {
                hidden_width: 40,
                ..base
            },
            "lq10d" => TrainConfig {
                dim: 10,
                lr_actor: 0.01,
                lr_critic: 0.05,
                iterations: 1500,
                batch_size: 2000,
                hidden_width: 128,
                ..base
            },
            "aiyagari" => TrainConfig {
                problem: "aiyagari".into(),
                dim: 2,
                lr_actor: 0.01,
                lr_critic: 0.02,
                iterations: 500,
                batch_size: 1000,
                ..base
            },
            other => return Err(Error::Config(format!("unknown preset `{other}`"))),
        };
        cfg.resolve()
    }

    /// Parses a JSON object, layering its keys over the matching preset.
    /// `problem` may name a preset or a problem; for `lq` the preset follows
    /// `dim`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let problem = match obj.get("problem") {
            None => "lq1d".to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::Config("`problem` must be a string".into())),
        };
        let preset = match problem.as_str() {
            "lq" => match obj.get("dim").and_then(Value::as_u64) {
                Some(1) | None => "lq1d",
                Some(_) => "lq10d",
            },
            other => other,
        };
        let mut base = serde_json::to_value(Self::preset(preset)?)?;
        let map = base.as_object_mut().expect("config serializes to an object");
        // problem-specific defaults are re-derived after merging
        for key in ["beta", "sigma_bar", "horizon", "alpha", "delta", "sigma_z", "sigma_a"] {
            map.remove(key);
        }
        for (k, v) in obj {
            map.insert(k.clone(), v.clone());
        }
        map.insert("problem".into(), Value::String(preset_problem(preset).into()));
        let cfg: TrainConfig =
            serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Fills problem defaults and validates.
    pub fn resolve(mut self) -> Result<Self> {
        match self.problem.as_str() {
            "lq" => {
                if self.alpha.is_some()
                    || self.delta.is_some()
                    || self.sigma_z.is_some()
                    || self.sigma_a.is_some()
                {
                    return Err(Error::Config("Aiyagari keys given for the LQ problem".into()));
                }
                let d = LqParams::with_dim(self.dim);
                self.beta.get_or_insert(d.beta);
                self.sigma_bar.get_or_insert(d.sigma_bar);
                self.horizon.get_or_insert(d.horizon);
            }
            "aiyagari" => {
                if self.beta.is_some() || self.sigma_bar.is_some() {
                    return Err(Error::Config("LQ keys given for the Aiyagari problem".into()));
                }
                if self.dim != 2 {
                    return Err(Error::Config("the Aiyagari problem has dim 2".into()));
                }
                let d = AiyagariParams::default();
                self.alpha.get_or_insert(d.alpha);
                self.delta.get_or_insert(d.delta);
                self.sigma_z.get_or_insert(d.sigma_z);
                self.sigma_a.get_or_insert(d.sigma_a);
                self.horizon.get_or_insert(d.horizon);
            }
            other => return Err(Error::Config(format!("unknown problem `{other}`"))),
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: &str| Err(Error::Config(format!("`{name}` {reason}")));
        if self.dim == 0 {
            return bad("dim", "must be positive");
        }
        for (name, v) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, "must be a finite non-negative number");
            }
        }
        if !(self.dtau > 0.0 && self.dtau.is_finite()) {
            return bad("dtau", "must be positive");
        }
        if self.iterations == 0 {
            return bad("iterations", "must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size", "must be at least 2");
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be at least 1");
        }
        if self.eval_samples < 2 {
            return bad("eval_samples", "must be at least 2");
        }
        if self.hidden_width == 0 || self.num_freq == 0 {
            return bad("hidden_width", "and num_freq must be positive");
        }
        let horizon = self.horizon.unwrap_or(1.0);
        if !(self.dt > 0.0) || self.dt > horizon {
            return bad("dt", "must lie in (0, horizon]");
        }
        let steps = (horizon / self.dt).round();
        if (steps * self.dt - horizon).abs() > 1e-9 * horizon {
            return bad("dt", "must divide the horizon");
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        (self.horizon.unwrap_or(1.0) / self.dt).round() as usize
    }

    /// Builds the control problem the config describes.
    pub fn build_problem(&self) -> Result<Arc<dyn ControlProblem>> {
        match self.problem.as_str() {
            "lq" => {
                let d = LqParams::with_dim(self.dim);
                let p = LqParams {
                    n: self.dim,
                    beta: self.beta.clone().unwrap_or(d.beta),
                    sigma_bar: self.sigma_bar.unwrap_or(d.sigma_bar),
                    horizon: self.horizon.unwrap_or(d.horizon),
                };
                Ok(Arc::new(LqProblem::new(p)?))
            }
            "aiyagari" => {
                let d = AiyagariParams::default();
                let p = AiyagariParams {
                    alpha: self.alpha.unwrap_or(d.alpha),
                    delta: self.delta.unwrap_or(d.delta),
                    sigma_z: self.sigma_z.unwrap_or(d.sigma_z),
                    sigma_a: self.sigma_a.unwrap_or(d.sigma_a),
                    horizon: self.horizon.unwrap_or(d.horizon),
                    ..d
                };
                Ok(Arc::new(AiyagariProblem::new(p)?))
            }
            other => Err(Error::Config(format!("unknown problem `{other}`"))),
        }
    }

    /// Architectures of `(𝒱₀, 𝒢, u)` for a problem.
    pub fn architectures(&self, prob: &dyn ControlProblem) -> [NetworkArch; 3] {
        let n = prob.state_dim();
        let input = match prob.domain() {
            Domain::Torus { period } => InputKind::Torus {
                period: *period,
                num_freq: self.num_freq,
            },
            Domain::Euclidean { .. } => InputKind::Euclidean,
        };
        let positive = matches!(prob.domain(), Domain::Euclidean { .. });
        let arch = |include_time, output_dim, output_transform| NetworkArch {
            input: input.clone(),
            state_dim: n,
            include_time,
            horizon: prob.horizon(),
            hidden_width: self.hidden_width,
            num_blocks: self.num_blocks,
            output_dim,
            output_transform,
        };
        [
            arch(false, 1, OutputTransform::Identity),
            arch(true, n, OutputTransform::Identity),
            arch(
                true,
                prob.control_dim(),
                if positive {
                    OutputTransform::Softplus
                } else {
                    OutputTransform::Identity
                },
            ),
        ]
    }
}

fn preset_problem(preset: &str) -> &'static str {
    if preset == "aiyagari" {
        "aiyagari"
    } else {
        "lq"
    }
}

/// One evaluation row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub tau: f64,
    pub critic_loss: f64,
    pub err_v0: f64,
    pub err_g: f64,
    pub err_u: f64,
    pub cost_mean: f64,
    pub cost_stderr: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str =
    "iter,tau,critic_loss,err_v0,err_g,err_u,cost_mean,cost_stderr,wall_ms";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    /// Total training time in milliseconds.
    pub elapsed_ms: u64,
}

impl MetricsLog {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{METRICS_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.iter,
                r.tau,
                r.critic_loss,
                r.err_v0,
                r.err_g,
                r.err_u,
                r.cost_mean,
                r.cost_stderr,
                r.wall_ms
            )?;
        }
        Ok(())
    }

    /// Parses a file written by [`MetricsLog::write_csv`].
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(METRICS_HEADER) {
            return Err(Error::Config("unexpected metrics header".into()));
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 9 {
                return Err(Error::Config(format!("malformed metrics row `{line}`")));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Config(format!("bad number `{s}`")))
            };
            let int = |s: &str| -> Result<u64> {
                s.parse()
                    .map_err(|_| Error::Config(format!("bad integer `{s}`")))
            };
            rows.push(MetricsRow {
                iter: int(f[0])? as usize,
                tau: num(f[1])?,
                critic_loss: num(f[2])?,
                err_v0: num(f[3])?,
                err_g: num(f[4])?,
                err_u: num(f[5])?,
                cost_mean: num(f[6])?,
                cost_stderr: num(f[7])?,
                wall_ms: int(f[8])?,
            });
        }
        Ok(Self {
            rows,
            elapsed_ms: 0,
        })
    }
}

/// Relative errors of `(𝒱₀, 𝒢, u)`; NaN where a network is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Errors {
    pub v0: f64,
    pub g: f64,
    pub u: f64,
}

/// Fixed evaluation points with reference values, shared by every row of a
/// run.
pub struct Evaluator {
    prob: Arc<dyn ControlProblem>,
    x0: Vec<f64>,
    times: Vec<f64>,
    xs: Vec<f64>,
    ref_v0: Option<Vec<f64>>,
    ref_g: Option<Vec<f64>>,
    ref_u: Option<Vec<f64>>,
    num_samples: usize,
    num_steps: usize,
    cost_seed: u64,
}

impl Evaluator {
    pub fn new(prob: Arc<dyn ControlProblem>, num_samples: usize, num_steps: usize, seed: u64) -> Result<Self> {
        let s0 = DomainSampler::for_problem(&*prob, TimeSampling::Fixed(0.0));
        let st = DomainSampler::for_problem(
            &*prob,
            TimeSampling::Uniform {
                horizon: prob.horizon(),
            },
        );
        let (_, x0) = s0.sample(num_samples, derive_seed(seed, Stream::Evaluation, 1));
        let (times, xs) = st.sample(num_samples, derive_seed(seed, Stream::Evaluation, 2));
        let (n, nc) = (prob.state_dim(), prob.control_dim());
        let (ref_v0, ref_g, ref_u) = match prob.analytic() {
            Some(sol) => {
                let v0 = (0..num_samples).map(|k| sol.value(0.0, &x0[k * n..(k + 1) * n])).collect();
                let mut g = vec![0.0; num_samples * n];
                let mut u = vec![0.0; num_samples * nc];
                for k in 0..num_samples {
                    let x = &xs[k * n..(k + 1) * n];
                    sol.grad_value(times[k], x, &mut g[k * n..(k + 1) * n]);
                    sol.control(times[k], x, &mut u[k * nc..(k + 1) * nc]);
                }
                (Some(v0), Some(g), Some(u))
            }
            None => (None, None, None),
        };
        Ok(Self {
            prob,
            x0,
            times,
            xs,
            ref_v0,
            ref_g,
            ref_u,
            num_samples,
            num_steps,
            cost_seed: derive_seed(seed, Stream::Evaluation, 3),
        })
    }

    fn error_of(&self, f: Option<&dyn BatchFunction>, at_zero: bool, reference: &Option<Vec<f64>>) -> Result<f64> {
        let (Some(f), Some(r)) = (f, reference) else {
            return Ok(f64::NAN);
        };
        let mut out = vec![0.0; r.len()];
        if at_zero {
            f.eval(Times::Const(0.0), &self.x0, &mut out)?;
        } else {
            f.eval(Times::PerRow(&self.times), &self.xs, &mut out)?;
        }
        rel_error(&out, r)
    }

    pub fn errors(
        &self,
        v0: Option<&dyn BatchFunction>,
        g: Option<&dyn BatchFunction>,
        policy: Option<&dyn BatchFunction>,
    ) -> Result<Errors> {
        Ok(Errors {
            v0: self.error_of(v0, true, &self.ref_v0)?,
            g: self.error_of(g, false, &self.ref_g)?,
            u: self.error_of(policy, false, &self.ref_u)?,
        })
    }

    pub fn cost(&self, policy: &dyn BatchFunction) -> Result<(f64, f64)> {
        let e = estimate_cost(&*self.prob, policy, self.num_samples, self.num_steps, self.cost_seed)?;
        Ok((e.mean, e.stderr))
    }
}

/// Final parameters and the metrics of a run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: TrainConfig,
    pub log: MetricsLog,
    pub networks: Vec<NamedParams>,
}

impl TrainOutcome {
    pub fn params(&self, name: &str) -> Option<&ParamVector> {
        self.networks.iter().find(|n| n.name == name).map(|n| &n.params)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            seed: self.config.seed,
            iteration: self.config.iterations,
            problem: self.config.problem.clone(),
            networks: self.networks.clone(),
            meta: serde_json::to_value(&self.config).expect("config serializes"),
        }
    }
}

/// Shared state of a run.
struct Session {
    cfg: TrainConfig,
    prob: Arc<dyn ControlProblem>,
    nets: [Network; 3],
    params: [ParamVector; 3],
    adam: [AdamState; 3],
    eval: Evaluator,
    start: Instant,
    log: MetricsLog,
}

const NAMES: [&str; 3] = ["v0", "g", "policy"];

impl Session {
    fn new(cfg: &TrainConfig, prob: Arc<dyn ControlProblem>) -> Result<Self> {
        cfg.validate()?;
        let archs = cfg.architectures(&*prob);
        let nets = archs.map(Network::new);
        let [a, b, c] = nets;
        let nets = [a?, b?, c?];
        let params = [0, 1, 2].map(|k| {
            nets[k].init_params(derive_seed(cfg.seed, Stream::Init, k as u64))
        });
        let adam = [0, 1, 2].map(|k| AdamState::new(nets[k].num_params()));
        let eval = Evaluator::new(prob.clone(), cfg.eval_samples, cfg.num_steps(), cfg.seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            prob,
            nets,
            params,
            adam,
            eval,
            start: Instant::now(),
            log: MetricsLog::default(),
        })
    }

    fn net(&self, k: usize) -> NetFn<'_> {
        self.nets[k].bind(&self.params[k])
    }

    fn record(&mut self, iter: usize, critic_loss: f64, with_critic: bool) -> Result<()> {
        let (v0, g, u) = (self.net(0), self.net(1), self.net(2));
        let errs = if with_critic {
            self.eval.errors(Some(&v0), Some(&g), Some(&u))?
        } else {
            self.eval.errors(None, None, Some(&u))?
        };
        let (cost_mean, cost_stderr) = self.eval.cost(&u)?;
        let wall_ms = if self.cfg.record_wall_clock {
            self.start.elapsed().as_millis() as u64
        } else {
            0
        };
        let row = MetricsRow {
            iter,
            tau: iter as f64 * self.cfg.dtau,
            critic_loss,
            err_v0: errs.v0,
            err_g: errs.g,
            err_u: errs.u,
            cost_mean,
            cost_stderr,
            wall_ms,
        };
        log::info!(
            "iter {iter}: loss {critic_loss:.4e} err_v0 {:.4} err_g {:.4} err_u {:.4} cost {cost_mean:.5}",
            row.err_v0,
            row.err_g,
            row.err_u
        );
        self.log.rows.push(row);
        Ok(())
    }

    fn should_record(&self, k: usize) -> bool {
        k % self.cfg.eval_every == 0
    }

    fn check_params(&self, iteration: usize) -> Result<()> {
        for (k, p) in self.params.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    reason: format!("non-finite {} parameters", NAMES[k]),
                });
            }
        }
        Ok(())
    }

    fn adam_step(&mut self, k: usize, grad: &[f64], lr: f64) -> Result<()> {
        self.adam[k].step(&mut self.params[k], grad, lr)
    }

    fn finish(mut self) -> TrainOutcome {
        self.log.elapsed_ms = self.start.elapsed().as_millis() as u64;
        let networks = (0..3)
            .map(|k| NamedParams {
                name: NAMES[k].to_string(),
                arch: self.nets[k].arch().clone(),
                params: self.params[k].clone(),
            })
            .collect();
        TrainOutcome {
            config: self.cfg,
            log: self.log,
            networks,
        }
    }
}

fn guard_loss(loss: f64, iteration: usize) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(Error::Diverged {
            iteration,
            reason: format!("critic loss {loss:e}"),
        });
    }
    Ok(())
}

/// Dispatches on `config.mode`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_on(config, config.build_problem()?)
}

/// Runs the configured mode on a caller-supplied problem. The problem keys
/// of the config are ignored apart from the name recorded in checkpoints.
pub fn train_on(config: &TrainConfig, prob: Arc<dyn ControlProblem>) -> Result<TrainOutcome> {
    if (config.horizon.unwrap_or(1.0) - prob.horizon()).abs() > 1e-12 {
        return Err(Error::Config("config horizon differs from the problem horizon".into()));
    }
    match config.mode {
        Mode::ActorCritic => critic_loop(config, prob, None),
        Mode::Vanilla => baseline(config, prob),
        Mode::Supervised => supervised(config, prob),
    }
}

/// The actor-critic iteration: sample under the current policy, take one
/// critic step on the squared TD and one actor step towards the
/// policy-gradient targets.
pub fn run_actor_critic(config: &TrainConfig) -> Result<TrainOutcome> {
    critic_loop(config, config.build_problem()?, None)
}

/// Critic-only training with a fixed policy in place of the actor network.
pub fn evaluate_policy(config: &TrainConfig, policy: &dyn BatchFunction) -> Result<TrainOutcome> {
    critic_loop(config, config.build_problem()?, Some(policy))
}

fn critic_loop(
    config: &TrainConfig,
    prob: Arc<dyn ControlProblem>,
    fixed: Option<&dyn BatchFunction>,
) -> Result<TrainOutcome> {
    let mut s = Session::new(config, prob)?;
    let cfg = s.cfg.clone();
    let num_steps = cfg.num_steps();
    for k in 0..=cfg.iterations {
        let seed = derive_seed(cfg.seed, Stream::Training, k as u64);
        let policy = s.net(2);
        let behaviour: &dyn BatchFunction = match fixed {
            Some(p) => p,
            None => &policy,
        };
        let batch = sample_trajectories(&*s.prob, behaviour, cfg.batch_size, num_steps, seed)
            .map_err(|e| diverged_on_state(e, k))?;
        let cg = critic_loss_and_grad(&*s.prob, s.net(0), s.net(1), &batch, cfg.td_variant)?;
        if k == cfg.iterations {
            s.record(k, cg.loss, true)?;
            break;
        }
        if s.should_record(k) {
            s.record(k, cg.loss, true)?;
        }
        guard_loss(cg.loss, k)?;
        let targets = match fixed {
            None => Some(actor_targets_from_estimates(
                &*s.prob,
                &s.net(2),
                &batch,
                &cg.g_values,
                cfg.lr_actor,
                cfg.dtau,
            )?),
            Some(_) => None,
        };
        drop(batch);
        s.adam_step(0, &cg.grad_v0, cfg.lr_critic * cfg.dtau)?;
        s.adam_step(1, &cg.grad_g, cfg.lr_critic * cfg.dtau)?;
        if let Some(targets) = targets {
            let (_, grad) = actor_loss_and_grad(s.net(2), &targets)?;
            s.adam_step(2, &grad, cfg.lr_actor * cfg.dtau)?;
        }
        s.check_params(k)?;
    }
    Ok(s.finish())
}

fn diverged_on_state(e: Error, iteration: usize) -> Error {
    match e {
        Error::NonFiniteState { trajectory, step } => Error::Diverged {
            iteration,
            reason: format!("non-finite state in trajectory {trajectory} at step {step}"),
        },
        e => e,
    }
}

/// Discretize-then-optimize baseline: Adam on the pathwise gradient of the
/// Monte Carlo cost. No critic is trained.
pub fn run_baseline(config: &TrainConfig) -> Result<TrainOutcome> {
    baseline(config, config.build_problem()?)
}

fn baseline(config: &TrainConfig, prob: Arc<dyn ControlProblem>) -> Result<TrainOutcome> {
    let mut s = Session::new(config, prob)?;
    let cfg = s.cfg.clone();
    let num_steps = cfg.num_steps();
    for k in 0..cfg.iterations {
        if s.should_record(k) {
            s.record(k, f64::NAN, false)?;
        }
        let seed = derive_seed(cfg.seed, Stream::Training, k as u64);
        let (_, grad) = vanilla_cost_grad(&*s.prob, s.net(2), cfg.batch_size, num_steps, seed)
            .map_err(|e| diverged_on_state(e, k))?;
        s.adam_step(2, &grad, cfg.lr_actor * cfg.dtau)?;
        s.check_params(k)?;
    }
    s.record(cfg.iterations, f64::NAN, false)?;
    Ok(s.finish())
}

/// Regression of all three networks onto the reference solution, with
/// points drawn from the same measure as the error metrics.
pub fn run_supervised(config: &TrainConfig) -> Result<TrainOutcome> {
    supervised(config, config.build_problem()?)
}

fn supervised(config: &TrainConfig, prob: Arc<dyn ControlProblem>) -> Result<TrainOutcome> {
    let mut s = Session::new(config, prob)?;
    let cfg = s.cfg.clone();
    let prob = s.prob.clone();
    let sol = prob
        .analytic()
        .ok_or_else(|| Error::MissingReference(prob.name().to_string()))?;
    let (n, nc) = (s.prob.state_dim(), s.prob.control_dim());
    let num_steps = cfg.num_steps();
    let s0 = DomainSampler::for_problem(&*s.prob, TimeSampling::Fixed(0.0));
    let st = DomainSampler::for_problem(
        &*s.prob,
        TimeSampling::Uniform {
            horizon: s.prob.horizon(),
        },
    );
    for k in 0..cfg.iterations {
        if s.should_record(k) {
            s.record(k, f64::NAN, true)?;
        }
        let seed = derive_seed(cfg.seed, Stream::Training, k as u64);
        let (_, x0) = s0.sample(cfg.batch_size, derive_seed(seed, Stream::Training, 0));
        let (times, xs) = st.sample(cfg.batch_size * num_steps, derive_seed(seed, Stream::Training, 1));
        let npts = times.len();
        let v_ref: Vec<f64> = (0..cfg.batch_size)
            .map(|i| sol.value(0.0, &x0[i * n..(i + 1) * n]))
            .collect();
        let mut g_ref = vec![0.0; npts * n];
        let mut u_ref = vec![0.0; npts * nc];
        for i in 0..npts {
            let x = &xs[i * n..(i + 1) * n];
            sol.grad_value(times[i], x, &mut g_ref[i * n..(i + 1) * n]);
            sol.control(times[i], x, &mut u_ref[i * nc..(i + 1) * nc]);
        }
        let specs: [(usize, Times<'_>, &[f64], &[f64], f64); 3] = [
            (0, Times::Const(0.0), &x0, &v_ref, cfg.lr_critic),
            (1, Times::PerRow(&times), &xs, &g_ref, cfg.lr_critic),
            (2, Times::PerRow(&times), &xs, &u_ref, cfg.lr_actor),
        ];
        for (net, t, pts, reference, lr) in specs {
            let grad = regression_grad(&s.nets[net], &s.params[net], t, pts, reference, num_steps)?;
            s.adam_step(net, &grad, lr * cfg.dtau)?;
        }
        s.check_params(k)?;
    }
    s.record(cfg.iterations, f64::NAN, true)?;
    Ok(s.finish())
}

/// Gradient of the mean squared error, evaluated in chunks.
fn regression_grad(
    net: &Network,
    params: &[f64],
    times: Times<'_>,
    xs: &[f64],
    reference: &[f64],
    chunks: usize,
) -> Result<ParamVector> {
    let (n, d) = (net.input_dim(), net.output_dim());
    let rows = xs.len() / n;
    let per = rows.div_ceil(chunks.max(1));
    let scale = 2.0 / rows as f64;
    let mut grad = ParamVector::zeros(net.num_params());
    let mut start = 0;
    while start < rows {
        let end = (start + per).min(rows);
        let t = match times {
            Times::Const(c) => Times::Const(c),
            Times::PerRow(ts) => Times::PerRow(&ts[start..end]),
        };
        let cache = net.forward_cached(params, t, &xs[start * n..end * n])?;
        let cot: Vec<f64> = cache
            .output
            .iter()
            .zip(&reference[start * d..end * d])
            .map(|(a, b)| scale * (a - b))
            .collect();
        net.backward(params, &cache, &cot, &mut grad, None)?;
        start = end;
    }
    Ok(grad)
}
