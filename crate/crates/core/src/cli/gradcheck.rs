//! Finite-difference checks of every network primitive and both full
//! networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::airl::{DiscLoss, Discriminator};
use crate::dynamics::{initial_states, Action};
use crate::encoder::{BatchFrame, BatchSample, EncoderConfig, PerceiverLayer, PolylineEncoder, SceneEncoder, TargetLoss};
use crate::error::Result;
use crate::nn::{
    film, film_backward, max_pool_set, max_pool_set_backward, check_store_gradients, GaussianHead, GradCheckOptions,
    GradCheckReport, Grads, Init, LayerNorm, Linear, Mhca, MlpBlock, ParamId, ParamStore, Weights,
};
use crate::rl::{NllLoss, Policy, PolicyConfig, PpoLoss, PpoTarget, ProbeLoss};
use crate::scene::{generate_synthetic_scenario, Template, World};

pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl GradCheckCase {
    pub fn passed(&self) -> bool {
        self.report.passed(GRADCHECK_TOLERANCE)
    }
}

fn coeffs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(c: &[f64], y: &[f64]) -> f64 {
    c.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn input(store: &mut ParamStore, name: &str, n: usize, rng: &mut ChaCha8Rng) -> ParamId {
    store.add(name, &[n], Init::FanIn { fan_in: 1, gain: 1.0 }, rng).expect("valid shape")
}

fn add_into(grads: &mut Grads<f64>, id: ParamId, d: &[f64]) {
    grads.get_mut(id).iter_mut().zip(d).for_each(|(g, v)| *g += *v);
}

/// Runs the check; with `bug`, the analytic gradient is scaled by 1.05 to
/// verify that the checker notices.
fn run(
    name: &'static str,
    store: &ParamStore,
    opts: &GradCheckOptions,
    bug: bool,
    mut loss: impl FnMut(&Weights<f64>, Option<&mut Grads<f64>>) -> f64,
) -> GradCheckCase {
    let report = check_store_gradients(store, opts, |ws, grads| match grads {
        Some(g) => {
            let l = loss(ws, Some(&mut *g));
            if bug {
                g.scale(1.05);
            }
            l
        }
        None => loss(ws, None),
    });
    GradCheckCase { name, report }
}

/// All gradient checks; `inject_bug` corrupts the analytic gradient of the
/// linear-layer case.
pub fn gradcheck_suite(opts: &GradCheckOptions, inject_bug: bool) -> Result<Vec<GradCheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6AD);
    let mut cases = Vec::new();

    {
        let mut s = ParamStore::new();
        let lin = Linear::new(&mut s, "linear", 5, 3, &mut rng)?;
        let x = input(&mut s, "x", 5, &mut rng);
        let c = coeffs(&mut rng, 3);
        cases.push(run("linear", &s, opts, inject_bug, |ws, g| {
            let y = lin.forward(ws, ws.get(x)).unwrap();
            if let Some(g) = g {
                let mut dx = vec![0.0; 5];
                lin.backward(ws, ws.get(x), &c, g, Some(&mut dx));
                add_into(g, x, &dx);
            }
            dot(&c, &y)
        }));
    }
    {
        let mut s = ParamStore::new();
        let ln = LayerNorm::new(&mut s, "ln", 6, &mut rng)?;
        s.set(ln.scale, &coeffs(&mut rng, 6).iter().map(|v| 1.0 + 0.5 * *v as f32).collect::<Vec<_>>())?;
        s.set(ln.shift, &coeffs(&mut rng, 6).iter().map(|v| *v as f32).collect::<Vec<_>>())?;
        let x = input(&mut s, "x", 6, &mut rng);
        let c = coeffs(&mut rng, 6);
        cases.push(run("layer_norm", &s, opts, false, |ws, g| {
            let (y, cache) = ln.forward(ws, ws.get(x)).unwrap();
            if let Some(g) = g {
                let dx = ln.backward(ws, &cache, &c, g);
                add_into(g, x, &dx);
            }
            dot(&c, &y)
        }));
    }
    {
        let mut s = ParamStore::new();
        let toks: Vec<ParamId> = (0..4).map(|k| input(&mut s, &format!("token{k}"), 5, &mut rng)).collect();
        let c = coeffs(&mut rng, 5);
        cases.push(run("max_pool_set", &s, opts, false, |ws, g| {
            let set: Vec<&[f64]> = toks.iter().map(|&t| ws.get(t)).collect();
            let (y, arg) = max_pool_set(&set).unwrap();
            if let Some(g) = g {
                let mut d = vec![vec![0.0; 5]; 4];
                max_pool_set_backward(&arg, &c, &mut d);
                for (t, dt) in toks.iter().zip(&d) {
                    add_into(g, *t, dt);
                }
            }
            dot(&c, &y)
        }));
    }
    {
        let mut s = ParamStore::new();
        let z = input(&mut s, "z", 6, &mut rng);
        let sc = input(&mut s, "scale", 6, &mut rng);
        let sh = input(&mut s, "shift", 6, &mut rng);
        let c = coeffs(&mut rng, 6);
        cases.push(run("film", &s, opts, false, |ws, g| {
            let y = film(ws.get(z), ws.get(sc), ws.get(sh)).unwrap();
            if let Some(g) = g {
                let (dz, dsc, dsh) = film_backward(ws.get(z), ws.get(sc), &c);
                add_into(g, z, &dz);
                add_into(g, sc, &dsc);
                add_into(g, sh, &dsh);
            }
            dot(&c, &y)
        }));
    }
    {
        let mut s = ParamStore::new();
        let mlp = MlpBlock::new(&mut s, "mlp", 5, 8, 3, &mut rng)?;
        let x = input(&mut s, "x", 5, &mut rng);
        let c = coeffs(&mut rng, 3);
        cases.push(run("mlp_block", &s, opts, false, |ws, g| {
            let (y, cache) = mlp.forward(ws, ws.get(x)).unwrap();
            if let Some(g) = g {
                let dx = mlp.backward(ws, ws.get(x), &cache, &c, g, true);
                add_into(g, x, &dx);
            }
            dot(&c, &y)
        }));
    }
    {
        let mut s = ParamStore::new();
        let att = Mhca::new(&mut s, "mhca", 32, &mut rng)?;
        let q = input(&mut s, "query", 32, &mut rng);
        let kv = input(&mut s, "kv", 3 * 32, &mut rng);
        let c = coeffs(&mut rng, 32);
        cases.push(run("mhca", &s, opts, false, |ws, g| {
            let (y, cache) = att.forward(ws, ws.get(q), ws.get(kv)).unwrap();
            if let Some(g) = g {
                let (dq, dkv) = att.backward(ws, ws.get(q), ws.get(kv), &cache, &c, g);
                add_into(g, q, &dq);
                add_into(g, kv, &dkv);
            }
            dot(&c, &y)
        }));
    }
    {
        let mut s = ParamStore::new();
        let raw = input(&mut s, "raw", 4, &mut rng);
        let head = GaussianHead { mean_scale: [2.0, 0.1] };
        let a = [0.7, -0.03];
        let c = coeffs(&mut rng, 4);
        cases.push(run("gaussian_head", &s, opts, false, |ws, g| {
            let out = head.forward(ws.get(raw));
            let lp = out.log_prob(a);
            let l = lp + c[0] * out.mean[0] + c[1] * out.mean[1] + c[2] * out.log_std[0] + c[3] * out.log_std[1];
            if let Some(g) = g {
                let (dm, dl) = crate::nn::gaussian_log_prob_backward(out.mean, out.log_std, a);
                let d = head.backward(ws.get(raw), [dm[0] + c[0], dm[1] + c[1]], [dl[0] + c[2], dl[1] + c[3]]);
                add_into(g, raw, &d);
            }
            l
        }));
    }
    let world = World::from_scenario(generate_synthetic_scenario(Template::Intersection, 4, opts.seed)?);
    {
        let mut s = ParamStore::new();
        let enc = PolylineEncoder::new(&mut s, "polyline", 8, 32, &mut rng)?;
        let inputs: Vec<Vec<f64>> = SceneEncoder::polyline_inputs(&world.scenario.polylines[0]);
        let c = coeffs(&mut rng, 32);
        cases.push(run("polyline_encoder", &s, opts, false, |ws, g| {
            let (y, cache) = enc.forward(ws, &inputs).unwrap();
            if let Some(g) = g {
                enc.backward(ws, &cache, &c, g);
            }
            dot(&c, &y)
        }));
    }
    {
        let mut s = ParamStore::new();
        let layer = PerceiverLayer::new(&mut s, "perceiver", 32, &mut rng)?;
        let x = input(&mut s, "x", 32, &mut rng);
        let kv = input(&mut s, "kv", 4 * 32, &mut rng);
        let c = coeffs(&mut rng, 32);
        cases.push(run("perceiver_layer", &s, opts, false, |ws, g| {
            let (y, cache) = layer.forward(ws, ws.get(x).to_vec(), ws.get(kv)).unwrap();
            if let Some(g) = g {
                let mut dkv = vec![0.0; 4 * 32];
                let dx = layer.backward(ws, ws.get(kv), &cache, &c, g, &mut dkv);
                add_into(g, x, &dx);
                add_into(g, kv, &dkv);
            }
            dot(&c, &y)
        }));
    }

    // Full networks on a small intersection scene.
    let states = initial_states(&world);
    let frames = [BatchFrame { world: &world, world_id: 0, states: &states }];
    let samples: Vec<BatchSample> = (0..states.len()).map(|agent| BatchSample { frame: 0, agent }).collect();
    let mut pc = PolicyConfig::new(EncoderConfig { hidden: 32, layers: 2, ..EncoderConfig::small(50.0) });
    pc.value_scale = 3.0;
    let policy = Policy::new(pc, opts.seed)?;
    let actions: Vec<[f64; 2]> = (0..samples.len()).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-0.05..0.05)]).collect();
    {
        let probe = ProbeLoss { policy: &policy, weights: [0.3, -0.7, 0.2, 0.5, -0.4], actions: &actions };
        cases.push(run("policy_network", &policy.store, opts, false, |ws, g| {
            eval_batch(&policy, ws, &frames, &samples, &probe, g)
        }));
    }
    {
        let ws0 = policy.store.snapshot::<f64>();
        let mut targets = Vec::new();
        for (k, s) in samples.iter().enumerate() {
            let nb = crate::encoder::gather_neighbors(&world, &states, s.agent, pc.encoder.radius, pc.encoder.max_neighbors);
            let toks = token_inputs(&policy.encoder, &ws0, &world, &states, &nb)?;
            let refs: Vec<&[f64]> = toks.iter().map(|t| t.as_slice()).collect();
            let (z, _) = policy.encoder.refine_forward(&ws0, &refs, &nb)?;
            let (gout, _, _) = policy.heads_forward(&ws0, &z)?;
            let lp = gout.log_prob(actions[k]);
            // Ratios 0.95 and 1.05 keep every sample strictly inside the clip range.
            let shift = if k % 2 == 0 { 0.05f64.ln_1p() } else { (-0.05f64).ln_1p() };
            targets.push(PpoTarget { action: actions[k], old_log_prob: lp - shift, advantage: if k % 3 == 0 { -1.2 } else { 0.8 }, ret: 2.0 - k as f64 });
        }
        let ppo = PpoLoss::new(&policy, &targets, 0.2, 0.5, 0.01);
        cases.push(run("ppo_loss", &policy.store, opts, false, |ws, g| eval_batch(&policy, ws, &frames, &samples, &ppo, g)));
        let nll = NllLoss { policy: &policy, actions: &actions };
        cases.push(run("bc_nll", &policy.store, opts, false, |ws, g| eval_batch(&policy, ws, &frames, &samples, &nll, g)));
    }
    {
        let disc = Discriminator::new(EncoderConfig { hidden: 32, layers: 2, ..EncoderConfig::small(30.0) }, opts.seed ^ 1)?;
        let acts: Vec<Action> = actions.iter().map(|a| Action::new(a[0], a[1])).collect();
        let labels: Vec<f64> = (0..samples.len()).map(|k| (k % 2) as f64).collect();
        let loss = DiscLoss::new(&disc, &acts, &labels);
        cases.push(run("discriminator_network", &disc.store, opts, false, |ws, g| {
            disc.encoder.batch_loss(ws, &frames, &samples, &loss, g, false).unwrap()
        }));
    }
    Ok(cases)
}

fn eval_batch<L: TargetLoss<f64>>(
    policy: &Policy,
    ws: &Weights<f64>,
    frames: &[BatchFrame<'_>],
    samples: &[BatchSample],
    loss: &L,
    g: Option<&mut Grads<f64>>,
) -> f64 {
    policy.batch_loss(ws, frames, samples, loss, g, false).unwrap()
}

fn token_inputs(
    enc: &SceneEncoder,
    ws: &Weights<f64>,
    world: &World,
    states: &[crate::dynamics::AgentState],
    nb: &[crate::encoder::Neighbor],
) -> Result<Vec<Vec<f64>>> {
    nb.iter()
        .map(|n| match n.kind {
            crate::encoder::TokenKind::Map(p) => Ok(enc.encode_polyline(ws, &world.scenario.polylines[p], p)?.embedding),
            crate::encoder::TokenKind::Agent(j) => {
                Ok(enc.encode_agent(ws, &states[j].current_features(), states[j].pose, j)?.embedding)
            }
        })
        .collect()
}
