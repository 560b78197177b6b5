#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cnas_core::arch::{ArchDescriptor, ExpansionAction, LayerSpec};
use cnas_core::driver::average_incremental_accuracy;
use cnas_core::net2net::{apply_actions, MorphConfig};
use cnas_core::nn::{Conv2d, Dense, Layer, Network, Tensor};
use cnas_core::rl::{normalize_rewards, Actor, ActorConfig, Controller, Episode, SearchState};
use cnas_core::search::{heuristic_func, Decision};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small random but valid descriptor: 1-2 conv blocks (each optionally
/// pooled), flatten, 1-2 dense layers with optional dropout, softmax.
pub fn random_descriptor(rng: &mut ChaCha8Rng) -> ArchDescriptor {
    let side = rng.gen_range(4..=6);
    let channels = rng.gen_range(1..=2);
    let mut layers = Vec::new();
    let mut h = side;
    for _ in 0..rng.gen_range(1..=2) {
        layers.push(LayerSpec::Conv {
            filters: rng.gen_range(1..=4),
        });
        if h >= 2 && rng.gen_bool(0.5) {
            layers.push(LayerSpec::Pool);
            h /= 2;
        }
    }
    layers.push(LayerSpec::Flatten);
    for _ in 0..rng.gen_range(1..=2) {
        layers.push(LayerSpec::Dense {
            units: rng.gen_range(1..=5),
        });
        if rng.gen_bool(0.25) {
            layers.push(LayerSpec::Dropout { rate: 0.3 });
        }
    }
    layers.push(LayerSpec::Softmax {
        classes: rng.gen_range(2..=5),
    });
    ArchDescriptor::new([side, side, channels], layers).expect("generator emits valid descriptors")
}

/// Overwrites every parameter with U(-scale, scale) so outputs are far
/// from uniform.
pub fn scramble<T: cnas_core::nn::Scalar>(net: &mut Network<T>, rng: &mut ChaCha8Rng, scale: f64) {
    for block in net.params_mut() {
        for p in block {
            *p = T::of(rng.gen_range(-scale..scale));
        }
    }
}

pub fn random_batch<T: cnas_core::nn::Scalar>(rng: &mut ChaCha8Rng, rows: usize, shape: &[usize]) -> Tensor<T> {
    let mut full = vec![rows];
    full.extend_from_slice(shape);
    let n: usize = full.iter().product();
    Tensor::new(full, (0..n).map(|_| T::of(rng.gen::<f64>())).collect()).unwrap()
}

/// One function-preservation trial with zero noise. Returns the largest
/// absolute change of any output probability over `probes` random inputs.
pub fn preservation_trial(seed: u64, probes: usize) -> f64 {
    let mut rng = rng(seed);
    let desc = random_descriptor(&mut rng);
    let mut net = desc.instantiate(rng.gen()).unwrap();
    scramble(&mut net, &mut rng, 0.8);
    let action = ExpansionAction::new(rng.gen_range(0..=3), rng.gen_range(0..=3));
    let morphed = apply_actions(&net, action, &MorphConfig::exact(), rng.gen()).unwrap();
    assert_eq!(morphed.applied.len(), action.wider + action.deeper);
    let x: Tensor<f32> = random_batch(&mut rng, probes, net.input_shape());
    let before = net.forward(&x).unwrap();
    let after = morphed.network.forward(&x).unwrap();
    before
        .data()
        .iter()
        .zip(after.data())
        .map(|(a, b)| f64::from((a - b).abs()))
        .fold(0.0, f64::max)
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub const FD_STEP: f64 = 1e-3;

/// Central differences of `f` with respect to each entry of `params`.
pub fn numeric_gradient(params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let orig = params[i];
            params[i] = orig + FD_STEP;
            let up = f(params);
            params[i] = orig - FD_STEP;
            let down = f(params);
            params[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn flat(net: &Network<f64>) -> Vec<f64> {
    net.params().concat()
}

fn load(net: &mut Network<f64>, values: &[f64]) {
    let mut off = 0;
    for block in net.params_mut() {
        let n = block.len();
        block.copy_from_slice(&values[off..off + n]);
        off += n;
    }
}

/// Loss Σ c ⊙ logits under a fixed dropout mask.
fn probe_loss(net: &Network<f64>, x: &Tensor<f64>, c: &[f64], mask_seed: u64) -> f64 {
    let trace = net.forward_train(x, &mut rng(mask_seed)).unwrap();
    trace.logits().data().iter().zip(c).map(|(l, w)| l * w).sum()
}

/// Gradient check of a whole network in f64: parameters and input.
/// Returns (parameter error, input error).
pub fn network_gradient_error(net: &Network<f64>, x: &Tensor<f64>, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let logits = net.forward_train(x, &mut rng(seed ^ 1)).unwrap();
    let c: Vec<f64> = (0..logits.logits().data().len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let dlogits = Tensor::new(logits.logits().shape().to_vec(), c.clone()).unwrap();
    let grads = net.backward(&logits, &dlogits, true);
    let analytic: Vec<f64> = grads.blocks().concat();
    let mut work = net.clone();
    let mut params = flat(net);
    let numeric = numeric_gradient(&mut params, |p| {
        load(&mut work, p);
        probe_loss(&work, x, &c, seed ^ 1)
    });
    let param_err = relative_error(&analytic, &numeric);

    let mut input = x.data().to_vec();
    let numeric_x = numeric_gradient(&mut input, |v| {
        let xi = Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap();
        probe_loss(net, &xi, &c, seed ^ 1)
    });
    let analytic_x = grads.input.expect("input gradient requested").into_data();
    (param_err, relative_error(&analytic_x, &numeric_x))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv,
    Pool,
    Flatten,
    Dropout,
    Softmax,
}

pub const LAYER_KINDS: [LayerKind; 6] = [
    LayerKind::Dense,
    LayerKind::Conv,
    LayerKind::Pool,
    LayerKind::Flatten,
    LayerKind::Dropout,
    LayerKind::Softmax,
];

/// A minimal network isolating `kind`, with random f64 weights, and a
/// matching random input batch.
pub fn isolate(kind: LayerKind, seed: u64) -> (Network<f64>, Tensor<f64>) {
    let mut r = rng(seed);
    let out = r.gen_range(2..=4);
    let dense = |r: &mut ChaCha8Rng, i: usize, o: usize| -> Dense<f64> {
        let mut d = Dense::zeros(i, o);
        d.weight.iter_mut().for_each(|w| *w = r.gen_range(-1.0..1.0));
        d.bias.iter_mut().for_each(|b| *b = r.gen_range(-0.5..0.5));
        d
    };
    let (shape, layers): (Vec<usize>, Vec<Layer<f64>>) = match kind {
        LayerKind::Dense | LayerKind::Softmax | LayerKind::Dropout => {
            let i = r.gen_range(2..=5);
            let h = r.gen_range(2..=5);
            let mut layers = vec![Layer::Dense(dense(&mut r, i, h))];
            if kind == LayerKind::Dropout {
                layers.push(Layer::Dropout(0.4));
            }
            layers.push(Layer::SoftmaxOutput(dense(&mut r, h, out)));
            if kind == LayerKind::Softmax {
                layers.remove(0);
                (vec![i], vec![Layer::SoftmaxOutput(dense(&mut r, i, out))])
            } else {
                (vec![i], layers)
            }
        }
        LayerKind::Conv | LayerKind::Pool | LayerKind::Flatten => {
            let side = if kind == LayerKind::Pool { 4 } else { r.gen_range(3..=4) };
            let cin = r.gen_range(1..=2);
            let f = r.gen_range(1..=3);
            let mut conv = Conv2d::zeros(cin, f);
            conv.weight.iter_mut().for_each(|w| *w = r.gen_range(-1.0..1.0));
            conv.bias.iter_mut().for_each(|b| *b = r.gen_range(-0.3..0.3));
            let mut layers = vec![Layer::Conv2d(conv)];
            let mut s = side;
            if kind == LayerKind::Pool {
                layers.push(Layer::MaxPool2d);
                s /= 2;
            }
            layers.push(Layer::Flatten);
            layers.push(Layer::SoftmaxOutput(dense(&mut r, s * s * f, out)));
            (vec![side, side, cin], layers)
        }
    };
    let net = Network::new(shape.clone(), layers).unwrap();
    let x = random_batch(&mut r, 3, &shape);
    (net, x)
}

/// Central differences are meaningless across a ReLU kink, so instances
/// with a hidden pre-activation this close to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-2;

fn state_input(s: &SearchState) -> Tensor<f64> {
    Tensor::new(vec![1, 4], s.inputs().iter().map(|&v| f64::from(v)).collect()).unwrap()
}

/// Distance of a batch from the nearest non-differentiable point of the
/// network: the smallest |pre-activation| of any ReLU unit, and the
/// smallest gap between the two largest positive entries of any pooling
/// window. Recomputed here with naive loops, independent of the kernels.
pub fn min_preactivation(net: &Network<f64>, x: &Tensor<f64>) -> f64 {
    let n = x.shape()[0];
    let mut shape: Vec<usize> = x.shape()[1..].to_vec();
    let mut a = x.data().to_vec();
    let mut min = f64::INFINITY;
    let relu = |z: Vec<f64>, min: &mut f64| -> Vec<f64> {
        *min = z.iter().fold(*min, |m, v| m.min(v.abs()));
        z.into_iter().map(|v| v.max(0.0)).collect()
    };
    for layer in net.layers() {
        match layer {
            Layer::Dense(d) => {
                let mut z = Vec::with_capacity(n * d.units);
                for row in a.chunks(d.inputs) {
                    for u in 0..d.units {
                        z.push(d.bias[u] + (0..d.inputs).map(|i| d.weight[u * d.inputs + i] * row[i]).sum::<f64>());
                    }
                }
                a = relu(z, &mut min);
                shape = vec![d.units];
            }
            Layer::Conv2d(c) => {
                let (h, w, cin) = (shape[0], shape[1], shape[2]);
                let mut z = vec![0.0; n * h * w * c.filters];
                for b in 0..n {
                    for y in 0..h {
                        for xx in 0..w {
                            for f in 0..c.filters {
                                let mut acc = c.bias[f];
                                for ch in 0..cin {
                                    for ky in 0..3 {
                                        for kx in 0..3 {
                                            let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                                continue;
                                            }
                                            let v = a[((b * h + sy as usize) * w + sx as usize) * cin + ch];
                                            acc += c.weight[c.weight_index(f, ch, ky, kx)] * v;
                                        }
                                    }
                                }
                                z[((b * h + y) * w + xx) * c.filters + f] = acc;
                            }
                        }
                    }
                }
                a = relu(z, &mut min);
                shape = vec![h, w, c.filters];
            }
            Layer::MaxPool2d => {
                let (h, w, ch) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![0.0; n * oh * ow * ch];
                for b in 0..n {
                    for y in 0..oh {
                        for xx in 0..ow {
                            for c in 0..ch {
                                let mut win: Vec<f64> = (0..4)
                                    .map(|k| a[((b * h + 2 * y + k / 2) * w + 2 * xx + k % 2) * ch + c])
                                    .collect();
                                win.sort_by(|p, q| q.total_cmp(p));
                                if win[0] > 0.0 {
                                    min = min.min(win[0] - win[1]);
                                }
                                out[((b * oh + y) * ow + xx) * ch + c] = win[0];
                            }
                        }
                    }
                }
                a = out;
                shape = vec![oh, ow, ch];
            }
            Layer::Flatten => shape = vec![shape.iter().product()],
            Layer::Dropout(_) | Layer::SoftmaxOutput(_) => {}
        }
    }
    min
}

/// Like [`isolate`], redrawing until the instance sits at least
/// [`KINK_MARGIN`] away from every kink.
pub fn isolate_smooth(kind: LayerKind, seed: u64) -> (Network<f64>, Tensor<f64>) {
    (0..)
        .map(|attempt| isolate(kind, cnas_core::seed::derive(seed, &[attempt])))
        .find(|(net, x)| min_preactivation(net, x) > KINK_MARGIN)
        .expect("some draw is smooth")
}

/// Gradient check of an actor's Σ R ∇ ln π against finite differences of
/// Σ R ln π evaluated in f64 on the cast policy network.
pub fn actor_gradient_error(actor: &Actor, seed: u64) -> f64 {
    let mut r = rng(seed);
    let max_actions = actor.max_actions();
    let net64: Network<f64> = actor.network().cast();
    let samples: Vec<(SearchState, usize, f64)> = loop {
        let draw: Vec<_> = (0..4)
            .map(|_| {
                (
                    SearchState {
                        a_conv: r.gen_range(1..6),
                        a_fc: r.gen_range(1..4),
                        v_diff: r.gen_range(-0.5..0.5),
                        n_new: r.gen_range(0..5),
                    },
                    r.gen_range(0..=max_actions),
                    r.gen_range(-1.0..1.0),
                )
            })
            .collect();
        if draw.iter().all(|(s, _, _)| min_preactivation(&net64, &state_input(s)) > KINK_MARGIN) {
            break draw;
        }
    };
    let analytic: Vec<f64> = actor
        .weighted_log_prob_grad(&samples)
        .blocks()
        .concat()
        .into_iter()
        .map(f64::from)
        .collect();
    let mut net: Network<f64> = actor.network().cast();
    let inputs: Vec<Tensor<f64>> = samples
        .iter()
        .map(|(s, _, _)| state_input(s))
        .collect();
    let mut params = flat(&net);
    let numeric = numeric_gradient(&mut params, |p| {
        load(&mut net, p);
        samples
            .iter()
            .zip(&inputs)
            .map(|((_, a, w), x)| {
                let l = net.logits(x).unwrap().into_data();
                let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + l.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                w * (l[*a] - lse)
            })
            .sum()
    });
    relative_error(&analytic, &numeric)
}

/// The expansion gate written out directly from its two conditions.
pub fn heuristic_oracle(v_prev: f64, v: &[f64]) -> Decision {
    let n_neg = v.iter().filter(|&&x| x - v_prev < 0.0).count();
    let half = v.len() as f64 / 2.0;
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    if (n_neg as f64) < half && mean > v_prev {
        Decision::Expand
    } else {
        Decision::Keep
    }
}

/// Random heuristic instance; accuracies are drawn on a coarse grid so that
/// ties with `v_prev` and N_neg = |V|/2 occur often.
pub fn heuristic_instance(rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
    let grid = |rng: &mut ChaCha8Rng| f64::from(rng.gen_range(0..=20u32)) / 20.0;
    let v_prev = grid(rng);
    let n = rng.gen_range(1..=12);
    let v = (0..n).map(|_| grid(rng)).collect();
    (v_prev, v)
}

pub fn heuristic_agrees(v_prev: f64, v: &[f64]) -> bool {
    heuristic_func(v_prev, v).unwrap() == heuristic_oracle(v_prev, v)
}

/// Class-balanced AIA case: returns (AIA via the library, overall accuracy
/// computed from the raw predictions).
pub fn aia_case(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let classes = r.gen_range(1..=12);
    let per_class = r.gen_range(1..=30);
    let mut correct_total = 0usize;
    let mut per_class_acc = std::collections::BTreeMap::new();
    for c in 0..classes {
        let correct = (0..per_class).filter(|_| r.gen_bool(0.6)).count();
        correct_total += correct;
        per_class_acc.insert(c, correct as f64 / per_class as f64);
    }
    let aia = average_incremental_accuracy(&per_class_acc, classes).unwrap();
    (aia, correct_total as f64 / (classes * per_class) as f64)
}

/// Synthetic bandit: the controller observes a fixed state and candidates
/// score highest with `best` transformations. Each update uses a batch of
/// `batch` sampled actions, rewarded and normalised as in the search.
/// Returns the final wider and deeper policies.
pub fn bandit(seed: u64, best: (usize, usize), updates: usize, batch: usize) -> (Vec<f64>, Vec<f64>) {
    let cfg = ActorConfig::default();
    let mut controller = Controller::new(3, 3, &cfg, seed);
    let state = SearchState {
        a_conv: 2,
        a_fc: 1,
        v_diff: -0.1,
        n_new: 2,
    };
    let mut r = rng(seed ^ 0xb4d1);
    let v_prev = 0.5;
    let score = |a: usize, b: usize| -> f64 { if a == b { 0.05 } else { -0.02 * a.abs_diff(b) as f64 } };
    for _ in 0..updates {
        let actions: Vec<(usize, usize)> = (0..batch)
            .map(|_| (controller.wider.sample(&state, &mut r), controller.deeper.sample(&state, &mut r)))
            .collect();
        let raw: Vec<f64> = actions
            .iter()
            .map(|&(w, d)| v_prev + score(w, best.0) + score(d, best.1) - v_prev)
            .collect();
        let episodes: Vec<Episode> = normalize_rewards(&raw)
            .into_iter()
            .zip(&raw)
            .zip(&actions)
            .map(|((n, &raw), &(w, d))| Episode {
                state,
                wider_action: w,
                deeper_action: d,
                raw_reward: raw,
                normalized_reward: n,
            })
            .collect();
        controller.update(&episodes).unwrap();
    }
    (controller.wider.probabilities(&state), controller.deeper.probabilities(&state))
}

pub fn modal(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
        .0
}
