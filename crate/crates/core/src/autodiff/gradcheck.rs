//! Central finite-difference checks of every differentiable operation.
//!
//! Each check draws random shapes and values in 64-bit, reduces the op output
//! to a scalar through a fixed random projection and compares the tape
//! gradient of every input against `(f(x+h) - f(x-h)) / 2h`. The error of an
//! instance is `max_i |analytic_i - numeric_i| / max(‖analytic‖∞, ‖numeric‖∞)`.

use rand::Rng;
use rand::seq::index::sample;

use super::{ParamSet, Tape, Tensor, Var};
use crate::graph::{GraphSpec, HeadInit, MetaGraph};
use crate::rng;
use crate::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const BATCH_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Central differences of `f` at `x`, for the listed coordinates.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> Result<f64>, x: &[f64], coords: &[usize], h: f64) -> Result<Vec<f64>> {
    let mut work = x.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = work[i];
        work[i] = orig + h;
        let up = f(&work)?;
        work[i] = orig - h;
        let down = f(&work)?;
        work[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale.max(1e-8)
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Checks one op instance: `build` maps input vars to an output var of any
/// shape, which is projected onto `weights` to form the scalar.
fn check_instance<R: Rng>(inputs: &[Tensor<f64>], build: &Build, rng: &mut R) -> Result<(f64, usize)> {
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        tape.shape(out).to_vec()
    };
    let weights = Tensor::<f64>::randn(&out_shape, 1.0, rng);
    let scalar = |tape: &mut Tape<f64>, vars: &[Var]| -> Result<Var> {
        let out = build(tape, vars)?;
        let w = tape.leaf(weights.clone());
        let prod = tape.mul(out, w)?;
        Ok(tape.sum(prod))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = scalar(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut coords_checked = 0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k])?.data().to_vec();
        let coords: Vec<usize> = (0..input.len()).collect();
        let mut f = |x: &[f64]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| {
                    if j == k {
                        tape.leaf(Tensor::from_f64(t.shape().to_vec(), x).expect("same shape"))
                    } else {
                        tape.leaf(t.clone())
                    }
                })
                .collect();
            let l = scalar(&mut tape, &vars)?;
            Ok(tape.value(l).item())
        };
        let numeric = central_difference(&mut f, input.data(), &coords, STEP)?;
        worst = worst.max(relative_error(&analytic, &numeric));
        coords_checked += coords.len();
    }
    Ok((worst, coords_checked))
}

fn dim<R: Rng>(rng: &mut R, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Normal entries pushed at least `margin` away from zero.
fn away_from_zero<R: Rng>(shape: &[usize], margin: f64, rng: &mut R) -> Tensor<f64> {
    Tensor::<f64>::randn(shape, 1.0, rng).map(|x| if x.abs() < margin { x.signum() * margin + x } else { x })
}

type Generator = Box<dyn Fn(&mut rng::Rng) -> (Vec<Tensor<f64>>, Box<Build>)>;

struct OpCheck {
    name: &'static str,
    tolerance: f64,
    generate: Generator,
}

fn op_checks() -> Vec<OpCheck> {
    fn shape<R: Rng>(rng: &mut R) -> Vec<usize> {
        let nd = dim(rng, 1, 3);
        (0..nd).map(|_| dim(rng, 1, 4)).collect()
    }
    vec![
        OpCheck {
            name: "add",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let s = shape(rng);
                let v = vec![Tensor::randn(&s, 1.0, rng), Tensor::randn(&s, 1.0, rng)];
                (v, Box::new(|t, x| t.add(x[0], x[1])))
            }),
        },
        OpCheck {
            name: "sub",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let s = shape(rng);
                let v = vec![Tensor::randn(&s, 1.0, rng), Tensor::scalar(rng.random::<f64>())];
                (v, Box::new(|t, x| t.sub(x[0], x[1])))
            }),
        },
        OpCheck {
            name: "mul",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let s = shape(rng);
                if rng.random::<bool>() {
                    let v = vec![Tensor::randn(&s, 1.0, rng), Tensor::randn(&s, 1.0, rng)];
                    (v, Box::new(|t, x| t.mul(x[0], x[1])))
                } else {
                    let v = vec![Tensor::scalar(rng.random::<f64>() - 0.5), Tensor::randn(&s, 1.0, rng)];
                    (v, Box::new(|t, x| t.mul(x[0], x[1])))
                }
            }),
        },
        OpCheck {
            name: "scale",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let s = shape(rng);
                let c = rng.random::<f64>() * 4.0 - 2.0;
                (vec![Tensor::randn(&s, 1.0, rng)], Box::new(move |t, x| Ok(t.scale(x[0], c))))
            }),
        },
        OpCheck {
            name: "neg",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let s = shape(rng);
                (vec![Tensor::randn(&s, 1.0, rng)], Box::new(|t, x| Ok(t.neg(x[0]))))
            }),
        },
        OpCheck {
            name: "relu",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let s = shape(rng);
                (vec![away_from_zero(&s, 1e-3, rng)], Box::new(|t, x| Ok(t.relu(x[0]))))
            }),
        },
        OpCheck {
            name: "exp",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let s = shape(rng);
                (vec![Tensor::randn(&s, 1.0, rng)], Box::new(|t, x| Ok(t.exp(x[0]))))
            }),
        },
        OpCheck {
            name: "log",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let s = shape(rng);
                let v = Tensor::<f64>::randn(&s, 1.0, rng).map(|x| x.abs() + 0.2);
                (vec![v], Box::new(|t, x| t.log(x[0])))
            }),
        },
        OpCheck {
            name: "matmul",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let (m, k, n) = (dim(rng, 1, 6), dim(rng, 1, 6), dim(rng, 1, 6));
                let v = vec![Tensor::randn(&[m, k], 1.0, rng), Tensor::randn(&[k, n], 1.0, rng)];
                (v, Box::new(|t, x| t.matmul(x[0], x[1])))
            }),
        },
        OpCheck {
            name: "add_bias",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let (n, f) = (dim(rng, 1, 5), dim(rng, 1, 5));
                let v = vec![Tensor::randn(&[n, f], 1.0, rng), Tensor::randn(&[f], 1.0, rng)];
                (v, Box::new(|t, x| t.add_bias(x[0], x[1])))
            }),
        },
        OpCheck {
            name: "conv2d",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let (n, c, f) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
                let (h, w) = (dim(rng, 3, 6), dim(rng, 3, 6));
                let k = dim(rng, 1, 3);
                let stride = dim(rng, 1, 2);
                let padding = dim(rng, 0, 1);
                let v = vec![Tensor::randn(&[n, c, h, w], 1.0, rng), Tensor::randn(&[f, c, k, k], 1.0, rng)];
                (v, Box::new(move |t, x| t.conv2d(x[0], x[1], stride, padding)))
            }),
        },
        OpCheck {
            name: "batch_norm",
            tolerance: BATCH_NORM_TOLERANCE,
            generate: Box::new(|rng| {
                let (n, c) = (dim(rng, 2, 5), dim(rng, 1, 3));
                let mut s = vec![n, c];
                if rng.random::<bool>() {
                    s.extend([dim(rng, 1, 3), dim(rng, 1, 3)]);
                }
                let v = vec![
                    Tensor::randn(&s, 2.0, rng),
                    Tensor::randn(&[c], 1.0, rng),
                    Tensor::randn(&[c], 1.0, rng),
                ];
                (v, Box::new(|t, x| t.batch_norm(x[0], x[1], x[2], super::BN_EPS)))
            }),
        },
        OpCheck {
            name: "softmax",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let n = dim(rng, 1, 7);
                (vec![Tensor::randn(&[n], 2.0, rng)], Box::new(|t, x| Ok(t.softmax(x[0]))))
            }),
        },
        OpCheck {
            name: "cross_entropy",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let (n, c) = (dim(rng, 1, 6), dim(rng, 2, 5));
                let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
                (
                    vec![Tensor::randn(&[n, c], 2.0, rng)],
                    Box::new(move |t, x| t.cross_entropy(x[0], &targets)),
                )
            }),
        },
        OpCheck {
            name: "mse",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let s = shape(rng);
                let v = vec![Tensor::randn(&s, 1.0, rng), Tensor::randn(&s, 1.0, rng)];
                (v, Box::new(|t, x| t.mse(x[0], x[1])))
            }),
        },
        OpCheck {
            name: "sum",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let s = shape(rng);
                (vec![Tensor::randn(&s, 1.0, rng)], Box::new(|t, x| Ok(t.sum(x[0]))))
            }),
        },
        OpCheck {
            name: "index",
            tolerance: TOLERANCE,
            generate: Box::new(|rng| {
                let s = shape(rng);
                let n: usize = s.iter().product();
                let i = rng.random_range(0..n);
                (vec![Tensor::randn(&s, 1.0, rng)], Box::new(move |t, x| t.index(x[0], i)))
            }),
        },
    ]
}

/// Runs `instances` random instances of every op check.
pub fn check_ops(seed: u64, instances: usize) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for (k, check) in op_checks().into_iter().enumerate() {
        let mut rng = rng::stream(seed, check.name, k as u64);
        let mut worst = 0.0f64;
        let mut coords = 0;
        for _ in 0..instances {
            let (inputs, build) = (check.generate)(&mut rng);
            let (err, c) = check_instance(&inputs, build.as_ref(), &mut rng)?;
            worst = worst.max(err);
            coords += c;
        }
        reports.push(CheckReport {
            name: check.name.to_string(),
            instances,
            coordinates: coords,
            max_rel_err: worst,
            tolerance: check.tolerance,
        });
    }
    Ok(reports)
}

/// Gradient of a full knowledge-block network's cross-entropy with respect
/// to every parameter, checked on `coordinates` sampled coordinates per
/// instance.
pub fn check_network(seed: u64, spec: &GraphSpec, batch: usize, instances: usize, coordinates: usize) -> Result<CheckReport> {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for inst in 0..instances {
        let mut rng = rng::stream(seed, "network", inst as u64);
        let graph = MetaGraph::<f64>::init(spec.clone().with_head_init(HeadInit::Normal), rng.random())?;
        let mut params = graph.params();
        params.extend(graph.fresh_head(&mut rng));
        let mut input_shape = vec![batch];
        input_shape.extend(&spec.input_shape);
        let x = Tensor::<f64>::randn(&input_shape, 1.0, &mut rng);
        let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..spec.n_classes)).collect();
        let pathway = graph.default_pathway();

        let loss_of = |p: &ParamSet<f64>| -> Result<(f64, ParamSet<f64>)> {
            let mut tape = Tape::new();
            let vars = p.to_vars(&mut tape);
            let xv = tape.leaf(x.clone());
            let logits = graph.pathway_forward_tape(&mut tape, &pathway, &vars, xv)?;
            let loss = tape.cross_entropy(logits, &y)?;
            let grads = tape.backward(loss)?;
            Ok((tape.value(loss).item(), ParamSet::from_grads(&vars, &grads)?))
        };
        let (_, analytic) = loss_of(&params)?;

        // flatten parameters in key order
        let keys: Vec<String> = params.keys().map(str::to_string).collect();
        let flat: Vec<f64> = keys.iter().flat_map(|k| params.get(k).unwrap().data().to_vec()).collect();
        let flat_grad: Vec<f64> = keys.iter().flat_map(|k| analytic.get(k).unwrap().data().to_vec()).collect();
        let picks = sample(&mut rng, flat.len(), coordinates.min(flat.len())).into_vec();
        let mut f = |v: &[f64]| -> Result<f64> {
            let mut p = ParamSet::new();
            let mut off = 0;
            for k in &keys {
                let t = params.get(k).unwrap();
                p.insert(k.clone(), Tensor::from_f64(t.shape().to_vec(), &v[off..off + t.len()])?);
                off += t.len();
            }
            Ok(loss_of(&p)?.0)
        };
        let numeric = central_difference(&mut f, &flat, &picks, STEP)?;
        let analytic_picked: Vec<f64> = picks.iter().map(|&i| flat_grad[i]).collect();
        worst = worst.max(relative_error(&analytic_picked, &numeric));
        checked += picks.len();
    }
    Ok(CheckReport {
        name: "two_conv_block_network".into(),
        instances,
        coordinates: checked,
        max_rel_err: worst,
        tolerance: TOLERANCE,
    })
}

/// The small two-conv-block network used by the suite.
pub fn suite_network() -> GraphSpec {
    GraphSpec::conv([2, 6, 6], &[3, 3], 3, 1, 1, 3)
}

/// Every op check plus the network check.
pub fn run_suite(seed: u64, instances: usize) -> Result<Vec<CheckReport>> {
    let mut reports = check_ops(seed, instances)?;
    reports.push(check_network(seed, &suite_network(), 4, instances, 100)?);
    Ok(reports)
}
