use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, GraphError, Var};
use crate::tensor::Tensor;

/// Largest accepted relative error between analytic and finite-difference
/// gradients in double precision.
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Default central-difference half step.
pub const GRAD_EPS: f64 = 1e-4;

const REL_FLOOR: f64 = 1e-8;

pub const KINK_RETRIES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, coordinate)` where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
    /// Coordinates left out because every stencil tried straddled a kink.
    pub kinks: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences `(f(x + eps) - f(x - eps)) / (2 eps)`, one coordinate
/// at a time. The per-coordinate error is `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// A stencil whose endpoints take a different relu, abs or max branch than
/// the centre is not measuring a derivative. It is retried with `eps` halved
/// up to [`KINK_RETRIES`] times; if it still straddles the coordinate is
/// counted in `kinks` rather than compared.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport, GraphError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, GraphError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();

    let centre = g.branch_fingerprint();
    let eval = |xs: &[Tensor<f64>]| -> Result<(f64, u64), GraphError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).data()[0], g.branch_fingerprint()))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
        kinks: 0,
    };
    let mut probe = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        for j in 0..tensor.len() {
            let x0 = tensor.data()[j];
            let mut h = eps;
            let mut numeric = None;
            for _ in 0..=KINK_RETRIES {
                probe[ti].data_mut()[j] = x0 + h;
                let (plus, fp) = eval(&probe)?;
                probe[ti].data_mut()[j] = x0 - h;
                let (minus, fm) = eval(&probe)?;
                if fp == centre && fm == centre {
                    numeric = Some((plus - minus) / (2.0 * h));
                    break;
                }
                h /= 2.0;
            }
            probe[ti].data_mut()[j] = x0;
            let Some(numeric) = numeric else {
                report.kinks += 1;
                continue;
            };
            let a = analytic[ti].data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            if err > report.max_rel_error || !err.is_finite() {
                report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst = (ti, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

type Builder = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, GraphError> + Send + Sync>;

/// A named finite-difference test case: inputs plus a scalar-valued graph.
pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Builder,
    /// Step used by [`GradCase::check`].
    pub eps: f64,
}

impl GradCase {
    pub fn new<F>(name: impl Into<String>, inputs: Vec<Tensor<f64>>, build: F) -> Self
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, GraphError> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            inputs,
            build: Box::new(build),
            eps: GRAD_EPS,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    /// Runs at the case's own step.
    pub fn check(&self) -> Result<GradCheckReport, GraphError> {
        self.run(self.eps)
    }

    pub fn run(&self, eps: f64) -> Result<GradCheckReport, GraphError> {
        grad_check(&self.build, &self.inputs, eps)
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

// Values in [-2, 2] with |x| >= 0.05, keeping kinks of relu/abs out of reach
// of the finite-difference stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..2.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Reduces `out` to a scalar through a fixed pseudo-random projection, so
/// that every output element gets a distinct, non-trivial upstream gradient.
pub fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(out).shape().to_vec();
    let weights = g.input(uniform(&mut rng, &shape, -1.0, 1.0));
    let prod = g.mul(out, weights)?;
    Ok(g.sum(prod))
}

/// One case per differentiable primitive, with random inputs in [-2, 2].
pub fn primitive_cases() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let r = &mut rng;
    let mut cases = vec![
        GradCase::new(
            "conv2d_3x3",
            vec![
                uniform(r, &[2, 5, 5], -2.0, 2.0),
                uniform(r, &[3, 2, 3, 3], -1.0, 1.0),
                uniform(r, &[3], -1.0, 1.0),
            ],
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                project(g, y, 1)
            },
        ),
        GradCase::new(
            "conv2d_stride2",
            vec![
                uniform(r, &[2, 6, 6], -2.0, 2.0),
                uniform(r, &[2, 2, 3, 3], -1.0, 1.0),
                uniform(r, &[2], -1.0, 1.0),
            ],
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
                project(g, y, 2)
            },
        ),
        GradCase::new(
            "conv2d_1x1",
            vec![
                uniform(r, &[3, 4, 4], -2.0, 2.0),
                uniform(r, &[2, 3, 1, 1], -1.0, 1.0),
                uniform(r, &[2], -1.0, 1.0),
            ],
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 0)?;
                project(g, y, 3)
            },
        ),
        GradCase::new(
            "conv2d_7x7",
            vec![
                uniform(r, &[2, 8, 8], -2.0, 2.0),
                uniform(r, &[1, 2, 7, 7], -0.5, 0.5),
            ],
            |g, v| {
                let y = g.conv2d(v[0], v[1], None, 1, 3)?;
                project(g, y, 4)
            },
        ),
        GradCase::new(
            "avg_pool2d",
            vec![uniform(r, &[2, 4, 4], -2.0, 2.0)],
            |g, v| {
                let y = g.avg_pool2d(v[0], 2)?;
                project(g, y, 5)
            },
        ),
        GradCase::new(
            "upsample_nearest",
            vec![uniform(r, &[2, 3, 3], -2.0, 2.0)],
            |g, v| {
                let y = g.upsample_nearest(v[0], 2)?;
                project(g, y, 6)
            },
        ),
        GradCase::new(
            "pixel_shuffle",
            vec![uniform(r, &[8, 2, 3], -2.0, 2.0)],
            |g, v| {
                let y = g.pixel_shuffle(v[0], 2)?;
                project(g, y, 7)
            },
        ),
        GradCase::new("relu", vec![away_from_zero(r, &[2, 4, 4])], |g, v| {
            let y = g.relu(v[0]);
            project(g, y, 8)
        }),
        GradCase::new("tanh", vec![uniform(r, &[2, 4, 4], -2.0, 2.0)], |g, v| {
            let y = g.tanh(v[0]);
            project(g, y, 9)
        }),
        GradCase::new(
            "sigmoid",
            vec![uniform(r, &[2, 4, 4], -2.0, 2.0)],
            |g, v| {
                let y = g.sigmoid(v[0]);
                project(g, y, 10)
            },
        ),
        GradCase::new("abs", vec![away_from_zero(r, &[2, 4, 4])], |g, v| {
            let y = g.abs(v[0]);
            project(g, y, 11)
        }),
        GradCase::new(
            "add",
            vec![
                uniform(r, &[2, 3, 3], -2.0, 2.0),
                uniform(r, &[2, 3, 3], -2.0, 2.0),
            ],
            |g, v| {
                let y = g.add(v[0], v[1])?;
                project(g, y, 12)
            },
        ),
        GradCase::new(
            "sub",
            vec![
                uniform(r, &[2, 3, 3], -2.0, 2.0),
                uniform(r, &[2, 3, 3], -2.0, 2.0),
            ],
            |g, v| {
                let y = g.sub(v[0], v[1])?;
                project(g, y, 13)
            },
        ),
        GradCase::new(
            "mul",
            vec![
                uniform(r, &[2, 3, 3], -2.0, 2.0),
                uniform(r, &[2, 3, 3], -2.0, 2.0),
            ],
            |g, v| {
                let y = g.mul(v[0], v[1])?;
                project(g, y, 14)
            },
        ),
        GradCase::new(
            "div",
            vec![
                uniform(r, &[2, 3, 3], -2.0, 2.0),
                uniform(r, &[2, 3, 3], 0.5, 2.0),
            ],
            |g, v| {
                let y = g.div(v[0], v[1])?;
                project(g, y, 15)
            },
        ),
        GradCase::new(
            "add_scalar",
            vec![uniform(r, &[2, 3, 3], -2.0, 2.0)],
            |g, v| {
                let y = g.add_scalar(v[0], 0.75);
                project(g, y, 16)
            },
        ),
        GradCase::new(
            "mul_scalar",
            vec![uniform(r, &[2, 3, 3], -2.0, 2.0)],
            |g, v| {
                let y = g.mul_scalar(v[0], -1.5);
                project(g, y, 17)
            },
        ),
        GradCase::new(
            "concat",
            vec![
                uniform(r, &[2, 3, 3], -2.0, 2.0),
                uniform(r, &[1, 3, 3], -2.0, 2.0),
            ],
            |g, v| {
                let y = g.concat(&[v[0], v[1]])?;
                project(g, y, 18)
            },
        ),
        GradCase::new(
            "global_avg_pool",
            vec![uniform(r, &[3, 4, 4], -2.0, 2.0)],
            |g, v| {
                let y = g.global_avg_pool(v[0])?;
                project(g, y, 19)
            },
        ),
        GradCase::new(
            "scale_channels",
            vec![
                uniform(r, &[3, 4, 4], -2.0, 2.0),
                uniform(r, &[3, 1, 1], -2.0, 2.0),
            ],
            |g, v| {
                let y = g.scale_channels(v[0], v[1])?;
                project(g, y, 20)
            },
        ),
        GradCase::new(
            "scale_positions",
            vec![
                uniform(r, &[3, 4, 4], -2.0, 2.0),
                uniform(r, &[1, 4, 4], -2.0, 2.0),
            ],
            |g, v| {
                let y = g.scale_positions(v[0], v[1])?;
                project(g, y, 21)
            },
        ),
        GradCase::new(
            "channel_mean",
            vec![uniform(r, &[3, 4, 4], -2.0, 2.0)],
            |g, v| {
                let y = g.channel_mean(v[0])?;
                project(g, y, 22)
            },
        ),
        GradCase::new(
            "channel_max",
            vec![uniform(r, &[3, 4, 4], -2.0, 2.0)],
            |g, v| {
                let y = g.channel_max(v[0])?;
                project(g, y, 23)
            },
        ),
        GradCase::new("sum", vec![uniform(r, &[2, 3, 3], -2.0, 2.0)], |g, v| {
            let y = g.square(v[0]);
            Ok(g.sum(y))
        }),
        GradCase::new("mean", vec![uniform(r, &[2, 3, 3], -2.0, 2.0)], |g, v| {
            let y = g.square(v[0]);
            Ok(g.mean(y))
        }),
        GradCase::new(
            "blur_valid",
            vec![uniform(r, &[2, 7, 8], -2.0, 2.0)],
            |g, v| {
                let y = g.blur_valid(v[0], &[0.25, 0.5, 0.25])?;
                project(g, y, 24)
            },
        ),
    ];
    cases.push(GradCase::new(
        "sigmoid_chain",
        vec![
            uniform(r, &[2, 4, 4], -2.0, 2.0),
            uniform(r, &[2, 2, 3, 3], -1.0, 1.0),
        ],
        |g, v| {
            let a = g.conv2d(v[0], v[1], None, 1, 1)?;
            let b = g.sigmoid(a);
            let c = g.tanh(b);
            let d = g.mul(c, b)?;
            project(g, d, 25)
        },
    ));
    cases
}
