//! Random small instances of every differentiable tape op, for finite-difference checks.

use polytone::tensor::gradcheck::{self, GradCheck};
use polytone::tensor::{Graph, GruVars, Tensor, TensorError, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Build = Box<dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var, TensorError>>;

pub struct Case {
    pub op: &'static str,
    pub build: Build,
    pub inputs: Vec<Tensor<f64>>,
}

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize, bound: f64) -> Tensor<f64> {
    Tensor::uniform(vec![r, c], bound, rng)
}

/// Uniform values whose magnitude is at least `gap`, keeping relu away from its kink.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize, gap: f64) -> Tensor<f64> {
    let data = (0..r * c)
        .map(|_| {
            let m = rng.gen_range(gap..1.5);
            if rng.gen_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(vec![r, c], data).unwrap()
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..5)
}

pub const OPS: &[&str] = &[
    "matmul", "add", "sub", "mul", "add_bias", "scale", "concat0", "concat1", "slice0", "slice1",
    "reshape", "transpose", "tanh", "sigmoid", "relu", "softmax", "dropout", "l1_loss",
    "bce_with_logits", "mean", "sum", "gather_rows", "gru_cell",
];

pub fn case(op: &'static str, rng: &mut ChaCha8Rng) -> Case {
    let (m, n, k) = (dim(rng), dim(rng), dim(rng));
    let (build, inputs): (Build, Vec<Tensor<f64>>) = match op {
        "matmul" => (Box::new(|g, v| g.matmul(v[0], v[1])), vec![rand_t(rng, m, k, 1.0), rand_t(rng, k, n, 1.0)]),
        "add" => (Box::new(|g, v| g.add(v[0], v[1])), vec![rand_t(rng, m, n, 1.0), rand_t(rng, m, n, 1.0)]),
        "sub" => (Box::new(|g, v| g.sub(v[0], v[1])), vec![rand_t(rng, m, n, 1.0), rand_t(rng, m, n, 1.0)]),
        "mul" => (Box::new(|g, v| g.mul(v[0], v[1])), vec![rand_t(rng, m, n, 1.0), rand_t(rng, m, n, 1.0)]),
        "add_bias" => (Box::new(|g, v| g.add_bias(v[0], v[1])), vec![rand_t(rng, m, n, 1.0), rand_t(rng, 1, n, 1.0)]),
        "scale" => {
            let c = rng.gen_range(-2.0..2.0);
            (Box::new(move |g, v| Ok(g.scale(v[0], c))), vec![rand_t(rng, m, n, 1.0)])
        }
        "concat0" => (Box::new(|g, v| g.concat(&[v[0], v[1]], 0)), vec![rand_t(rng, m, n, 1.0), rand_t(rng, k, n, 1.0)]),
        "concat1" => (Box::new(|g, v| g.concat(&[v[0], v[1], v[2]], 1)), vec![rand_t(rng, m, n, 1.0), rand_t(rng, m, k, 1.0), rand_t(rng, m, 1, 1.0)]),
        "slice0" => {
            let rows = m + 2;
            let start = rng.gen_range(0..rows);
            let len = rng.gen_range(1..=rows - start);
            (Box::new(move |g, v| g.slice(v[0], 0, start, len)), vec![rand_t(rng, rows, n, 1.0)])
        }
        "slice1" => {
            let cols = n + 2;
            let start = rng.gen_range(0..cols);
            let len = rng.gen_range(1..=cols - start);
            (Box::new(move |g, v| g.slice(v[0], 1, start, len)), vec![rand_t(rng, m, cols, 1.0)])
        }
        "reshape" => (Box::new(move |g, v| g.reshape(v[0], n, m)), vec![rand_t(rng, m, n, 1.0)]),
        "transpose" => (Box::new(|g, v| Ok(g.transpose(v[0]))), vec![rand_t(rng, m, n, 1.0)]),
        "tanh" => (Box::new(|g, v| Ok(g.tanh(v[0]))), vec![rand_t(rng, m, n, 2.0)]),
        "sigmoid" => (Box::new(|g, v| Ok(g.sigmoid(v[0]))), vec![rand_t(rng, m, n, 3.0)]),
        "relu" => (Box::new(|g, v| Ok(g.relu(v[0]))), vec![rand_away_from_zero(rng, m, n, 0.01)]),
        "softmax" => (Box::new(|g, v| Ok(g.softmax(v[0]))), vec![rand_t(rng, m, n + 1, 2.0)]),
        "dropout" => (Box::new(|g, v| Ok(g.dropout(v[0], 0.5))), vec![rand_t(rng, m, n + 3, 1.0)]),
        "l1_loss" => {
            // residuals bounded away from the kink at zero
            let p = rand_t(rng, m, n, 1.0);
            let r = rand_away_from_zero(rng, m, n, 0.05);
            let t = Tensor::new(vec![m, n], p.data().iter().zip(r.data()).map(|(a, b)| a - b).collect()).unwrap();
            (Box::new(|g, v| g.l1_loss(v[0], v[1])), vec![p, t])
        }
        "bce_with_logits" => {
            let targets: Vec<f64> = (0..m * n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let (rr, cc) = (m, n);
            (
                Box::new(move |g, v| {
                    let t = g.constant(rr, cc, targets.clone())?;
                    g.bce_with_logits(v[0], t)
                }),
                vec![rand_t(rng, m, n, 3.0)],
            )
        }
        "mean" => (Box::new(|g, v| g.mean(v[0])), vec![rand_t(rng, m, n, 1.0)]),
        "sum" => (Box::new(|g, v| Ok(g.sum(v[0]))), vec![rand_t(rng, m, n, 1.0)]),
        "gather_rows" => {
            let vocab = m + 2;
            let ids: Vec<usize> = (0..k + 2).map(|_| rng.gen_range(0..vocab)).collect();
            (Box::new(move |g, v| g.gather_rows(v[0], &ids)), vec![rand_t(rng, vocab, n, 1.0)])
        }
        "gru_cell" => {
            let (b, i, h) = (rng.gen_range(1..3), dim(rng), dim(rng));
            (
                Box::new(|g, v| {
                    let w = GruVars { w_ih: v[2], w_hh: v[3], b_ih: v[4], b_hh: v[5] };
                    g.gru_cell(v[0], v[1], w)
                }),
                vec![
                    rand_t(rng, b, i, 1.0),
                    rand_t(rng, b, h, 1.0),
                    rand_t(rng, i, 3 * h, 1.0),
                    rand_t(rng, h, 3 * h, 1.0),
                    rand_t(rng, 1, 3 * h, 0.5),
                    rand_t(rng, 1, 3 * h, 0.5),
                ],
            )
        }
        other => panic!("unknown op {other}"),
    };
    Case { op, build, inputs }
}

/// Runs one case with a random output projection.
pub fn run(case: &Case, rng: &mut ChaCha8Rng) -> GradCheck {
    let projection: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    gradcheck::check(&case.build, &case.inputs, &projection, 1e-3).expect("graph builds")
}
