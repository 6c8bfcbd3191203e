//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls into the code it checks, except to build inputs.
#![allow(dead_code)]

use setvae::attention::{slot_attention_weights, AttentionParams, Isab, ProjectionMode};
use setvae::metrics::PointSet;
use setvae::model::{AblMode, SetVae};
use setvae::params::{Graph, ParamSet};
use setvae::tensor::{Tape, Tensor, Var};
use setvae::SetRng;

pub fn rand_tensor(rng: &mut SetRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(lo, hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn rand_set(rng: &mut SetRng, n: usize, dim: usize) -> PointSet {
    PointSet::new(dim, (0..n * dim).map(|_| rng.uniform()).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Elementwise relative error with a small floor on the magnitude so that
/// entries that are zero in both gradients do not divide by zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Checks the gradient of `sum(op(inputs) ⊙ r)` for a random weight `r`
/// against central differences. Returns the largest relative error.
pub fn check_op(inputs: &[Tensor], r_seed: u64, build: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let weighted = |tape: &mut Tape, vars: &[Var]| {
        let y = build(tape, vars);
        let shape = tape.shape(y).to_vec();
        let mut rng = SetRng::new(r_seed);
        let r = (0..shape.iter().product()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let r = tape.constant(&shape, r).unwrap();
        let p = tape.mul(y, r).unwrap();
        tape.sum_all(p)
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(&t.clone().with_grad())).collect();
    let loss = weighted(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut f = |x: &[f64]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, inp)| {
                    let data = if j == k { x.to_vec() } else { inp.data().to_vec() };
                    t.constant(inp.shape(), data).unwrap()
                })
                .collect();
            let l = weighted(&mut t, &vs);
            t.scalar(l)
        };
        let numeric = numeric_grad(&mut f, input.data(), FD_STEP);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    worst
}

pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a.get2(i, t) * b.get2(t, j);
            }
            out[i * n + j] = s;
        }
    }
    out
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Minimum over all permutations of `Σ_i cost(i, π(i))`, summed in row order.
pub fn brute_assignment(n: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    permutations(n)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

pub fn brute_emd(x: &PointSet, y: &PointSet) -> f64 {
    brute_assignment(x.len(), &|i, j| sq_dist(x.point(i), y.point(j)).sqrt())
}

pub fn brute_chamfer(x: &PointSet, y: &PointSet) -> f64 {
    let to_y: f64 = (0..x.len())
        .map(|i| (0..y.len()).map(|j| sq_dist(x.point(i), y.point(j))).fold(f64::INFINITY, f64::min))
        .sum();
    let to_x: f64 = (0..y.len())
        .map(|j| (0..x.len()).map(|i| sq_dist(x.point(i), y.point(j))).fold(f64::INFINITY, f64::min))
        .sum();
    to_y + to_x
}

/// Population metrics by direct double loops over a distance function.
pub struct PopulationOracle<'a> {
    pub dist: &'a dyn Fn(&PointSet, &PointSet) -> f64,
}

impl PopulationOracle<'_> {
    pub fn mmd(&self, sg: &[PointSet], sr: &[PointSet]) -> f64 {
        let mut total = 0.0;
        for y in sr {
            let mut best = f64::INFINITY;
            for x in sg {
                best = best.min((self.dist)(x, y));
            }
            total += best;
        }
        total / sr.len() as f64
    }

    pub fn cov(&self, sg: &[PointSet], sr: &[PointSet]) -> f64 {
        let mut matched = vec![false; sr.len()];
        for x in sg {
            let mut best = (0, f64::INFINITY);
            for (j, y) in sr.iter().enumerate() {
                let d = (self.dist)(x, y);
                if d < best.1 {
                    best = (j, d);
                }
            }
            matched[best.0] = true;
        }
        matched.iter().filter(|&&m| m).count() as f64 / sr.len() as f64
    }

    pub fn one_nna(&self, sg: &[PointSet], sr: &[PointSet]) -> f64 {
        let pooled: Vec<(&PointSet, bool)> =
            sg.iter().map(|s| (s, true)).chain(sr.iter().map(|s| (s, false))).collect();
        let mut correct = 0;
        for (i, (x, from_g)) in pooled.iter().enumerate() {
            let mut best = (usize::MAX, f64::INFINITY);
            for (k, (y, _)) in pooled.iter().enumerate() {
                if k == i {
                    continue;
                }
                // Generated-vs-reference pairs are always measured (g, r).
                let d = match (from_g, pooled[k].1) {
                    (false, true) => (self.dist)(y, x),
                    _ => (self.dist)(x, y),
                };
                if d < best.1 {
                    best = (k, d);
                }
            }
            if pooled[best.0].1 == *from_g {
                correct += 1;
            }
        }
        correct as f64 / pooled.len() as f64
    }
}

/// Single-linkage clustering into two groups: drop the longest edge of the
/// minimum spanning tree (Prim). Returns a label per point.
pub fn single_linkage_two(set: &PointSet) -> Vec<usize> {
    let n = set.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![(f64::INFINITY, 0usize); n];
    let mut edges = Vec::new();
    best[0] = (0.0, 0);
    for _ in 0..n {
        let u = (0..n)
            .filter(|&i| !in_tree[i])
            .min_by(|&a, &b| best[a].0.total_cmp(&best[b].0))
            .unwrap();
        in_tree[u] = true;
        if u != 0 {
            edges.push((best[u].0, best[u].1, u));
        }
        for v in 0..n {
            let d = sq_dist(set.point(u), set.point(v));
            if !in_tree[v] && d < best[v].0 {
                best[v] = (d, u);
            }
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    edges.pop();
    // Union the remaining edges.
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    for &(_, a, b) in &edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    let root0 = find(&mut parent, 0);
    (0..n).map(|i| usize::from(find(&mut parent, i) != root0)).collect()
}

pub fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let c = t.cols();
    let data = perm.iter().flat_map(|&i| t.row(i).to_vec()).collect();
    Tensor::new(vec![perm.len(), c], data).unwrap()
}

/// Whether `b` equals `a` with its rows reordered by `perm` (`b[i] = a[perm[i]]`).
pub fn rows_permuted_diff(a: &[f64], b: &[f64], cols: usize, perm: &[usize]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, &p) in perm.iter().enumerate() {
        worst = worst.max(max_abs_diff(&a[p * cols..(p + 1) * cols], &b[i * cols..(i + 1) * cols]));
    }
    worst
}

/// A small model used where the default width would only slow the checks.
pub fn tiny_config() -> setvae::ModelConfig {
    setvae::ModelConfig {
        d: 8,
        d_z: 2,
        heads: 2,
        enc_m: vec![4, 2],
        gen_m: vec![2, 4],
        d0: 3,
        mixtures: 2,
        ..Default::default()
    }
}

/// Compares the full per-step loss gradient with central differences on
/// `samples` randomly chosen parameter entries, noise frozen by reseeding.
/// Returns the worst relative error.
pub fn model_loss_fd(seed: u64, samples: usize) -> f64 {
    use setvae::data::batch_pad;
    let mut model = setvae::SetVae::new(tiny_config(), seed).unwrap();
    let mut rng = SetRng::new(seed ^ 0xfd);
    let set = rand_set(&mut rng, 2, 2);
    let batch = batch_pad(&[set]).unwrap();
    let beta = 0.7;
    let noise_seed = seed.wrapping_add(99);
    let (_, grads) = model
        .loss_and_grads(&batch, beta, &mut SetRng::new(noise_seed))
        .unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let p = rng.below(grads.len());
        let e = rng.below(grads[p].len());
        let orig = model.params().tensors()[p].data()[e];
        let mut eval = |v: f64| {
            model.params_mut().tensors_mut()[p].data_mut()[e] = v;
            model.loss(&batch, beta, &mut SetRng::new(noise_seed)).unwrap().total
        };
        let numeric = (eval(orig + FD_STEP) - eval(orig - FD_STEP)) / (2.0 * FD_STEP);
        eval(orig);
        worst = worst.max(rel_err(grads[p][e], numeric));
    }
    worst
}

/// One differentiable op under finite-difference test: an input generator and
/// the graph it builds.
pub struct OpCase {
    pub name: &'static str,
    pub tol: f64,
    pub make: Box<dyn Fn(&mut SetRng) -> Vec<Tensor>>,
    pub build: Box<dyn Fn(&mut Tape, &[Var]) -> Var>,
}

impl OpCase {
    fn new(
        name: &'static str,
        tol: f64,
        make: impl Fn(&mut SetRng) -> Vec<Tensor> + 'static,
        build: impl Fn(&mut Tape, &[Var]) -> Var + 'static,
    ) -> Self {
        OpCase { name, tol, make: Box::new(make), build: Box::new(build) }
    }

    /// Worst relative error over `trials` random input draws.
    pub fn worst(&self, trials: u64) -> f64 {
        (0..trials)
            .map(|trial| {
                let mut rng = SetRng::stream(0x9e37, trial);
                let inputs = (self.make)(&mut rng);
                check_op(&inputs, 1000 + trial, &*self.build)
            })
            .fold(0.0, f64::max)
    }
}

fn two(shape: [usize; 2]) -> impl Fn(&mut SetRng) -> Vec<Tensor> {
    move |rng| vec![rand_tensor(rng, &shape, -2.0, 2.0), rand_tensor(rng, &shape, -2.0, 2.0)]
}

fn one(shape: [usize; 2], lo: f64, hi: f64) -> impl Fn(&mut SetRng) -> Vec<Tensor> {
    move |rng| vec![rand_tensor(rng, &shape, lo, hi)]
}

/// Values bounded away from zero, for kinks at the origin.
pub fn away_from_zero(rng: &mut SetRng, shape: &[usize]) -> Tensor {
    let mut t = rand_tensor(rng, shape, 0.1, 2.0);
    for v in t.data_mut() {
        if rng.uniform() < 0.5 {
            *v = -*v;
        }
    }
    t
}

/// Every differentiable tape op, each at its tolerance.
pub fn op_catalogue() -> Vec<OpCase> {
    const TOL: f64 = 1e-5;
    let mut cases = vec![
        OpCase::new(
            "matmul",
            1e-6,
            |rng| vec![rand_tensor(rng, &[4, 5], -1.0, 1.0), rand_tensor(rng, &[5, 3], -1.0, 1.0)],
            |t, v| t.matmul(v[0], v[1]).unwrap(),
        ),
        OpCase::new("transpose", TOL, one([3, 5], -1.0, 1.0), |t, v| t.transpose(v[0]).unwrap()),
        OpCase::new("add", TOL, two([3, 4]), |t, v| t.add(v[0], v[1]).unwrap()),
        OpCase::new("sub", TOL, two([3, 4]), |t, v| t.sub(v[0], v[1]).unwrap()),
        OpCase::new("mul", TOL, two([3, 4]), |t, v| t.mul(v[0], v[1]).unwrap()),
        OpCase::new("mul_self", TOL, one([3, 4], -2.0, 2.0), |t, v| t.mul(v[0], v[0]).unwrap()),
        OpCase::new(
            "add_row",
            TOL,
            |rng| vec![rand_tensor(rng, &[4, 3], -1.0, 1.0), rand_tensor(rng, &[3], -1.0, 1.0)],
            |t, v| t.add_row(v[0], v[1]).unwrap(),
        ),
        OpCase::new("scale", TOL, one([2, 5], -2.0, 2.0), |t, v| t.scale(v[0], -1.7)),
        OpCase::new("add_scalar", TOL, one([2, 5], -2.0, 2.0), |t, v| t.add_scalar(v[0], 0.3)),
        OpCase::new("relu", TOL, |rng| vec![away_from_zero(rng, &[3, 4])], |t, v| t.relu(v[0])),
        OpCase::new("tanh", TOL, one([3, 4], -2.0, 2.0), |t, v| t.tanh(v[0])),
        OpCase::new("exp", TOL, one([3, 4], -2.0, 2.0), |t, v| t.exp(v[0])),
        OpCase::new("log", TOL, one([3, 4], 0.2, 3.0), |t, v| t.log(v[0]).unwrap()),
        // Bounds at ±1 with inputs kept 0.1 away from them.
        OpCase::new(
            "clamp",
            TOL,
            |rng| {
                let mut x = away_from_zero(rng, &[3, 4]);
                for v in x.data_mut() {
                    if (v.abs() - 1.0).abs() < 0.1 {
                        *v *= 1.3;
                    }
                }
                vec![x]
            },
            |t, v| t.clamp(v[0], -1.0, 1.0),
        ),
        OpCase::new("softmax rows", TOL, one([3, 5], -2.0, 2.0), |t, v| t.softmax(v[0], 1, None).unwrap()),
        OpCase::new("softmax cols", TOL, one([3, 5], -2.0, 2.0), |t, v| t.softmax(v[0], 0, None).unwrap()),
        OpCase::new("softmax column mask", TOL, one([3, 5], -2.0, 2.0), |t, v| {
            t.softmax(v[0], 1, Some(&[true, false, true, true, false])).unwrap()
        }),
        OpCase::new("softmax full mask", TOL, one([3, 5], -2.0, 2.0), |t, v| {
            let full: Vec<bool> = (0..15).map(|i| i % 4 != 1).collect();
            t.softmax(v[0], 1, Some(&full)).unwrap()
        }),
        OpCase::new(
            "softmax vector",
            TOL,
            |rng| vec![rand_tensor(rng, &[6], -2.0, 2.0)],
            |t, v| t.softmax(v[0], 0, None).unwrap(),
        ),
        OpCase::new("normalize rows", TOL, one([3, 4], 0.1, 2.0), |t, v| t.normalize(v[0], 1).unwrap()),
        OpCase::new("normalize cols", TOL, one([3, 4], 0.1, 2.0), |t, v| t.normalize(v[0], 0).unwrap()),
        OpCase::new(
            "layer_norm",
            TOL,
            |rng| {
                vec![
                    rand_tensor(rng, &[4, 8], -2.0, 2.0),
                    rand_tensor(rng, &[8], 0.5, 1.5),
                    rand_tensor(rng, &[8], -0.5, 0.5),
                ]
            },
            |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap(),
        ),
        OpCase::new("sum_all", TOL, one([3, 4], -2.0, 2.0), |t, v| t.sum_all(v[0])),
        OpCase::new("slice_cols", TOL, one([3, 6], -1.0, 1.0), |t, v| t.slice_cols(v[0], 2, 5).unwrap()),
        OpCase::new("slice_rows", TOL, one([5, 3], -1.0, 1.0), |t, v| t.slice_rows(v[0], 1, 4).unwrap()),
        OpCase::new(
            "concat_cols",
            TOL,
            |rng| vec![rand_tensor(rng, &[3, 2], -1.0, 1.0), rand_tensor(rng, &[3, 4], -1.0, 1.0)],
            |t, v| t.concat_cols(&[v[0], v[1], v[0]]).unwrap(),
        ),
        OpCase::new(
            "sq_dist",
            TOL,
            |rng| vec![rand_tensor(rng, &[4, 3], -1.0, 1.0), rand_tensor(rng, &[5, 3], -1.0, 1.0)],
            |t, v| t.sq_dist(v[0], v[1]).unwrap(),
        ),
        // Scores, softmax and a weighted sum chained on one tape.
        OpCase::new(
            "attention chain",
            TOL,
            |rng| vec![rand_tensor(rng, &[3, 4], -1.0, 1.0), rand_tensor(rng, &[5, 4], -1.0, 1.0)],
            |t, v| {
                let kt = t.transpose(v[1]).unwrap();
                let s = t.matmul(v[0], kt).unwrap();
                let s = t.scale(s, 0.5);
                let a = t.softmax(s, 1, None).unwrap();
                t.matmul(a, v[1]).unwrap()
            },
        ),
    ];
    for (axis, sum, mean, min) in [(0, "sum axis 0", "mean axis 0", "min axis 0"), (1, "sum axis 1", "mean axis 1", "min axis 1")] {
        cases.push(OpCase::new(sum, TOL, one([3, 4], -2.0, 2.0), move |t, v| t.sum(v[0], axis).unwrap()));
        cases.push(OpCase::new(mean, 1e-6, one([3, 4], -2.0, 2.0), move |t, v| t.mean(v[0], axis).unwrap()));
        // Uniform draws are distinct with probability one, so the argmin is
        // stable under the finite-difference step.
        cases.push(OpCase::new(min, TOL, one([3, 4], -2.0, 2.0), move |t, v| t.min(v[0], axis).unwrap().0));
    }
    cases
}

/// Run `f` on a graph over `ps`, returning the output values.
pub fn eval_graph(ps: &ParamSet, f: impl FnOnce(&mut Graph) -> Var) -> Vec<f64> {
    let mut g = Graph::new(ps);
    let v = f(&mut g);
    g.value(v).to_vec()
}

/// ISAB: inducing projection invariant and output equivariant under input
/// permutations. Returns the largest deviation.
pub fn isab_deviation(perms: u64, inits: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for heads in [1, 2, 4] {
        for m in [1, 2, 8] {
            for init in 0..inits {
                let mut rng = SetRng::stream(init * 31 + m as u64, heads as u64);
                let mut ps = ParamSet::new();
                let isab = Isab::new(&mut ps, "i", m, 8, heads, 1, &mut rng).unwrap();
                let x = rand_tensor(&mut rng, &[9, 8], -1.0, 1.0);
                let run = |x: &Tensor| {
                    let mut g = Graph::new(&ps);
                    let vx = g.leaf(x);
                    let o = isab.forward(&mut g, vx, None).unwrap();
                    (g.value(o.h).to_vec(), g.value(o.out).to_vec())
                };
                let (h, out) = run(&x);
                for _ in 0..perms {
                    let p = rng.permutation(9);
                    let (hp, outp) = run(&permute_rows(&x, &p));
                    worst = worst.max(max_abs_diff(&h, &hp)).max(rows_permuted_diff(&out, &outp, 8, &p));
                }
            }
        }
    }
    worst
}

pub fn small_model(heads: usize, top_m: usize, seed: u64) -> SetVae {
    let cfg = setvae::ModelConfig {
        d: 8,
        d_z: 3,
        heads,
        enc_m: vec![8, top_m],
        gen_m: vec![top_m, 8],
        d0: 4,
        mixtures: 3,
        ..Default::default()
    };
    SetVae::new(cfg, seed).unwrap()
}

/// ABL step in generation and inference modes: output equivariant, latent
/// and KL invariant.
pub fn abl_deviation(perms: u64, inits: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for heads in [1, 2, 4] {
        for init in 0..inits {
            let model = small_model(heads, 2, init);
            let mut rng = SetRng::stream(init, 77);
            let x = rand_tensor(&mut rng, &[7, 8], -1.0, 1.0);
            for abl in model.generator_layers() {
                let eps = rng.normals(abl.m * abl.d_z);
                let h_enc = rand_tensor(&mut rng, &[abl.m, 8], -1.0, 1.0);
                let run = |x: &Tensor, infer: bool| {
                    let mut g = Graph::new(model.params());
                    let vx = g.leaf(x);
                    let mode = if infer {
                        AblMode::Infer { h_enc: g.leaf(&h_enc) }
                    } else {
                        AblMode::Generate { temperature: 1.0 }
                    };
                    let o = abl.step(&mut g, vx, None, mode, &eps).unwrap();
                    let kl = o.kl.map(|k| g.scalar(k)).unwrap_or(0.0);
                    (g.value(o.x_out).to_vec(), g.value(o.z).to_vec(), kl)
                };
                for infer in [false, true] {
                    let (out, z, kl) = run(&x, infer);
                    for _ in 0..perms {
                        let p = rng.permutation(7);
                        let (outp, zp, klp) = run(&permute_rows(&x, &p), infer);
                        worst = worst
                            .max(rows_permuted_diff(&out, &outp, 8, &p))
                            .max(max_abs_diff(&z, &zp))
                            .max((kl - klp).abs());
                    }
                }
            }
        }
    }
    worst
}

/// Permuting the initial set permutes the generated set.
pub fn generator_deviation(perms: u64, inits: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for heads in [1, 2, 4] {
        for top_m in [1, 2, 8] {
            for init in 0..inits {
                let model = small_model(heads, top_m, init);
                let mut rng = SetRng::stream(init, 5);
                let (z0, _) = model.prior().sample(model.params(), 11, &mut rng).unwrap();
                let noise = model.draw_level_noise(&mut rng);
                let (out, _) = model.generate_from(&z0, &noise, 1.0).unwrap();
                for _ in 0..perms {
                    let p = rng.permutation(11);
                    let (outp, _) = model.generate_from(&permute_rows(&z0, &p), &noise, 1.0).unwrap();
                    worst = worst.max(rows_permuted_diff(out.data(), outp.data(), 2, &p));
                }
            }
        }
    }
    worst
}

/// Largest deviation of slot-attention column sums from 1 (0 for masked
/// keys) and of row sums of the normalized weights from 1, over head counts
/// 1, 2, 4 and random masks.
pub fn slot_normalization_deviation(trials: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for heads in [1, 2, 4] {
        for m in [1, 2, 8] {
            for trial in 0..trials {
                let mut rng = SetRng::stream(m as u64 * 10 + heads as u64, trial);
                let n = 1 + rng.below(9);
                let mut mask: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.7).collect();
                mask[rng.below(n)] = true;
                let col_dev = |a: &[f64]| {
                    (0..n)
                        .map(|j| {
                            let col: f64 = (0..m).map(|i| a[i * n + j]).sum();
                            (col - if mask[j] { 1.0 } else { 0.0 }).abs()
                        })
                        .fold(0.0, f64::max)
                };
                // Per-head weights as produced inside multihead attention.
                let mut ps = ParamSet::new();
                let att = AttentionParams::new(&mut ps, "a", 8, heads, 1, &mut rng).unwrap();
                let q = rand_tensor(&mut rng, &[m, 8], -2.0, 2.0);
                let kv = rand_tensor(&mut rng, &[n, 8], -2.0, 2.0);
                let mut g = Graph::new(&ps);
                let (vq, vkv) = (g.leaf(&q), g.leaf(&kv));
                let o = att.multihead(&mut g, vq, vkv, vkv, Some(&mask), ProjectionMode::Slot).unwrap();
                assert_eq!(o.weights.len(), heads);
                for &w in &o.weights {
                    worst = worst.max(col_dev(g.value(w)));
                }
                // Both normalizations at the per-head width.
                let dh = 8 / heads;
                let qh = rand_tensor(&mut rng, &[m, dh], -2.0, 2.0);
                let kh = rand_tensor(&mut rng, &[n, dh], -2.0, 2.0);
                let (vq, vk) = (g.leaf(&qh), g.leaf(&kh));
                let w = slot_attention_weights(&mut g, vq, vk, Some(&mask)).unwrap();
                worst = worst.max(col_dev(g.value(w.column_softmax)));
                for row in g.value(w.weights).chunks(n) {
                    worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
    }
    worst
}
