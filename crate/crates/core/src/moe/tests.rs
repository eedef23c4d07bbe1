use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graphdata::{generate_synthetic, normalize_adjacency, SyntheticSpec};
use crate::numerics::grad_check;

fn k(v: f64) -> Curvature {
    Curvature::new(v).unwrap()
}

fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::from_edges(n, edges, Matrix::zeros(n, 1), vec![0; n], 1).unwrap()
}

fn star(leaves: usize) -> Graph {
    let edges: Vec<_> = (1..=leaves).map(|l| (0, l)).collect();
    graph(leaves + 1, &edges)
}

fn small_tree() -> Graph {
    generate_synthetic(
        &SyntheticSpec::Tree {
            branching: 2,
            depth: 3,
            noise: 0.2,
        },
        3,
    )
    .unwrap()
    .0
}

fn expert(id: usize, kappa: f64, d: usize, de: usize, rng: &mut ChaCha8Rng) -> ExpertConfig {
    let kappa = k(kappa);
    let bias = exp0(kappa, &Matrix::random_uniform(1, de, 0.2, rng).into_vec()).unwrap();
    ExpertConfig {
        expert_id: id,
        kappa,
        weights: Matrix::random_uniform(d, de, 1.0, rng),
        bias,
    }
}

#[test]
fn descriptor_examples() {
    assert_eq!(topology_descriptor(&graph(1, &[]), 0), [0.0; 4]);

    let tri = graph(3, &[(0, 1), (1, 2), (0, 2)]);
    let d = topology_descriptor(&tri, 0);
    assert!((d[0] - 3f64.ln()).abs() < 1e-15);
    assert_eq!(d[1], 1.0);
    assert_eq!(d[3], 0.0);

    let s = star(5);
    let d = topology_descriptor(&s, 0);
    assert_eq!(d[1], 0.0);
    assert!((d[2] - 2f64.ln()).abs() < 1e-15);
    // A leaf sees the other four leaves at distance two.
    let leaf = topology_descriptor(&s, 1);
    assert!((leaf[3] - 4.0 / 2.0).abs() < 1e-15);
}

#[test]
fn local_subgraph_examples() {
    let tri = graph(3, &[(0, 1), (1, 2), (0, 2)]);
    assert_eq!(sample_local_subgraph(&tri, 1, 0, 10, 0), vec![1]);
    assert_eq!(sample_local_subgraph(&tri, 1, 1, 10, 0), vec![1, 0, 2]);

    let s = star(6);
    let a = sample_local_subgraph(&s, 0, 1, 2, 42);
    assert_eq!(a.len(), 2);
    assert_eq!(a[0], 0);
    assert_eq!(a, sample_local_subgraph(&s, 0, 1, 2, 42));
}

#[test]
fn descriptor_matrix_is_standardized() {
    let g = small_tree();
    let d = descriptor_matrix(&g, 2, 64, 0).unwrap();
    for c in 0..DESCRIPTOR_DIM {
        let mean = (0..g.num_nodes()).map(|r| d.get(r, c)).sum::<f64>() / g.num_nodes() as f64;
        assert!(mean.abs() < 1e-12);
    }
    assert_eq!(d, descriptor_matrix(&g, 2, 64, 0).unwrap());
}

#[test]
fn gating_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = Matrix::random_uniform(5, 4, 2.0, &mut rng);
    let w = gating_forward(&d, &Matrix::zeros(4, 3)).unwrap();
    assert!(w.data().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    let w = gating_forward(&d, &Matrix::random_uniform(4, 1, 1.0, &mut rng)).unwrap();
    assert!(w.data().iter().all(|&x| x == 1.0));
    let w = gating_forward(&Matrix::row_vector(&[2f64.ln(), 0.0]), &Matrix::identity(2)).unwrap();
    assert!((w.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);

    let w = gating_forward(&d, &Matrix::random_uniform(4, 3, 5.0, &mut rng)).unwrap();
    for r in 0..5 {
        assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!(w.row(r).iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn expert_embedding_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = small_tree();
    let adj = normalize_adjacency(&g);
    let x = g.features();

    let mut e = expert(0, 0.0, x.cols(), 3, &mut rng);
    e.bias = ManifoldPoint::origin(k(0.0), 3);
    let emb = expert_embed(&e, &adj, x).unwrap();
    let h = adj
        .matrix()
        .mul_dense(x)
        .unwrap()
        .matmul(&e.weights)
        .unwrap()
        .map(f64::tanh);
    assert_eq!(emb.points, h);

    for kv in [-1.0, 1.0] {
        let e = ExpertConfig {
            expert_id: 0,
            kappa: k(kv),
            weights: Matrix::zeros(x.cols(), 3),
            bias: ManifoldPoint::origin(k(kv), 3),
        };
        assert_eq!(
            expert_embed(&e, &adj, x).unwrap().points,
            Matrix::zeros(g.num_nodes(), 3)
        );
    }

    for _ in 0..20 {
        let mut e = expert(0, -1.0, x.cols(), 4, &mut rng);
        e.weights = e.weights.scale(50.0);
        let emb = expert_embed(&e, &adj, x).unwrap();
        for r in 0..g.num_nodes() {
            let n = emb.points.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n < 1.0);
        }
    }
}

#[test]
fn fusion_examples() {
    let w = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
    let flat = |pts: &[f64]| ExpertEmbedding {
        expert_id: 0,
        kappa: k(0.0),
        points: Matrix::row_vector(pts),
    };
    let out = fuse_tangent(&w, &[flat(&[1.0, 0.0]), flat(&[3.0, 0.0])]).unwrap();
    assert_eq!(out.row(0), &[2.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = small_tree();
    let adj = normalize_adjacency(&g);
    let e = expert(0, -1.0, g.num_features(), 3, &mut rng);
    let emb = expert_embed(&e, &adj, g.features()).unwrap();
    let single = fuse_tangent(
        &Matrix::filled(g.num_nodes(), 1, 1.0),
        std::slice::from_ref(&emb),
    )
    .unwrap();
    for r in 0..g.num_nodes() {
        let t = log0(emb.kappa, emb.points.row(r)).unwrap();
        assert_eq!(single.row(r), t.as_slice());
    }
    let w3 = softmax_rows(&Matrix::random_uniform(g.num_nodes(), 3, 2.0, &mut rng));
    let tripled = fuse_tangent(&w3, &[emb.clone(), emb.clone(), emb.clone()]).unwrap();
    assert!(tripled.max_abs_diff(&single).unwrap() < 1e-14);
}

#[test]
fn fusion_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = small_tree();
    let adj = normalize_adjacency(&g);
    let embs: Vec<_> = [-1.0, 0.0, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &kv)| {
            expert_embed(
                &expert(i, kv, g.num_features(), 3, &mut rng),
                &adj,
                g.features(),
            )
            .unwrap()
        })
        .collect();
    let w = softmax_rows(&Matrix::random_uniform(g.num_nodes(), 3, 2.0, &mut rng));
    let out = fuse_tangent(&w, &embs).unwrap();
    // Swap experts 0 and 2 together with the weight columns; summation order
    // is kept by fusing in the same expert order.
    let perm = [2usize, 1, 0];
    let mut wp = w.clone();
    for r in 0..w.rows() {
        for (c, &p) in perm.iter().enumerate() {
            wp.set(r, c, w.get(r, p));
        }
    }
    let embs_p: Vec<_> = perm.iter().map(|&p| embs[p].clone()).collect();
    let out_p = fuse_tangent(&wp, &embs_p).unwrap();
    assert!(out.max_abs_diff(&out_p).unwrap() < 1e-15);
}

#[test]
fn aligned_weight_examples() {
    let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5], vec![0.3, 0.7]]).unwrap();
    assert_eq!(aligned_pair_weights(&w, 0, 1), vec![1.0, 0.0]);
    let same = aligned_pair_weights(&w, 2, 2);
    assert!((same[0] - 0.3).abs() < 1e-15 && (same[1] - 0.7).abs() < 1e-15);
}

#[test]
fn pair_distance_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let flat = ExpertEmbedding {
        expert_id: 0,
        kappa: k(0.0),
        points: Matrix::random_uniform(4, 3, 1.0, &mut rng),
    };
    let w1 = Matrix::filled(4, 1, 1.0);
    assert_eq!(
        pair_distance_sq(2, 2, &w1, std::slice::from_ref(&flat)).unwrap(),
        0.0
    );
    let diff: f64 = (0..3)
        .map(|c| (flat.points.get(0, c) - flat.points.get(1, c)).powi(2))
        .sum();
    assert!(
        (pair_distance_sq(0, 1, &w1, std::slice::from_ref(&flat)).unwrap() - 4.0 * diff).abs()
            < 1e-14
    );

    // Two flat experts at distances 1 and 3 with equal weights.
    let e1 = ExpertEmbedding {
        expert_id: 0,
        kappa: k(0.0),
        points: Matrix::from_rows(&[vec![0.0], vec![0.5]]).unwrap(),
    };
    let e2 = ExpertEmbedding {
        expert_id: 1,
        kappa: k(0.0),
        points: Matrix::from_rows(&[vec![0.0], vec![1.5]]).unwrap(),
    };
    let w = Matrix::filled(2, 2, 0.5);
    assert!((pair_distance_sq(0, 1, &w, &[e1, e2]).unwrap() - 5.0).abs() < 1e-14);
}

#[test]
fn pair_distance_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = small_tree();
    let adj = normalize_adjacency(&g);
    let embs: Vec<_> = [-1.0, 0.0, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &kv)| {
            expert_embed(
                &expert(i, kv, g.num_features(), 3, &mut rng),
                &adj,
                g.features(),
            )
            .unwrap()
        })
        .collect();
    let w = softmax_rows(&Matrix::random_uniform(g.num_nodes(), 3, 2.0, &mut rng));
    for u in 0..g.num_nodes() {
        for v in 0..g.num_nodes() {
            let a = pair_distance_sq(u, v, &w, &embs).unwrap();
            let b = pair_distance_sq(v, u, &w, &embs).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }
}

#[test]
fn entropy_examples() {
    let uniform = Matrix::filled(3, 4, 0.25);
    assert!((gating_entropy(&uniform) - 4f64.ln()).abs() < 1e-9);
    assert!(gating_entropy(&Matrix::identity(3)).abs() < 1e-9);
    assert!((gating_entropy(&Matrix::filled(1, 2, 0.5)) - std::f64::consts::LN_2).abs() < 1e-10);
}

#[test]
fn regularizer_examples() {
    let e = ExpertConfig {
        expert_id: 0,
        kappa: k(-1.0),
        weights: Matrix::zeros(2, 2),
        bias: ManifoldPoint::origin(k(-1.0), 2),
    };
    assert_eq!(expert_regularizer(std::slice::from_ref(&e)).unwrap(), 0.0);
    let e = ExpertConfig {
        weights: Matrix::identity(2),
        ..e
    };
    assert_eq!(expert_regularizer(std::slice::from_ref(&e)).unwrap(), 2.0);
    assert_eq!(expert_regularizer(&[e.clone(), e]).unwrap(), 4.0);
}

#[test]
fn link_loss_examples() {
    assert!((link_bce(LINK_R, true) - 2f64.ln()).abs() < 1e-15);
    assert!((link_bce(LINK_R, false) - 2f64.ln()).abs() < 1e-15);
    assert!(link_bce(0.0, true) < (1.0 + (-2f64).exp()).ln() + 1e-15);
    assert!(link_bce(100.0, false) < 1e-30);

    let g = small_tree();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let adj = normalize_adjacency(&g);
    let embs = vec![expert_embed(
        &expert(0, -1.0, g.num_features(), 3, &mut rng),
        &adj,
        g.features(),
    )
    .unwrap()];
    let w = Matrix::filled(g.num_nodes(), 1, 1.0);
    let a = link_reconstruction_loss(&g, &w, &embs, 2, 11).unwrap();
    let b = link_reconstruction_loss(&g, &w, &embs, 2, 11).unwrap();
    assert_eq!(a, b);
    let pairs = sample_link_pairs(&g, 2, 11).unwrap();
    assert_eq!(pairs.len(), 3 * g.num_edges());
    for i in 0..pairs.len() {
        assert_eq!(g.has_edge(pairs.us[i], pairs.vs[i]), pairs.positive[i]);
    }
}

fn moe_loss(
    tape: &mut Tape,
    p: &BTreeMap<String, Matrix>,
    ax: &Matrix,
    desc: &Matrix,
    pairs: &LinkPairs,
    kappas: &[f64],
) -> Result<Var> {
    let ax = tape.constant(ax.clone());
    let desc = tape.constant(desc.clone());
    let theta = tape.param("theta", p["theta"].clone());
    let w = gating_forward_var(tape, desc, theta)?;
    let mut embs = Vec::new();
    let mut regs = Vec::new();
    for (e, &kv) in kappas.iter().enumerate() {
        let we = tape.param(&format!("w{e}"), p[&format!("w{e}")].clone());
        let be = tape.param(&format!("b{e}"), p[&format!("b{e}")].clone());
        let z = expert_embed_var(tape, k(kv), ax, we, be)?;
        embs.push((k(kv), z));
        regs.push((k(kv), we, be));
    }
    let fused = fuse_tangent_var(tape, w, &embs)?;
    let f = tape.frobenius_sq(fused)?;
    let ent = gating_entropy_var(tape, w)?;
    let reg = expert_regularizer_var(tape, &regs)?;
    let link = link_loss_var(tape, pairs, w, &embs)?;
    let a = tape.add(f, ent)?;
    let b = tape.add(reg, link)?;
    tape.add(a, b)
}

#[test]
fn tape_forms_match_plain_and_gradients_check() {
    let g = small_tree();
    let adj = normalize_adjacency(&g);
    let ax = adj.matrix().mul_dense(g.features()).unwrap();
    let desc = descriptor_matrix(&g, 2, 64, 0).unwrap();
    let pairs = sample_link_pairs(&g, 1, 3).unwrap();
    let kappas = [-1.0, 0.0, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut p = BTreeMap::new();
    p.insert(
        "theta".to_string(),
        Matrix::random_uniform(4, 3, 0.5, &mut rng),
    );
    let mut experts = Vec::new();
    for (e, &kv) in kappas.iter().enumerate() {
        let cfg = expert(e, kv, g.num_features(), 3, &mut rng);
        p.insert(format!("w{e}"), cfg.weights.clone());
        p.insert(format!("b{e}"), Matrix::row_vector(cfg.bias.coords()));
        experts.push(cfg);
    }

    let mut tape = Tape::new();
    let loss = moe_loss(&mut tape, &p, &ax, &desc, &pairs, &kappas).unwrap();

    let w = gating_forward(&desc, &p["theta"]).unwrap();
    let embs: Vec<_> = experts
        .iter()
        .map(|e| expert_embed(e, &adj, g.features()).unwrap())
        .collect();
    let plain = fuse_tangent(&w, &embs).unwrap().frobenius_sq()
        + gating_entropy(&w)
        + expert_regularizer(&experts).unwrap()
        + link_loss_on_pairs(&pairs, &w, &embs).unwrap();
    assert!((tape.scalar(loss) - plain).abs() < 1e-10 * plain.abs().max(1.0));

    let analytic = tape.backward(loss).unwrap().into_map();
    let records = grad_check(
        &p,
        &analytic,
        |q| {
            let mut t = Tape::new();
            let l = moe_loss(&mut t, q, &ax, &desc, &pairs, &kappas)?;
            Ok(t.scalar(l))
        },
        1e-6,
    )
    .unwrap();
    for r in records {
        assert!(r.max_rel_err < 1e-5, "{}: {}", r.param_name, r.max_rel_err);
    }
}
