use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::backbone::VariantTag;
use crate::error::GeoError;
use crate::graphdata::{generate_synthetic, Graph, SplitMasks, SyntheticSpec};
use crate::manifolds::{exp0, linalg::thin_qr, log0, orth_residual, Curvature};
use crate::moe::{sample_link_pairs, ExpertEmbedding};
use crate::numerics::{grad_check, Matrix, Tape};

fn sbm(n_per_block: usize, feature_dim: usize, seed: u64) -> (Graph, SplitMasks) {
    generate_synthetic(
        &SyntheticSpec::Sbm {
            block_sizes: vec![n_per_block, n_per_block],
            p_in: 0.5,
            p_out: 0.02,
            feature_dim,
        },
        seed,
    )
    .unwrap()
}

fn small(variant: VariantTag) -> TrainConfig {
    TrainConfig {
        variant,
        hidden_dim: 8,
        expert_dim: Some(4),
        epochs: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn config_defaults_and_validation() {
    let c = TrainConfig::default();
    assert_eq!(
        (c.hidden_dim, c.gcn_depth, c.epochs, c.patience),
        (64, 2, 300, 100)
    );
    assert_eq!((c.alpha, c.beta_attn, c.lambda_orth), (0.5, 0.5, 0.01));
    assert_eq!(TrainConfig::from_json("{}").unwrap(), c);

    let err = TrainConfig::from_json(r#"{"learning_rate": 0.1}"#).unwrap_err();
    assert!(matches!(&err, GeoError::Config(m) if m.contains("learning_rate")));
    for bad in [
        r#"{"lr": -1}"#,
        r#"{"epochs": 0}"#,
        r#"{"alpha": 1.5}"#,
        r#"{"variant": "rmoe", "curvatures": [], "num_experts": 0}"#,
        r#"{"variant": "rmoe", "num_experts": 2}"#,
        r#"{"variant": "transformer"}"#,
    ] {
        assert!(
            matches!(TrainConfig::from_json(bad), Err(GeoError::Config(_))),
            "{bad}"
        );
    }
}

#[test]
fn shared_names_share_initial_values() {
    let base = init_params(&small(VariantTag::Base), 5, 3).unwrap();
    let moe = init_params(&small(VariantTag::Rmoe), 5, 3).unwrap();
    for (name, e) in base.iter() {
        assert_eq!(moe.get(name).unwrap(), &e.value, "{name}");
    }
    assert_eq!(moe.get(THETA_G).unwrap(), &Matrix::zeros(4, 3));
    for e in 0..3 {
        assert_eq!(moe.get(&expert_bias_name(e)).unwrap(), &Matrix::zeros(1, 4));
    }
    let bound = (6.0f64 / 13.0).sqrt();
    assert!(moe.get(W_IN).unwrap().max_abs() <= bound);
}

fn random_embeddings(
    rng: &mut ChaCha8Rng,
    n: usize,
    de: usize,
    kappas: &[f64],
) -> Vec<ExpertEmbedding> {
    kappas
        .iter()
        .enumerate()
        .map(|(e, &k)| {
            let kappa = Curvature::new(k).unwrap();
            let mut points = Matrix::zeros(n, de);
            for v in 0..n {
                let t = Matrix::random_uniform(1, de, 0.5, rng);
                points
                    .row_mut(v)
                    .copy_from_slice(exp0(kappa, t.row(0)).unwrap().coords());
            }
            ExpertEmbedding {
                expert_id: e,
                kappa,
                points,
            }
        })
        .collect()
}

/// Per-node softmax attention written out element by element.
fn cross_attention_oracle(
    x: &Matrix,
    embs: &[ExpertEmbedding],
    gating: &Matrix,
    p: &ModelParams,
) -> Matrix {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let vecmat = |v: &[f64], m: &Matrix| -> Vec<f64> {
        (0..m.cols())
            .map(|c| (0..m.rows()).map(|r| v[r] * m.get(r, c)).sum())
            .collect()
    };
    let (w_in, w_qc, w_kc, w_vc) = (
        p.get(W_IN).unwrap(),
        p.get(W_QC).unwrap(),
        p.get(W_KC).unwrap(),
        p.get(W_VC).unwrap(),
    );
    let dh = w_qc.cols() as f64;
    let mut out = Matrix::zeros(x.rows(), w_in.cols());
    for v in 0..x.rows() {
        let q = vecmat(x.row(v), w_qc);
        let tokens: Vec<Vec<f64>> = embs
            .iter()
            .map(|e| log0(e.kappa, e.points.row(v)).unwrap())
            .collect();
        let logits: Vec<f64> = tokens
            .iter()
            .enumerate()
            .map(|(e, t)| dot(&q, &vecmat(t, w_kc)) / dh.sqrt() + (gating.get(v, e) + 1e-12).ln())
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let mut f = vecmat(x.row(v), w_in);
        for (e, t) in tokens.iter().enumerate() {
            let a = logits[e].exp() / z;
            for (fi, vi) in f.iter_mut().zip(vecmat(t, w_vc)) {
                *fi += a * vi;
            }
        }
        out.row_mut(v).copy_from_slice(&f);
    }
    out
}

#[test]
fn cross_attention_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = small(VariantTag::Rmoe);
    let mut p = init_params(&cfg, 5, 2).unwrap();
    let x = Matrix::random_uniform(7, 5, 1.0, &mut rng);

    let single = random_embeddings(&mut rng, 7, 4, &[-1.0]);
    let out = cross_attention_fuse(&x, &single, &Matrix::filled(7, 1, 1.0), &p).unwrap();
    let mut tok = Matrix::zeros(7, 4);
    for v in 0..7 {
        tok.row_mut(v)
            .copy_from_slice(&log0(single[0].kappa, single[0].points.row(v)).unwrap());
    }
    let expect = x
        .matmul(p.get(W_IN).unwrap())
        .unwrap()
        .add(&tok.matmul(p.get(W_VC).unwrap()).unwrap())
        .unwrap();
    assert!(out.max_abs_diff(&expect).unwrap() < 1e-14);

    let embs = random_embeddings(&mut rng, 7, 4, &[-1.0, 0.0, 1.0]);
    let gating = crate::numerics::softmax_rows(&Matrix::random_uniform(7, 3, 1.0, &mut rng));
    let out = cross_attention_fuse(&x, &embs, &gating, &p).unwrap();
    let oracle = cross_attention_oracle(&x, &embs, &gating, &p);
    assert!(out.max_abs_diff(&oracle).unwrap() < 1e-12);

    p.set(W_VC, Matrix::zeros(4, 8)).unwrap();
    let out = cross_attention_fuse(&x, &embs, &gating, &p).unwrap();
    assert_eq!(out, x.matmul(p.get(W_IN).unwrap()).unwrap());
}

#[test]
fn forward_shapes_and_determinism() {
    let (g, _) = sbm(15, 10, 2);
    for variant in [
        VariantTag::Base,
        VariantTag::Stiefel,
        VariantTag::Grassmann,
        VariantTag::Rmoe,
        VariantTag::Gcn,
    ] {
        let cfg = small(variant);
        let p = init_params(&cfg, 10, 2).unwrap();
        let inputs = GraphInputs::new(&g, &cfg).unwrap();
        let a = forward(&p, &inputs, &cfg).unwrap();
        assert_eq!(a.logits.shape(), (30, 2), "{variant}");
        let b = forward(&p, &GraphInputs::new(&g, &cfg).unwrap(), &cfg).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn rmoe_forward_matches_plain_blocks() {
    let (g, _) = sbm(15, 10, 3);
    let cfg = small(VariantTag::Rmoe);
    let p = init_params(&cfg, 10, 2).unwrap();
    let inputs = GraphInputs::new(&g, &cfg).unwrap();
    let out = forward(&p, &inputs, &cfg).unwrap();
    let experts = experts_from_params(&p, &cfg).unwrap();
    let embs: Vec<_> = experts
        .iter()
        .map(|e| crate::moe::expert_embed(e, &inputs.adj, &inputs.features).unwrap())
        .collect();
    for (a, b) in embs.iter().zip(&out.embeddings) {
        assert!(a.points.max_abs_diff(&b.points).unwrap() < 1e-14);
    }
    let w = crate::moe::gating_forward(
        inputs.descriptors.as_ref().unwrap(),
        p.get(THETA_G).unwrap(),
    )
    .unwrap();
    assert_eq!(out.gating.as_ref().unwrap(), &w);
}

fn upper_inverse(r: &Matrix) -> Matrix {
    let n = r.rows();
    let mut inv = Matrix::zeros(n, n);
    for c in 0..n {
        for i in (0..n).rev() {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for j in i + 1..n {
                s -= r.get(i, j) * inv.get(j, c);
            }
            inv.set(i, c, s / r.get(i, i));
        }
    }
    inv
}

#[test]
fn stiefel_equals_base_when_queries_are_orthonormal() {
    let (g, _) = sbm(15, 10, 4);
    let base = small(VariantTag::Base);
    let mut p = init_params(&base, 10, 2).unwrap();
    let f = g.features().matmul(p.get(W_IN).unwrap()).unwrap();
    let (_, r) = thin_qr(&f).unwrap();
    let w = upper_inverse(&r);
    p.set(W_Q, w.clone()).unwrap();
    p.set(W_K, w).unwrap();
    let inputs = GraphInputs::new(&g, &base).unwrap();
    let a = forward(&p, &inputs, &base).unwrap();
    let stiefel = TrainConfig {
        variant: VariantTag::Stiefel,
        ..base
    };
    let b = forward(&p, &inputs, &stiefel).unwrap();
    assert!(a.logits.max_abs_diff(&b.logits).unwrap() < 1e-9);
}

fn aux_for<'a>(out: &'a ForwardOutput, experts: &'a [crate::moe::ExpertConfig]) -> LossAux<'a> {
    LossAux {
        y: &out.y,
        gating: out.gating.as_ref(),
        experts,
        embeddings: &out.embeddings,
        link_pairs: None,
    }
}

#[test]
fn loss_examples() {
    let cfg = TrainConfig {
        lambda_orth: 0.0,
        ..TrainConfig::default()
    };
    let y = Matrix::zeros(1, 1);
    let aux = LossAux {
        y: &y,
        gating: None,
        experts: &[],
        embeddings: &[],
        link_pairs: None,
    };
    let b = composite_loss(&Matrix::zeros(1, 2), &[1], &[true], &aux, &cfg).unwrap();
    assert!((b.total - std::f64::consts::LN_2).abs() < 1e-15);

    let logits = Matrix::from_rows(&[vec![20.0, 0.0], vec![0.0, 20.0]]).unwrap();
    let b = composite_loss(&logits, &[0, 1], &[true, true], &aux, &cfg).unwrap();
    assert!(b.total < 1e-3);

    assert!(matches!(
        composite_loss(&logits, &[0, 1], &[false, false], &aux, &cfg),
        Err(GeoError::Contract(_))
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y = Matrix::random_uniform(6, 3, 1.0, &mut rng);
    let aux = LossAux { y: &y, ..aux };
    let logits = Matrix::random_uniform(6, 2, 1.0, &mut rng);
    let labels = [0, 1, 0, 1, 1, 0];
    let mask = [true; 6];
    let lam = TrainConfig {
        lambda_orth: 0.25,
        variant: VariantTag::Stiefel,
        ..cfg.clone()
    };
    let b0 = composite_loss(&logits, &labels, &mask, &aux, &cfg).unwrap();
    let b1 = composite_loss(&logits, &labels, &mask, &aux, &lam).unwrap();
    let r = orth_residual(&y);
    assert!((b1.total - b0.total - 0.25 * r * r).abs() < 1e-12 * r * r);
}

#[test]
fn loss_on_tape_matches_plain() {
    let (g, masks) = sbm(15, 10, 6);
    let cfg = TrainConfig {
        gamma_link: 0.5,
        ..small(VariantTag::Rmoe)
    };
    let p = init_params(&cfg, 10, 2).unwrap();
    let inputs = GraphInputs::new(&g, &cfg).unwrap();
    let pairs = sample_link_pairs(&g, 1, 0).unwrap();
    let mut tape = Tape::new();
    let fv = forward_var(&mut tape, &p, &inputs, &cfg).unwrap();
    let (_, tb) =
        composite_loss_var(&mut tape, &fv, g.labels(), &masks.train, Some(&pairs), &cfg).unwrap();
    let out = forward(&p, &inputs, &cfg).unwrap();
    let experts = experts_from_params(&p, &cfg).unwrap();
    let aux = LossAux {
        link_pairs: Some(&pairs),
        ..aux_for(&out, &experts)
    };
    let pb = composite_loss(&out.logits, g.labels(), &masks.train, &aux, &cfg).unwrap();
    for (a, b) in [
        (tb.total, pb.total),
        (tb.cross_entropy, pb.cross_entropy),
        (tb.orth, pb.orth),
        (tb.entropy, pb.entropy),
        (tb.regularizer, pb.regularizer),
        (tb.link, pb.link),
    ] {
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{tb} vs {pb}");
    }
    assert!(tb.link > 0.0 && tb.entropy > 0.0 && tb.regularizer > 0.0);
    assert_eq!(tb.orth, 0.0);
}

fn loss_of(
    p: &ModelParams,
    inputs: &GraphInputs,
    g: &Graph,
    mask: &[bool],
    cfg: &TrainConfig,
    pairs: &crate::moe::LinkPairs,
) -> crate::Result<(Tape, crate::numerics::Var)> {
    let mut tape = Tape::new();
    let fv = forward_var(&mut tape, p, inputs, cfg)?;
    let (l, _) = composite_loss_var(&mut tape, &fv, g.labels(), mask, Some(pairs), cfg)?;
    Ok((tape, l))
}

fn check_gradients(cfg: &TrainConfig, warm_epochs: usize) {
    let (g, masks) = sbm(15, 10, 7);
    let mut trainer = Trainer::new(cfg, &g, &masks).unwrap();
    for _ in 0..warm_epochs {
        trainer.epoch().unwrap();
    }
    let p = trainer.params().clone();
    let inputs = trainer.inputs().clone();
    let pairs = sample_link_pairs(&g, 1, 9).unwrap();
    let (tape, l) = loss_of(&p, &inputs, &g, &masks.train, cfg, &pairs).unwrap();
    let grads = tape.backward(l).unwrap();
    for name in p.names() {
        assert!(
            grads.reached(name),
            "{}: no gradient for {name}",
            cfg.variant
        );
    }
    let values: BTreeMap<String, Matrix> = p.values();
    let records = grad_check(
        &values,
        &grads.into_map(),
        |q| {
            let (t, l) = loss_of(&p.with_values(q)?, &inputs, &g, &masks.train, cfg, &pairs)?;
            Ok(t.scalar(l))
        },
        1e-5,
    )
    .unwrap();
    for r in records {
        assert!(
            r.max_rel_err < 1e-4,
            "{} {}: {}",
            cfg.variant,
            r.param_name,
            r.max_rel_err
        );
    }
}

#[test]
fn gradients_check_for_every_parameter() {
    check_gradients(
        &TrainConfig {
            gamma_link: 0.5,
            ..small(VariantTag::Rmoe)
        },
        3,
    );
    check_gradients(&small(VariantTag::Base), 3);
    check_gradients(&small(VariantTag::Gcn), 3);
}

#[test]
fn projected_variants_reach_every_parameter() {
    let (g, masks) = sbm(15, 10, 8);
    for variant in [VariantTag::Stiefel, VariantTag::Grassmann] {
        let cfg = small(variant);
        let p = init_params(&cfg, 10, 2).unwrap();
        let inputs = GraphInputs::new(&g, &cfg).unwrap();
        let mut tape = Tape::new();
        let fv = forward_var(&mut tape, &p, &inputs, &cfg).unwrap();
        let (l, _) =
            composite_loss_var(&mut tape, &fv, g.labels(), &masks.train, None, &cfg).unwrap();
        let grads = tape.backward(l).unwrap();
        for name in p.names() {
            assert!(grads.reached(name), "{variant}: {name}");
        }
    }
}

#[test]
fn sbm_base_training_separates_blocks() {
    for seed in 0..5 {
        let (g, masks) = sbm(100, 16, seed);
        let cfg = TrainConfig {
            epochs: 200,
            seed,
            ..TrainConfig::default()
        };
        let run = train(&cfg, &g, &masks).unwrap();
        let losses: Vec<f64> = run.history.iter().take(10).map(|r| r.train_loss).collect();
        assert!(
            losses.windows(2).all(|w| w[1] < w[0]),
            "seed {seed}: {losses:?}"
        );
        assert!(
            run.metrics.test.accuracy >= 0.95,
            "seed {seed}: {}",
            run.metrics.test.accuracy
        );
    }
}

#[test]
fn same_seed_gives_identical_history() {
    let (g, masks) = sbm(15, 10, 10);
    let cfg = TrainConfig {
        epochs: 8,
        ..small(VariantTag::Rmoe)
    };
    let a = train(&cfg, &g, &masks).unwrap();
    let b = train(&cfg, &g, &masks).unwrap();
    assert_eq!(a.history_csv(), b.history_csv());
    assert_eq!(a.metrics_json().unwrap(), b.metrics_json().unwrap());
    assert_eq!(a.params.to_json().unwrap(), b.params.to_json().unwrap());
}

#[test]
fn zero_lr_keeps_parameters() {
    let (g, masks) = sbm(15, 10, 11);
    let cfg = TrainConfig {
        lr: 0.0,
        ..small(VariantTag::Rmoe)
    };
    let mut t = Trainer::new(&cfg, &g, &masks).unwrap();
    let start = t.params().clone();
    let first = t.epoch().unwrap().train_loss;
    for _ in 0..3 {
        assert_eq!(t.epoch().unwrap().train_loss, first);
    }
    assert_eq!(t.params(), &start);
}

#[test]
fn rmoe_reduces_to_base() {
    let (g, masks) = sbm(15, 10, 12);
    let base = small(VariantTag::Base);
    let moe = TrainConfig {
        variant: VariantTag::Rmoe,
        num_experts: 1,
        curvatures: vec![0.0],
        gamma_ent: 0.0,
        gamma_reg: 0.0,
        ..base.clone()
    };
    let mut p = init_params(&moe, 10, 2).unwrap();
    p.set(W_VC, Matrix::zeros(4, 8)).unwrap();
    p.set(&expert_weight_name(0), Matrix::zeros(10, 4)).unwrap();
    let mut tb = Trainer::new(&base, &g, &masks).unwrap();
    let mut tm = Trainer::with_params(&moe, &g, &masks, p).unwrap();
    for _ in 0..5 {
        let a = tb.epoch().unwrap();
        let b = tm.epoch().unwrap();
        assert!(a.logits.max_abs_diff(&b.logits).unwrap() <= 1e-9);
    }
}

#[test]
fn early_stopping_restores_best_epoch() {
    let (g, masks) = sbm(20, 10, 13);
    let cfg = TrainConfig {
        epochs: 60,
        patience: 5,
        lr: 0.05,
        ..small(VariantTag::Base)
    };
    let run = train(&cfg, &g, &masks).unwrap();
    let best = run
        .history
        .iter()
        .map(|r| r.val_wf1)
        .fold(f64::NEG_INFINITY, f64::max);
    let first = run.history.iter().position(|r| r.val_wf1 == best).unwrap() + 1;
    assert_eq!(run.metrics.best_epoch, first);
    assert_eq!(run.metrics.val.weighted_f1, best);
    assert!(run.history.len() <= 60 && run.history.len() >= first);
    if run.history.len() < 60 {
        assert_eq!(run.history.len(), first + 5);
    }
    let again = evaluate(&run.params, &cfg, &g, &masks.val).unwrap();
    assert_eq!(again.weighted_f1, best);
}

#[test]
fn evaluate_reads_only_masked_nodes() {
    let (g, masks) = sbm(15, 10, 14);
    let cfg = small(VariantTag::Gcn);
    let p = init_params(&cfg, 10, 2).unwrap();
    let m = evaluate(&p, &cfg, &g, &masks.test).unwrap();
    let labels: Vec<i64> = g
        .labels()
        .iter()
        .zip(&masks.test)
        .map(|(&l, &t)| if t { l } else { 1 - l })
        .collect();
    let edges: Vec<_> = g.edges().collect();
    let g2 = Graph::from_edges(30, &edges, g.features().clone(), labels, 2).unwrap();
    assert_eq!(evaluate(&p, &cfg, &g2, &masks.test).unwrap(), m);

    // Labels copied from the model's own predictions score perfectly.
    let inputs = GraphInputs::new(&g, &cfg).unwrap();
    let pred = forward(&p, &inputs, &cfg).unwrap().logits.argmax_rows();
    let g3 = Graph::from_edges(
        30,
        &edges,
        g.features().clone(),
        pred.iter().map(|&c| c as i64).collect(),
        2,
    )
    .unwrap();
    let m = evaluate(&p, &cfg, &g3, &[true; 30]).unwrap();
    assert_eq!((m.accuracy, m.weighted_f1), (1.0, 1.0));

    assert!(matches!(
        evaluate(&p, &cfg, &g, &[false; 30]),
        Err(GeoError::Contract(_))
    ));
}

#[test]
fn mini_batches_train_and_check_batch_size() {
    let (g, masks) = sbm(20, 10, 15);
    let cfg = TrainConfig {
        batches: 2,
        epochs: 3,
        ..small(VariantTag::Rmoe)
    };
    let run = train(&cfg, &g, &masks).unwrap();
    assert_eq!(run.history.len(), 3);
    let cfg = TrainConfig {
        batches: 8,
        ..small(VariantTag::Stiefel)
    };
    assert!(matches!(
        train(&cfg, &g, &masks),
        Err(GeoError::BatchSize { hidden: 8, .. })
    ));
}

#[test]
fn overflow_aborts_training() {
    let (g, masks) = sbm(15, 10, 16);
    let edges: Vec<_> = g.edges().collect();
    let huge = g.features().map(|v| v * 1e200);
    let g = Graph::from_edges(30, &edges, huge, g.labels().to_vec(), 2).unwrap();
    match train(&small(VariantTag::Base), &g, &masks) {
        Err(GeoError::NumericalAbort { epoch: 1, detail }) => {
            assert!(detail.contains("square"), "{detail}")
        }
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn orthogonality_penalty_lowers_residual() {
    let (g, masks) = sbm(20, 10, 17);
    let run = |lambda_orth| {
        let cfg = TrainConfig {
            lambda_orth,
            epochs: 50,
            patience: 1000,
            ..small(VariantTag::Stiefel)
        };
        train(&cfg, &g, &masks)
            .unwrap()
            .history
            .last()
            .unwrap()
            .orth_residual
    };
    assert!(run(0.01) < run(0.0));
}

#[test]
fn artifacts_write_expected_files() {
    let (g, masks) = sbm(15, 10, 18);
    let run = train(&small(VariantTag::Base), &g, &masks).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run.write(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_loss,val_acc,val_wf1,orth_residual\n"));
    assert_eq!(csv.lines().count(), run.history.len() + 1);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    for split in ["train", "val", "test"] {
        for key in ["accuracy", "weighted_f1", "macro_f1"] {
            assert!(metrics[split][key].is_number());
        }
    }
    let params =
        ModelParams::from_json(&std::fs::read_to_string(dir.path().join("model.json")).unwrap())
            .unwrap();
    assert_eq!(params, run.params);
}

#[test]
fn link_training_reduces_loss() {
    let (g, _) = generate_synthetic(
        &SyntheticSpec::Tree {
            branching: 2,
            depth: 3,
            noise: 0.1,
        },
        0,
    )
    .unwrap();
    let run = train_link_embedding(
        &g,
        &LinkConfig {
            epochs: 40,
            ..LinkConfig::default()
        },
    )
    .unwrap();
    assert_eq!(run.history.len(), 40);
    assert!(run.final_loss.is_finite());
    assert!(run.history.last().unwrap() < &run.history[0]);
}
