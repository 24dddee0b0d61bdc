mod common;

use common::{max_rel_error, naive_l_ins, naive_l_proto, numeric_gradient, random_case};
use proptest::prelude::*;
use proto_verbalizer::linalg::Matrix;
use proto_verbalizer::proto::{
    instance_instance_loss, instance_prototype_loss, loss_gradients, total_loss, train_groups, train_groups_named,
    LossVariant, PrototypeSet, ProjectionEncoder, TrainConfig,
};
use proto_verbalizer::synth::{synthetic_dataset, ClusterSpec};
use proto_verbalizer::{sample_episode, train};

fn analytic(case: &common::Case, variant: LossVariant) -> Vec<f64> {
    let encoder = ProjectionEncoder::new(Matrix::from_rows(case.w.clone()).unwrap()).unwrap();
    let protos = PrototypeSet::new(case.protos.clone()).unwrap();
    let (_, g) = loss_gradients(&case.raw, &encoder, &protos, variant).unwrap();
    let mut out = g.weight.as_slice().to_vec();
    out.extend(g.prototypes.iter().flatten());
    out
}

#[test]
fn losses_match_double_loop_reference() {
    for seed in 0..300 {
        let case = random_case(seed, 5, 4, 16, 16);
        let protos = PrototypeSet::new(case.protos.clone()).unwrap();
        let l_proto = instance_prototype_loss(&case.raw_projected(), &protos).unwrap();
        assert!((l_proto - naive_l_proto(&case.raw_projected(), &case.protos)).abs() < 1e-9);
        match (instance_instance_loss(&case.raw_projected()), naive_l_ins(&case.raw_projected())) {
            (Ok(a), Some(b)) => assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}"),
            (Err(_), None) => {}
            (a, b) => panic!("seed {seed}: {a:?} vs {b:?}"),
        }
    }
}

trait Projected {
    fn raw_projected(&self) -> Vec<Vec<Vec<f64>>>;
}

impl Projected for common::Case {
    fn raw_projected(&self) -> Vec<Vec<Vec<f64>>> {
        self.raw
            .iter()
            .map(|g| g.iter().map(|h| common::project(&self.w, h)).collect())
            .collect()
    }
}

#[test]
fn worked_loss_values() {
    let e1 = vec![1.0, 0.0];
    let neg = vec![-1.0, 0.0];
    let groups = vec![vec![e1.clone(), e1.clone()], vec![neg.clone(), neg.clone()]];
    let oracle = naive_l_ins(&groups).unwrap();
    let got = instance_instance_loss(&groups).unwrap();
    assert!((got - oracle).abs() < 1e-12);
    assert!((got - 0.2395448).abs() < 1e-5);

    let protos = PrototypeSet::new(vec![e1.clone(), neg.clone()]).unwrap();
    let one = vec![vec![e1.clone()], vec![]];
    let l = instance_prototype_loss(&one, &protos).unwrap();
    assert!((l - 0.126928).abs() < 1e-6);

    let same = PrototypeSet::new(vec![vec![0.3, 1.0], vec![0.3, 1.0]]).unwrap();
    let l = instance_prototype_loss(&groups, &same).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-12);
    let four = PrototypeSet::new(vec![vec![1.0, -2.0]; 4]).unwrap();
    let spread = vec![vec![e1.clone()], vec![neg.clone()], vec![vec![0.5, 0.5]], vec![]];
    assert!((instance_prototype_loss(&spread, &four).unwrap() - 4f64.ln()).abs() < 1e-12);

    let orth = PrototypeSet::new(vec![e1.clone(), vec![0.0, 1.0]]).unwrap();
    let l = instance_prototype_loss(&one, &orth).unwrap();
    assert!((l - 0.313262).abs() < 1e-6);
}

#[test]
fn instance_order_within_classes_does_not_matter() {
    let case = random_case(77, 4, 4, 6, 6);
    let projected = case.raw_projected();
    let mut shuffled = projected.clone();
    for g in &mut shuffled {
        g.reverse();
        let mid = g.len() / 2;
        g.rotate_left(mid);
    }
    let a = instance_instance_loss(&projected).unwrap_or(0.0);
    let b = instance_instance_loss(&shuffled).unwrap_or(0.0);
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn identical_instances_give_log_of_other_count() {
    let v = vec![0.3, -0.2, 0.9];
    let groups = vec![vec![v.clone(); 3], vec![v.clone(); 3]];
    let l = instance_instance_loss(&groups).unwrap();
    assert!((l - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn single_shot_has_no_instance_term() {
    let groups = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
    assert!(instance_instance_loss(&groups).is_err());
    let protos = PrototypeSet::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let b = total_loss(&groups, &protos, LossVariant::Full).unwrap();
    assert_eq!(b.l_ins, 0.0);
    assert_eq!(b.total, b.l_proto);
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..25 {
        let case = random_case(1000 + seed, 4, 4, 16, 8);
        for (variant, with_ins) in [(LossVariant::Full, true), (LossVariant::ProtoOnly, false)] {
            let a = analytic(&case, variant);
            let n = numeric_gradient(&case, with_ins, 1e-4);
            let err = max_rel_error(&a, &n, 1e-6);
            assert!(err < 1e-4, "seed {seed} {variant}: {err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_ignores_positive_rescaling(seed in 0u64..10_000, scales in prop::collection::vec(0.01f64..100.0, 40)) {
        let case = random_case(seed, 4, 4, 8, 8);
        let projected = case.raw_projected();
        let mut s = scales.iter().cycle();
        let scaled: Vec<Vec<Vec<f64>>> = projected
            .iter()
            .map(|g| g.iter().map(|v| { let a = s.next().unwrap(); v.iter().map(|x| x * a).collect() }).collect())
            .collect();
        let sprotos: Vec<Vec<f64>> = case.protos.iter().map(|c| { let a = s.next().unwrap(); c.iter().map(|x| x * a).collect() }).collect();
        let a = total_loss(&projected, &PrototypeSet::new(case.protos.clone()).unwrap(), LossVariant::Full).unwrap();
        let b = total_loss(&scaled, &PrototypeSet::new(sprotos).unwrap(), LossVariant::Full).unwrap();
        prop_assert!((a.total - b.total).abs() < 1e-9);
    }

    #[test]
    fn loss_matches_reference(seed in 0u64..1_000_000) {
        let case = random_case(seed, 5, 4, 16, 16);
        let projected = case.raw_projected();
        let protos = PrototypeSet::new(case.protos.clone()).unwrap();
        let b = total_loss(&projected, &protos, LossVariant::Full).unwrap();
        let want = naive_l_ins(&projected).unwrap_or(0.0) + naive_l_proto(&projected, &case.protos);
        prop_assert!((b.total - want).abs() < 1e-9);
        prop_assert!(b.l_proto >= 0.0 && b.l_ins >= 0.0);
    }
}

fn clusters(seed: u64) -> proto_verbalizer::EmbeddingDataset {
    synthetic_dataset(&ClusterSpec {
        n_classes: 4,
        dim: 16,
        train_per_class: 8,
        test_per_class: 0,
        separation: 4.0,
        seed,
        ..ClusterSpec::default()
    }).unwrap()
}

#[test]
fn training_reduces_loss_in_almost_every_run() {
    let mut decreased = 0;
    for seed in 0..100u64 {
        let ds = clusters(seed);
        let episode = sample_episode(&ds, 4, 8, seed).unwrap();
        let config = TrainConfig { seed, ..TrainConfig::default() };
        let r = train(&ds, &episode, &config).unwrap();
        assert_eq!(r.loss_trace.len(), 200);
        let first = r.loss_trace.first().unwrap().total;
        // Loss at the trained parameters, not the last pre-update record.
        let groups = episode.grouped_embeddings(&ds);
        let fin = total_loss(&r.encoder.project_groups(&groups).unwrap(), &r.prototypes, LossVariant::Full)
            .unwrap()
            .total;
        decreased += (fin < first) as usize;
    }
    assert!(decreased >= 95, "{decreased}/100");
}

#[test]
fn zero_steps_returns_initialisation() {
    let ds = clusters(1);
    let episode = sample_episode(&ds, 4, 2, 0).unwrap();
    let zero = train(&ds, &episode, &TrainConfig { steps: 0, ..TrainConfig::default() }).unwrap();
    assert!(zero.loss_trace.is_empty());
    let one = train(&ds, &episode, &TrainConfig { steps: 1, ..TrainConfig::default() }).unwrap();
    // The one-step run starts from the same point, so its only trace entry is
    // the loss at the zero-step parameters.
    let groups = episode.grouped_embeddings(&ds);
    let at_init = total_loss(&zero.encoder.project_groups(&groups).unwrap(), &zero.prototypes, LossVariant::Full)
        .unwrap();
    assert_eq!(one.loss_trace[0].total, at_init.total);
    assert_eq!(zero.encoder.proto_dim(), 128);
}

#[test]
fn instance_mean_prototypes_are_exact_class_means() {
    let ds = clusters(2);
    for k in [1, 3] {
        let episode = sample_episode(&ds, 4, k, 5).unwrap();
        let config = TrainConfig {
            loss_variant: LossVariant::InstanceMean,
            ..TrainConfig::default()
        };
        let r = train(&ds, &episode, &config).unwrap();
        assert!(r.loss_trace.is_empty());
        let projected = r.encoder.project_groups(&episode.grouped_embeddings(&ds)).unwrap();
        for (c, g) in projected.iter().enumerate() {
            for d in 0..r.prototypes.dim() {
                let mut sum = 0.0;
                for v in g {
                    sum += v[d];
                }
                assert_eq!(r.prototypes.get(c)[d], sum / g.len() as f64);
            }
        }
    }
}

#[test]
fn training_is_bit_deterministic() {
    let ds = clusters(3);
    let episode = sample_episode(&ds, 4, 4, 9).unwrap();
    let config = TrainConfig { seed: 4, steps: 50, ..TrainConfig::default() };
    assert_eq!(train(&ds, &episode, &config).unwrap(), train(&ds, &episode, &config).unwrap());
}

#[test]
fn relabelling_classes_permutes_prototypes() {
    let ds = clusters(4);
    let episode = sample_episode(&ds, 4, 4, 2).unwrap();
    let groups = episode.grouped_embeddings(&ds);
    let names = ds.header.class_names.clone();
    let perm = [2usize, 0, 3, 1];
    let pgroups: Vec<_> = perm.iter().map(|&p| groups[p].clone()).collect();
    let pnames: Vec<_> = perm.iter().map(|&p| names[p].clone()).collect();
    let config = TrainConfig { seed: 11, steps: 100, proto_dim: 16, ..TrainConfig::default() };
    let a = train_groups_named(&groups, &names, ds.dim(), &config).unwrap();
    let b = train_groups_named(&pgroups, &pnames, ds.dim(), &config).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        for (x, y) in b.prototypes.get(i).iter().zip(a.prototypes.get(p)) {
            assert!((x - y).abs() < 1e-9, "class {p}: {x} vs {y}");
        }
    }
    for (x, y) in a.encoder.weight().as_slice().iter().zip(b.encoder.weight().as_slice()) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let groups = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
    for bad in [
        TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
        TrainConfig { proto_dim: 0, ..TrainConfig::default() },
    ] {
        assert!(train_groups(&groups, 2, &bad).is_err());
    }
}
