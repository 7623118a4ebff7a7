mod common;

use common::*;
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use tactile_align::data::{generate_synthetic, Domain, GenConfig};
use tactile_align::encoder::{EncoderConfig, TactileEncoder};
use tactile_align::eval::emd::{emd_exact, emd_sinkhorn};
use tactile_align::eval::linear_probe;
use tactile_align::flow::{transport, transport_batch_with, FlowConfig, VelocityField};
use tactile_align::nn::{Activation, DenseNet, Layer};
use tactile_align::pipeline::{prepare, PipelineConfig};

fn cloud(seed: u64, n: usize, d: usize) -> Array2<f64> {
    random_matrix(n, d, 2.0, &mut rng(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_emd_is_a_metric(seed in any::<u64>(), n in 1usize..12, d in 1usize..5) {
        let (a, b, c) = (cloud(seed, n, d), cloud(seed ^ 1, n, d), cloud(seed ^ 2, n, d));
        let ab = emd_exact(a.view(), b.view()).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(emd_exact(a.view(), a.view()).unwrap(), 0.0);
        prop_assert!((ab - emd_exact(b.view(), a.view()).unwrap()).abs() < 1e-12);
        let ac = emd_exact(a.view(), c.view()).unwrap();
        let cb = emd_exact(c.view(), b.view()).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn exact_emd_follows_rigid_shifts_and_scaling(seed in any::<u64>(), n in 1usize..10, s in 0.1f64..5.0) {
        let (a, b) = (cloud(seed, n, 3), cloud(seed ^ 7, n, 3));
        let ab = emd_exact(a.view(), b.view()).unwrap();
        let shift = Array1::from(vec![1.5, -3.0, 0.25]);
        let moved = emd_exact((&a + &shift).view(), (&b + &shift).view()).unwrap();
        prop_assert!((ab - moved).abs() < 1e-9);
        let scaled = emd_exact((&a * s).view(), (&b * s).view()).unwrap();
        prop_assert!((scaled - s * ab).abs() < 1e-9 * (1.0 + s * ab));
        // Permuting a point set does not change the distance.
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(seed));
        let shuffled = a.select(Axis(0), &order);
        prop_assert!((emd_exact(shuffled.view(), b.view()).unwrap() - ab).abs() < 1e-9);
    }

    #[test]
    fn entropic_cost_never_beats_the_exact_optimum(seed in any::<u64>(), n in 2usize..10) {
        let (a, b) = (cloud(seed, n, 2), cloud(seed ^ 3, n, 2));
        let exact = emd_exact(a.view(), b.view()).unwrap();
        let approx = emd_sinkhorn(a.view(), b.view(), 0.05, 300).unwrap();
        prop_assert!(approx >= exact - 1e-9);
    }
}

fn constant_field(c: &[f64]) -> VelocityField {
    let d = c.len();
    let net = DenseNet::from_layers(
        vec![Layer {
            weight: Array2::zeros((d, d + 1)),
            bias: Array1::from(c.to_vec()),
            activation: Activation::Identity,
        }],
        0,
    )
    .unwrap();
    VelocityField::from_net(net, 10).unwrap()
}

#[test]
fn constant_field_moves_by_its_velocity_for_any_step_count() {
    let vf = constant_field(&[0.5, -2.0]);
    for k in [1, 3, 17, 100] {
        let x = transport(&vf, &[1.0, 1.0], k).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-12 && (x[1] + 1.0).abs() < 1e-12, "{k}: {x:?}");
    }
    let zero = constant_field(&[0.0, 0.0]);
    let pts = cloud(3, 20, 2);
    assert_eq!(transport_batch_with(&zero, pts.view(), 25).unwrap(), pts);
}

#[test]
fn batched_transport_matches_single_points() {
    let mut vf = VelocityField::new(4, &FlowConfig { width: 8, depth: 2, ..FlowConfig::default() }, String::new()).unwrap();
    randomize(&mut vf.net, &mut rng(8));
    let pts = cloud(5, 9, 4);
    let batch = transport_batch_with(&vf, pts.view(), 13).unwrap();
    for (i, row) in pts.rows().into_iter().enumerate() {
        let single = transport(&vf, row.as_slice().unwrap(), 13).unwrap();
        for j in 0..4 {
            assert!((single[j] - batch[[i, j]]).abs() < 1e-12);
        }
    }
}

#[test]
fn trajectory_encoding_has_one_latent_per_step_and_finger() {
    let gen = GenConfig {
        fingers: 4,
        human_per_task: 1,
        robot_per_task: 1,
        human_play: 0,
        robot_play: 0,
        length_min: 50,
        length_max: 50,
        ..GenConfig::default()
    };
    let ds = generate_synthetic(&gen, 2).unwrap();
    let cfg = EncoderConfig { latent_dim: 12, ..EncoderConfig::default() };
    for domain in [Domain::Human, Domain::Robot] {
        let enc = TactileEncoder::new(domain, *ds.spec(domain), &cfg).unwrap();
        let t = ds.domain(domain).next().unwrap();
        let z = enc.encode_trajectory(t).unwrap();
        assert_eq!(z.len(), 50);
        assert!(z.iter().all(|s| s.len() == 4 && s.iter().all(|l| l.len() == 12)));
        let wrong = ds.domain(match domain { Domain::Human => Domain::Robot, Domain::Robot => Domain::Human }).next().unwrap();
        assert!(enc.encode_trajectory(wrong).is_err());
    }
}

/// Small desk-style dataset with trained encoders, shared by the probes.
fn trained() -> tactile_align::pipeline::Prepared {
    let mut cfg = PipelineConfig::desk();
    cfg.data.generator.human_per_task = 8;
    cfg.data.generator.robot_per_task = 8;
    cfg.encoder.epochs = 40;
    let ds = generate_synthetic(&cfg.data.generator, 17).unwrap();
    prepare(&cfg, ds).unwrap()
}

#[test]
fn latents_are_stable_under_small_sensor_noise() {
    let prep = trained();
    let enc = &prep.robot_encoder;
    let frames: Vec<_> = prep
        .dataset
        .domain(Domain::Robot)
        .flat_map(|t| t.steps.iter().flat_map(|s| &s.frames))
        .step_by(7)
        .collect();
    let mut noise_rng = rng(3);
    let mut moved = 0.0;
    for f in &frames {
        let mut g = (*f).clone();
        for v in &mut g.raw {
            *v += noise_rng.random_range(-1.0..1.0) * 0.01 * enc.input_scale;
        }
        let (a, b) = (enc.encode(f).unwrap(), enc.encode(&g).unwrap());
        moved += norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
    }
    moved /= frames.len() as f64;
    let lat: Vec<Vec<f64>> = frames.iter().map(|f| enc.encode(f).unwrap()).collect();
    let mut spread = 0.0;
    let mut count = 0.0;
    for i in 0..lat.len() {
        for j in (i + 1)..lat.len() {
            spread += norm(&lat[i].iter().zip(&lat[j]).map(|(x, y)| x - y).collect::<Vec<_>>());
            count += 1.0;
        }
    }
    spread /= count;
    assert!(moved < 0.1 * spread, "noise moves latents {moved:.4}, typical distance {spread:.4}");
}

#[test]
fn latents_linearly_encode_contact_force() {
    let prep = trained();
    let mut rows = Vec::new();
    let mut forces = Vec::new();
    for t in prep.dataset.domain(Domain::Robot) {
        let gt = t.ground_truth.as_ref().unwrap();
        for (s, step) in gt.iter().enumerate() {
            for (k, g) in step.iter().enumerate() {
                if g.iter().any(|v| *v != 0.0) {
                    rows.push(prep.latents[&t.id][s][k].clone());
                    forces.push(*g);
                }
            }
        }
    }
    let n = rows.len();
    let d = rows[0].len();
    let x = Array2::from_shape_fn((n, d), |(i, j)| rows[i][j]);
    let y = Array2::from_shape_fn((n, 3), |(i, j)| forces[i][j]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(12));
    let (train, test) = order.split_at(n * 4 / 5);
    let fit = |y: &Array2<f64>| {
        linear_probe(
            x.select(Axis(0), train).view(),
            y.select(Axis(0), train).view(),
            x.select(Axis(0), test).view(),
            y.select(Axis(0), test).view(),
        )
        .unwrap()
    };
    let real = fit(&y);
    assert!(real.r2_test >= 0.9, "probe R² {:.3}", real.r2_test);
    let mut shuffled_rows: Vec<usize> = (0..n).collect();
    shuffled_rows.shuffle(&mut rng(13));
    let shuffled = y.select(Axis(0), &shuffled_rows);
    let control = fit(&shuffled);
    assert!(control.r2_test <= 0.1, "shuffled-label R² {:.3}", control.r2_test);
}
