mod common;

use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use pvanet::analyze::{infer_shapes, receptive_field_distribution};
use pvanet::detect::{decode, encode, iou, nms, BBox, MAX_LOG_SCALE};
use pvanet::graph::{build_mini_pvanet, execute, LayerKind, LayerSpec, MiniPvanetConfig, WeightStore};
use pvanet::sched::{Event, PlateauConfig, PlateauScheduler};
use pvanet::tensor::{ConvSpec, PoolSpec};
use pvanet::{Shape, Tensor};

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..200.0f64, 0.0..200.0f64, 1.0..100.0f64, 1.0..100.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn iou_is_bounded_and_symmetric(a in bbox(), b in bbox()) {
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_round_trip(a in bbox(), t in bbox()) {
        let d = encode(&a, &t);
        let back = decode(&a, d).unwrap();
        // Centres always round-trip; sizes do up to the log-scale cap.
        prop_assert!((back.center().0 - t.center().0).abs() < 1e-9);
        prop_assert!((back.center().1 - t.center().1).abs() < 1e-9);
        let (w, h) = (t.width().min(a.width() * MAX_LOG_SCALE.exp()), t.height().min(a.height() * MAX_LOG_SCALE.exp()));
        prop_assert!((back.width() - w).abs() < 1e-9 * w.max(1.0), "{back:?} vs {t:?}");
        prop_assert!((back.height() - h).abs() < 1e-9 * h.max(1.0), "{back:?} vs {t:?}");
    }

    #[test]
    fn nms_matches_definition(
        boxes in proptest::collection::vec(bbox(), 0..40),
        levels in proptest::collection::vec(0u8..8, 40),
        thr in 0.1..0.9f64,
    ) {
        let scores: Vec<f64> = levels[..boxes.len()].iter().map(|&l| l as f64 / 8.0).collect();
        let kept = nms(&boxes, &scores, thr);
        prop_assert_eq!(&kept, &common::nms_reference(&boxes, &scores, thr));
        // Survivors overlap each other by at most the threshold, in score order.
        for (p, &i) in kept.iter().enumerate() {
            for &j in &kept[p + 1..] {
                prop_assert!(iou(&boxes[i], &boxes[j]) <= thr);
                prop_assert!(scores[i] >= scores[j]);
            }
        }
        // Every suppressed box overlaps some higher-or-equal scored survivor.
        for i in (0..boxes.len()).filter(|i| !kept.contains(i)) {
            prop_assert!(kept.iter().any(|&k| scores[k] >= scores[i] && iou(&boxes[k], &boxes[i]) > thr));
        }
    }

    #[test]
    fn plateau_lr_is_a_power_of_the_factor(
        losses in proptest::collection::vec(0.0..10.0f64, 1..400),
        window in 1usize..20,
        factor in 0.1..0.9f64,
    ) {
        let cfg = PlateauConfig { initial_lr: 0.1, decay_factor: factor, window, ..PlateauConfig::default() };
        let mut s = PlateauScheduler::new(cfg.clone());
        let mut prev = cfg.initial_lr;
        let mut decays = 0;
        for &l in &losses {
            let (lr, ev) = s.observe(l).unwrap();
            prop_assert!(lr <= prev);
            if lr < prev {
                decays += 1;
                prop_assert_ne!(ev, Event::None);
            }
            let want = cfg.initial_lr * factor.powi(s.decays() as i32);
            prop_assert!((lr - want).abs() <= 1e-15 * want.max(1.0));
            prev = lr;
            if ev == Event::Terminated {
                prop_assert!(s.is_terminated());
                prop_assert!(lr < cfg.min_lr);
            }
        }
        prop_assert_eq!(decays, s.decays());
        prop_assert!(s.decays() <= cfg.max_decays());
        // A decay needs `window` non-improving observations after warmup.
        let budget = losses.len().saturating_sub(cfg.warmup()) / window;
        prop_assert!(s.decays() <= budget);
    }

    #[test]
    fn constant_loss_decays_every_window(window in 1usize..10) {
        let cfg = PlateauConfig { window, ..PlateauConfig::default() };
        let mut s = PlateauScheduler::new(cfg.clone());
        let mut events = Vec::new();
        for i in 0..cfg.warmup() + 3 * window {
            let (_, ev) = s.observe(1.0).unwrap();
            if ev != Event::None {
                events.push(i + 1 - cfg.warmup());
            }
        }
        prop_assert_eq!(events, vec![window, 2 * window, 3 * window]);
    }
}

#[derive(Debug, Clone)]
enum Step {
    Conv { kernel: usize, stride: usize },
    Pool,
    Branches(Vec<(usize, usize)>),
    Residual(usize),
}

fn step() -> impl Strategy<Value = Step> {
    let k = prop_oneof![Just(1usize), Just(3), Just(5)];
    prop_oneof![
        (k.clone(), 1usize..=2).prop_map(|(kernel, stride)| Step::Conv { kernel, stride }),
        Just(Step::Pool),
        proptest::collection::vec((k.clone(), 1usize..5), 2..4).prop_map(Step::Branches),
        k.prop_map(Step::Residual),
    ]
}

/// Sequential network over `steps`, returning it with the name of its last layer.
fn chain(steps: &[Step]) -> (pvanet::graph::NetworkSpec, String) {
    let mut layers = vec![common::input("x", 4)];
    let mut cur = "x".to_string();
    let mut ch = 4;
    for (i, s) in steps.iter().enumerate() {
        let name = format!("s{i}");
        match s {
            Step::Conv { kernel, stride } => {
                layers.push(LayerSpec::new(
                    &name,
                    LayerKind::Conv(ConvSpec::new(ch, 4, *kernel, *stride, kernel / 2)),
                    &[&cur],
                ));
                ch = 4;
            }
            Step::Pool => layers.push(LayerSpec::new(
                &name,
                LayerKind::MaxPool(PoolSpec {
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                    ceil_mode: false,
                }),
                &[&cur],
            )),
            Step::Branches(b) => {
                let names: Vec<String> = (0..b.len()).map(|j| format!("{name}_b{j}")).collect();
                for (n, &(k, c)) in names.iter().zip(b) {
                    layers.push(LayerSpec::new(n, LayerKind::Conv(ConvSpec::new(ch, c, k, 1, k / 2)), &[&cur]));
                }
                let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                layers.push(LayerSpec::new(&name, LayerKind::Concat, &refs));
                ch = b.iter().map(|(_, c)| c).sum();
            }
            Step::Residual(k) => {
                let conv = format!("{name}_conv");
                layers.push(LayerSpec::new(&conv, LayerKind::Conv(ConvSpec::new(ch, ch, *k, 1, k / 2)), &[&cur]));
                layers.push(LayerSpec::new(&name, LayerKind::EltwiseAdd, &[&conv, &cur]));
            }
        }
        cur = name;
    }
    (common::net("random", layers, &[&cur]), cur)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn receptive_fields_match_path_enumeration(steps in proptest::collection::vec(step(), 1..6)) {
        let (net, out) = chain(&steps);
        let got = receptive_field_distribution(&net, &out).unwrap();
        prop_assert_eq!(&got.atoms, &common::rf_by_paths(&net, &out));
        prop_assert_eq!(*got.atoms.keys().last().unwrap(), got.max_rf);
    }

    #[test]
    fn static_shapes_match_execution(
        steps in proptest::collection::vec(step(), 1..5),
        h in 5usize..20,
        w in 5usize..20,
        seed in 0u64..1000,
    ) {
        let (net, _) = chain(&steps);
        let shapes = infer_shapes(&net, &BTreeMap::from([("x".to_string(), Shape::new(1, 4, h, w))])).unwrap();
        let weights = WeightStore::<f32>::init(&net, seed);
        let feeds = HashMap::from([("x".to_string(), Tensor::from_fn(Shape::new(1, 4, h, w), |_, c, y, x| (c + y * x) as f32 * 0.01))]);
        let got = execute(&net, &weights, &feeds).unwrap();
        for (name, t) in &got {
            prop_assert_eq!(t.shape(), shapes[name]);
        }
    }
}

#[test]
fn mini_pvanet_static_shapes_match_execution() {
    for size in [16, 32] {
        let net = build_mini_pvanet(&MiniPvanetConfig {
            input_size: size,
            num_classes: 3,
        });
        let input = Shape::new(2, 3, size, size);
        let shapes = infer_shapes(&net, &BTreeMap::from([("data".to_string(), input)])).unwrap();
        let weights = WeightStore::<f32>::init(&net, 3);
        let feeds = HashMap::from([("data".to_string(), Tensor::from_fn(input, |n, c, y, x| ((n + c + y + 2 * x) % 7) as f32 - 3.0))]);
        let targets: Vec<String> = net.layers.iter().map(|l| l.name.clone()).collect();
        let refs: Vec<&str> = targets.iter().map(String::as_str).collect();
        let got = pvanet::graph::execute_targets(&net, &weights, &feeds, &refs).unwrap();
        assert_eq!(got.len(), net.layers.len());
        for (name, t) in &got {
            assert_eq!(t.shape(), shapes[name], "{name} at {size}");
        }
    }
}
