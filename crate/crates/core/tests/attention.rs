use clickhere_core::keypoint::{KeypointClassVector, KeypointMap};
use clickhere_core::model::{
    fixed_attention_map, FixedAttention, Model, ModelConfig, ModelInput, ModelVariant, WeightMap,
};
use clickhere_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(rng: &mut ChaCha8Rng, s: usize) -> Tensor {
    Tensor::new(&[3, s, s], (0..3 * s * s).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn model(config: ModelConfig, seed: u64) -> Model {
    Model::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_click(m: &Model, rng: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    let c = &m.config;
    let obj = rng.random_range(0..c.objects.len());
    let kp = rng.random_range(0..c.objects[obj].keypoints.len());
    (rng.random_range(0..c.image_size), rng.random_range(0..c.image_size), kp, obj)
}

fn weight_map(m: &Model, img: &Tensor, x: usize, y: usize, kp: usize, obj: usize) -> WeightMap {
    m.predict_click(img, x, y, kp, obj).unwrap().weight_map.unwrap()
}

#[test]
fn weight_maps_are_on_the_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut m = model(ModelConfig::tiny(), 2);
    for i in 0..10_000 {
        if i % 100 == 0 {
            m = model(ModelConfig::tiny(), 1000 + i);
        }
        let img = image(&mut rng, m.config.image_size);
        let (x, y, kp, obj) = random_click(&m, &mut rng);
        let w = weight_map(&m, &img, x, y, kp, obj);
        let (_, h, ww) = m.config.attention_grid();
        assert_eq!((w.h, w.w), (h, ww));
        assert!(w.values.iter().all(|v| *v >= 0.0));
        let sum: f64 = w.values.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-10, "{sum}");
    }
}

#[test]
fn blank_inputs_give_exactly_uniform_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for variant in [ModelVariant::ChFull, ModelVariant::ChMapOnly, ModelVariant::ChClassOnly] {
        for seed in 0..20 {
            let m = model(ModelConfig::tiny().with_variant(variant), seed);
            let c = &m.config;
            let img = image(&mut rng, c.image_size);
            let map = KeypointMap::blank(c.image_size, c.map_kind);
            let class = KeypointClassVector::blank(c.total_keypoint_classes());
            let p = m
                .predict(&ModelInput {
                    image: &img,
                    map: &map,
                    class: &class,
                    object: 0,
                })
                .unwrap();
            let w = p.weight_map.unwrap();
            let (_, h, ww) = c.attention_grid();
            assert_eq!(w, fixed_attention_map(FixedAttention::Uniform, h, ww));
        }
    }
}

#[test]
fn learned_attention_ignores_the_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = model(ModelConfig::tiny(), 5);
    for _ in 0..50 {
        let (x, y, kp, obj) = random_click(&m, &mut rng);
        let a = weight_map(&m, &image(&mut rng, 12), x, y, kp, obj);
        let b = weight_map(&m, &image(&mut rng, 12), x, y, kp, obj);
        assert_eq!(a, b);
    }
}

#[test]
fn attention_follows_the_click() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = model(ModelConfig::default(), 7);
    let img = image(&mut rng, m.config.image_size);
    let a = weight_map(&m, &img, 5, 5, 0, 0);
    let b = weight_map(&m, &img, 50, 40, 0, 0);
    let c = weight_map(&m, &img, 5, 5, 1, 0);
    assert_ne!(a, b);
    assert_ne!(a, c);
}

#[test]
fn image_only_ignores_the_keypoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m = model(ModelConfig::tiny().with_variant(ModelVariant::ImageOnly), 9);
    for _ in 0..50 {
        let img = image(&mut rng, 12);
        let (x, y, kp, obj) = random_click(&m, &mut rng);
        let a = m.predict_click(&img, x, y, kp, obj).unwrap();
        let (x2, y2) = (rng.random_range(0..12), rng.random_range(0..12));
        let kp2 = rng.random_range(0..m.config.objects[obj].keypoints.len());
        let b = m.predict_click(&img, x2, y2, kp2, obj).unwrap();
        assert!(a.weight_map.is_none());
        assert_eq!(a, b);
    }
}

#[test]
fn fixed_variants_report_their_fixed_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for (variant, kind) in [
        (ModelVariant::FixedUniform, FixedAttention::Uniform),
        (ModelVariant::FixedGaussian, FixedAttention::Gaussian),
    ] {
        let m = model(ModelConfig::tiny().with_variant(variant), 11);
        let (_, h, w) = m.config.attention_grid();
        let (x, y, kp, obj) = random_click(&m, &mut rng);
        let got = weight_map(&m, &image(&mut rng, 12), x, y, kp, obj);
        assert_eq!(got, fixed_attention_map(kind, h, w));
        assert!(got.is_simplex(1e-12));
    }
}

#[test]
fn gaussian_attention_peaks_at_the_center() {
    let w = fixed_attention_map(FixedAttention::Gaussian, 13, 13);
    let peak = w.at(6, 6);
    assert!(w.values.iter().all(|v| *v <= peak));
    assert!((w.at(0, 0) - w.at(12, 12)).abs() < 1e-15);
    assert!(w.is_simplex(1e-12));
}

#[test]
fn parameter_counts_are_ordered() {
    let count = |v| model(ModelConfig::default().with_variant(v), 0).parameter_count();
    let full = count(ModelVariant::ChFull);
    let map_only = count(ModelVariant::ChMapOnly);
    let class_only = count(ModelVariant::ChClassOnly);
    let image_only = count(ModelVariant::ImageOnly);
    assert!(full > map_only && map_only > image_only);
    assert!(full > class_only && class_only > image_only);
    assert_eq!(count(ModelVariant::FixedUniform), count(ModelVariant::FixedGaussian));
}
