use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use vidcf_core::codec::{Codec, CodecArch, ConvCodec, IdentityCodec};
use vidcf_core::data::{Label, Task};
use vidcf_core::denoiser::{ConditionSpec, Denoiser, DenoiserArch};
use vidcf_core::diffusion::{
    q_sample, sample_unguided, NoisePredictor, NoiseSchedule, OracleDenoiser, ScheduleConfig,
    Spacing,
};
use vidcf_core::error::Result;
use vidcf_core::guidance::{
    apply_guidance, generate_counterfactual, raw_guidance_grad, select_target,
    smoothgrad_guidance, GuidanceConfig, OffsetSign, TargetSelect, Variant,
};
use vidcf_core::rng::{gaussian_sample, SeedSpec};
use vidcf_core::target::{argmax, TargetArch, TargetModel, ToyVideoNet};
use vidcf_core::tensor::{Dims4, LatentTensor, Tensor, VideoTensor};

struct CountingDenoiser<'a> {
    inner: &'a dyn NoisePredictor,
    calls: AtomicUsize,
}

impl NoisePredictor for CountingDenoiser<'_> {
    fn predict_noise(&self, z_t: &LatentTensor, cond: &Label, t: usize) -> Result<LatentTensor> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict_noise(z_t, cond, t)
    }
    fn codec_hash(&self) -> Option<String> {
        self.inner.codec_hash()
    }
    fn schedule_hash(&self) -> String {
        self.inner.schedule_hash()
    }
    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }
}

struct CountingTarget<'a> {
    inner: &'a ToyVideoNet,
    grads: AtomicUsize,
}

impl TargetModel for CountingTarget<'_> {
    fn task(&self) -> Task {
        self.inner.task()
    }
    fn predict(&self, video: &Tensor) -> Result<Vec<f32>> {
        self.inner.predict(video)
    }
    fn layers(&self) -> Vec<String> {
        self.inner.layers()
    }
    fn features(&self, video: &Tensor, layer: &str) -> Result<Tensor> {
        self.inner.features(video, layer)
    }
    fn input_pullback(&self, video: &Tensor, cotangent: &[f32]) -> Result<Tensor> {
        self.grads.fetch_add(1, Ordering::Relaxed);
        self.inner.input_pullback(video, cotangent)
    }
    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }
}

struct Setup {
    schedule: NoiseSchedule,
    codec: IdentityCodec,
    denoiser: Denoiser,
    target: ToyVideoNet,
    x_f: VideoTensor,
    y: Label,
}

fn setup(seed: u64) -> Setup {
    let d = Dims4::new(3, 8, 8, 2);
    let schedule = ScheduleConfig::default().build().unwrap();
    let denoiser = Denoiser::new(
        DenoiserArch::new(2, ConditionSpec::Class { classes: 3 }),
        schedule.clone(),
        IdentityCodec.content_hash(),
        &SeedSpec::new(seed, "den"),
    );
    let target = ToyVideoNet::new(TargetArch::classifier(d, 3), &SeedSpec::new(seed, "target"));
    let g = gaussian_sample(&SeedSpec::new(seed, "x"), &d.to_shape()).unwrap();
    let x_f = VideoTensor::new(d, g.data().iter().map(|v| (0.5 + 0.2 * v).clamp(0.0, 1.0)).collect()).unwrap();
    let pred = target.predict(&x_f.to_tensor()).unwrap();
    let y = Label::Class((argmax(&pred).unwrap() + 1) % 3);
    Setup {
        schedule,
        codec: IdentityCodec,
        denoiser,
        target,
        x_f,
        y,
    }
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn generation_makes_t_denoiser_calls_and_n_t_target_gradients() {
    let s = setup(1);
    for (variant, n) in [(Variant::RG, 1), (Variant::SG, 4)] {
        let mut cfg = GuidanceConfig::classification_preset();
        cfg.variant = variant;
        cfg.n = n;
        cfg.steps = 3;
        let den = CountingDenoiser {
            inner: &s.denoiser,
            calls: AtomicUsize::new(0),
        };
        let target = CountingTarget {
            inner: &s.target,
            grads: AtomicUsize::new(0),
        };
        generate_counterfactual(&s.x_f, &s.y, &cfg, &s.codec, &s.schedule, &den, &target).unwrap();
        assert_eq!(den.calls.load(Ordering::Relaxed), 3);
        assert_eq!(target.grads.load(Ordering::Relaxed), 3 * cfg.smoothing().0, "{variant}");
    }
}

#[test]
fn generation_is_deterministic() {
    let s = setup(2);
    let cfg = GuidanceConfig::classification_preset();
    let a = generate_counterfactual(&s.x_f, &s.y, &cfg, &s.codec, &s.schedule, &s.denoiser, &s.target).unwrap();
    let b = generate_counterfactual(&s.x_f, &s.y, &cfg, &s.codec, &s.schedule, &s.denoiser, &s.target).unwrap();
    assert_eq!(bits(a.x_cf.data()), bits(b.x_cf.data()));
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.z_big_t, b.z_big_t);
}

#[test]
fn factual_class_as_target_is_rejected() {
    let s = setup(3);
    let pred = s.target.predict(&s.x_f.to_tensor()).unwrap();
    let same = Label::Class(argmax(&pred).unwrap());
    let cfg = GuidanceConfig::classification_preset();
    assert!(generate_counterfactual(&s.x_f, &same, &cfg, &s.codec, &s.schedule, &s.denoiser, &s.target).is_err());
}

#[test]
fn guidance_gradient_scales_and_degenerates() {
    let s = setup(4);
    let v = s.codec.encode(&s.x_f).unwrap();
    let (zero, _) = raw_guidance_grad(&v, &s.codec, &s.target, &s.y, 0.0).unwrap();
    assert!(zero.data().iter().all(|&g| g == 0.0));
    let (g1, _) = raw_guidance_grad(&v, &s.codec, &s.target, &s.y, 1.5).unwrap();
    let (g2, _) = raw_guidance_grad(&v, &s.codec, &s.target, &s.y, 3.0).unwrap();
    for (a, b) in g1.data().iter().zip(g2.data()) {
        assert!((2.0 * a - b).abs() <= 1e-6 * b.abs().max(1.0));
    }
    for n in [1, 3, 7] {
        let (sg, _) = smoothgrad_guidance(&v, &s.codec, &s.target, &s.y, 1.5, n, 0.0, &SeedSpec::new(n as u64, "sg"))
            .unwrap();
        for (a, b) in sg.data().iter().zip(g1.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-3), "N={n}");
        }
    }
}

#[test]
fn guidance_coefficient_matches_an_independent_product() {
    let s = ScheduleConfig::default().build().unwrap();
    let mut a = 1.0f64;
    for k in 1..=1000 {
        a *= 1.0 - (1e-4 + (0.02 - 1e-4) * (k - 1) as f64 / 999.0);
    }
    let d = Dims4::new(1, 1, 1, 1);
    let z = LatentTensor::new(d, vec![0.0]).unwrap();
    let g = LatentTensor::new(d, vec![1.0]).unwrap();
    let out = apply_guidance(&z, &g, 1000, &s).unwrap();
    let want = ((1.0 - a) / a).sqrt();
    assert!((-out.data()[0] as f64 - want).abs() <= 1e-5 * want, "{} vs {want}", -out.data()[0]);
}

#[test]
fn non_predicted_classes_are_drawn_uniformly() {
    let pred = [0.1f32, 0.2, 3.0, 0.0, -1.0, 0.5, 0.3];
    let mut counts = [0usize; 7];
    let draws = 10_000;
    for i in 0..draws {
        let y = select_target(&pred, Task::Classification, &TargetSelect::default(), &SeedSpec::new(i, "sel")).unwrap();
        counts[y.class().unwrap()] += 1;
    }
    assert_eq!(counts[2], 0);
    let p = 1.0 / 6.0;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for (c, &n) in counts.iter().enumerate().filter(|(c, _)| *c != 2) {
        assert!((n as f64 - draws as f64 * p).abs() <= 3.0 * sd, "class {c}: {n}");
    }
    let two = select_target(&[0.9, 0.1], Task::Classification, &TargetSelect::default(), &SeedSpec::new(0, "s")).unwrap();
    assert_eq!(two, Label::Class(1));
    let down = TargetSelect {
        sign: OffsetSign::Minus,
        ..TargetSelect::default()
    };
    let y = select_target(&[55.0], Task::Regression, &down, &SeedSpec::new(0, "s")).unwrap();
    assert_eq!(y, Label::Value(35.0));
}

fn codecs() -> Vec<Box<dyn Codec>> {
    vec![
        Box::new(IdentityCodec),
        Box::new(ConvCodec::new(CodecArch { channels: 2, ..CodecArch::default() }, &SeedSpec::new(9, "codec"))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_sampling_recovers_the_clean_latent_under_both_codecs(
        seed in 0u64..1000,
        steps in 1usize..16,
        stride in 1usize..40,
    ) {
        let schedule = ScheduleConfig::default().build().unwrap();
        let d = Dims4::new(2, 8, 8, 2);
        let g = gaussian_sample(&SeedSpec::new(seed, "x"), &d.to_shape()).unwrap();
        let x = VideoTensor::new(d, g.data().iter().map(|v| (0.5 + 0.2 * v).clamp(0.0, 1.0)).collect()).unwrap();
        for codec in codecs() {
            let z0 = codec.encode(&x).unwrap();
            let oracle = OracleDenoiser { z0: z0.clone(), schedule: schedule.clone() };
            let map = Spacing::Stride(stride).build(&schedule, steps).unwrap();
            let eps = LatentTensor::from_tensor(gaussian_sample(&SeedSpec::new(seed, "eps"), &z0.dims().to_shape()).unwrap()).unwrap();
            let z_t = q_sample(&z0, map.depth(), &eps, &schedule).unwrap();
            let (out, trace) = sample_unguided(&z_t, &Label::Class(0), &map, &schedule, &oracle).unwrap();
            prop_assert_eq!(trace.len(), steps);
            prop_assert!(out.max_abs_diff(&z0) <= 1e-5);
            for st in &trace {
                prop_assert!(st.v.max_abs_diff(&z0) <= 1e-5);
            }
        }
    }

    #[test]
    fn rg_and_degenerate_sg_agree_bitwise_under_both_codecs(seed in 0u64..1000, lambda in 0.0f32..100.0) {
        let d = Dims4::new(2, 8, 8, 2);
        let target = ToyVideoNet::new(TargetArch::regressor(d, (10.0, 90.0)), &SeedSpec::new(seed, "t"));
        let y = Label::Value(40.0);
        for codec in codecs() {
            let ld = codec.latent_dims(d).unwrap();
            let v = LatentTensor::from_tensor(gaussian_sample(&SeedSpec::new(seed, "v"), &ld.to_shape()).unwrap()).unwrap();
            let (rg, _) = raw_guidance_grad(&v, codec.as_ref(), &target, &y, lambda).unwrap();
            let (sg, _) = smoothgrad_guidance(&v, codec.as_ref(), &target, &y, lambda, 1, 0.0, &SeedSpec::new(seed, "s")).unwrap();
            prop_assert_eq!(bits(rg.data()), bits(sg.data()));
        }
    }
}
