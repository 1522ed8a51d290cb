use proptest::prelude::*;
use retinev::eval::{psnr, ssim, PSNR_CAP};
use retinev::events::{simulate_fpe_map, FpeMap, SensorConstants, ThresholdField, DEFAULT_EPS_E, MISSING};
use retinev::lldm::{degrade_temporal, DegradationConfig};
use retinev::losses::{recon_loss, reflectance_loss, total_loss, Extractor, LossWeights, DEFAULT_EXTRACTOR_SEED};
use retinev::model::{Model, ModelConfig};
use retinev::raster::{gamma_decode, gamma_encode, LinearRaster, Raster};
use retinev::retinex::{reconstruct, ClampMode, ReflectanceMap};
use retinev::rng::{stream, Domain};
use retinev::t2i::{beta_normalize, IlluminationEstimate};
use retinev::train::{cosine_lr, Checkpoint};
use retinev_autograd::{channel_attention_maps, Graph, Scope, Tensor};

fn raster(w: usize, h: usize, c: usize) -> impl Strategy<Value = Raster> {
    prop::collection::vec(0.0f32..=1.0, w * h * c).prop_map(move |d| Raster::new(w, h, c, d).unwrap())
}

fn sized_raster(c: usize) -> impl Strategy<Value = Raster> {
    (1usize..12, 1usize..12).prop_flat_map(move |(w, h)| raster(w, h, c))
}

fn fpe_map() -> impl Strategy<Value = FpeMap> {
    (1usize..10, 1usize..10)
        .prop_flat_map(|(w, h)| {
            prop::collection::vec(prop_oneof![9 => (1.0f64..1e4).prop_map(Some), 1 => Just(None)], w * h)
                .prop_map(move |t| (w, h, t))
        })
        .prop_filter_map("needs a timestamp", |(w, h, t)| {
            let t: Vec<f64> = t.into_iter().map(|v| v.unwrap_or(MISSING)).collect();
            t.iter().any(|v| !v.is_nan()).then(|| FpeMap::new(w, h, t).unwrap())
        })
}

fn tiny_model(seed: u64) -> Model<f32> {
    let cfg = ModelConfig {
        decom_width: 4,
        decom_layers: 2,
        denoiser_base: 2,
        mlp_hidden: 4,
        ire_width: 4,
        ire_blocks: 1,
        ire_heads: 2,
        ..ModelConfig::default()
    };
    Model::init(cfg, seed).unwrap()
}

proptest! {
    #[test]
    fn gamma_roundtrip_and_order(r in sized_raster(3), g in 1.0f64..=3.0) {
        let enc = gamma_encode(&LinearRaster(r.clone()), g).unwrap();
        let back = gamma_decode(&enc);
        for (a, b) in back.0.data().iter().zip(r.data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
        let (src, out) = (r.data(), enc.raster().data());
        for a in 0..src.len() {
            for b in 0..src.len() {
                if src[a] < src[b] {
                    prop_assert!(out[a] <= out[b]);
                }
            }
        }
    }

    #[test]
    fn beta_is_monotone_and_keeps_ranks(m in fpe_map(), b1 in 0.0f64..100.0, db in 0.01f64..100.0) {
        let b2 = b1 + db;
        let (n1, n2) = (beta_normalize(&m, b1).unwrap(), beta_normalize(&m, b2).unwrap());
        let t_max = m.max().unwrap();
        let t = m.values();
        for p in 0..t.len() {
            if t[p].is_nan() {
                prop_assert_eq!(n1.values()[p], 1.0);
                continue;
            }
            prop_assert!(n1.values()[p] > 0.0 && n1.values()[p] <= 1.0);
            if t[p] < t_max {
                prop_assert!(n2.values()[p] > n1.values()[p]);
            } else {
                prop_assert_eq!(n2.values()[p], 1.0);
            }
            for q in 0..t.len() {
                if !t[q].is_nan() && t[p] < t[q] {
                    prop_assert!(n1.values()[p] < n1.values()[q]);
                    prop_assert!(n2.values()[p] < n2.values()[q]);
                }
            }
        }
    }

    #[test]
    fn missing_pixels_stay_missing(m in fpe_map(), seed in 0u64..1000) {
        let out = degrade_temporal(&m, &DegradationConfig::testing(), &mut stream(seed, Domain::Degradation, 0));
        for (a, b) in m.values().iter().zip(out.values()) {
            if a.is_nan() {
                prop_assert!(b.is_nan());
            }
        }
    }

    #[test]
    fn simulation_reverses_luminance_order(r in sized_raster(3)) {
        let th = ThresholdField::uniform(r.width(), r.height(), 0.2).unwrap();
        let m = simulate_fpe_map(&LinearRaster(r.clone()), &SensorConstants::default(), &th, DEFAULT_EPS_E).unwrap();
        let lum = r.luminance();
        for (i, &li) in lum.data().iter().enumerate() {
            for (j, &lj) in lum.data().iter().enumerate() {
                if li > lj && (lj as f64) > DEFAULT_EPS_E {
                    prop_assert!(m.values()[i] < m.values()[j]);
                }
            }
        }
    }

    #[test]
    fn attention_columns_sum_to_one(
        heads in 1usize..4,
        d in 1usize..5,
        hw in 1usize..5,
        seed in any::<u64>(),
    ) {
        let c = heads * d;
        let mut x = seed;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 33) as f64 / (1u64 << 31) as f64) * 6.0 - 3.0
        };
        let q = Tensor::<f64>::from_f64(&[1, c, hw, hw], &(0..c * hw * hw).map(|_| next()).collect::<Vec<_>>());
        let k = Tensor::<f64>::from_f64(&[1, c, hw, hw], &(0..c * hw * hw).map(|_| next()).collect::<Vec<_>>());
        let maps = channel_attention_maps(&q, &k, heads);
        prop_assert_eq!(maps[0].shape(), &[heads, d, d]);
        for h in 0..heads {
            for j in 0..d {
                let s: f64 = (0..d).map(|i| maps[0].data()[h * d * d + i * d + j]).sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn losses_are_non_negative_and_zero_on_agreement(
        a in raster(3, 3, 3),
        b in raster(3, 3, 3),
        i in raster(3, 3, 1),
    ) {
        let g = Graph::<f64>::new();
        let t = |r: &Raster| g.constant(Tensor::from_f64(&[1, r.channels(), 3, 3], &r.to_planar().iter().map(|&v| v as f64).collect::<Vec<_>>()));
        let (va, vb, vi) = (t(&a), t(&b), t(&i));
        prop_assert!(reflectance_loss(va, vb, vb).value().item() >= 0.0);
        prop_assert_eq!(reflectance_loss(va, va, va).value().item(), 0.0);
        prop_assert!(recon_loss(vi, va, vb, vb).value().item() >= 0.0);
        let s = vi.mul(va);
        prop_assert!(recon_loss(vi, va, va, s).value().item().abs() < 1e-15);
        let e = Extractor::<f64>::new(DEFAULT_EXTRACTOR_SEED);
        let ab = e.loss(va, vb).value().item();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - e.loss(vb, va).value().item()).abs() <= 1e-12 * ab.max(1.0));
    }

    #[test]
    fn total_loss_is_affine(
        parts in (0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0),
        w in (0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0),
    ) {
        let weights = LossWeights { recon: w.0, reflectance: w.1, perceptual: w.2 };
        let r = total_loss(parts.0, parts.1, parts.2, &weights);
        prop_assert_eq!(r.total, w.0 * parts.0 + w.1 * parts.1 + w.2 * parts.2);
    }

    #[test]
    fn metrics_are_symmetric(a in raster(12, 12, 3), b in raster(12, 12, 3)) {
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert!((ssim(&a, &b, 1.0).unwrap() - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
        prop_assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        prop_assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reconstruction_is_the_plain_product(i in raster(5, 4, 1), r in raster(5, 4, 3)) {
        let floor = i.data().iter().map(|&v| v.max(0.01)).collect();
        let i = IlluminationEstimate::new(Raster::new(5, 4, 1, floor).unwrap(), 0.01).unwrap();
        let refl = ReflectanceMap::new(r.clone()).unwrap();
        let out = reconstruct(&i, &refl).unwrap();
        for (k, v) in out.data().iter().enumerate() {
            prop_assert_eq!(*v, i.raster().data()[k / 3] * r.data()[k]);
        }
    }

    #[test]
    fn lr_schedule_is_monotone(total in 1u64..5000, max in 1e-5f64..1e-2) {
        let min = max * 1e-3;
        prop_assert_eq!(cosine_lr(0, total, max, min), max);
        prop_assert!((cosine_lr(total, total, max, min) - min).abs() <= 1e-12 * max);
        let mut prev = f64::INFINITY;
        for s in 0..=total.min(200) {
            let lr = cosine_lr(s * total / total.min(200), total, max, min);
            prop_assert!(lr <= prev && lr >= min - 1e-18);
            prev = lr;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn illumination_stays_in_range(m in fpe_map(), beta in 0.0f64..50.0, seed in 0u64..4) {
        let model = tiny_model(seed);
        let mut jittered = model.clone();
        let ids: Vec<_> = jittered.params.ids().collect();
        for (n, id) in ids.into_iter().enumerate() {
            for (k, v) in jittered.params.get_mut(id).data_mut().iter_mut().enumerate() {
                *v += (((n * 31 + k * 17) % 13) as f32 - 6.0) * 0.3;
            }
        }
        for m_ in [&model, &jittered] {
            let i = m_.estimate_illumination(&m, beta).unwrap();
            let eps = m_.config().eps_i as f32;
            prop_assert!(i.raster().data().iter().all(|&v| v >= eps && v <= 1.0));
            prop_assert_eq!((i.raster().width(), i.raster().height()), (m.width(), m.height()));
        }
    }

    #[test]
    fn both_branches_share_decomposition_weights(img in raster(4, 4, 3), e in raster(4, 4, 1), seed in 0u64..4) {
        let model = tiny_model(seed);
        let g = Graph::new();
        let s = Scope::frozen(&g, &model.params);
        let x = g.constant(retinev::batch_tensor::<f32>(&[&img]).unwrap());
        let ill = g.constant(retinev::batch_tensor::<f32>(&[&e]).unwrap());
        let f = model.forward_train(&s, ill, x, x, ClampMode::Hard);
        let (a, b) = (f.r_low.value(), f.r_normal.value());
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn checkpoint_bytes_are_stable(seed in any::<u64>()) {
        let ck = Checkpoint::initial(tiny_model(0).config().clone(), seed, format!("{seed:x}")).unwrap();
        let bytes = ck.to_bytes();
        let again = Checkpoint::from_bytes(&bytes).unwrap().to_bytes();
        prop_assert_eq!(bytes, again);
    }
}
