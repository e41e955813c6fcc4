use cakit::conceptattn::{ConceptVocabulary, Provenance, SaliencyMap};
use cakit::numerics::{layer_norm, row_softmax, LAYER_NORM_EPS};
use cakit::segeval::{
    average_precision, binarize_mean_threshold, evaluate_single_object, miou, pixel_accuracy,
    LabelMask, MetricsReport, MiouMode, SampleMetrics, SegmentationSample,
};
use cakit::Matrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-20.0f64..20.0, rows * cols)
        .prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn shaped_mask() -> impl Strategy<Value = (usize, usize, Vec<u8>, Vec<u8>)> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(h, w)| {
        let n = h * w;
        (
            Just(h),
            Just(w),
            prop::collection::vec(prop::sample::select(vec![0u8, 1, 255]), n),
            prop::collection::vec(0u8..=1, n),
        )
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(m in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))) {
        let s = row_softmax(&m, 1.0);
        for i in 0..s.rows() {
            let sum: f64 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn softmax_ignores_row_shifts(m in matrix(3, 4), shift in -50.0f64..50.0) {
        let a = row_softmax(&m, 1.0);
        let b = row_softmax(&m.map(|v| v + shift), 1.0);
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn layer_norm_ignores_positive_affine_maps(
        m in matrix(3, 8).prop_filter("spread", |m| {
            (0..3).all(|i| {
                let r = m.row(i);
                let mean = r.iter().sum::<f64>() / 8.0;
                r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0 > 1.0
            })
        }),
        a in 0.5f64..4.0,
        b in -10.0f64..10.0,
    ) {
        let x = layer_norm(&m, LAYER_NORM_EPS).unwrap();
        let y = layer_norm(&m.map(|v| a * v + b), LAYER_NORM_EPS).unwrap();
        prop_assert!(x.max_abs_diff(&y) < 1e-5);
    }

    #[test]
    fn mean_threshold_ignores_positive_affine_maps(
        ints in prop::collection::vec(-8i32..8, 1..64),
        k in 0i32..6,
        b in -100i32..100,
    ) {
        // integer scores with a power-of-two scale keep every step exact
        let n = ints.len();
        let s: Vec<f64> = ints.iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = s.iter().map(|v| v * 2f64.powi(k) + b as f64).collect();
        prop_assert_eq!(binarize_mean_threshold(&s, 1, n).unwrap(), binarize_mean_threshold(&t, 1, n).unwrap());
    }

    #[test]
    fn ap_ignores_monotone_maps((h, w, gt, _) in shaped_mask(), seed in any::<u64>()) {
        let n = h * w;
        let scores: Vec<f64> = (0..n).map(|i| ((seed >> (i % 60)) & 7) as f64).collect();
        let warped: Vec<f64> = scores.iter().map(|&v| v.powi(3) + (v / 2.0).exp()).collect();
        let gt = LabelMask::new(h, w, gt).unwrap();
        prop_assert_eq!(average_precision(&scores, &gt).unwrap(), average_precision(&warped, &gt).unwrap());
    }

    #[test]
    fn swapping_labels_is_symmetric((h, w, gt, pred) in shaped_mask()) {
        let swap = |v: &[u8]| v.iter().map(|&l| match l { 0 => 1, 1 => 0, x => x }).collect::<Vec<_>>();
        let (g, p) = (LabelMask::new(h, w, gt.clone()).unwrap(), LabelMask::new(h, w, pred.clone()).unwrap());
        let (g2, p2) = (LabelMask::new(h, w, swap(&gt)).unwrap(), LabelMask::new(h, w, swap(&pred)).unwrap());
        match pixel_accuracy(&p, &g) {
            Ok(a) => prop_assert_eq!(a, pixel_accuracy(&p2, &g2).unwrap()),
            Err(_) => prop_assert!(pixel_accuracy(&p2, &g2).is_err()),
        }
        if let (Ok(a), Ok(b)) = (miou(&p, &g, &[0, 1]), miou(&p2, &g2, &[1, 0])) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn metrics_stay_in_unit_interval((h, w, gt, pred) in shaped_mask()) {
        let g = LabelMask::new(h, w, gt).unwrap();
        let p = LabelMask::new(h, w, pred).unwrap();
        if let Ok(a) = pixel_accuracy(&p, &g) {
            prop_assert!((0.0..=1.0).contains(&a));
        }
        if let Ok(m) = miou(&p, &g, &[0, 1]) {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn aggregation_ignores_sample_order(
        vals in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, prop::option::of(0.0f64..1.0)), 1..12),
        rot in 0usize..12,
    ) {
        let per: Vec<SampleMetrics> = vals
            .iter()
            .enumerate()
            .map(|(i, &(acc, miou, ap))| SampleMetrics { id: format!("s{i:02}"), acc, miou, ap })
            .collect();
        let mut shuffled = per.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = MetricsReport::aggregate(per, MiouMode::TwoClass).unwrap();
        let b = MetricsReport::aggregate(shuffled, MiouMode::TwoClass).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn sample(id: &str, h: usize, w: usize, target: Vec<f64>, gt: Vec<u8>) -> SegmentationSample {
    let n = h * w;
    let bg: Vec<f64> = target.iter().map(|v| -v).collect();
    let mut data = Vec::with_capacity(2 * n);
    for i in 0..n {
        data.push(target[i]);
        data.push(bg[i]);
    }
    let vocab = ConceptVocabulary::from_strs(&["cat", "background"], &["background"]).unwrap();
    SegmentationSample {
        id: id.into(),
        map: SaliencyMap::new(
            h,
            w,
            Matrix::from_vec(n, 2, data).unwrap(),
            Provenance::for_vocabulary(vocab),
        )
        .unwrap(),
        gt: LabelMask::new(h, w, gt).unwrap(),
        target_concept: Some("cat".into()),
        label_map: None,
    }
}

#[test]
fn duplicate_ids_are_rejected() {
    let s = sample("a", 1, 2, vec![1.0, 0.0], vec![1, 0]);
    assert!(evaluate_single_object(&[s.clone(), s], &["background"]).is_err());
}
