use std::collections::{BTreeMap, BTreeSet};

use esr_core::dataset::{class_of, ClassLabel, Morphology, View};
use esr_core::synth::{generate_observation, mean_rgb, SyntheticObservation};

fn region_means(o: &SyntheticObservation) -> Vec<(Morphology, [f64; 3])> {
    o.regions.iter().map(|(m, mask)| (*m, mean_rgb(&o.observation.image, mask).unwrap())).collect()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Nearest-centroid on per-region mean colour; the image class is the set of
/// region morphologies. Centroids come from a disjoint set of seeds.
#[test]
fn nearest_centroid_on_region_colour_separates_classes() {
    let build = |offset: u64, n: usize| -> Vec<SyntheticObservation> {
        (0..n)
            .map(|i| {
                let class = ClassLabel::ALL[i % 5];
                let view = if (i / 5) % 2 == 0 { View::Surface } else { View::Section };
                generate_observation(class, view, offset + i as u64)
            })
            .collect()
    };
    let fit = build(1_000_000, 200);
    let mut sums: BTreeMap<(View, Morphology), ([f64; 3], f64)> = BTreeMap::new();
    for o in &fit {
        for (m, rgb) in region_means(o) {
            let e = sums.entry((o.observation.view, m)).or_insert(([0.0; 3], 0.0));
            (0..3).for_each(|k| e.0[k] += rgb[k]);
            e.1 += 1.0;
        }
    }
    let centroids: BTreeMap<_, _> = sums.into_iter().map(|(k, (s, n))| (k, s.map(|v| v / n))).collect();

    let test = build(0, 500);
    let mut correct = 0;
    for o in &test {
        let predicted: BTreeSet<Morphology> = region_means(o)
            .into_iter()
            .map(|(_, rgb)| {
                centroids
                    .iter()
                    .filter(|((v, _), _)| *v == o.observation.view)
                    .min_by(|a, b| dist(*a.1, rgb).total_cmp(&dist(*b.1, rgb)))
                    .unwrap()
                    .0
                    .1
            })
            .collect();
        if class_of(&predicted).ok() == Some(o.observation.label) {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / test.len() as f64;
    assert!(accuracy >= 0.95, "nearest-centroid accuracy {accuracy}");
}

#[test]
fn region_structure_per_class() {
    for (i, class) in ClassLabel::ALL.iter().enumerate() {
        for view in [View::Surface, View::Section] {
            let o = generate_observation(*class, view, 77 + i as u64);
            assert_eq!(o.regions.len(), class.components().len());
            let tags: Vec<Morphology> = o.regions.iter().map(|r| r.0).collect();
            assert_eq!(tags, class.components());
            for (_, m) in &o.regions {
                assert!(!m.is_empty());
                assert_eq!(m.overlap(&o.stone_mask), m.count());
            }
        }
    }
}
