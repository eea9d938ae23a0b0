mod common;

use common::tiny_fixture;
use esr_core::classifier::FeatureGradients;
use esr_core::dataset::{ClassLabel, View};
use esr_core::explain::*;
use esr_core::synth::{generate_observation, Mask};
use proptest::prelude::*;

fn arb_fg() -> impl Strategy<Value = FeatureGradients> {
    (1usize..4, 2usize..6, 2usize..6).prop_flat_map(|(k, h, w)| {
        let n = k * h * w;
        (
            prop::collection::vec(0.0f64..3.0, n),
            prop::collection::vec(-1.0f64..1.0, k),
        )
            .prop_map(move |(features, per_map)| FeatureGradients {
                channels: k,
                height: h,
                width: w,
                features,
                gradients: per_map.iter().flat_map(|&g| std::iter::repeat_n(g, h * w)).collect(),
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn maps_are_non_negative_and_scale_invariant(fg in arb_fg(), scale in 0.01f64..100.0) {
        let a = grad_cam_from(&fg, ClassLabel::Ia, 20, 20);
        let mut scaled = fg.clone();
        scaled.gradients.iter_mut().for_each(|g| *g *= scale);
        let b = grad_cam_from(&scaled, ClassLabel::Ia, 20, 20);
        prop_assert!(a.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        if !a.is_zero() {
            let (r, c) = a.peak.unwrap();
            prop_assert_eq!(a.get(r, c), 1.0);
        }
    }

    #[test]
    fn upsampled_peak_stays_near_its_cell(cells in prop::collection::vec(0.0f64..1.0, 16 * 16), at in 0usize..256) {
        let mut coarse = cells;
        coarse[at] = 2.0;
        let up = upsample_bilinear(&coarse, 16, 16, 256, 256);
        let map = HeatMap::normalized(256, 256, up, ClassLabel::IIb);
        let (r, c) = map.peak.unwrap();
        let (cr, cc) = ((at / 16) as f64 * 16.0 + 7.5, (at % 16) as f64 * 16.0 + 7.5);
        prop_assert!((r as f64 - cr).abs() <= 16.0 && (c as f64 - cc).abs() <= 16.0);
    }
}

#[test]
fn tiny_network_matches_hand_computation() {
    let fx = tiny_fixture();
    // Top-left cell: box sum 1+0+0+1 = 2; second map 2 - 1 + 0.25·1 = 1.25.
    assert_eq!(fx.feature(0, 0, 0), 2.0);
    assert_eq!(fx.feature(1, 0, 0), 1.25);
    for class in ClassLabel::ALL {
        let map = grad_cam_network(&fx.network, fx.tensor(), class).unwrap();
        let expected = fx.expected_map(class);
        assert_eq!((map.height, map.width), (4, 4));
        for (got, want) in map.values.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-6, "{class}: {got} vs {want}");
        }
    }
}

#[test]
fn hot_region_sixty_percent_on_stone() {
    let o = generate_observation(ClassLabel::IIb, View::Surface, 4);
    let n = 256;
    let stone: Vec<usize> = (0..n * n).filter(|&i| o.stone_mask.bits()[i]).take(60).collect();
    let background: Vec<usize> =
        (0..n * n).filter(|&i| !o.stone_mask.bits()[i] && !o.tip_mask.bits()[i]).take(40).collect();
    let mut values = vec![0.0; n * n];
    for &i in stone.iter().chain(&background) {
        values[i] = 1.0;
    }
    let map = HeatMap::normalized(n, n, values, ClassLabel::IIb);
    let loc = localize_hotspot(&map, &o.stone_mask, &o.tip_mask, &HotspotThresholds::default()).unwrap();
    assert_eq!(loc, HotspotLocation::InStone);
    let tip = Mask::from_fn(n, n, |r, c| map.get(r, c) > 0.0);
    let loc = localize_hotspot(&map, &o.stone_mask, &tip, &HotspotThresholds::default()).unwrap();
    assert_eq!(loc, HotspotLocation::EndoscopeTip);
}

#[test]
fn published_rates_render_from_matching_tallies() {
    let mut cases = Vec::new();
    let mut push = |view, correct, location, n| {
        for _ in 0..n {
            cases.push(HotspotCase { view, correct, location });
        }
    };
    push(View::Surface, true, HotspotLocation::InStone, 98);
    push(View::Surface, true, HotspotLocation::OutsideStone, 2);
    push(View::Surface, false, HotspotLocation::OutsideStone, 33);
    push(View::Surface, false, HotspotLocation::EndoscopeTip, 5);
    push(View::Surface, false, HotspotLocation::InStone, 62);
    push(View::Section, true, HotspotLocation::InStone, 49);
    push(View::Section, true, HotspotLocation::OutsideStone, 1);
    push(View::Section, false, HotspotLocation::OutsideStone, 25);
    push(View::Section, false, HotspotLocation::EndoscopeTip, 2);
    push(View::Section, false, HotspotLocation::InStone, 73);
    let r = hotspot_rates(&cases);
    assert_eq!(r.on_stone_when_correct(View::Surface), Some(98.0));
    assert_eq!(r.on_stone_when_correct(View::Section), Some(98.0));
    assert_eq!(r.outside_when_wrong(View::Surface), Some(33.0));
    assert_eq!(r.outside_when_wrong(View::Section), Some(25.0));
    assert_eq!(r.tip_when_wrong(View::Surface), Some(5.0));
    assert_eq!(r.tip_when_wrong(View::Section), Some(2.0));
    let csv = r.to_csv();
    assert!(csv.contains("surface,true,in_stone,98,98.0"));
    assert!(csv.contains("section,false,endoscope_tip,2,2.0"));
    assert_eq!(csv.lines().count(), 1 + 12);
}
