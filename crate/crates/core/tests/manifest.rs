use esr_core::dataset::{corpus_summary, parse_manifest, ClassLabel, View};
use esr_core::synth::{generate_corpus, load_masks, write_corpus, GeneratorSpec};

#[test]
fn full_surface_corpus_round_trips_through_the_manifest() {
    let corpus = generate_corpus(&GeneratorSpec::clinical_profile(2021).restricted_to(View::Surface)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_corpus(dir.path(), &corpus).unwrap();
    let observations = parse_manifest(&files.manifest).unwrap();
    assert_eq!(observations.len(), 347);
    let summary = corpus_summary(&observations);
    assert_eq!(summary.view_totals(View::Surface).image_count, 347);
    assert_eq!(summary.view_totals(View::Surface).unique_stone_count, 284);
    for (class, images, stones) in [
        (ClassLabel::Ia, 191, 150),
        (ClassLabel::IIb, 53, 48),
        (ClassLabel::IIIb, 29, 23),
        (ClassLabel::IaIIb, 64, 54),
        (ClassLabel::IaIIIb, 10, 9),
    ] {
        let c = summary.get(View::Surface, class);
        assert_eq!((c.image_count, c.unique_stone_count), (images, stones), "{class}");
    }
    for (o, s) in observations.iter().zip(&corpus) {
        assert_eq!(o.image, s.observation.image);
        assert_eq!(o.observation_id, s.observation.observation_id);
    }
    let masks = load_masks(&files.sidecar).unwrap();
    assert_eq!(masks.len(), 347);
    let first = &corpus[0];
    assert_eq!(masks[&first.observation.observation_id].stone_mask, first.stone_mask);
}
