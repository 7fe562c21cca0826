use fst_core::synthgen::{gen_tracks, long_range_similarity, SynthSpec};

fn class_mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn long_range_gap_and_matched_marginals() {
    let spec = SynthSpec {
        tracks_per_class: 100,
        seed: 17,
        ..Default::default()
    };
    let tracks = gen_tracks(&spec).unwrap();
    let (real, fake): (Vec<_>, Vec<_>) = tracks.iter().partition(|t| t.label == Some(0));
    assert_eq!((real.len(), fake.len()), (100, 100));

    let lr = |set: &[&fst_core::SegmentEmbeddingSequence]| {
        class_mean(set.iter().filter_map(|t| long_range_similarity(t, 8).unwrap()))
    };
    let (lr_real, lr_fake) = (lr(&real), lr(&fake));
    println!("long-range similarity: real {lr_real:.4}, fake {lr_fake:.4}");
    assert!(lr_real - lr_fake > 0.1);

    // Per-segment mean and variance of embedding entries.
    let stats = |set: &[&fst_core::SegmentEmbeddingSequence]| {
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for t in set {
            for r in 0..t.n_valid {
                let row = t.embeddings.row(r);
                let m = row.iter().map(|&v| v as f64).sum::<f64>() / row.len() as f64;
                let v = row.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / row.len() as f64;
                means.push(m);
                vars.push(v);
            }
        }
        (class_mean(means.into_iter()), class_mean(vars.into_iter()))
    };
    let (m_real, v_real) = stats(&real);
    let (m_fake, v_fake) = stats(&fake);
    println!("marginals: real mean {m_real:.4} var {v_real:.4}; fake mean {m_fake:.4} var {v_fake:.4}");
    let scale = v_real.max(v_fake).sqrt();
    assert!((m_real - m_fake).abs() < 0.1 * scale);
    assert!((v_real - v_fake).abs() < 0.1 * v_real.max(v_fake));
}
